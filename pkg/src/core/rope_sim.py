"""
Particle-chain strap simulator (XPBD) with a rotating hook bar.

Each step splits ``dt`` into substeps. A substep predicts particle positions
under gravity, moves the pins, sweeps particle motion against the hook
capsules, then iterates bending, contact and stretch projections before
deriving velocities from the position change. Contacts are capsules around
hook segments with radius hook tube radius + strap radius, tested against
both particles and strap edges.

Pins: the strap's far end (index N-1) is pinned through ``RopeState.pins``;
the near end (index 0) follows the gripper while ``gripper_attached`` holds.
"""

import functools
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from ..models import (MAX_BAR, ActionPair, HookShape, Material, Polyline3, Pose6, RopeState,
                      WorldState, wrap_angle, wrap_signed)
from ..models.enums import BarMode, HookFamily, MaterialId
from ..utils.config import GoalConfig, HarnessConfig
from ..utils.exceptions import SimulationDivergedError, SingularConfigurationError, ValidationError
from ..utils.logging import get_operation_logger
from ..utils.persistence import TRAJECTORY_FORMAT
from ..utils.validators import require_int_at_least, require_positive
from . import geometry, linking

COLLISION_STRIDE = 4
MIN_PARTICLES = 8

_log = get_operation_logger(__name__)
_local_hook = functools.lru_cache(maxsize=64)(geometry.local_hook)


# ---------------------------------------------------------------------------
# World construction
# ---------------------------------------------------------------------------

def make_material(cfg: HarnessConfig, material_id) -> Material:
    """Material from the preset table."""
    preset = cfg.material_preset(str(material_id))
    return Material(id=MaterialId(str(material_id)), stretch_compliance=preset.stretch_compliance,
                    bending_compliance=preset.bending_compliance, damping=preset.damping,
                    tol_stretch=preset.tol_stretch)


def make_hook_shape(cfg: HarnessConfig, hook_id) -> HookShape:
    """Hook shape from the preset table, hung from the configured pivot and bar axis."""
    preset = cfg.hook_preset(str(hook_id))
    return geometry.hook_shape(HookFamily(str(hook_id)), preset, cfg.scene.bar_pivot, cfg.scene.bar_axis)


def anchor_point(cfg: HarnessConfig, slack: float) -> np.ndarray:
    """Anchor pin position; slack lowers the anchor by ``slack_anchor_drop * slack``."""
    return np.asarray(cfg.scene.anchor, dtype=np.float64) - np.array(
        [0.0, 0.0, cfg.scene.slack_anchor_drop * slack])


def gripper_point(gripper: Pose6, grip_offset) -> np.ndarray:
    """World position of the grasped strap end."""
    return gripper.apply(np.asarray(grip_offset, dtype=np.float64))


def _v_shape(start: np.ndarray, end: np.ndarray, length: float) -> np.ndarray:
    span = float(np.linalg.norm(end - start))
    if span >= length:
        raise ValidationError("Strap is too short for its pin distance", field="rope_length",
                              value=length, constraint=f"> {span:.4f}")
    mid = 0.5 * (start + end)

    def total(h):
        low = mid - np.array([0.0, 0.0, h])
        return np.linalg.norm(low - start) + np.linalg.norm(end - low)

    lo, hi = 0.0, length
    for _ in range(80):
        h = 0.5 * (lo + hi)
        if total(h) < length:
            lo = h
        else:
            hi = h
    return np.vstack([start, mid - np.array([0.0, 0.0, 0.5 * (lo + hi)]), end])


def build_rope(start: np.ndarray, end: np.ndarray, length: float, count: int, mass: float,
               radius: float) -> RopeState:
    """
    Strap hanging in a V between ``start`` (index 0) and ``end`` (index N-1, pinned).

    Raises:
        ValidationError: If the strap cannot span the two points or has fewer than
            MIN_PARTICLES particles
    """
    require_int_at_least(count, MIN_PARTICLES, "rope_particles")
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    positions = Polyline3(_v_shape(start, end, length)).resample(count).vertices.copy()
    return RopeState(positions=positions, velocities=np.zeros_like(positions),
                     rest_length=length / (count - 1), particle_mass=mass / count, radius=radius,
                     pins={count - 1: end.copy()})


def initial_world(cfg: HarnessConfig, hook_id="H1", material_id="M1", slack: float = 0.0,
                  rng: Optional[np.random.Generator] = None,
                  bar_mode: BarMode = BarMode.KINEMATIC, bar_angle: float = 0.0) -> WorldState:
    """
    Trial start: strap grasped at index 0, far end pinned at the anchor, bar overhead.

    With ``rng`` the gripper start and the bar angle are jittered uniformly
    within the configured ranges.
    """
    scene = cfg.scene
    grip = np.asarray(scene.gripper_start, dtype=np.float64)
    if rng is not None:
        grip = grip + rng.uniform(-scene.gripper_start_jitter, scene.gripper_start_jitter, size=3)
        bar_angle = bar_angle + rng.uniform(-scene.bar_start_jitter, scene.bar_start_jitter)
    gripper = Pose6(grip, Rotation.identity())
    rope = build_rope(gripper_point(gripper, scene.grip_offset), anchor_point(cfg, slack),
                      scene.rope_length + slack, scene.rope_particles, scene.rope_mass, scene.rope_radius)
    return WorldState(rope=rope, bar_angle=bar_angle, gripper=gripper,
                      hook=make_hook_shape(cfg, hook_id), material=make_material(cfg, material_id),
                      slack=slack, scene=scene, sim=cfg.sim, bar_mode=bar_mode)


def clone(world: WorldState) -> WorldState:
    """Independent copy of a world."""
    return world.copy()


def release(world: WorldState) -> WorldState:
    """Copy of a world with the gripper pin released."""
    released = world.copy()
    released.gripper_attached = False
    return released


# ---------------------------------------------------------------------------
# Hook capsules
# ---------------------------------------------------------------------------

def hook_vertices(shape: HookShape, bar_angle: float) -> np.ndarray:
    """World hook vertices (cached local curve, posed by the bar angle)."""
    return geometry.hook_pose(shape, bar_angle).apply(_local_hook(shape).vertices)


def collision_segments(shape: HookShape, bar_angle: float) -> Tuple[np.ndarray, np.ndarray]:
    """Capsule axis segments (start, end) along a strided copy of the hook polyline."""
    vertices = hook_vertices(shape, bar_angle)
    index = list(range(0, vertices.shape[0], COLLISION_STRIDE))
    if index[-1] != vertices.shape[0] - 1:
        index.append(vertices.shape[0] - 1)
    picked = vertices[index]
    return picked[:-1], picked[1:]


def _broadphase(centers: np.ndarray, radii: np.ndarray, a: np.ndarray, b: np.ndarray,
                reach: float) -> Tuple[np.ndarray, np.ndarray]:
    seg_centers = 0.5 * (a + b)
    seg_radii = 0.5 * np.linalg.norm(b - a, axis=1)
    gap = np.linalg.norm(centers[:, None, :] - seg_centers[None, :, :], axis=2)
    return np.nonzero(gap <= radii[:, None] + seg_radii[None, :] + reach)


def _scatter(n: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    total = np.zeros((n, 3))
    count = np.zeros(n)
    np.add.at(total, index, values)
    np.add.at(count, index, (np.abs(values).sum(axis=1) > 0).astype(float))
    return total / np.maximum(count, 1.0)[:, None]


def _sweep_particles(x_old, p, inv_mass, a, b, radius, pi, sj) -> None:
    free = inv_mass[pi] > 0
    pi, sj = pi[free], sj[free]
    if pi.size == 0:
        return
    _, _, cp, cq = geometry.closest_points_segments(x_old[pi], p[pi], a[sj], b[sj])
    hit = np.linalg.norm(cp - cq, axis=1) < radius
    if not np.any(hit):
        return
    pi, sj = pi[hit], sj[hit]
    _, q_start = geometry.closest_points_on_segments(x_old[pi], a[sj], b[sj])
    normal = x_old[pi] - q_start
    length = np.linalg.norm(normal, axis=1)
    ok = length > 1e-12
    pi, sj, normal = pi[ok], sj[ok], normal[ok] / length[ok, None]
    _, q_end = geometry.closest_points_on_segments(p[pi], a[sj], b[sj])
    push = np.maximum(0.0, radius - np.einsum("ij,ij->i", p[pi] - q_end, normal))
    p += _scatter(p.shape[0], pi, push[:, None] * normal)


def _particle_contacts(p, x_old, inv_mass, a, b, radius, pi, sj) -> np.ndarray:
    free = inv_mass[pi] > 0
    pi, sj = pi[free], sj[free]
    if pi.size == 0:
        return np.zeros_like(p)
    _, q = geometry.closest_points_on_segments(p[pi], a[sj], b[sj])
    diff = p[pi] - q
    dist = np.linalg.norm(diff, axis=1)
    active = dist < radius
    if not np.any(active):
        return np.zeros_like(p)
    pi, sj, diff, dist, q = pi[active], sj[active], diff[active], dist[active], q[active]
    fallback = x_old[pi] - q
    normal = np.where((dist > 1e-9)[:, None], diff, fallback)
    normal /= np.maximum(np.linalg.norm(normal, axis=1), 1e-12)[:, None]
    correction = _scatter(p.shape[0], pi, (radius - dist)[:, None] * normal)
    p += correction
    return correction


def _edge_contacts(p, x_old, inv_mass, a, b, radius, ei, sj) -> np.ndarray:
    if ei.size == 0:
        return np.zeros_like(p)
    s, _, cp, cq = geometry.closest_points_segments(p[ei], p[ei + 1], a[sj], b[sj])
    diff = cp - cq
    dist = np.linalg.norm(diff, axis=1)
    w0 = inv_mass[ei] * (1.0 - s)
    w1 = inv_mass[ei + 1] * s
    denom = inv_mass[ei] * (1.0 - s) ** 2 + inv_mass[ei + 1] * s ** 2
    active = (dist < radius) & (denom > 1e-12)
    if not np.any(active):
        return np.zeros_like(p)
    ei, s, diff, dist, cq = ei[active], s[active], diff[active], dist[active], cq[active]
    w0, w1, denom = w0[active], w1[active], denom[active]
    old = (1.0 - s)[:, None] * x_old[ei] + s[:, None] * x_old[ei + 1]
    normal = np.where((dist > 1e-9)[:, None], diff, old - cq)
    normal /= np.maximum(np.linalg.norm(normal, axis=1), 1e-12)[:, None]
    dlam = (radius - dist) / denom
    index = np.concatenate([ei, ei + 1])
    values = np.concatenate([(w0 * dlam)[:, None] * normal, (w1 * dlam)[:, None] * normal])
    correction = _scatter(p.shape[0], index, values)
    p += correction
    return correction


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=16)
def _colors(n: int, gap: int):
    """Disjoint constraint groups for distance constraints between i and i + gap."""
    count = max(n - gap, 0)
    ids = np.arange(count)
    key = ids % 2 if gap == 1 else (ids // 2) % 2
    return tuple(ids[key == c] for c in (0, 1))


def _solve_distance(p, inv_mass, gap, rest, alpha, lam) -> None:
    for ids in _colors(p.shape[0], gap):
        if ids.size == 0:
            continue
        i, j = ids, ids + gap
        d = p[i] - p[j]
        length = np.linalg.norm(d, axis=1)
        normal = d / np.maximum(length, 1e-12)[:, None]
        wsum = inv_mass[i] + inv_mass[j]
        denom = wsum + alpha
        dlam = np.where(denom > 0, (-(length - rest) - alpha * lam[ids]) / np.where(denom > 0, denom, 1.0), 0.0)
        lam[ids] += dlam
        p[i] += (inv_mass[i] * dlam)[:, None] * normal
        p[j] -= (inv_mass[j] * dlam)[:, None] * normal


def _apply_friction(p, x_old, inv_mass, a, b, radius, friction) -> None:
    pi, sj = np.nonzero(np.ones((p.shape[0], a.shape[0]), dtype=bool))
    _, q = geometry.closest_points_on_segments(p[pi], a[sj], b[sj])
    dist = np.linalg.norm(p[pi] - q, axis=1).reshape(p.shape[0], a.shape[0])
    nearest = dist.argmin(axis=1)
    touching = (dist.min(axis=1) <= radius * (1.0 + 1e-3)) & (inv_mass > 0)
    if not np.any(touching):
        return
    idx = np.nonzero(touching)[0]
    _, qn = geometry.closest_points_on_segments(p[idx], a[nearest[idx]], b[nearest[idx]])
    normal = p[idx] - qn
    normal /= np.maximum(np.linalg.norm(normal, axis=1), 1e-12)[:, None]
    move = p[idx] - x_old[idx]
    tangential = move - np.einsum("ij,ij->i", move, normal)[:, None] * normal
    p[idx] -= min(friction, 1.0) * tangential


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def advance_gripper(gripper: Pose6, a_rob: np.ndarray) -> Pose6:
    """Translate in world axes, rotate in the gripper frame."""
    delta = Rotation.from_euler("XYZ", a_rob[3:])
    return Pose6(gripper.translation + a_rob[:3], gripper.rotation * delta)


def inverse_masses(world: WorldState) -> np.ndarray:
    """Per-particle inverse mass; pinned particles get zero."""
    inv = np.full(world.rope.count, 1.0 / world.rope.particle_mass)
    for index in world.rope.pins:
        inv[index] = 0.0
    if world.gripper_attached:
        inv[0] = 0.0
    return inv


def step(world: WorldState, action: Optional[ActionPair] = None, dt: Optional[float] = None) -> WorldState:
    """
    Advance the world by one step.

    Args:
        world: Current world (not modified)
        action: Joint action; no-change when omitted
        dt: Step length (s); the configured dt when omitted

    Returns:
        New WorldState

    Raises:
        ValidationError: If the action is outside the per-step bounds
        SimulationDivergedError: If any particle position becomes non-finite
    """
    action = ActionPair.no_change() if action is None else action
    if not action.within_bounds():
        raise ValidationError("Action outside per-step bounds", field="action",
                              value=action.vector().round(6).tolist())
    sim, scene = world.sim, world.scene
    dt = sim.dt if dt is None else require_positive(dt, "dt")
    substeps = max(int(sim.substeps), 1)
    h = dt / substeps
    rope = world.rope
    n = rope.count
    radius = scene.hook_tube_radius + rope.radius
    inv_mass = inverse_masses(world)
    free = inv_mass > 0
    gravity = np.array([0.0, 0.0, -sim.gravity])
    alpha_stretch = world.material.stretch_compliance / (h * h)
    alpha_bend = world.material.bending_compliance / (h * h)
    damping_factor = max(0.0, 1.0 - world.material.damping * h)
    pivot = np.asarray(world.hook.pivot, dtype=np.float64)
    bar_axis = geometry.bar_axis(world.hook)
    passive = world.bar_mode is BarMode.PASSIVE

    gripper_new = advance_gripper(world.gripper, action.a_rob)
    grip_from = gripper_point(world.gripper, scene.grip_offset)
    grip_to = gripper_point(gripper_new, scene.grip_offset)

    x = rope.positions.copy()
    v = rope.velocities.copy()
    angle = world.bar_angle
    omega = world.bar_velocity if passive else 0.0
    torque_total = 0.0

    for k in range(substeps):
        frac = (k + 1) / substeps
        if passive:
            angle = angle + action.a_bar / substeps
        else:
            angle = world.bar_angle + action.a_bar * frac
        a, b = collision_segments(world.hook, angle)

        p = x + h * v
        p[free] += (h * h) * gravity
        if world.gripper_attached:
            p[0] = grip_from + frac * (grip_to - grip_from)
        for index, target in rope.pins.items():
            p[index] = target

        reach = radius + sim.contact_margin
        motion = np.linalg.norm(p - x, axis=1)
        pi, pj = _broadphase(0.5 * (x + p), 0.5 * motion, a, b, reach)
        _sweep_particles(x, p, inv_mass, a, b, radius, pi, pj)
        if n > 1:
            edge_pts = np.stack([x[:-1], x[1:], p[:-1], p[1:]], axis=1)
            edge_centers = edge_pts.mean(axis=1)
            edge_radii = np.linalg.norm(edge_pts - edge_centers[:, None, :], axis=2).max(axis=1)
            ei, ej = _broadphase(edge_centers, edge_radii, a, b, reach)
        else:
            ei = ej = np.zeros(0, dtype=int)

        lam_stretch = np.zeros(max(n - 1, 0))
        lam_bend = np.zeros(max(n - 2, 0))
        contact = np.zeros_like(p)
        for _ in range(sim.iterations):
            if n > 2:
                _solve_distance(p, inv_mass, 2, 2.0 * rope.rest_length, alpha_bend, lam_bend)
            contact += _particle_contacts(p, x, inv_mass, a, b, radius, pi, pj)
            contact += _edge_contacts(p, x, inv_mass, a, b, radius, ei, ej)
            if n > 1:
                _solve_distance(p, inv_mass, 1, rope.rest_length, alpha_stretch, lam_stretch)
        if sim.friction > 0:
            _apply_friction(p, x, inv_mass, a, b, radius, sim.friction)

        v = (p - x) / h * damping_factor
        v[~free] = 0.0
        x = p

        # Reaction of the strap contacts on the hook, about the bar axis
        hook_force = -rope.particle_mass * contact / (h * h)
        tau = float(np.cross(x - pivot, hook_force).sum(axis=0) @ bar_axis)
        torque_total += tau
        if passive:
            omega += h * (tau / sim.bar_inertia - sim.bar_damping * omega)
            angle += h * omega

    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        raise SimulationDivergedError(step=world.step_index, particle=int(np.nonzero(bad)[0][0]))

    new = world.copy()
    new.rope.positions = x
    new.rope.velocities = v
    new.bar_angle = wrap_angle(angle if passive else world.bar_angle + action.a_bar)
    new.bar_velocity = omega
    new.gripper = gripper_new
    new.step_index = world.step_index + 1
    new.contact_torque = torque_total / substeps
    return new


def kinetic_energy(world: WorldState) -> float:
    """Total kinetic energy of the free particles (J)."""
    free = inverse_masses(world) > 0
    v = world.rope.velocities[free]
    return 0.5 * world.rope.particle_mass * float(np.einsum("ij,ij->", v, v))


def max_particle_kinetic_energy(world: WorldState) -> float:
    """Largest kinetic energy of a single free particle (J)."""
    free = inverse_masses(world) > 0
    if not np.any(free):
        return 0.0
    v = world.rope.velocities[free]
    return 0.5 * world.rope.particle_mass * float(np.einsum("ij,ij->i", v, v).max())


def potential_energy(world: WorldState) -> float:
    """Gravitational potential energy of the free particles relative to z = 0 (J)."""
    free = inverse_masses(world) > 0
    return world.rope.particle_mass * world.sim.gravity * float(world.rope.positions[free, 2].sum())


def stretch_errors(world: WorldState) -> np.ndarray:
    """|‖p_i − p_{i+1}‖ − rest| per segment."""
    seg = np.linalg.norm(np.diff(world.rope.positions, axis=0), axis=1)
    return np.abs(seg - world.rope.rest_length)


def settle(world: WorldState, max_steps: int, min_steps: int = 0) -> Tuple[WorldState, bool]:
    """
    Step with no-change actions until every free particle's kinetic energy is below
    the settle threshold, taking at least ``min_steps`` steps.

    Returns:
        (world, settled); ``settled`` is False when ``max_steps`` ran out

    Raises:
        SimulationDivergedError: Propagated from step
    """
    threshold = world.sim.settle_energy
    steps = 0
    while True:
        if steps >= min_steps and max_particle_kinetic_energy(world) < threshold:
            return world, True
        if steps >= max_steps:
            return world, False
        world = step(world)
        steps += 1


# ---------------------------------------------------------------------------
# Goal test
# ---------------------------------------------------------------------------

@dataclass
class GoalCheck:
    """
    Details of one release-and-settle goal test.

    Attributes:
        passed: Whether the goal holds
        min_link: Smallest |link| seen during the window
        contact_bottom: Whether the final contact lies in the bottom third of the arc
        diverged: Whether the window simulation diverged
    """
    passed: bool
    min_link: float
    contact_bottom: bool
    diverged: bool = False


def contact_in_bottom_third(world: WorldState, tolerance: float) -> bool:
    """Whether the strap touches the hook and its closest hook point is in the arc's bottom third."""
    hook = linking.hook_curve(world)
    mask = geometry.bottom_third_mask(world.hook, hook)
    pos = world.rope.positions
    a, b = hook.vertices[:-1], hook.vertices[1:]
    _, t, cp, cq = geometry.closest_points_segments(pos[:-1, None, :], pos[1:, None, :],
                                                    a[None, :, :], b[None, :, :])
    dist = np.linalg.norm(cp - cq, axis=2)
    edge, seg = np.unravel_index(int(dist.argmin()), dist.shape)
    radius = world.scene.hook_tube_radius + world.rope.radius
    if dist[edge, seg] > radius + tolerance:
        return False
    nearest_vertex = seg + int(round(float(t[edge, seg])))
    return bool(mask[nearest_vertex])


def goal_check(world: WorldState, goal: GoalConfig, threshold: Optional[float] = None,
               seed: int = 0) -> GoalCheck:
    """
    Release the gripper on a copy of the world and simulate the settling window.

    The bar is jittered uniformly by up to ``goal.perturbation`` around its
    angle at release. The goal holds when |link| stays at or above the
    threshold on every step of the window (every ``goal.link_check_every``-th
    step when subsampling is configured) and the final contact lies in the
    bottom third of the hook arc. The given world is never modified.
    """
    threshold = goal.threshold if threshold is None else threshold
    rng = np.random.default_rng(seed)
    trial = release(world)
    trial.bar_mode = BarMode.KINEMATIC
    base_angle = trial.bar_angle
    steps = int(round(goal.window_seconds / trial.sim.dt))
    every = max(int(goal.link_check_every), 1)
    min_link = math.inf
    try:
        for k in range(steps + 1):
            if k % every == 0 or k == steps:
                value = abs(linking.world_link(trial, seed=seed + k))
                min_link = min(min_link, value)
                if value < threshold:
                    return GoalCheck(False, min_link, False)
            if k == steps:
                break
            target = base_angle + rng.uniform(-goal.perturbation, goal.perturbation)
            delta = wrap_signed(target - trial.bar_angle)
            trial = step(trial, ActionPair(np.zeros(6), float(np.clip(delta, -MAX_BAR, MAX_BAR))))
    except SimulationDivergedError as e:
        _log.warning(f"Goal window diverged: {e}")
        return GoalCheck(False, min_link if math.isfinite(min_link) else 0.0, False, diverged=True)
    except SingularConfigurationError as e:
        _log.warning(f"Goal window linking stayed singular: {e}")
        return GoalCheck(False, 0.0, False)
    bottom = contact_in_bottom_third(trial, goal.contact_tolerance)
    return GoalCheck(bottom, min_link, bottom)


def goal_reached(world: WorldState, goal: Optional[GoalConfig] = None, threshold: Optional[float] = None,
                 seed: int = 0) -> bool:
    """True iff the strap stays linked and rests at the hook bottom after release."""
    return goal_check(world, goal or GoalConfig(), threshold, seed).passed


# ---------------------------------------------------------------------------
# Scripted oracle worlds
# ---------------------------------------------------------------------------

def _draped_positions(center, tangent, anchor, length, count, rho) -> np.ndarray:
    """
    Strap running from the anchor up to ``center``, over it around a circle of
    radius ``rho`` in the plane normal to ``tangent``, then hanging straight down
    on the far (+y) side. Returned gripper end first.
    """
    t = tangent / np.linalg.norm(tangent)
    up = np.array([0.0, 0.0, 1.0]) - t[2] * t
    up /= np.linalg.norm(up)
    side = np.cross(t, up)
    if side[1] < 0:
        side = -side
    rel = anchor - center
    ay, az = rel @ side, rel @ up
    dist = math.hypot(ay, az)
    if dist <= rho:
        raise ValidationError("Anchor lies inside the drape circle", field="anchor")
    theta_t = math.atan2(az, ay) - math.acos(rho / dist)
    theta_t = (theta_t + math.pi) % (2.0 * math.pi) - math.pi
    if theta_t < 0:
        theta_t += 2.0 * math.pi
    theta = np.linspace(theta_t, 0.0, 24)
    arc = center + rho * (np.cos(theta)[:, None] * side + np.sin(theta)[:, None] * up)
    straight = float(np.linalg.norm(arc[0] - anchor))
    tail = length - straight - rho * theta_t
    if tail <= 0:
        raise ValidationError("Strap too short to drape over the hook", field="rope_length",
                              value=length, constraint=f"> {straight + rho * theta_t:.4f}")
    path = np.vstack([anchor, arc, arc[-1] - np.array([0.0, 0.0, tail])])
    return Polyline3(path).resample(count).vertices[::-1].copy()


def _scripted_world(cfg, hook_id, material_id, slack, bar_angle, center_fn, settle_steps) -> WorldState:
    scene = cfg.scene
    require_int_at_least(scene.rope_particles, MIN_PARTICLES, "rope_particles")
    shape = make_hook_shape(cfg, hook_id)
    vertices = hook_vertices(shape, wrap_angle(bar_angle))
    radius = scene.hook_tube_radius + scene.rope_radius
    center, tangent = center_fn(shape, vertices, radius)
    anchor = anchor_point(cfg, slack)
    length = scene.rope_length + slack
    positions = _draped_positions(center, tangent, anchor, length, scene.rope_particles, radius + 5e-4)
    gripper = Pose6(positions[0] - np.asarray(scene.grip_offset), Rotation.identity())
    rope = RopeState(positions=positions, velocities=np.zeros_like(positions),
                     rest_length=length / (scene.rope_particles - 1),
                     particle_mass=scene.rope_mass / scene.rope_particles, radius=scene.rope_radius,
                     pins={scene.rope_particles - 1: anchor.copy()})
    world = WorldState(rope=rope, bar_angle=bar_angle, gripper=gripper, hook=shape,
                       material=make_material(cfg, material_id), slack=slack, scene=scene, sim=cfg.sim)
    if settle_steps > 0:
        world, _ = settle(world, settle_steps, min_steps=settle_steps)
    return world


def _bottom_of_arc(shape, vertices, radius):
    on_arc = geometry.arc_mask(shape)
    idx = np.nonzero(on_arc)[0]
    bottom = int(idx[np.argmin(vertices[idx, 2])])
    bottom = min(max(bottom, 1), vertices.shape[0] - 2)
    return vertices[bottom], vertices[bottom + 1] - vertices[bottom - 1]


def _beyond_tip(shape, vertices, radius):
    tangent = vertices[-1] - vertices[-2]
    tangent /= np.linalg.norm(tangent)
    return vertices[-1] + 0.5 * radius * tangent, tangent


def threaded_world(cfg: HarnessConfig, hook_id="H1", material_id="M1", slack: float = 0.0,
                   bar_angle: float = 0.0, settle_steps: int = 50) -> WorldState:
    """
    Strap laid over the wire at the hook bottom: taut from the anchor, tail
    hanging just past the wire on the +y side, gripper holding the tail end.
    """
    return _scripted_world(cfg, hook_id, material_id, slack, bar_angle, _bottom_of_arc, settle_steps)


def tip_draped_world(cfg: HarnessConfig, hook_id="H1", material_id="M1", slack: float = 0.0,
                     bar_angle: float = 0.0, settle_steps: int = 0) -> WorldState:
    """Strap laid over a point just beyond the hook tip, resting on the tip's end cap only."""
    return _scripted_world(cfg, hook_id, material_id, slack, bar_angle, _beyond_tip, settle_steps)


def table_world(cfg: HarnessConfig, hook_id="H1", material_id="M1", table_height: float = 0.02) -> WorldState:
    """Strap lying straight at table height, pointing away from the hook."""
    scene = cfg.scene
    count = scene.rope_particles
    require_int_at_least(count, MIN_PARTICLES, "rope_particles")
    rest = scene.rope_length / (count - 1)
    anchor = np.array([scene.anchor[0], scene.anchor[1], table_height])
    offsets = np.arange(count)[::-1] * rest
    positions = anchor[None, :] - offsets[:, None] * np.array([0.0, 1.0, 0.0])
    gripper = Pose6(positions[0] - np.asarray(scene.grip_offset), Rotation.identity())
    rope = RopeState(positions=positions, velocities=np.zeros_like(positions), rest_length=rest,
                     particle_mass=scene.rope_mass / count, radius=scene.rope_radius,
                     pins={count - 1: anchor.copy()})
    return WorldState(rope=rope, bar_angle=0.0, gripper=gripper, hook=make_hook_shape(cfg, hook_id),
                      material=make_material(cfg, material_id), slack=0.0, scene=scene, sim=cfg.sim)


# ---------------------------------------------------------------------------
# Trajectory records
# ---------------------------------------------------------------------------

def trajectory_record(world: WorldState, action: Optional[ActionPair] = None,
                      link: Optional[float] = None, observation: Optional[Dict] = None) -> Dict:
    """One JSONL trajectory line (see utils.persistence for the layout)."""
    action = action or ActionPair.no_change()
    record = {
        "type": "step",
        "step": world.step_index,
        "time": round(world.time, 10),
        "bar_angle": world.bar_angle,
        "gripper": world.gripper.as_vector().tolist(),
        "action": action.vector().tolist(),
        "positions": world.rope.positions.tolist(),
    }
    if observation is not None:
        record["observation"] = observation
    if link is not None:
        record["link"] = link
    return record


def trajectory_header(world: WorldState, **extra) -> Dict:
    """
    Header line of a trajectory log.

    Holds what the linking oracle needs to recompute every frame offline: the
    hook parameters (including pivot and bar axis) and the closure drop.
    """
    header = {
        "format": TRAJECTORY_FORMAT,
        "hook_shape": geometry.shape_record(world.hook),
        "closure_drop": world.scene.closure_drop,
        "material": str(world.material.id),
        "slack": world.slack,
        "particles": world.rope.count,
        "dt": world.sim.dt,
    }
    header.update(extra)
    return header
