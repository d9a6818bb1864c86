"""
Discrete Gauss linking number between the strap and the hook.

The strap is an open chain pinned at both ends; it is closed virtually by two
straight segments through a point far below the pins so that the linking
value separates threaded from unthreaded states. The hook stays open, so its
linking value with the strap is fractional.
"""

import math
from typing import List, Optional, Sequence

import numpy as np

from ..models import CostBounds, HookShape, LinkingResult, Polyline3, WorldState
from ..utils.exceptions import SingularConfigurationError, ValidationError
from ..utils.logging import get_operation_logger
from . import geometry

EPS_LINK = 1e-6
JITTER = 1e-5
FOUR_PI = 4.0 * math.pi
# Generic projection direction for the crossing oracle (no symmetry with test curves).
GENERIC_DIRECTION = np.array([0.2113248654, 0.3961012435, 0.8936356784])

_log = get_operation_logger(__name__)


def _sample_points(curve: Polyline3, rule: str) -> np.ndarray:
    seg = curve.segment_vectors()
    if rule == "vertex":
        return curve.vertices[:seg.shape[0]]
    return curve.vertices[:seg.shape[0]] + 0.5 * seg


def gauss_link(strap: Polyline3, hook: Polyline3, eps: float = EPS_LINK,
               rule: str = "midpoint") -> LinkingResult:
    """
    Discrete Gauss linking double sum.

    Every segment pair contributes ``(a_i - b_j) · (Δa_i × Δb_j) / |a_i - b_j|³``.
    The default ``rule="midpoint"`` evaluates at segment midpoints, so
    reversing either curve negates the value up to rounding. ``rule="vertex"``
    evaluates at the segments' first vertices and is not antisymmetric; it is
    kept for comparison. Closed curves include their closing segment. Row sums
    are reduced in index order.

    Args:
        strap: First curve
        hook: Second curve
        eps: Singularity guard on evaluation point distances (m)
        rule: "vertex" or "midpoint"

    Returns:
        LinkingResult with the vertex counts used

    Raises:
        SingularConfigurationError: If two evaluation points are within ``eps``
    """
    if rule not in ("vertex", "midpoint"):
        raise ValidationError("Unknown linking rule", field="rule", value=rule, constraint="vertex or midpoint")
    a = _sample_points(strap, rule)
    b = _sample_points(hook, rule)
    da = strap.segment_vectors()
    db = hook.segment_vectors()

    r = a[:, None, :] - b[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", r, r))
    min_dist = float(dist.min())
    if min_dist <= eps:
        raise SingularConfigurationError(min_distance=min_dist, threshold=eps)

    cross = np.cross(da[:, None, :], db[None, :, :])
    terms = np.einsum("ijk,ijk->ij", r, cross) / dist ** 3
    value = math.fsum(terms.sum(axis=1)) / FOUR_PI
    return LinkingResult(value=value, m1=strap.count, m2=hook.count)


def link_with_jitter(strap: Polyline3, hook: Polyline3, seed: int = 0, attempts: int = 3,
                     eps: float = EPS_LINK) -> LinkingResult:
    """
    gauss_link with seeded strap jitter retries on singular configurations.

    Raises:
        SingularConfigurationError: If every attempt is singular
    """
    try:
        return gauss_link(strap, hook, eps=eps)
    except SingularConfigurationError as first:
        error = first
        _log.debug(f"Singular linking configuration (min distance {first.min_distance:.2e}), retrying with jitter")
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        jittered = strap.vertices + rng.uniform(-JITTER, JITTER, size=strap.vertices.shape)
        try:
            return gauss_link(Polyline3(jittered, strap.closed), hook, eps=eps)
        except SingularConfigurationError as e:
            error = e
    raise error


def virtual_closure(positions: np.ndarray, drop: float) -> Polyline3:
    """
    Close the strap chain through a point ``drop`` meters below the pins' midpoint.

    Args:
        positions: Strap particles, shape (N, 3), gripper end first

    Returns:
        Closed polyline: particles 0..N-1 followed by the closure point
    """
    positions = np.asarray(positions, dtype=np.float64)
    closure = 0.5 * (positions[0] + positions[-1]) - np.array([0.0, 0.0, drop])
    return Polyline3(np.vstack([positions, closure]), closed=True)


def strap_curve(positions: np.ndarray, drop: float) -> Polyline3:
    """
    Closed strap curve with M₁ = 2N vertices (particles, segment midpoints, closure point).
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    dense = np.empty((2 * n - 1, 3))
    dense[0::2] = positions
    dense[1::2] = 0.5 * (positions[:-1] + positions[1:])
    return virtual_closure(dense, drop)


def hook_curve(world: WorldState) -> Polyline3:
    """World-frame hook polyline of a world."""
    return geometry.make_hook(world.hook, world.bar_angle)


def frame_link(positions: np.ndarray, bar_angle: float, shape: HookShape, drop: float, seed: int = 0) -> float:
    """
    Signed linking value of strap particles against the hook at a bar angle.

    Args:
        positions: Strap particles, shape (N, 3), gripper end first
        bar_angle: Bar joint angle (rad)
        shape: Hook mounted on the bar
        drop: Virtual closure drop below the pins (m)
        seed: Jitter seed for singular configurations
    """
    strap = strap_curve(positions, drop)
    return link_with_jitter(strap, geometry.make_hook(shape, bar_angle), seed=seed).value


def world_link(world: WorldState, seed: int = 0) -> float:
    """Signed linking value of a world's strap (virtual closure) and hook."""
    return frame_link(world.rope.positions, world.bar_angle, world.hook, world.scene.closure_drop, seed)


def c_link_from_value(value, bounds: CostBounds):
    """
    Normalized linking cost ``1 - (value - β₀) / (β₁ - β₀)`` clamped to [0, 1].

    Accepts a scalar or an array.
    """
    cost = 1.0 - (np.asarray(value, dtype=np.float64) - bounds.beta0) / (bounds.beta1 - bounds.beta0)
    cost = np.clip(cost, 0.0, 1.0)
    return float(cost) if cost.ndim == 0 else cost


def c_link_exact(strap: Polyline3, hook: Polyline3, bounds: CostBounds) -> float:
    """
    Exact normalized linking cost.

    Raises:
        SingularConfigurationError: Propagated from gauss_link
    """
    return c_link_from_value(gauss_link(strap, hook).value, bounds)


def refine_convergence(strap: Polyline3, hook: Polyline3, levels: int) -> List[LinkingResult]:
    """
    Recompute the linking sum at doubling vertex counts.

    Each level inserts segment midpoints into both curves, so every level's
    vertices contain the previous level's.

    Args:
        strap: First curve
        hook: Second curve
        levels: Number of refinements

    Returns:
        ``levels + 1`` results, coarsest first
    """
    results = [gauss_link(strap, hook)]
    for _ in range(levels):
        strap = strap.subdivide(2)
        hook = hook.subdivide(2)
        results.append(gauss_link(strap, hook))
    return results


def successive_differences(results: Sequence[LinkingResult]) -> List[float]:
    """Absolute differences between consecutive refinement levels."""
    return [abs(b.value - a.value) for a, b in zip(results, results[1:])]


def _plane_basis(direction: np.ndarray):
    n = np.asarray(direction, dtype=np.float64)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return n, e1, e2


def crossing_link(a: Polyline3, b: Polyline3, direction: Optional[np.ndarray] = None) -> float:
    """
    Linking number of two closed curves from a planar diagram.

    Projects both curves along ``direction`` (viewer on the positive side),
    finds every crossing between the two curves and sums the crossing signs
    ``sign(n · (u_over × u_under))``; the linking number is half the sum.

    Args:
        a: First closed curve
        b: Second closed curve
        direction: Projection direction; a fixed generic direction by default

    Returns:
        Half the signed crossing count (an integer for closed curves in general position)
    """
    n, e1, e2 = _plane_basis(GENERIC_DIRECTION if direction is None else direction)
    pa, pb = a.vertices, b.vertices
    ua, ub = a.segment_vectors(), b.segment_vectors()
    pa, pb = pa[:ua.shape[0]], pb[:ub.shape[0]]

    def planar(v):
        return np.stack([v @ e1, v @ e2], axis=-1)

    pa2, pb2, ua2, ub2 = planar(pa), planar(pb), planar(ua), planar(ub)
    w = pb2[None, :, :] - pa2[:, None, :]
    denom = ua2[:, None, 0] * ub2[None, :, 1] - ua2[:, None, 1] * ub2[None, :, 0]
    safe = np.where(np.abs(denom) > 1e-15, denom, 1.0)
    s = (w[..., 0] * ub2[None, :, 1] - w[..., 1] * ub2[None, :, 0]) / safe
    t = (w[..., 0] * ua2[:, None, 1] - w[..., 1] * ua2[:, None, 0]) / safe
    crosses = (np.abs(denom) > 1e-15) & (s >= 0) & (s < 1) & (t >= 0) & (t < 1)

    ii, jj = np.nonzero(crosses)
    height_a = (pa[ii] + s[ii, jj, None] * ua[ii]) @ n
    height_b = (pb[jj] + t[ii, jj, None] * ub[jj]) @ n
    orient = np.sign(denom[ii, jj])
    signs = np.where(height_a > height_b, orient, -orient)
    return float(signs.sum()) / 2.0
