"""
Hook curves, bar rotation and pinhole projection.

Hook local frame: the stem hangs from the bar pivot (origin) straight down
to depth ``throat_depth``; the C-arc of radius ``r`` continues tangentially
from the stem's lower end, sweeping down, across the bottom and up the far
side, and stops ``opening_angle`` short of closing, leaving the mouth between
its tip and the stem. The C lies in the local x-z plane; ``tilt`` turns it
about the stem. The bar rotates the whole hook about the bar axis (world y
unless configured otherwise) through the pivot.
"""

from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from ..models import Camera, HookShape, Polyline3, Pose6, TWO_PI
from ..models.enums import HookFamily
from ..utils.config import CameraConfig, HookPreset
from ..utils.exceptions import GeometryError

# Dense construction grid; make_hook resamples it by arc length.
_DENSE_PER_RADIAN = 400
_DENSE_STEM_PER_METER = 20000


def hook_shape(family: HookFamily, preset: HookPreset,
               pivot: Tuple[float, float, float] = (0.0, 0.0, 0.40),
               axis: Tuple[float, float, float] = (0.0, 1.0, 0.0)) -> HookShape:
    """Build a HookShape from a preset table entry."""
    return HookShape(family=HookFamily(family), radius=preset.radius,
                     opening_angle=preset.opening_angle, tilt=preset.tilt,
                     throat_depth=preset.throat_depth, samples=preset.samples,
                     pivot=tuple(float(v) for v in pivot), axis=tuple(float(v) for v in axis))


def bar_axis(shape: HookShape) -> np.ndarray:
    """
    Unit bar rotation axis of a hook.

    Raises:
        GeometryError: If the configured axis is zero or not finite
    """
    axis = np.asarray(shape.axis, dtype=np.float64)
    norm = float(np.linalg.norm(axis))
    if not np.isfinite(norm) or norm <= 1e-12:
        raise GeometryError("Bar axis must be a non-zero vector", field="bar_axis", value=shape.axis)
    return axis / norm


def shape_record(shape: HookShape) -> Dict[str, Any]:
    """JSON-ready hook parameters, as stored in trajectory log headers."""
    return {"family": str(shape.family), "radius": shape.radius, "opening_angle": shape.opening_angle,
            "tilt": shape.tilt, "throat_depth": shape.throat_depth, "samples": shape.samples,
            "pivot": list(shape.pivot), "axis": list(shape.axis)}


def shape_from_record(record: Dict[str, Any]) -> HookShape:
    """
    Rebuild a HookShape written by :func:`shape_record`.

    Raises:
        GeometryError: If a field is missing or malformed
    """
    try:
        pivot = tuple(float(v) for v in record["pivot"])
        axis = tuple(float(v) for v in record.get("axis", (0.0, 1.0, 0.0)))
        if len(pivot) != 3 or len(axis) != 3:
            raise ValueError("pivot and axis need 3 components")
        shape = HookShape(family=HookFamily(record["family"]), radius=float(record["radius"]),
                          opening_angle=float(record["opening_angle"]), tilt=float(record["tilt"]),
                          throat_depth=float(record["throat_depth"]), samples=int(record["samples"]),
                          pivot=pivot, axis=axis)
    except (KeyError, TypeError, ValueError) as e:
        raise GeometryError("Malformed hook record", field="hook_shape", details=str(e))
    _check_shape(shape)
    return shape


def _check_shape(shape: HookShape):
    if not shape.radius > 0:
        raise GeometryError("Hook radius must be positive", field="radius", value=shape.radius,
                            constraint="> 0")
    if not 0.0 < shape.opening_angle < TWO_PI:
        raise GeometryError("Hook opening angle must lie in (0, 2π)", field="opening_angle",
                            value=shape.opening_angle, constraint="in (0, 2π)")
    if shape.throat_depth < 0:
        raise GeometryError("Hook throat depth must be >= 0", field="throat_depth",
                            value=shape.throat_depth, constraint=">= 0")
    if shape.samples < 2:
        raise GeometryError("Hook needs at least 2 samples", field="samples", value=shape.samples,
                            constraint=">= 2")


def _dense_local(shape: HookShape) -> np.ndarray:
    r, d = shape.radius, shape.throat_depth
    span = TWO_PI - shape.opening_angle
    phi = -0.5 * np.pi - np.linspace(0.0, span, max(int(span * _DENSE_PER_RADIAN), 16))
    arc = np.column_stack([r + r * np.sin(phi), np.zeros_like(phi), -d + r * np.cos(phi)])
    if d > 0:
        stem_count = max(int(d * _DENSE_STEM_PER_METER), 2)
        z = np.linspace(0.0, -d, stem_count, endpoint=False)
        stem = np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
        return np.vstack([stem, arc])
    return arc


def local_hook(shape: HookShape) -> Polyline3:
    """
    Return the hook in its local frame (before tilt and bar rotation).

    Raises:
        GeometryError: For degenerate parameters
    """
    _check_shape(shape)
    return Polyline3(_dense_local(shape)).resample(shape.samples)


def hook_pose(shape: HookShape, bar_angle: float) -> Pose6:
    """Return the hook-to-world pose at a bar angle."""
    rotation = Rotation.from_rotvec(bar_axis(shape) * float(bar_angle)) * Rotation.from_rotvec([0.0, 0.0, shape.tilt])
    return Pose6(np.asarray(shape.pivot, dtype=np.float64), rotation)


def make_hook(shape: HookShape, bar_angle: float) -> Polyline3:
    """
    Generate the world-frame hook polyline at a bar angle.

    Args:
        shape: Hook parameters
        bar_angle: Bar joint angle (rad)

    Returns:
        Open polyline of ``shape.samples`` vertices ordered stem to tip

    Raises:
        GeometryError: For degenerate parameters
    """
    return local_hook(shape).transformed(hook_pose(shape, bar_angle))


def arc_mask(shape: HookShape) -> np.ndarray:
    """Flag the hook vertices that lie on the C-arc rather than the stem."""
    _check_shape(shape)
    span = TWO_PI - shape.opening_angle
    total = shape.throat_depth + shape.radius * span
    s = np.linspace(0.0, total, shape.samples)
    return s >= shape.throat_depth - 1e-12


def bottom_third_mask(shape: HookShape, hook: Polyline3) -> np.ndarray:
    """
    Flag arc vertices in the lowest third of the arc's vertical extent.

    Args:
        shape: Hook parameters
        hook: World-frame hook polyline produced by make_hook for ``shape``

    Returns:
        Boolean mask over hook vertices
    """
    on_arc = arc_mask(shape)
    z = hook.vertices[:, 2]
    z_arc = z[on_arc]
    limit = z_arc.min() + (z_arc.max() - z_arc.min()) / 3.0
    return on_arc & (z <= limit + 1e-12)


def look_at(eye, target, up) -> Pose6:
    """
    Camera-to-world pose looking from ``eye`` at ``target``.

    Camera axes follow the image convention: z forward, x right, y down.

    Raises:
        GeometryError: If ``up`` is parallel to the viewing direction
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm <= 1e-12:
        raise GeometryError("Camera eye and target coincide", field="target")
    forward /= norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) <= 1e-12:
        raise GeometryError("Camera up vector is parallel to the view direction", field="up")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose6(eye, Rotation.from_matrix(np.column_stack([right, down, forward])))


def make_camera(cfg: CameraConfig) -> Camera:
    """Build a Camera from its config entry; the principal point is the image center."""
    return Camera(name=cfg.name, pose=look_at(cfg.eye, cfg.target, cfg.up), focal=cfg.focal,
                  cx=cfg.width / 2.0, cy=cfg.height / 2.0, width=cfg.width, height=cfg.height)


def to_camera_frame(camera: Camera, points) -> np.ndarray:
    """Express world points in camera coordinates."""
    return camera.pose.inverse().apply(points)


def project(camera: Camera, point) -> Optional[Tuple[float, float]]:
    """
    Pinhole projection of one world point.

    Returns:
        (u, v) pixel coordinates, or None when the point is not in front of the camera
    """
    x, y, z = to_camera_frame(camera, np.asarray(point, dtype=np.float64).reshape(3))
    if z <= 0.0:
        return None
    return camera.cx + camera.focal * x / z, camera.cy + camera.focal * y / z


def project_many(camera: Camera, points) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project many world points.

    Points behind the camera are projected through their mirrored depth so
    that their pixel lies on the correct side; the mask marks them.

    Returns:
        (pixels (M, 2), in_front (M,) bool)
    """
    cam = to_camera_frame(camera, np.asarray(points, dtype=np.float64).reshape(-1, 3))
    depth = cam[:, 2]
    in_front = depth > 0.0
    safe = np.where(np.abs(depth) > 1e-9, np.abs(depth), 1e-9)
    pixels = np.column_stack([camera.cx + camera.focal * cam[:, 0] / safe,
                              camera.cy + camera.focal * cam[:, 1] / safe])
    return pixels, in_front


def closest_points_segments(p0, p1, q0, q1, eps: float = 1e-12):
    """
    Closest points between segment pairs [p0, p1] and [q0, q1] (broadcast over leading axes).

    Args:
        p0, p1: Endpoints of the first segments, shape (..., 3)
        q0, q1: Endpoints of the second segments, shape (..., 3)
        eps: Degeneracy guard for zero-length segments

    Returns:
        (s, t, closest_p, closest_q) with parameters in [0, 1]
    """
    p0, p1, q0, q1 = (np.asarray(a, dtype=np.float64) for a in (p0, p1, q0, q1))
    u = p1 - p0
    v = q1 - q0
    w = p0 - q0
    a = np.einsum("...k,...k->...", u, u)
    b = np.einsum("...k,...k->...", u, v)
    c = np.einsum("...k,...k->...", v, v)
    d = np.einsum("...k,...k->...", u, w)
    e = np.einsum("...k,...k->...", v, w)
    denom = a * c - b * b
    safe_a = np.where(a > eps, a, 1.0)
    safe_c = np.where(c > eps, c, 1.0)

    s = np.where(denom > eps * np.maximum(a * c, eps), (b * e - c * d) / np.where(denom > 0, denom, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = np.where(c > eps, (b * s + e) / safe_c, 0.0)

    low = t < 0.0
    high = t > 1.0
    s = np.where(low, np.clip(-d / safe_a, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - d) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    s = np.where(a > eps, s, 0.0)

    closest_p = p0 + s[..., None] * u
    closest_q = q0 + t[..., None] * v
    return s, t, closest_p, closest_q


def closest_points_on_segments(points, q0, q1, eps: float = 1e-12):
    """
    Project points onto segments [q0, q1] (broadcast over leading axes).

    Returns:
        (t, closest) with t in [0, 1]
    """
    points, q0, q1 = (np.asarray(a, dtype=np.float64) for a in (points, q0, q1))
    v = q1 - q0
    c = np.einsum("...k,...k->...", v, v)
    t = np.einsum("...k,...k->...", points - q0, v) / np.where(c > eps, c, 1.0)
    t = np.clip(np.where(c > eps, t, 0.0), 0.0, 1.0)
    return t, q0 + t[..., None] * v
