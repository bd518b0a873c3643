"""Rigid 3D transforms, needle-line decomposition, and segment distances.

Conventions: rotations are 3x3 orthonormal matrices acting on column
vectors, translations are applied after rotation, angles at the API
boundary are in degrees, lengths in millimetres.  The working frame has
+z along the needle insertion direction, +x toward patient left, +y
anterior, with the origin at the gland centroid in the rest pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import seg_seg_dist

# Compose chains longer than this are re-orthonormalized to stop the
# rotation part drifting away from O(3).
MAX_COMPOSE_CHAIN = 100

COLLINEARITY_TOL = 1e-9


class DegenerateConfiguration(ValueError):
    """Raised when a point set cannot pin down a rigid transform."""


@dataclass
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    chain: int = field(default=0, compare=False)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)


@dataclass
class Segment:
    """Straight segment between points ``a`` and ``b`` (degenerate a=b allowed)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(3)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(3)


def identity() -> RigidTransform:
    return RigidTransform(np.eye(3), np.zeros(3))


def translation(v) -> RigidTransform:
    """Pure translation by ``v``."""
    return RigidTransform(np.eye(3), np.asarray(v, dtype=np.float64))


def apply(t: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Transform a point (3,) or a stack of points (N, 3)."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        return t.rotation @ p + t.translation
    return p @ t.rotation.T + t.translation


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``t2`` first, then ``t1``."""
    rot = t1.rotation @ t2.rotation
    trans = t1.rotation @ t2.translation + t1.translation
    chain = max(t1.chain, t2.chain) + 1
    if chain > MAX_COMPOSE_CHAIN:
        rot = _reorthonormalize(rot)
        chain = 0
    return RigidTransform(rot, trans, chain)


def inverse(t: RigidTransform) -> RigidTransform:
    rot = t.rotation.T
    return RigidTransform(rot, -(rot @ t.translation), t.chain)


def _reorthonormalize(rot: np.ndarray) -> np.ndarray:
    # nearest rotation in the Frobenius sense, with a det(+1) guard
    u, _, vt = np.linalg.svd(rot)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def rotation_about_axis(axis: np.ndarray, angle_deg: float, center: np.ndarray) -> RigidTransform:
    """Rotation by ``angle_deg`` about the line through ``center`` along ``axis``.

    Rodrigues formula; the returned transform leaves ``center`` fixed up to
    floating point.
    """
    k = normalize(axis)
    theta = np.deg2rad(float(angle_deg))
    kx = np.array(
        [
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ]
    )
    rot = np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)
    center = np.asarray(center, dtype=np.float64)
    return RigidTransform(rot, center - rot @ center)


def rotation_angle_deg(t: RigidTransform) -> float:
    """Magnitude of the rotation of ``t`` in degrees."""
    c = (float(np.trace(t.rotation)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def axis_decompose(entry, dir, target) -> tuple[float, float]:
    """Depth and lateral miss of ``target`` relative to the needle line.

    Returns ``(depth, lateral)`` where ``depth = (target - entry) . dir``
    and ``lateral`` is the distance of the target from the line; the point
    ``entry + depth * dir`` is the closest point on the line to the target.
    """
    entry = np.asarray(entry, dtype=np.float64)
    d = np.asarray(dir, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    rel = target - entry
    depth = float(rel @ d)
    return depth, float(np.linalg.norm(rel - depth * d))


def segment_segment_distance(p0, p1, q0, q1) -> float:
    """Minimum distance between segments ``[p0, p1]`` and ``[q0, q1]``."""
    return seg_seg_dist(p0, p1, q0, q1)


def segment_capsule_distance(s: Segment, axis: Segment, radius: float) -> float:
    """Distance from segment ``s`` to the capsule around ``axis``.

    Clamped at zero: 0 means the segment touches or enters the capsule.
    """
    if radius < 0:
        raise ValueError("capsule radius must be >= 0")
    return max(0.0, seg_seg_dist(s.a, s.b, axis.a, axis.b) - radius)


def register_points(ref_points: np.ndarray, obs_points: np.ndarray) -> tuple[RigidTransform, float]:
    """Least-squares rigid transform taking ``ref_points`` onto ``obs_points``.

    Closed form: centroid alignment plus the optimal-rotation SVD of the
    cross-covariance with a determinant correction, so the result is always
    a proper rotation.

    Parameters
    ----------
    ref_points, obs_points : (N, 3) arrays of paired points.

    Returns
    -------
    (transform, rms) where ``apply(transform, ref_points)`` best matches
    ``obs_points`` and ``rms`` is the root-mean-square residual in mm.

    Raises
    ------
    DegenerateConfiguration
        If fewer than 3 pairs are given or the reference points lie on a
        line (within 1e-9 mm).
    """
    ref = np.asarray(ref_points, dtype=np.float64).reshape(-1, 3)
    obs = np.asarray(obs_points, dtype=np.float64).reshape(-1, 3)
    if ref.shape != obs.shape:
        raise ValueError("point sets must have matching shapes")
    n = ref.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 point pairs, got {n}")

    ref_mean = ref.mean(axis=0)
    ref_c = ref - ref_mean
    if max_line_deviation(ref_c) < COLLINEARITY_TOL:
        raise DegenerateConfiguration("reference points are collinear")

    obs_mean = obs.mean(axis=0)
    h = ref_c.T @ (obs - obs_mean)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = obs_mean - rot @ ref_mean
    t = RigidTransform(rot, trans)
    resid = apply(t, ref) - obs
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return t, rms


def max_line_deviation(centered: np.ndarray) -> float:
    """Largest distance of mean-centered points from their best-fit line."""
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] == 0.0:
        return 0.0
    axis = vt[0]
    along = centered @ axis
    off = centered - np.outer(along, axis)
    return float(np.max(np.linalg.norm(off, axis=1)))
