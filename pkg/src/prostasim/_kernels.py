"""Distance kernels with optional numba acceleration.

The planner evaluates needle-shaft vs. bone-capsule clearance over a few
hundred candidate trajectories per blocked target, which makes the batched
segment distance the hot loop of a study run.  Two implementations live here:
a scalar/looped version compiled with numba, and a broadcast numpy version.

Selection is controlled by the ``PROSTASIM_BACKEND`` environment variable:

* ``numba``  - require the compiled kernels (raise if numba is missing)
* ``numpy``  - force the pure-numpy path
* unset      - use numba when importable, else fall back to numpy

Both paths implement the same clamped closest-point algorithm (Ericson,
Real-Time Collision Detection, 5.1.9); summation order differs so results
may disagree in the last ulp.  A study run always uses a single backend.
"""

from __future__ import annotations

import os

import numpy as np

_BACKEND_ENV = "PROSTASIM_BACKEND"

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    _HAVE_NUMBA = False


def _seg_seg_dist_py(p0, p1, q0, q1):
    """Distance between segments [p0,p1] and [q0,q1], all length-3 arrays."""
    d1x = p1[0] - p0[0]
    d1y = p1[1] - p0[1]
    d1z = p1[2] - p0[2]
    d2x = q1[0] - q0[0]
    d2y = q1[1] - q0[1]
    d2z = q1[2] - q0[2]
    rx = p0[0] - q0[0]
    ry = p0[1] - q0[1]
    rz = p0[2] - q0[2]
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2x * d2x + d2y * d2y + d2z * d2z
    b = d1x * d2x + d1y * d2y + d1z * d2z
    c = d1x * rx + d1y * ry + d1z * rz
    f = d2x * rx + d2y * ry + d2z * rz

    if a <= 1e-30 and e <= 1e-30:
        return (rx * rx + ry * ry + rz * rz) ** 0.5
    if a <= 1e-30:
        s = 0.0
        t = min(1.0, max(0.0, f / e))
    elif e <= 1e-30:
        t = 0.0
        s = min(1.0, max(0.0, -c / a))
    else:
        denom = a * e - b * b
        if denom > 1e-30:
            s = min(1.0, max(0.0, (b * f - c * e) / denom))
        else:
            s = 0.0
        t = (b * s + f) / e
        if t < 0.0:
            t = 0.0
            s = min(1.0, max(0.0, -c / a))
        elif t > 1.0:
            t = 1.0
            s = min(1.0, max(0.0, (b - c) / a))

    cx = p0[0] + s * d1x - (q0[0] + t * d2x)
    cy = p0[1] + s * d1y - (q0[1] + t * d2y)
    cz = p0[2] + s * d1z - (q0[2] + t * d2z)
    return (cx * cx + cy * cy + cz * cz) ** 0.5


# the looped grid calls this global; it is rebound to the jitted scalar
# below so numba sees a Dispatcher when it compiles the grid
_seg_dist_impl = _seg_seg_dist_py


def _clearance_grid_py(entries, entry_z, target, overshoot, cap_a, cap_b, cap_r, needle_r):
    """Min clearance of each candidate needle shaft against all capsules.

    entries: (n, 2) candidate entry x/y on the entry plane at z=entry_z.
    target: (3,) point every candidate passes through; the shaft runs from
    the entry to ``overshoot`` mm past the target.
    cap_a/cap_b: (m, 3) capsule axis endpoints, cap_r: (m,) radii.
    Returns (n,) of min_j(segdist - cap_r[j]) - needle_r.
    """
    n = entries.shape[0]
    m = cap_a.shape[0]
    out = np.empty(n, dtype=np.float64)
    p0 = np.empty(3, dtype=np.float64)
    p1 = np.empty(3, dtype=np.float64)
    for i in range(n):
        p0[0] = entries[i, 0]
        p0[1] = entries[i, 1]
        p0[2] = entry_z
        dx = target[0] - p0[0]
        dy = target[1] - p0[1]
        dz = target[2] - p0[2]
        norm = (dx * dx + dy * dy + dz * dz) ** 0.5
        scale = (norm + overshoot) / norm
        p1[0] = p0[0] + dx * scale
        p1[1] = p0[1] + dy * scale
        p1[2] = p0[2] + dz * scale
        best = np.inf
        for j in range(m):
            d = _seg_dist_impl(p0, p1, cap_a[j], cap_b[j]) - cap_r[j]
            if d < best:
                best = d
        out[i] = best - needle_r
    return out


def _clearance_grid_numpy(entries, entry_z, target, overshoot, cap_a, cap_b, cap_r, needle_r):
    """Broadcast implementation of :func:`_clearance_grid_py` (n x m at once)."""
    n = entries.shape[0]
    p0 = np.empty((n, 3), dtype=np.float64)
    p0[:, 0] = entries[:, 0]
    p0[:, 1] = entries[:, 1]
    p0[:, 2] = entry_z
    d = target[None, :] - p0
    norm = np.sqrt(np.sum(d * d, axis=1))
    p1 = p0 + d * ((norm + overshoot) / norm)[:, None]

    # pairwise quantities, shape (n, m)
    d1 = (p1 - p0)[:, None, :]
    d2 = (cap_b - cap_a)[None, :, :]
    r = p0[:, None, :] - cap_a[None, :, :]
    a = np.sum(d1 * d1, axis=2)
    e = np.sum(d2 * d2, axis=2)
    b = np.sum(d1 * d2, axis=2)
    c = np.sum(d1 * r, axis=2)
    f = np.sum(d2 * r, axis=2)

    denom = a * e - b * b
    safe = denom > 1e-30
    s = np.where(safe, np.clip((b * f - c * e) / np.where(safe, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / e
    low = t < 0.0
    high = t > 1.0
    s = np.where(low, np.clip(-c / a, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - c) / a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    diff = (p0[:, None, :] + s[..., None] * d1) - (cap_a[None, :, :] + t[..., None] * d2)
    dist = np.sqrt(np.sum(diff * diff, axis=2)) - cap_r[None, :]
    return np.min(dist, axis=1) - needle_r


if _HAVE_NUMBA:
    _seg_seg_dist_numba = numba.njit(cache=True)(_seg_seg_dist_py)
    _seg_dist_impl = _seg_seg_dist_numba
    _clearance_grid_numba = numba.njit(cache=True)(_clearance_grid_py)
else:  # pragma: no cover
    _seg_seg_dist_numba = None
    _clearance_grid_numba = None


def resolve_backend() -> str:
    """Return the backend name selected by environment and availability."""
    choice = os.environ.get(_BACKEND_ENV, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError(
                f"{_BACKEND_ENV}=numba but numba is not importable"
            )
        return "numba"
    if choice not in ("", "auto"):
        raise RuntimeError(f"unknown {_BACKEND_ENV} value: {choice!r}")
    return "numba" if _HAVE_NUMBA else "numpy"


_active = resolve_backend()


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    """Switch kernels at runtime (used by tests and the benchmark)."""
    global _active
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    _active = name


def seg_seg_dist(p0, p1, q0, q1) -> float:
    """Minimum distance between two 3D segments."""
    p0 = np.ascontiguousarray(p0, dtype=np.float64)
    p1 = np.ascontiguousarray(p1, dtype=np.float64)
    q0 = np.ascontiguousarray(q0, dtype=np.float64)
    q1 = np.ascontiguousarray(q1, dtype=np.float64)
    if _active == "numba":
        return float(_seg_seg_dist_numba(p0, p1, q0, q1))
    return float(_seg_seg_dist_py(p0, p1, q0, q1))


def clearance_grid(entries, entry_z, target, overshoot, cap_a, cap_b, cap_r, needle_r):
    """Clearance of every candidate shaft; see :func:`_clearance_grid_py`."""
    entries = np.ascontiguousarray(entries, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    cap_a = np.ascontiguousarray(cap_a, dtype=np.float64)
    cap_b = np.ascontiguousarray(cap_b, dtype=np.float64)
    cap_r = np.ascontiguousarray(cap_r, dtype=np.float64)
    if _active == "numba":
        return _clearance_grid_numba(
            entries, float(entry_z), target, float(overshoot), cap_a, cap_b, cap_r, float(needle_r)
        )
    return _clearance_grid_numpy(
        entries, float(entry_z), target, float(overshoot), cap_a, cap_b, cap_r, float(needle_r)
    )
