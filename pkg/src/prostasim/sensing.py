"""Synthetic ultrasound observation and fiducial-based motion tracking.

Observation replaces image acquisition: each phantom fiducial is moved by
the current gland transform and perturbed by isotropic noise whose sd
grows with tissue depth and with the number of needles already placed
(image degradation).  Registration of an observed configuration against
the reference configuration recovers the gland transform, which tracks
the target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .geometry import DegenerateConfiguration
from .phantom import ProstatePhantom


@dataclass
class NoiseModel:
    """Observation noise: sd = sigma0 * degradation^k + depth_gain * depth.

    ``k`` counts completed insertions in the session; depth is mm from the
    gland entry plane.  Defaults are the calibration fit shipped with the
    package (chosen jointly with the motion parameters so the default
    study reproduces the published summary statistics).
    """

    sigma0: float = 0.08
    depth_gain: float = 0.001
    degradation_per_needle: float = 1.0
    rng_seed: int = 0

    def validate(self):
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be >= 0")
        if self.depth_gain < 0:
            raise ValueError("depth_gain must be >= 0")
        if self.degradation_per_needle < 1.0:
            raise ValueError("degradation_per_needle must be >= 1")


@dataclass
class Observation:
    fiducials_observed: list[tuple[int, np.ndarray]]
    sigma_used: float
    volume_index: int


def _point_sigma(base_sigma: float, noise: NoiseModel, point_world, entry_plane_depth: float) -> float:
    depth = max(0.0, float(point_world[2]) + entry_plane_depth)
    return base_sigma + noise.depth_gain * depth


def observe(
    phantom: ProstatePhantom,
    current_transform: geometry.RigidTransform,
    noise: NoiseModel,
    rng_stream,
    volume_index: int = 0,
    needle_count: int = 0,
) -> Observation:
    """One synthetic volume: all fiducials as (id, noisy world position).

    ``needle_count`` is the number of needles already completed in this
    session and drives the degradation multiplier.  Deterministic given
    the stream position.
    """
    base = noise.sigma0 * noise.degradation_per_needle**needle_count
    entry_plane_depth = phantom.gland_semiaxes[2]  # gland entry plane z = -c
    observed = []
    for fid, rest in phantom.fiducials:
        world = geometry.apply(current_transform, rest)
        sigma = _point_sigma(base, noise, world, entry_plane_depth)
        if sigma > 0:
            world = world + rng_stream.normal(0.0, sigma, 3)
        observed.append((fid, world))
    return Observation(observed, float(base), volume_index)


def observe_point(
    phantom: ProstatePhantom,
    point_world,
    noise: NoiseModel,
    rng_stream,
    needle_count: int = 0,
) -> np.ndarray:
    """Noisy observation of a single world point (e.g. the target bead)."""
    base = noise.sigma0 * noise.degradation_per_needle**needle_count
    p = np.asarray(point_world, dtype=np.float64)
    sigma = _point_sigma(base, noise, p, phantom.gland_semiaxes[2])
    if sigma <= 0:
        return p.copy()
    return p + rng_stream.normal(0.0, sigma, 3)


def rigid_register(reference, observed) -> tuple[geometry.RigidTransform, float]:
    """Least-squares rigid registration of id-matched point lists.

    Both arguments are lists of (id, point); only common ids participate.
    Returns (transform, rms_residual).  Raises DegenerateConfiguration for
    fewer than 3 common points or a collinear reference configuration.
    """
    ref_map = {fid: np.asarray(p, dtype=np.float64) for fid, p in reference}
    obs_map = {fid: np.asarray(p, dtype=np.float64) for fid, p in observed}
    common = sorted(ref_map.keys() & obs_map.keys())
    if len(common) < 3:
        raise DegenerateConfiguration(
            f"need at least 3 common fiducials, got {len(common)}"
        )
    ref = np.array([ref_map[c] for c in common])
    obs = np.array([obs_map[c] for c in common])
    return geometry.register_points(ref, obs)


def track_target(reg: geometry.RigidTransform, target_rest) -> np.ndarray:
    """Predicted current position of a rest-frame target under ``reg``."""
    return geometry.apply(reg, target_rest)
