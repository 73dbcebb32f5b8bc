"""Asynchronous map fusion between vehicles and the base station.

A vehicle uplinks (a) its particle-averaged map intensity per source type
and (b) a representation of the field of view it has accumulated since its
previous sync.  The BS fuses the received map into its global map with an
arithmetic average whose per-component weights reflect where information
overlaps:

  * components matched across the two maps (Mahalanobis proximity in either
    direction) are averaged with weight 1/2 each;
  * an unmatched BS component keeps weight 1 outside the vehicle's
    accumulated FoV (the vehicle had nothing to say there) but is halved
    inside it (the vehicle looked and saw nothing, so likely a false
    alarm);
  * an unmatched vehicle component enters with weight 1 (new information).

With the downlink enabled, every particle's VA/SP intensities are then
overwritten by the fused BS map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SourceType
from .gm import GaussianMixture, prune_merge
from .phd_slam import normalized_weights

MAP_KINDS = (SourceType.VA, SourceType.SP)


@dataclass(frozen=True)
class AccumulatedFoV:
    """Coverage since the last sync: SP coverage is a union of sensing
    balls about the estimated poses; VA (and BS) coverage is universal."""

    sp_centers: np.ndarray      # (n_poses, 3)
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "sp_centers",
                           np.atleast_2d(np.asarray(self.sp_centers,
                                                    dtype=float)))

    def contains(self, kind: SourceType, points) -> np.ndarray:
        """Membership test, broadcast over points (..., 3)."""
        points = np.asarray(points, dtype=float)
        if kind is not SourceType.SP:
            return np.ones(points.shape[:-1], dtype=bool)
        if self.sp_centers.shape[0] == 0:
            return np.zeros(points.shape[:-1], dtype=bool)
        d = np.linalg.norm(points[..., None, :] - self.sp_centers, axis=-1)
        return np.any(d <= self.radius, axis=-1)


def accumulate_fov(est_positions, fov_range: float,
                   detect_threshold: float = 0.7) -> AccumulatedFoV:
    """FoV accumulated over the estimated poses since the last sync.

    ``detect_threshold`` is the level at which coverage is declared; any
    value in (0, p_detect] yields the same sensing balls under the
    binary-within-range detection model, so it only guards misuse.
    """
    est_positions = np.atleast_2d(np.asarray(est_positions, dtype=float))
    if est_positions.shape[0] == 0:
        raise ValueError("need at least one pose since the last sync")
    if not 0.0 < detect_threshold <= 1.0:
        raise ValueError("detect_threshold must be in (0, 1]")
    return AccumulatedFoV(est_positions[:, :3], fov_range)


def average_map(particles, trunc_threshold, merge_threshold, max_components,
                weights=None):
    """Particle-averaged intensity per map kind, pruned and merged.

    Every particle's components are imported with their weights scaled by
    the particle weight; the concatenated mixture is then reduced.
    """
    if weights is None:
        weights = normalized_weights(particles)
    out = {}
    for kind in MAP_KINDS:
        parts = [p.maps[kind].scaled(w) for p, w in zip(particles, weights)]
        out[kind] = prune_merge(GaussianMixture.concat(parts),
                                trunc_threshold, merge_threshold,
                                max_components)
    return out


@dataclass
class BSMap:
    """The base station's global map, one intensity per map kind."""

    va: GaussianMixture
    sp: GaussianMixture

    @classmethod
    def empty(cls) -> "BSMap":
        return cls(GaussianMixture.empty(), GaussianMixture.empty())

    def __getitem__(self, kind: SourceType) -> GaussianMixture:
        return {SourceType.VA: self.va, SourceType.SP: self.sp}[kind]


def proximity_matrices(vehicle_gm: GaussianMixture, bs_gm: GaussianMixture,
                       gate: float):
    """Binary proximity matrices (C_a, C_p), each (J_vehicle, J_bs).

    C_a[a, p] = 1 when the BS mean lies within ``gate`` (squared
    Mahalanobis) of vehicle component a's distribution; C_p[a, p] = 1 when
    the vehicle mean lies within the gate of BS component p's distribution.
    """
    j_a, j_p = len(vehicle_gm), len(bs_gm)
    if j_a == 0 or j_p == 0:
        z = np.zeros((j_a, j_p), dtype=bool)
        return z, z.copy()
    diff = vehicle_gm.mean[:, None, :] - bs_gm.mean[None, :, :]
    sol_a = np.linalg.solve(vehicle_gm.cov[:, None], diff[..., None])[..., 0]
    d_a_to_p = np.sum(diff * sol_a, axis=-1)
    sol_p = np.linalg.solve(bs_gm.cov[None, :], diff[..., None])[..., 0]
    d_p_to_a = np.sum(diff * sol_p, axis=-1)
    return d_a_to_p < gate, d_p_to_a < gate


def fuse_gm(bs_gm: GaussianMixture, vehicle_gm: GaussianMixture,
            fov: AccumulatedFoV, kind: SourceType, gate: float,
            trunc_threshold: float, merge_threshold: float,
            max_components: int) -> GaussianMixture:
    """Arithmetic-average fusion of one map kind at the BS.

    An empty BS map is simply overwritten by the vehicle map.  Otherwise a
    component is "matched" when any counterpart is proximate in either
    direction; the per-component weights described in the module docstring
    are applied and the weighted concatenation reduced.
    """
    if len(bs_gm) == 0:
        return vehicle_gm.copy()

    c_a, c_p = proximity_matrices(vehicle_gm, bs_gm, gate)
    matched = c_a | c_p
    beta_a = np.where(matched.any(axis=1), 0.5, 1.0)
    in_fov = fov.contains(kind, bs_gm.mean)
    beta_p = np.where(matched.any(axis=0), 0.5, np.where(in_fov, 0.5, 1.0))

    fused = GaussianMixture.concat([
        GaussianMixture(beta_a * vehicle_gm.w, vehicle_gm.mean,
                        vehicle_gm.cov),
        GaussianMixture(beta_p * bs_gm.w, bs_gm.mean, bs_gm.cov)])
    return prune_merge(fused, trunc_threshold, merge_threshold,
                       max_components)


def fuse(bs_map: BSMap, vehicle_maps: dict, fov: AccumulatedFoV, gate: float,
         trunc_threshold: float, merge_threshold: float,
         max_components: int) -> BSMap:
    """Fuse one vehicle's uplinked maps into the BS map (both kinds)."""
    return BSMap(
        va=fuse_gm(bs_map.va, vehicle_maps[SourceType.VA], fov,
                   SourceType.VA, gate, trunc_threshold, merge_threshold,
                   max_components),
        sp=fuse_gm(bs_map.sp, vehicle_maps[SourceType.SP], fov,
                   SourceType.SP, gate, trunc_threshold, merge_threshold,
                   max_components))


def downlink_apply(particles, bs_map: BSMap) -> None:
    """Overwrite every particle's VA/SP intensities with the BS map.

    Mixtures are immutable values, so sharing one object across particles
    is safe.  Log-weights and the BS entry are untouched.
    """
    va, sp = bs_map.va, bs_map.sp
    for p in particles:
        p.maps = p.maps.replaced(va=va, sp=sp)
