"""Per-vehicle Rao-Blackwellized multiple-model GM-PHD SLAM filter.

Each particle carries a vehicle-state hypothesis, a log-weight and one map
intensity per source type, conditioned on that particle's trajectory.  The
recursion per scan:

  1. ``predict``: sample the motion model per particle; maps and weights
     are untouched (sources are static, births are measurement-driven).
  2. ``append_births``: for every measurement and each of the VA/SP models,
     invert the measurement into a Gaussian birth candidate with a small
     constant weight, tagged with the index of its generating measurement.
  3. ``update_maps``: GM-PHD correction.  Non-birth components spawn a
     missed-detection copy weighted by (1 - p_D); every (measurement,
     component) pair spawns a detection copy.  A birth paired with its own
     generating measurement keeps its prior moments and unit likelihood;
     all other pairs use the cubature update and Gaussian likelihood.  The
     per-measurement normalizer W(z) = clutter + sum of all detection
     numerators (across source types, base station included) is shared with
     the particle weighting.
  4. ``update_log_weight``: the exact set-likelihood contribution
     sum_z log W(z), evaluated stably by factoring out the largest term.
  5. ``normalize_and_resample``: log-sum-exp weight normalization followed
     by systematic resampling to uniform weights.

The correction and birth stages process the whole particle ensemble in
single batched array operations (components concatenated across particles,
per-particle reductions done segment-wise); the per-particle entry points
are thin wrappers over the same code path.

Mixtures are immutable values; particles duplicated by resampling may share
them safely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ckf, geometry
from .geometry import ANGLE_MASK, Source, SourceType
from .gm import GaussianMixture, TypedMap, extract_means, symmetrize
from .motion import (IDX_HEAD, ProcessNoiseSpec, sample_transition,
                     wrap_angle)

# 95% quantile of a 3-dof chi-square, for the robust detection-probability
# option (outer bound of the component's 95% mass ellipsoid).
_CHI2_95_3 = 7.814727903251179

# SP birth candidates whose back-projected starting point is this far
# beyond the sensing range are skipped without running the inverse
# optimizer; the optimizer moves points by meters at most, so these births
# would be discarded by the FoV test on their mean anyway.
SP_BIRTH_PRESCREEN_MARGIN = 30.0

_MAP_KINDS = (SourceType.VA, SourceType.SP)


class FilterDivergenceError(RuntimeError):
    """All particle weights vanished (every log-weight is -inf)."""


@dataclass(frozen=True)
class DetectionModel:
    """Detection, field-of-view and clutter description.

    Scattering points are detectable only within ``fov_range`` meters of
    the vehicle; the BS and virtual anchors are always visible.  Clutter is
    Poisson with ``clutter_rate`` expected returns per scan, uniform over
    the measurement box [0, max_range] x angle ranges, hence the intensity
    clutter_rate / (4 * max_range * pi^4).
    """

    p_detect: float = 0.9
    fov_range: float = 50.0
    clutter_rate: float = 1.0
    max_range: float = 200.0
    robust_pd: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError("p_detect must be in [0, 1]")
        if self.fov_range <= 0 or self.max_range <= 0:
            raise ValueError("fov_range and max_range must be positive")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be non-negative")

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_rate / (4.0 * self.max_range * np.pi ** 4)

    def pd_source(self, kind: SourceType, x, vpos) -> np.ndarray:
        """Detection probability of a source at x for a vehicle at vpos."""
        x = np.asarray(x, dtype=float)
        base = np.broadcast_to(
            self.p_detect, np.broadcast_shapes(x.shape[:-1],
                                               np.shape(vpos)[:-1])).copy()
        if kind is SourceType.SP:
            dist = np.linalg.norm(x - vpos, axis=-1)
            base = np.where(dist <= self.fov_range, base, 0.0)
        return base

    def pd_component(self, kind: SourceType, mean, cov, vpos) -> np.ndarray:
        """Adaptive per-component detection probability.

        Default: the detection probability evaluated at the component mean.
        With ``robust_pd`` the minimum over the component's 95% mass region
        is used instead (bounded by enclosing the ellipsoid in a ball), so
        components straddling the FoV edge are not decayed by misses.
        """
        mean = np.asarray(mean, dtype=float)
        if kind is not SourceType.SP or not self.robust_pd:
            return self.pd_source(kind, mean, vpos)
        lam_max = np.linalg.eigvalsh(np.asarray(cov, dtype=float))[..., -1]
        reach = np.linalg.norm(mean - vpos, axis=-1) \
            + np.sqrt(_CHI2_95_3 * np.clip(lam_max, 0.0, None))
        return np.where(reach <= self.fov_range, self.p_detect, 0.0)


@dataclass
class Particle:
    """A vehicle-state hypothesis with its conditional map intensities."""

    state: np.ndarray
    log_weight: float
    maps: TypedMap
    # Birth bookkeeping for the current scan: per map kind, the index of the
    # generating measurement for each component (-1 for non-births).  Set by
    # append_births, consumed and cleared by update_maps.
    birth_tags: dict = field(default_factory=dict)

    def tags_for(self, kind: SourceType) -> np.ndarray:
        tags = self.birth_tags.get(kind)
        if tags is None:
            return np.full(len(self.maps[kind]), -1, dtype=int)
        return tags


def predict(particles, dt: float, noise: ProcessNoiseSpec,
            rng: np.random.Generator) -> None:
    """Sample every particle's state forward; weights and maps unchanged."""
    if not particles:
        return
    states = np.stack([p.state for p in particles])
    new_states = sample_transition(states, dt, noise, rng)
    for p, s in zip(particles, new_states):
        p.state = s


def append_births(particles, zs, det: DetectionModel, birth_weight: float,
                  noise_cov, x_bs) -> None:
    """Measurement-driven births for every particle, VA and SP models.

    One candidate per (measurement, model); candidates whose inversion
    fails are skipped, as are SP candidates outside the particle's own
    field of view (their detection probability would be zero; clearly
    hopeless ones are pre-screened from their back-projection).
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if not particles or zs.shape[0] == 0:
        return
    states = np.stack([p.state for p in particles])
    vpos = states[:, :3]

    for kind in _MAP_KINDS:
        keep = None
        if kind is SourceType.SP:
            init_pts, valid = ckf.back_project(
                zs[:, None, :], states[None, :, :], kind, x_bs)
            with np.errstate(invalid="ignore"):
                dist = np.linalg.norm(init_pts - vpos[None], axis=-1)
            keep = valid & (dist <= det.fov_range
                            + SP_BIRTH_PRESCREEN_MARGIN)
        means, covs, ok = ckf.invert_births_batch(
            zs, states, kind, x_bs, noise_cov, keep=keep)
        if kind is SourceType.SP:
            ok = ok & (det.pd_source(kind, means, vpos[None]) > 0.0)

        for i, p in enumerate(particles):
            qs = np.flatnonzero(ok[:, i])
            if qs.size == 0:
                continue
            births = GaussianMixture(np.full(qs.size, birth_weight),
                                     means[qs, i], covs[qs, i])
            old = p.maps[kind]
            old_tags = p.tags_for(kind)
            p.maps = p.maps.replaced(
                **{kind.value: GaussianMixture.concat([old, births])})
            p.birth_tags[kind] = np.concatenate([old_tags, qs])


def birth_append(particle: Particle, zs, det: DetectionModel,
                 birth_weight: float, noise_cov, x_bs) -> Particle:
    """Single-particle convenience wrapper around append_births."""
    append_births([particle], zs, det, birth_weight, noise_cov, x_bs)
    return particle


def _segment_reduce(ufunc, values, offsets, counts, fill):
    """Per-segment ufunc.reduceat along the last axis, empty-safe.

    values is padded with one ``fill`` column so that end offsets stay
    valid; segments with zero count are overwritten with ``fill``.
    """
    pad = np.full(values.shape[:-1] + (1,), fill)
    padded = np.concatenate([values, pad], axis=-1)
    out = ufunc.reduceat(padded, offsets[:-1], axis=-1)
    out[..., counts == 0] = fill
    return out


def update_maps_all(particles, zs, det: DetectionModel, noise_cov,
                    x_bs) -> np.ndarray:
    """GM-PHD map correction for a whole particle ensemble.

    Replaces every particle's VA and SP intensities with their posteriors
    (the BS intensity is never modified), clears birth tags, and returns the
    (I, Q) array of log-denominators log W(z) per particle for the weight
    update.  All components are processed in one concatenated batch; the
    per-particle normalizers are segment reductions over that batch.
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    n_meas = zs.shape[0]
    n_part = len(particles)
    if n_meas == 0:
        for p in particles:
            p.birth_tags = {}
        return np.zeros((n_part, 0))

    noise_cov = np.asarray(noise_cov, dtype=float)
    states = np.stack([p.state for p in particles])

    # Known base station term: zero-covariance component per particle, so
    # the innovation covariance is the measurement noise alone.
    bs_mean = np.stack([p.maps[SourceType.BS].mean[0] for p in particles])
    bs_w = np.array([p.maps[SourceType.BS].w[0] for p in particles])
    z_bs = geometry.measure(SourceType.BS, bs_mean, states, x_bs,
                            check=False)                       # (I, 5)
    resid_bs = geometry.wrap_measurement_diff(zs[None] - z_bs[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        log_bs = (np.log(det.p_detect * bs_w)[:, None]
                  + ckf.mvn_logpdf(resid_bs, noise_cov))       # (I, Q)
    log_bs = np.where(np.isfinite(log_bs), log_bs, -np.inf)

    per_kind = {}
    for kind in _MAP_KINDS:
        counts = np.array([len(p.maps[kind]) for p in particles])
        offsets = np.concatenate([[0], np.cumsum(counts)])
        j_all = int(offsets[-1])
        if j_all == 0:
            per_kind[kind] = None
            continue
        w = np.concatenate([p.maps[kind].w for p in particles])
        mean = np.concatenate([p.maps[kind].mean for p in particles])
        cov = np.concatenate([p.maps[kind].cov for p in particles])
        tags = np.concatenate([p.tags_for(kind) for p in particles])
        pidx = np.repeat(np.arange(n_part), counts)
        st = states[pidx]

        # Cubature update per component, with the component's own state.
        pts = ckf.cubature_points(mean, cov)                   # (J, 6, 3)
        z_pts = geometry.measure(kind, pts, st[:, None, :], x_bs,
                                 check=False)                  # (J, 6, 5)
        anchor = geometry.measure(kind, mean, st, x_bs, check=False)
        rel = anchor[:, None, :] + wrap_angle(z_pts - anchor[:, None, :])
        z_pts = np.where(ANGLE_MASK, rel, z_pts)
        z_pred = z_pts.mean(axis=1)
        dz = z_pts - z_pred[:, None, :]
        s_zz = np.einsum("jci,jck->jik", dz, dz) / 6.0 + noise_cov
        dx = pts - mean[:, None, :]
        s_xz = np.einsum("jci,jck->jik", dx, dz) / 6.0
        gain_t = np.linalg.solve(s_zz, np.swapaxes(s_xz, 1, 2))
        gain = np.swapaxes(gain_t, 1, 2)
        cov_post = symmetrize(cov - gain @ s_zz @ gain_t)
        z_pred[:, ANGLE_MASK] = wrap_angle(z_pred[:, ANGLE_MASK])

        pd = det.pd_component(kind, mean, cov, st[:, :3])
        pd_eff = np.where(tags >= 0, 1.0, pd)
        resid = geometry.wrap_measurement_diff(
            zs[:, None, :] - anchor[None, :, :])
        loglik = ckf.mvn_logpdf(resid, s_zz[None])             # (Q, J)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_mu = np.log(pd_eff * w)[None, :] + loglik
            own = tags[None, :] == np.arange(n_meas)[:, None]
            log_mu = np.where(own, np.log(w)[None, :], log_mu)
        log_mu = np.where(np.isfinite(log_mu), log_mu, -np.inf)
        per_kind[kind] = dict(counts=counts, offsets=offsets, w=w,
                              mean=mean, cov=cov, tags=tags, pd=pd,
                              log_mu=log_mu, own=own, gain=gain,
                              cov_post=cov_post, z_pred=z_pred)

    # Per-(particle, measurement) normalizer: factor out the largest term
    # (clutter, BS, or any component numerator), then sum the rest.
    with np.errstate(divide="ignore"):
        log_c = np.log(det.clutter_intensity)
    big = np.maximum(log_bs, log_c)                            # (I, Q)
    for kind in _MAP_KINDS:
        data = per_kind[kind]
        if data is None:
            continue
        seg_max = _segment_reduce(np.maximum, data["log_mu"],
                                  data["offsets"], data["counts"],
                                  -np.inf)                     # (Q, I)
        big = np.maximum(big, seg_max.T)
    finite = np.isfinite(big)
    safe_big = np.where(finite, big, 0.0)
    with np.errstate(invalid="ignore"):
        total = np.exp(log_c - safe_big) + np.exp(log_bs - safe_big)
        for kind in _MAP_KINDS:
            data = per_kind[kind]
            if data is None:
                continue
            scaled = np.exp(data["log_mu"]
                            - safe_big[np.repeat(np.arange(n_part),
                                                 data["counts"]), :].T)
            total += _segment_reduce(np.add, scaled, data["offsets"],
                                     data["counts"], 0.0).T
    log_denoms = np.where(finite, safe_big + np.log(total), -np.inf)

    # Posterior mixtures: missed-detection copies of non-births plus one
    # detection copy per (measurement, component); zero-weight copies
    # (birth misses, fully underflowed detections) are dropped immediately.
    new_parts = {}
    for kind in _MAP_KINDS:
        data = per_kind[kind]
        if data is None:
            continue
        denom_g = log_denoms[np.repeat(np.arange(n_part), data["counts"])].T
        with np.errstate(invalid="ignore"):
            w_det = np.exp(data["log_mu"] - denom_g)           # (Q, J)
        w_det = np.where(np.isfinite(w_det), w_det, 0.0)
        innov = geometry.wrap_measurement_diff(
            zs[:, None, :] - data["z_pred"][None, :, :])
        mean_det = data["mean"][None] + np.einsum(
            "jim,qjm->qji", data["gain"], innov)
        mean_det = np.where(data["own"][..., None], data["mean"][None],
                            mean_det)
        cov_det = np.where(data["own"][..., None, None],
                           data["cov"][None],
                           np.broadcast_to(data["cov_post"][None],
                                           (n_meas,) + data["cov"].shape))
        # Reorder detection copies component-major so that each particle's
        # rows are contiguous.
        new_parts[kind] = dict(
            w_det=np.ascontiguousarray(w_det.T),               # (J, Q)
            mean_det=np.ascontiguousarray(mean_det.transpose(1, 0, 2)),
            cov_det=np.ascontiguousarray(cov_det.transpose(1, 0, 2, 3)),
            w_miss=data["w"] * (1.0 - data["pd"]),
            non_birth=data["tags"] < 0, offsets=data["offsets"],
            mean=data["mean"], cov=data["cov"])

    for i, p in enumerate(particles):
        repl = {}
        for kind in _MAP_KINDS:
            if per_kind[kind] is None:
                continue
            d = new_parts[kind]
            lo, hi = d["offsets"][i], d["offsets"][i + 1]
            nb = d["non_birth"][lo:hi]
            missed = GaussianMixture(d["w_miss"][lo:hi][nb],
                                     d["mean"][lo:hi][nb],
                                     d["cov"][lo:hi][nb])
            wd = d["w_det"][lo:hi].ravel()
            keep = wd > 0.0
            detected = GaussianMixture(
                wd[keep], d["mean_det"][lo:hi].reshape(-1, 3)[keep],
                d["cov_det"][lo:hi].reshape(-1, 3, 3)[keep])
            repl[kind.value] = GaussianMixture.concat([missed, detected])
        if repl:
            p.maps = p.maps.replaced(**repl)
        p.birth_tags = {}
    return log_denoms


def update_maps(particle: Particle, zs, det: DetectionModel, noise_cov,
                x_bs):
    """GM-PHD map correction for one particle.

    Returns (particle, log_denoms) where log_denoms[q] = log W(z_q); the
    particle's VA and SP intensities are replaced by their posteriors and
    its birth tags are cleared.  The BS intensity is never modified.
    """
    log_denoms = update_maps_all([particle], zs, det, noise_cov, x_bs)
    return particle, log_denoms[0]


def update_log_weight(particle: Particle, log_denoms) -> Particle:
    """Exact set-likelihood weight update: add sum_z log W(z)."""
    particle.log_weight += float(np.sum(log_denoms))
    return particle


def normalized_weights(particles) -> np.ndarray:
    """Linear weights summing to one; raises if all are -inf."""
    lw = np.array([p.log_weight for p in particles], dtype=float)
    m = np.max(lw)
    if not np.isfinite(m):
        raise FilterDivergenceError("all particle weights vanished")
    w = np.exp(lw - m)
    return w / np.sum(w)


def estimate_state(particles, weights=None) -> np.ndarray:
    """Weighted mean state; the heading is averaged on the circle."""
    if weights is None:
        weights = normalized_weights(particles)
    states = np.stack([p.state for p in particles])
    est = np.sum(weights[:, None] * states, axis=0)
    head = states[:, IDX_HEAD]
    est[IDX_HEAD] = wrap_angle(np.arctan2(np.sum(weights * np.sin(head)),
                                          np.sum(weights * np.cos(head))))
    return est


def systematic_resample_indices(weights, rng: np.random.Generator):
    """Ancestor indices of a systematic resampling draw (one uniform)."""
    n = len(weights)
    u = (rng.uniform() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, u, side="right"), n - 1)


def normalize_and_resample(particles, rng: np.random.Generator):
    """Normalize weights and resample systematically to uniform 1/I."""
    w = normalized_weights(particles)
    idx = systematic_resample_indices(w, rng)
    log_u = -np.log(len(particles))
    return [Particle(state=particles[j].state.copy(), log_weight=log_u,
                     maps=particles[j].maps) for j in idx]


def extract_sources(va_gm: GaussianMixture, sp_gm: GaussianMixture,
                    threshold_va: float, threshold_sp: float):
    """Detected sources: component means with weight >= their threshold."""
    out = [Source(SourceType.VA, m) for m in extract_means(va_gm,
                                                           threshold_va)]
    out += [Source(SourceType.SP, m) for m in extract_means(sp_gm,
                                                            threshold_sp)]
    return out
