"""Cubature-rule moment propagation and measurement inversion.

Forward direction: propagate a Gaussian source-location component through a
measurement function with the spherical cubature rule (2d equally weighted
points) and assemble the Kalman-style update quantities.

Inverse direction: convert a measurement into a Gaussian birth candidate by
pushing 2d cubature points of the measurement distribution through an
iterative maximum-likelihood inversion of the measurement function (damped
Gauss-Newton on the weighted least-squares cost, linearized with
finite-difference Jacobians), then moment-matching the propagated points.

Everything is batched over leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, geometry
from .geometry import ANGLE_MASK, MEAS_DIM, SourceType
from .gm import symmetrize
from .motion import IDX_BIAS, IDX_HEAD

LOG_2PI = float(np.log(2.0 * np.pi))


class BirthInversionError(RuntimeError):
    """Measurement inversion failed; the caller should skip this birth."""


def cov_sqrt(cov: np.ndarray) -> np.ndarray:
    """Matrix square root G with G @ G.T = cov, batched.

    Cholesky when possible; falls back to an eigendecomposition with
    clipped eigenvalues for semi-definite inputs (including the all-zero
    covariance, which maps to G = 0).
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        vals = np.clip(vals, 0.0, None)
        return vecs * np.sqrt(vals)[..., None, :]


def cubature_points(mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """The 2d spherical cubature points of N(mean, cov), weights 1/(2d).

    Args:
        mean: (..., d).
        cov: (..., d, d).

    Returns:
        Points of shape (..., 2d, d): mean +/- sqrt(d) * (columns of G).
    """
    mean = np.asarray(mean, dtype=float)
    d = mean.shape[-1]
    g_rows = np.sqrt(d) * np.swapaxes(cov_sqrt(cov), -1, -2)
    return np.concatenate([mean[..., None, :] + g_rows,
                           mean[..., None, :] - g_rows], axis=-2)


@dataclass
class UpdateComponents:
    """Cubature update quantities for one (or a batch of) components.

    z_pred is the cubature-averaged predicted measurement; z_at_mean the
    measurement function evaluated at the prior mean (used as the wrapping
    anchor and by the detection likelihood).
    """

    z_pred: np.ndarray      # (..., m)
    z_at_mean: np.ndarray   # (..., m)
    s_zz: np.ndarray        # (..., m, m) innovation covariance, includes noise
    s_xz: np.ndarray        # (..., d, m) cross covariance
    gain: np.ndarray        # (..., d, m)
    cov_post: np.ndarray    # (..., d, d)


def update_components(mean, cov, h_fn, noise_cov,
                      angle_mask=None) -> UpdateComponents:
    """Cubature (CKF) update quantities for Gaussian components.

    Args:
        mean: prior means (..., d).
        cov: prior covariances (..., d, d).
        h_fn: measurement function mapping (..., d) -> (..., m).
        noise_cov: additive measurement noise covariance (m, m).
        angle_mask: optional boolean (m,) marking angular components; their
            spreads are unwrapped relative to the measurement at the prior
            mean before averaging, so components near the branch cut behave.

    Returns:
        UpdateComponents with S_zz = cubature spread + noise_cov,
        K = S_xz S_zz^-1 and P_post = P - K S_zz K^T.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    noise_cov = np.asarray(noise_cov, dtype=float)
    d = mean.shape[-1]

    pts = cubature_points(mean, cov)            # (..., 2d, d)
    z_pts = np.asarray(h_fn(pts), dtype=float)  # (..., 2d, m)
    z_anchor = np.asarray(h_fn(mean), dtype=float)
    if angle_mask is not None:
        anchor = z_anchor[..., None, :]
        rel = anchor + geometry.wrap_angle(z_pts - anchor)
        z_pts = np.where(angle_mask, rel, z_pts)

    z_pred = z_pts.mean(axis=-2)
    dz = z_pts - z_pred[..., None, :]
    s_zz = np.einsum("...ci,...cj->...ij", dz, dz) / (2 * d) + noise_cov
    dx = pts - mean[..., None, :]
    s_xz = np.einsum("...ci,...cj->...ij", dx, dz) / (2 * d)

    gain_t = np.linalg.solve(s_zz, np.swapaxes(s_xz, -1, -2))
    gain = np.swapaxes(gain_t, -1, -2)
    cov_post = symmetrize(cov - gain @ s_zz @ gain_t)

    if angle_mask is not None:
        z_pred = np.where(angle_mask, geometry.wrap_angle(z_pred), z_pred)
    return UpdateComponents(z_pred, z_anchor, s_zz, s_xz, gain, cov_post)


def update_components_source(mean, cov, kind: SourceType, state, x_bs,
                             noise_cov) -> UpdateComponents:
    """CKF update quantities for map components of a given source type.

    Batched over components: mean (..., 3), cov (..., 3, 3).  Raises
    GeometryError naming the offending component when the measurement
    function is degenerate at any cubature point.
    """
    upd = update_components(
        mean, cov,
        lambda pts: geometry.measure(kind, pts, state, x_bs, check=False),
        noise_cov, ANGLE_MASK)
    bad = ~(np.isfinite(upd.z_pred).all(axis=-1)
            & np.isfinite(upd.s_zz).all(axis=(-2, -1)))
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise geometry.GeometryError(
            f"degenerate {kind} geometry at component {tuple(idx)}")
    return upd


def mvn_logpdf(resid, cov) -> np.ndarray:
    """log N(resid; 0, cov), broadcasting over leading dimensions."""
    resid = np.asarray(resid, dtype=float)
    cov = np.asarray(cov, dtype=float)
    m = resid.shape[-1]
    _, logdet = np.linalg.slogdet(cov)
    sol = np.linalg.solve(cov, resid[..., None])[..., 0]
    maha = np.sum(resid * sol, axis=-1)
    return -0.5 * (m * LOG_2PI + logdet + maha)


# ---------------------------------------------------------------------------
# Inverse direction: measurement -> birth candidate
# ---------------------------------------------------------------------------

def _bearing_dir(el, az):
    el, az = np.broadcast_arrays(el, az)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


def back_project(z, state, kind: SourceType, x_bs):
    """Closed-form geometric starting point for the inversion.

    VA: walk the (bias-corrected) pseudorange from the vehicle along the
    arrival direction; the VA sits at that full path length.

    SP: the scatterer lies on the ellipse of two-leg path length
    r = pseudorange - bias with foci at the BS and the vehicle.  Both the
    vehicle-side arrival ray and the BS-side departure ray are intersected
    with the ellipse; valid intersections are averaged.

    Returns (points (..., 3), valid (...,) bool).
    """
    z = np.asarray(z, dtype=float)
    state = np.asarray(state, dtype=float)
    x_bs = np.asarray(x_bs, dtype=float)
    v = state[..., :3]
    r = z[..., geometry.IDX_RANGE] - state[..., IDX_BIAS]
    d_v = _bearing_dir(z[..., geometry.IDX_DOA_EL],
                       z[..., geometry.IDX_DOA_AZ] + state[..., IDX_HEAD])

    if kind is SourceType.VA:
        pts = v + r[..., None] * d_v
        return pts, r > 0.0

    if kind is not SourceType.SP:
        raise ValueError(f"no birth back-projection for {kind}")

    d_b = _bearing_dir(z[..., geometry.IDX_DOD_EL],
                       z[..., geometry.IDX_DOD_AZ])
    with np.errstate(divide="ignore", invalid="ignore"):
        w = v - x_bs
        t = ((r * r - np.sum(w * w, axis=-1))
             / (2.0 * (r + np.sum(w * d_v, axis=-1))))
        wb = -w
        u = ((r * r - np.sum(wb * wb, axis=-1))
             / (2.0 * (r + np.sum(wb * d_b, axis=-1))))
    ok_t = np.isfinite(t) & (t > 0.0) & (t < r)
    ok_u = np.isfinite(u) & (u > 0.0) & (u < r)
    pt_t = v + np.where(ok_t, t, 0.0)[..., None] * d_v
    pt_u = x_bs + np.where(ok_u, u, 0.0)[..., None] * d_b
    n_valid = ok_t.astype(float) + ok_u.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = (pt_t * ok_t[..., None] + pt_u * ok_u[..., None]) \
            / n_valid[..., None]
    return pts, n_valid > 0


def iterative_ml_points(z, states, kind: SourceType, x_bs, noise_cov, *,
                        damping: float = 0.2, fd_step: float = 1e-3,
                        max_iter: int = 50, rel_tol: float = 1e-3):
    """Batched damped Gauss-Newton inversion of the measurement function.

    Minimizes (h(x) - z)^T Sigma^-1 (h(x) - z) per row, starting from the
    geometric back-projection.  Each accepted iterate mixes the current
    point with the full Gauss-Newton minimizer of the linearized cost
    (finite-difference Jacobian) using the fixed factor ``damping``;
    iteration stops per row as soon as the cost would increase (the last
    non-increasing iterate is returned), when the improvement falls below
    ``rel_tol`` (relative to cost, floored at 1), or after ``max_iter``
    rounds.

    Args:
        z: measurement-space targets (B, 5).
        states: vehicle states (B, 7).
        kind: VA or SP.
        x_bs: base-station location (3,).
        noise_cov: weighting covariance Sigma (5, 5).

    Returns:
        (points (B, 3), ok (B,)): ok is False where no starting point with
        finite cost exists.
    """
    if kind is SourceType.VA:
        code = _kernels.KIND_VA
    elif kind is SourceType.SP:
        code = _kernels.KIND_SP
    else:
        raise ValueError(f"no inversion for source type {kind}")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    states = np.atleast_2d(np.asarray(states, dtype=float))
    sigma_inv = np.linalg.inv(np.asarray(noise_cov, dtype=float))

    x, ok = back_project(z, states, kind, x_bs)
    x = np.ascontiguousarray(np.where(ok[..., None], x, 0.0))
    ok = np.ascontiguousarray(ok)
    _kernels.gn_invert(code, np.ascontiguousarray(z),
                       np.ascontiguousarray(states),
                       np.ascontiguousarray(x_bs, dtype=float),
                       np.ascontiguousarray(sigma_inv), x, ok,
                       float(damping), float(fd_step), int(max_iter),
                       float(rel_tol))
    return x, ok


def iterative_ml_point(z_c, state, kind: SourceType, x_bs, noise_cov,
                       **kw) -> np.ndarray:
    """Single-row inversion; raises BirthInversionError on failure."""
    pts, ok = iterative_ml_points(np.asarray(z_c)[None, :],
                                  np.asarray(state)[None, :],
                                  kind, x_bs, noise_cov, **kw)
    if not ok[0]:
        raise BirthInversionError(
            f"no finite-cost starting point for {kind} inversion")
    return pts[0]


def invert_births_batch(zs, states, kind: SourceType, x_bs, noise_cov, *,
                        keep=None, **kw):
    """Birth candidates for a whole scan against many vehicle states.

    The 2d cubature points of N(z, noise_cov) are shared across states;
    each is inverted per (measurement, state) row and the propagated points
    moment-matched.

    Args:
        zs: measurements (Q, 5).
        states: vehicle states (I, 7).
        keep: optional (Q, I) bool; rows marked False are skipped without
            running the optimizer (returned as not ok).

    Returns:
        (means (Q, I, 3), covs (Q, I, 3, 3), ok (Q, I)); ok is False where
        any of the row's cubature points failed to invert.
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n_meas, n_state = zs.shape[0], states.shape[0]
    n_pts = 2 * MEAS_DIM

    g = cov_sqrt(noise_cov)
    delta = np.sqrt(MEAS_DIM) * np.concatenate(
        [np.eye(MEAS_DIM), -np.eye(MEAS_DIM)], axis=1)     # (5, 10)
    z_pts = zs[:, None, :] + (g @ delta).T[None]            # (Q, 10, 5)
    z_pts[..., ANGLE_MASK] = geometry.wrap_angle(z_pts[..., ANGLE_MASK])

    shape = (n_meas, n_state, n_pts)
    zz = np.broadcast_to(z_pts[:, None], shape + (5,)).reshape(-1, 5)
    ss = np.broadcast_to(states[None, :, None], shape + (7,)).reshape(-1, 7)

    pts = np.zeros((len(zz), 3))
    ok_rows = np.zeros(len(zz), dtype=bool)
    if keep is not None:
        rows = np.flatnonzero(np.repeat(np.asarray(keep).ravel(), n_pts))
    else:
        rows = np.arange(len(zz))
    if rows.size:
        p, o = iterative_ml_points(zz[rows], ss[rows], kind, x_bs,
                                   noise_cov, **kw)
        pts[rows] = p
        ok_rows[rows] = o

    pts = pts.reshape(shape + (3,))
    ok = ok_rows.reshape(shape).all(axis=-1)
    mean = pts.mean(axis=-2)
    d = pts - mean[..., None, :]
    cov = symmetrize(np.einsum("...cj,...ck->...jk", d, d) / n_pts)
    ok &= (np.isfinite(mean).all(axis=-1)
           & np.isfinite(cov).all(axis=(-2, -1)))
    return mean, cov, ok


def invert_measurement_many(z, states, kind: SourceType, x_bs, noise_cov,
                            **kw):
    """Birth mean/covariance for one measurement against many states.

    Returns (means (I, 3), covs (I, 3, 3), ok (I,)).
    """
    mean, cov, ok = invert_births_batch(np.asarray(z)[None, :], states,
                                        kind, x_bs, noise_cov, **kw)
    return mean[0], cov[0], ok[0]


def invert_measurement(z, state, kind: SourceType, x_bs, noise_cov, **kw):
    """Single-state birth inversion; raises BirthInversionError on failure."""
    mean, cov, ok = invert_measurement_many(
        z, np.asarray(state)[None, :], kind, x_bs, noise_cov, **kw)
    if not ok[0]:
        raise BirthInversionError(
            f"{kind} inversion diverged on a cubature point")
    return mean[0], cov[0]
