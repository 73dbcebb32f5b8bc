"""Independent reference implementations used to pin expected values.

Nothing here reuses the update/metric code paths under test: the GOSPA
oracle enumerates assignment sets, the resampling oracle counts strata in
closed form, and the set-likelihood oracle evaluates the multi-object
measurement integral by brute-force Monte Carlo over map realizations.
"""

import itertools
import math

import numpy as np

from mmwslam import ckf, geometry
from mmwslam.geometry import SourceType


def gospa_bruteforce(truth, est, cutoff, alpha, power):
    """Reference GOSPA: minimum over all partial injective assignments.

    Cost of an assignment set A: sum of d^p over assigned pairs plus
    (c^p / alpha) per unassigned element on either side, all to the 1/p.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 3)
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    n, m = len(truth), len(est)
    miss = cutoff ** power / alpha
    best = math.inf
    for k in range(min(n, m) + 1):
        for t_sel in itertools.combinations(range(n), k):
            for e_sel in itertools.permutations(range(m), k):
                cost = miss * (n + m - 2 * k)
                for i, j in zip(t_sel, e_sel):
                    cost += np.linalg.norm(truth[i] - est[j]) ** power
                best = min(best, cost)
    return best ** (1.0 / power)


def systematic_counts(weights, u0):
    """Per-ancestor copy counts of systematic resampling, closed form.

    With strata u_i = (u0 + i) / N, ancestor j receives
    ceil(N * cum_j - u0) - ceil(N * cum_{j-1} - u0) copies.
    """
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    cum = np.concatenate([[0.0], np.cumsum(weights)])
    cum[-1] = 1.0
    below = np.ceil(n * cum - u0)
    below = np.clip(below, 0, n)
    return np.diff(below).astype(int)


def sp_range_gradient(sp, bs, v):
    """Analytic gradient of the two-leg SP pseudorange w.r.t. the SP."""
    sp, bs, v = (np.asarray(a, dtype=float) for a in (sp, bs, v))
    return (sp - bs) / np.linalg.norm(sp - bs) \
        + (sp - v) / np.linalg.norm(sp - v)


def linear_kalman_update(mean, cov, a_mat, offset, noise_cov):
    """Exact Kalman update quantities for h(x) = A x + b."""
    z_pred = a_mat @ mean + offset
    s = a_mat @ cov @ a_mat.T + noise_cov
    s_xz = cov @ a_mat.T
    gain = s_xz @ np.linalg.inv(s)
    cov_post = cov - gain @ s @ gain.T
    return z_pred, s, s_xz, gain, cov_post


class SetLikelihoodOracle:
    """Brute-force Monte-Carlo evaluation of the set-measurement integral.

    Estimates I = integral of f(Z | X, s) f(X) dX over map realizations X
    drawn from the Poisson point process whose intensity is the union of
    the per-type map intensities (the known base station enters as a
    unit-mass degenerate component).  f(Z | X, s) is the point-object
    model: each object of type m at x is detected with probability
    p_D(x, m) producing one measurement with density N(z; h(x, m), Sigma)
    (angle residuals wrapped), plus Poisson clutter with uniform intensity
    c(z) and total rate lambda_c.

    Supports measurement sets of size 0, 1 or 2 (the association sum is
    expanded in closed form per realization).
    """

    def __init__(self, maps, vehicle_state, x_bs, det, noise_cov):
        self.entries = []      # (kind, weight, mean, cov_or_None)
        self.entries.append((SourceType.BS, 1.0,
                             np.asarray(x_bs, dtype=float), None))
        for kind in (SourceType.VA, SourceType.SP):
            gm = maps[kind]
            for j in range(len(gm)):
                self.entries.append((kind, float(gm.w[j]), gm.mean[j],
                                     gm.cov[j]))
        self.state = np.asarray(vehicle_state, dtype=float)
        self.x_bs = np.asarray(x_bs, dtype=float)
        self.det = det
        self.noise_cov = np.asarray(noise_cov, dtype=float)
        self.total_mass = sum(e[1] for e in self.entries)

    def detectable_mass(self):
        """integral of p_D(x) D(x) dx, exact for components that sit
        entirely inside or outside the SP field of view."""
        vpos = self.state[:3]
        total = 0.0
        for kind, w, mean, cov in self.entries:
            pd = float(self.det.pd_source(kind, mean, vpos))
            total += pd * w
        return total

    def estimate(self, zs, n_samples, rng):
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        n_z = zs.shape[0]
        if n_z > 2:
            raise ValueError("oracle supports at most two measurements")
        lam_c = self.det.clutter_rate
        c_val = self.det.clutter_intensity
        vpos = self.state[:3]

        # Draw all objects of all realizations at once.
        weights = np.array([e[1] for e in self.entries])
        probs = weights / weights.sum()
        counts = rng.poisson(self.total_mass, size=n_samples)
        total_objs = int(counts.sum())
        sample_idx = np.repeat(np.arange(n_samples), counts)
        comp_idx = rng.choice(len(self.entries), size=total_objs, p=probs)
        xs = np.empty((total_objs, 3))
        kinds = np.empty(total_objs, dtype=int)
        kind_code = {SourceType.BS: 0, SourceType.VA: 1, SourceType.SP: 2}
        for ci, (kind, _w, mean, cov) in enumerate(self.entries):
            rows = np.flatnonzero(comp_idx == ci)
            if rows.size == 0:
                continue
            if cov is None:
                xs[rows] = mean
            else:
                xs[rows] = rng.multivariate_normal(mean, cov,
                                                   size=rows.size)
            kinds[rows] = kind_code[kind]

        # Per-object detection probability and measurement likelihoods.
        pd = np.empty(total_objs)
        loglik = np.full((n_z, total_objs), -np.inf)
        for kind in (SourceType.BS, SourceType.VA, SourceType.SP):
            rows = np.flatnonzero(kinds == kind_code[kind])
            if rows.size == 0:
                continue
            pd[rows] = self.det.pd_source(kind, xs[rows], vpos)
            h = geometry.measure(kind, xs[rows], self.state, self.x_bs,
                                 check=False)
            for q in range(n_z):
                resid = geometry.wrap_measurement_diff(zs[q] - h)
                ll = ckf.mvn_logpdf(resid, self.noise_cov)
                loglik[q, rows] = np.where(np.isfinite(ll), ll, -np.inf)

        one_minus = 1.0 - pd
        log_miss = np.log(one_minus)           # pd < 1 by construction
        with np.errstate(divide="ignore"):
            r = np.exp(np.log(pd)[None, :] + loglik - log_miss[None, :])
        r = np.where(np.isfinite(r), r, 0.0)

        miss_prod = np.exp(np.bincount(sample_idx, weights=log_miss,
                                       minlength=n_samples))
        s_sum = np.stack([np.bincount(sample_idx, weights=r[q],
                                      minlength=n_samples)
                          for q in range(n_z)]) if n_z else np.zeros((0,))

        if n_z == 0:
            assoc = np.ones(n_samples)
        elif n_z == 1:
            assoc = c_val + s_sum[0]
        else:
            cross = np.bincount(sample_idx, weights=r[0] * r[1],
                                minlength=n_samples)
            assoc = (c_val * c_val + c_val * (s_sum[0] + s_sum[1])
                     + s_sum[0] * s_sum[1] - cross)
        vals = math.exp(-lam_c) * miss_prod * assoc
        return float(np.mean(vals)), float(np.std(vals)
                                           / math.sqrt(n_samples))
