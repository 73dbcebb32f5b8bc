"""Compiled inner loops (numba) for the hottest per-row computations.

These kernels mirror the formulas of :mod:`mmwslam.geometry` exactly; a
regression test pins the scalar measurement functions here against the
vectorized reference implementation.  Everything is single-threaded and
IEEE-strict (no fastmath), so results are deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import config as _numba_config
from numba import njit, prange

# Row-parallel kernels only; OpenMP avoids the noisy TBB version probe.
_numba_config.THREADING_LAYER = "omp"

KIND_VA = 1
KIND_SP = 2

_PI = np.pi
_TWO_PI = 2.0 * np.pi


@njit(cache=True)
def _wrap(a):
    return _PI - np.mod(_PI - a, _TWO_PI)


@njit(cache=True)
def _h_point(kind, x, v, alpha, bias, bs, out):
    """Noise-free channel parameters for one VA/SP location (no wrapping).

    Angle components are consumed through wrapped differences only, so the
    principal-value wrap of the reference implementation is unnecessary
    here.  Returns False on degenerate geometry (non-finite output).
    """
    dx = x[0] - v[0]
    dy = x[1] - v[1]
    dz = x[2] - v[2]
    d_v = np.sqrt(dx * dx + dy * dy + dz * dz)
    if d_v <= 0.0:
        return False
    doa_el = np.arcsin(min(1.0, max(-1.0, dz / d_v)))
    doa_az = np.arctan2(dy, dx) - alpha

    if kind == KIND_VA:
        rng = d_v + bias
        # incidence point of the specular reflection
        ux = bs[0] - x[0]
        uy = bs[1] - x[1]
        uz = bs[2] - x[2]
        un = np.sqrt(ux * ux + uy * uy + uz * uz)
        if un <= 0.0:
            return False
        ux /= un
        uy /= un
        uz /= un
        fx = 0.5 * (bs[0] + x[0]) - x[0]
        fy = 0.5 * (bs[1] + x[1]) - x[1]
        fz = 0.5 * (bs[2] + x[2]) - x[2]
        num = fx * ux + fy * uy + fz * uz
        den = ((v[0] - x[0]) * ux + (v[1] - x[1]) * uy
               + (v[2] - x[2]) * uz)
        if den == 0.0:
            return False
        t = num / den
        sx = x[0] + t * (v[0] - x[0])
        sy = x[1] + t * (v[1] - x[1])
        sz = x[2] + t * (v[2] - x[2])
        bx = sx - bs[0]
        by = sy - bs[1]
        bz = sz - bs[2]
        d_b = np.sqrt(bx * bx + by * by + bz * bz)
        if d_b <= 0.0:
            return False
        dod_el = np.arcsin(min(1.0, max(-1.0, bz / d_b)))
        dod_az = np.arctan2(sy, sx)
    else:
        bx = x[0] - bs[0]
        by = x[1] - bs[1]
        bz = x[2] - bs[2]
        d_b = np.sqrt(bx * bx + by * by + bz * bz)
        if d_b <= 0.0:
            return False
        rng = d_b + d_v + bias
        dod_el = np.arcsin(min(1.0, max(-1.0, bz / d_b)))
        dod_az = np.arctan2(x[1], x[0])

    out[0] = rng
    out[1] = doa_el
    out[2] = doa_az
    out[3] = dod_el
    out[4] = dod_az
    return (np.isfinite(rng) and np.isfinite(doa_el)
            and np.isfinite(doa_az) and np.isfinite(dod_el)
            and np.isfinite(dod_az))


@njit(cache=True)
def _resid_cost(kind, x, v, alpha, bias, bs, z, sigma_inv, diag_only,
                h_buf, r_buf):
    """Wrapped residual h(x) - z and its weighted quadratic cost."""
    if not _h_point(kind, x, v, alpha, bias, bs, h_buf):
        return np.inf
    r_buf[0] = h_buf[0] - z[0]
    for a in range(1, 5):
        r_buf[a] = _wrap(h_buf[a] - z[a])
    cost = 0.0
    if diag_only:
        for a in range(5):
            cost += r_buf[a] * sigma_inv[a, a] * r_buf[a]
    else:
        for a in range(5):
            s = 0.0
            for b in range(5):
                s += sigma_inv[a, b] * r_buf[b]
            cost += r_buf[a] * s
    return cost


@njit(cache=True)
def _solve3(a, b, out):
    """3x3 linear solve by Gaussian elimination with partial pivoting."""
    m = np.empty((3, 4))
    for i in range(3):
        for j in range(3):
            m[i, j] = a[i, j]
        m[i, 3] = b[i]
    for col in range(3):
        piv = col
        big = abs(m[col, col])
        for i in range(col + 1, 3):
            if abs(m[i, col]) > big:
                big = abs(m[i, col])
                piv = i
        if big == 0.0 or not np.isfinite(big):
            return False
        if piv != col:
            for j in range(4):
                tmp = m[col, j]
                m[col, j] = m[piv, j]
                m[piv, j] = tmp
        for i in range(col + 1, 3):
            f = m[i, col] / m[col, col]
            for j in range(col, 4):
                m[i, j] -= f * m[col, j]
    for i in range(2, -1, -1):
        s = m[i, 3]
        for j in range(i + 1, 3):
            s -= m[i, j] * out[j]
        out[i] = s / m[i, i]
    return np.isfinite(out[0]) and np.isfinite(out[1]) \
        and np.isfinite(out[2])


@njit(cache=True, parallel=True)
def gn_invert(kind, zz, ss, x_bs, sigma_inv, x, ok, damping, fd_step,
              max_iter, rel_tol):
    """Damped Gauss-Newton inversion, one row at a time (in place).

    x holds the starting points on entry and the solutions on exit; rows
    with ok == False are skipped.  Per row the iteration accepts candidates
    while the cost is non-increasing, stopping on a cost increase (the last
    non-increasing iterate is kept), on improvement below rel_tol (relative
    to cost, floored at 1), or at max_iter.  Rows are independent, so the
    parallel schedule cannot change the results.
    """
    n = zz.shape[0]
    diag_only = True
    for a in range(5):
        for b in range(5):
            if a != b and sigma_inv[a, b] != 0.0:
                diag_only = False

    for row in prange(n):
        if not ok[row]:
            continue
        h_buf = np.empty(5)
        r_buf = np.empty(5)
        h_p = np.empty(5)
        h_m = np.empty(5)
        jac = np.empty((5, 3))
        resid = np.empty(5)
        sjac = np.empty((5, 3))
        normal = np.empty((3, 3))
        rhs = np.empty(3)
        step = np.empty(3)
        xc = np.empty(3)
        xp = np.empty(3)

        z = zz[row]
        v = ss[row, :3]
        alpha = ss[row, 3]
        bias = ss[row, 6]
        xr = x[row]

        cost = _resid_cost(kind, xr, v, alpha, bias, x_bs, z, sigma_inv,
                           diag_only, h_buf, r_buf)
        if not np.isfinite(cost):
            ok[row] = False
            continue
        for a in range(5):
            resid[a] = r_buf[a]

        for _ in range(max_iter):
            # finite-difference Jacobian, wrapped angle rows
            fine = True
            for c in range(3):
                for a in range(3):
                    xp[a] = xr[a]
                xp[c] = xr[c] + fd_step
                if not _h_point(kind, xp, v, alpha, bias, x_bs, h_p):
                    fine = False
                    break
                xp[c] = xr[c] - fd_step
                if not _h_point(kind, xp, v, alpha, bias, x_bs, h_m):
                    fine = False
                    break
                jac[0, c] = (h_p[0] - h_m[0]) / (2.0 * fd_step)
                for a in range(1, 5):
                    jac[a, c] = _wrap(h_p[a] - h_m[a]) / (2.0 * fd_step)
            if not fine:
                break

            # normal equations H^T Sigma^-1 H d = -H^T Sigma^-1 r
            if diag_only:
                for a in range(5):
                    for i in range(3):
                        sjac[a, i] = sigma_inv[a, a] * jac[a, i]
            else:
                for a in range(5):
                    for i in range(3):
                        s = 0.0
                        for b in range(5):
                            s += sigma_inv[a, b] * jac[b, i]
                        sjac[a, i] = s
            for i in range(3):
                for j in range(3):
                    s = 0.0
                    for a in range(5):
                        s += jac[a, i] * sjac[a, j]
                    normal[i, j] = s
                s = 0.0
                for a in range(5):
                    s += sjac[a, i] * resid[a]
                rhs[i] = -s
            ridge = 1e-10 * (normal[0, 0] + normal[1, 1]
                             + normal[2, 2]) / 3.0 + 1e-300
            for i in range(3):
                normal[i, i] += ridge
            if not _solve3(normal, rhs, step):
                break

            for a in range(3):
                xc[a] = xr[a] + damping * step[a]
            c_new = _resid_cost(kind, xc, v, alpha, bias, x_bs, z,
                                sigma_inv, diag_only, h_buf, r_buf)
            if not (c_new <= cost):
                break
            for a in range(3):
                xr[a] = xc[a]
            for a in range(5):
                resid[a] = r_buf[a]
            improvement = cost - c_new
            cost = c_new
            if improvement <= rel_tol * max(cost, 1.0):
                break
    return x, ok


@njit(cache=True)
def prune_merge_kernel(w, mean, cov, merge_threshold):
    """Greedy moment-matched merging of mixture components.

    Repeatedly absorbs into the highest-weight remaining component every
    remaining component within merge_threshold squared Mahalanobis distance
    of its mean (each candidate measured under its own covariance).
    Returns (count, weights, means, covariances) with the merged clusters
    in extraction order.
    """
    n = len(w)
    alive = np.ones(n, dtype=np.bool_)
    members = np.empty(n, dtype=np.int64)
    out_w = np.empty(n)
    out_mean = np.empty((n, 3))
    out_cov = np.empty((n, 3, 3))
    sol = np.empty(3)
    diff = np.empty(3)
    n_out = 0
    n_left = n

    while n_left > 0:
        best = -1
        best_w = -1.0
        for i in range(n):
            if alive[i] and w[i] > best_w:
                best_w = w[i]
                best = i

        n_members = 0
        tot = 0.0
        for a in range(3):
            out_mean[n_out, a] = 0.0
        for i in range(n):
            if not alive[i]:
                continue
            if i == best:
                d2 = 0.0
            else:
                for a in range(3):
                    diff[a] = mean[i, a] - mean[best, a]
                if _solve3(cov[i], diff, sol):
                    d2 = (diff[0] * sol[0] + diff[1] * sol[1]
                          + diff[2] * sol[2])
                else:
                    d2 = np.inf
            if d2 <= merge_threshold:
                alive[i] = False
                n_left -= 1
                members[n_members] = i
                n_members += 1
                tot += w[i]
                for a in range(3):
                    out_mean[n_out, a] += w[i] * mean[i, a]
        for a in range(3):
            out_mean[n_out, a] /= tot

        for a in range(3):
            for b in range(3):
                out_cov[n_out, a, b] = 0.0
        for t in range(n_members):
            i = members[t]
            for a in range(3):
                diff[a] = mean[i, a] - out_mean[n_out, a]
            for a in range(3):
                for b in range(3):
                    out_cov[n_out, a, b] += w[i] * (cov[i, a, b]
                                                    + diff[a] * diff[b])
        for a in range(3):
            for b in range(3):
                out_cov[n_out, a, b] /= tot
        out_w[n_out] = tot
        n_out += 1
    return n_out, out_w[:n_out], out_mean[:n_out], out_cov[:n_out]
