"""Gaussian-mixture intensity containers and mixture reduction.

A mixture here is an intensity (PHD), not a probability density: component
weights are non-negative masses and need not sum to one.  The total mass is
the expected number of sources represented by the mixture.

Mixtures are treated as immutable values throughout the package: every
operation returns a new object, so mixtures may be shared freely between
particles and threads.
"""

from __future__ import annotations

import numpy as np

from ._kernels import prune_merge_kernel
from .geometry import SourceType


class GaussianMixture:
    """Weighted Gaussian mixture over R^dim (dim defaults to 3).

    Attributes:
        w: weights, shape (J,), all >= 0.
        mean: component means, shape (J, dim).
        cov: component covariances, shape (J, dim, dim), symmetric PSD.
    """

    __slots__ = ("w", "mean", "cov")

    def __init__(self, w, mean, cov):
        self.w = np.atleast_1d(np.asarray(w, dtype=float))
        self.mean = np.atleast_2d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 2:
            cov = cov[None, :, :]
        self.cov = cov
        if not len(self.w) == len(self.mean) == len(self.cov):
            raise ValueError("weights, means and covariances disagree in "
                             "component count")

    @classmethod
    def empty(cls, dim: int = 3) -> "GaussianMixture":
        return cls(np.empty(0), np.empty((0, dim)), np.empty((0, dim, dim)))

    @classmethod
    def dirac(cls, location) -> "GaussianMixture":
        """Unit-weight degenerate component (zero covariance)."""
        loc = np.asarray(location, dtype=float)
        return cls(np.ones(1), loc[None, :], np.zeros((1, len(loc), len(loc))))

    def __len__(self) -> int:
        return len(self.w)

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    @property
    def mass(self) -> float:
        """Total intensity mass (expected source count)."""
        return float(np.sum(self.w))

    def copy(self) -> "GaussianMixture":
        return GaussianMixture(self.w.copy(), self.mean.copy(),
                               self.cov.copy())

    def scaled(self, factor: float) -> "GaussianMixture":
        return GaussianMixture(self.w * factor, self.mean, self.cov)

    @staticmethod
    def concat(parts) -> "GaussianMixture":
        parts = [p for p in parts if len(p)]
        if not parts:
            return GaussianMixture.empty()
        return GaussianMixture(
            np.concatenate([p.w for p in parts]),
            np.concatenate([p.mean for p in parts]),
            np.concatenate([p.cov for p in parts]))


def symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def mahalanobis_sq(mean_a, cov_a, point_b) -> np.ndarray:
    """Squared Mahalanobis distance of point_b from N(mean_a, cov_a).

    Broadcasts over leading dimensions; raises (numpy LinAlgError) on a
    singular covariance.
    """
    mean_a = np.asarray(mean_a, dtype=float)
    cov_a = np.asarray(cov_a, dtype=float)
    d = np.asarray(point_b, dtype=float) - mean_a
    sol = np.linalg.solve(cov_a, d[..., None])[..., 0]
    return np.sum(d * sol, axis=-1)


def prune_merge(gm: GaussianMixture, trunc_threshold: float,
                merge_threshold: float, max_components: int) -> GaussianMixture:
    """Mixture reduction: truncate, greedily merge, cap component count.

    Components with weight below ``trunc_threshold`` are discarded.  Then,
    repeatedly, the highest-weight remaining component absorbs every
    remaining component whose squared Mahalanobis distance (under its own
    covariance) to that component's mean is <= ``merge_threshold``; the
    cluster is replaced by its moment-matched Gaussian whose weight is the
    cluster's summed weight.  Finally at most ``max_components`` components
    are kept, by weight.

    Merging conserves mass exactly; truncation and the cap only remove it.
    A component with a singular covariance never joins another component's
    cluster (its gate is undefined) but still merges with itself.
    """
    if trunc_threshold < 0 or merge_threshold < 0 or max_components < 1:
        raise ValueError("invalid prune/merge parameters")
    keep = (gm.w >= trunc_threshold) & (gm.w > 0.0)
    w, mean, cov = gm.w[keep], gm.mean[keep], gm.cov[keep]
    if len(w) == 0:
        return GaussianMixture.empty(gm.dim)

    n_out, out_w, out_mean, out_cov = prune_merge_kernel(
        np.ascontiguousarray(w), np.ascontiguousarray(mean),
        np.ascontiguousarray(cov), float(merge_threshold))
    out = GaussianMixture(out_w.copy(), out_mean.copy(),
                          symmetrize(out_cov.copy()))
    if len(out) > max_components:
        order = np.argsort(-out.w, kind="stable")[:max_components]
        out = GaussianMixture(out.w[order], out.mean[order], out.cov[order])
    return out


def extract_means(gm: GaussianMixture, threshold: float) -> np.ndarray:
    """Means of components with weight >= threshold (boundary inclusive)."""
    return gm.mean[gm.w >= threshold].copy()


class TypedMap:
    """One intensity per source type.

    The BS entry is the known base station: a degenerate unit-weight
    component at the BS location.  It is set once and never modified by any
    filter operation.
    """

    __slots__ = ("maps",)

    def __init__(self, bs: GaussianMixture, va: GaussianMixture,
                 sp: GaussianMixture):
        self.maps = {SourceType.BS: bs, SourceType.VA: va, SourceType.SP: sp}

    @classmethod
    def initial(cls, x_bs) -> "TypedMap":
        return cls(GaussianMixture.dirac(x_bs), GaussianMixture.empty(),
                   GaussianMixture.empty())

    def __getitem__(self, kind: SourceType) -> GaussianMixture:
        return self.maps[kind]

    def replaced(self, **kw) -> "TypedMap":
        """New TypedMap with the given entries swapped ('va=', 'sp=')."""
        parts = {k.value: v for k, v in self.maps.items()}
        parts.update(kw)
        return TypedMap(parts["bs"], parts["va"], parts["sp"])
