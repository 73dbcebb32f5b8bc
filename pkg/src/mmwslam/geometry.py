"""Noise-free channel-parameter measurement functions.

A radio source is one of three kinds: the base station itself (LOS path),
a virtual anchor (VA, the mirror image of the BS behind a reflecting
surface, parameterizing a specular path) or a scattering point (SP, a small
object producing a single-bounce path).

A measurement is a 5-vector in the fixed ordering

    [pseudorange, doa_el, doa_az, dod_el, dod_az]

with the pseudorange in meters (geometric path length plus the receiver
clock bias, i.e. delay times the speed of light) and all angles in rad,
wrapped to (-pi, pi].  The DOA (direction of arrival) is expressed in the
vehicle frame, so its azimuth subtracts the vehicle heading; the DOD
(direction of departure) is expressed in the global frame.  DOD azimuths
are referenced to the global origin; scenarios place the BS on the z-axis,
which makes them the departure azimuths seen from the BS.

Every function broadcasts over leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .motion import IDX_BIAS, IDX_HEAD, wrap_angle

MEAS_DIM = 5
IDX_RANGE, IDX_DOA_EL, IDX_DOA_AZ, IDX_DOD_EL, IDX_DOD_AZ = range(MEAS_DIM)
# Boolean mask of the angular measurement components (everything but range).
ANGLE_MASK = np.array([False, True, True, True, True])

_EPS = 1e-12


class GeometryError(ValueError):
    """Degenerate source/vehicle geometry (e.g. vehicle on the VA plane)."""


class SourceType(Enum):
    BS = "bs"
    VA = "va"
    SP = "sp"


@dataclass(frozen=True)
class Source:
    """A typed radio source with a 3-D location."""

    kind: SourceType
    location: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=float)
        if loc.shape != (3,) or not np.all(np.isfinite(loc)):
            raise ValueError("source location must be a finite 3-vector")
        object.__setattr__(self, "location", loc)


def wrap_measurement_diff(diff: np.ndarray) -> np.ndarray:
    """Wrap the angle components of a measurement-space difference."""
    diff = np.asarray(diff, dtype=float).copy()
    diff[..., ANGLE_MASK] = wrap_angle(diff[..., ANGLE_MASK])
    return diff


def _norm(v):
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def incidence_point(va, bs, v, *, check: bool = True) -> np.ndarray:
    """Specular-reflection incidence point on the surface behind a VA.

    The reflecting plane passes through f = (bs + va) / 2 with unit normal
    u = (bs - va) / ||bs - va||; the incidence point is where the segment
    from the VA to the vehicle crosses that plane.

    Raises GeometryError when the VA-to-vehicle line is parallel to the
    plane (zero denominator).  With ``check=False`` degenerate rows come
    back as non-finite values instead, for batched callers that mask.
    """
    va = np.asarray(va, dtype=float)
    bs = np.asarray(bs, dtype=float)
    v = np.asarray(v, dtype=float)
    u = bs - va
    u_norm = _norm(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = u / u_norm[..., None]
        f = 0.5 * (bs + va)
        num = np.sum((f - va) * u, axis=-1)
        den = np.sum((v - va) * u, axis=-1)
        xs = va + (num / den)[..., None] * (v - va)
    if check:
        bad = ~np.isfinite(xs).all(axis=-1)
        if np.any(bad):
            raise GeometryError(
                "degenerate VA geometry: vehicle-to-VA line parallel to the "
                "reflecting plane (or VA coincides with the BS)")
    return xs


def va_from_incidence(xs, bs, v, *, check: bool = True) -> np.ndarray:
    """VA location from an incidence point: inverse of ``incidence_point``.

    The VA lies beyond the incidence point, at the full two-leg path length
    from the vehicle along the vehicle-to-incidence direction.
    """
    xs = np.asarray(xs, dtype=float)
    bs = np.asarray(bs, dtype=float)
    v = np.asarray(v, dtype=float)
    d_vx = _norm(v - xs)
    d_bx = _norm(bs - xs)
    with np.errstate(divide="ignore", invalid="ignore"):
        va = v + ((d_vx + d_bx) / d_vx)[..., None] * (xs - v)
    if check:
        bad = ~np.isfinite(va).all(axis=-1)
        if np.any(bad):
            raise GeometryError("incidence point coincides with the vehicle")
    return va


def _arcsin_ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    return np.arcsin(np.clip(r, -1.0, 1.0))


def measure(kind: SourceType, source, state, x_bs, *,
            check: bool = True) -> np.ndarray:
    """Noise-free channel parameters of one propagation path.

    Args:
        kind: source type of the path.
        source: source location(s), shape (..., 3).  For ``SourceType.BS``
            this is the BS location itself.
        state: vehicle state(s), shape (..., 7).
        x_bs: base-station location (3,), used by VA/SP paths.
        check: raise GeometryError on degenerate geometry instead of
            returning non-finite rows.

    Returns:
        Measurement array (..., 5) in the module's fixed ordering, angles
        wrapped to (-pi, pi].
    """
    src = np.asarray(source, dtype=float)
    state = np.asarray(state, dtype=float)
    x_bs = np.asarray(x_bs, dtype=float)
    v = state[..., :3]
    alpha = state[..., IDX_HEAD]
    bias = state[..., IDX_BIAS]

    with np.errstate(divide="ignore", invalid="ignore"):
        if kind is SourceType.BS:
            d = _norm(src - v)
            rng = d + bias
            doa_el = _arcsin_ratio(src[..., 2] - v[..., 2], d)
            doa_az = np.pi + np.arctan2(v[..., 1], v[..., 0]) - alpha
            dod_el = _arcsin_ratio(v[..., 2] - src[..., 2], d)
            dod_az = np.arctan2(v[..., 1], v[..., 0])
        elif kind is SourceType.VA:
            d = _norm(src - v)
            rng = d + bias
            doa_el = _arcsin_ratio(src[..., 2] - v[..., 2], d)
            doa_az = np.arctan2(src[..., 1] - v[..., 1],
                                src[..., 0] - v[..., 0]) - alpha
            xs = incidence_point(src, x_bs, v, check=False)
            dod_el = _arcsin_ratio(xs[..., 2] - x_bs[..., 2],
                                   _norm(xs - x_bs))
            dod_az = np.arctan2(xs[..., 1], xs[..., 0])
        elif kind is SourceType.SP:
            d_v = _norm(src - v)
            d_b = _norm(src - x_bs)
            rng = d_b + d_v + bias
            doa_el = _arcsin_ratio(src[..., 2] - v[..., 2], d_v)
            doa_az = np.arctan2(src[..., 1] - v[..., 1],
                                src[..., 0] - v[..., 0]) - alpha
            dod_el = _arcsin_ratio(src[..., 2] - x_bs[..., 2], d_b)
            dod_az = np.arctan2(src[..., 1], src[..., 0])
        else:
            raise ValueError(f"unknown source type: {kind!r}")

    shape = np.broadcast_shapes(rng.shape, doa_el.shape, doa_az.shape,
                                dod_el.shape, dod_az.shape)
    out = np.empty(shape + (MEAS_DIM,))
    out[..., IDX_RANGE] = rng
    out[..., IDX_DOA_EL] = doa_el
    out[..., IDX_DOA_AZ] = doa_az
    out[..., IDX_DOD_EL] = dod_el
    out[..., IDX_DOD_AZ] = dod_az
    out[..., ANGLE_MASK] = wrap_angle(out[..., ANGLE_MASK])
    if check and not np.all(np.isfinite(out)):
        raise GeometryError(f"degenerate geometry for {kind} measurement")
    return out


def measure_source(source: Source, state, x_bs=None, **kw) -> np.ndarray:
    """Convenience wrapper taking a typed Source."""
    if x_bs is None:
        if source.kind is not SourceType.BS:
            raise ValueError("x_bs required for VA/SP sources")
        x_bs = source.location
    return measure(source.kind, source.location, state, x_bs, **kw)


def jacobian(source_loc, state, kind: SourceType, x_bs, *,
             step: float = 1e-3, check: bool = True) -> np.ndarray:
    """Measurement Jacobian w.r.t. the source location, (..., 5, 3).

    Central finite differences with the given step (meters); angle rows are
    wrapped before dividing, so the derivative is insensitive to branch
    cuts.
    """
    src = np.asarray(source_loc, dtype=float)
    cols = []
    for c in range(3):
        e = np.zeros(3)
        e[c] = step
        hp = measure(kind, src + e, state, x_bs, check=False)
        hm = measure(kind, src - e, state, x_bs, check=False)
        cols.append(wrap_measurement_diff(hp - hm) / (2.0 * step))
    jac = np.stack(cols, axis=-1)
    if check and not np.all(np.isfinite(jac)):
        raise GeometryError(f"degenerate geometry for {kind} jacobian")
    return jac
