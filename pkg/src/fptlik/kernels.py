"""Vectorized evaluation of the single-stage density series.

The closed-form densities of drifting Brownian motion between two linear
absorbing boundaries are image-method series whose terms are signed Gaussians
on a lattice.  Two numerically complementary summation routes are used:

* direct: sum lattice terms in increasing image order, each term assembled as
  a single exponent (prefactor folded in) and exponentiated once.  Terms decay
  like exp(-A j^2) with A = 2c * gap(t) / t in canonical units.
* dual: Poisson resummation of the same lattice sum, with terms decaying like
  exp(-pi^2 m^2 / A).  It converges fast exactly where the direct sum
  degenerates (gap closing relative to elapsed time), and avoids the
  catastrophic cancellation the direct sum suffers there.

The switch at A = pi makes the worst case for either route a handful of
terms.  Everything here operates elementwise on broadcast float64 arrays in
*canonical* coordinates: start at the origin, unit diffusion.  Callers do the
shift/scale substitutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))
_PI2 = float(np.pi**2)
_EXP_UNDERFLOW = -745.0  # exp() underflows to exact 0 below this
# Pure numerical guard against the t -> 0 singularity of the series; with
# log-assembled terms the densities are finite and accurate down to here.
T_MIN = 1e-12


class NonConvergedSeries(RuntimeError):
    """Series did not satisfy the stopping rule within max_terms."""


@dataclass(frozen=True)
class SeriesControl:
    """Truncation control for the image series.

    The direct sum stops once term magnitudes fall below
    rel_tol * |partial sum| for two consecutive terms (two in a row guards
    the alternating sign structure); abs_tol is an absolute floor so regions
    of zero density converge immediately.
    """

    rel_tol: float = 1e-12
    abs_tol: float = 1e-300
    max_terms: int = 64

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_terms < 2:
            raise ValueError("max_terms must be at least 2")


DEFAULT_SERIES = SeriesControl()


def _exp_safe(e):
    """exp with hard underflow to 0 and clipped overflow."""
    e = np.asarray(e)
    return np.where(e > _EXP_UNDERFLOW, np.exp(np.minimum(e, 709.0)), 0.0)


def _clamp_nonnegative(values, scale, ctl: SeriesControl, what: str):
    """Clamp truncation noise in (-rel_tol*scale, 0) to 0; reject worse."""
    floor = -ctl.rel_tol * np.maximum(scale, 1.0e-280)
    if np.any(values < floor):
        worst = float(np.min(values / np.maximum(scale, 1e-280)))
        raise NonConvergedSeries(
            f"{what}: negative value beyond truncation noise ({worst:.3e} of term scale)"
        )
    return np.where(values < 0.0, 0.0, values)


# Dual-sum length: in the dual branch A < pi, so exp(-pi^2 (m^2-1)/A) decays
# at least like exp(-pi (m^2-1)); 5 terms reach ~1e-32.
def _dual_m_count(rel_tol: float) -> int:
    target = max(-np.log(max(rel_tol, 1e-300)), 1.0)
    return max(int(np.ceil(np.sqrt(target / np.pi))) + 1, 2)


def fptd_series_canonical(t, mu, a1, b1, a2, b2, boundary, ctl: SeriesControl = DEFAULT_SERIES):
    """FPTD of canonical Brownian motion with drift between linear boundaries.

    Boundaries u(t) = a1 + b1*t and l(t) = a2 + b2*t with a2 < 0 < a1, start
    at the origin, unit diffusion.  `boundary` is +1 for the upper FPTD, -1
    for the lower.  All arguments broadcast elementwise; the gap c = a1 - a2
    and slopes may vary per element.  No horizon indicator is applied here.

    Returns values >= 0 (truncation noise clamped to 0).
    """
    t, mu, a1, b1, a2, b2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (t, mu, a1, b1, a2, b2))
    )
    shape = t.shape
    t = t.reshape(-1)
    mu = mu.reshape(-1)
    a1 = a1.reshape(-1)
    b1 = b1.reshape(-1)
    a2 = a2.reshape(-1)
    b2 = b2.reshape(-1)
    if np.any(a2 >= 0.0) or np.any(a1 <= 0.0):
        raise ValueError("canonical form requires a2 < 0 < a1 at every point")

    c = a1 - a2
    b = 0.5 * (b2 - b1)
    abar = 0.5 * (a1 + a2)
    if boundary == 1:
        delta = mu - b1
        edge = a1  # alpha_0; the image lattice is {2kc + a1}
        pref = -(b / c) * a1 * a1 + a1 * delta
        sgn = 1.0
    elif boundary == -1:
        delta = -mu + b2
        edge = -a2
        pref = -(b / c) * a2 * a2 - a2 * delta
        sgn = -1.0
    else:
        raise ValueError("boundary must be +1 (upper) or -1 (lower)")

    out = np.zeros(t.shape)
    ok = t >= T_MIN
    with np.errstate(divide="ignore"):
        p = np.where(ok, 1.0 / (2.0 * np.maximum(t, T_MIN)) - b / c, np.inf)
    ok &= p > 0.0  # p <= 0 only at/after full collapse, where no mass remains
    if np.any(ok):
        idx = np.nonzero(ok)[0]
        pv = p[idx]
        cv = c[idx]
        prefv = (
            pref[idx]
            - 0.5 * delta[idx] * delta[idx] * t[idx]
            - 0.5 * (_LOG_2PI + 3.0 * np.log(t[idx]))
        )
        a_eff = 4.0 * pv * cv * cv
        res = np.zeros(idx.shape)
        scale = np.zeros(idx.shape)

        direct = a_eff >= np.pi
        if np.any(direct):
            res[direct], scale[direct] = _fptd_direct(
                prefv[direct], pv[direct], cv[direct], sgn * abar[idx][direct], ctl
            )
        dual = ~direct
        if np.any(dual):
            res[dual], scale[dual] = _fptd_dual(
                prefv[dual], pv[dual], cv[dual], edge[idx][dual], a_eff[dual], ctl
            )
        out[idx] = _clamp_nonnegative(res, scale, ctl, "first-passage series")
    return out.reshape(shape) if shape else float(out[0])


def _fptd_direct(pref, p, c, abar_signed, ctl):
    """Paper-order alternating sum ((-1)^j alpha_j exp(...)) with stopping rule."""
    s = np.zeros(p.shape)
    peak = np.zeros(p.shape)
    below = np.zeros(p.shape, dtype=np.int64)
    j = 0
    while True:
        alpha = (j + 0.5) * c + (-1) ** j * abar_signed
        with np.errstate(divide="ignore"):
            term = _exp_safe(pref + np.log(alpha) - p * alpha * alpha)
        s = s + ((-1) ** j) * term
        peak = np.maximum(peak, term)
        small = term <= np.maximum(ctl.rel_tol * np.abs(s), ctl.abs_tol)
        below = np.where(small, below + 1, 0)
        j += 1
        if j >= 2 and bool(np.all(below >= 2)):
            return s, peak
        if j >= ctl.max_terms:
            raise NonConvergedSeries(
                f"first-passage series: {int(np.sum(below < 2))} points unconverged "
                f"after {ctl.max_terms} terms"
            )


def _fptd_dual(pref, p, c, edge, a_eff, ctl):
    """Poisson resummation: (pi^1.5 / (2 p^1.5 c^2)) sum_m m e^{-pi^2 m^2/A} sin(pi m edge/c)."""
    n_m = _dual_m_count(ctl.rel_tol)
    mvec = np.arange(1.0, n_m + 1.0)
    decay = np.exp(-_PI2 * (mvec[None, :] ** 2 - 1.0) / a_eff[:, None])
    trig = np.sin(np.pi * mvec[None, :] * (edge / c)[:, None])
    ssum = np.sum(mvec[None, :] * decay * trig, axis=1)
    envelope = np.sum(mvec[None, :] * decay, axis=1)
    ln_mag = (
        pref + 1.5 * np.log(np.pi) - np.log(2.0) - 1.5 * np.log(p) - 2.0 * np.log(c) - _PI2 / a_eff
    )
    mag = _exp_safe(ln_mag)
    return mag * ssum, mag * envelope


def npd_series_canonical(x, T, mu, a1, b1, a2, b2, ctl: SeriesControl = DEFAULT_SERIES):
    """Non-passage density at the vertical boundary t = T, canonical form.

    The support indicator on (l(T), u(T)) is applied.  All arguments
    broadcast elementwise; T may vary per element.
    """
    x, T, mu, a1, b1, a2, b2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (x, T, mu, a1, b1, a2, b2))
    )
    shape = x.shape
    x = x.reshape(-1)
    T = T.reshape(-1)
    mu = mu.reshape(-1)
    a1 = a1.reshape(-1)
    b1 = b1.reshape(-1)
    a2 = a2.reshape(-1)
    b2 = b2.reshape(-1)
    if np.any(a2 >= 0.0) or np.any(a1 <= 0.0):
        raise ValueError("canonical form requires a2 < 0 < a1 at every point")
    if np.any(T <= 0.0):
        raise ValueError("horizon T must be positive")

    out = np.zeros(x.shape)
    inside = (x > a2 + b2 * T) & (x < a1 + b1 * T)
    if np.any(inside):
        idx = np.nonzero(inside)[0]
        res, scale = _npd_at(
            x[idx], T[idx], mu[idx], a1[idx], b1[idx], a2[idx], b2[idx], ctl
        )
        out[idx] = _clamp_nonnegative(res, scale, ctl, "non-passage series")
    return out.reshape(shape) if shape else float(out[0])


def _npd_at(x, T, mu, a1, b1, a2, b2, ctl):
    c = a1 - a2
    b = 0.5 * (b2 - b1)
    bbar = 0.5 * (b1 + b2)
    abar = 0.5 * (a1 + a2)
    y = x - bbar * T
    pref = (mu - bbar) * x - 0.5 * (mu * mu - bbar * bbar) * T - 0.5 * (_LOG_2PI + np.log(T))
    a_eff = 2.0 * c * (c - 2.0 * T * b) / T

    res = np.zeros(x.shape)
    scale = np.zeros(x.shape)
    direct = a_eff >= np.pi
    if np.any(direct):
        d = direct
        res[d], scale[d] = _npd_direct(
            pref[d], y[d], T[d], b[d], c[d], abar[d], a1[d], a2[d], ctl
        )
    dual = ~direct
    if np.any(dual):
        d = dual
        res[d], scale[d] = _npd_dual(
            pref[d], y[d], T[d], b[d], c[d], abar[d], a1[d], a_eff[d], ctl
        )
    return res, scale


def _npd_direct(pref, y, T, b, c, abar, a1, a2, ctl):
    """Image groups of four, stopped when two consecutive groups are small."""
    s = _exp_safe(pref - y * y / (2.0 * T))
    peak = s.copy()
    below = np.zeros(y.shape, dtype=np.int64)
    j = 1
    while True:
        e1 = 4.0 * b * j * (j * c - abar) - (y - 2.0 * j * c) ** 2 / (2.0 * T)
        e2 = 2.0 * b * (2 * j - 1) * (j * c - a1) - (y + 2.0 * j * c - 2.0 * a1) ** 2 / (2.0 * T)
        e3 = 4.0 * b * j * (j * c + abar) - (y + 2.0 * j * c) ** 2 / (2.0 * T)
        e4 = 2.0 * b * (2 * j - 1) * (j * c + a2) - (y - 2.0 * j * c - 2.0 * a2) ** 2 / (2.0 * T)
        t1 = _exp_safe(pref + e1)
        t2 = _exp_safe(pref + e2)
        t3 = _exp_safe(pref + e3)
        t4 = _exp_safe(pref + e4)
        s = s + (t1 - t2) + (t3 - t4)
        group = t1 + t2 + t3 + t4
        peak = np.maximum(peak, group)
        small = group <= np.maximum(ctl.rel_tol * np.abs(s), ctl.abs_tol)
        below = np.where(small, below + 1, 0)
        j += 1
        if bool(np.all(below >= 2)):
            return s, peak
        if j >= ctl.max_terms:
            raise NonConvergedSeries(
                f"non-passage series: {int(np.sum(below < 2))} points unconverged "
                f"after {ctl.max_terms} groups"
            )


def _npd_dual(pref, y, T, b, c, abar, a1, a_eff, ctl):
    """Poisson-dual of the two Gaussian image lattices.

    Both lattices share E = C + B^2/(4A), so their m = 0 terms cancel exactly
    and the remainder carries the explicit exp(-pi^2 m^2 / A) smallness.
    """
    bg = -4.0 * abar * b + 2.0 * c * y / T
    bh = -4.0 * a1 * b - 2.0 * b * c + 4.0 * a1 * c / T - 2.0 * c * y / T
    # 2Tb - c = -gap(T) < 0 whenever the support is nonempty, so no singularity
    e_shared = (
        b * (-2.0 * T * abar * abar * b + 2.0 * abar * c * y - c * y * y)
        / (c * (2.0 * T * b - c))
    )
    n_m = _dual_m_count(ctl.rel_tol)
    mvec = np.arange(1.0, n_m + 1.0)
    decay = np.exp(-_PI2 * (mvec[None, :] ** 2 - 1.0) / a_eff[:, None])
    ang_g = np.pi * mvec[None, :] * (bg / a_eff)[:, None]
    ang_h = np.pi * mvec[None, :] * (bh / a_eff)[:, None]
    # cos(g) - cos(h) = -2 sin((g+h)/2) sin((g-h)/2), stable for nearby angles
    cos_diff = -2.0 * np.sin(0.5 * (ang_g + ang_h)) * np.sin(0.5 * (ang_g - ang_h))
    ssum = np.sum(decay * cos_diff, axis=1)
    ln_mag = pref + 0.5 * np.log(np.pi / a_eff) + e_shared - _PI2 / a_eff + np.log(2.0)
    mag = _exp_safe(ln_mag)
    return mag * ssum, mag * 2.0 * np.sum(decay, axis=1)
