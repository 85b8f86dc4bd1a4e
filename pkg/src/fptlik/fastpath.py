"""Compiled per-trial likelihood evaluation.

Dataset likelihoods evaluate the same stage-transition and contraction
formulas as the engine module, but through numba-compiled scalar loops and a
lean orchestration layer that skips schedule objects.  Observations too
close to a stage start (where the engine's refined contraction grid is
needed) and non-responses fall back to the generic engine path, so values
agree with the engine to series-truncation accuracy.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .engine import (
    BUMP_ORDER_CAP,
    COLLAPSE_GAP,
    DEFAULT_ENGINE,
    ENVELOPE_SIGMAS,
    EngineConfig,
)
from .kernels import NonConvergedSeries
from .quadrature import gauss_legendre

_PI = math.pi
_PI2 = math.pi * math.pi
_LOG_2PI = math.log(2.0 * math.pi)
_DUAL_M = 6


@njit(cache=True, fastmath=True, inline="always")
def _npd_entry_direct(x, T, mu, a1, b1, a2, b2, rel_tol, abs_tol, max_terms):
    """One canonical non-passage density value via the image-group series."""
    c = a1 - a2
    b = 0.5 * (b2 - b1)
    bbar = 0.5 * (b1 + b2)
    abar = 0.5 * (a1 + a2)
    y = x - bbar * T
    pref = (mu - bbar) * x - 0.5 * (mu * mu - bbar * bbar) * T - 0.5 * (_LOG_2PI + math.log(T))
    e0 = pref - y * y / (2.0 * T)
    s = math.exp(e0) if e0 > -745.0 else 0.0
    below = 0
    j = 1
    while True:
        e1 = pref + 4.0 * b * j * (j * c - abar) - (y - 2.0 * j * c) ** 2 / (2.0 * T)
        e2 = pref + 2.0 * b * (2 * j - 1) * (j * c - a1) - (y + 2.0 * j * c - 2.0 * a1) ** 2 / (2.0 * T)
        e3 = pref + 4.0 * b * j * (j * c + abar) - (y + 2.0 * j * c) ** 2 / (2.0 * T)
        e4 = pref + 2.0 * b * (2 * j - 1) * (j * c + a2) - (y - 2.0 * j * c - 2.0 * a2) ** 2 / (2.0 * T)
        t1 = math.exp(e1) if e1 > -745.0 else 0.0
        t2 = math.exp(e2) if e2 > -745.0 else 0.0
        t3 = math.exp(e3) if e3 > -745.0 else 0.0
        t4 = math.exp(e4) if e4 > -745.0 else 0.0
        s += (t1 - t2) + (t3 - t4)
        group = t1 + t2 + t3 + t4
        thr = rel_tol * abs(s)
        if group <= (thr if thr > abs_tol else abs_tol):
            below += 1
        else:
            below = 0
        j += 1
        if below >= 2:
            return s
        if j >= max_terms:
            raise ValueError("non-passage series unconverged")


@njit(cache=True, fastmath=True, inline="always")
def _npd_entry_dual(x, T, mu, a1, b1, a2, b2, a_eff):
    """Poisson-dual evaluation; valid (and used) when a_eff < pi."""
    c = a1 - a2
    b = 0.5 * (b2 - b1)
    bbar = 0.5 * (b1 + b2)
    abar = 0.5 * (a1 + a2)
    y = x - bbar * T
    pref = (mu - bbar) * x - 0.5 * (mu * mu - bbar * bbar) * T - 0.5 * (_LOG_2PI + math.log(T))
    bg = -4.0 * abar * b + 2.0 * c * y / T
    bh = -4.0 * a1 * b - 2.0 * b * c + 4.0 * a1 * c / T - 2.0 * c * y / T
    e_shared = b * (-2.0 * T * abar * abar * b + 2.0 * abar * c * y - c * y * y) / (
        c * (2.0 * T * b - c)
    )
    ssum = 0.0
    for m in range(1, _DUAL_M + 1):
        decay = math.exp(-_PI2 * (m * m - 1.0) / a_eff)
        g = _PI * m * bg / a_eff
        h = _PI * m * bh / a_eff
        ssum += decay * (-2.0 * math.sin(0.5 * (g + h)) * math.sin(0.5 * (g - h)))
    ln_mag = pref + 0.5 * math.log(_PI / a_eff) + e_shared - _PI2 / a_eff + math.log(2.0)
    if ln_mag < -745.0:
        return 0.0
    return math.exp(ln_mag) * ssum


@njit(cache=True, fastmath=True)
def npd_contract(x_new, x_old, qw_old, mu, sigma, a1, b1, a2, b2, T, rel_tol, abs_tol, max_terms):
    """values[i] = sum_j q_single(x_new[i]; stage, x0=x_old[j]) * qw_old[j].

    Image terms are skipped outright for entries where the rigorous bound
    exp(-2 * min(source_dist * target_dist) / T) on their relative size
    already sits below the series tolerance; only entries near a boundary
    evaluate the full image sum.
    """
    n_new = x_new.size
    n_old = x_old.size
    out = np.zeros(n_new)
    mu_c = mu / sigma
    b1_c = b1 / sigma
    b2_c = b2 / sigma
    c = (a1 - a2) / sigma
    b = 0.5 * (b2_c - b1_c)
    bbar = 0.5 * (b1_c + b2_c)
    a_eff = 2.0 * c * (c - 2.0 * T * b) / T
    u_t = a1 + b1 * T
    l_t = a2 + b2 * T
    thr_skip = -math.log(rel_tol) + 3.0
    for j in range(n_old):
        x0 = x_old[j]
        qw = qw_old[j]
        if qw == 0.0:
            continue
        a1j = (a1 - x0) / sigma
        a2j = (a2 - x0) / sigma
        u_cj = a1j + b1_c * T
        l_cj = a2j + b2_c * T
        pref0 = -0.5 * (mu_c * mu_c - bbar * bbar) * T - 0.5 * (_LOG_2PI + math.log(T))
        for i in range(n_new):
            xi = x_new[i]
            if not (l_t < xi < u_t):
                continue
            xs = (xi - x0) / sigma
            if a_eff >= _PI and 2.0 * min(a1j * (u_cj - xs), -a2j * (xs - l_cj)) / T >= thr_skip:
                y = xs - bbar * T
                e0 = pref0 + (mu_c - bbar) * xs - y * y / (2.0 * T)
                v = math.exp(e0) if e0 > -745.0 else 0.0
            elif a_eff >= _PI:
                v = _npd_entry_direct(xs, T, mu_c, a1j, b1_c, a2j, b2_c, rel_tol, abs_tol, max_terms)
            else:
                v = _npd_entry_dual(xs, T, mu_c, a1j, b1_c, a2j, b2_c, a_eff)
            out[i] += v * qw
    for i in range(n_new):
        out[i] /= sigma
    return out


@njit(cache=True, fastmath=True, inline="always")
def _fptd_entry(t, mu, a1, b1, a2, b2, upper, rel_tol, abs_tol, max_terms):
    """One canonical first-passage density value (no horizon indicator)."""
    if t < 1e-12:
        return 0.0
    c = a1 - a2
    b = 0.5 * (b2 - b1)
    abar = 0.5 * (a1 + a2)
    p = 1.0 / (2.0 * t) - b / c
    if p <= 0.0:
        return 0.0
    if upper:
        delta = mu - b1
        pref = -(b / c) * a1 * a1 + a1 * delta
        edge = a1
        sgn_abar = abar
    else:
        delta = -mu + b2
        pref = -(b / c) * a2 * a2 - a2 * delta
        edge = -a2
        sgn_abar = -abar
    pref += -0.5 * delta * delta * t - 0.5 * (_LOG_2PI + 3.0 * math.log(t))
    a_eff = 4.0 * p * c * c
    if a_eff >= _PI:
        s = 0.0
        below = 0
        j = 0
        sign = 1.0
        while True:
            alpha = (j + 0.5) * c + (1.0 if j % 2 == 0 else -1.0) * sgn_abar
            e = pref + math.log(alpha) - p * alpha * alpha
            term = math.exp(e) if e > -745.0 else 0.0
            s += sign * term
            thr = rel_tol * abs(s)
            if term <= (thr if thr > abs_tol else abs_tol):
                below += 1
            else:
                below = 0
            sign = -sign
            j += 1
            if j >= 2 and below >= 2:
                break
            if j >= max_terms:
                raise ValueError("first-passage series unconverged")
        return s if s > 0.0 else 0.0
    ssum = 0.0
    for m in range(1, _DUAL_M + 1):
        decay = math.exp(-_PI2 * (m * m - 1.0) / a_eff)
        ssum += m * decay * math.sin(_PI * m * edge / c)
    ln_mag = pref + 1.5 * math.log(_PI) - math.log(2.0) - 1.5 * math.log(p) - 2.0 * math.log(c) - _PI2 / a_eff
    if ln_mag < -745.0:
        return 0.0
    v = math.exp(ln_mag) * ssum
    return v if v > 0.0 else 0.0


@njit(cache=True, fastmath=True)
def fptd_contract(t, x_old, qw_old, mu, sigma, a1, b1, a2, b2, upper, rel_tol, abs_tol, max_terms):
    """First passage density at stage-local t contracted against the lattice."""
    acc = 0.0
    mu_c = mu / sigma
    b1_c = b1 / sigma
    b2_c = b2 / sigma
    for j in range(x_old.size):
        x0 = x_old[j]
        v = _fptd_entry(
            t, mu_c, (a1 - x0) / sigma, b1_c, (a2 - x0) / sigma, b2_c, upper,
            rel_tol, abs_tol, max_terms,
        )
        acc += v * qw_old[j]
    return acc


_GRADE_FRACS = np.asarray((0.0, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.08, 0.2, 0.5))


def _graded_grid(x_old, v_old, lo, hi):
    """Re-sample lattice values onto edge-clustered panels (see engine)."""
    from scipy.interpolate import BarycentricInterpolator

    width = hi - lo
    edges = np.concatenate([lo + width * _GRADE_FRACS, (hi - width * _GRADE_FRACS)[::-1][1:]])
    rule = gauss_legendre(10)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x_ref = (half[:, None] * rule.nodes[None, :] + mid[:, None]).ravel()
    w_ref = (half[:, None] * rule.weights[None, :]).ravel()
    values = np.maximum(np.asarray(BarycentricInterpolator(x_old, v_old)(x_ref)), 0.0)
    return x_ref, values * w_ref


def trial_loglik_fast(
    breakpoints: np.ndarray,
    mus: np.ndarray,
    sigmas: np.ndarray,
    upper_vals: np.ndarray,
    lower_vals: np.ndarray,
    x0: float,
    t_obs: float,
    upper: bool,
    cfg: EngineConfig = DEFAULT_ENGINE,
):
    """Log density of one response observation for a point-start schedule.

    Returns None when the observation needs the engine's refined contraction
    grid (too close to its stage start); raises for series failures.  The
    caller guarantees 0 < t_obs <= breakpoints[-1] and a valid schedule.
    """
    ctl = cfg.series
    k_obs = int(np.searchsorted(breakpoints, t_obs, side="left")) - 1
    t_loc = t_obs - breakpoints[k_obs]
    dur_obs = breakpoints[k_obs + 1] - breakpoints[k_obs]
    t_loc = min(max(t_loc, cfg.t_inflate), dur_obs)

    x_old = np.asarray([x0])
    v_old = np.asarray([1.0])
    qw_old = np.asarray([1.0])
    support_lo = support_hi = x0
    src_order = 0  # 0 = discrete
    for k in range(k_obs):
        dur = breakpoints[k + 1] - breakpoints[k]
        mu_k, sg_k = float(mus[k]), float(sigmas[k])
        a1, a2 = float(upper_vals[k]), float(lower_vals[k])
        b1 = (float(upper_vals[k + 1]) - a1) / dur
        b2 = (float(lower_vals[k + 1]) - a2) / dur
        kernel_w = sg_k * math.sqrt(dur)
        pad = ENVELOPE_SIGMAS * kernel_w
        lo = max(float(lower_vals[k + 1]), support_lo + mu_k * dur - pad)
        hi = min(float(upper_vals[k + 1]), support_hi + mu_k * dur + pad)
        if hi - lo <= COLLAPSE_GAP:
            return -math.inf
        base = cfg.final_order if k == k_obs - 1 else cfg.interior_order
        src_scale = (support_hi - support_lo) * (_PI / 2.0) / src_order if src_order else 0.0
        feature = max(kernel_w, src_scale)
        need = int(np.ceil(2.0 * (hi - lo) / feature)) + 10
        order = min(max(base, need), max(2 * base, base + 16), BUMP_ORDER_CAP)
        if src_order and kernel_w < src_scale:
            # source too coarse for this kernel: interpolate onto a finer rule
            from scipy.interpolate import BarycentricInterpolator

            w_src = support_hi - support_lo
            need_src = int(np.ceil(2.0 * w_src / kernel_w)) + 10
            m_src = min(max(src_order, need_src), max(2 * base, base + 16), BUMP_ORDER_CAP)
            r_src = gauss_legendre(m_src)
            h_src = 0.5 * w_src
            x_src = h_src * r_src.nodes + 0.5 * (support_lo + support_hi)
            v_src = np.maximum(np.asarray(BarycentricInterpolator(x_old, v_old)(x_src)), 0.0)
            x_old, v_old = x_src, v_src
            qw_old = v_src * (h_src * r_src.weights)
            src_order = m_src
        rule = gauss_legendre(order)
        half = 0.5 * (hi - lo)
        x_new = half * rule.nodes + 0.5 * (lo + hi)
        values = npd_contract(
            x_new, x_old, qw_old, mu_k, sg_k, a1, b1, a2, b2, dur,
            ctl.rel_tol, ctl.abs_tol, ctl.max_terms,
        )
        np.maximum(values, 0.0, out=values)
        v_old = values
        qw_old = values * (half * rule.weights)
        x_old = x_new
        support_lo, support_hi = lo, hi
        src_order = order

    if src_order:
        h_edge = 2.89 * (support_hi - support_lo) / src_order**2
        if t_loc < (6.0 * h_edge / float(sigmas[k_obs])) ** 2:
            # boundary-graded contraction grid: the integrand is a thin
            # layer at the support edges the plain rule cannot resolve
            x_old, qw_old = _graded_grid(x_old, v_old, support_lo, support_hi)
    dur = breakpoints[k_obs + 1] - breakpoints[k_obs]
    a1, a2 = float(upper_vals[k_obs]), float(lower_vals[k_obs])
    b1 = (float(upper_vals[k_obs + 1]) - a1) / dur
    b2 = (float(lower_vals[k_obs + 1]) - a2) / dur
    try:
        value = fptd_contract(
            t_loc, x_old, qw_old, float(mus[k_obs]), float(sigmas[k_obs]), a1, b1, a2, b2,
            upper, ctl.rel_tol, ctl.abs_tol, ctl.max_terms,
        )
    except ValueError as exc:
        raise NonConvergedSeries(str(exc)) from None
    if not value > 0.0 or not math.isfinite(value):
        return -math.inf
    return math.log(value)


def warm_up() -> None:
    """Trigger JIT compilation (cached across processes after the first run)."""
    bp = np.asarray([0.0, 0.5, 1.0])
    trial_loglik_fast(
        bp, np.asarray([0.2, -0.1]), np.asarray([1.0, 1.0]),
        np.asarray([1.0, 0.9, 0.8]), np.asarray([-1.0, -0.9, -0.8]),
        0.1, 0.75, True,
    )
