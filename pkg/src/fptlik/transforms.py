"""Space-time changes of variables onto standard Brownian motion.

A diffusion dX = mu(X,t) dt + sigma(X,t) dW whose coefficients satisfy the
constructive condition implemented in `transform_cherkasov` can be mapped by
s = gamma(t), w = psi(x,t) onto a standard Brownian motion.  Boundaries map
through the same change of variables, hitting times satisfy
tau_transformed = gamma(tau) with the exit side unchanged, and densities map
back with the Jacobian factors gamma'(t) (time) and psi'(x,T) (state).

Two closed-form special cases are provided (purely time-dependent drift, and
the mean-reverting linear-drift process), plus the generic constructor that
takes the coefficient pair (c1, c2) and verifies the condition numerically.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import Boundary
from .quadrature import gauss_legendre, map_to_interval

TIME_DILATION_LIMIT = 1e6


class ConditionViolated(ValueError):
    """The supplied (c1, c2) pair does not linearize the drift field."""

    def __init__(self, residual: float, x: float, t: float, tol: float):
        self.residual = residual
        self.location = (x, t)
        super().__init__(
            f"reducibility condition residual {residual:.3e} (tol {tol:.1e}) at x={x:.4g}, t={t:.4g}"
        )


class TimeDilationError(ValueError):
    pass


@dataclass(frozen=True)
class CoordinateTransform:
    """Monotone space-time change of variables (t, x) -> (s, w).

    gamma is increasing with gamma(0) = 0; psi(., t) is increasing for every
    t.  All callables accept scalars or arrays.
    """

    gamma: Callable
    gamma_inv: Callable
    gamma_prime: Callable
    psi: Callable
    psi_prime: Callable
    psi_inv: Callable
    name: str = "custom"

    def check_monotone(self, horizon: float, n: int = 257) -> None:
        """Grid check that gamma' > 0 and psi'(., t) > 0 on [0, horizon]."""
        ts = np.linspace(0.0, horizon, n)
        gp = np.asarray(self.gamma_prime(ts), dtype=np.float64)
        if np.any(gp <= 0):
            raise ValueError("gamma must be strictly increasing on [0, horizon]")
        for t in ts[:: max(1, n // 16)]:
            xs = np.linspace(-5.0, 5.0, 33)
            pp = np.asarray(self.psi_prime(xs, t), dtype=np.float64)
            if np.any(pp <= 0):
                raise ValueError(f"psi(., t) must be strictly increasing (t={t})")


def identity_transform() -> CoordinateTransform:
    ident = lambda v: np.asarray(v, dtype=np.float64) + 0.0
    return CoordinateTransform(
        gamma=ident,
        gamma_inv=ident,
        gamma_prime=lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
        psi=lambda x, t: np.asarray(x, dtype=np.float64) + 0.0,
        psi_prime=lambda x, t: np.ones_like(np.asarray(x, dtype=np.float64)),
        psi_inv=lambda w, t: np.asarray(w, dtype=np.float64) + 0.0,
        name="identity",
    )


class CumulativeIntegral:
    """Antiderivative F(t) = int_0^t f(r) dr of a smooth scalar function.

    Block-cached Gauss-Legendre: cumulative sums at unit-block edges plus an
    in-block rule per evaluation.  Deterministic and spectrally accurate for
    smooth integrands.
    """

    def __init__(self, f: Callable, block: float = 1.0, order: int = 48):
        self._f = f
        self._block = float(block)
        self._rule = gauss_legendre(order)
        self._edges = [0.0]

    def _extend_to(self, t: float) -> None:
        while (len(self._edges) - 1) * self._block < t:
            lo = (len(self._edges) - 1) * self._block
            x, w = map_to_interval(self._rule, lo, lo + self._block)
            self._edges.append(self._edges[-1] + float(np.dot(w, self._f(x))))

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(t_arr < 0):
            raise ValueError("antiderivative defined for t >= 0")
        if t_arr.size:
            self._extend_to(float(np.max(t_arr)))
        out = np.empty(t_arr.shape)
        for i, ti in enumerate(t_arr):
            k = int(ti // self._block)
            lo = k * self._block
            base = self._edges[min(k, len(self._edges) - 1)]
            if ti > lo:
                x, w = map_to_interval(self._rule, lo, ti)
                base = base + float(np.dot(w, self._f(x)))
            out[i] = base
        return out if np.shape(t) else float(out[0])


def _as_time_callable(f) -> Callable:
    if callable(f):
        return f
    val = float(f)
    return lambda t: np.full_like(np.asarray(t, dtype=np.float64), val)


def transform_nonlinear_drift(
    mu, sigma: float, antiderivative: Optional[Callable] = None
) -> CoordinateTransform:
    """Reduce dX = mu(t) dt + sigma dW to standard Brownian motion.

    Time is unchanged; the state map subtracts the accumulated drift and
    rescales: psi(x, t) = (x - int_0^t mu) / sigma.  A closed-form
    antiderivative of mu may be supplied; otherwise it is integrated
    numerically with cached quadrature.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    mu_f = _as_time_callable(mu)
    m_of = antiderivative if antiderivative is not None else CumulativeIntegral(mu_f)
    ident = lambda v: np.asarray(v, dtype=np.float64) + 0.0
    return CoordinateTransform(
        gamma=ident,
        gamma_inv=ident,
        gamma_prime=lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
        psi=lambda x, t: (np.asarray(x, dtype=np.float64) - m_of(t)) / sigma,
        psi_prime=lambda x, t: np.full_like(np.asarray(x, dtype=np.float64), 1.0 / sigma),
        psi_inv=lambda w, t: sigma * np.asarray(w, dtype=np.float64) + m_of(t),
        name="nonlinear-drift",
    )


def transform_ou(theta: float, lam: float, sigma: float) -> CoordinateTransform:
    """Reduce dX = theta*(lam - X) dt + sigma dW to standard Brownian motion.

    gamma(t) = (e^{2 theta t} - 1) / (2 theta), psi(x, t) =
    (e^{theta t} x - lam e^{theta t} + lam) / sigma.  The exponential time
    change can dilate long horizons severely; see check_time_dilation.
    """
    if theta == 0:
        raise ValueError("theta must be nonzero (otherwise use transform_nonlinear_drift)")
    if not sigma > 0:
        raise ValueError("sigma must be positive")

    def gamma(t):
        return np.expm1(2.0 * theta * np.asarray(t, dtype=np.float64)) / (2.0 * theta)

    def gamma_inv(s):
        return np.log1p(2.0 * theta * np.asarray(s, dtype=np.float64)) / (2.0 * theta)

    def gamma_prime(t):
        return np.exp(2.0 * theta * np.asarray(t, dtype=np.float64))

    def psi(x, t):
        e = np.exp(theta * np.asarray(t, dtype=np.float64))
        return (e * (np.asarray(x, dtype=np.float64) - lam) + lam) / sigma

    def psi_prime(x, t):
        e = np.exp(theta * np.asarray(t, dtype=np.float64))
        return e / sigma + 0.0 * np.asarray(x, dtype=np.float64)

    def psi_inv(w, t):
        e = np.exp(-theta * np.asarray(t, dtype=np.float64))
        return lam + (sigma * np.asarray(w, dtype=np.float64) - lam) * e

    return CoordinateTransform(gamma, gamma_inv, gamma_prime, psi, psi_prime, psi_inv, name="ou")


def cherkasov_residual(
    c1, c2, sigma, mu, x_range: tuple[float, float], t_range: tuple[float, float], n: int = 64
) -> tuple[float, float, float]:
    """Max residual of the linearizability condition on an n x n grid.

    The condition expresses the drift as a functional of sigma and the pair
    (c1, c2); constant and purely time-dependent sigma short-circuit the
    inner integral.  Returns (max_residual, x_at_max, t_at_max).
    """
    c1_f, c2_f = _as_time_callable(c1), _as_time_callable(c2)
    sig_f = sigma if callable(sigma) else (lambda x, t: np.full_like(np.asarray(x, dtype=np.float64), float(sigma)))
    xs = np.linspace(x_range[0], x_range[1], n)
    ts = np.linspace(t_range[0], t_range[1], n)
    worst = (0.0, xs[0], ts[0])
    rule = gauss_legendre(32)
    hx = 1e-5 * max(1.0, abs(x_range[1] - x_range[0]))
    ht = 1e-5 * max(1.0, abs(t_range[1] - t_range[0]))
    for t in ts:
        c1v, c2v = float(c1_f(t)), float(c2_f(t))
        for x in xs:
            s2 = lambda y, tt=t: np.asarray(sig_f(y, tt), dtype=np.float64) ** 2
            ds2_dx = (s2(x + hx) - s2(x - hx)) / (2 * hx)
            if x != 0.0:
                y, w = map_to_interval(rule, min(0.0, x), max(0.0, x))
                s2y = s2(y)
                ds2_dt = (np.asarray(sig_f(y, t + ht), dtype=np.float64) ** 2 - np.asarray(sig_f(y, t - ht), dtype=np.float64) ** 2) / (2 * ht)
                integrand = (c2v * s2y + ds2_dt) / s2y ** 1.5
                inner = float(np.dot(w, integrand)) * (1.0 if x > 0 else -1.0)
            else:
                inner = 0.0
            sig_x = float(sig_f(np.asarray(x), t))
            rhs = ds2_dx / 4.0 + 0.5 * sig_x * (c1v + inner)
            res = abs(float(mu(np.asarray(x), t)) - float(rhs))
            if res > worst[0]:
                worst = (res, float(x), float(t))
    return worst


def transform_cherkasov(
    c1,
    c2,
    sigma,
    mu,
    x_range: tuple[float, float] = (-3.0, 3.0),
    t_range: tuple[float, float] = (0.0, 3.0),
    tol: float = 1e-8,
    grid: int = 64,
) -> CoordinateTransform:
    """Generic reduction to Brownian motion from a supplied (c1, c2) pair.

    The pair is verified numerically on a grid over the declared domain
    (case-by-case symbolic verification is out of reach here); a residual
    above tol raises ConditionViolated with its location.  The transform is

        gamma(t) = int_0^t exp(-int_0^r c2) dr
        psi(x,t) = exp(-1/2 int_0^t c2) int_0^x dy/sigma(y,t)
                   - 1/2 int_0^t c1(r) exp(-1/2 int_0^r c2) dr
    """
    c1_f, c2_f = _as_time_callable(c1), _as_time_callable(c2)
    sig_f = sigma if callable(sigma) else (lambda x, t: np.full_like(np.asarray(x, dtype=np.float64), float(sigma)))
    res, x_at, t_at = cherkasov_residual(c1_f, c2_f, sig_f, mu, x_range, t_range, grid)
    if res > tol:
        raise ConditionViolated(res, x_at, t_at, tol)

    c2_cum = CumulativeIntegral(c2_f)

    def gamma_integrand(r):
        return np.exp(-np.asarray(c2_cum(r), dtype=np.float64))

    gamma_cum = CumulativeIntegral(gamma_integrand)

    def half_decay(r):
        return np.exp(-0.5 * np.asarray(c2_cum(r), dtype=np.float64))

    def c1_integrand(r):
        return np.asarray(c1_f(r), dtype=np.float64) * half_decay(r)

    c1_cum = CumulativeIntegral(c1_integrand)
    rule = gauss_legendre(48)

    def state_integral(x, t):
        x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
        out = np.empty(x_arr.shape)
        for i, xi in enumerate(x_arr):
            if xi == 0.0:
                out[i] = 0.0
                continue
            y, w = map_to_interval(rule, min(0.0, xi), max(0.0, xi))
            vals = 1.0 / np.asarray(sig_f(y, t), dtype=np.float64)
            out[i] = float(np.dot(w, vals)) * (1.0 if xi > 0 else -1.0)
        return out if np.shape(x) else float(out[0])

    def gamma(t):
        return gamma_cum(t)

    def gamma_prime(t):
        return gamma_integrand(t)

    def gamma_inv(s):
        from scipy.optimize import brentq

        s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
        out = np.empty(s_arr.shape)
        for i, si in enumerate(s_arr):
            if si == 0.0:
                out[i] = 0.0
                continue
            hi = 1.0
            while gamma_cum(hi) < si:
                hi *= 2.0
                if hi > 1e9:
                    raise ValueError(f"gamma_inv: target {si} unreachable")
            out[i] = brentq(lambda r: gamma_cum(r) - si, 0.0, hi, xtol=1e-14, rtol=1e-15)
        return out if np.shape(s) else float(out[0])

    def psi(x, t):
        return half_decay(t) * state_integral(x, t) - 0.5 * c1_cum(t)

    def psi_prime(x, t):
        return half_decay(t) / np.asarray(sig_f(x, t), dtype=np.float64)

    def psi_inv(w, t):
        from scipy.optimize import brentq

        w_arr = np.atleast_1d(np.asarray(w, dtype=np.float64))
        out = np.empty(w_arr.shape)
        for i, wi in enumerate(w_arr):
            target = (wi + 0.5 * c1_cum(t)) / half_decay(t)

            def g(xv):
                return state_integral(xv, t) - target

            lo, hi = -1.0, 1.0
            while g(lo) > 0:
                lo *= 2.0
                if lo < -1e9:
                    raise ValueError("psi_inv: bracket not found")
            while g(hi) < 0:
                hi *= 2.0
                if hi > 1e9:
                    raise ValueError("psi_inv: bracket not found")
            out[i] = brentq(g, lo, hi, xtol=1e-14, rtol=1e-15)
        return out if np.shape(w) else float(out[0])

    return CoordinateTransform(gamma, gamma_inv, gamma_prime, psi, psi_prime, psi_inv, name="cherkasov")


def check_time_dilation(tr: CoordinateTransform, horizon: float, limit: float = TIME_DILATION_LIMIT) -> float:
    """Reject transforms whose time change dilates the horizon beyond limit."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    s_end = float(tr.gamma(horizon))
    ratio = s_end / horizon
    if ratio > limit:
        raise TimeDilationError(
            f"time change dilates the horizon by {ratio:.3g}x (> {limit:.1g}); "
            "densities at large times would be numerically unreliable"
        )
    return s_end


def transform_boundary(b: Callable, tr: CoordinateTransform) -> Callable:
    """Boundary in transformed coordinates: s -> psi(b(gamma^{-1}(s)), gamma^{-1}(s))."""

    def transformed(s):
        t = tr.gamma_inv(s)
        return tr.psi(b(t), t)

    return transformed


def map_back_fptd(f_tilde: Callable, tr: CoordinateTransform) -> Callable:
    """Original-time FPTD from a transformed-time one: gamma'(t) * f~(gamma(t))."""

    def f(t):
        return np.asarray(tr.gamma_prime(t)) * np.asarray(f_tilde(tr.gamma(t)))

    return f


def map_back_npd(q_tilde: Callable, tr: CoordinateTransform, horizon: float) -> Callable:
    """Original-state NPD at the horizon: psi'(x,T) * q~(psi(x,T))."""

    def q(x):
        return np.asarray(tr.psi_prime(x, horizon)) * np.asarray(q_tilde(tr.psi(x, horizon)))

    return q


# ---------------------------------------------------------------------------
# piecewise-linear boundary approximation


@dataclass(frozen=True)
class InterpolationControl:
    max_abs_dev: float = 1e-4
    max_points: int = 2048
    min_segment: float = 1e-5
    check_grid: int = 10_000

    def __post_init__(self):
        if self.max_abs_dev <= 0 or self.min_segment <= 0 or self.max_points < 2:
            raise ValueError("interpolation tolerances must be positive")


def piecewise_linearize(
    b: Callable,
    horizon: float,
    ctl: InterpolationControl = InterpolationControl(),
    mandatory: Sequence[float] = (),
) -> Boundary:
    """Adaptive continuous piecewise-linear approximation of b on [0, horizon].

    Recursive interval bisection: a segment is split at its midpoint while
    the midpoint chord deviation exceeds the tolerance.  Mandatory points
    (e.g. times where drift or diffusion coefficients switch) are always
    included.  After refinement the deviation is re-checked on a dense grid;
    if the point budget is exhausted first, a warning is attached.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    pts = {0.0, float(horizon)}
    for m in mandatory:
        if 0.0 < float(m) < horizon:
            pts.add(float(m))
    points = sorted(pts)

    # pass 1: midpoint bisection (0.75 safety factor on the tolerance since
    # the true max chord deviation can sit slightly off-midpoint)
    stack = list(zip(points[:-1], points[1:]))
    while stack and len(points) < ctl.max_points:
        a, c = stack.pop()
        if c - a <= 2.0 * ctl.min_segment:
            continue
        mid = 0.5 * (a + c)
        chord = 0.5 * (float(b(a)) + float(b(c)))
        if abs(float(b(mid)) - chord) > 0.75 * ctl.max_abs_dev:
            points.append(mid)
            stack.append((a, mid))
            stack.append((mid, c))
    points = np.asarray(sorted(points))

    # pass 2: dense-grid verification with targeted insertions
    grid = np.linspace(0.0, horizon, ctl.check_grid)
    exact = np.asarray(b(grid), dtype=np.float64)

    def dense_dev(pts_arr):
        approx = np.interp(grid, pts_arr, np.asarray(b(pts_arr), dtype=np.float64))
        err = np.abs(approx - exact)
        i = int(np.argmax(err))
        return float(err[i]), float(grid[i])

    dev, at = dense_dev(points)
    while dev > ctl.max_abs_dev and points.size < ctl.max_points:
        seg = int(np.searchsorted(points, at)) - 1
        seg = min(max(seg, 0), points.size - 2)
        if points[seg + 1] - points[seg] <= 2.0 * ctl.min_segment:
            break
        insert = at if points[seg] + ctl.min_segment < at < points[seg + 1] - ctl.min_segment else 0.5 * (
            points[seg] + points[seg + 1]
        )
        points = np.sort(np.append(points, insert))
        dev, at = dense_dev(points)
    if dev > ctl.max_abs_dev:
        warnings.warn(
            f"piecewise_linearize: point budget reached with max deviation {dev:.3e} "
            f"> {ctl.max_abs_dev:.1e}",
            RuntimeWarning,
        )
    return Boundary(points, np.asarray(b(points), dtype=np.float64))
