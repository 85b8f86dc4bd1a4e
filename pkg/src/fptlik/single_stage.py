"""Closed-form densities of the single-stage model.

A single-stage model is Brownian motion with constant drift mu and diffusion
sigma, absorbed by two linear boundaries u(t) = a1 + b1*t and
l(t) = a2 + b2*t and truncated at the horizon t = T.  In canonical form
(start at the origin, sigma = 1) the first passage time densities on either
boundary and the non-passage density at the horizon are truncated image
series; the general case reduces to the canonical one by shifting the state
by the start point and scaling by sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    DEFAULT_SERIES,
    NonConvergedSeries,
    SeriesControl,
    fptd_series_canonical,
    npd_series_canonical,
)

__all__ = [
    "CanonicalStageParams",
    "SeriesControl",
    "NonConvergedSeries",
    "fptd_upper_basic",
    "fptd_lower_basic",
    "npd_basic",
    "fptd_single",
    "fptd_single_lower",
    "npd_single",
]


@dataclass(frozen=True)
class CanonicalStageParams:
    """Canonical single-stage problem: origin start, unit diffusion.

    Derived symbols: abar = (a1+a2)/2, bbar = (b1+b2)/2, c = a1-a2 (initial
    gap), b = (b2-b1)/2 (closing rate), delta_u = mu-b1, delta_l = -mu+b2.
    """

    mu: float
    a1: float
    b1: float
    a2: float
    b2: float
    T: float

    def __post_init__(self):
        if not (self.a2 < 0.0 < self.a1):
            raise ValueError(f"canonical start must satisfy a2 < 0 < a1, got ({self.a1}, {self.a2})")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.c - 2.0 * self.b * self.T < -1e-12 * self.c:
            raise ValueError("boundaries cross before the horizon (c - 2bT < 0)")

    @property
    def abar(self) -> float:
        return 0.5 * (self.a1 + self.a2)

    @property
    def bbar(self) -> float:
        return 0.5 * (self.b1 + self.b2)

    @property
    def c(self) -> float:
        return self.a1 - self.a2

    @property
    def b(self) -> float:
        return 0.5 * (self.b2 - self.b1)

    @property
    def delta_u(self) -> float:
        return self.mu - self.b1

    @property
    def delta_l(self) -> float:
        return -self.mu + self.b2

    def alpha(self, j: int) -> float:
        return (j + 0.5) * self.c + (-1) ** j * self.abar

    def beta(self, j: int) -> float:
        return (j + 0.5) * self.c - (-1) ** j * self.abar

    def upper_at(self, t):
        return self.a1 + self.b1 * np.asarray(t)

    def lower_at(self, t):
        return self.a2 + self.b2 * np.asarray(t)


def _basic_fptd(t, p: CanonicalStageParams, ctl: SeriesControl, boundary: int):
    t = np.asarray(t, dtype=np.float64)
    vals = fptd_series_canonical(t, p.mu, p.a1, p.b1, p.a2, p.b2, boundary, ctl)
    ind = (t > 0.0) & (t <= p.T)
    return np.where(ind, vals, 0.0) if t.shape else (float(vals) if ind else 0.0)


def fptd_upper_basic(t, p: CanonicalStageParams, ctl: SeriesControl = DEFAULT_SERIES):
    """First passage time density on the upper boundary, truncated at T.

    Zero outside (0, T] and below t = 1e-6 s, where the density is
    super-exponentially small and the series is singular.
    """
    return _basic_fptd(t, p, ctl, +1)


def fptd_lower_basic(t, p: CanonicalStageParams, ctl: SeriesControl = DEFAULT_SERIES):
    """First passage time density on the lower boundary, truncated at T."""
    return _basic_fptd(t, p, ctl, -1)


def npd_basic(x, p: CanonicalStageParams, ctl: SeriesControl = DEFAULT_SERIES):
    """Non-passage density at the vertical boundary t = T.

    Zero outside the open interval (l(T), u(T)).
    """
    return npd_series_canonical(x, p.T, p.mu, p.a1, p.b1, p.a2, p.b2, ctl)


def _canonical(mu, sigma, a1, b1, a2, b2, T, x0) -> CanonicalStageParams:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not (a2 < x0 < a1):
        raise ValueError(f"start point must lie strictly between the boundaries: {a2} < {x0} < {a1}")
    return CanonicalStageParams(
        mu=mu / sigma,
        a1=(a1 - x0) / sigma,
        b1=b1 / sigma,
        a2=(a2 - x0) / sigma,
        b2=b2 / sigma,
        T=T,
    )


def fptd_single(t, mu, sigma, a1, b1, a2, b2, T, x0, ctl: SeriesControl = DEFAULT_SERIES):
    """Upper-boundary FPTD for general start point and diffusion scale."""
    return fptd_upper_basic(t, _canonical(mu, sigma, a1, b1, a2, b2, T, x0), ctl)


def fptd_single_lower(t, mu, sigma, a1, b1, a2, b2, T, x0, ctl: SeriesControl = DEFAULT_SERIES):
    """Lower-boundary FPTD for general start point and diffusion scale."""
    return fptd_lower_basic(t, _canonical(mu, sigma, a1, b1, a2, b2, T, x0), ctl)


def npd_single(x, mu, sigma, a1, b1, a2, b2, T, x0, ctl: SeriesControl = DEFAULT_SERIES):
    """Non-passage density at t = T for general start point and scale."""
    p = _canonical(mu, sigma, a1, b1, a2, b2, T, x0)
    x = np.asarray(x, dtype=np.float64)
    return npd_basic((x - x0) / sigma, p, ctl) / sigma
