"""Domain types for multi-stage drift diffusion problems.

A stage schedule is a piecewise description on one shared breakpoint grid:
per-stage constant drift and diffusion, continuous piecewise-linear upper and
lower boundaries (stored as values at the breakpoints, so continuity holds by
construction), and an initial condition supported strictly inside the first
gap.  All types are immutable after validation and safe to share across
workers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

MASS_TOL = 2e-3  # sanity bound; coarse quadrature may overshoot slightly


class BoundaryLabel(enum.Enum):
    UPPER = "upper"
    LOWER = "lower"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Boundary:
    """Continuous piecewise-linear function of time.

    breakpoints: strictly increasing times starting at 0 (seconds).
    values: the boundary height at each breakpoint.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        va = np.asarray(self.values, dtype=np.float64)
        if bp.ndim != 1 or va.shape != bp.shape or bp.size < 2:
            raise ValueError("breakpoints and values must be 1-D arrays of equal length >= 2")
        if bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", va)
        bp.setflags(write=False)
        va.setflags(write=False)

    def __call__(self, t):
        return np.interp(t, self.breakpoints, self.values)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.breakpoints)

    def resampled(self, breakpoints: np.ndarray) -> "Boundary":
        """Same function on a finer grid (must contain the current one)."""
        return Boundary(np.asarray(breakpoints, dtype=np.float64), self(breakpoints))


# ---------------------------------------------------------------------------
# initial conditions


@dataclass(frozen=True)
class PointMass:
    x0: float

    def mass(self) -> float:
        return 1.0


@dataclass(frozen=True)
class DiscreteMixture:
    """Weighted point masses; weights may sum to less than 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        wts = np.asarray(self.weights, dtype=np.float64)
        if pts.ndim != 1 or wts.shape != pts.shape or pts.size == 0:
            raise ValueError("points and weights must be matching 1-D arrays")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("points must be strictly increasing")
        if np.any(wts < 0) or wts.sum() > 1.0 + MASS_TOL:
            raise ValueError("weights must be nonnegative with total mass <= 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        pts.setflags(write=False)
        wts.setflags(write=False)

    def mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class ContinuousDensity:
    """Evaluable (sub-)probability density with known support.

    `spec` optionally records a named family (e.g. {"type": "beta", ...}) so
    the condition can be serialized; `sampler(rng, n)` enables simulation and
    is attached automatically for named families.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float]
    spec: Optional[dict] = None
    sampler: Optional[Callable] = None

    def __post_init__(self):
        lo, hi = self.support
        if not lo < hi:
            raise ValueError("support must be a nonempty open interval")

    def mass(self) -> float:
        from .quadrature import integrate

        return integrate(self.pdf, *self.support, order=80)


@dataclass(frozen=True)
class MixedInitial:
    """Superposition of a discrete and a continuous part."""

    discrete: DiscreteMixture
    continuous: ContinuousDensity

    def mass(self) -> float:
        return self.discrete.mass() + self.continuous.mass()


InitialCondition = Union[PointMass, DiscreteMixture, ContinuousDensity, MixedInitial]


def _initial_support(initial: InitialCondition) -> tuple[float, float]:
    if isinstance(initial, PointMass):
        return initial.x0, initial.x0
    if isinstance(initial, DiscreteMixture):
        return float(initial.points[0]), float(initial.points[-1])
    if isinstance(initial, ContinuousDensity):
        return initial.support
    if isinstance(initial, MixedInitial):
        lo1, hi1 = _initial_support(initial.discrete)
        lo2, hi2 = initial.continuous.support
        return min(lo1, lo2), max(hi1, hi2)
    raise TypeError(f"not an initial condition: {initial!r}")


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class Response:
    t: float
    c: BoundaryLabel

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("response time must be positive")
        if not isinstance(self.c, BoundaryLabel):
            object.__setattr__(self, "c", BoundaryLabel(self.c))


@dataclass(frozen=True)
class NonResponse:
    pass


Observation = Union[Response, NonResponse]


# ---------------------------------------------------------------------------
# lattice


@dataclass(frozen=True)
class DensityLattice:
    """Sub-probability density on a vertical boundary, at quadrature nodes.

    weights are interval-scaled quadrature weights (or point masses for
    discrete parts), so mass = sum(weights * values).
    `clamped_mass` accumulates any negative truncation noise zeroed during
    propagation, as a diagnostic.
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    time: float
    clamped_mass: float = 0.0
    support: Optional[tuple[float, float]] = None
    gl_order: Optional[int] = None  # set when nodes are a mapped quadrature rule

    def __post_init__(self):
        nd = np.asarray(self.nodes, dtype=np.float64)
        wt = np.asarray(self.weights, dtype=np.float64)
        va = np.asarray(self.values, dtype=np.float64)
        if not (nd.ndim == 1 and wt.shape == nd.shape and va.shape == nd.shape):
            raise ValueError("nodes, weights, values must be matching 1-D arrays")
        if not np.all(np.diff(nd) > 0):
            raise ValueError("lattice nodes must be strictly increasing")
        if np.any(va < 0):
            raise ValueError("lattice values must be nonnegative")
        object.__setattr__(self, "nodes", nd)
        object.__setattr__(self, "weights", wt)
        object.__setattr__(self, "values", va)
        if self.mass > 1.0 + MASS_TOL:
            raise ValueError(f"lattice mass {self.mass} exceeds 1")
        if self.support is None and nd.size:
            object.__setattr__(self, "support", (float(nd[0]), float(nd[-1])))
        for a in (nd, wt, va):
            a.setflags(write=False)

    @property
    def mass(self) -> float:
        return float(np.dot(self.weights, self.values))


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class Stage:
    """One stage in stage-local time: boundaries a + b*(t - t_start)."""

    t_start: float
    t_end: float
    mu: float
    sigma: float
    a1: float
    b1: float
    a2: float
    b2: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def upper_end(self) -> float:
        return self.a1 + self.b1 * self.duration

    @property
    def lower_end(self) -> float:
        return self.a2 + self.b2 * self.duration


@dataclass(frozen=True)
class StageSchedule:
    """Multi-stage model on a shared breakpoint grid.

    breakpoints: d+1 times 0 = t_0 < ... < t_d = T_end.
    mu, sigma: d per-stage coefficients.
    upper, lower: boundary values at the breakpoints (d+1 each).
    """

    breakpoints: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    upper_values: np.ndarray
    lower_values: np.ndarray
    initial: InitialCondition

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sg = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        uv = np.asarray(self.upper_values, dtype=np.float64)
        lv = np.asarray(self.lower_values, dtype=np.float64)
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("need at least two breakpoints")
        d = bp.size - 1
        if sg.size == 1:
            sg = np.full(d, sg[0])
        if mu.size == 1:
            mu = np.full(d, mu[0])
        if mu.shape != (d,) or sg.shape != (d,):
            raise ValueError(f"mu and sigma must have one value per stage ({d})")
        if uv.shape != bp.shape or lv.shape != bp.shape:
            raise ValueError("boundary values must align with breakpoints")
        if bp[0] != 0.0 or not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing from 0")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sg)
        object.__setattr__(self, "upper_values", uv)
        object.__setattr__(self, "lower_values", lv)
        for a in (bp, mu, sg, uv, lv):
            a.setflags(write=False)

    @property
    def n_stages(self) -> int:
        return self.breakpoints.size - 1

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def upper(self) -> Boundary:
        return Boundary(self.breakpoints, self.upper_values)

    @property
    def lower(self) -> Boundary:
        return Boundary(self.breakpoints, self.lower_values)

    def stage(self, k: int) -> Stage:
        """Stage k (0-based) with boundaries in stage-local time."""
        dt = self.breakpoints[k + 1] - self.breakpoints[k]
        return Stage(
            t_start=float(self.breakpoints[k]),
            t_end=float(self.breakpoints[k + 1]),
            mu=float(self.mu[k]),
            sigma=float(self.sigma[k]),
            a1=float(self.upper_values[k]),
            b1=float((self.upper_values[k + 1] - self.upper_values[k]) / dt),
            a2=float(self.lower_values[k]),
            b2=float((self.lower_values[k + 1] - self.lower_values[k]) / dt),
        )

    def stages(self) -> list[Stage]:
        return [self.stage(k) for k in range(self.n_stages)]

    def stage_index_of(self, t: float) -> int:
        """Index k with t in (t_k, t_{k+1}]; t must be in (0, horizon]."""
        if not 0.0 < t <= self.horizon:
            raise ValueError(f"time {t} outside (0, {self.horizon}]")
        return int(np.searchsorted(self.breakpoints, t, side="left")) - 1

    def truncated(self, t_end: float) -> "StageSchedule":
        """Same model stopped at an earlier horizon t_end."""
        if not 0.0 < t_end <= self.horizon:
            raise ValueError("truncation point outside (0, horizon]")
        k = int(np.searchsorted(self.breakpoints, t_end, side="left"))
        bp = np.append(self.breakpoints[:k], t_end)
        return StageSchedule(
            breakpoints=bp,
            mu=self.mu[:k],
            sigma=self.sigma[:k],
            upper_values=self.upper(bp),
            lower_values=self.lower(bp),
            initial=self.initial,
        )


@dataclass(frozen=True)
class Violation:
    """One violated schedule invariant; stage < 0 means schedule-wide."""

    message: str
    stage: int = -1

    def __str__(self):
        where = f" (stage {self.stage})" if self.stage >= 0 else ""
        return self.message + where


class InvalidScheduleError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in violations))


def validate_schedule(s: StageSchedule) -> list[Violation]:
    """Collect every violated invariant (empty list = valid).

    The boundary gap must be positive on [0, T_end); equality is allowed only
    at T_end itself (collapsing designs).  The initial condition must be
    supported strictly inside the initial gap.
    """
    out: list[Violation] = []
    gap = s.upper_values - s.lower_values
    for k in range(s.n_stages):
        if s.sigma[k] <= 0:
            out.append(Violation(f"sigma must be positive, got {s.sigma[k]}", k))
        if gap[k] <= 0:
            out.append(Violation("boundaries cross before T_end", k))
    if gap[-1] < 0:
        out.append(Violation("boundaries cross before T_end", s.n_stages - 1))
    lo, hi = _initial_support(s.initial)
    if not (s.lower_values[0] < lo and hi < s.upper_values[0]):
        if lo == hi and lo in (s.upper_values[0], s.lower_values[0]):
            out.append(Violation("initial mass on boundary", 0))
        else:
            out.append(Violation("initial support not strictly inside the initial gap", 0))
    if isinstance(s.initial, (DiscreteMixture, MixedInitial)) and s.initial.mass() > 1.0 + MASS_TOL:
        out.append(Violation("initial mass exceeds 1", 0))
    return out


def ensure_valid(s: StageSchedule) -> StageSchedule:
    violations = validate_schedule(s)
    if violations:
        raise InvalidScheduleError(violations)
    return s


def merge_grids(
    drift_breaks: Sequence[float],
    mus: Sequence[float],
    upper: Boundary,
    lower: Boundary,
    initial: InitialCondition,
    sigma_breaks: Sequence[float] = (),
    sigmas: Sequence[float] = (1.0,),
    horizon: Optional[float] = None,
) -> StageSchedule:
    """Merge drift/diffusion/boundary grids into one shared-grid schedule.

    drift_breaks are the interior switch times of the piecewise-constant
    drift (len(mus) - 1 of them); likewise sigma_breaks for sigmas.  The
    horizon defaults to the boundaries' last breakpoint.
    """
    if horizon is None:
        horizon = float(upper.breakpoints[-1])
    pts = np.concatenate(
        [
            np.asarray([0.0, horizon]),
            np.asarray(drift_breaks, dtype=np.float64),
            np.asarray(sigma_breaks, dtype=np.float64),
            upper.breakpoints,
            lower.breakpoints,
        ]
    )
    pts = np.unique(pts)
    pts = pts[(pts >= 0.0) & (pts <= horizon)]
    mids = 0.5 * (pts[:-1] + pts[1:])
    mu_of = _step_function(drift_breaks, mus)
    sg_of = _step_function(sigma_breaks, sigmas)
    return StageSchedule(
        breakpoints=pts,
        mu=mu_of(mids),
        sigma=sg_of(mids),
        upper_values=upper(pts),
        lower_values=lower(pts),
        initial=initial,
    )


def _step_function(breaks: Sequence[float], values: Sequence[float]):
    br = np.asarray(breaks, dtype=np.float64)
    va = np.asarray(values, dtype=np.float64)
    if va.size != br.size + 1:
        raise ValueError("need one more value than interior breakpoints")

    def f(t):
        return va[np.searchsorted(br, np.asarray(t), side="right")]

    return f


# ---------------------------------------------------------------------------
# serialization: keys breakpoints, mu, sigma, upper_values, lower_values, initial

_SCHEDULE_KEYS = {"breakpoints", "mu", "sigma", "upper_values", "lower_values", "initial"}


def initial_to_dict(initial: InitialCondition) -> dict:
    if isinstance(initial, PointMass):
        return {"type": "point", "x0": initial.x0}
    if isinstance(initial, DiscreteMixture):
        return {"type": "discrete", "points": initial.points.tolist(), "weights": initial.weights.tolist()}
    if isinstance(initial, ContinuousDensity):
        if initial.spec is None:
            raise ValueError("continuous initial condition has no serializable spec")
        return dict(initial.spec)
    if isinstance(initial, MixedInitial):
        return {
            "type": "mixed",
            "discrete": initial_to_dict(initial.discrete),
            "continuous": initial_to_dict(initial.continuous),
        }
    raise TypeError(f"not an initial condition: {initial!r}")


def initial_from_dict(d: dict) -> InitialCondition:
    kind = d.get("type")
    if kind == "point":
        return PointMass(float(d["x0"]))
    if kind == "discrete":
        return DiscreteMixture(np.asarray(d["points"]), np.asarray(d["weights"]))
    if kind == "mixed":
        return MixedInitial(initial_from_dict(d["discrete"]), initial_from_dict(d["continuous"]))
    if kind == "beta":
        return beta_initial(float(d["alpha"]), float(d["beta"]), float(d.get("loc", 0.0)), float(d.get("scale", 1.0)))
    if kind == "uniform":
        return uniform_initial(float(d["low"]), float(d["high"]))
    raise ValueError(f"unknown initial condition type: {kind!r}")


def beta_initial(alpha: float, beta: float, loc: float = 0.0, scale: float = 1.0) -> ContinuousDensity:
    from scipy import stats

    dist = stats.beta(alpha, beta, loc=loc, scale=scale)
    return ContinuousDensity(
        pdf=dist.pdf,
        support=(loc, loc + scale),
        spec={"type": "beta", "alpha": float(alpha), "beta": float(beta), "loc": float(loc), "scale": float(scale)},
        sampler=lambda rng, n: dist.rvs(size=n, random_state=rng),
    )


def uniform_initial(low: float, high: float) -> ContinuousDensity:
    if not low < high:
        raise ValueError("need low < high")
    dens = 1.0 / (high - low)

    def pdf(x):
        x = np.asarray(x)
        return np.where((x > low) & (x < high), dens, 0.0)

    return ContinuousDensity(
        pdf=pdf,
        support=(low, high),
        spec={"type": "uniform", "low": low, "high": high},
        sampler=lambda rng, n: rng.uniform(low, high, size=n),
    )


def schedule_to_dict(s: StageSchedule) -> dict:
    return {
        "breakpoints": s.breakpoints.tolist(),
        "mu": s.mu.tolist(),
        "sigma": s.sigma.tolist(),
        "upper_values": s.upper_values.tolist(),
        "lower_values": s.lower_values.tolist(),
        "initial": initial_to_dict(s.initial),
    }


def schedule_from_dict(d: dict) -> StageSchedule:
    unknown = set(d) - _SCHEDULE_KEYS
    if unknown:
        raise ValueError(f"unknown schedule key(s): {', '.join(sorted(unknown))}")
    missing = _SCHEDULE_KEYS - set(d)
    if missing:
        raise ValueError(f"missing schedule key(s): {', '.join(sorted(missing))}")
    return StageSchedule(
        breakpoints=np.asarray(d["breakpoints"], dtype=np.float64),
        mu=np.asarray(d["mu"], dtype=np.float64),
        sigma=np.asarray(d["sigma"], dtype=np.float64),
        upper_values=np.asarray(d["upper_values"], dtype=np.float64),
        lower_values=np.asarray(d["lower_values"], dtype=np.float64),
        initial=initial_from_dict(d["initial"]),
    )


def schedule_to_json(s: StageSchedule, **kwargs) -> str:
    return json.dumps(schedule_to_dict(s), **kwargs)


def schedule_from_json(text: str) -> StageSchedule:
    return schedule_from_dict(json.loads(text))
