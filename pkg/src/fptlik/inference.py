"""Trial-level likelihoods and parameter inference for attention-driven models.

Each experimental trial carries known covariates (a fixation sequence and
preference ratings) that, together with the shared parameters, determine a
stage schedule: one stage per fixation dwell, drift set by which option is
fixated, linearly collapsing symmetric boundaries.  Response trials
contribute their passage density, non-response trials the non-passage
probability.  Trials are independent, so the dataset log likelihood is an
order-insensitive sum evaluated with compensated summation and optionally in
parallel over a worker pool with a fixed reduction order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import DEFAULT_ENGINE, EngineConfig, evaluate_observation
from .model import (
    BoundaryLabel,
    InvalidScheduleError,
    NonResponse,
    Observation,
    PointMass,
    Response,
    StageSchedule,
)

ADDM_SIGMA = 1.0  # diffusion scale pinned by convention; drift units absorb it

_CHUNK_TRIALS = 512  # fixed chunking => identical reduction order at any worker count

PARAM_NAMES = ("eta", "kappa", "a", "b", "x0")


@dataclass(frozen=True)
class AddmParams:
    """Shared parameters: attention discount, drift gain, boundary, start."""

    eta: float
    kappa: float
    a: float
    b: float
    x0: float

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.a > 0:
            raise ValueError("boundary intercept a must be positive")
        if not -self.a < self.x0 < self.a:
            raise ValueError("x0 must lie strictly between the boundaries")

    def to_vector(self, free: Sequence[str] = PARAM_NAMES) -> np.ndarray:
        return np.asarray([getattr(self, k) for k in free], dtype=np.float64)

    def with_vector(self, vec: Sequence[float], free: Sequence[str] = PARAM_NAMES) -> "AddmParams":
        return replace(self, **{k: float(v) for k, v in zip(free, vec)})


def drift_rate(v: str, r_a: float, r_b: float, kappa: float, eta: float) -> float:
    """Fixation-dependent drift: the unattended option's rating is discounted."""
    if v == "A":
        return kappa * (r_a - eta * r_b)
    if v == "B":
        return kappa * (eta * r_a - r_b)
    raise ValueError(f"fixation label must be 'A' or 'B', got {v!r}")


@dataclass(frozen=True)
class TrialRecord:
    """One trial: either covariates that build a schedule, or an explicit one."""

    observation: Observation
    fixations: Optional[tuple[tuple[float, str], ...]] = None
    r_a: Optional[float] = None
    r_b: Optional[float] = None
    schedule: Optional[StageSchedule] = None

    def __post_init__(self):
        if self.schedule is None:
            if self.fixations is None or self.r_a is None or self.r_b is None:
                raise ValueError("trial needs either an explicit schedule or full covariates")
            fx = tuple((float(d), str(l)) for d, l in self.fixations)
            if any(d <= 0 for d, _ in fx):
                raise ValueError("fixation durations must be positive")
            object.__setattr__(self, "fixations", fx)


def _addm_arrays(
    p: AddmParams,
    fixations: Sequence[tuple[float, str]],
    r_a: float,
    r_b: float,
    horizon: Optional[float],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Breakpoints, per-stage drifts and boundary values for one trial."""
    collapse = p.a / p.b if p.b > 0 else math.inf
    if horizon is None:
        horizon = collapse
    if math.isinf(horizon):
        raise ValueError("a horizon is required when the boundaries never collapse")
    t_end = min(float(horizon), collapse)

    switch = np.cumsum([d for d, _ in fixations])
    inner = switch[(switch > 1e-12) & (switch < t_end - 1e-12)]
    bp = np.concatenate([[0.0], inner, [t_end]])
    mids = 0.5 * (bp[:-1] + bp[1:])
    seg = np.minimum(np.searchsorted(switch, mids, side="right"), len(fixations) - 1)
    mu = np.asarray([drift_rate(fixations[int(i)][1], r_a, r_b, p.kappa, p.eta) for i in seg])
    return bp, mu, p.a - p.b * bp, -p.a + p.b * bp


def build_addm_schedule(
    p: AddmParams,
    fixations: Sequence[tuple[float, str]],
    r_a: float,
    r_b: float,
    horizon: Optional[float] = None,
) -> StageSchedule:
    """Stage schedule for one trial's covariates under shared parameters.

    One stage per fixation dwell (the last dwell is extended if the
    covariates end early), symmetric boundaries a -+ b*t, point start.  The
    horizon defaults to the boundary collapse time when the boundaries
    collapse, and must not exceed it.
    """
    bp, mu, uv, lv = _addm_arrays(p, fixations, r_a, r_b, horizon)
    return StageSchedule(
        breakpoints=bp,
        mu=mu,
        sigma=np.full(bp.size - 1, ADDM_SIGMA),
        upper_values=uv,
        lower_values=lv,
        initial=PointMass(p.x0),
    )


def trial_schedule(trial: TrialRecord, p: Optional[AddmParams], horizon: Optional[float]) -> StageSchedule:
    if trial.schedule is not None:
        return trial.schedule
    if p is None:
        raise ValueError("covariate trials need parameters")
    return build_addm_schedule(p, trial.fixations, trial.r_a, trial.r_b, horizon)


def trial_loglik(
    trial: TrialRecord,
    p: Optional[AddmParams] = None,
    cfg: EngineConfig = DEFAULT_ENGINE,
    horizon: Optional[float] = None,
) -> float:
    """Log likelihood contribution of one trial; -inf for zero density.

    Covariate-built response trials run through the compiled fast path;
    anything it cannot handle (non-responses, observations hugging a stage
    start, explicit schedules) goes through the engine.
    """
    obs = trial.observation
    if trial.schedule is None and isinstance(obs, Response) and p is not None:
        from . import fastpath

        try:
            bp, mu, uv, lv = _addm_arrays(p, trial.fixations, trial.r_a, trial.r_b, horizon)
        except ValueError:
            return -math.inf
        if obs.t > bp[-1]:
            return -math.inf  # impossible under these parameters (boundary collapsed)
        sig = np.full(bp.size - 1, ADDM_SIGMA)
        out = fastpath.trial_loglik_fast(
            bp, mu, sig, uv, lv, p.x0, obs.t, obs.c is BoundaryLabel.UPPER, cfg
        )
        if out is not None:
            return out
        s = StageSchedule(bp, mu, sig, uv, lv, PointMass(p.x0))
        value = evaluate_observation(s, obs, cfg)
    else:
        try:
            s = trial_schedule(trial, p, horizon)
        except (InvalidScheduleError, ValueError):
            return -math.inf
        if isinstance(obs, Response) and obs.t > s.horizon:
            return -math.inf
        value = evaluate_observation(s, obs, cfg)
    if not value > 0.0 or not math.isfinite(value):
        return -math.inf
    return math.log(value)


@dataclass(frozen=True)
class LoglikResult:
    value: float
    per_trial: np.ndarray

    @property
    def n_zero(self) -> int:
        return int(np.sum(np.isneginf(self.per_trial)))

    @property
    def zero_trials(self) -> np.ndarray:
        """Indices of trials with zero/negative computed density."""
        return np.nonzero(np.isneginf(self.per_trial))[0]


# Worker state is installed in the parent before the pool forks, so children
# inherit the (possibly large) trial list without pickling it per worker.
_POOL_STATE: dict = {}


def _pool_eval(span):
    trials, p, cfg, horizon = _POOL_STATE["args"]
    lo, hi = span
    return [trial_loglik(trials[i], p, cfg, horizon) for i in range(lo, hi)]


def dataset_loglik_detailed(
    trials: Sequence[TrialRecord],
    p: Optional[AddmParams] = None,
    cfg: EngineConfig = DEFAULT_ENGINE,
    horizon: Optional[float] = None,
    n_workers: int = 1,
) -> LoglikResult:
    """Per-trial log likelihoods plus their compensated-order-fixed sum.

    The chunk layout and reduction order are fixed, so results are identical
    (bit-for-bit) for any worker count.
    """
    n = len(trials)
    spans = [(lo, min(lo + _CHUNK_TRIALS, n)) for lo in range(0, n, _CHUNK_TRIALS)]
    if n_workers <= 1 or n <= _CHUNK_TRIALS:
        per = [trial_loglik(trials[i], p, cfg, horizon) for i in range(n)]
    else:
        import multiprocessing

        _POOL_STATE["args"] = (trials, p, cfg, horizon)
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as ex:
                per = [v for chunk in ex.map(_pool_eval, spans) for v in chunk]
        finally:
            _POOL_STATE.clear()
    arr = np.asarray(per, dtype=np.float64)
    value = -math.inf if np.any(np.isneginf(arr)) else math.fsum(per)
    return LoglikResult(value=value, per_trial=arr)


def dataset_loglik(
    trials: Sequence[TrialRecord],
    p: Optional[AddmParams] = None,
    cfg: EngineConfig = DEFAULT_ENGINE,
    horizon: Optional[float] = None,
    n_workers: int = 1,
) -> float:
    """Dataset log likelihood: sum of response densities and non-response masses."""
    return dataset_loglik_detailed(trials, p, cfg, horizon, n_workers).value


# ---------------------------------------------------------------------------
# unconstrained reparameterization for the simplex search

def _to_unconstrained(p: AddmParams, free: Sequence[str]) -> np.ndarray:
    z = []
    for k in free:
        v = getattr(p, k)
        if k == "eta":
            z.append(math.log(v / (1.0 - v)))
        elif k in ("kappa", "a"):
            z.append(math.log(v))
        elif k == "b":
            z.append(v)
        elif k == "x0":
            z.append(math.atanh(v / p.a))
        else:
            raise KeyError(k)
    return np.asarray(z)


def _from_unconstrained(z: Sequence[float], base: AddmParams, free: Sequence[str]) -> AddmParams:
    kw = {}
    zmap = dict(zip(free, z))
    if "eta" in zmap:
        kw["eta"] = 1.0 / (1.0 + math.exp(-zmap["eta"]))
    if "kappa" in zmap:
        kw["kappa"] = math.exp(zmap["kappa"])
    if "a" in zmap:
        kw["a"] = math.exp(zmap["a"])
    if "b" in zmap:
        kw["b"] = zmap["b"]
    a_eff = kw.get("a", base.a)
    if "x0" in zmap:
        kw["x0"] = a_eff * math.tanh(zmap["x0"])
    elif abs(base.x0) >= a_eff:
        kw["x0"] = math.copysign(0.999 * a_eff, base.x0)
    return replace(base, **kw)


DEFAULT_BOUNDS = {
    "eta": (0.01, 0.99),
    "kappa": (0.01, 5.0),
    "a": (0.3, 6.0),
    "b": (0.0, 1.5),
    "x0": (-5.0, 5.0),
}


@dataclass(frozen=True)
class FitControl:
    xatol: float = 1e-5
    fatol: float = 1e-8
    max_iter: int = 2000
    max_restarts: int = 5


@dataclass(frozen=True)
class FitResult:
    params: AddmParams
    loglik: float
    iterations: int  # outer simplex passes until no improvement
    n_evals: int
    converged: bool
    message: str


def fit_mle(
    trials: Sequence[TrialRecord],
    init: AddmParams,
    bounds: Optional[dict] = None,
    free: Sequence[str] = PARAM_NAMES,
    cfg: EngineConfig = DEFAULT_ENGINE,
    horizon: Optional[float] = None,
    ctl: FitControl = FitControl(),
    n_workers: int = 1,
) -> FitResult:
    """Maximum likelihood by bounded derivative-free simplex search.

    The search runs in an unconstrained reparameterization (logit for the
    attention discount, log for the gain and boundary intercept, identity
    for the collapse slope, scaled atanh for the start point), with the
    supplied box bounds enforced by rejection.  Restarted from the incumbent
    until an extra pass no longer improves the objective.
    """
    from scipy import optimize

    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}
    for k in free:
        lo, hi = bounds[k]
        if not lo <= getattr(init, k) <= hi:
            raise ValueError(f"init {k}={getattr(init, k)} outside bounds [{lo}, {hi}]")
    n_evals = 0

    def objective(z):
        nonlocal n_evals
        n_evals += 1
        try:
            p = _from_unconstrained(z, init, free)
        except (ValueError, OverflowError):
            return math.inf
        for k in free:
            lo, hi = bounds[k]
            if not lo <= getattr(p, k) <= hi:
                return math.inf
        ll = dataset_loglik(trials, p, cfg, horizon, n_workers)
        return math.inf if not math.isfinite(ll) else -ll

    z = _to_unconstrained(init, free)
    best_f = objective(z)
    if not math.isfinite(best_f):
        raise ValueError("log likelihood is not finite at the initial parameters")
    best_z = z
    passes = 0
    converged = False
    message = ""
    while passes < ctl.max_restarts:
        res = optimize.minimize(
            objective,
            best_z,
            method="Nelder-Mead",
            options={
                "xatol": ctl.xatol,
                "fatol": ctl.fatol,
                "maxiter": ctl.max_iter,
                "initial_simplex": _simplex_around(best_z, 0.05 if passes == 0 else 0.01),
            },
        )
        passes += 1
        improved = res.fun < best_f - ctl.fatol
        if res.fun < best_f:
            best_f, best_z = res.fun, res.x
        message = res.message
        if not improved:
            converged = True
            break
    params = _from_unconstrained(best_z, init, free)
    return FitResult(
        params=params,
        loglik=-best_f,
        iterations=passes,
        n_evals=n_evals,
        converged=converged,
        message=str(message),
    )


def _simplex_around(z: np.ndarray, scale: float) -> np.ndarray:
    n = z.size
    simplex = np.tile(z, (n + 1, 1))
    for i in range(n):
        step = scale * max(abs(z[i]), 0.1)
        simplex[i + 1, i] += step
    return simplex


@dataclass(frozen=True)
class McmcResult:
    chain: np.ndarray  # (n_draws, n_free)
    free: tuple[str, ...]
    acceptance_rate: float
    logposts: np.ndarray

    def posterior_mean(self) -> np.ndarray:
        return self.chain.mean(axis=0)

    def posterior_sd(self) -> np.ndarray:
        return self.chain.std(axis=0, ddof=1)


def mcmc_sample(
    trials: Sequence[TrialRecord],
    prior: Optional[Callable[[AddmParams], float]],
    init: AddmParams,
    n_burn: int,
    n_draws: int,
    proposal_scale,
    seed: int = 0,
    free: Sequence[str] = PARAM_NAMES,
    cfg: EngineConfig = DEFAULT_ENGINE,
    horizon: Optional[float] = None,
    n_workers: int = 1,
    thin: int = 1,
) -> McmcResult:
    """Random-walk Metropolis-Hastings on the unnormalized posterior.

    `prior` evaluates the prior density at a parameter point (None = flat on
    the valid region).  Gaussian proposals with per-component scales; draws
    are recorded after n_burn iterations, every `thin` steps.  Seeded and
    deterministic.
    """
    rng = np.random.default_rng(seed)
    free = tuple(free)
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=np.float64), (len(free),))

    def log_post(p: AddmParams) -> float:
        pr = 1.0 if prior is None else float(prior(p))
        if not pr > 0:
            return -math.inf
        ll = dataset_loglik(trials, p, cfg, horizon, n_workers)
        return math.log(pr) + ll

    current = init
    cur_vec = init.to_vector(free)
    cur_lp = log_post(init)
    if not math.isfinite(cur_lp):
        raise ValueError("zero prior or likelihood at the initial point")
    chain = np.empty((n_draws, len(free)))
    lps = np.empty(n_draws)
    n_accept = 0
    total = n_burn + n_draws * thin
    kept = 0
    for it in range(total):
        prop_vec = cur_vec + scale * rng.standard_normal(len(free))
        try:
            prop = current.with_vector(prop_vec, free)
            lp = log_post(prop)
        except ValueError:
            lp = -math.inf
        if math.log(rng.random()) < lp - cur_lp:
            current, cur_vec, cur_lp = prop, prop_vec, lp
            n_accept += 1
        if it >= n_burn and (it - n_burn) % thin == 0:
            chain[kept] = cur_vec
            lps[kept] = cur_lp
            kept += 1
    return McmcResult(
        chain=chain[:kept], free=free, acceptance_rate=n_accept / total, logposts=lps[:kept]
    )


@dataclass(frozen=True)
class BootstrapResult:
    intervals: dict
    estimates: np.ndarray  # (n_ok, n_free) resample estimates
    n_failed: int


def bootstrap_ci(
    trials: Sequence[TrialRecord],
    fitted: AddmParams,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    free: Sequence[str] = PARAM_NAMES,
    bounds: Optional[dict] = None,
    cfg: EngineConfig = DEFAULT_ENGINE,
    horizon: Optional[float] = None,
    ctl: FitControl = FitControl(max_restarts=1),
    n_workers: int = 1,
) -> BootstrapResult:
    """Nonparametric pivotal bootstrap confidence intervals from refits.

    Resamples trials with replacement, refits from the fitted point, and
    returns per-component pivotal intervals 2*est - q_{1-a/2}, 2*est - q_{a/2}.
    Failed refits are counted and skipped.
    """
    rng = np.random.default_rng(seed)
    n = len(trials)
    estimates = []
    n_failed = 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        resample = [trials[i] for i in idx]
        try:
            fit = fit_mle(resample, fitted, bounds, free, cfg, horizon, ctl, n_workers)
            estimates.append(fit.params.to_vector(free))
        except ValueError:
            n_failed += 1
    est = np.asarray(estimates)
    alpha = 1.0 - level
    hat = fitted.to_vector(free)
    intervals = {}
    for j, k in enumerate(free):
        q_lo, q_hi = np.quantile(est[:, j], [alpha / 2, 1 - alpha / 2])
        intervals[k] = (float(2 * hat[j] - q_hi), float(2 * hat[j] - q_lo))
    return BootstrapResult(intervals=intervals, estimates=est, n_failed=n_failed)


# ---------------------------------------------------------------------------
# trial dataset files: CSV with an inline JSON covariate column

def write_trials_csv(trials: Sequence[TrialRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "rt", "choice", "covariates"])
        for i, tr in enumerate(trials):
            if isinstance(tr.observation, Response):
                rt = repr(float(tr.observation.t))
                choice = str(tr.observation.c)
            else:
                rt = ""
                choice = "none"
            cov = json.dumps(
                {
                    "fixations": [{"duration": d, "label": l} for d, l in (tr.fixations or ())],
                    "r_a": tr.r_a,
                    "r_b": tr.r_b,
                }
            )
            w.writerow([i, rt, choice, cov])


def read_trials_csv(path) -> list[TrialRecord]:
    trials = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"trial_id", "rt", "choice", "covariates"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"trial CSV must have columns {sorted(required)}")
        for row in reader:
            cov = json.loads(row["covariates"])
            fixations = tuple((f["duration"], f["label"]) for f in cov["fixations"])
            if row["choice"] == "none":
                obs: Observation = NonResponse()
            else:
                obs = Response(float(row["rt"]), BoundaryLabel(row["choice"]))
            trials.append(
                TrialRecord(observation=obs, fixations=fixations, r_a=cov["r_a"], r_b=cov["r_b"])
            )
    return trials
