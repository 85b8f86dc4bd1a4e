"""Named model configurations: from JSON description to computable problem.

A problem couples a multi-stage schedule in working coordinates with the
(optional) space-time transform that produced it, plus the original-
coordinate diffusion for simulation.  Three model families are supported:

* multistage: an explicit schedule, used as is.
* nonlinear_drift: dX = mu(t) dt + sigma dW with curved boundaries; reduced
  by subtracting the accumulated drift, then linearizing the boundaries.
* ou: mean-reverting linear drift theta*(lam - X); reduced by the
  exponential space-time change, then linearized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import DEFAULT_ENGINE, EngineConfig, ScheduleEvaluator
from .model import (
    ContinuousDensity,
    DiscreteMixture,
    InitialCondition,
    MixedInitial,
    PointMass,
    StageSchedule,
    initial_from_dict,
    schedule_from_dict,
)
from .simulate import GenericDiffusion
from .transforms import (
    CoordinateTransform,
    InterpolationControl,
    check_time_dilation,
    piecewise_linearize,
    transform_boundary,
    transform_nonlinear_drift,
    transform_ou,
)


def drift_from_spec(spec: dict) -> tuple[Callable, tuple[float, ...], Callable]:
    """Drift callable, its switch times, and a closed-form antiderivative."""
    kind = spec.get("type")
    if kind == "constant":
        v = float(spec["value"])
        return (
            lambda t: np.full_like(np.asarray(t, dtype=np.float64), v),
            (),
            lambda t: v * np.asarray(t, dtype=np.float64),
        )
    if kind == "sinusoidal":
        amp = float(spec["amplitude"])
        omega = float(spec.get("omega", 1.0))
        phase = float(spec.get("phase", 0.0))
        return (
            lambda t: amp * np.sin(omega * np.asarray(t, dtype=np.float64) + phase),
            (),
            lambda t: (amp / omega) * (np.cos(phase) - np.cos(omega * np.asarray(t, dtype=np.float64) + phase)),
        )
    if kind == "piecewise":
        breaks = np.asarray([float(b) for b in spec["breaks"]])
        values = np.asarray(spec["values"], dtype=np.float64)
        if values.size != breaks.size + 1:
            raise ValueError("piecewise drift needs one more value than breaks")
        edges = np.concatenate([[0.0], breaks])
        cum = np.concatenate([[0.0], np.cumsum(values[:-1] * np.diff(edges))])

        def f(t):
            return values[np.searchsorted(breaks, np.asarray(t), side="right")]

        def anti(t):
            t = np.asarray(t, dtype=np.float64)
            k = np.searchsorted(breaks, t, side="right")
            return cum[k] + values[k] * (t - edges[k])

        return f, tuple(breaks.tolist()), anti
    raise ValueError(f"unknown drift type: {kind!r}")


def boundary_from_spec(spec: dict) -> Callable:
    kind = spec.get("type")
    if kind == "constant":
        v = float(spec["value"])
        return lambda t: np.full_like(np.asarray(t, dtype=np.float64), v)
    if kind == "linear":
        a = float(spec["intercept"])
        b = float(spec.get("slope", 0.0))
        return lambda t: a + b * np.asarray(t, dtype=np.float64)
    if kind == "exp_power":
        scale = float(spec["scale"])
        tau = float(spec["tau"])
        power = float(spec.get("power", 3.0))
        return lambda t: scale * np.exp(-((np.asarray(t, dtype=np.float64) / tau) ** power))
    raise ValueError(f"unknown boundary type: {kind!r}")


def transform_initial(initial: InitialCondition, tr: CoordinateTransform) -> InitialCondition:
    """Initial condition in transformed coordinates (density carries the Jacobian)."""
    if isinstance(initial, PointMass):
        return PointMass(float(tr.psi(initial.x0, 0.0)))
    if isinstance(initial, DiscreteMixture):
        return DiscreteMixture(np.asarray(tr.psi(initial.points, 0.0)), initial.weights.copy())
    if isinstance(initial, ContinuousDensity):
        lo, hi = initial.support

        def pdf(w):
            x = tr.psi_inv(w, 0.0)
            return np.asarray(initial.pdf(x)) / np.asarray(tr.psi_prime(x, 0.0))

        sampler = None
        if initial.sampler is not None:
            sampler = lambda rng, n: np.asarray(tr.psi(initial.sampler(rng, n), 0.0))
        return ContinuousDensity(
            pdf=pdf,
            support=(float(tr.psi(lo, 0.0)), float(tr.psi(hi, 0.0))),
            sampler=sampler,
        )
    if isinstance(initial, MixedInitial):
        return MixedInitial(
            transform_initial(initial.discrete, tr), transform_initial(initial.continuous, tr)
        )
    raise TypeError(f"not an initial condition: {initial!r}")


@dataclass(frozen=True)
class Problem:
    """A model reduced to multi-stage form, with its transform bookkeeping."""

    schedule: StageSchedule  # in working (possibly transformed) coordinates
    transform: Optional[CoordinateTransform]
    horizon: float  # original-time horizon
    sim: object  # StageSchedule or GenericDiffusion, for original-coordinate simulation
    name: str = "model"

    def evaluator(self, cfg: EngineConfig = DEFAULT_ENGINE) -> ScheduleEvaluator:
        return ScheduleEvaluator(self.schedule, cfg)

    def time_map(self) -> Callable:
        """Original time -> working time (identity without a transform)."""
        if self.transform is None:
            return lambda t: np.asarray(t, dtype=np.float64)
        return self.transform.gamma

    def density_curve(self, ts: np.ndarray, ev: Optional[ScheduleEvaluator] = None,
                      cfg: EngineConfig = DEFAULT_ENGINE) -> tuple[np.ndarray, np.ndarray]:
        """(f_upper, f_lower) at original times, Jacobian factors applied."""
        ev = ev or self.evaluator(cfg)
        ts = np.asarray(ts, dtype=np.float64)
        if self.transform is None:
            return ev.fptd_grid(ts, "upper"), ev.fptd_grid(ts, "lower")
        ss = np.asarray(self.transform.gamma(ts), dtype=np.float64)
        jac = np.asarray(self.transform.gamma_prime(ts), dtype=np.float64)
        return jac * ev.fptd_grid(ss, "upper"), jac * ev.fptd_grid(ss, "lower")

    def npp(self, ev: Optional[ScheduleEvaluator] = None, cfg: EngineConfig = DEFAULT_ENGINE) -> float:
        ev = ev or self.evaluator(cfg)
        return ev.npp()


def multistage_problem(s: StageSchedule, name: str = "multistage") -> Problem:
    # simulation consumes the schedule directly
    return Problem(schedule=s, transform=None, horizon=s.horizon, sim=s, name=name)


def transformed_problem(
    tr: CoordinateTransform,
    upper: Callable,
    lower: Callable,
    initial: InitialCondition,
    horizon: float,
    sim: GenericDiffusion,
    lin_ctl: InterpolationControl = InterpolationControl(),
    mandatory: tuple[float, ...] = (),
    name: str = "transformed",
) -> Problem:
    """Reduce a transformable model to a multi-stage schedule.

    Boundaries are mapped through the transform, linearized adaptively over
    the transformed horizon (with drift/diffusion switch times mapped in as
    mandatory breakpoints), and resampled on the union grid.
    """
    s_end = check_time_dilation(tr, horizon)
    ub = transform_boundary(upper, tr)
    lb = transform_boundary(lower, tr)
    mand_s = tuple(float(tr.gamma(m)) for m in mandatory)
    bu = piecewise_linearize(ub, s_end, lin_ctl, mandatory=mand_s)
    bl = piecewise_linearize(lb, s_end, lin_ctl, mandatory=mand_s)
    grid = np.unique(np.concatenate([bu.breakpoints, bl.breakpoints]))
    schedule = StageSchedule(
        breakpoints=grid,
        mu=np.zeros(grid.size - 1),
        sigma=np.ones(grid.size - 1),
        upper_values=np.asarray(ub(grid), dtype=np.float64),
        lower_values=np.asarray(lb(grid), dtype=np.float64),
        initial=transform_initial(initial, tr),
    )
    return Problem(schedule=schedule, transform=tr, horizon=horizon, sim=sim, name=name)


def parse_model_config(config: dict, lin_ctl: Optional[InterpolationControl] = None) -> Problem:
    """Build a Problem from a model configuration mapping."""
    kind = config.get("model")
    if lin_ctl is None:
        lc = config.get("linearize", {})
        lin_ctl = InterpolationControl(
            max_abs_dev=float(lc.get("max_abs_dev", 1e-4)),
            max_points=int(lc.get("max_points", 2048)),
            min_segment=float(lc.get("min_segment", 1e-5)),
        )
    if kind == "multistage":
        s = schedule_from_dict(config["schedule"])
        return multistage_problem(s)
    if kind == "nonlinear_drift":
        mu_f, switches, mu_anti = drift_from_spec(config["drift"])
        sigma = float(config.get("sigma", 1.0))
        upper = boundary_from_spec(config["upper"])
        lower = boundary_from_spec(config["lower"])
        horizon = float(config["horizon"])
        initial = initial_from_dict(config["initial"])
        tr = transform_nonlinear_drift(mu_f, sigma, antiderivative=mu_anti)
        sim = GenericDiffusion(
            mu=lambda x, t: np.full_like(np.asarray(x, dtype=np.float64), float(mu_f(t))),
            sigma=lambda x, t: np.full_like(np.asarray(x, dtype=np.float64), sigma),
            upper=upper,
            lower=lower,
            horizon=horizon,
            initial=initial,
        )
        return transformed_problem(
            tr, upper, lower, initial, horizon, sim, lin_ctl, mandatory=switches,
            name="nonlinear_drift",
        )
    if kind == "ou":
        theta = float(config["theta"])
        lam = float(config["lam"])
        sigma = float(config.get("sigma", 1.0))
        upper = boundary_from_spec(config["upper"])
        lower = boundary_from_spec(config["lower"])
        horizon = float(config["horizon"])
        initial = initial_from_dict(config["initial"])
        tr = transform_ou(theta, lam, sigma)
        sim = GenericDiffusion(
            mu=lambda x, t: theta * (lam - np.asarray(x, dtype=np.float64)),
            sigma=lambda x, t: np.full_like(np.asarray(x, dtype=np.float64), sigma),
            upper=upper,
            lower=lower,
            horizon=horizon,
            initial=initial,
        )
        return transformed_problem(
            tr, upper, lower, initial, horizon, sim, lin_ctl, name="ou"
        )
    raise ValueError(f"unknown model type: {kind!r}")
