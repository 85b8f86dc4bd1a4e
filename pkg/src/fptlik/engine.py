"""Sequential propagation of non-passage densities across stages.

The non-passage density at each stage boundary is represented by its values
at mapped Gauss-Legendre nodes (a DensityLattice).  Propagating one stage
contracts the matrix of single-stage transition densities against the
previous lattice; a first passage density at an observation time contracts
the single-stage FPTD vector instead.  Each stage transition therefore costs
one (new nodes x old nodes) series evaluation, and the density behaves as a
sub-probability Markov transition kernel: total mass never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import SeriesControl, fptd_series_canonical, npd_series_canonical
from .model import (
    BoundaryLabel,
    ContinuousDensity,
    DensityLattice,
    DiscreteMixture,
    MixedInitial,
    NonResponse,
    Observation,
    PointMass,
    Response,
    Stage,
    StageSchedule,
    ensure_valid,
)
from .quadrature import gauss_legendre, map_to_interval

COLLAPSE_GAP = 1e-12  # gap below this is treated as fully collapsed
ENVELOPE_SIGMAS = 8.0  # reachable-support padding; truncates < 1e-15 of the mass
BUMP_ORDER_CAP = 240  # ceiling for resolution-driven order increases


def _resolution_scale(lat: DensityLattice) -> float:
    """Finest feature scale the lattice can represent (0 for discrete nodes)."""
    if lat.gl_order is None or lat.support is None:
        return 0.0
    return (lat.support[1] - lat.support[0]) * (np.pi / 2.0) / lat.gl_order


def _required_order(window: float, feature: float, base: int) -> int:
    """Order needed to integrate a feature of the given width over the window.

    Calibrated on Gaussian windows: ~4 nodes per standard deviation of
    half-window, i.e. m >= 2 * window / feature, plus margin.  The increase
    is capped at twice the requested order so the configured order remains a
    meaningful accuracy knob (full resolution is reached at default orders);
    coarser configurations degrade gracefully instead of silently upgrading.
    """
    if feature <= 0:
        return base
    need = int(np.ceil(2.0 * window / feature)) + 10
    return min(max(base, need), max(2 * base, base + 16), BUMP_ORDER_CAP)


@dataclass(frozen=True)
class EngineConfig:
    """Quadrature orders and numerical policy for the propagation engine.

    final_order applies to the last lattice built before contracting an
    observation, where the integrand is less regular than in interior
    stages.  t_inflate nudges observation times away from stage starts,
    where the passage densities are singular; it is well below reaction
    time measurement error.
    """

    interior_order: int = 30
    final_order: int = 50
    series: SeriesControl = field(default_factory=SeriesControl)
    t_inflate: float = 1e-4

    def __post_init__(self):
        if self.interior_order < 2 or self.final_order < 2:
            raise ValueError("quadrature orders must be at least 2")
        if self.t_inflate < 0:
            raise ValueError("t_inflate must be nonnegative")


DEFAULT_ENGINE = EngineConfig()


def init_lattice(s: StageSchedule, cfg: EngineConfig = DEFAULT_ENGINE, order: int | None = None) -> DensityLattice:
    """Lattice representation of the initial condition at t = 0.

    Continuous parts are sampled at mapped quadrature nodes on the initial
    gap; discrete parts carry their own points as nodes, masses as weights
    and unit values.  Mixed conditions concatenate both parts (the transport
    is linear in the initial density, so superposition is exact).
    """
    order = cfg.interior_order if order is None else order
    lo0, hi0 = float(s.lower_values[0]), float(s.upper_values[0])
    return _initial_lattice(s.initial, lo0, hi0, order)


def _initial_lattice(initial, lo0, hi0, order) -> DensityLattice:
    if isinstance(initial, PointMass):
        return DensityLattice(
            nodes=np.array([initial.x0]), weights=np.array([1.0]), values=np.array([1.0]), time=0.0
        )
    if isinstance(initial, DiscreteMixture):
        return DensityLattice(
            nodes=initial.points.copy(),
            weights=initial.weights.copy(),
            values=np.ones_like(initial.points),
            time=0.0,
        )
    if isinstance(initial, ContinuousDensity):
        lo = max(lo0, initial.support[0])
        hi = min(hi0, initial.support[1])
        x, w = map_to_interval(gauss_legendre(order), lo, hi)
        return DensityLattice(
            nodes=x, weights=w, values=np.asarray(initial.pdf(x), dtype=np.float64),
            time=0.0, support=(lo, hi), gl_order=order,
        )
    if isinstance(initial, MixedInitial):
        disc = _initial_lattice(initial.discrete, lo0, hi0, order)
        cont = _initial_lattice(initial.continuous, lo0, hi0, order)
        nodes = np.concatenate([disc.nodes, cont.nodes])
        weights = np.concatenate([disc.weights, cont.weights])
        values = np.concatenate([disc.values, cont.values])
        idx = np.argsort(nodes, kind="stable")
        lo = min(disc.support[0], cont.support[0])
        hi = max(disc.support[1], cont.support[1])
        return DensityLattice(
            nodes=nodes[idx], weights=weights[idx], values=values[idx], time=0.0, support=(lo, hi)
        )
    raise TypeError(f"not an initial condition: {initial!r}")


def _canonical_sources(stage: Stage, x0: np.ndarray):
    """Shift/scale stage geometry per source point (canonical coordinates)."""
    s = stage.sigma
    return (
        stage.mu / s,
        (stage.a1 - x0) / s,
        stage.b1 / s,
        (stage.a2 - x0) / s,
        stage.b2 / s,
    )


def transition_matrix(stage: Stage, x_new: np.ndarray, x_old: np.ndarray, ctl: SeriesControl) -> np.ndarray:
    """Single-stage non-passage densities from each old node to each new node."""
    mu, a1, b1, a2, b2 = _canonical_sources(stage, x_old[None, :])
    xs = (x_new[:, None] - x_old[None, :]) / stage.sigma
    return npd_series_canonical(xs, stage.duration, mu, a1, b1, a2, b2, ctl) / stage.sigma


def fptd_vector(stage: Stage, t_local, x_old: np.ndarray, label: BoundaryLabel, ctl: SeriesControl) -> np.ndarray:
    """Single-stage FPTD at stage-local time(s) from each old node.

    t_local may be scalar or a column vector (n_t, 1) for curve evaluation.
    """
    mu, a1, b1, a2, b2 = _canonical_sources(stage, x_old[None, :])
    boundary = +1 if label is BoundaryLabel.UPPER else -1
    t_arr = np.asarray(t_local, dtype=np.float64)
    if t_arr.ndim == 0:
        t_arr = t_arr[None, None]
    return fptd_series_canonical(t_arr, mu, a1, b1, a2, b2, boundary, ctl)


def propagate_stage(
    lat: DensityLattice,
    stage: Stage,
    cfg: EngineConfig = DEFAULT_ENGINE,
    order: int | None = None,
) -> DensityLattice:
    """Transport the lattice across one stage to its end time.

    Negative values from truncation noise are clamped to zero before the
    contraction and the clamped mass is carried as a diagnostic.
    """
    if abs(lat.time - stage.t_start) > 1e-9 * max(1.0, abs(stage.t_start)):
        raise ValueError(f"lattice time {lat.time} does not match stage start {stage.t_start}")
    order = cfg.interior_order if order is None else order
    lo, hi = stage.lower_end, stage.upper_end
    if lat.nodes.size and lat.support is not None:
        # restrict to the reachable support so the quadrature resolves the
        # density even when the diffusion spread is tiny relative to the gap
        shift = stage.mu * stage.duration
        pad = ENVELOPE_SIGMAS * stage.sigma * float(np.sqrt(stage.duration))
        lo = max(lo, lat.support[0] + shift - pad)
        hi = min(hi, lat.support[1] + shift + pad)
    if hi - lo <= COLLAPSE_GAP or lat.nodes.size == 0:
        # full collapse (or unreachable window): remaining mass is absorbed
        return DensityLattice(
            nodes=np.empty(0), weights=np.empty(0), values=np.empty(0),
            time=stage.t_end, clamped_mass=lat.clamped_mass, support=None,
        )
    # resolution control: the transition kernel has width sigma*sqrt(duration),
    # which both the target rule and the source lattice must resolve
    kernel_w = stage.sigma * float(np.sqrt(stage.duration))
    src_scale = _resolution_scale(lat)
    feature = max(kernel_w, src_scale) if lat.gl_order is not None else kernel_w
    order = _required_order(hi - lo, feature, order)
    x_old, qw_old = lat.nodes, lat.values * lat.weights
    if lat.gl_order is not None and kernel_w < src_scale:
        # source nodes too coarse for the kernel: interpolate the polynomial
        # representation onto a finer rule before contracting
        from scipy.interpolate import BarycentricInterpolator

        m_src = _required_order(lat.support[1] - lat.support[0], kernel_w, order)
        if m_src > lat.gl_order:
            x_old, w_src = map_to_interval(gauss_legendre(m_src), *lat.support)
            v_src = np.maximum(
                np.asarray(BarycentricInterpolator(lat.nodes, lat.values)(x_old)), 0.0
            )
            qw_old = v_src * w_src
    x_new, w_new = map_to_interval(gauss_legendre(order), lo, hi)
    p = transition_matrix(stage, x_new, x_old, cfg.series)
    values = p @ qw_old
    clamped = float(-np.sum(np.minimum(values, 0.0) * w_new))
    values = np.maximum(values, 0.0)
    return DensityLattice(
        nodes=x_new, weights=w_new, values=values,
        time=stage.t_end, clamped_mass=lat.clamped_mass + clamped, support=(lo, hi),
        gl_order=order,
    )


# Geometric grading (as fractions of the lattice support, from each end) for
# the refined contraction grid used at small stage-local times, where the
# passage density integrand is a thin boundary layer the plain lattice
# cannot resolve.
_REFINE_FRACS = (0.0, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 0.01, 0.03, 0.08, 0.2, 0.5)
_REFINE_ORDER = 10


def _contraction_grid(lat: DensityLattice) -> tuple[np.ndarray, np.ndarray]:
    """Re-sample a quadrature lattice onto a boundary-graded composite grid.

    The lattice values are a degree-(m-1) polynomial representation of the
    non-passage density; barycentric interpolation transfers them to panels
    clustered at both support ends, where small-time contraction integrands
    concentrate.  Returns (nodes, values * weights) for direct contraction.
    """
    from scipy.interpolate import BarycentricInterpolator

    if lat.gl_order is None:
        raise ValueError("refinement requires a quadrature lattice")
    lo, hi = lat.support
    width = hi - lo
    edges_lo = lo + width * np.asarray(_REFINE_FRACS)
    edges_hi = hi - width * np.asarray(_REFINE_FRACS)[::-1]
    edges = np.concatenate([edges_lo, edges_hi[1:]])
    rule = gauss_legendre(_REFINE_ORDER)
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = map_to_interval(rule, float(a), float(b))
        xs.append(x)
        ws.append(w)
    x_ref = np.concatenate(xs)
    w_ref = np.concatenate(ws)
    interp = BarycentricInterpolator(lat.nodes, lat.values)
    v_ref = np.maximum(np.asarray(interp(x_ref), dtype=np.float64), 0.0)
    return x_ref, v_ref * w_ref


def _t_refine(lat: DensityLattice, sigma: float) -> float:
    """Stage-local time below which the refined contraction grid is needed.

    The FPTD contraction integrand has width ~ sigma*sqrt(t) in the source
    variable; the plain rule resolves it only down to several times the
    near-boundary node spacing ~ width * 2.89 / m^2.
    """
    if lat.gl_order is None or lat.support is None:
        return 0.0
    width = lat.support[1] - lat.support[0]
    h_edge = 2.89 * width / lat.gl_order**2
    return (6.0 * h_edge / sigma) ** 2


def _locate(s: StageSchedule, t: float, cfg: EngineConfig) -> tuple[int, float]:
    """Stage index and inflated stage-local time for an observation at t."""
    k = s.stage_index_of(t)
    stage = s.stage(k)
    t_local = t - stage.t_start
    t_local = min(max(t_local, cfg.t_inflate), stage.duration)
    return k, t_local


def fptd(s: StageSchedule, obs: Response, cfg: EngineConfig = DEFAULT_ENGINE) -> float:
    """Joint density of (response time, boundary) for one observation.

    Propagates through the stages before the observation, then contracts the
    single-stage FPTD vector; stages after the observation are skipped.
    """
    ensure_valid(s)
    if not isinstance(obs, Response):
        raise TypeError("fptd expects a Response observation; use npp for non-response")
    if not 0.0 < obs.t <= s.horizon:
        raise ValueError(f"response time {obs.t} outside (0, {s.horizon}]")
    k_obs, t_local = _locate(s, obs.t, cfg)
    lat = init_lattice(s, cfg, order=cfg.final_order if k_obs == 0 else cfg.interior_order)
    for k in range(k_obs):
        order = cfg.final_order if k == k_obs - 1 else cfg.interior_order
        lat = propagate_stage(lat, s.stage(k), cfg, order=order)
    if lat.nodes.size == 0:
        return 0.0
    stage = s.stage(k_obs)
    if t_local < _t_refine(lat, stage.sigma):
        nodes, qw = _contraction_grid(lat)
    else:
        nodes, qw = lat.nodes, lat.values * lat.weights
    vec = fptd_vector(stage, t_local, nodes, obs.c, cfg.series)
    return float(vec[0] @ qw)


def npp(s: StageSchedule, cfg: EngineConfig = DEFAULT_ENGINE) -> float:
    """Non-passage probability at the horizon (the non-response likelihood)."""
    ensure_valid(s)
    lat = init_lattice(s, cfg)
    d = s.n_stages
    for k in range(d):
        order = cfg.final_order if k == d - 1 else cfg.interior_order
        lat = propagate_stage(lat, s.stage(k), cfg, order=order)
    return float(min(max(lat.mass, 0.0), 1.0 + 1e-8))


class ScheduleEvaluator:
    """Propagate a schedule once and evaluate many observations against it.

    Opt-in batch mode for repeated evaluations on the *same* schedule
    (density curves, CDFs, grouped trials).  All cached lattices use a single
    quadrature order, the larger of the configured interior and final
    orders, since every lattice may serve as a contraction target.
    """

    def __init__(self, s: StageSchedule, cfg: EngineConfig = DEFAULT_ENGINE):
        ensure_valid(s)
        self.schedule = s
        self.cfg = cfg
        order = max(cfg.interior_order, cfg.final_order)
        self._lattices = [init_lattice(s, cfg, order=order)]
        for k in range(s.n_stages):
            self._lattices.append(propagate_stage(self._lattices[-1], s.stage(k), cfg, order=order))
        self._refined: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def clamped_mass(self) -> float:
        return self._lattices[-1].clamped_mass

    def lattice(self, k: int) -> DensityLattice:
        """Cached lattice at breakpoint k (0 = initial condition)."""
        return self._lattices[k]

    def _refined_grid(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        grid = self._refined.get(k)
        if grid is None:
            grid = _contraction_grid(self._lattices[k])
            self._refined[k] = grid
        return grid

    def npp(self) -> float:
        return float(min(max(self._lattices[-1].mass, 0.0), 1.0 + 1e-8))

    def fptd(self, t: float, c: BoundaryLabel | str) -> float:
        vals = self.fptd_grid(np.asarray([t]), BoundaryLabel(c))
        return float(vals[0])

    def fptd_grid(self, ts: np.ndarray, c: BoundaryLabel | str, inflate: bool = True) -> np.ndarray:
        """FPTD curve on arbitrary times in (0, horizon], vectorized per stage.

        inflate=False skips the observation-time inflation policy, for
        quadrature over the raw curve.
        """
        c = BoundaryLabel(c)
        ts = np.asarray(ts, dtype=np.float64)
        out = np.zeros(ts.shape)
        s = self.schedule
        ok = (ts > 0) & (ts <= s.horizon)
        idxs = np.full(ts.shape, -1, dtype=np.int64)
        idxs[ok] = np.searchsorted(s.breakpoints, ts[ok], side="left") - 1
        for k in range(s.n_stages):
            sel = idxs == k
            if not np.any(sel):
                continue
            lat = self._lattices[k]
            if lat.nodes.size == 0:
                continue
            stage = s.stage(k)
            floor = self.cfg.t_inflate if inflate else 0.0
            t_loc = np.minimum(np.maximum(ts[sel] - stage.t_start, floor), stage.duration)
            out[sel] = self._contract_fptd(k, stage, t_loc, c)
        return out

    def _contract_fptd(self, k: int, stage: Stage, t_loc: np.ndarray, c: BoundaryLabel) -> np.ndarray:
        lat = self._lattices[k]
        out = np.empty(t_loc.shape)
        t_ref = _t_refine(lat, stage.sigma)
        near = t_loc < t_ref
        if np.any(near):
            nodes, qw = self._refined_grid(k)
            vec = fptd_vector(stage, t_loc[near][:, None], nodes, c, self.cfg.series)
            out[near] = vec @ qw
        far = ~near
        if np.any(far):
            vec = fptd_vector(stage, t_loc[far][:, None], lat.nodes, c, self.cfg.series)
            out[far] = vec @ (lat.values * lat.weights)
        return out

    # Panel edges as stage-duration fractions: the passage density has sharp
    # features just after a stage start and near a terminal collapse, so the
    # time mesh is graded toward both stage ends.
    _PANELS = (
        0.0, 1e-10, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1,
        0.5, 0.9, 0.99, 0.999, 0.9999, 1.0,
    )

    def boundary_masses(self, order_t: int = 24) -> tuple[float, float]:
        """Time-integrated upper and lower passage masses over (0, horizon].

        order_t is the Gauss-Legendre order per graded panel within a stage.
        """
        total_u = 0.0
        total_l = 0.0
        s = self.schedule
        for k in range(s.n_stages):
            stage = s.stage(k)
            lat = self._lattices[k]
            if lat.nodes.size == 0:
                continue
            edges = np.asarray(self._PANELS) * stage.duration
            rule = gauss_legendre(order_t)
            tq = np.concatenate([map_to_interval(rule, a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
            tw = np.concatenate([map_to_interval(rule, a, b)[1] for a, b in zip(edges[:-1], edges[1:])])
            fu = self._contract_fptd(k, stage, tq, BoundaryLabel.UPPER)
            fl = self._contract_fptd(k, stage, tq, BoundaryLabel.LOWER)
            total_u += float(tw @ fu)
            total_l += float(tw @ fl)
        return total_u, total_l

    def conservation_defect(self, order_t: int = 24) -> float:
        """|upper mass + lower mass + NPP - initial mass|."""
        mu_, ml_ = self.boundary_masses(order_t)
        init_mass = self._lattices[0].mass
        return abs(mu_ + ml_ + self.npp() - init_mass)

    def cdf_grid(self, ts: np.ndarray, n_fine: int = 4096) -> np.ndarray:
        """P(tau <= t) on given times, by cumulative trapezoid of f_u + f_l."""
        s = self.schedule
        grid = np.unique(np.concatenate([np.linspace(0.0, s.horizon, n_fine), s.breakpoints]))
        dens = self.fptd_grid(grid, BoundaryLabel.UPPER) + self.fptd_grid(grid, BoundaryLabel.LOWER)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        return np.interp(ts, grid, cum)


def evaluate_observation(s: StageSchedule, obs: Observation, cfg: EngineConfig = DEFAULT_ENGINE) -> float:
    """Likelihood contribution of one observation: FPTD or NPP."""
    if isinstance(obs, Response):
        return fptd(s, obs, cfg)
    if isinstance(obs, NonResponse):
        return npp(s, cfg)
    raise TypeError(f"not an observation: {obs!r}")
