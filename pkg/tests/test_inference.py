import math

import numpy as np
import pytest

from fptlik.engine import EngineConfig, evaluate_observation
from fptlik.inference import (
    AddmParams,
    FitControl,
    TrialRecord,
    bootstrap_ci,
    build_addm_schedule,
    dataset_loglik,
    dataset_loglik_detailed,
    fit_mle,
    mcmc_sample,
    read_trials_csv,
    trial_loglik,
    trial_schedule,
    write_trials_csv,
)
from fptlik.model import BoundaryLabel, NonResponse, PointMass, Response, StageSchedule
from fptlik.simulate import FixationProcess, simulate_addm_dataset
from fptlik.single_stage import fptd_single


def test_params_validation():
    with pytest.raises(ValueError):
        AddmParams(eta=1.2, kappa=0.5, a=2.0, b=0.3, x0=0.0)
    with pytest.raises(ValueError):
        AddmParams(eta=0.5, kappa=-0.5, a=2.0, b=0.3, x0=0.0)
    with pytest.raises(ValueError):
        AddmParams(eta=0.5, kappa=0.5, a=2.0, b=0.3, x0=2.5)


def test_single_fixation_schedule(addm_truth):
    s = build_addm_schedule(addm_truth, [(10.0, "A")], 5.0, 3.0)
    assert s.n_stages == 1
    assert s.mu[0] == pytest.approx(1.45)
    assert s.horizon == pytest.approx(2.1 / 0.3)
    assert s.upper_values[0] == pytest.approx(2.1)
    assert s.lower_values[-1] == pytest.approx(-2.1 + 0.3 * 7.0)


def test_alternating_equal_ratings(addm_truth):
    s = build_addm_schedule(addm_truth, [(0.5, "A"), (0.5, "B"), (9.0, "A")], 4.0, 4.0)
    want = 0.5 * 4.0 * (1 - 0.7)
    np.testing.assert_allclose(s.mu, [want, -want, want])


def test_single_stage_trial_loglik(addm_truth):
    trial = TrialRecord(
        observation=Response(0.9, BoundaryLabel.UPPER), fixations=((10.0, "A"),), r_a=5, r_b=3
    )
    got = trial_loglik(trial, addm_truth)
    want = fptd_single(0.9, 1.45, 1.0, 2.1, -0.3, -2.1, 0.3, 7.0, -0.2)
    assert got == pytest.approx(math.log(want), rel=1e-10)


def test_duplicated_trials_double_loglik(addm_trials_5k, addm_truth, fast_cfg):
    sub = addm_trials_5k[:50]
    one = dataset_loglik(sub, addm_truth, fast_cfg)
    two = dataset_loglik(list(sub) + list(sub), addm_truth, fast_cfg)
    assert two == pytest.approx(2 * one, abs=1e-10)


def test_permutation_invariance(addm_trials_5k, addm_truth, fast_cfg):
    sub = list(addm_trials_5k[:200])
    fwd = dataset_loglik(sub, addm_truth, fast_cfg)
    rev = dataset_loglik(sub[::-1], addm_truth, fast_cfg)
    assert abs(fwd - rev) < 1e-12 * abs(fwd)


def test_zero_density_trial_reports_index(addm_truth, fast_cfg):
    good = TrialRecord(Response(1.0, BoundaryLabel.UPPER), ((10.0, "A"),), 5, 3)
    # response after the boundaries have collapsed is impossible
    bad = TrialRecord(Response(6.99, BoundaryLabel.UPPER), ((10.0, "A"),), 5, 3)
    res = dataset_loglik_detailed([good, bad, good], addm_truth, fast_cfg)
    assert res.value == -math.inf
    assert res.n_zero == 1
    assert res.zero_trials.tolist() == [1]


def test_response_only_product_consistency(addm_trials_5k, addm_truth, fast_cfg):
    sub = list(addm_trials_5k[:10])
    ll = dataset_loglik(sub, addm_truth, fast_cfg)
    prod = 1.0
    for tr in sub:
        prod *= math.exp(trial_loglik(tr, addm_truth, fast_cfg))
    assert math.exp(ll) == pytest.approx(prod, rel=1e-12)


def test_loglik_is_pure_function(addm_trials_5k, addm_truth, fast_cfg):
    sub = addm_trials_5k[:100]
    a = dataset_loglik(sub, addm_truth, fast_cfg)
    b = dataset_loglik(sub, addm_truth, fast_cfg)
    assert a == b  # bit-for-bit


def test_parallel_matches_serial(addm_trials_5k, addm_truth, fast_cfg):
    sub = addm_trials_5k[:1200]
    serial = dataset_loglik(sub, addm_truth, fast_cfg, n_workers=1)
    par = dataset_loglik(sub, addm_truth, fast_cfg, n_workers=2)
    assert abs(par - serial) <= 1e-10 * abs(serial)


def test_nonresponse_uses_nonpassage_mass(addm_truth, fast_cfg):
    trial = TrialRecord(NonResponse(), ((10.0, "A"),), 3, 3, None)
    ll = trial_loglik(trial, addm_truth, fast_cfg, horizon=1.0)
    s = build_addm_schedule(addm_truth, [(10.0, "A")], 3, 3, horizon=1.0)
    from fptlik.engine import npp

    assert ll == pytest.approx(math.log(npp(s, fast_cfg)), rel=1e-12)


def test_fast_path_matches_engine(addm_trials_5k, addm_truth):
    cfg = EngineConfig(interior_order=30, final_order=35)
    worst = 0.0
    for tr in addm_trials_5k[:150]:
        s = trial_schedule(tr, addm_truth, None)
        want = evaluate_observation(s, tr.observation, cfg)
        got = math.exp(trial_loglik(tr, addm_truth, cfg))
        worst = max(worst, abs(got - want) / want)
    assert worst < 1e-10


def test_explicit_schedule_trial(piecewise_schedule, fast_cfg):
    trial = TrialRecord(observation=Response(0.8, BoundaryLabel.UPPER), schedule=piecewise_schedule)
    ll = trial_loglik(trial, None, fast_cfg)
    want = evaluate_observation(piecewise_schedule, trial.observation, fast_cfg)
    assert ll == pytest.approx(math.log(want), rel=1e-12)


def test_trial_record_validation():
    with pytest.raises(ValueError):
        TrialRecord(Response(1.0, BoundaryLabel.UPPER))  # no covariates, no schedule
    with pytest.raises(ValueError):
        TrialRecord(Response(1.0, BoundaryLabel.UPPER), ((-1.0, "A"),), 3, 3)


def test_kappa_only_fit_recovers(addm_trials_5k, addm_truth, fast_cfg):
    trials = addm_trials_5k[:800]
    init = AddmParams(eta=0.7, kappa=0.35, a=2.1, b=0.3, x0=-0.2)
    fit = fit_mle(trials, init, free=("kappa",), cfg=fast_cfg, ctl=FitControl(max_restarts=2))
    assert fit.converged
    assert abs(fit.params.kappa - 0.5) < 0.05
    ll_truth = dataset_loglik(trials, addm_truth, fast_cfg)
    assert fit.loglik >= ll_truth - 1e-6


def test_fit_rejects_bad_init(addm_trials_5k, addm_truth, fast_cfg):
    init = AddmParams(eta=0.7, kappa=4.9, a=2.1, b=0.3, x0=-0.2)
    with pytest.raises(ValueError, match="bounds"):
        fit_mle(addm_trials_5k[:10], init, bounds={"kappa": (0.1, 2.0)}, cfg=fast_cfg)


def test_fit_resume_converges_immediately(addm_trials_5k, fast_cfg):
    trials = addm_trials_5k[:400]
    init = AddmParams(eta=0.7, kappa=0.4, a=2.1, b=0.3, x0=-0.2)
    first = fit_mle(trials, init, free=("kappa",), cfg=fast_cfg)
    resumed = fit_mle(trials, first.params, free=("kappa",), cfg=fast_cfg)
    assert resumed.iterations <= 2
    assert abs(resumed.params.kappa - first.params.kappa) < 1e-3


def test_mcmc_point_mass_prior_constant_chain(addm_trials_5k, addm_truth, fast_cfg):
    init = addm_truth

    def prior(p):
        return 1.0 if p.kappa == init.kappa else 0.0

    res = mcmc_sample(
        addm_trials_5k[:50], prior, init, n_burn=5, n_draws=40, proposal_scale=0.05,
        seed=4, free=("kappa",), cfg=fast_cfg,
    )
    assert np.all(res.chain == init.kappa)
    assert res.acceptance_rate == 0.0


def test_mcmc_seeded_determinism(addm_trials_5k, addm_truth, fast_cfg):
    kw = dict(n_burn=10, n_draws=30, proposal_scale=0.02, free=("kappa",), cfg=fast_cfg)
    a = mcmc_sample(addm_trials_5k[:60], None, addm_truth, seed=9, **kw)
    b = mcmc_sample(addm_trials_5k[:60], None, addm_truth, seed=9, **kw)
    assert np.array_equal(a.chain, b.chain)
    c = mcmc_sample(addm_trials_5k[:60], None, addm_truth, seed=10, **kw)
    assert not np.array_equal(a.chain, c.chain)


def test_mcmc_zero_prior_at_init_raises(addm_trials_5k, addm_truth, fast_cfg):
    with pytest.raises(ValueError):
        mcmc_sample(
            addm_trials_5k[:20], lambda p: 0.0, addm_truth, n_burn=1, n_draws=2,
            proposal_scale=0.05, free=("kappa",), cfg=fast_cfg,
        )


def test_bootstrap_degenerate_zero_width(addm_truth, fast_cfg):
    trial = TrialRecord(Response(1.1, BoundaryLabel.UPPER), ((10.0, "A"),), 4, 2)
    trials = [trial] * 40
    fit = fit_mle(trials, addm_truth, free=("kappa",), cfg=fast_cfg)
    boot = bootstrap_ci(
        trials, fit.params, n_resamples=1, level=0.95, seed=0, free=("kappa",), cfg=fast_cfg
    )
    lo, hi = boot.intervals["kappa"]
    assert hi - lo < 1e-6
    assert boot.n_failed == 0


def test_bootstrap_width_shrinks_with_n(addm_trials_5k, addm_truth, fast_cfg):
    """Interval width scales roughly like 1/sqrt(n)."""
    widths = []
    for n in (400, 1600):
        trials = addm_trials_5k[:n]
        fit = fit_mle(trials, addm_truth, free=("kappa",), cfg=fast_cfg,
                      ctl=FitControl(max_restarts=1))
        boot = bootstrap_ci(
            trials, fit.params, n_resamples=40, level=0.95, seed=1, free=("kappa",),
            cfg=fast_cfg, ctl=FitControl(max_restarts=1, max_iter=200),
        )
        lo, hi = boot.intervals["kappa"]
        widths.append(hi - lo)
    ratio = widths[0] / widths[1]
    assert 1.3 < ratio < 3.2  # ideal 2.0 for a 4x sample increase


def test_trials_csv_round_trip(tmp_path, addm_trials_5k):
    path = tmp_path / "trials.csv"
    sub = list(addm_trials_5k[:25])
    sub.append(TrialRecord(NonResponse(), ((0.4, "B"), (0.3, "A")), 2, 5))
    write_trials_csv(sub, path)
    back = read_trials_csv(path)
    assert len(back) == len(sub)
    for a, b in zip(sub, back):
        assert type(a.observation) is type(b.observation)
        if isinstance(a.observation, Response):
            assert a.observation.t == b.observation.t
            assert a.observation.c == b.observation.c
        assert a.r_a == b.r_a and a.r_b == b.r_b
        assert len(a.fixations) == len(b.fixations)
        for (da, la), (db, lb) in zip(a.fixations, b.fixations):
            assert da == db and la == lb


def test_trials_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="columns"):
        read_trials_csv(p)


@pytest.mark.slow
def test_bootstrap_coverage_full_protocol(addm_truth):
    """95% pivotal intervals cover the truth in >= 90% of 20 replications
    (n = 2000 trials, 200 resamples each)."""
    from fptlik.simulate import simulate_addm_dataset

    cfg = EngineConfig(interior_order=10, final_order=12)
    ctl = FitControl(max_restarts=1, max_iter=100, xatol=1e-4, fatol=1e-6)
    covered = 0
    for rep in range(20):
        trials = simulate_addm_dataset(addm_truth, 2000, FixationProcess(), seed=500 + rep,
                                       step=5e-4)
        fit = fit_mle(trials, addm_truth, free=("kappa",), cfg=cfg, ctl=ctl)
        boot = bootstrap_ci(trials, fit.params, n_resamples=200, level=0.95,
                            seed=rep, free=("kappa",), cfg=cfg, ctl=ctl)
        lo, hi = boot.intervals["kappa"]
        covered += lo <= 0.5 <= hi
    assert covered >= 18


@pytest.mark.slow
def test_full_scale_recovery_50k(addm_trials_50k, addm_truth):
    """Reference-scale recovery: 50k trials, every component within ~0.01."""
    init = AddmParams(eta=0.65, kappa=0.45, a=2.0, b=0.27, x0=-0.15)
    cfg = EngineConfig(interior_order=20, final_order=25)
    fit = fit_mle(addm_trials_50k, init, cfg=cfg, n_workers=8,
                  ctl=FitControl(xatol=1e-5, fatol=1e-8, max_restarts=3))
    for k, tol in (("eta", 0.012), ("kappa", 0.012), ("a", 0.02), ("b", 0.012), ("x0", 0.02)):
        assert abs(getattr(fit.params, k) - getattr(addm_truth, k)) < tol, k
