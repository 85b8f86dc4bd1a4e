import json

import numpy as np
import pytest

from fptlik.model import (
    Boundary,
    BoundaryLabel,
    ContinuousDensity,
    DensityLattice,
    DiscreteMixture,
    MixedInitial,
    NonResponse,
    PointMass,
    Response,
    StageSchedule,
    beta_initial,
    merge_grids,
    schedule_from_dict,
    schedule_from_json,
    schedule_to_dict,
    schedule_to_json,
    uniform_initial,
    validate_schedule,
)


def test_piecewise_example_is_valid(piecewise_schedule):
    assert validate_schedule(piecewise_schedule) == []


def test_crossing_boundaries_flagged():
    bp = np.array([0.0, 1.5])
    s = StageSchedule(bp, [0.0], [1.0], 1.0 - bp, -1.0 + bp, PointMass(0.0))
    msgs = [v.message for v in validate_schedule(s)]
    assert any("cross" in m for m in msgs)


def test_point_mass_on_boundary_flagged():
    bp = np.array([0.0, 1.0])
    s = StageSchedule(bp, [0.0], [1.0], [1.0, 1.0], [-1.0, -1.0], PointMass(1.0))
    msgs = [v.message for v in validate_schedule(s)]
    assert "initial mass on boundary" in msgs


def test_negative_sigma_flagged():
    bp = np.array([0.0, 1.0])
    s = StageSchedule(bp, [0.0], [-1.0], [1.0, 1.0], [-1.0, -1.0], PointMass(0.0))
    assert any("sigma" in v.message for v in validate_schedule(s))


def test_collapse_exactly_at_horizon_allowed():
    bp = np.array([0.0, 1.0])
    s = StageSchedule(bp, [0.0], [1.0], [1.0, 0.0], [-1.0, 0.0], PointMass(0.0))
    assert validate_schedule(s) == []


def test_serialization_round_trip_bit_exact(piecewise_schedule):
    text = schedule_to_json(piecewise_schedule)
    back = schedule_from_json(text)
    assert back.breakpoints.tolist() == piecewise_schedule.breakpoints.tolist()
    assert back.mu.tolist() == piecewise_schedule.mu.tolist()
    assert back.sigma.tolist() == piecewise_schedule.sigma.tolist()
    assert back.upper_values.tolist() == piecewise_schedule.upper_values.tolist()
    assert back.lower_values.tolist() == piecewise_schedule.lower_values.tolist()
    assert back.initial == piecewise_schedule.initial
    # and the rewritten text round-trips identically too
    assert schedule_to_json(back) == text


def test_unknown_key_rejected_by_name():
    d = schedule_to_dict(
        StageSchedule(np.array([0.0, 1.0]), [0.1], [1.0], [1.0, 1.0], [-1.0, -1.0], PointMass(0.0))
    )
    d["uper_values"] = d["upper_values"]
    with pytest.raises(ValueError, match="uper_values"):
        schedule_from_dict(d)


def test_missing_key_rejected():
    with pytest.raises(ValueError, match="missing"):
        schedule_from_dict({"breakpoints": [0.0, 1.0]})


def test_initial_condition_round_trips():
    for init in (
        PointMass(-0.25),
        DiscreteMixture(np.array([-0.5, 0.25]), np.array([0.5, 0.25])),
        beta_initial(10, 25),
        uniform_initial(-0.5, 0.5),
    ):
        d = schedule_to_dict(
            StageSchedule(np.array([0.0, 1.0]), [0.1], [1.0], [2.0, 2.0], [-2.0, -2.0], init)
        )
        back = schedule_from_dict(d)
        assert json.dumps(schedule_to_dict(back)) == json.dumps(d)


def test_boundary_evaluation():
    b = Boundary(np.array([0.0, 1.0, 3.0]), np.array([1.0, 0.5, 1.5]))
    assert b(0.5) == pytest.approx(0.75)
    assert b(2.0) == pytest.approx(1.0)
    np.testing.assert_allclose(b.slopes, [-0.5, 0.5])


def test_boundary_validation():
    with pytest.raises(ValueError):
        Boundary(np.array([0.1, 1.0]), np.array([1.0, 1.0]))  # must start at 0
    with pytest.raises(ValueError):
        Boundary(np.array([0.0, 0.0]), np.array([1.0, 1.0]))  # strictly increasing


def test_merge_grids_unifies_breakpoints():
    upper = Boundary(np.array([0.0, 2.0, 5.0]), np.array([1.5, 1.0, 0.8]))
    lower = Boundary(np.array([0.0, 5.0]), np.array([-1.5, -0.5]))
    s = merge_grids([1.0, 2.5], [1.0, -0.2, 0.4], upper, lower, PointMass(0.0))
    np.testing.assert_allclose(s.breakpoints, [0.0, 1.0, 2.0, 2.5, 5.0])
    np.testing.assert_allclose(s.mu, [1.0, -0.2, -0.2, 0.4])
    np.testing.assert_allclose(s.upper_values, upper(s.breakpoints))
    assert validate_schedule(s) == []


def test_stage_accessors(piecewise_schedule):
    st = piecewise_schedule.stage(1)
    assert st.t_start == 1.0 and st.t_end == 2.5
    assert st.mu == -0.2
    assert st.a1 == pytest.approx(1.2)
    assert st.b1 == pytest.approx(-0.3)
    assert st.upper_end == pytest.approx(0.75)
    assert piecewise_schedule.stage_index_of(1.0) == 0  # breakpoints belong to the earlier stage
    assert piecewise_schedule.stage_index_of(1.0001) == 1
    with pytest.raises(ValueError):
        piecewise_schedule.stage_index_of(5.5)


def test_truncated_schedule(piecewise_schedule):
    t = piecewise_schedule.truncated(3.0)
    assert t.horizon == 3.0
    assert t.n_stages == 3
    np.testing.assert_allclose(t.upper_values, piecewise_schedule.upper(t.breakpoints))
    assert validate_schedule(t) == []


def test_observation_types():
    r = Response(0.5, "upper")
    assert r.c is BoundaryLabel.UPPER
    with pytest.raises(ValueError):
        Response(-0.5, BoundaryLabel.LOWER)
    assert isinstance(NonResponse(), NonResponse)


def test_lattice_invariants():
    with pytest.raises(ValueError):
        DensityLattice(np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([1.0, 1.0]), 0.0)
    with pytest.raises(ValueError):
        DensityLattice(np.array([0.0, 1.0]), np.array([1.0, 1.0]), np.array([-0.1, 1.0]), 0.0)
    with pytest.raises(ValueError):
        DensityLattice(np.array([0.0, 1.0]), np.array([1.0, 1.0]), np.array([1.0, 1.0]), 0.0)
    lat = DensityLattice(np.array([-0.5]), np.array([1.0]), np.array([1.0]), 0.0)
    assert lat.mass == 1.0


def test_discrete_mixture_validation():
    with pytest.raises(ValueError):
        DiscreteMixture(np.array([0.0, 0.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        DiscreteMixture(np.array([0.0, 0.5]), np.array([0.8, 0.8]))
    sub = DiscreteMixture(np.array([-0.2, 0.2]), np.array([0.3, 0.4]))
    assert sub.mass() == pytest.approx(0.7)


def test_mixed_initial_mass():
    mix = MixedInitial(
        DiscreteMixture(np.array([0.0]), np.array([0.25])),
        ContinuousDensity(lambda x: 0.75 * np.ones_like(x) / 1.0, (-0.5, 0.5)),
    )
    assert mix.mass() == pytest.approx(1.0, abs=1e-10)
