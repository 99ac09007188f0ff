import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newtonscheme import fit as fitmod
from newtonscheme.basis import CONST, COS, EXP, LIN, LOG, QUAD, SIN, BasisTerm, Library, build_design_matrix
from newtonscheme.errors import DegenerateDesignError
from newtonscheme.fit import (
    CandidateModel,
    FitConfig,
    FitResult,
    ModelDescriptor,
    fit_trajectory,
    force_of,
    init_params,
    refine_nonlinear,
    select_model,
    solve_linear,
)
from newtonscheme.scenario import CurveBall, DampedPendulum, FreeFall, ScenarioSpec, evaluate, generate

TWO_PI = 2 * math.pi
DAMPED_PAIR = (BasisTerm.of(EXP, COS), BasisTerm.of(EXP, SIN))


def support(model):
    return {str(t) for t in model.terms}


@pytest.fixture(scope="module")
def pendulum():
    spec = ScenarioSpec(DampedPendulum(1, 0.1, TWO_PI, 0), 0, 10, 100)
    traj = generate(spec)
    return spec, traj, select_model(traj.times, traj.channel("x"))


@pytest.fixture(scope="module")
def free_fall():
    traj = generate(ScenarioSpec(FreeFall(10, 0, -9.8), 0, 10, 100))
    return traj, select_model(traj.times, traj.channel("x"))


# -- solve_linear ----------------------------------------------------------------


def test_solve_constant():
    coef, rmse = solve_linear(np.ones((3, 1)), [2, 2, 2])
    np.testing.assert_allclose(coef, [2], rtol=1e-15)
    assert rmse == pytest.approx(0, abs=1e-15)


def test_solve_exact_line():
    coef, rmse = solve_linear([[1, 0], [1, 1], [1, 2]], [0, 3, 6])
    np.testing.assert_allclose(coef, [0, 3], rtol=1e-15, atol=1e-14)
    assert rmse == pytest.approx(0, abs=1e-14)


def test_solve_mean():
    coef, rmse = solve_linear([[1], [1]], [0, 1])
    assert coef[0] == pytest.approx(0.5, rel=1e-15)
    assert rmse == pytest.approx(0.5, rel=1e-15)


def test_solve_degenerate():
    t = np.linspace(0, 1, 20)
    design = np.column_stack([t, 2 * t])
    with pytest.raises(DegenerateDesignError) as info:
        solve_linear(design, t)
    assert info.value.condition > 1e8


def test_solve_shape_errors():
    with pytest.raises(ValueError):
        solve_linear(np.ones((2, 3)), [1, 2])
    with pytest.raises(ValueError):
        solve_linear(np.ones((3, 1)), [1, 2])


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 60))
def test_solve_matches_normal_equations(seed, n):
    rng = np.random.default_rng(seed)
    # orthonormal columns scaled to a mild condition number
    q, _ = np.linalg.qr(rng.normal(size=(n, 3)))
    design = q @ np.diag([1.0, 0.5, 0.2]) @ np.linalg.qr(rng.normal(size=(3, 3)))[0]
    obs = rng.normal(size=n)
    coef, rmse = solve_linear(design, obs)
    brute = np.linalg.solve(design.T @ design, design.T @ obs)
    np.testing.assert_allclose(coef, brute, atol=1e-10, rtol=0)
    assert rmse == pytest.approx(np.linalg.norm(design @ brute - obs) / math.sqrt(n), abs=1e-10)


# -- init_params -----------------------------------------------------------------


def test_omega_start_from_crossings():
    t = np.arange(1000) / 100
    starts = init_params([BasisTerm.of(COS)], t, np.cos(TWO_PI * t))
    assert starts[0]["omega"] == pytest.approx(TWO_PI, rel=0.01)


def test_omega_start_exact_crossing_count():
    # 20 sign changes of the mean-removed signal over 10 s
    t = np.linspace(0, 10, 1001)
    y = np.cos(TWO_PI * t + 0.1)
    assert fitmod._zero_crossings(y - y.mean()) == 20
    starts = init_params([BasisTerm.of(COS)], t, y)
    assert starts[0]["omega"] == pytest.approx(math.pi * 20 / 10, rel=1e-12)


def test_gamma_start_from_envelope():
    t = np.arange(1000) / 100
    y = np.exp(-0.1 * t) * np.cos(TWO_PI * t)
    starts = init_params(list(DAMPED_PAIR), t, y)
    assert starts[0]["gamma"] == pytest.approx(0.1, rel=0.01)


def test_no_nonlinear_family():
    assert init_params([BasisTerm.of(CONST), BasisTerm.of(QUAD)], np.arange(5.0), np.zeros(5)) == [{}]


def test_tau_grid_and_cap():
    t = np.arange(300) / 100
    starts = init_params([BasisTerm.of(LOG)], t, np.log1p(t), FitConfig(max_starts=10))
    taus = sorted(s["tau"] for s in starts)
    span = t[-1] - t[0]
    assert taus[0] == pytest.approx(0.1 * span) and taus[-1] == pytest.approx(10 * span)
    assert len(init_params([BasisTerm.of(LOG)], t, np.log1p(t), FitConfig(max_starts=2))) == 2


def test_init_needs_four_samples():
    with pytest.raises(ValueError):
        init_params([BasisTerm.of(COS)], [0, 1, 2], [1, 0, 1])


# -- refine_nonlinear ------------------------------------------------------------


def test_refine_damped_pair_from_nearby_start():
    t = np.arange(1000) / 100
    y = np.exp(-0.1 * t) * np.cos(TWO_PI * t)
    model = refine_nonlinear(DAMPED_PAIR, {"gamma": 0.11, "omega": TWO_PI * 0.95}, t, y)
    assert model.params["gamma"] == pytest.approx(0.1, rel=1e-6)
    assert model.params["omega"] == pytest.approx(TWO_PI, rel=1e-6)
    assert model.rmse < 1e-10
    assert model.converged


def test_refine_linear_subset_single_solve(monkeypatch):
    calls = []
    real = fitmod._lstsq_rows

    def counting(*args, **kwargs):
        calls.append(1)
        return real(*args, **kwargs)

    monkeypatch.setattr(fitmod, "_lstsq_rows", counting)
    t = np.arange(10.0)
    model = refine_nonlinear([BasisTerm.of(CONST), BasisTerm.of(LIN)], {}, t, 1 + 2 * t)
    assert len(calls) == 1
    assert model.params == {}
    np.testing.assert_allclose(model.coefficients, [1, 2])


def test_refine_gamma_to_lower_bound():
    t = np.arange(1000) / 100
    y = np.cos(TWO_PI * t)
    model = refine_nonlinear((BasisTerm.of(EXP, COS),), {"gamma": 0.05, "omega": TWO_PI * 1.02}, t, y)
    assert abs(model.params["gamma"]) < 1e-6
    assert model.params["omega"] == pytest.approx(TWO_PI, rel=1e-6)


def test_refine_bad_start_is_flagged():
    t = np.arange(10.0)
    model = refine_nonlinear([BasisTerm.of(LOG)], {"tau": -1.0}, t, t)
    assert model.rmse == math.inf and not model.converged


@settings(max_examples=40)
@given(
    gamma0=st.floats(0.0, 1.0),
    omega0=st.floats(1.0, 12.0),
    seed=st.integers(0, 1000),
)
def test_refinement_is_monotone(gamma0, omega0, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(400) / 100
    y = np.exp(-0.2 * t) * np.cos(5.0 * t + 0.3) + 0.01 * rng.normal(size=t.size)
    start = {"gamma": gamma0, "omega": omega0}
    try:
        _, start_rmse = solve_linear(build_design_matrix(DAMPED_PAIR, start, t), y)
    except DegenerateDesignError:
        start_rmse = math.inf
    model = refine_nonlinear(DAMPED_PAIR, start, t, y)
    assert model.rmse <= start_rmse


# -- select_model ----------------------------------------------------------------


def test_free_fall_support(free_fall):
    _, result = free_fall
    assert result.accepted
    assert support(result.model) == {"1", "t^2"}
    np.testing.assert_allclose(result.model.coefficients, [10, -4.9], rtol=1e-12)
    assert result.model.rmse < 1e-10


def test_constant_trajectory():
    t = np.arange(50) / 10
    result = select_model(t, np.full(t.size, 3.0))
    assert support(result.model) == {"1"}
    assert result.model.coefficients[0] == pytest.approx(3.0, rel=1e-15)
    assert result.candidates_evaluated == 1


def test_polynomial_library_rejects_pendulum(pendulum):
    _, traj, _ = pendulum
    result = select_model(traj.times, traj.channel("x"), Library.polynomial_only())
    assert not result.accepted
    assert result.model.rmse > 1e6 * result.rmse_threshold


def test_pendulum_recovery(pendulum):
    _, _, result = pendulum
    assert result.accepted
    # zero phase needs no sine column
    assert result.model.terms == DAMPED_PAIR[:1]
    assert result.model.params["gamma"] == pytest.approx(0.1, rel=1e-6)
    assert result.model.params["omega"] == pytest.approx(TWO_PI, rel=1e-6)
    assert result.model.coefficients[0] == pytest.approx(1.0, rel=1e-6)


def test_phase_shifted_pendulum_uses_pair():
    params = DampedPendulum(1.5, 0.2, 4.0, 1.0)
    traj = generate(ScenarioSpec(params, 0, 6, 100))
    result = select_model(traj.times, traj.channel("x"))
    assert result.model.terms == DAMPED_PAIR
    a, phi = result.model.amplitude_phase()["exp(-gamma*t)*cos(omega*t-phi)"]
    assert a == pytest.approx(1.5, rel=1e-6) and phi == pytest.approx(1.0, abs=1e-6)


def test_insufficient_samples():
    with pytest.raises(ValueError):
        select_model(np.arange(5.0), np.zeros(5))
    with pytest.raises(ValueError):
        select_model(np.arange(7.0), np.zeros(7), config=FitConfig(max_terms=4))


def test_exhaustive_mode_returns_first_accepted():
    t = np.arange(60) / 10
    y = 2 + 3 * t
    quick = select_model(t, y, Library.polynomial_only())
    full = select_model(t, y, Library.polynomial_only(), FitConfig(exhaustive=True))
    assert quick.model.terms == full.model.terms
    assert full.candidates_evaluated == 25 > quick.candidates_evaluated


def test_rejected_tie_break_prefers_fewer_terms():
    # pure noise: nothing is accepted, the minimum rmse wins
    rng = np.random.default_rng(3)
    t = np.arange(60) / 10
    y = rng.normal(size=t.size)
    result = select_model(t, y, Library.polynomial_only(), FitConfig(max_terms=2))
    assert not result.accepted
    assert result.candidates_evaluated == 15
    assert result.model.rmse == min(
        select_model(t, y, Library.polynomial_only(), FitConfig(max_terms=2, exhaustive=True)).model.rmse,
        result.model.rmse,
    )


def test_determinism(pendulum):
    _, traj, first = pendulum
    again = select_model(traj.times, traj.channel("x"))
    assert again.to_dict() == first.to_dict()


# -- force_of --------------------------------------------------------------------


def test_free_fall_force_centigram(free_fall):
    _, result = free_fall
    total, parts = force_of(result.model, 0.01, np.array([0.0, 3.0, 17.0]))
    np.testing.assert_allclose(total, -0.098, rtol=1e-10)
    np.testing.assert_allclose(parts.sum(axis=0), total, rtol=1e-15)


def test_free_fall_force_ten_milligram(free_fall):
    _, result = free_fall
    total, _ = force_of(result.model, 1e-5, 4.0)
    assert total == pytest.approx(-9.8e-5, rel=1e-10)


def test_pendulum_force_at_zero(pendulum):
    _, _, result = pendulum
    total, parts = force_of(result.model, 1.0, 0.0)
    assert total == pytest.approx(0.1**2 - TWO_PI**2, rel=1e-6)
    assert total == pytest.approx(-39.468, abs=1e-3)
    assert parts.sum() == pytest.approx(total, rel=1e-14)


def test_force_needs_positive_mass(free_fall):
    with pytest.raises(ValueError):
        force_of(free_fall[1].model, 0.0, 1.0)


@given(mass=st.floats(1e-6, 1e3), t=st.floats(0, 30))
def test_force_linear_in_mass(pendulum, mass, t):
    model = pendulum[2].model
    assert force_of(model, 2 * mass, t)[0] == 2 * force_of(model, mass, t)[0]


# -- whole-fit properties --------------------------------------------------------


@settings(max_examples=25)
@given(
    x0=st.floats(-50, 50).filter(lambda v: abs(v) > 0.5),
    v0=st.floats(-20, 20).filter(lambda v: abs(v) > 0.5),
    accel=st.floats(-20, 20).filter(lambda v: abs(v) > 0.5),
    start=st.floats(0, 5),
    n=st.integers(50, 400),
)
def test_free_fall_exact_recovery(x0, v0, accel, start, n):
    t = start + np.arange(n) / 100
    y = evaluate(FreeFall(x0, v0, accel), t).channel("x")
    result = select_model(t, y)
    assert result.accepted
    assert result.model.rmse < 1e-8 * result.data_scale
    assert len(result.model.terms) <= 3
    assert support(result.model) == {"1", "t", "t^2"}
    np.testing.assert_allclose(result.model.coefficients, [x0, v0, accel / 2], rtol=1e-6)


@pytest.mark.parametrize(
    "params",
    [DampedPendulum(2.0, 0.3, 3.0, -1.0), DampedPendulum(0.5, 0.0, 5.0, 2.0), DampedPendulum(1.0, 0.05, 1.5, 0.4)],
)
def test_pendulum_exact_recovery_and_extrapolation(params):
    T = 8.0
    traj = generate(ScenarioSpec(params, 0, T, 100))
    result = select_model(traj.times, traj.channel("x"))
    assert result.accepted
    assert len(result.model.terms) <= 2
    if params.gamma > 0:
        assert result.model.params["gamma"] == pytest.approx(params.gamma, rel=1e-6)
    assert result.model.params["omega"] == pytest.approx(params.omega, rel=1e-6)
    later = np.linspace(T, 2 * T, 400)
    err = np.abs(result.model(later) - evaluate(params, later).channel("x"))
    assert err.max() < 1e-6 * result.data_scale


def test_free_fall_extrapolation(free_fall):
    _, result = free_fall
    later = np.linspace(10, 20, 200)
    err = np.abs(result.model(later) - evaluate(FreeFall(10, 0, -9.8), later).channel("x"))
    assert err.max() < 1e-6 * result.data_scale


def test_arc_length_channel():
    traj = generate(ScenarioSpec(CurveBall(L=20, tau=1), 0, 3, 100))
    result = select_model(traj.times, traj.channel("s"))
    assert result.accepted
    assert support(result.model) == {"log(t/tau+1)"}
    assert result.model.params["tau"] == pytest.approx(1.0, rel=1e-6)
    assert result.model.coefficients[0] == pytest.approx(20.0, rel=1e-6)


def test_mass_does_not_affect_fit():
    a = generate(ScenarioSpec(FreeFall(), 0, 5, 100, mass=1e-5))
    b = generate(ScenarioSpec(FreeFall(), 0, 5, 100, mass=70.0))
    assert fit_trajectory(a).to_dict() == fit_trajectory(b).to_dict()


# -- serialization ---------------------------------------------------------------


def test_descriptor_round_trip(pendulum):
    spec, traj, _ = pendulum
    model = fit_trajectory(traj, provenance=spec.to_dict())
    text = model.to_json()
    back = ModelDescriptor.from_json(text)
    assert back.to_json() == text
    np.testing.assert_array_equal(back.predict(traj.times).values, model.predict(traj.times).values)
    assert back.fit_window == (0.0, 10.0)


@given(
    coefs=st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2),
    gamma=st.floats(0, 5),
    omega=st.floats(1e-3, 1e3),
    rmse=st.floats(0, 1),
)
def test_candidate_round_trip(coefs, gamma, omega, rmse):
    model = CandidateModel(DAMPED_PAIR, {"gamma": gamma, "omega": omega}, coefs, rmse, 3.5)
    result = FitResult(model, 2.0, 17, False, 2e-8)
    back = FitResult.from_dict(result.to_dict())
    assert back.to_dict() == result.to_dict()
    np.testing.assert_array_equal(back.model.coefficients, model.coefficients)


def test_descriptor_rejects_foreign_documents():
    with pytest.raises(ValueError):
        ModelDescriptor.from_dict({"format": "other"})
    with pytest.raises(ValueError):
        ModelDescriptor.from_dict({"format": fitmod.MODEL_FORMAT, "version": 99})


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(max_terms=0)
    with pytest.raises(ValueError):
        FitConfig(rmse_accept=0)
