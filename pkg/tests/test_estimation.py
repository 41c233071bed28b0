import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from repmarket import (
    HIGH,
    LOW,
    TABLE3,
    EquilibriumSolution,
    EstimationConfig,
    Model,
    Panel,
    RatingGrid,
    SalesGrid,
    SimulationConfig,
    SolverOptions,
    StateSpace,
    Transform,
    TransitionKernel,
    UniformCost,
    build_model,
    log_price_density,
    maximize_likelihood,
    mixture_vendor_loglik,
    opg_covariance,
    opg_standard_errors,
    perturbed_start,
    prepare_panel,
    simulate_panel,
    solve_equilibrium,
    total_loglik,
    vendor_loglik_conditional,
)
from repmarket.estimation import LikelihoodEvaluator

from oracles import TINY, TINY_PARAMS, direct_vendor_likelihood, hand_model


# --- single-vendor factors ----------------------------------------------------


def test_hand_exit_history_is_log_0144():
    m, sol = hand_model()
    # entry (1): survive 0.8, price density 1.2 at p = belief; move to 0 w.p. 0.5; exit w.p. 0.3
    v = {"state": [1, 0], "price": [0.4, np.nan], "exited": [False, True]}
    for t in (LOW, HIGH):
        assert vendor_loglik_conditional(v, t, sol, m) == pytest.approx(math.log(0.144), abs=1e-14)


def test_hand_single_period_censored():
    m, sol = hand_model()
    v = {"state": [1], "price": [0.4], "exited": [False]}
    assert vendor_loglik_conditional(v, HIGH, sol, m) == pytest.approx(math.log(0.8 * 1.2), abs=1e-14)


def test_impossible_histories_are_minus_inf():
    m, sol = hand_model()
    # state 0 is absorbing, so 0 -> 1 cannot happen
    v = {"state": [1, 0, 1], "price": [0.4, 0.4, 0.4], "exited": [False] * 3}
    assert vendor_loglik_conditional(v, HIGH, sol, m) == -np.inf
    # not starting at the entry state
    v = {"state": [0], "price": [0.4], "exited": [False]}
    assert vendor_loglik_conditional(v, HIGH, sol, m) == -np.inf


def test_vendor_input_validation():
    m, sol = hand_model()
    with pytest.raises(ValueError):
        vendor_loglik_conditional({"state": [1, 0], "price": [np.nan, 0.4], "exited": [True, False]}, 1, sol, m)
    with pytest.raises(ValueError):
        vendor_loglik_conditional({"state": [1, 1], "price": [0.4, 0.4], "exited": [False, False],
                                   "age": [0, 2]}, 1, sol, m)


def test_mixture_examples():
    assert mixture_vendor_loglik(math.log(0.2), math.log(0.1), 0.5) == pytest.approx(math.log(0.15), abs=1e-15)
    assert mixture_vendor_loglik(-3.0, -1.0, 1.0) == -3.0
    assert mixture_vendor_loglik(-800.0, -700.0, 0.5) == pytest.approx(-700 + math.log(0.5), abs=1e-12)
    assert mixture_vendor_loglik(-np.inf, -np.inf, 0.3) == -np.inf
    out = mixture_vendor_loglik(np.array([-1.0, -2.0]), np.array([-1.0, -np.inf]), 0.25)
    assert out == pytest.approx([-1.0, -2.0 + math.log(0.25)])


def test_log_price_density_matches_scipy():
    p = np.array([0.2, 0.35, 0.6])
    got = log_price_density(p, 0.35, 0.144)
    ref = stats.lognorm(s=0.144, scale=0.35).logpdf(p)
    assert np.allclose(got, ref, atol=1e-12)
    got = log_price_density(np.array([0.5, 0.3]), 0.35, 0.144, "additive")
    assert got[0] == pytest.approx(stats.lognorm(s=0.144, scale=1.0).logpdf(0.15), abs=1e-12)
    assert got[1] == -np.inf


# --- brute-force oracle on a tiny model ------------------------------------------


def test_panel_likelihood_matches_brute_force():
    m = build_model(TINY_PARAMS, TINY)
    sol = solve_equilibrium(m)
    panel = simulate_panel(sol, m, SimulationConfig(n_vendors=20, horizon_weeks=5, seed=4))
    cfg = EstimationConfig(space=TINY, base_params=TINY_PARAMS)
    got = total_loglik(panel, TINY_PARAMS, cfg)
    starts, stops = panel.vendor_slices()
    ref = 0.0
    for a, b in zip(starts, stops):
        st_, pr, ex = panel.state[a:b], panel.price[a:b], bool(panel.exited[b - 1])
        if b - a == 1 and ex:
            continue
        lh = direct_vendor_likelihood(st_, pr, ex, HIGH, sol, m)
        ll = direct_vendor_likelihood(st_, pr, ex, LOW, sol, m)
        ref += math.log(TINY_PARAMS.alpha * lh + (1 - TINY_PARAMS.alpha) * ll)
    assert abs(got - ref) < 1e-10
    assert panel.n_vendors == 20 and panel.age.max() <= 4


# --- panel-level properties --------------------------------------------------------


@pytest.fixture(scope="module")
def est():
    m = build_model(space=StateSpace.estimation())
    sol = solve_equilibrium(m)
    panel = simulate_panel(sol, m, SimulationConfig(n_vendors=600, seed=21))
    return m, sol, panel


def _duplicate(panel):
    n = panel.n_vendors
    rows = {c: np.concatenate([getattr(panel, c), getattr(panel, c)])
            for c in ("week", "age", "state", "rating", "bucket", "price", "exited")}
    rows["vendor_id"] = np.concatenate([panel.vendor_id, panel.vendor_id + n])
    vend = {c: np.concatenate([getattr(panel, c), getattr(panel, c)])
            for c in ("entry_week", "censored", "true_type")}
    vend["ids"] = np.concatenate([panel.ids, panel.ids + n])
    return Panel(**rows, **vend, space=panel.space)


def test_duplicate_panel_doubles_loglik(est):
    _, _, panel = est
    one = total_loglik(panel, TABLE3)
    two = total_loglik(_duplicate(panel), TABLE3)
    assert two == 2 * one


def test_empty_panel_scores_zero(est):
    _, _, panel = est
    assert total_loglik(panel.select([]), TABLE3) == 0.0


def test_truth_dominates_alpha_perturbations(est):
    _, _, panel = est
    at_truth = total_loglik(panel, TABLE3)
    for d in (-0.15, 0.15):
        assert at_truth > total_loglik(panel, TABLE3.replace(alpha=TABLE3.alpha + d))


def test_sub_panel_logliks_add_up(est):
    _, _, panel = est
    ids = panel.ids
    a = total_loglik(panel.select(ids[ids % 2 == 0]), TABLE3)
    b = total_loglik(panel.select(ids[ids % 2 == 1]), TABLE3)
    assert a + b == pytest.approx(total_loglik(panel, TABLE3), abs=1e-8)


def test_prepare_panel_exclusions(est):
    m, _, panel = est
    prep = prepare_panel(panel, m.space)
    starts, stops = panel.vendor_slices()
    single_exit = int(((stops - starts == 1) & panel.exited[starts]).sum())
    assert prep.excluded["single_week_exit"] == single_exit
    assert prep.n_vendors == panel.n_vendors - single_exit
    with pytest.raises(ValueError):
        prepare_panel(panel, StateSpace.default())


def test_inner_failure_scores_minus_inf(est):
    _, _, panel = est
    cfg = EstimationConfig(solver=SolverOptions(max_iter=1, root_fallback=False))
    ev = LikelihoodEvaluator(panel, cfg)
    assert ev.total(TABLE3, warm=False) == -np.inf
    assert ev.inner_failures == 1
    assert ev.objective(cfg.to_coords(TABLE3)) == np.inf


def test_warm_and_cold_evaluations_agree(est):
    _, _, panel = est
    cfg = EstimationConfig()
    ev = LikelihoodEvaluator(panel, cfg)
    ev.total(TABLE3.replace(alpha=0.25), warm=True)
    warm = ev.total(TABLE3, warm=True)
    cold = ev.total(TABLE3, warm=False)
    assert warm == pytest.approx(cold, abs=1e-6)


def test_default_evaluation_does_not_depend_on_history(est):
    # at alpha = 0.35 the solver lands on an equilibrium where nobody exits; a
    # warm start from it stays there at the true alpha, where a cold start finds
    # the equilibrium with exits
    _, _, panel = est
    ev = LikelihoodEvaluator(panel, EstimationConfig())
    ref = ev.total(TABLE3)
    ev.total(TABLE3.replace(alpha=0.35))
    assert ev.total(TABLE3) == ref
    ev.total(TABLE3.replace(alpha=0.35))
    assert ev.total(TABLE3, warm=True) < ref - 1e4


# --- transforms and configuration -------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["logit", "log", "identity"]), st.floats(-8, 8))
def test_transform_round_trip(kind, x):
    t = Transform(kind, 0.0, 1.0) if kind != "log" else Transform(kind, 0.0)
    v = t.inverse(x)
    assert t.forward(v) == pytest.approx(x, abs=1e-9)
    h = 1e-6
    fd = (t.inverse(x + h) - t.inverse(x - h)) / (2 * h)
    assert t.derivative(x) == pytest.approx(fd, rel=1e-5, abs=1e-12)


def test_transform_boundary_is_rejected():
    with pytest.raises(ValueError):
        Transform("logit").inverse(50.0)
    with pytest.raises(ValueError):
        Transform("kind")


def test_config_rejects_fixed_parameters():
    with pytest.raises(ValueError):
        EstimationConfig(free_parameters=("alpha", "beta"))
    with pytest.raises(ValueError):
        EstimationConfig(free_parameters=("sigma_c",))
    with pytest.raises(ValueError):
        EstimationConfig(free_parameters=("alpha", "alpha"))


def test_perturbed_start_moves_transformed_coordinates():
    cfg = EstimationConfig()
    s = perturbed_start(cfg, TABLE3)
    x0, x1 = cfg.to_coords(TABLE3), cfg.to_coords(s)
    assert np.allclose(np.abs(x1 - x0), 0.2 * np.abs(x0), rtol=1e-12)


# --- OPG --------------------------------------------------------------------------


def test_opg_closed_form_one_parameter():
    g = 0.7
    n = 400
    cov, flags = opg_covariance(np.full((n, 1), g))
    assert math.sqrt(cov[0, 0]) == pytest.approx(1 / (abs(g) * math.sqrt(n)), rel=1e-12)
    assert flags == [None]


def test_opg_flags_singular_direction():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(100, 1))
    cov, flags = opg_covariance(np.hstack([a, 2 * a, rng.normal(size=(100, 1))]))
    assert flags[0] == "singular" and flags[1] == "singular" and flags[2] is None
    assert np.all(np.isfinite(cov))


def test_opg_at_the_quality_ordering_boundary(est):
    _, _, panel = est
    cfg = EstimationConfig(free_parameters=("theta_low", "theta_high", "sigma_p"))
    at = TABLE3.replace(theta_low=0.4, theta_high=0.4)
    se, flags = opg_standard_errors(panel.select(np.arange(100)), at, cfg)
    # raising theta_low or lowering theta_high breaks the ordering, so those scores are one-sided
    assert flags["theta_low"] in ("one_sided", "singular")
    assert flags["theta_high"] in ("one_sided", "singular")
    assert math.isfinite(se["sigma_p"]) and se["sigma_p"] > 0


# --- optimization -------------------------------------------------------------------


def test_alpha_only_recovery(est):
    _, _, panel = est
    cfg = EstimationConfig(free_parameters=("alpha",), start={"alpha": 0.35})
    r = maximize_likelihood(panel, cfg)
    assert r.converged
    se = r.standard_errors["alpha"]
    assert se > 0
    assert abs(r.point_estimates.alpha - TABLE3.alpha) < 3 * se
    assert r.loglik >= total_loglik(panel, TABLE3) - 1e-6


def test_reparameterized_bounds_give_same_optimum(est):
    _, _, panel = est
    base = EstimationConfig(free_parameters=("alpha",), start={"alpha": 0.3})
    alt = dataclasses.replace(base, transforms={"alpha": Transform("logit", 0.01, 0.9)})
    a = maximize_likelihood(panel, base, with_se=False)
    b = maximize_likelihood(panel, alt, with_se=False)
    assert abs(a.point_estimates.alpha - b.point_estimates.alpha) < 1e-4


def test_start_at_truth_keeps_incumbent(est):
    _, _, panel = est
    cfg = EstimationConfig(max_evaluations=60)
    r = maximize_likelihood(panel, cfg, with_se=False)
    assert r.loglik >= total_loglik(panel, TABLE3) - 1e-6
    assert r.evaluation_count <= 61
    assert not r.converged


def test_result_dict_is_complete(est):
    _, _, panel = est
    cfg = EstimationConfig(free_parameters=("sigma_p",))
    r = maximize_likelihood(panel, cfg)
    d = r.to_dict()
    assert set(d["estimates"]) == {"sigma_p"}
    assert d["n_vendors"] == r.n_vendors and d["inner_failures"] == 0
    assert abs(r.point_estimates.sigma_p - TABLE3.sigma_p) < 3 * r.standard_errors["sigma_p"] + 1e-12


def test_empty_panel_cannot_be_fitted(est):
    _, _, panel = est
    with pytest.raises(ValueError):
        maximize_likelihood(panel.select([]), EstimationConfig(free_parameters=("alpha",)))
