import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from factories import random_model, tabulated
from oracles import brute_force_eta, nested_bl_oracle
from weakfeller import zoo
from weakfeller.audit import (
    AbsoluteContinuityError,
    BeliefMetric,
    CapabilityError,
    InvariantViolation,
    Scenario,
    Thresholds,
    channel_event_families,
    condition_m_modulus,
    converges,
    decomposition_check,
    density_l1_continuity_audit,
    eta_continuity_audit,
    extract_observation_density,
    floored,
    jumping_indicator_families,
    make_scenario,
    posterior_distance_audit,
    predictor_tv_audit,
    run_audits,
    uniform_convergence_check,
)
from weakfeller.measures import FiniteMeasure, StructuralError, TestFamily, bl_distance, default_test_family

UNIT = TestFamily(np.ones((1, 2)))


@pytest.fixture(scope="module")
def hmm2():
    return zoo.get_model("hmm2-gaussian")


def test_constant_sequence_gives_zero_curves(hmm2):
    sc = make_scenario(hmm2, [0.6, 0.4], 2, [0.5, 0.25, 0.125])
    for curve in (eta_continuity_audit(sc), predictor_tv_audit(sc), posterior_distance_audit(sc),
                  condition_m_modulus(hmm2, default_test_family(hmm2.states), sc)):
        assert np.array_equal(curve, np.zeros(3))
    assert np.abs(decomposition_check(sc)).max() <= 1e-12


def test_eta_distance_matches_independent_nested_lp():
    rng = np.random.default_rng(11)
    m = random_model(rng, 3, 3, 2)
    sc = make_scenario(m, m.prior, 0, [2.0, 1.0, 0.25], direction=[1.0, 0.0, 0.0], actions=[1, 1, 0])
    got = eta_continuity_audit(sc)
    for k in range(3):
        a = brute_force_eta(sc.zs[k].weights, m.transition[sc.us[k]], m.channel[sc.us[k]])
        b = brute_force_eta(sc.z.weights, m.transition[0], m.channel[0])
        assert got[k] == pytest.approx(nested_bl_oracle(m.states.dist, a, b), abs=1e-9)


def test_predictor_tv_matches_enumeration(hmm2):
    sc = zoo.preset_scenario("hmm2-gaussian")
    p0 = np.einsum("x,xw,wy->y", sc.z.weights, hmm2.transition[sc.u], hmm2.channel[sc.u])
    for k, v in enumerate(predictor_tv_audit(sc)):
        pk = np.einsum("x,xw,wy->y", sc.zs[k].weights, hmm2.transition[sc.us[k]], hmm2.channel[sc.us[k]])
        assert v == pytest.approx(np.abs(pk - p0).sum(), abs=1e-14)


def test_unit_function_gives_half_tv(hmm2):
    for name in ("hmm2-gaussian", "counterexample", "additive-obs-gaussian"):
        sc = zoo.preset_scenario(name)
        m = sc.model
        fam = TestFamily(np.ones((1, m.n_states)))
        np.testing.assert_allclose(condition_m_modulus(m, fam, sc), predictor_tv_audit(sc) / 2, atol=1e-12)


def test_exact_and_enumerated_event_sups_agree():
    rng = np.random.default_rng(4)
    for ny in (1, 3, 6):
        m = random_model(rng, 4, ny, 3)
        sc = make_scenario(m, m.prior, 0, [1.0, 0.5], direction=[0, 0, 1.0, 0], actions=[1, 0])
        fam = default_test_family(m.states, 6)
        exact = condition_m_modulus(m, fam, sc, method="exact", return_per_function=True)[1]
        brute = condition_m_modulus(m, fam, sc, method="enumerate", return_per_function=True)[1]
        np.testing.assert_allclose(exact, brute, atol=1e-14)


def test_condition_m_refusals():
    rng = np.random.default_rng(6)
    m = random_model(rng, 3, 17, 1)
    sc = make_scenario(m, m.prior, 0, [1.0])
    fam = default_test_family(m.states)
    with pytest.raises(CapabilityError):
        condition_m_modulus(m, fam, sc, method="enumerate")
    assert condition_m_modulus(m, fam, sc).shape == (1,)
    with pytest.raises(ValueError, match="constant"):
        condition_m_modulus(m, TestFamily(np.eye(3)), sc)
    with pytest.raises(StructuralError):
        condition_m_modulus(m, UNIT, sc)
    with pytest.raises(CapabilityError):
        channel_event_families(sc)


# --- densities ------------------------------------------------------------

def test_noiseless_density():
    m = tabulated(np.eye(2), np.eye(2))
    tab = extract_observation_density(m, m.belief([0.5, 0.5]), 0)
    np.testing.assert_array_equal(tab.g, [[2.0, 0.0], [0.0, 2.0]])
    assert tab.residual() == 0.0


def test_uninformative_density_is_one():
    m = tabulated(np.eye(3), np.full((3, 5), 0.2))
    tab = extract_observation_density(m, m.belief([0.1, 0.3, 0.6]), 0)
    np.testing.assert_allclose(tab.g, 1.0, atol=1e-14)


def test_absolute_continuity_violation_names_the_pair():
    # a product that underflows leaves P(y) = 0 under a state with Q(y|x) > 0
    m = tabulated(np.eye(2), [[1.0, 0.0], [1.0, 1e-300]], z=[1.0, 1e-300])
    with pytest.raises(AbsoluteContinuityError) as info:
        extract_observation_density(m, m.prior, 0)
    assert (info.value.x, info.value.y) == (1, 1)


@pytest.mark.parametrize("name", zoo.names())
def test_density_reconstruction_on_zoo(name):
    m = zoo.get_model(name)
    for u in range(m.n_actions):
        assert extract_observation_density(m, m.prior, u).residual() < 1e-10


def test_density_audit_constant_and_bound():
    m = zoo.get_model("refined-obs-gaussian")
    x0 = m.states.points.index(0.0)
    assert not density_l1_continuity_audit(m, m.prior, 0, [x0] * 3, x0).values.any()
    xs = [m.states.points.index(2.0 ** -k) for k in range(7)]
    out = density_l1_continuity_audit(m, m.prior, 0, xs, x0)
    assert (out.bound_slack() >= -1e-9).all()
    assert (np.diff(out.values) < 0).all()


# --- uniform convergence --------------------------------------------------

def test_uniform_convergence_constant_family():
    X = FiniteMeasure.uniform(zoo.get_model("hmm2-gaussian").states)
    F = np.array([[1.0, 0.0], [0.3, 0.9]])
    assert not uniform_convergence_check([F, F], F, [X, X], X).any()
    with pytest.raises(StructuralError):
        uniform_convergence_check([F], F, [X, X], X)
    with pytest.raises(StructuralError):
        uniform_convergence_check([F[:, :1]], F, [X], X)


def test_channel_event_and_jumping_families(hmm2):
    sc = zoo.preset_scenario("hmm2-gaussian")
    curve = uniform_convergence_check(*channel_event_families(sc))
    assert curve[-1] < 0.02
    jump = uniform_convergence_check(*jumping_indicator_families(hmm2.states, 6))
    assert (jump >= 1.0).all()


# --- scenarios and metrics ------------------------------------------------

def test_scenario_validation(hmm2):
    z = hmm2.belief([0.5, 0.5])
    with pytest.raises(ValueError, match="lengths"):
        Scenario(hmm2, z, 0, [z], [0, 0], [1.0])
    with pytest.raises(ValueError, match="decreasing"):
        Scenario(hmm2, z, 0, [z, z], [0, 0], [0.5, 0.5])
    with pytest.raises(ValueError, match="exceeds"):
        Scenario(hmm2, z, 0, [hmm2.belief([1.0, 0.0])], [0], [0.1])
    with pytest.raises(ValueError, match="exceeds"):
        Scenario(hmm2, z, 0, [z], [len(hmm2.actions.points) - 1], [0.1])
    with pytest.raises(ValueError, match="control"):
        Scenario(hmm2, z, 0, [z], [0], [1.0], control="maybe")


@pytest.mark.parametrize("metric", ["bl", "rho"])
def test_make_scenario_hits_requested_distances(hmm2, metric):
    sc = make_scenario(hmm2, [0.7, 0.3], 0, [1.0, 0.1, 0.01], direction=[0.0, 1.0], metric=metric)
    full = sc.belief_metric(np.array([0.0, 1.0]), sc.z.weights)
    for zk, d in zip(sc.zs, sc.scales):
        assert sc.belief_metric(zk.weights, sc.z.weights) == pytest.approx(min(d, full), rel=1e-9)


def test_belief_metric_matches_bl_and_is_thread_safe():
    m = zoo.get_model("additive-obs-gaussian")
    rng = np.random.default_rng(0)
    pairs = [(rng.dirichlet(np.ones(41)), rng.dirichlet(np.ones(41))) for _ in range(12)]
    serial = [bl_distance(m.belief(a), m.belief(b)) for a, b in pairs]
    bm = BeliefMetric(m)
    results = {}

    def work(tid):
        results[tid] = [bm(a, b) for a, b in pairs[tid % 3:] + pairs[:tid % 3]]

    threads = [threading.Thread(target=work, args=(t,)) for t in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for tid, vals in results.items():
        expect = serial[tid % 3:] + serial[:tid % 3]
        np.testing.assert_allclose(vals, expect, atol=1e-12)
    assert len(bm) == len(pairs)
    assert bm(pairs[0][1], pairs[0][0]) == bm(pairs[0][0], pairs[0][1])
    with pytest.raises(ValueError):
        BeliefMetric(m, "wasserstein")
    with pytest.raises(StructuralError):
        BeliefMetric(m, "rho", UNIT)


def test_verdict_helpers():
    assert converges([0.5, 0.1, 0.04, 0.03], 0.05)
    assert converges([0.5, 0.03, 0.032, 0.033], 0.05)  # within 10% slack
    assert not converges([0.5, 0.03, 0.04, 0.045], 0.05)
    assert not converges([0.5, 0.2, 0.1, 0.06], 0.05)
    assert floored([0.3, 0.2, 0.1], 0.1)
    assert not floored([0.3, 0.09], 0.1)
    assert not floored([], 0.1)


def test_run_audits_controls():
    pos = run_audits(zoo.preset_scenario("hmm2-gaussian"))
    assert pos.verdict and set(pos.checks) >= {"eta", "pred_tv", "condition_m", "decomposition"}
    neg = run_audits(zoo.preset_scenario("counterexample"))
    assert neg.verdict
    strict = run_audits(zoo.preset_scenario("counterexample"), thresholds=Thresholds(eta_floor=0.9))
    assert not strict.verdict and not strict.checks["eta"]
    rows = list(pos.rows())
    assert len(rows) == len(zoo.HMM2_SCALES)
    with pytest.raises(ValueError):
        run_audits(zoo.preset_scenario("hmm2-gaussian"), ["eta", "magic"])


def test_decomposition_violation_is_reported(hmm2):
    sc = zoo.preset_scenario("hmm2-gaussian")
    n = len(sc)
    with pytest.raises(InvariantViolation, match="step 0"):
        decomposition_check(sc, eta=np.ones(n), pred=np.zeros(n), post=np.zeros(n))


@given(st.integers(2, 6), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2 ** 32 - 1),
       st.sampled_from(["bl", "rho"]))
def test_decomposition_holds_on_random_models(nx, ny, nu, seed, metric):
    rng = np.random.default_rng(seed)
    m = random_model(rng, nx, ny, nu, sparsity=0.3)
    scales = [2.0, 1.0, 0.05]
    us = [int(rng.integers(min(nu, int(d) + 1))) for d in scales]
    sc = make_scenario(m, m.prior, 0, scales, direction=rng.dirichlet(np.ones(nx)), actions=us, metric=metric)
    slack = decomposition_check(sc)
    assert (slack >= -1e-9).all()
    eta = eta_continuity_audit(sc)
    assert (eta <= 2 + 1e-12).all() and (eta >= 0).all()
