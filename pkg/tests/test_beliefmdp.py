import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from factories import random_model, tabulated
from oracles import direct_value_iteration
from weakfeller import zoo
from weakfeller.audit import CapabilityError
from weakfeller.beliefmdp import BeliefGrid, quantize, refinement_study, value_iteration
from weakfeller.filter import filter_kernel


def brute_nearest(grid, z):
    d = np.abs(grid.points - z).sum(axis=1)
    return int(np.flatnonzero(d <= d.min() + 1e-9)[0])


def test_resolution_one_on_two_states():
    g = BeliefGrid(2, 1)
    np.testing.assert_array_equal(g.points, [[0, 1], [1, 0]])
    g2 = BeliefGrid(2, 2)
    np.testing.assert_array_equal(g2.points, [[0, 1], [0.5, 0.5], [1, 0]])
    assert g2.vertex(0) == 2 and g2.vertex(1) == 0


def test_grid_size_and_validity():
    for n, N in [(2, 5), (3, 4), (4, 6)]:
        g = BeliefGrid(n, N)
        assert len(g) == len(set(map(tuple, g.counts.tolist())))
        np.testing.assert_allclose(g.points.sum(axis=1), 1.0, atol=1e-15)
        assert (g.points >= 0).all()
        assert all(g.index_of(k) == i for i, k in enumerate(g.counts))


def test_cap_and_arguments():
    with pytest.raises(CapabilityError):
        BeliefGrid(41, 4)
    with pytest.raises(ValueError):
        BeliefGrid(2, 0)
    with pytest.raises(ValueError):
        quantize(zoo.get_model("hmm2-gaussian"), 4, beta=1.0)


def test_nearest_ties_go_to_lowest_index():
    g = BeliefGrid(2, 1)
    assert g.nearest([0.5, 0.5])[0] == 0
    g3 = BeliefGrid(3, 1)
    assert g3.nearest([1 / 3, 1 / 3, 1 / 3])[0] == brute_nearest(g3, np.full(3, 1 / 3))


@given(st.integers(2, 4), st.integers(1, 8), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_nearest_matches_brute_force(n, N, seed, snap):
    rng = np.random.default_rng(seed)
    g = BeliefGrid(n, N)
    Z = rng.dirichlet(np.ones(n), size=8)
    if snap:  # land on ties: points of a finer lattice
        Z = np.round(Z * 2 * N) / (2 * N)
        Z[:, -1] = 1 - Z[:, :-1].sum(axis=1)
        Z = Z[(Z >= 0).all(axis=1)]
    got = g.nearest(Z)
    for z, i in zip(Z, got):
        assert i == brute_nearest(g, z)
        assert np.abs(g.points[i] - z).sum() <= g.mesh + 1e-12


def test_mesh_bounds_snapping_error():
    rng = np.random.default_rng(0)
    for n, N in [(2, 1), (2, 7), (3, 4), (5, 3)]:
        g = BeliefGrid(n, N)
        Z = rng.dirichlet(np.ones(n) * 0.5, size=2000)
        err = np.abs(g.points[g.nearest(Z)] - Z).sum(axis=1)
        assert err.max() <= g.mesh + 1e-12
    # attained: the midpoint of two states at resolution 1
    assert BeliefGrid(2, 1).mesh == 1.0


def test_rows_are_stochastic_and_match_the_filter_kernel():
    m = zoo.get_model("hmm2-gaussian")
    mdp = quantize(m, 8)
    np.testing.assert_allclose(mdp.row_sums(), 1.0, atol=1e-12)
    for i in (0, 3, 8):
        z = m.belief(mdp.grid.points[i])
        eta = filter_kernel(m, z, 2)
        expect = np.zeros(len(mdp.grid))
        np.add.at(expect, mdp.grid.nearest(eta.beliefs), eta.weights)
        np.testing.assert_allclose(mdp.transitions[2][i].toarray().ravel(), expect, atol=1e-12)
    np.testing.assert_allclose(mdp.cost, mdp.grid.points @ m.cost)


def test_noiseless_transitions_land_on_vertices():
    rng = np.random.default_rng(1)
    T = rng.dirichlet(np.ones(3), size=(2, 3))
    m = tabulated(T, np.eye(3))
    mdp = quantize(m, 5)
    vertices = {mdp.grid.vertex(x) for x in range(3)}
    for P in mdp.transitions:
        assert set(P.indices.tolist()) <= vertices


def test_constant_costs():
    rng = np.random.default_rng(2)
    m = random_model(rng, 3, 2, 2)
    zero = tabulated(m.transition, m.channel, cost=np.zeros((3, 2)))
    assert not value_iteration(quantize(zero, 4)).values.any()
    one = tabulated(m.transition, m.channel, cost=np.ones((3, 2)))
    v = value_iteration(quantize(one, 4, beta=0.9), tolerance=1e-9).values
    np.testing.assert_allclose(v, 10.0, atol=1e-6)


def test_noiseless_vertex_values_match_direct_mdp():
    rng = np.random.default_rng(3)
    for nx, nu in [(2, 2), (3, 3)]:
        T = rng.dirichlet(np.ones(nx), size=(nu, nx))
        c = rng.uniform(0, 2, (nx, nu))
        m = tabulated(T, np.eye(nx), cost=c)
        mdp = quantize(m, 3, beta=0.9)
        out = value_iteration(mdp, tolerance=1e-10)
        ref = direct_value_iteration(T, c, 0.9)
        for x in range(nx):
            assert out.values[mdp.grid.vertex(x)] == pytest.approx(ref[x], abs=1e-8)


def test_contraction_and_policy():
    m = zoo.get_model("hmm2-gaussian")
    out = value_iteration(quantize(m, 16, beta=0.8), tolerance=1e-8)
    r = out.residuals
    assert (r[1:] <= 0.8 * r[:-1] + 1e-9).all()
    assert out.iterations == len(r)
    mdp = quantize(m, 16, beta=0.8)
    Q = mdp.cost + 0.8 * np.column_stack([P @ out.values for P in mdp.transitions])
    np.testing.assert_array_equal(out.policy, np.argmin(Q, axis=1))


def test_policy_ties_pick_lowest_action():
    m = tabulated(np.stack([np.eye(2)] * 3), np.eye(2), cost=np.ones((2, 3)))
    assert not value_iteration(quantize(m, 2)).policy.any()


def test_values_are_monotone_in_cost():
    rng = np.random.default_rng(5)
    m = random_model(rng, 3, 2, 2)
    low = value_iteration(quantize(m, 6)).values
    high_model = tabulated(m.transition, m.channel, cost=m.cost + rng.uniform(0, 1, m.cost.shape))
    high = value_iteration(quantize(high_model, 6)).values
    assert (high >= low - 1e-8).all()


def test_refinement_table():
    m = tabulated(np.eye(2), [[0.8, 0.2], [0.2, 0.8]], cost=np.ones((2, 1)))
    rows = refinement_study(m, [1, 2, 4, 8], tolerance=1e-9)
    assert [r.resolution for r in rows] == [1, 2, 4, 8]
    assert rows[0].difference is None
    assert all(abs(r.probe_value - 10.0) < 1e-6 for r in rows)
    with pytest.raises(ValueError):
        refinement_study(m, [4, 2])


def test_max_iter_exhaustion():
    m = zoo.get_model("hmm2-gaussian")
    with pytest.raises(ArithmeticError):
        value_iteration(quantize(m, 4, beta=0.99), tolerance=1e-12, max_iter=5)
