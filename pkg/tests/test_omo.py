import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesob.experiments import gradient_rel_error, random_interior_iterate
from mesob.game import GameSpec, Policy, best_response, propagate_flow
from mesob.games import random_game, single_point_game, tabular_game
from mesob.omo import (
    MesobWeights,
    NonSmoothError,
    OmoIterate,
    SolverAbort,
    SolverConfig,
    best_response_residual,
    complementarity_check,
    consistency_residual,
    evaluate_solution,
    initial_iterate,
    mesob_gradient,
    mesob_objective,
    objective_terms,
    project,
    project_d,
    project_y,
    project_z,
    solve,
)
from mesob.oracles import qp_projection


# -- naive residual oracles ----------------------------------------------------------


def naive_g(spec, d):
    T1, S, A = spec.shape
    total = 0.0
    for s in range(S):
        total += (sum(d[0, s, a] for a in range(A)) - spec.initial_dist[s]) ** 2
    for t in range(T1 - 1):
        P = spec.transition(t, d[t])
        for x in range(S):
            inflow = sum(d[t, s, a] * P[s, a, x] for s in range(S) for a in range(A))
            total += (sum(d[t + 1, x, a] for a in range(A)) - inflow) ** 2
    return total


def naive_h(spec, y, z, d):
    T1, S, A = spec.shape
    T = T1 - 1
    r = [spec.reward(t, d[t]) for t in range(T1)]
    P = [spec.transition(t, d[t]) for t in range(T1)]
    total = 0.0
    for s in range(S):
        for a in range(A):
            if T >= 1:
                total += (y[T - 1, s] - r[T][s, a] - z[T, s, a]) ** 2
            for t in range(T - 1):
                ev = sum(P[t + 1][s, a, x] * y[t + 1, x] for x in range(S))
                total += (y[t, s] - r[t + 1][s, a] - ev - z[t + 1, s, a]) ** 2
            ev0 = sum(P[0][s, a, x] * y[0, x] for x in range(S))
            total += (y[T, s] + r[0][s, a] + ev0 + z[0, s, a]) ** 2
    return total


def random_iterate(rng, spec, scale=1.0):
    T1, S, A = spec.shape
    return OmoIterate(rng.normal(size=(T1, S)) * scale, rng.uniform(0, 1, (T1, S, A)),
                      rng.dirichlet(np.ones(S * A), size=T1).reshape(T1, S, A))


# -- types ----------------------------------------------------------------------------


def test_weights_validation():
    MesobWeights(0.0, 1.0)
    MesobWeights(1.0, 0.0)
    MesobWeights(0.0, 0.0)
    with pytest.raises(ValueError):
        MesobWeights(-1.0, 1.0)
    with pytest.raises(ValueError):
        MesobWeights(1.0, 1.0, rho1=0.0)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(step_size=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(init_mode="bogus")


# -- consistency residual -------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 3))
def test_consistency_zero_on_induced_flow(seed, T):
    spec = random_game(2, 3, T, seed=seed)
    rng = np.random.default_rng(seed)
    pi = Policy(rng.dirichlet(np.ones(3), size=(T + 1, 2)))
    assert consistency_residual(spec, propagate_flow(spec, pi).mass) <= 1e-12


def test_consistency_identity_kernel_value():
    T = 2
    kernels = np.broadcast_to(np.eye(2)[:, None, :], (T + 1, 2, 1, 2))
    spec = tabular_game(np.zeros((T + 1, 2, 1)), kernels, [0.3, 0.7])
    d = np.full((T + 1, 2, 1), 0.5)
    assert consistency_residual(spec, d) == pytest.approx(0.08, abs=1e-15)


def test_consistency_matches_naive_oracle():
    rng = np.random.default_rng(3)
    for seed in range(5):
        spec = random_game(3, 2, 2, seed=seed)
        d = rng.uniform(0, 1, spec.shape)
        assert consistency_residual(spec, d) == pytest.approx(naive_g(spec, d), abs=1e-12)


# -- best-response residual --------------------------------------------------------------


def test_bellman_single_pair_solution():
    spec = single_point_game(horizon=0, reward=0.7)
    z = np.array([[[0.2]]])
    # y_T and y_0 coincide when T = 0, so y = -r0 - y - z0
    y = np.array([[-(0.7 + 0.2) / 2]])
    assert best_response_residual(spec, y, z, np.ones((1, 1, 1))) == pytest.approx(0.0, abs=1e-30)


def test_bellman_zero_everything():
    spec = tabular_game(np.zeros((3, 2, 2)), np.full((3, 2, 2, 2), 0.5), [0.5, 0.5])
    assert best_response_residual(spec, np.zeros((3, 2)), np.zeros((3, 2, 2)), np.full((3, 2, 2), 0.25)) == 0.0


def test_bellman_matches_naive_oracle():
    rng = np.random.default_rng(9)
    for T in (0, 1, 2, 3):
        spec = random_game(2, 2, T, seed=T)
        it = random_iterate(rng, spec)
        got = best_response_residual(spec, it.y, it.z, it.d)
        assert got == pytest.approx(naive_h(spec, it.y, it.z, it.d), abs=1e-12)


# -- objective -------------------------------------------------------------------------


def test_objective_at_residual_free_point():
    spec = single_point_game(horizon=0, reward=0.7)
    it = OmoIterate(np.array([[-0.35]]), np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    w = MesobWeights(0.6, 0.4)
    assert mesob_objective(spec, it, w) == pytest.approx(-0.6 * 0.7, abs=1e-15)


def test_objective_with_zero_tradeoff_weights():
    spec = random_game(2, 2, 1, seed=0)
    it = random_iterate(np.random.default_rng(0), spec)
    w = MesobWeights(0.0, 0.0, rho1=2.0, rho2=0.3)
    expect = 2.0 * naive_g(spec, it.d) + 0.3 * naive_h(spec, it.y, it.z, it.d)
    assert mesob_objective(spec, it, w) == pytest.approx(expect, abs=1e-12)


def test_objective_composes_terms_on_auction(sec3):
    spec = sec3.spec
    rng = np.random.default_rng(1)
    it = random_iterate(rng, spec)
    w = MesobWeights(0.3, 0.7, 1.0, 0.1)
    from mesob.game import social_value

    _, welfare = social_value(spec, it.d)
    expect = (-0.3 * welfare + 0.7 * np.sum(it.z * it.d) + naive_g(spec, it.d)
              + 0.1 * naive_h(spec, it.y, it.z, it.d))
    assert mesob_objective(spec, it, w) == pytest.approx(expect, abs=1e-10)
    t = objective_terms(spec, it, w)
    assert t.comp == pytest.approx(np.sum(it.z * it.d))


# -- gradient -----------------------------------------------------------------------------


def test_y_gradient_comes_only_from_bellman_term():
    spec = random_game(2, 2, 2, seed=5)
    it = random_iterate(np.random.default_rng(5), spec)
    gy_full, _, _ = mesob_gradient(spec, it, MesobWeights(0.8, 0.9, 1.0, 0.1))
    gy_pen, _, _ = mesob_gradient(spec, it, MesobWeights(0.0, 0.0, 1.0, 0.1))
    np.testing.assert_array_equal(gy_full, gy_pen)


def test_z_gradient_at_residual_free_point():
    spec = single_point_game(horizon=0, reward=0.7)
    it = OmoIterate(np.array([[-0.35]]), np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    _, gz, _ = mesob_gradient(spec, it, MesobWeights(0.5, 0.4))
    np.testing.assert_allclose(gz, 0.4 * it.d, atol=1e-15)


@pytest.mark.parametrize("T", [0, 1, 2])
def test_gradient_matches_fd_on_coupled_games(T):
    spec = random_game(2, 3, T, seed=10 + T, num_metrics=2)
    rng = np.random.default_rng(T)
    for _ in range(3):
        it = random_interior_iterate(spec, rng)
        assert gradient_rel_error(spec, it, MesobWeights(0.7, 0.4, 1.0, 0.1)) <= 1e-5


def test_gradient_matches_fd_on_auction(sec3):
    rng = np.random.default_rng(0)
    it = random_interior_iterate(sec3.spec, rng)
    assert gradient_rel_error(sec3.spec, it, MesobWeights(0.5, 0.5)) <= 1e-5


def test_non_smooth_game_refuses_gradient():
    g = single_point_game()
    spec = GameSpec(1, 1, 0, [1.0], g.reward, g.transition, g.metrics, g.link, 1.0, smooth=False)
    with pytest.raises(NonSmoothError):
        mesob_gradient(spec, OmoIterate(np.zeros((1, 1)), np.zeros((1, 1, 1)), np.ones((1, 1, 1))),
                       MesobWeights(1.0, 1.0))


# -- projections --------------------------------------------------------------------------


def test_project_d_examples():
    d = np.array([[[0.2, 0.3], [0.1, 0.4]]])
    np.testing.assert_allclose(project_d(d), d, atol=1e-15)
    np.testing.assert_allclose(project_d(np.array([[[2.0, 0.0]]])), [[[1.0, 0.0]]])
    np.testing.assert_allclose(project_d(np.array([[[0.5, 0.5, 0.5]]])), np.full((1, 1, 3), 1 / 3))


def test_project_z_examples():
    np.testing.assert_allclose(project_z([0.2, 0.3], 1.0), [0.2, 0.3])
    np.testing.assert_allclose(project_z([2.0, 0.0], 1.0), [1.0, 0.0])
    np.testing.assert_allclose(project_z([-1.0, -1.0], 5.0), [0.0, 0.0])


def test_project_y_examples():
    np.testing.assert_allclose(project_y([0.3, 0.4], 1.0), [0.3, 0.4])
    np.testing.assert_allclose(project_y([3.0, 4.0], 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(project_y([0.0, 0.0], 1.0), [0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(0.1, 4.0))
def test_projections_idempotent_and_optimal(x, radius):
    x = np.array(x)
    d = project_d(x.reshape(1, 1, -1))
    np.testing.assert_allclose(project_d(d), d, atol=1e-12)
    np.testing.assert_allclose(d.ravel(), qp_projection(x, ("simplex", 1.0)), atol=1e-8)
    z = project_z(x, radius)
    np.testing.assert_allclose(project_z(z, radius), z, atol=1e-12)
    np.testing.assert_allclose(z, qp_projection(x, ("budget", radius)), atol=1e-8)
    y = project_y(x, radius)
    np.testing.assert_allclose(project_y(y, radius), y, atol=1e-12)
    np.testing.assert_allclose(y, qp_projection(x, ("ball", radius)), atol=1e-8)


def test_project_produces_feasible_iterate():
    spec = random_game(2, 2, 2, seed=0)
    rng = np.random.default_rng(0)
    it = project(spec, rng.normal(size=(3, 2)) * 100, rng.normal(size=(3, 2, 2)) * 100,
                 rng.normal(size=(3, 2, 2)))
    assert it.feasibility_violations(spec) == []


# -- solver -------------------------------------------------------------------------------


def test_uniform_initialization():
    spec = random_game(2, 3, 1, seed=0)
    it = initial_iterate(spec, SolverConfig())
    np.testing.assert_allclose(it.d, propagate_flow(spec, Policy.uniform(1, 2, 3)).mass)
    assert not it.y.any() and not it.z.any()


def test_random_initialization_is_seeded_and_feasible():
    spec = random_game(2, 3, 1, seed=0)
    a = initial_iterate(spec, SolverConfig(init_mode="random", seed=4))
    b = initial_iterate(spec, SolverConfig(init_mode="random", seed=4))
    np.testing.assert_array_equal(a.d, b.d)
    assert a.feasibility_violations(spec) == []
    with pytest.raises(ValueError):
        initial_iterate(spec, SolverConfig(init_mode="warm_start"))


def test_solver_single_pair_game():
    spec = single_point_game()
    it, diag = solve(spec, MesobWeights(0.5, 0.5), SolverConfig(step_size=0.1, max_iters=200))
    assert consistency_residual(spec, it.d) <= 1e-8
    np.testing.assert_allclose(it.d, np.ones((1, 1, 1)))


def test_solver_descent_is_monotone():
    spec = random_game(2, 3, 2, seed=2)
    for accelerate in (False, True):
        _, diag = solve(spec, MesobWeights(0.5, 0.5), SolverConfig(max_iters=300, accelerate=accelerate))
        obj = np.array([h[1] for h in diag.history])
        assert np.all(np.diff(obj) <= 1e-12)


def test_solver_is_deterministic():
    spec = random_game(2, 2, 1, seed=1)
    cfg = SolverConfig(max_iters=100, init_mode="random", seed=7)
    a, _ = solve(spec, MesobWeights(0.3, 0.7), cfg)
    b, _ = solve(spec, MesobWeights(0.3, 0.7), cfg)
    np.testing.assert_array_equal(a.d, b.d)
    np.testing.assert_array_equal(a.y, b.y)


def test_solver_grad_tol_stops_early():
    spec = single_point_game()
    _, diag = solve(spec, MesobWeights(0.5, 0.5), SolverConfig(step_size=0.1, max_iters=5000, grad_tol=1e-9))
    assert diag.converged and diag.iterations < 5000


def test_pure_control_matches_dynamic_programming():
    rng = np.random.default_rng(0)
    T, S, A = 2, 2, 2
    rewards = rng.uniform(0, 1, (T + 1, S, A))
    kernels = rng.dirichlet(np.ones(S), size=(T + 1, S, A))
    spec = tabular_game(rewards, kernels, [0.4, 0.6])
    it, _ = solve(spec, MesobWeights(1.0, 0.0, 1.0, 0.1),
                  SolverConfig(step_size=0.1, max_iters=3000, accelerate=True))
    ev = evaluate_solution(spec, it)
    w_star, _ = best_response(spec, propagate_flow(spec, Policy.uniform(T, S, A)).mass)
    assert ev["welfare"] == pytest.approx(float(spec.initial_dist @ w_star), abs=1e-4)


def test_solver_aborts_on_non_finite_objective():
    g = single_point_game()
    spec = GameSpec(1, 1, 0, [1.0], g.reward, g.transition, g.metrics, lambda v: float("nan"), 1.0,
                    link_grad=lambda v: np.ones(1))
    with pytest.raises(SolverAbort) as info:
        solve(spec, MesobWeights(1.0, 0.0), SolverConfig(max_iters=5))
    assert info.value.iteration == 0
    assert info.value.iterate.d.shape == (1, 1, 1)


# -- certificate ----------------------------------------------------------------------------


def test_certificate_at_exact_equilibrium():
    spec = single_point_game(reward=0.7)
    it = OmoIterate(np.array([[-0.35]]), np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    rep = complementarity_check(it, spec)
    assert rep.exploitability == 0.0 and rep.bound_satisfied
    assert rep.g_cs == 0.0 and rep.h_br == pytest.approx(0.0, abs=1e-30)


def test_certificate_report_for_perturbed_point():
    spec = random_game(2, 3, 1, seed=0)
    rng = np.random.default_rng(0)
    it = random_iterate(rng, spec, scale=10.0)
    rep = complementarity_check(it, spec, constant=1e-6)
    assert rep.g_cs > 0 and rep.h_br > 0
    assert rep.bound_satisfied == (rep.comp + rep.slack >= rep.exploitability)
