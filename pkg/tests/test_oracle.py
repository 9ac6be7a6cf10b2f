from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aclab import oracle
from aclab.diagnostics import semigradient_terms
from aclab.errors import AssumptionOneViolated, NonErgodic
from aclab.features import make_centered_basis, make_onehot, make_random_bounded
from aclab.mdp import FiniteMdp, InducedChain, ergodic_garnet, induced_chain
from aclab.policy import BoltzmannPolicy
from aclab.simulate import sample_observations

Z4 = np.zeros(4)


def _const_reward(mdp, c0=0.3):
    return FiniteMdp(mdp.transition, np.full(mdp.reward.shape, c0), mdp.u_r)


def _garnet(seed, n=6, a=3, br=3):
    return ergodic_garnet(n, a, br, seed)[0]


# --- worked M2 values (hand computations) ---------------------------------------------


def test_m2_stationary(m2_mdp):
    ch = induced_chain(m2_mdp, np.full((2, 2), 0.5))
    np.testing.assert_allclose(oracle.stationary_distribution(ch), [0.5, 0.5], atol=1e-15)


def test_m2_bundle(m2_mdp, m2_map):
    b = oracle.compute_bundle(m2_mdp, m2_map, Z4)
    assert abs(b.j - 0.5) <= 1e-12
    np.testing.assert_allclose(b.v, [-0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(b.q, [[-0.9, -0.1], [0.1, 0.9]], atol=1e-12)
    np.testing.assert_allclose(b.a_mat, [[-1.0]], atol=1e-12)
    np.testing.assert_allclose(b.b_vec, [-0.5], atol=1e-12)
    np.testing.assert_allclose(b.omega_star, [-0.5], atol=1e-12)
    np.testing.assert_allclose(m2_map.table @ b.omega_star, b.v, atol=1e-12)
    assert abs(b.lambda_margin - 1.0) <= 1e-12
    assert b.eps_app_theta <= 1e-10


def test_m2_gradient(m2_mdp):
    np.testing.assert_allclose(oracle.exact_policy_gradient(m2_mdp, Z4), [-0.1, 0.1, -0.1, 0.1], atol=1e-12)


def test_m2_exploration_margin():
    assert abs(oracle.exploration_margin(np.array([[-1.0]])) - 1.0) <= 1e-15


def test_m2_mixing_is_one_step(m2_mdp):
    ch = induced_chain(m2_mdp, np.full((2, 2), 0.5))
    est = oracle.mixing_estimate(ch)
    assert est.deltas[0] == 0.0
    assert est.rho == 1e-6 and est.m == 1.0


def test_two_state_mixing_rate():
    p = np.array([[0.9, 0.1], [0.2, 0.8]])
    est = oracle.mixing_estimate(p)
    assert abs(est.rho - 0.7) <= 0.05
    taus = np.arange(1, len(est.deltas) + 1)
    assert np.all(est.deltas <= est.m * est.rho**taus * (1 + 1e-12))
    assert est.m >= 1.0


# --- error cases ---------------------------------------------------------------------


def test_identity_chain_nonergodic():
    with pytest.raises(NonErgodic):
        oracle.stationary_distribution(np.eye(3))


def test_periodic_chain_nonergodic():
    with pytest.raises(NonErgodic):
        oracle.stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_zero_matrix_violates_assumption_one():
    with pytest.raises(AssumptionOneViolated):
        oracle.exploration_margin(np.zeros((2, 2)))


def test_uncentered_onehot_rejected(m2_mdp):
    fm = make_onehot(2)
    ch = induced_chain(m2_mdp, np.full((2, 2), 0.5))
    mu = oracle.stationary_distribution(ch)
    a_mat, _ = oracle.td_matrices(m2_mdp, Z4, fm, mu)
    assert oracle._margin(a_mat) <= 1e-10
    with pytest.raises(AssumptionOneViolated):
        oracle.exploration_margin(a_mat)


def test_zero_b_gives_zero_fixed_point():
    np.testing.assert_array_equal(oracle.td_fixed_point(np.array([[-2.0, 0.3], [0.1, -1.0]]), np.zeros(2)), 0.0)


# --- constant reward -------------------------------------------------------------------


def test_constant_reward(garnet5, garnet5_map):
    mdp = _const_reward(garnet5)
    theta = np.random.default_rng(0).standard_normal(15)
    b = oracle.compute_bundle(mdp, garnet5_map, theta)
    assert abs(b.j - 0.3) <= 1e-12
    assert np.abs(b.v).max() <= 1e-12
    assert np.abs(b.q).max() <= 1e-12
    assert np.abs(b.b_vec).max() <= 1e-12
    assert np.abs(b.grad_j).max() <= 1e-12
    assert np.abs(oracle.critic_target_jacobian(mdp, garnet5_map, theta)).max() <= 1e-9


def test_zero_reward(garnet5):
    mdp = _const_reward(garnet5, 0.0)
    assert oracle.exact_average_reward(mdp, np.ones(15)) == 0.0


# --- random-instance invariants -------------------------------------------------------


@given(st.integers(0, 200), st.floats(0.1, 3.0))
def test_bundle_invariants(seed, scale):
    mdp = _garnet(seed)
    fm = make_centered_basis(6)
    theta = scale * np.random.default_rng(seed).standard_normal(18)
    b = oracle.compute_bundle(mdp, fm, theta)
    assert np.all(b.mu >= 0) and abs(b.mu.sum() - 1) <= 1e-12
    assert np.abs(b.mu @ b.p_theta - b.mu).max() <= 1e-10
    assert np.linalg.norm(b.b_vec + b.a_mat @ b.omega_star) <= 1e-10
    assert abs(b.mu @ b.v) <= 1e-10
    np.testing.assert_allclose((b.probs * b.q).sum(axis=1), b.v, atol=1e-10)
    ch = induced_chain(mdp, b.probs)
    assert oracle.poisson_residual(ch, b.v, b.j) <= 1e-10
    assert abs(b.j) <= mdp.u_r
    assert b.lambda_margin > 0
    assert np.linalg.norm(b.omega_star) <= 2 * mdp.u_r / b.lambda_margin + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    mdp = _garnet(100 + seed, n=5, a=3)
    rng = np.random.default_rng(seed)
    for _ in range(2):
        theta = rng.standard_normal(15)
        g = oracle.exact_policy_gradient(mdp, theta)
        fd = np.empty(15)
        for k in range(15):
            e = np.zeros(15)
            e[k] = 1e-5
            fd[k] = (oracle.exact_average_reward(mdp, theta + e) - oracle.exact_average_reward(mdp, theta - e)) / 2e-5
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


def test_advantage_baseline_changes_nothing(garnet5):
    theta = np.random.default_rng(3).standard_normal(15)
    pol = BoltzmannPolicy(5, 3)
    b = oracle.compute_bundle(garnet5, make_centered_basis(5), theta)
    adv = b.q - b.v[:, None]
    g_adv = oracle._gradient(b.mu, b.probs, adv)
    # independent route: explicit sum of Q * score vectors
    g_sum = sum(b.mu[s] * b.probs[s, a] * b.q[s, a] * pol.log_grad(theta, s, a)
                for s in range(5) for a in range(3))
    np.testing.assert_allclose(g_adv, b.grad_j, atol=1e-14)
    np.testing.assert_allclose(g_sum, b.grad_j, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_second_route_oracles(seed):
    mdp = _garnet(300 + seed)
    theta = np.random.default_rng(seed).standard_normal(18)
    ch = induced_chain(mdp, BoltzmannPolicy(6, 3).probs(theta))
    mu = oracle.stationary_distribution(ch)
    np.testing.assert_allclose(oracle.stationary_distribution_power(ch), mu, atol=1e-10)
    j = oracle.average_reward(mu, ch.r_theta)
    v = oracle.value_function(ch, mu, j)
    v_series = oracle.value_function_series(ch, j, 1000)
    np.testing.assert_allclose(v_series - mu @ v_series, v, atol=1e-6)


def test_td_matrices_hand_formula(garnet5, garnet5_map):
    theta = np.random.default_rng(8).standard_normal(15)
    b = oracle.compute_bundle(garnet5, garnet5_map, theta)
    tab = garnet5_map.table
    a_ref = np.zeros((4, 4))
    b_ref = np.zeros(4)
    for s in range(5):
        for a in range(3):
            for s2 in range(5):
                w = b.mu[s] * b.probs[s, a] * garnet5.transition[s, a, s2]
                a_ref += w * np.outer(tab[s], tab[s2] - tab[s])
            b_ref += b.mu[s] * b.probs[s, a] * (garnet5.reward[s, a] - b.j) * tab[s]
    np.testing.assert_allclose(b.a_mat, a_ref, atol=1e-14)
    np.testing.assert_allclose(b.b_vec, b_ref, atol=1e-14)


def test_monte_carlo_critic_increment(garnet5, garnet5_map):
    rng = np.random.default_rng(21)
    theta = rng.standard_normal(15)
    omega = rng.standard_normal(4)
    b = oracle.compute_bundle(garnet5, garnet5_map, theta)
    obs = sample_observations(garnet5, b.mu, b.probs, rng, 10**6)
    g = semigradient_terms(garnet5, garnet5_map, b, obs, 0.0, omega).g
    mean = g.mean(axis=0)
    se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
    assert np.all(np.abs(mean - (b.b_vec + b.a_mat @ omega)) <= 4 * se)


# --- approximation error and jacobian ---------------------------------------------------


def test_approximation_error_m2(m2_mdp, m2_map):
    assert oracle.approximation_error(m2_mdp, m2_map, [Z4]) <= 1e-10
    probes = [Z4, np.array([1.0, -2.0, 0.5, 0.3]), np.array([-3.0, 0.0, 2.0, 1.0])]
    assert oracle.approximation_error(m2_mdp, m2_map, probes, modulo_constant=True) <= 1e-10


def test_m2_fixture_error_is_a_constant_shift(m2_mdp, m2_map):
    # away from theta = 0 mu is not uniform, so the mu-centred V differs from
    # the fitted critic by a constant vector only
    b = oracle.compute_bundle(m2_mdp, m2_map, np.array([1.0, -2.0, 0.5, 0.3]))
    err = m2_map.table @ b.omega_star - b.v
    assert abs(err[0] - err[1]) <= 1e-12
    assert abs(b.eps_app_theta - abs(err[0])) <= 1e-12


def test_approximation_error_rank_deficient(garnet5):
    fm = make_random_bounded(5, 1, 3)
    assert oracle.approximation_error(garnet5, fm, [np.zeros(15)]) > 1e-3
    assert oracle.approximation_error(garnet5, fm, [np.zeros(15)], modulo_constant=True) > 1e-3


def test_centered_basis_exact_modulo_constant(garnet5, garnet5_map):
    probes = [np.zeros(15), np.random.default_rng(4).standard_normal(15)]
    assert oracle.approximation_error(garnet5, garnet5_map, probes, modulo_constant=True) <= 1e-10


def test_approximation_error_singleton(garnet5, garnet5_map):
    theta = np.random.default_rng(2).standard_normal(15)
    b = oracle.compute_bundle(garnet5, garnet5_map, theta)
    assert oracle.approximation_error(garnet5, garnet5_map, [theta]) == b.eps_app_theta


def test_jacobian_richardson(m2_mdp, m2_map):
    j1 = oracle.critic_target_jacobian(m2_mdp, m2_map, Z4, step=1e-5)
    j2 = oracle.critic_target_jacobian(m2_mdp, m2_map, Z4, step=5e-6)
    rich = (4 * j2 - j1) / 3
    assert np.abs(j1 - rich).max() <= 1e-6
    assert j1.shape == (1, 4)


def test_tolerance_override_restores():
    before = oracle.TOL
    with oracle.tolerances(residual=1e-6):
        assert oracle.TOL == 1e-6
    assert oracle.TOL == before
