"""Exact linear-algebra oracles for a fixed policy parameter.

Everything here is computed in closed form from the MDP tables: the
stationary distribution, average reward, differential values, the TD(0)
matrices and fixed point, the policy gradient and mixing constants.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionOneViolated, NonErgodic, ParameterError
from .features import FeatureMap
from .mdp import FiniteMdp, InducedChain, induced_chain
from .policy import BoltzmannPolicy

TOL = 1e-10
COND_MAX = 1e12
PROBE_TOL = 1e-8
MIX_FLOOR = 1e-13

_TOL_NAMES = {"residual": "TOL", "cond_max": "COND_MAX", "probe": "PROBE_TOL", "mix_floor": "MIX_FLOOR"}


@contextmanager
def tolerances(**overrides):
    """Temporarily override the module tolerances (residual, cond_max, probe, mix_floor)."""
    g = globals()
    unknown = set(overrides) - set(_TOL_NAMES)
    if unknown:
        raise ParameterError(f"unknown tolerance(s): {sorted(unknown)}")
    saved = {k: g[_TOL_NAMES[k]] for k in overrides}
    try:
        for k, v in overrides.items():
            g[_TOL_NAMES[k]] = float(v)
        yield
    finally:
        for k, v in saved.items():
            g[_TOL_NAMES[k]] = v


def _policy(mdp: FiniteMdp) -> BoltzmannPolicy:
    return BoltzmannPolicy(mdp.n_states, mdp.n_actions)


def _p_matrix(chain) -> np.ndarray:
    return chain.p_theta if isinstance(chain, InducedChain) else np.asarray(chain, dtype=float)


# --- stationary distribution -------------------------------------------------


def _solve_stationary(p: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    m = np.eye(n) - p.T
    m[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    return np.linalg.solve(m, rhs), m


def stationary_distribution(chain, check: bool = True) -> np.ndarray:
    """Unique stationary distribution of a (row-stochastic) chain.

    Solved as (I - P^T) mu = 0 with the last equation replaced by
    sum(mu) = 1. With ``check`` the system's conditioning is verified and the
    answer is compared against the limit of repeated squaring of P, which
    also catches periodic chains.
    """
    p = _p_matrix(chain)
    try:
        mu, m = _solve_stationary(p)
    except np.linalg.LinAlgError as exc:
        raise NonErgodic("stationary system is singular") from exc
    if check:
        if not np.all(np.isfinite(mu)) or np.linalg.cond(m) > COND_MAX:
            raise NonErgodic("stationary system is numerically singular")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if check:
        if np.abs(mu @ p - mu).max() > TOL:
            raise NonErgodic("stationary residual above tolerance")
        q = p.copy()
        for _ in range(64):
            q2 = q @ q
            # row sums drift as (1 + eps)^(2^k) under squaring unless renormalised
            q2 /= q2.sum(axis=1, keepdims=True)
            if np.abs(q2 - q).max() < 1e-14:
                q = q2
                break
            q = q2
        if np.abs(q - mu[None, :]).max() > PROBE_TOL:
            raise NonErgodic("power-iteration probe disagrees with the linear solve "
                             "(chain is periodic or has several recurrent classes)")
    return mu


def stationary_distribution_power(chain, n_iter: int = 100_000, tol: float = 1e-15) -> np.ndarray:
    """Independent route: iterate mu <- mu P from the uniform distribution."""
    p = _p_matrix(chain)
    mu = np.full(p.shape[0], 1.0 / p.shape[0])
    for _ in range(n_iter):
        nxt = mu @ p
        if np.abs(nxt - mu).max() < tol:
            return nxt
        mu = nxt
    return mu


def average_reward(mu: np.ndarray, r_theta: np.ndarray) -> float:
    return float(mu @ r_theta)


def value_function(chain: InducedChain, mu: np.ndarray, j: float, check: bool = True) -> np.ndarray:
    """Differential values V with mu^T V = 0.

    Uses the nonsingular system (I - P + 1 mu^T) V = r - J 1.
    """
    p = chain.p_theta
    n = p.shape[0]
    m = np.eye(n) - p + np.outer(np.ones(n), mu)
    rhs = chain.r_theta - j
    if check and np.linalg.cond(m) > COND_MAX:
        raise NonErgodic("Poisson system is numerically singular")
    try:
        return np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonErgodic("Poisson system is singular") from exc


def value_function_series(chain: InducedChain, j: float, n_terms: int = 1000) -> np.ndarray:
    """Independent route: truncated sum of E[r_t - J | s_0 = s] over t."""
    p = chain.p_theta
    term = chain.r_theta - j
    v = np.zeros_like(term)
    for _ in range(n_terms):
        v += term
        term = p @ term
    return v


def poisson_residual(chain: InducedChain, v: np.ndarray, j: float) -> float:
    return float(np.abs(v - chain.p_theta @ v - (chain.r_theta - j)).max())


def q_function(mdp: FiniteMdp, v: np.ndarray, j: float) -> np.ndarray:
    """Q(s, a) = r(s, a) - J + sum_s2 P(s2|s, a) V(s2)."""
    return mdp.reward - j + mdp.transition @ v


# --- TD(0) quantities ----------------------------------------------------------


def _td_from_parts(p_theta, r_theta, table, mu, j):
    dm = mu[:, None] * table
    a_mat = dm.T @ (p_theta @ table - table)
    b_vec = dm.T @ (r_theta - j)
    return a_mat, b_vec


def td_matrices(mdp: FiniteMdp, theta, fmap: FeatureMap, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expected TD(0) drift terms under the stationary distribution.

    A = sum_s mu(s) phi(s) (E[phi(s') | s] - phi(s))^T and
    b = sum_s mu(s) (r_theta(s) - J) phi(s).
    """
    chain = induced_chain(mdp, _policy(mdp).probs(theta))
    j = average_reward(mu, chain.r_theta)
    return _td_from_parts(chain.p_theta, chain.r_theta, fmap.table, mu, j)


def td_fixed_point(a_mat: np.ndarray, b_vec: np.ndarray) -> np.ndarray:
    a_mat = np.atleast_2d(a_mat)
    if np.linalg.cond(a_mat) > COND_MAX:
        raise AssumptionOneViolated("TD matrix is numerically singular")
    w = np.linalg.solve(a_mat, -np.asarray(b_vec, dtype=float))
    if np.abs(b_vec + a_mat @ w).max() > TOL * max(1.0, np.abs(b_vec).max()):
        raise AssumptionOneViolated("TD fixed-point residual above tolerance")
    return w


def _margin(a_mat: np.ndarray) -> float:
    sym = 0.5 * (a_mat + a_mat.T)
    return float(-np.linalg.eigvalsh(sym).max())


def exploration_margin(a_mat) -> float:
    """lambda = -max eig of the symmetric part of A; must be positive."""
    lam = _margin(np.atleast_2d(np.asarray(a_mat, dtype=float)))
    if lam <= TOL:
        raise AssumptionOneViolated(f"exploration margin {lam:.3e} is not positive")
    return lam


# --- bundle --------------------------------------------------------------------


@dataclass(frozen=True)
class OracleBundle:
    theta: np.ndarray
    probs: np.ndarray
    p_theta: np.ndarray
    r_theta: np.ndarray
    mu: np.ndarray
    j: float
    v: np.ndarray
    q: np.ndarray
    a_mat: np.ndarray
    b_vec: np.ndarray
    omega_star: np.ndarray
    grad_j: np.ndarray
    lambda_margin: float
    eps_app_theta: float

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def _gradient(mu, probs, q) -> np.ndarray:
    # coordinate (s, b): mu(s) pi(b|s) (Q(s, b) - sum_a pi(a|s) Q(s, a))
    v_pi = (probs * q).sum(axis=1, keepdims=True)
    return (mu[:, None] * probs * (q - v_pi)).ravel()


def compute_bundle(mdp: FiniteMdp, fmap: FeatureMap, theta, check: bool = True) -> OracleBundle:
    """All oracle quantities at one parameter value.

    Raises NonErgodic for a bad chain and AssumptionOneViolated if the TD
    matrix cannot be inverted. A non-positive margin is stored, not raised;
    call :func:`exploration_margin` to enforce it.
    """
    policy = _policy(mdp)
    theta = np.asarray(theta, dtype=float).ravel().copy()
    probs = policy.probs(theta)
    chain = induced_chain(mdp, probs)
    mu = stationary_distribution(chain, check=check)
    j = average_reward(mu, chain.r_theta)
    v = value_function(chain, mu, j, check=check)
    q = q_function(mdp, v, j)
    a_mat, b_vec = _td_from_parts(chain.p_theta, chain.r_theta, fmap.table, mu, j)
    w = td_fixed_point(a_mat, b_vec)
    err = fmap.table @ w - v
    return OracleBundle(
        theta=theta, probs=probs, p_theta=chain.p_theta, r_theta=chain.r_theta,
        mu=mu, j=j, v=v, q=q, a_mat=a_mat, b_vec=b_vec, omega_star=w,
        grad_j=_gradient(mu, probs, q), lambda_margin=_margin(a_mat),
        eps_app_theta=float(math.sqrt(mu @ err**2)),
    )


def exact_policy_gradient(mdp: FiniteMdp, theta) -> np.ndarray:
    """grad J(theta) = E_{mu, pi}[Q(s, a) grad log pi(a|s)], flattened."""
    probs = _policy(mdp).probs(theta)
    chain = induced_chain(mdp, probs)
    mu = stationary_distribution(chain)
    j = average_reward(mu, chain.r_theta)
    v = value_function(chain, mu, j)
    return _gradient(mu, probs, q_function(mdp, v, j))


def exact_average_reward(mdp: FiniteMdp, theta, check: bool = True) -> float:
    chain = induced_chain(mdp, _policy(mdp).probs(theta))
    return average_reward(stationary_distribution(chain, check=check), chain.r_theta)


def omega_star(mdp: FiniteMdp, fmap: FeatureMap, theta, check: bool = True) -> np.ndarray:
    chain = induced_chain(mdp, _policy(mdp).probs(theta))
    mu = stationary_distribution(chain, check=check)
    j = average_reward(mu, chain.r_theta)
    a_mat, b_vec = _td_from_parts(chain.p_theta, chain.r_theta, fmap.table, mu, j)
    return td_fixed_point(a_mat, b_vec)


def approximation_error(mdp: FiniteMdp, fmap: FeatureMap, thetas, modulo_constant: bool = False) -> float:
    """Largest local RMS critic error sqrt(E_mu (phi^T w* - V)^2) over the probes.

    This is a lower estimate of the supremum over all parameters. V is the
    mu-centred differential value; with ``modulo_constant`` the best
    additive constant is removed first (the error then measures only what
    the features cannot represent up to the Poisson equation's free shift).
    """
    thetas = list(thetas)
    if not thetas:
        raise ParameterError("need at least one probe parameter")
    out = 0.0
    for t in thetas:
        b = compute_bundle(mdp, fmap, t)
        if modulo_constant:
            err = fmap.table @ b.omega_star - b.v
            err = err - b.mu @ err
            out = max(out, float(math.sqrt(b.mu @ err**2)))
        else:
            out = max(out, b.eps_app_theta)
    return out


# --- mixing ----------------------------------------------------------------------


@dataclass(frozen=True)
class MixingEstimate:
    m: float
    rho: float
    deltas: np.ndarray  # worst-start TV distance for tau = 1..tau_max


def tv_profile(chain, mu: np.ndarray, tau_max: int = 64) -> np.ndarray:
    p = _p_matrix(chain)
    pk = np.eye(p.shape[0])
    out = np.empty(tau_max)
    for k in range(tau_max):
        pk = pk @ p
        out[k] = 0.5 * np.abs(pk - mu[None, :]).sum(axis=1).max()
    return out


def mixing_estimate(chain, tau_max: int = 64, mu: np.ndarray | None = None) -> MixingEstimate:
    """Fit d_TV(P^tau(s, .), mu) <= m rho^tau on tau = 1..tau_max.

    log of the worst-start distance is regressed on tau; rho = exp(slope)
    is clamped to [1e-6, 1 - 1e-6] and m is raised until the bound holds at
    every probed tau. Distances below 1e-13 are treated as zero.
    """
    if mu is None:
        mu = stationary_distribution(chain)
    deltas = tv_profile(chain, mu, tau_max)
    deltas = np.where(deltas < MIX_FLOOR, 0.0, deltas)
    taus = np.arange(1, tau_max + 1)
    keep = deltas > 0
    if keep.sum() >= 2:
        slope, intercept = np.polyfit(taus[keep], np.log(deltas[keep]), 1)
        rho = math.exp(slope)
        m = max(1.0, math.exp(intercept))
    else:
        rho, m = 0.0, 1.0
    rho = min(max(rho, 1e-6), 1 - 1e-6)
    for tau, d in zip(taus[keep], deltas[keep]):
        m = max(m, d / rho**tau)
    return MixingEstimate(m=float(m), rho=float(rho), deltas=deltas)


# --- sensitivity of the critic target ------------------------------------------------


def critic_target_jacobian(mdp: FiniteMdp, fmap: FeatureMap, theta, step: float = 1e-5) -> np.ndarray:
    """d omega*/d theta by central differences, shape (dim, n_states * n_actions)."""
    theta = np.asarray(theta, dtype=float).ravel()
    jac = np.empty((fmap.dim, theta.size))
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        jac[:, k] = (omega_star(mdp, fmap, theta + e) - omega_star(mdp, fmap, theta - e)) / (2 * step)
    return jac
