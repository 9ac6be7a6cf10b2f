"""Tabular softmax (Boltzmann) policy with one-hot state-action features.

Parameters are logits ``theta[s, a]``; the flat parameter vector orders
coordinates as ``s * n_actions + a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def inverse_cdf(probs: np.ndarray, u: float) -> int:
    """Smallest index whose cumulative probability reaches ``u``.

    A variate exactly on a boundary goes to the lower index; rounding in the
    last cumulative entry is absorbed by the final index.
    """
    k = int(np.searchsorted(np.cumsum(probs), u, side="left"))
    return min(k, len(probs) - 1)


@dataclass(frozen=True)
class BoltzmannPolicy:
    n_states: int
    n_actions: int

    @property
    def dim(self) -> int:
        return self.n_states * self.n_actions

    def table(self, theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        if t.size != self.dim:
            raise ParameterError(f"theta has {t.size} entries, expected {self.dim}")
        return t.reshape(self.n_states, self.n_actions)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dim)

    def _check_state(self, s):
        if not 0 <= s < self.n_states:
            raise ParameterError(f"state {s} out of range [0, {self.n_states})")

    def probs(self, theta) -> np.ndarray:
        """pi(a|s) for every state, shape (n_states, n_actions)."""
        return softmax(self.table(theta))

    def action_probs(self, theta, s: int) -> np.ndarray:
        self._check_state(s)
        return softmax(self.table(theta)[s])

    def log_grad(self, theta, s: int, a: int) -> np.ndarray:
        """Score function: psi(s, a) - sum_b pi(b|s) psi(s, b), flattened."""
        self._check_state(s)
        if not 0 <= a < self.n_actions:
            raise ParameterError(f"action {a} out of range [0, {self.n_actions})")
        g = np.zeros((self.n_states, self.n_actions))
        g[s] = -self.action_probs(theta, s)
        g[s, a] += 1.0
        return g.ravel()

    def sample_action(self, theta, s: int, rng: np.random.Generator) -> int:
        return inverse_cdf(self.action_probs(theta, s), rng.random())


@dataclass(frozen=True)
class PolicyConstants:
    """Assumption-3 constants for the softmax class.

    The analytic values feed the constant calculus; the ``probe_*`` fields
    hold the largest ratios observed by :func:`probe_policy_constants`.
    """

    b_bound: float
    l_l: float
    l_pi: float
    probe_b: Optional[float] = None
    probe_l_l: Optional[float] = None
    probe_l_pi: Optional[float] = None


def policy_constants(n_states: int, n_actions: int) -> PolicyConstants:
    # ||psi(s,a) - E psi|| <= 2 max ||psi|| with ||psi|| = 1; the same
    # conservative 2 is used for both Lipschitz constants.
    if n_states < 1 or n_actions < 1:
        raise ParameterError("n_states and n_actions must be positive")
    return PolicyConstants(b_bound=2.0, l_l=2.0, l_pi=2.0)


def probe_policy_constants(policy: BoltzmannPolicy, n_probes: int = 1000, seed: int = 0,
                           scale: float = 3.0) -> PolicyConstants:
    """Analytic constants plus empirical maxima over random (theta1, theta2, s, a)."""
    rng = np.random.default_rng(seed)
    base = policy_constants(policy.n_states, policy.n_actions)
    b = ll = lpi = 0.0
    for _ in range(n_probes):
        t1 = scale * rng.standard_normal(policy.dim)
        t2 = t1 + rng.standard_normal(policy.dim) * rng.choice([1e-3, 0.1, 1.0])
        s = int(rng.integers(policy.n_states))
        a = int(rng.integers(policy.n_actions))
        dist = np.linalg.norm(t1 - t2)
        g1, g2 = policy.log_grad(t1, s, a), policy.log_grad(t2, s, a)
        b = max(b, np.linalg.norm(g1))
        ll = max(ll, np.linalg.norm(g1 - g2) / dist)
        lpi = max(lpi, abs(policy.action_probs(t1, s)[a] - policy.action_probs(t2, s)[a]) / dist)
    return PolicyConstants(base.b_bound, base.l_l, base.l_pi, float(b), float(ll), float(lpi))
