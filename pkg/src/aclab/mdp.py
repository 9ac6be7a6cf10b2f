"""Finite MDPs, Garnet instance generation and policy-induced chains."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

ROW_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FiniteMdp:
    """Dense tabular MDP.

    ``transition[s, a, s2]`` is P(s2 | s, a) and ``reward[s, a]`` the
    deterministic reward, bounded in magnitude by ``u_r``.
    """

    transition: np.ndarray
    reward: np.ndarray
    u_r: float = 1.0

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.reward)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ParameterError(f"transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ParameterError(f"reward shape {r.shape} does not match transition {p.shape}")
        if not self.u_r > 0:
            raise ParameterError("u_r must be positive")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "u_r", float(self.u_r))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "u_r": self.u_r,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteMdp":
        mdp = cls(np.array(d["transition"], dtype=float), np.array(d["reward"], dtype=float), d.get("u_r", 1.0))
        if "n_states" in d and d["n_states"] != mdp.n_states:
            raise ParameterError("n_states does not match transition tensor")
        if "n_actions" in d and d["n_actions"] != mdp.n_actions:
            raise ParameterError("n_actions does not match transition tensor")
        return mdp

    def dumps(self) -> str:
        # json emits repr() floats, which round-trip IEEE doubles exactly
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "FiniteMdp":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "FiniteMdp":
        return cls.loads(Path(path).read_text())


@dataclass
class ValidationReport:
    row_violations: list = field(default_factory=list)  # (s, a, row_sum, row_min)
    reward_violations: list = field(default_factory=list)  # (s, a, reward)

    @property
    def valid(self) -> bool:
        return not self.row_violations and not self.reward_violations


def validate(mdp: FiniteMdp) -> ValidationReport:
    """Check stochasticity of every transition row and the reward bound."""
    report = ValidationReport()
    sums = mdp.transition.sum(axis=2)
    mins = mdp.transition.min(axis=2)
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            if abs(sums[s, a] - 1.0) > ROW_TOL or mins[s, a] < 0:
                report.row_violations.append((s, a, float(sums[s, a]), float(mins[s, a])))
            if abs(mdp.reward[s, a]) > mdp.u_r:
                report.reward_violations.append((s, a, float(mdp.reward[s, a])))
    return report


def generate_garnet(n_states: int, n_actions: int, branching: int, seed: int, u_r: float = 1.0) -> FiniteMdp:
    """Random Garnet MDP.

    Every (s, a) row puts mass on exactly ``branching`` distinct next states,
    with weights given by the spacings of sorted uniforms on [0, 1].
    """
    if n_states < 1 or n_actions < 1:
        raise ParameterError("n_states and n_actions must be positive")
    if not 1 <= branching <= n_states:
        raise ParameterError(f"branching must lie in [1, {n_states}], got {branching}")
    rng = np.random.default_rng(seed)
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            support = rng.choice(n_states, size=branching, replace=False)
            cuts = np.sort(rng.random(branching - 1))
            weights = np.diff(np.concatenate(([0.0], cuts, [1.0])))
            p[s, a, support] = weights
    # exact spacings sum to 1 only up to rounding; fold the residue into the largest entry
    resid = 1.0 - p.sum(axis=2)
    idx = p.argmax(axis=2)
    np.put_along_axis(p, idx[..., None], np.take_along_axis(p, idx[..., None], 2) + resid[..., None], 2)
    reward = rng.uniform(-u_r, u_r, size=(n_states, n_actions))
    return FiniteMdp(p, reward, u_r)


def ergodic_garnet(n_states: int, n_actions: int, branching: int, seed: int,
                   u_r: float = 1.0, max_tries: int = 1000) -> tuple[FiniteMdp, int]:
    """First Garnet instance, scanning seeds upward from ``seed``, that is ergodic.

    Softmax policies have full support, so the induced chain has the same
    transition graph for every theta; probing the uniform policy suffices.
    Returns the instance and the seed that produced it.
    """
    from .oracle import stationary_distribution
    from .errors import NonErgodic

    for k in range(max_tries):
        mdp = generate_garnet(n_states, n_actions, branching, seed + k, u_r)
        chain = induced_chain(mdp, np.full((n_states, n_actions), 1.0 / n_actions))
        try:
            stationary_distribution(chain)
        except NonErgodic:
            continue
        return mdp, seed + k
    raise ParameterError(f"no ergodic Garnet instance within {max_tries} seeds")


@dataclass(frozen=True)
class InducedChain:
    p_theta: np.ndarray
    r_theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_theta", _frozen(self.p_theta))
        object.__setattr__(self, "r_theta", _frozen(self.r_theta))

    @property
    def n_states(self) -> int:
        return self.p_theta.shape[0]


def induced_chain(mdp: FiniteMdp, probs: np.ndarray) -> InducedChain:
    """Chain over states obtained by marginalising actions under ``probs[s, a]``.

    ``probs`` is the policy table pi(a|s); use ``BoltzmannPolicy.probs`` to
    obtain it from logits.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (mdp.n_states, mdp.n_actions):
        raise ParameterError(f"policy table shape {probs.shape} does not match MDP "
                             f"({mdp.n_states}, {mdp.n_actions})")
    p = np.einsum("sa,sak->sk", probs, mdp.transition)
    r = np.einsum("sa,sa->s", probs, mdp.reward)
    return InducedChain(p, r)


def m2() -> FiniteMdp:
    """Two-state, two-action fixture used throughout the tests.

    Action 0 ("L") moves to state 0 w.p. 0.9, action 1 ("R") to state 1 w.p.
    0.9, from either state. Reward is 0 in state 0 and 1 in state 1.
    """
    p = np.empty((2, 2, 2))
    p[:, 0] = (0.9, 0.1)
    p[:, 1] = (0.1, 0.9)
    r = np.array([[0.0, 0.0], [1.0, 1.0]])
    return FiniteMdp(p, r, 1.0)
