"""Online single-timescale actor-critic runners (Markovian and i.i.d. sampling).

Each step performs the three parallel updates

    delta = r - eta + phi(s')^T w - phi(s)^T w
    eta  <- eta + gamma (r - eta)
    w    <- Proj_U(w + beta delta phi(s))
    theta <- theta + alpha delta grad log pi(a|s)

with every right-hand side evaluated at the pre-update iterates.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import lapack

from .errors import Diverged, MixingTooSlow, ParameterError
from .features import FeatureMap
from .mdp import FiniteMdp
from .oracle import stationary_distribution

TAU_CAP = 10**6

# purpose tags for the per-run random streams; see RunStreams
PURPOSES = {"action": 0, "transition": 1, "stationary": 2, "initial": 3}


@dataclass(frozen=True)
class StepSizes:
    alpha: float
    beta: float
    gamma: float
    c: float
    t_total: int


def stepsizes(t_total: int, c: float) -> StepSizes:
    """Constant schedule alpha = c / sqrt(T), beta = gamma = 1 / sqrt(T)."""
    if t_total < 1 or not c > 0:
        raise ParameterError("need T >= 1 and c > 0")
    beta = 1.0 / math.sqrt(t_total)
    return StepSizes(alpha=c * beta, beta=beta, gamma=beta, c=float(c), t_total=int(t_total))


def mixing_time_tau(m: float, rho: float, t_total: int) -> int:
    """Smallest i >= 0 with m * rho**(i - 1) <= 1 / sqrt(T)."""
    if not m > 0 or not 0 < rho < 1 or t_total < 1:
        raise ParameterError("need m > 0, 0 < rho < 1 and T >= 1")
    target = 1.0 / math.sqrt(t_total)
    val = m / rho
    for i in range(TAU_CAP + 1):
        if val <= target:
            return i
        val *= rho
    raise MixingTooSlow(f"tau_T exceeds {TAU_CAP}")


def project(omega: np.ndarray, u_omega: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius ``u_omega``."""
    nrm = float(np.linalg.norm(omega))
    if nrm <= u_omega:
        return omega
    return omega * (u_omega / nrm)


# --- random streams --------------------------------------------------------------


class RunStreams:
    """Independent uniform streams for one run.

    Stream (run_index, purpose) is PCG64 seeded by
    ``SeedSequence(master_seed, spawn_key=(run_index, PURPOSES[purpose]))``.
    """

    def __init__(self, master_seed: int, run_index: int = 0):
        self.master_seed = int(master_seed)
        self.run_index = int(run_index)

    def generator(self, purpose: str) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.run_index, PURPOSES[purpose]))
        return np.random.Generator(np.random.PCG64(ss))

    def uniforms(self, purpose: str, n: int) -> np.ndarray:
        return self.generator(purpose).random(n)


class ScriptedStreams:
    """Replays fixed variates; used to hand-check the update order."""

    def __init__(self, **arrays):
        self.arrays = {k: np.asarray(v, dtype=float) for k, v in arrays.items()}
        self.master_seed = None
        self.run_index = None

    def uniforms(self, purpose: str, n: int) -> np.ndarray:
        arr = self.arrays.get(purpose, np.zeros(0))
        if arr.size < n:
            arr = np.concatenate([arr, np.full(n - arr.size, 0.5)])
        return arr[:n]


# --- traces ----------------------------------------------------------------------


@dataclass
class LearnerState:
    eta: float
    omega: np.ndarray
    theta: np.ndarray
    t: int
    s_current: Optional[int] = None


@dataclass
class Trace:
    mode: str
    steps: StepSizes
    u_omega: float
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    delta: np.ndarray
    eta: np.ndarray
    omega_norm: np.ndarray
    actor_step: np.ndarray  # ||theta_{t+1} - theta_t||
    ckpt_t: np.ndarray
    ckpt_eta: np.ndarray
    ckpt_omega: np.ndarray
    ckpt_theta: np.ndarray
    final: LearnerState
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.s)

    def csv_text(self) -> str:
        lines = ["t,s,a,r,delta,eta,omega_norm"]
        for t, (s, a, r, d, e, w) in enumerate(zip(self.s.tolist(), self.a.tolist(), self.r.tolist(),
                                                    self.delta.tolist(), self.eta.tolist(),
                                                    self.omega_norm.tolist())):
            lines.append(f"{t},{s},{a},{r!r},{d!r},{e!r},{w!r}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())

    def checkpoints_dict(self) -> dict:
        return {
            str(int(t)): {"eta": float(e), "omega": w.tolist(), "theta": th.tolist()}
            for t, e, w, th in zip(self.ckpt_t, self.ckpt_eta, self.ckpt_omega, self.ckpt_theta)
        }

    def write_checkpoints(self, path) -> None:
        Path(path).write_text(json.dumps(self.checkpoints_dict()))


# --- runners ---------------------------------------------------------------------


def _cdf_lists(p: np.ndarray) -> list:
    cum = np.cumsum(p, axis=-1)
    return cum.tolist()


class _StationarySolver:
    """Per-step stationary distribution via one LU solve (no ergodicity probes).

    The instance is probed once before the run; softmax policies keep the
    transition graph fixed, so the unprobed solve stays valid as theta moves.
    """

    def __init__(self, n: int):
        self.eye = np.eye(n)
        self.rhs = np.zeros(n)
        self.rhs[-1] = 1.0

    def __call__(self, p_theta: np.ndarray) -> np.ndarray:
        m = self.eye - p_theta.T
        m[-1, :] = 1.0
        _, _, mu, info = lapack.dgesv(m, self.rhs)
        if info != 0:
            raise Diverged(-1, "stationary solve became singular")
        return mu


def _state_cdf(mu: np.ndarray) -> list:
    return np.cumsum(mu).tolist()


def _softmax_list(row: list) -> list:
    mx = max(row)
    e = [math.exp(v - mx) for v in row]
    tot = sum(e)
    return [v / tot for v in e]


def _draw(cdf: list, u: float) -> int:
    k = bisect_left(cdf, u)
    n = len(cdf)
    return k if k < n else n - 1


def _run(mode, mdp, fmap, theta0, omega0, eta0, steps, u_omega, streams,
         checkpoint_every, initial_dist, mu_refresh_every, meta):
    if fmap.n_states != mdp.n_states:
        raise ParameterError("feature map and MDP disagree on the number of states")
    if checkpoint_every < 1 or mu_refresh_every < 1:
        raise ParameterError("checkpoint_every and mu_refresh_every must be >= 1")
    if not u_omega > 0:
        raise ParameterError("u_omega must be positive")
    n_s, n_a, d = mdp.n_states, mdp.n_actions, fmap.dim
    T = steps.t_total
    alpha, beta, gamma = steps.alpha, steps.beta, steps.gamma

    theta = (np.zeros((n_s, n_a)) if theta0 is None
             else np.array(theta0, dtype=float).reshape(n_s, n_a).copy())
    omega = np.zeros(d) if omega0 is None else np.array(omega0, dtype=float).copy()
    eta = float(eta0)
    if omega.shape != (d,):
        raise ParameterError(f"omega0 must have dimension {d}")

    table = fmap.table
    reward = mdp.reward.tolist()
    trans_cdf = _cdf_lists(mdp.transition)
    transition = mdp.transition

    u_act = streams.uniforms("action", T)
    u_next = streams.uniforms("transition", T)

    # the policy row touched per step is tiny; plain floats beat numpy here
    theta_rows = theta.tolist()
    probs = [_softmax_list(row) for row in theta_rows]

    iid = mode == "iid"
    if iid:
        u_state = streams.uniforms("stationary", T)
        p_theta = np.einsum("sa,sak->sk", np.array(probs), transition)
        stationary_distribution(p_theta)  # raises NonErgodic before any step is taken
        solve_mu = _StationarySolver(n_s)
        state_cdf = None
        s = -1
    else:
        init = (np.full(n_s, 1.0 / n_s) if initial_dist is None
                else np.asarray(initial_dist, dtype=float))
        s = _draw(_state_cdf(init), streams.uniforms("initial", 1)[0])

    rec_s = np.empty(T, dtype=np.int64)
    rec_a = np.empty(T, dtype=np.int64)
    rec_r = np.empty(T)
    rec_d = np.empty(T)
    rec_e = np.empty(T)
    rec_w = np.empty(T)
    rec_step = np.empty(T)
    n_ck = (T + checkpoint_every - 1) // checkpoint_every
    ck_t = np.arange(0, T, checkpoint_every)
    ck_e = np.empty(n_ck)
    ck_w = np.empty((n_ck, d))
    ck_th = np.empty((n_ck, n_s * n_a))

    w_norm = float(np.linalg.norm(omega))
    actions = range(n_a)
    t = 0
    try:
        for t in range(T):
            if t % checkpoint_every == 0:
                k = t // checkpoint_every
                ck_e[k] = eta
                ck_w[k] = omega
                ck_th[k] = np.ravel(theta_rows)
            if iid:
                if state_cdf is None or t % mu_refresh_every == 0:
                    state_cdf = _state_cdf(solve_mu(p_theta))
                s = _draw(state_cdf, u_state[t])
            pi = probs[s]
            a = _draw(list(accumulate(pi)), u_act[t])
            s2 = _draw(trans_cdf[s][a], u_next[t])
            r = reward[s][a]
            fs = table[s]
            values = table @ omega
            delta = r - eta + float(values[s2] - values[s])

            rec_s[t] = s
            rec_a[t] = a
            rec_r[t] = r
            rec_d[t] = delta
            rec_e[t] = eta
            rec_w[t] = w_norm

            eta = eta + gamma * (r - eta)
            omega = omega + (beta * delta) * fs
            w_norm = math.sqrt(omega @ omega)
            if w_norm > u_omega:
                omega = project(omega, u_omega)
                w_norm = math.sqrt(omega @ omega)
            # actor: grad log pi(a|s) is e_a - pi(.|s) on the state-s block
            step = alpha * delta
            row = theta_rows[s]
            sq = 0.0
            for b in actions:
                g = 1.0 - pi[b] if b == a else -pi[b]
                row[b] += step * g
                sq += g * g
            rec_step[t] = abs(step) * math.sqrt(sq)

            if not (math.isfinite(delta) and math.isfinite(eta) and math.isfinite(w_norm)
                    and math.isfinite(rec_step[t])):
                raise Diverged(t)

            probs[s] = _softmax_list(row)
            if iid:
                p_theta[s] = np.dot(probs[s], transition[s])
            else:
                s = s2
    except Diverged as exc:
        n = t + 1
        exc.trace = _make_trace(mode, steps, u_omega, n, rec_s, rec_a, rec_r, rec_d, rec_e, rec_w,
                                rec_step, ck_t, ck_e, ck_w, ck_th, checkpoint_every, eta, omega,
                                np.array(theta_rows), t, s, meta)
        raise

    return _make_trace(mode, steps, u_omega, T, rec_s, rec_a, rec_r, rec_d, rec_e, rec_w, rec_step,
                       ck_t, ck_e, ck_w, ck_th, checkpoint_every, eta, omega, np.array(theta_rows), T,
                       None if iid else s, meta)


def _make_trace(mode, steps, u_omega, n, rec_s, rec_a, rec_r, rec_d, rec_e, rec_w, rec_step,
                ck_t, ck_e, ck_w, ck_th, every, eta, omega, theta, t_final, s_final, meta):
    n_ck = (n + every - 1) // every
    return Trace(
        mode=mode, steps=steps, u_omega=float(u_omega),
        s=rec_s[:n], a=rec_a[:n], r=rec_r[:n], delta=rec_d[:n], eta=rec_e[:n],
        omega_norm=rec_w[:n], actor_step=rec_step[:n],
        ckpt_t=ck_t[:n_ck], ckpt_eta=ck_e[:n_ck], ckpt_omega=ck_w[:n_ck], ckpt_theta=ck_th[:n_ck],
        final=LearnerState(eta=float(eta), omega=omega.copy(), theta=theta.ravel().copy(),
                           t=int(t_final), s_current=s_final),
        meta=dict(meta or {}, mode=mode),
    )


def run_markovian(mdp: FiniteMdp, fmap: FeatureMap, theta0=None, omega0=None, eta0: float = 0.0,
                  steps: StepSizes = None, u_omega: float = None, streams=None,
                  checkpoint_every: int = 1, initial_dist=None, meta: dict | None = None) -> Trace:
    """Single-trajectory actor-critic; the next state carries over between steps.

    Per step the action variate is consumed before the transition variate.
    The initial state is drawn from ``initial_dist`` (uniform by default)
    using the ``initial`` stream.
    """
    return _run("markovian", mdp, fmap, theta0, omega0, eta0, steps, u_omega, streams,
                checkpoint_every, initial_dist, 1, meta)


def run_iid(mdp: FiniteMdp, fmap: FeatureMap, theta0=None, omega0=None, eta0: float = 0.0,
            steps: StepSizes = None, u_omega: float = None, streams=None,
            checkpoint_every: int = 1, mu_refresh_every: int = 1, meta: dict | None = None) -> Trace:
    """Actor-critic with s_t drawn afresh from the stationary distribution of pi_{theta_t}.

    The sampled successor only enters the TD error. ``mu_refresh_every = k``
    reuses the stationary distribution for k steps (an approximation; keep 1
    for exact sampling).
    """
    return _run("iid", mdp, fmap, theta0, omega0, eta0, steps, u_omega, streams,
                checkpoint_every, None, mu_refresh_every, meta)


def sample_observations(mdp: FiniteMdp, mu: np.ndarray, probs: np.ndarray,
                        rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n i.i.d. tuples (s, a, s') with s ~ mu, a ~ pi(.|s), s' ~ P(.|s, a)."""
    cdf = np.asarray(_state_cdf(mu))
    s = np.minimum(np.searchsorted(cdf, rng.random(n), side="left"), mdp.n_states - 1)
    acdf = np.cumsum(probs, axis=1)[s]
    a = np.minimum((acdf < rng.random(n)[:, None]).sum(axis=1), mdp.n_actions - 1)
    tcdf = np.cumsum(mdp.transition, axis=2)[s, a]
    s2 = np.minimum((tcdf < rng.random(n)[:, None]).sum(axis=1), mdp.n_states - 1)
    return s, a, s2
