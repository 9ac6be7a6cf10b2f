"""Acceptance suite: oracle identities, unbiasedness checks and rate-trend experiments.

``run_suite("fast")`` covers the exact-oracle criteria plus determinism and
finishes in well under a minute; ``run_suite("full")`` adds the seeded
convergence experiments (a few minutes on one core).
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import oracle
from .diagnostics import bias_functionals, fit_rate
from .experiment import ExperimentConfig, prepare, run_cells, run_experiment
from .features import m2_features, make_centered_basis
from .mdp import ergodic_garnet, induced_chain, m2
from .oracle import compute_bundle
from .simulate import sample_observations

GARNET5 = {"kind": "garnet", "n_states": 5, "n_actions": 3, "branching": 3, "seed": 0}
RATE_T = (2**12, 2**14, 2**16)
RATE_SEEDS = 32
CHECKPOINT_EVERY = 64
RANDOM_FEATURE = {"kind": "random_bounded", "d": 1, "seed": 3}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict
    threshold: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items() if not isinstance(v, (list, dict)))
        return f"[{tag}] {self.number}. {self.name}: {parts} (need {self.threshold}; {self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return asdict(self)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# --- exact-oracle criteria ------------------------------------------------------------


def _random_garnets(count: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n_s = int(rng.integers(2, 11))
        n_a = int(rng.integers(2, 5))
        br = int(rng.integers(2, n_s + 1))
        mdp, _ = ergodic_garnet(n_s, n_a, br, 1000 * k + seed)
        out.append(mdp)
    return out, rng


def criterion_oracle_consistency(n_instances: int = 20, n_theta: int = 5, seed: int = 11) -> CriterionResult:
    mdps, rng = _random_garnets(n_instances, seed)
    worst = {"stationarity": 0.0, "poisson": 0.0, "td_fixed_point": 0.0, "mu_v": 0.0, "pi_q_minus_v": 0.0}
    for mdp in mdps:
        fmap = make_centered_basis(mdp.n_states)
        for _ in range(n_theta):
            theta = rng.standard_normal(mdp.n_states * mdp.n_actions)
            b = compute_bundle(mdp, fmap, theta)
            chain = induced_chain(mdp, b.probs)
            worst["stationarity"] = max(worst["stationarity"], float(np.linalg.norm(b.mu @ chain.p_theta - b.mu)))
            worst["poisson"] = max(worst["poisson"], float(oracle.poisson_residual(chain, b.v, b.j)))
            worst["td_fixed_point"] = max(worst["td_fixed_point"],
                                          float(np.linalg.norm(b.b_vec + b.a_mat @ b.omega_star)))
            worst["mu_v"] = max(worst["mu_v"], abs(float(b.mu @ b.v)))
            worst["pi_q_minus_v"] = max(worst["pi_q_minus_v"],
                                        float(np.abs((b.probs * b.q).sum(axis=1) - b.v).max()))
    passed = all(v <= 1e-10 for v in worst.values())
    return CriterionResult(1, "oracle self-consistency", passed, worst, "every residual <= 1e-10")


def _fd_gradient(mdp, theta, step=1e-5):
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        g[k] = (oracle.exact_average_reward(mdp, theta + e) - oracle.exact_average_reward(mdp, theta - e)) / (2 * step)
    return g


def criterion_exact_gradient(n_pairs: int = 10, seed: int = 12) -> CriterionResult:
    mdps, rng = _random_garnets(n_pairs, seed)
    worst = 0.0
    for mdp in mdps:
        theta = rng.standard_normal(mdp.n_states * mdp.n_actions)
        g = oracle.exact_policy_gradient(mdp, theta)
        fd = _fd_gradient(mdp, theta)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    g_m2 = oracle.exact_policy_gradient(m2(), np.zeros(4))
    m2_err = float(np.abs(g_m2 - np.array([-0.1, 0.1, -0.1, 0.1])).max())
    passed = worst <= 1e-6 and m2_err <= 1e-10
    return CriterionResult(2, "exact gradient", passed,
                           {"max_relative_error": worst, "m2_gradient_error": m2_err, "m2_gradient": g_m2.tolist()},
                           "relative error <= 1e-6; M2 gradient within 1e-10")


def criterion_worked_fixture() -> CriterionResult:
    mdp, fmap = m2(), m2_features()
    b = compute_bundle(mdp, fmap, np.zeros(4))
    eps = oracle.approximation_error(mdp, fmap, [np.zeros(4)])
    errs = {
        "J": abs(b.j - 0.5),
        "V": float(np.abs(b.v - np.array([-0.5, 0.5])).max()),
        "A": float(np.abs(b.a_mat - np.array([[-1.0]])).max()),
        "b": float(np.abs(b.b_vec - np.array([-0.5])).max()),
        "omega_star": float(np.abs(b.omega_star - np.array([-0.5])).max()),
        "eps_app": float(eps),
        "lambda": abs(b.lambda_margin - 1.0),
    }
    return CriterionResult(3, "worked fixture", all(v <= 1e-10 for v in errs.values()), errs,
                           "all deviations <= 1e-10")


def _unbiasedness_cases(mdp, fmap, rng, n_states: int, n_draws: int):
    rows = []
    for _ in range(n_states):
        theta = rng.standard_normal(mdp.n_states * mdp.n_actions)
        b = compute_bundle(mdp, fmap, theta)
        eta = float(rng.uniform(-mdp.u_r, mdp.u_r))
        omega = rng.standard_normal(fmap.dim)
        omega *= rng.uniform(0.1, 1.0) * (2.0 * mdp.u_r / b.lambda_margin) / np.linalg.norm(omega)
        jac = oracle.critic_target_jacobian(mdp, fmap, theta)
        obs = sample_observations(mdp, b.mu, b.probs, rng, n_draws)
        bf = bias_functionals(mdp, fmap, b, obs, eta, omega, jacobian=jac)
        row = {}
        for name, vals in (("Phi", bf.phi_f), ("Psi", bf.psi_f), ("Theta", bf.theta_f), ("Xi", bf.xi_f)):
            mean = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(vals.size))
            row[name] = abs(mean) / se if se > 0 else (0.0 if abs(mean) <= 1e-12 else math.inf)
        rows.append(row)
    return rows


def criterion_iid_unbiasedness(n_states: int = 5, n_draws: int = 10**6, seed: int = 13) -> CriterionResult:
    rng = np.random.default_rng(seed)
    garnet, _ = ergodic_garnet(5, 3, 3, 0)
    z = {}
    for label, mdp, fmap in (("m2", m2(), m2_features()), ("garnet5", garnet, make_centered_basis(5))):
        z[label] = _unbiasedness_cases(mdp, fmap, rng, n_states, n_draws)
    worst = max(v for rows in z.values() for row in rows for v in row.values())
    return CriterionResult(4, "iid-unbiasedness", worst <= 4.0,
                           {"max_abs_z": worst, "z_scores": z}, "|mean| <= 4 standard errors for every functional")


# --- seeded rate experiments --------------------------------------------------------------


def rate_config(mode: str, features: dict, t_values=RATE_T, seeds: int = RATE_SEEDS, **extra) -> ExperimentConfig:
    d = {"mdp": dict(GARNET5), "features": dict(features), "mode": mode, "T": list(t_values), "c": "auto",
         "seeds": seeds, "checkpoint_every": CHECKPOINT_EVERY, "output_dir": "acceptance"}
    d.update(extra)
    return ExperimentConfig.from_dict(d)


@dataclass
class RateRuns:
    """Lazily computed rate-experiment cells shared by criteria 5 to 8."""

    seeds: int = RATE_SEEDS
    t_values: tuple = RATE_T
    overrides: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)

    def cells(self, mode: str, features: dict):
        key = (mode, tuple(sorted(features.items())))
        if key not in self.cache:
            cfg = rate_config(mode, features, t_values=self.t_values, seeds=self.seeds, **self.overrides)
            setup = prepare(cfg)
            self.cache[key] = (setup, run_cells(setup, [(t, "auto") for t in self.t_values]))
        return self.cache[key]


def _trend(cells) -> dict:
    y = [c.windowed["y_mean"] for c in cells]
    z = [c.windowed["z_mean"] for c in cells]
    g = [c.windowed["g_mean"] for c in cells]
    out = {"Y_T": y, "Z_T": z, "G_T": g}
    for label, vals in (("Y", y), ("Z", z), ("G", g)):
        out[f"{label}_decreasing"] = all(b < a for a, b in zip(vals, vals[1:]))
        out[f"{label}_slope"] = fit_rate([(c.t_total, v) for c, v in zip(cells, vals)]).slope
    return out


def _have_aggregates(cells) -> bool:
    return all(c.windowed is not None for c in cells)


def criterion_iid_trend(runs: RateRuns) -> CriterionResult:
    setup, cells = runs.cells("iid", {"kind": "centered_basis"})
    if not _have_aggregates(cells):
        return CriterionResult(5, "convergence trend (iid)", False, {"error": [c.error for c in cells]},
                               "aggregates for every T")
    m = _trend(cells)
    m["c"] = setup.constants.c_threshold
    passed = m["Y_decreasing"] and m["Z_decreasing"] and m["G_decreasing"] and -0.8 <= m["G_slope"] <= -0.25
    return CriterionResult(5, "convergence trend (iid)", passed, m,
                           "Y, Z, G strictly decreasing and G slope in [-0.8, -0.25]")


def criterion_markov_trend(runs: RateRuns) -> CriterionResult:
    setup, cells = runs.cells("markovian", {"kind": "centered_basis"})
    if not _have_aggregates(cells):
        return CriterionResult(6, "convergence trend (markovian)", False, {"error": [c.error for c in cells]},
                               "aggregates for every T")
    m = _trend(cells)
    m["c"] = setup.constants.c_threshold
    passed = m["Y_decreasing"] and m["Z_decreasing"] and m["G_decreasing"] and m["G_slope"] <= -0.2
    return CriterionResult(6, "convergence trend (markovian)", passed, m,
                           "Y, Z, G strictly decreasing and G slope <= -0.2")


def criterion_approximation_floor(runs: RateRuns) -> CriterionResult:
    _, exact = runs.cells("iid", {"kind": "centered_basis"})
    setup, rough = runs.cells("iid", RANDOM_FEATURE)
    if not (_have_aggregates(exact) and _have_aggregates(rough)):
        return CriterionResult(7, "approximation-error floor", False, {}, "aggregates for every T")
    z_exact = [c.windowed["z_mean"] for c in exact]
    z_rough = [c.windowed["z_mean"] for c in rough]
    m = {
        "Z_rough": z_rough,
        "Z_exact": z_exact,
        "floor_factor": z_rough[-1] / z_exact[-1],
        "rough_ratio": z_rough[-1] / z_rough[-2],
        "exact_ratio": z_exact[-1] / z_exact[-2],
        "eps_app_rough": setup.eps_app_probes,
        "eps_app_rough_modulo_constant": setup.info["epsilon_app_probes_modulo_constant"],
        "c_rough": setup.constants.c_threshold,
    }
    passed = m["floor_factor"] >= 5.0 and m["rough_ratio"] >= 0.5 and m["exact_ratio"] <= 0.5
    return CriterionResult(7, "approximation-error floor", passed, m,
                           "Z_rough >= 5 Z_exact at 2^16, rough ratio >= 0.5, exact ratio <= 0.5")


def criterion_critic_boundedness(runs: RateRuns) -> CriterionResult:
    totals = {"diverged_runs": 0, "failed_runs": 0, "omega_violations": 0, "delta_violations": 0,
              "actor_violations": 0, "eta_outside": 0, "runs": 0}
    for mode in ("iid", "markovian"):
        _, cells = runs.cells(mode, {"kind": "centered_basis"})
        for cell in cells:
            totals["diverged_runs"] += len(cell.diverged_seeds)
            totals["failed_runs"] += len(cell.failed_seeds)
            totals["runs"] += len(cell.seeds)
            for k, v in cell.audit_totals().items():
                totals[k] += v
    passed = all(totals[k] == 0 for k in ("diverged_runs", "failed_runs", "omega_violations",
                                          "delta_violations", "actor_violations"))
    return CriterionResult(8, "critic boundedness", passed, totals,
                           "no divergence and zero bound violations across all traces")


def criterion_determinism(seeds: int = RATE_SEEDS) -> CriterionResult:
    cfg = rate_config("iid", {"kind": "centered_basis"}, t_values=(RATE_T[0],), seeds=seeds)
    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for rep in ("first", "second"):
            res = run_experiment(cfg, output_root=Path(tmp) / rep)
            paths.append(res.path)
        files = sorted(p.relative_to(paths[0]) for p in paths[0].rglob("trace.csv"))
        mismatched = [str(f) for f in files if (paths[0] / f).read_bytes() != (paths[1] / f).read_bytes()]
        n_second = len(list(paths[1].rglob("trace.csv")))
    passed = len(files) == seeds and n_second == seeds and not mismatched
    return CriterionResult(9, "determinism", passed,
                           {"trace_files": len(files), "mismatched": len(mismatched)},
                           "byte-identical trace CSVs on rerun")


FAST = (1, 2, 3, 4, 9)
FULL = tuple(range(1, 10))


def run_suite(level: str = "fast", only=None, progress: Optional[Callable] = None,
              seeds: int = RATE_SEEDS, runs: Optional[RateRuns] = None) -> list:
    """Run the criteria for ``level``; returns CriterionResult objects in order."""
    numbers = FAST if level == "fast" else FULL
    if only is not None:
        numbers = tuple(n for n in numbers if n in set(only))
    runs = runs if runs is not None else RateRuns(seeds=seeds)
    table = {
        1: criterion_oracle_consistency,
        2: criterion_exact_gradient,
        3: criterion_worked_fixture,
        4: criterion_iid_unbiasedness,
        5: lambda: criterion_iid_trend(runs),
        6: lambda: criterion_markov_trend(runs),
        7: lambda: criterion_approximation_floor(runs),
        8: lambda: criterion_critic_boundedness(runs),
        9: lambda: criterion_determinism(seeds),
    }
    results = []
    for n in numbers:
        t0 = time.perf_counter()
        res = table[n]()
        res.seconds = time.perf_counter() - t0
        results.append(res)
        if progress is not None:
            progress(res)
    return results
