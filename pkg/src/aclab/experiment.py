"""Experiment configuration, seeded fan-out of runs, and artifact emission.

A config is a single JSON document. Every emitted file is a deterministic
function of the effective config (after any ``--seed`` override), whose
SHA-256 hash is echoed in the metrics.

Layout written by :func:`run_experiment`::

    <out>/config.json
    <out>/constants.json
    <out>/ratefit.json
    <out>/rates.dat, rates.gp
    <out>/T<T>/metrics.json, errors.csv
    <out>/T<T>/seed<k>/trace.csv, checkpoints.json
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import oracle
from .diagnostics import (
    BoundAudit,
    ErrorTrajectories,
    PaperConstants,
    audit_bounds,
    check_stepsize_condition,
    default_probes,
    error_trajectories,
    fit_rate,
    paper_constants,
    windowed_means,
)
from .errors import AssumptionOneViolated, ConfigError, Diverged, NonErgodic, ParameterError
from .features import (
    FeatureMap,
    m2_features,
    make_centered_basis,
    make_centered_onehot,
    make_onehot,
    make_random_bounded,
)
from .mdp import FiniteMdp, ergodic_garnet, generate_garnet, m2, validate
from .simulate import RunStreams, run_iid, run_markovian, stepsizes

OUTPUT_ROOT_ENV = "ACLAB_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INSTANCE = 3
EXIT_DIVERGED = 4

MDP_KINDS = ("garnet", "inline", "file", "m2")
FEATURE_KINDS = ("centered_basis", "centered_onehot", "random_bounded", "onehot", "custom", "m2")


def _positive_int(name, v, minimum=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {v!r}")
    return v


def _c_value(v):
    if v == "auto":
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 or not math.isfinite(v):
        raise ConfigError(f"c must be 'auto' or a positive number, got {v!r}")
    return float(v)


@dataclass
class ExperimentConfig:
    mdp: dict
    features: dict
    mode: str = "iid"
    T: list = field(default_factory=lambda: [4096])
    c: object = "auto"  # "auto", a number, or (for sweeps) a list of those
    seeds: int = 32
    master_seed: int = 0
    checkpoint_every: int = 64
    theta0: Optional[list] = None
    omega0: Optional[list] = None
    eta0: float = 0.0
    initial_distribution: Optional[list] = None
    u_omega: Optional[float] = None
    probes: dict = field(default_factory=lambda: {"count": 8, "scale": 1.0, "seed": 0})
    tau_max: int = 64
    mu_refresh_every: int = 1
    output_dir: str = "aclab-out"
    tolerances: dict = field(default_factory=dict)
    workers: int = 1
    base_dir: Optional[str] = field(default=None, compare=False)  # resolves relative file paths

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for req in ("mdp", "features"):
            if req not in d:
                raise ConfigError(f"missing required key {req!r}")
        cfg = cls(**d, base_dir=None if base_dir is None else str(base_dir))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.mdp, dict) or self.mdp.get("kind") not in MDP_KINDS:
            raise ConfigError(f"mdp.kind must be one of {MDP_KINDS}")
        if not isinstance(self.features, dict) or self.features.get("kind") not in FEATURE_KINDS:
            raise ConfigError(f"features.kind must be one of {FEATURE_KINDS}")
        if self.mode not in ("markovian", "iid"):
            raise ConfigError("mode must be 'markovian' or 'iid'")
        if isinstance(self.T, int) and not isinstance(self.T, bool):
            self.T = [self.T]
        if not isinstance(self.T, list) or not self.T:
            raise ConfigError("T must be a non-empty list of integers")
        for t in self.T:
            _positive_int("T", t)
        if len(set(self.T)) != len(self.T):
            raise ConfigError("T values must be distinct")
        for c in self.c_values():
            _c_value(c)
        _positive_int("seeds", self.seeds)
        _positive_int("master_seed", self.master_seed, 0)
        _positive_int("checkpoint_every", self.checkpoint_every)
        _positive_int("tau_max", self.tau_max)
        _positive_int("mu_refresh_every", self.mu_refresh_every)
        _positive_int("workers", self.workers)
        if self.u_omega is not None and not (isinstance(self.u_omega, (int, float)) and self.u_omega > 0):
            raise ConfigError("u_omega must be positive when given")
        if not isinstance(self.eta0, (int, float)) or isinstance(self.eta0, bool):
            raise ConfigError("eta0 must be a number")
        if not isinstance(self.probes, dict) or set(self.probes) - {"count", "scale", "seed"}:
            raise ConfigError("probes accepts the keys count, scale, seed")
        if not isinstance(self.tolerances, dict):
            raise ConfigError("tolerances must be an object")
        unknown = set(self.tolerances) - set(oracle._TOL_NAMES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")

    def c_values(self) -> list:
        return list(self.c) if isinstance(self.c, list) else [self.c]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_seed(self, master_seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["master_seed"] = master_seed
        return ExperimentConfig.from_dict(d, self.base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(d, base_dir=path.parent)


# --- instance construction ------------------------------------------------------------


def _resolve(cfg: ExperimentConfig, p) -> Path:
    p = Path(p)
    if not p.is_absolute() and cfg.base_dir is not None:
        p = Path(cfg.base_dir) / p
    return p


def build_mdp(cfg: ExperimentConfig) -> tuple[FiniteMdp, dict]:
    """Instance plus build info (e.g. the Garnet seed actually used)."""
    spec = dict(cfg.mdp)
    kind = spec.pop("kind")
    try:
        if kind == "m2":
            return m2(), {}
        if kind == "garnet":
            n_s = _positive_int("mdp.n_states", spec.get("n_states"))
            n_a = _positive_int("mdp.n_actions", spec.get("n_actions"))
            br = _positive_int("mdp.branching", spec.get("branching", n_s))
            seed = _positive_int("mdp.seed", spec.get("seed", 0), 0)
            u_r = float(spec.get("u_r", 1.0))
            if spec.get("require_ergodic", True):
                mdp, used = ergodic_garnet(n_s, n_a, br, seed, u_r)
            else:
                mdp, used = generate_garnet(n_s, n_a, br, seed, u_r), seed
            return mdp, {"garnet_seed_used": used}
        if kind == "inline":
            mdp = FiniteMdp(np.array(spec["transition"], dtype=float),
                            np.array(spec["reward"], dtype=float), float(spec.get("u_r", 1.0)))
        else:
            mdp = FiniteMdp.load(_resolve(cfg, spec["path"]))
    except KeyError as exc:
        raise ConfigError(f"mdp spec is missing {exc}") from exc
    except (OSError, ValueError, TypeError) as exc:
        if isinstance(exc, ParameterError) and "ergodic" in str(exc):
            raise NonErgodic(str(exc)) from exc
        raise ConfigError(f"invalid mdp spec: {exc}") from exc
    report = validate(mdp)
    if not report.valid:
        raise ConfigError(f"mdp fails validation: {report}")
    return mdp, {}


def build_features(cfg: ExperimentConfig, n_states: int) -> FeatureMap:
    spec = cfg.features
    kind = spec["kind"]
    try:
        if kind == "centered_basis":
            return make_centered_basis(n_states)
        if kind == "centered_onehot":
            return make_centered_onehot(n_states)
        if kind == "onehot":
            return make_onehot(n_states)
        if kind == "m2":
            return m2_features()
        if kind == "random_bounded":
            return make_random_bounded(n_states, int(spec["d"]), int(spec.get("seed", 0)))
        fmap = FeatureMap(np.array(spec["table"], dtype=float), "custom")
    except KeyError as exc:
        raise ConfigError(f"feature spec is missing {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid feature spec: {exc}") from exc
    if fmap.n_states != n_states:
        raise ConfigError("feature table rows do not match the number of states")
    return fmap


@dataclass
class Setup:
    """Immutable inputs shared by every run of an experiment."""

    config: ExperimentConfig
    mdp: FiniteMdp
    fmap: FeatureMap
    theta0: np.ndarray
    omega0: np.ndarray
    initial: Optional[np.ndarray]
    constants: PaperConstants  # bound to the threshold c
    u_omega: float
    lambda_theta0: float
    eps_app_probes: float
    info: dict

    def resolve_c(self, c) -> float:
        return self.constants.c_threshold if c == "auto" else float(c)

    def constants_for(self, c) -> PaperConstants:
        return self.constants.with_c(self.resolve_c(c))


def _vector(name, v, n):
    try:
        arr = np.array(v, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not numeric") from exc
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be {n} finite numbers")
    return arr


def prepare(cfg: ExperimentConfig) -> Setup:
    """Build the instance, check assumptions at theta0, evaluate constants.

    Raises ConfigError for malformed inputs and NonErgodic /
    AssumptionOneViolated when the instance breaks the standing assumptions.
    """
    with oracle.tolerances(**cfg.tolerances):
        mdp, info = build_mdp(cfg)
        fmap = build_features(cfg, mdp.n_states)
        dim = mdp.n_states * mdp.n_actions
        theta0 = np.zeros(dim) if cfg.theta0 is None else _vector("theta0", cfg.theta0, dim)
        omega0 = np.zeros(fmap.dim) if cfg.omega0 is None else _vector("omega0", cfg.omega0, fmap.dim)
        initial = None
        if cfg.initial_distribution is not None:
            initial = _vector("initial_distribution", cfg.initial_distribution, mdp.n_states)
            if np.any(initial < 0) or abs(initial.sum() - 1.0) > 1e-12:
                raise ConfigError("initial_distribution must be a probability vector")
        bundle0 = oracle.compute_bundle(mdp, fmap, theta0)
        pr = {"count": 8, "scale": 1.0, "seed": 0, **cfg.probes}
        probes = default_probes(theta0, int(pr["count"]), float(pr["scale"]), int(pr["seed"]))
        pc = paper_constants(mdp, fmap, probes, tau_max=cfg.tau_max)
        eps = oracle.approximation_error(mdp, fmap, probes)
        info["epsilon_app_probes_modulo_constant"] = oracle.approximation_error(mdp, fmap, probes,
                                                                               modulo_constant=True)
    u_omega = float(cfg.u_omega) if cfg.u_omega is not None else 2.0 * mdp.u_r / bundle0.lambda_margin
    for t_total in cfg.T:
        tau = pc.tau(t_total)
        if t_total < 2 * tau:
            raise ConfigError(f"T = {t_total} is below 2 * tau_T = {2 * tau}")
    return Setup(cfg, mdp, fmap, theta0, omega0, initial, pc, u_omega, float(bundle0.lambda_margin),
                 float(eps), info)


# --- per-seed work ----------------------------------------------------------------------


@dataclass
class SeedResult:
    seed_index: int
    trajectories: Optional[ErrorTrajectories]
    audit: Optional[BoundAudit]
    diverged_at: Optional[int] = None
    error: Optional[str] = None  # "nonergodic: ..." and similar aborts


def _seed_task(setup: Setup, t_total: int, c: float, k: int, out_dir: Optional[str]) -> SeedResult:
    cfg = setup.config
    steps = stepsizes(t_total, c)
    streams = RunStreams(cfg.master_seed, k)
    meta = {"seed_index": k, "master_seed": cfg.master_seed, "config_hash": cfg.hash(), "T": t_total, "c": c}
    common = dict(theta0=setup.theta0, omega0=setup.omega0, eta0=cfg.eta0, steps=steps,
                  u_omega=setup.u_omega, streams=streams, checkpoint_every=cfg.checkpoint_every, meta=meta)
    diverged_at = None
    error = None
    with oracle.tolerances(**cfg.tolerances):
        try:
            if cfg.mode == "markovian":
                trace = run_markovian(setup.mdp, setup.fmap, initial_dist=setup.initial, **common)
            else:
                trace = run_iid(setup.mdp, setup.fmap, mu_refresh_every=cfg.mu_refresh_every, **common)
        except Diverged as exc:
            trace = getattr(exc, "trace", None)
            diverged_at = exc.step
        except NonErgodic as exc:
            return SeedResult(k, None, None, error=f"nonergodic: {exc}")
        if trace is None:
            return SeedResult(k, None, None, diverged_at=diverged_at)
        if out_dir is not None:
            d = Path(out_dir) / f"seed{k}"
            d.mkdir(parents=True, exist_ok=True)
            trace.write_csv(d / "trace.csv")
            trace.write_checkpoints(d / "checkpoints.json")
        traj = error_trajectories(trace, setup.mdp, setup.fmap)
        audit = audit_bounds(trace, setup.mdp.u_r, setup.constants.b_bound)
    return SeedResult(k, traj, audit, diverged_at, error)


def _seed_task_packed(args):
    return _seed_task(*args)


def _map(tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [_seed_task_packed(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_seed_task_packed, tasks))


# --- aggregation --------------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


@dataclass
class CellResult:
    t_total: int
    c: float
    c_spec: object
    tau: int
    windowed: Optional[dict]
    verdict: dict
    seeds: list  # SeedResult, ordered by seed index
    error: Optional[str] = None

    @property
    def diverged_seeds(self) -> list:
        return [r.seed_index for r in self.seeds if r.diverged_at is not None]

    @property
    def failed_seeds(self) -> list:
        return [r.seed_index for r in self.seeds if r.error is not None]

    def audit_totals(self) -> dict:
        tot = {"omega_violations": 0, "delta_violations": 0, "actor_violations": 0, "eta_outside": 0}
        for r in self.seeds:
            if r.audit is not None:
                for key in tot:
                    tot[key] += getattr(r.audit, key)
        return tot

    def to_dict(self, setup: Setup) -> dict:
        lam = [r.trajectories.lambda_min for r in self.seeds if r.trajectories is not None]
        outside = sum(r.trajectories.omega_star_outside for r in self.seeds if r.trajectories is not None)
        w = self.windowed or {}
        return {
            "config_hash": setup.config.hash(),
            "T": self.t_total,
            "tau": self.tau,
            "c": self.c,
            "c_spec": self.c_spec,
            "Y_T": w.get("y_mean"),
            "Z_T": w.get("z_mean"),
            "G_T": w.get("g_mean"),
            "stderr": {"Y_T": w.get("y_se"), "Z_T": w.get("z_se"), "G_T": w.get("g_se")},
            "n_seeds": w.get("n_seeds", 0),
            "n_excluded": w.get("n_excluded", len(self.seeds)),
            "checkpoint_every": setup.config.checkpoint_every,
            "mode": setup.config.mode,
            "u_omega_run": setup.u_omega,
            "condition": self.verdict,
            "constants": setup.constants_for(self.c).to_dict(),
            "diverged_seeds": self.diverged_seeds,
            "failed_seeds": self.failed_seeds,
            "bound_violations": self.audit_totals(),
            "lambda_min_along_run": min(lam) if lam else None,
            "omega_star_outside_ball": int(outside),
            "error": self.error,
        }


def _finish_cell(setup: Setup, t_total: int, c_spec, results: list) -> CellResult:
    c = setup.resolve_c(c_spec)
    tau = setup.constants.tau(t_total)
    verdict = asdict(check_stepsize_condition(setup.constants_for(c)))
    results = sorted(results, key=lambda r: r.seed_index)
    usable = [r.trajectories for r in results
              if r.trajectories is not None and r.diverged_at is None and r.error is None]
    windowed = None
    error = None
    try:
        wm = windowed_means(usable, tau, t_total)
        windowed = wm.to_dict()
        windowed["n_excluded"] += len(results) - len(usable)
    except ParameterError as exc:
        error = str(exc)
    return CellResult(t_total, c, c_spec, tau, windowed, verdict, results, error)


def run_cells(setup: Setup, cells: list, out_dirs: Optional[list] = None) -> list:
    """Run every (T, c_spec) cell over all seeds; one flat task list feeds the pool."""
    cfg = setup.config
    tasks = []
    for i, (t_total, c_spec) in enumerate(cells):
        c = setup.resolve_c(c_spec)
        od = None if out_dirs is None else str(out_dirs[i])
        tasks += [(setup, t_total, c, k, od) for k in range(cfg.seeds)]
    flat = _map(tasks, cfg.workers)
    out = []
    for i, (t_total, c_spec) in enumerate(cells):
        chunk = flat[i * cfg.seeds:(i + 1) * cfg.seeds]
        out.append(_finish_cell(setup, t_total, c_spec, chunk))
    return out


def _errors_csv(cell: CellResult) -> str:
    lines = ["seed,t,y,z_norm_sq,grad_norm_sq,flagged"]
    for r in cell.seeds:
        tr = r.trajectories
        if tr is None:
            continue
        for t, y, z, g, f in zip(tr.t.tolist(), tr.y.tolist(), tr.z_norm_sq.tolist(),
                                 tr.grad_norm_sq.tolist(), tr.flagged.tolist()):
            lines.append(f"{r.seed_index},{t},{y!r},{z!r},{g!r},{int(f)}")
    return "\n".join(lines) + "\n"


def _rate_fits(cells: list) -> dict:
    ok = [c for c in cells if c.windowed is not None]
    out = {}
    for key, label in (("y_mean", "Y_T"), ("z_mean", "Z_T"), ("g_mean", "G_T")):
        pairs = [(c.t_total, c.windowed[key]) for c in ok]
        try:
            out[label] = asdict(fit_rate(pairs))
        except ParameterError as exc:
            out[label] = {"skipped": str(exc)}
    return out


def _rates_dat(cells: list) -> str:
    lines = ["# T Y_T Z_T G_T Y_se Z_se G_se"]
    for c in sorted(cells, key=lambda c: c.t_total):
        if c.windowed is None:
            continue
        w = c.windowed
        lines.append(" ".join(repr(v) for v in (c.t_total, w["y_mean"], w["z_mean"], w["g_mean"],
                                                w["y_se"], w["z_se"], w["g_se"])))
    return "\n".join(lines) + "\n"


RATES_GP = """\
set terminal pngcairo size 800,600
set output "rates.png"
set logscale xy
set format x "2^{%L}"
set xlabel "T"
set ylabel "windowed mean squared error"
set key top right
plot "rates.dat" using 1:2:5 with yerrorlines title "Y_T", \\
     "rates.dat" using 1:3:6 with yerrorlines title "Z_T", \\
     "rates.dat" using 1:4:7 with yerrorlines title "G_T"
"""


def output_path(cfg: ExperimentConfig, output_root=None) -> Path:
    root = output_root if output_root is not None else os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(cfg.output_dir)
    if not out.is_absolute() and root:
        out = Path(root) / out
    return out


@dataclass
class ExperimentResult:
    path: Optional[Path]
    exit_code: int
    setup: Setup
    cells: list
    ratefit: dict

    def metrics(self) -> dict:
        return {c.t_total: c.to_dict(self.setup) for c in self.cells}


def _constants_doc(setup: Setup, c) -> dict:
    return {
        "config_hash": setup.config.hash(),
        "constants": setup.constants_for(c).to_dict(),
        "c_spec": c,
        "u_omega_run": setup.u_omega,
        "lambda_theta0": setup.lambda_theta0,
        "epsilon_app_probes": setup.eps_app_probes,
        **setup.info,
    }


def run_experiment(cfg: ExperimentConfig, output_root=None, write: bool = True) -> ExperimentResult:
    """Run all seeds for every T at a single c and emit the artifact directory."""
    cs = cfg.c_values()
    if len(cs) != 1:
        raise ConfigError("run takes a single c; use sweep for a list")
    setup = prepare(cfg)
    out = output_path(cfg, output_root) if write else None
    dirs = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        dirs = [out / f"T{t}" for t in cfg.T]
    cells = run_cells(setup, [(t, cs[0]) for t in cfg.T], dirs)
    fits = _rate_fits(cells)
    code = EXIT_OK
    if any(c.failed_seeds for c in cells):
        code = EXIT_INSTANCE
    elif any(c.diverged_seeds for c in cells):
        code = EXIT_DIVERGED
    if out is not None:
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        _dump(out / "constants.json", _constants_doc(setup, cs[0]))
        for cell, d in zip(cells, dirs):
            d.mkdir(parents=True, exist_ok=True)
            _dump(d / "metrics.json", cell.to_dict(setup))
            (d / "errors.csv").write_text(_errors_csv(cell))
        _dump(out / "ratefit.json", {"config_hash": cfg.hash(), **fits})
        (out / "rates.dat").write_text(_rates_dat(cells))
        (out / "rates.gp").write_text(RATES_GP)
    return ExperimentResult(out, code, setup, cells, fits)


def sweep(cfg: ExperimentConfig, output_root=None, write: bool = True, cell_order=None) -> dict:
    """Grid over (T, c). Returns the aggregated report (also written as sweep.json).

    ``cell_order`` optionally permutes the execution order; the report is
    always sorted by (c position, T).
    """
    setup = prepare(cfg)
    grid = [(ci, t) for ci in range(len(cfg.c_values())) for t in cfg.T]
    order = list(range(len(grid))) if cell_order is None else list(cell_order)
    if sorted(order) != list(range(len(grid))):
        raise ConfigError("cell_order must be a permutation of the grid")
    out = output_path(cfg, output_root) if write else None
    cs = cfg.c_values()
    run_list = [grid[i] for i in order]
    dirs = None
    if out is not None:
        dirs = [out / f"c{ci}" / f"T{t}" for ci, t in run_list]
    results = run_cells(setup, [(t, cs[ci]) for ci, t in run_list], dirs)
    by_key = {key: res for key, res in zip(run_list, results)}
    report_cells = []
    for ci, t in grid:
        cell = by_key[(ci, t)]
        report_cells.append({
            "c_index": ci,
            "c_spec": cs[ci],
            "c": cell.c,
            "T": t,
            "tau": cell.tau,
            "windowed": cell.windowed,
            "condition": cell.verdict,
            "condition_fail": not cell.verdict["passed"],
            "diverged": bool(cell.diverged_seeds),
            "diverged_seeds": cell.diverged_seeds,
            "failed_seeds": cell.failed_seeds,
            "bound_violations": cell.audit_totals(),
            "error": cell.error,
        })
    report = {
        "config_hash": cfg.hash(),
        "c_threshold": setup.constants.c_threshold,
        "u_omega_run": setup.u_omega,
        "cells": report_cells,
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        _dump(out / "constants.json", _constants_doc(setup, "auto"))
        _dump(out / "sweep.json", report)
    return _clean(report)
