from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from aclab import oracle
from aclab.cli import main
from aclab.diagnostics import paper_constants, default_probes
from aclab.experiment import ExperimentConfig, prepare, run_experiment, sweep
from aclab.features import m2_features
from aclab.mdp import m2

M2_RUN = {"mdp": {"kind": "m2"}, "features": {"kind": "m2"}, "mode": "iid", "T": [4096], "seeds": 2,
          "output_dir": "out"}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _files(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def m2_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfgp = _write(root, M2_RUN)
    code = main(["run", str(cfgp), "--output-root", str(root / "a")])
    return root, cfgp, code


def test_run_layout(m2_run):
    root, _, code = m2_run
    assert code == 0
    out = root / "a" / "out"
    assert _files(out) == [
        "T4096/errors.csv", "T4096/metrics.json",
        "T4096/seed0/checkpoints.json", "T4096/seed0/trace.csv",
        "T4096/seed1/checkpoints.json", "T4096/seed1/trace.csv",
        "config.json", "constants.json", "ratefit.json", "rates.dat", "rates.gp",
    ]


def test_run_is_byte_identical(m2_run):
    root, cfgp, _ = m2_run
    assert main(["run", str(cfgp), "--output-root", str(root / "b")]) == 0
    a, b = root / "a" / "out", root / "b" / "out"
    for rel in _files(a):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_metrics_content(m2_run):
    root, _, _ = m2_run
    met = json.loads((root / "a" / "out" / "T4096" / "metrics.json").read_text())
    cfg = ExperimentConfig.from_dict(M2_RUN)
    assert met["config_hash"] == cfg.hash()
    pc = paper_constants(m2(), m2_features(), default_probes(np.zeros(4)))
    assert met["c"] == pc.c_threshold
    assert met["condition"]["passed"] is True
    assert met["n_seeds"] == 2 and met["diverged_seeds"] == []
    assert met["T"] == 4096 and met["mode"] == "iid"
    for key in ("Y_T", "Z_T", "G_T"):
        assert met[key] >= 0


def test_errors_csv_header(m2_run):
    root, _, _ = m2_run
    lines = (root / "a" / "out" / "T4096" / "errors.csv").read_text().splitlines()
    assert lines[0] == "seed,t,y,z_norm_sq,grad_norm_sq,flagged"
    assert len(lines) > 2
    assert {ln.split(",")[0] for ln in lines[1:]} == {"0", "1"}


def test_seed_override_changes_hash():
    cfg = ExperimentConfig.from_dict(M2_RUN)
    assert cfg.with_seed(5).hash() != cfg.hash()
    assert cfg.with_seed(0).hash() == cfg.hash()


def test_output_root_env(tmp_path, monkeypatch):
    cfgp = _write(tmp_path, {**M2_RUN, "T": [256], "seeds": 1, "output_dir": "envout"})
    monkeypatch.setenv("ACLAB_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["run", str(cfgp)]) == 0
    assert (tmp_path / "root" / "envout" / "T256" / "metrics.json").exists()


def test_config_errors(tmp_path, capsys):
    assert main(["run", str(_write(tmp_path, {**M2_RUN, "bogus": 1}))]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["run", str(_write(tmp_path, {**M2_RUN, "mode": "sync"}))]) == 2
    assert "config error" in capsys.readouterr().err


def test_nonergodic_instance_exit(tmp_path):
    p = [[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]
    cfg = {"mdp": {"kind": "inline", "transition": p, "reward": [[0, 0], [1, 1]]},
           "features": {"kind": "centered_basis"}, "T": [256], "seeds": 1, "output_dir": "x"}
    assert main(["run", str(_write(tmp_path, cfg)), "--output-root", str(tmp_path)]) == 3


def test_divergence_exit(tmp_path):
    cfgp = _write(tmp_path, {**M2_RUN, "T": [256], "seeds": 1, "eta0": float("nan")})
    assert main(["run", str(cfgp), "--output-root", str(tmp_path)]) == 4
    met = json.loads((tmp_path / "out" / "T256" / "metrics.json").read_text())
    assert met["diverged_seeds"] == [0]


# --- sweep ---------------------------------------------------------------------------------


def test_sweep_single_cell_matches_run():
    cfg = ExperimentConfig.from_dict({**M2_RUN, "T": [1024]})
    rep = sweep(cfg, write=False)
    res = run_experiment(cfg, write=False)
    cell = rep["cells"][0]
    w = res.cells[0].windowed
    assert cell["windowed"]["g_mean"] == w["g_mean"]
    assert cell["windowed"]["y_mean"] == w["y_mean"]
    assert cell["condition_fail"] is False


def test_sweep_flags_and_order(tmp_path):
    base = {**M2_RUN, "T": [256, 1024], "seeds": 2, "c": ["auto", 0.05]}
    cfg = ExperimentConfig.from_dict(base)
    a = sweep(cfg, write=False)
    b = sweep(cfg, write=False, cell_order=[3, 1, 0, 2])
    assert [c["windowed"] for c in a["cells"]] == [c["windowed"] for c in b["cells"]]
    assert [(c["c_index"], c["T"]) for c in a["cells"]] == [(0, 256), (0, 1024), (1, 256), (1, 1024)]
    assert [c["condition_fail"] for c in a["cells"]] == [False, False, True, True]
    assert not any(c["diverged"] for c in a["cells"])


def test_sweep_marks_divergence(tmp_path):
    cfgp = _write(tmp_path, {**M2_RUN, "T": [256], "seeds": 1, "c": [0.1], "eta0": float("nan")})
    assert main(["sweep", str(cfgp), "--output-root", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "out" / "sweep.json").read_text())
    assert rep["cells"][0]["diverged"] is True


# --- other verbs ---------------------------------------------------------------------------


def test_constants_verb(tmp_path):
    out = tmp_path / "c.json"
    assert main(["constants", str(_write(tmp_path, M2_RUN)), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    setup = prepare(ExperimentConfig.from_dict(M2_RUN))
    assert doc["constants"]["c_threshold"] == setup.constants.c_threshold
    assert doc["constants"]["b_bound"] == 2.0 and doc["constants"]["n_probes"] == 9
    assert doc["constants"]["condition"]["passed"] is True


def test_oracle_verb(tmp_path):
    theta = tmp_path / "theta.txt"
    theta.write_text("1 -2 0.5 0.3\n")
    out = tmp_path / "o.json"
    assert main(["oracle", str(_write(tmp_path, M2_RUN)), "--theta", str(theta), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    ref = oracle.compute_bundle(m2(), m2_features(), np.array([1.0, -2.0, 0.5, 0.3]))
    assert doc["j"] == pytest.approx(ref.j, abs=1e-12)
    theta.write_text(json.dumps({"theta": [0, 0, 0, 0]}))
    assert main(["oracle", str(_write(tmp_path, M2_RUN)), "--theta", str(theta), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["j"] == pytest.approx(0.5, abs=1e-12)  # uniform mean reward


def test_verify_fast_subprocess(tmp_path):
    rep = tmp_path / "v.json"
    proc = subprocess.run([sys.executable, "-m", "aclab.cli", "verify", "--fast", "--json", str(rep)],
                          capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith("[")]
    assert len(lines) == 5 and all(ln.startswith("[PASS]") for ln in lines)
    assert json.loads(rep.read_text())["passed"] is True


# --- critic boundedness fault injection ----------------------------------------------------


@pytest.mark.parametrize("patched", [False, True])
def test_boundedness_criterion_detects_missing_projection(monkeypatch, patched):
    from aclab import simulate as sim
    from aclab.acceptance import RateRuns, criterion_critic_boundedness

    if patched:
        monkeypatch.setattr(sim, "project", lambda w, u: w)
    runs = RateRuns(seeds=2, t_values=(1024, 2048, 4096), overrides={"u_omega": 0.05})
    assert criterion_critic_boundedness(runs).passed is (not patched)


def test_worker_count_does_not_change_numbers():
    base = {**M2_RUN, "T": [1024], "seeds": 4}
    a = run_experiment(ExperimentConfig.from_dict(base), write=False).cells[0].windowed
    b = run_experiment(ExperimentConfig.from_dict({**base, "workers": 2}), write=False).cells[0].windowed
    assert a == b
