import csv
import json

import numpy as np
import pytest

from mvmrf.cli import main
from mvmrf.io import parse_config, write_archive
from mvmrf.sampler import PosteriorArchive

CONFIG = {
    "lattice": {"nx": 4, "ny": 3},
    "variables": [{"name": "temperature", "unit": "K"}, {"name": "precipitation", "unit": "mm/day"}],
    "output": "out",
    "prior": {"variance_shape": 1.0, "variance_rate": 0.1},
    "sampler": {"n_chains": 2, "regime1_iters": 20, "regime2_iters": 20, "regime3_iters": 40,
                "thin": 2, "adapt_interval": 10, "seed": 5},
    "simulate": {"m": 3, "seed": 11, "alpha": [[1.0, 0.5, -0.3], [-0.5, 0.2, 0.1]],
                 "beta_bar": [[2.0], [-1.0]], "sigma2": [0.25, 0.25], "sigma2_b": 0.1,
                 "dep": {"rho12": -0.2, "phi11": 0.15, "phi22": 0.15, "phi12": 0.1, "phi21": 0.05}},
    "analysis": {"probabilities": ["0:above:median"], "joint": [["0:above:median", "1:below:median"]],
                 "clusters": 2, "contour_boxes": [0, 5], "conditional": [{"cond_var": 0, "target_var": 1}]},
}


def write_config(tmp_path, cfg=CONFIG):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_validate_prints_dimensions(tmp_path, capsys):
    assert main(["validate", "--config", str(write_config(tmp_path))]) == 0
    out = capsys.readouterr().out
    assert "4 x 3" in out and "p = 2" in out and "config hash" in out


def test_validate_config_error(tmp_path, capsys):
    cfg = dict(CONFIG, lattice={"nx": 0, "ny": 3})
    assert main(["validate", "--config", str(write_config(tmp_path, cfg))]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_dataset_is_config_error(tmp_path):
    cfg = {k: v for k, v in CONFIG.items() if k != "simulate"}
    assert main(["validate", "--config", str(write_config(tmp_path, cfg))]) == 2


def test_bad_dataset_is_data_error(tmp_path):
    cfg_path = write_config(tmp_path)
    bad = tmp_path / "bad.csv"
    bad.write_text("location,grid_x\n0,0\n")
    assert main(["sample", "--config", str(cfg_path), "--data", str(bad)]) == 3


def test_simulate_sample_diagnose_summarize(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "dataset.csv").exists() and (out / "dataset_truth.json").exists()
    status = main(["sample", "--config", str(cfg_path), "--out", str(out)])
    assert status in (0, 4)
    capsys.readouterr()
    status = main(["diagnose", "--out", str(out)])
    assert status in (0, 4)
    table = capsys.readouterr().out
    for name in ("rho12", "phi12", "phi21", "sigma2_1", "tau2_2", "h_bar["):
        assert name in table
    assert "acceptance" in table
    assert main(["summarize", "--config", str(cfg_path), "--out", str(out), "--prob", "above:median"]) == 0
    manifest = json.loads((out / "summary.json").read_text())
    assert manifest["files"] == ["posterior_summary.csv", "probability.csv", "conditional.csv",
                                 "clusters.csv", "cluster_tree.csv", "contours.csv"]
    probs = read_csv(out / "probability.csv")
    assert len(probs) == 12
    assert list(probs[0])[3:] == ["p_var1_above_median", "p_var2_above_median",
                                  "joint_var1_above_median__var2_below_median"]
    for row in probs:
        assert float(row["joint_var1_above_median__var2_below_median"]) <= float(row["p_var1_above_median"])
    contours = read_csv(out / "contours.csv")
    assert len(contours) == 2 * 64 and set(contours[0]) == {"box", "angle_index", "x", "y"}
    assert {row["cluster"] for row in read_csv(out / "clusters.csv")} == {"0", "1"}


def test_diagnose_missing_archive(tmp_path):
    assert main(["diagnose", "--archive", str(tmp_path / "none.mvmrf")]) == 3


def test_summarize_constant_archive(tmp_path):
    cfg_path = write_config(tmp_path, dict(CONFIG, analysis={}))
    cfg = parse_config(json.loads(cfg_path.read_text()), tmp_path)
    n, p, S = 12, 2, 10
    per_box = np.arange(n * p, dtype=float)
    groups = {"field": np.broadcast_to(per_box, (1, S, n * p)).copy(), "dep": np.zeros((1, S, 5))}
    meta = {"n_chains": 1, "n_saved": S, "n": n, "p": p, "seed": 0, "warnings": []}
    archive_path = tmp_path / "const.mvmrf"
    write_archive(archive_path, PosteriorArchive(groups, meta), cfg)
    out = tmp_path / "summary"
    assert main(["summarize", "--config", str(cfg_path), "--archive", str(archive_path),
                 "--out", str(out), "--prob", "above:median"]) == 0
    rows = read_csv(out / "probability.csv")
    values = {float(r[c]) for r in rows for c in ("p_var1_above_median", "p_var2_above_median")}
    assert values == {0.0, 1.0}
    # boxes above the global median of their variable are exactly the upper half
    assert sum(float(r["p_var1_above_median"]) for r in rows) == n // 2


def test_summarize_dimension_mismatch(tmp_path):
    cfg_path = write_config(tmp_path, dict(CONFIG, analysis={}))
    groups = {"field": np.zeros((1, 10, 6)), "dep": np.zeros((1, 10, 5))}
    meta = {"n_chains": 1, "n_saved": 10, "n": 3, "p": 2, "seed": 0, "warnings": []}
    write_archive(tmp_path / "a.mvmrf", PosteriorArchive(groups, meta))
    assert main(["summarize", "--config", str(cfg_path), "--archive", str(tmp_path / "a.mvmrf"),
                 "--out", str(tmp_path / "o")]) == 3


def test_summarize_defaults_to_configured_output(tmp_path):
    cfg_path = write_config(tmp_path, dict(CONFIG, output="run"))
    assert main(["simulate", "--config", str(cfg_path)]) == 0
    assert main(["sample", "--config", str(cfg_path)]) in (0, 4)
    assert main(["summarize", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "run" / "summary.json").exists()
