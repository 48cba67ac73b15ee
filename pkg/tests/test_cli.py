import filecmp
import json
import math
from pathlib import Path

import numpy as np
import pytest

from tgen.checkpoints import load_trajectory
from tgen.cli import main, parse_manifest, read_csv, ManifestError
from tgen.synthetic import SyntheticTask, evaluate_forecast, generate, run_continual, true_params


def write_manifest(tmp_path, **over):
    m = {
        "task": {"kind": "synthetic", "dim": 2, "t_count": 8, "n_train": 50, "n_val": 50, "n_test": 100},
        "methods": [{"kind": "recent"}],
        "delta": 1,
        "seeds": [0],
        "output_dir": "out",
    }
    m.update(over)
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(m, indent=2))
    return p


def rows_of(path):
    return read_csv(path)


def tree_bytes(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_minimal_manifest_row_count(tmp_path):
    assert main(["run", str(write_manifest(tmp_path))]) == 0
    header, rows = rows_of(tmp_path / "out" / "results.csv")
    assert header == ["method", "seed", "t", "j", "value"]
    assert len(rows) == 8 - 1
    for name in ("summary.csv", "alphas.csv", "norms.csv", "pca.csv"):
        assert (tmp_path / "out" / name).exists()
    assert not (tmp_path / "out" / "FAILED").exists()


def test_missing_delta_names_field(tmp_path, capsys):
    p = write_manifest(tmp_path)
    m = json.loads(p.read_text())
    del m["delta"]
    p.write_text(json.dumps(m))
    assert main(["run", str(p)]) == 2
    assert "delta" in capsys.readouterr().err


def test_unknown_field_and_bad_json(tmp_path, capsys):
    assert main(["run", str(write_manifest(tmp_path, colour="red"))]) == 2
    assert "colour" in capsys.readouterr().err
    p = tmp_path / "broken.json"
    p.write_text('{\n  "delta": 1,\n  oops\n}')
    assert main(["run", str(p)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_parse_manifest_rejects_zero_delta():
    text = json.dumps({"task": {"kind": "synthetic"}, "methods": [{"kind": "recent"}], "delta": 0,
                       "seeds": [0], "output_dir": "o"})
    with pytest.raises(ManifestError, match="delta"):
        parse_manifest(text)


def test_recent_vs_downscale_on_stationary_task(tmp_path):
    p = write_manifest(
        tmp_path,
        task={"kind": "synthetic", "dim": 2, "t_count": 6, "drift": "stationary", "noise_sigma": 0.05,
              "n_train": 2000, "n_val": 20000, "n_test": 500},
        methods=[{"kind": "recent"},
                 {"kind": "downscale", "tuning": {"kind": "grid", "lo": 0.9, "hi": 1.0, "count": 51}}],
        delta=2,
        seeds=[0, 1],
    )
    assert main(["run", str(p)]) == 0
    _, alphas = rows_of(tmp_path / "out" / "alphas.csv")
    assert alphas
    assert all(abs(float(r[3]) - 1.0) <= 0.002 + 1e-12 for r in alphas)
    _, summary = rows_of(tmp_path / "out" / "summary.csv")
    by = {(r[0], r[1]): float(r[2]) for r in summary}
    # the shared start index puts both methods on identical (t, j) cells
    for seed in ("0", "1"):
        assert abs(by[("recent", seed)] - by[("downscale", seed)]) <= 1e-6


def test_alphas_are_members_of_space(tmp_path):
    space = {"kind": "random", "lo": -1, "hi": 1, "count": 7, "seed": 3}
    p = write_manifest(tmp_path, methods=[{"kind": "taylor", "tuning": space}], delta=2)
    assert main(["run", str(p)]) == 0
    from tgen.tuning import SearchSpace
    cands = SearchSpace("random", -1, 1, 7, 3).candidates().tolist()
    _, alphas = rows_of(tmp_path / "out" / "alphas.csv")
    assert alphas and all(float(r[3]) in cands for r in alphas)


def test_repeat_runs_are_byte_identical(tmp_path, monkeypatch):
    methods = [{"kind": "recent"}, {"kind": "taylor", "alpha": 1.0},
               {"kind": "downscale", "tuning": {"kind": "grid", "lo": 0.9, "hi": 1.0, "count": 5}}]
    p = write_manifest(tmp_path, methods=methods, delta=3, seeds=[0, 1])
    assert main(["run", str(p)]) == 0
    first = tree_bytes(tmp_path / "out")
    monkeypatch.setenv("TG_THREADS", "2")
    assert main(["run", str(p)]) == 0
    assert tree_bytes(tmp_path / "out") == first


def test_recent_rows_equal_direct_evaluation(tmp_path):
    p = write_manifest(tmp_path, delta=3, seeds=[4])
    assert main(["run", str(p)]) == 0
    _, rows = rows_of(tmp_path / "out" / "results.csv")
    task = SyntheticTask.cubic(dim=2, seed=4, n_train=50, n_val=50, n_test=100, t_count=8)
    traj = run_continual(task, "ols")
    assert len(rows) == 5 * 3 + 2 + 1
    for method, seed, t, j, value in rows:
        t, j = int(t), int(j)
        direct = evaluate_forecast(traj[t - 1], generate(task, j, "test"))
        assert float(value) == direct


def test_runtime_failure_exit_3(tmp_path, capsys):
    # a taylor step with lookback larger than the trajectory cannot produce any row
    p = write_manifest(tmp_path, methods=[{"kind": "taylor", "alpha": 1.0, "lookback": 30}])
    assert main(["run", str(p)]) == 3
    assert (tmp_path / "out" / "FAILED").exists()


def test_partial_outputs_kept_on_failure(tmp_path, monkeypatch):
    import tgen.cli as cli

    real = cli.run_seed

    def flaky(manifest, seed, oracle=False):
        if seed == 1:
            raise RuntimeError("boom")
        return real(manifest, seed, oracle)

    monkeypatch.setattr(cli, "run_seed", flaky)
    p = write_manifest(tmp_path, seeds=[0, 1])
    assert main(["run", str(p)]) == 3
    out = tmp_path / "out"
    assert "boom" in (out / "FAILED").read_text()
    _, rows = rows_of(out / "results.csv")
    assert {r[1] for r in rows} == {"0"}


def test_oracle_flag_marks_outputs(tmp_path, capsys):
    p = write_manifest(tmp_path, methods=[{"kind": "taylor", "tuning": {"kind": "grid", "lo": -1, "hi": 1, "count": 5}}])
    assert main(["run", str(p), "--oracle-future"]) == 0
    header, rows = rows_of(tmp_path / "out" / "results.csv")
    assert header[-1] == "oracle" and all(r[-1] == "true" for r in rows)
    assert "not a valid evaluation" in capsys.readouterr().err


# --- synth -----------------------------------------------------------------------

def test_synth_defaults(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out)]) == 0
    traj = load_trajectory(out / "trajectory.json")
    assert len(traj) == 20
    assert len(list((out / "data").glob("*.csv"))) == 60
    from tgen.checkpoints import load
    for entry in json.loads((out / "trajectory.json").read_text())["checkpoints"]:
        c = load(out / entry["path"], timestamp=entry["t"])
        assert c == traj[entry["t"] - 1]


def test_synth_noiseless_ols_matches_truth(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out), "--sigma", "0", "--learner", "ols", "--seed", "2"]) == 0
    traj = load_trajectory(out / "trajectory.json")
    task = SyntheticTask.cubic(dim=2, seed=2, noise_sigma=0.0)
    for c in traj:
        np.testing.assert_allclose(c["theta"], true_params(task, c.timestamp), rtol=0, atol=1e-8)


def test_synth_repeat_identical_tree(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--out", str(a), "--seed", "5", "--t-count", "6"]) == 0
    assert main(["synth", "--out", str(b), "--seed", "5", "--t-count", "6"]) == 0
    cmp = filecmp.dircmp(a, b)
    assert tree_bytes(a) == tree_bytes(b)
    assert not cmp.diff_files


def test_synth_bad_flags(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "x"), "--t-count", "1"]) == 2
    assert main(["synth", "--out", str(tmp_path / "x"), "--drift", "rotating", "--dim", "3"]) == 2
    with pytest.raises(SystemExit):
        main(["synth", "--learner", "svm"])


def test_run_on_synthesized_trajectory(tmp_path):
    s = tmp_path / "s"
    assert main(["synth", "--out", str(s), "--t-count", "6", "--seed", "1"]) == 0
    p = write_manifest(tmp_path, task={"kind": "trajectory", "path": "s/trajectory.json"}, delta=2)
    assert main(["run", str(p)]) == 0
    _, rows = rows_of(tmp_path / "out" / "results.csv")
    task = SyntheticTask.cubic(dim=2, seed=1, t_count=6)
    traj = run_continual(task, "ols")
    for _, _, t, j, value in rows:
        # CSV data round-trips losslessly, so the value matches in-memory evaluation
        direct = evaluate_forecast(traj[int(t) - 1], generate(task, int(j), "test"))
        assert float(value) == pytest.approx(direct, rel=1e-12)


def test_trajectory_missing_path_exit_2(tmp_path):
    p = write_manifest(tmp_path, task={"kind": "trajectory", "path": "nope/trajectory.json"})
    assert main(["run", str(p)]) == 2


# --- figures ---------------------------------------------------------------------

def test_figures_counts_and_log(tmp_path):
    p = write_manifest(
        tmp_path,
        task={"kind": "synthetic", "dim": 2, "t_count": 16, "n_train": 50, "n_val": 50, "n_test": 100},
        methods=[{"kind": "recent"}, {"kind": "taylor", "alpha": 1.0}],
        delta=12,
        seeds=[0, 1, 2],
    )
    assert main(["run", str(p)]) == 0
    out = tmp_path / "out"
    assert main(["figures", str(out)]) == 0
    header, rows = rows_of(out / "fig_fwt_vs_delta.csv")
    assert header == ["method", "k", "mean", "std", "n_seeds"]
    assert len(rows) == 2 * 12
    assert all(r[4] == "3" for r in rows)

    _, mse = rows_of(out / "fig_mse_log.csv")
    for r in mse:
        assert abs(float(r[5]) - math.log10(float(r[4]))) <= 1e-12

    _, norms = rows_of(out / "norms.csv")
    _, fig_norms = rows_of(out / "fig_norms.csv")
    assert norms == fig_norms
    assert (out / "fig_pca.csv").exists()


def test_figures_aggregate_matches_manual(tmp_path):
    p = write_manifest(tmp_path, delta=2, seeds=[0, 1])
    assert main(["run", str(p)]) == 0
    out = tmp_path / "out"
    assert main(["figures", str(out)]) == 0
    _, res = rows_of(out / "results.csv")
    per_seed = {}
    for m, s, t, j, v in res:
        per_seed.setdefault((int(j) - int(t), s), []).append(float(v))
    _, fig = rows_of(out / "fig_fwt_vs_delta.csv")
    for m, k, mean, std, n in fig:
        means = [np.mean(per_seed[(int(k), s)]) for s in ("0", "1")]
        assert float(mean) == pytest.approx(np.mean(means), rel=1e-12)
        assert float(std) == pytest.approx(np.std(means, ddof=1), rel=1e-12)


def test_figures_missing_input(tmp_path):
    assert main(["figures", str(tmp_path)]) == 2
