"""Command-line driver: subcommands and exit-code contract."""

import json
import os

import numpy as np
import pytest

from koopcast.cli import main


def _toy_train_args(tmp_path, extra=()):
    return [
        "train",
        "--system", "van_der_pol",
        "--t-end", "2.0",
        "--context-len", "16",
        "--patch-len", "4",
        "--d-model", "4",
        "--n-layers", "1",
        "--n-heads", "2",
        "--ffn-width", "8",
        "--horizon", "2",
        "--epochs", "2",
        "--seed", "0",
        "--out-dir", str(tmp_path / "out"),
        *extra,
    ]


def test_simulate_writes_csv(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    code = main([
        "simulate", "--system", "van_der_pol", "--t-end", "1.0", "--out", str(out)
    ])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "x1,x2"
    assert len(lines) == 102  # header + 101 steps


def test_train_emits_records_and_artifacts(tmp_path, capsys):
    code = main(_toy_train_args(tmp_path))
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    records = [json.loads(line) for line in lines]
    assert {r["split"] for r in records} == {"train", "test"}
    assert all(r["final_spectral_radius"] <= 0.99 for r in records)
    assert (tmp_path / "out" / "records.jsonl").exists()


def test_evaluate_matches_training_metrics(tmp_path, capsys):
    assert main(_toy_train_args(tmp_path)) == 0
    train_records = [
        json.loads(line) for line in capsys.readouterr().out.strip().splitlines()
    ]
    ckpt = next(
        str(tmp_path / "out" / f)
        for f in os.listdir(tmp_path / "out")
        if f.startswith("model_")
    )
    code = main([
        "evaluate",
        "--system", "van_der_pol",
        "--t-end", "2.0",
        "--context-len", "16",
        "--patch-len", "4",
        "--d-model", "4",
        "--n-layers", "1",
        "--n-heads", "2",
        "--ffn-width", "8",
        "--horizon", "2",
        "--checkpoint", ckpt,
    ])
    assert code == 0
    eval_records = [
        json.loads(line) for line in capsys.readouterr().out.strip().splitlines()
    ]
    by_split = {r["split"]: r for r in eval_records}
    for rec in train_records:
        assert by_split[rec["split"]]["mse"] == pytest.approx(rec["mse"], rel=1e-12)


def test_grid_runs_and_resumes(tmp_path, capsys):
    results = tmp_path / "records.jsonl"
    args = [
        "grid",
        "--system", "van_der_pol",
        "--t-end", "2.0",
        "--context-len", "16",
        "--d-model", "4",
        "--n-layers", "1",
        "--n-heads", "2",
        "--ffn-width", "8",
        "--epochs", "1",
        "--seed", "0",
        "--patch-lens", "2,4",
        "--horizons", "1,2",
        "--d-models", "4",
        "--results", str(results),
    ]
    assert main(args) == 0
    n_lines = len(results.read_text().strip().splitlines())
    assert n_lines == 8
    # second invocation resumes: no new lines appended
    assert main(args) == 0
    assert len(results.read_text().strip().splitlines()) == 8


def test_export_plots(tmp_path, capsys):
    results_dir = tmp_path / "out"
    assert main(_toy_train_args(tmp_path)) == 0
    capsys.readouterr()
    out = tmp_path / "heatmap.csv"
    code = main([
        "export-plots", "--results-dir", str(results_dir), "--out", str(out)
    ])
    assert code == 0
    assert out.exists()


def test_audit_passes(capsys):
    assert main(["audit", "--seed", "0", "--samples", "5"]) == 0
    out = capsys.readouterr().out
    assert "all audits passed" in out


def test_exit_code_config_error(tmp_path, capsys):
    # both data sources -> config error
    code = main(_toy_train_args(tmp_path, extra=["--data-csv", "x.csv"]))
    assert code == 1
    # patch length not dividing context -> config error
    code = main([
        "train", "--system", "van_der_pol", "--t-end", "2.0",
        "--context-len", "16", "--patch-len", "5", "--d-model", "4",
        "--n-layers", "1", "--n-heads", "2", "--ffn-width", "8",
        "--horizon", "2", "--epochs", "1", "--seed", "0",
    ])
    assert code == 1


def test_exit_code_io_error(tmp_path, capsys):
    code = main([
        "train", "--data-csv", str(tmp_path / "missing.csv"),
        "--context-len", "16", "--patch-len", "4", "--d-model", "4",
        "--n-layers", "1", "--n-heads", "2", "--ffn-width", "8",
        "--horizon", "2", "--epochs", "1", "--seed", "0",
    ])
    assert code == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("a\n1\nxyz\n")
    code = main([
        "train", "--data-csv", str(bad),
        "--context-len", "16", "--patch-len", "4", "--d-model", "4",
        "--n-layers", "1", "--n-heads", "2", "--ffn-width", "8",
        "--horizon", "2", "--epochs", "1", "--seed", "0",
    ])
    assert code == 3


def test_train_on_csv_data(tmp_path, capsys):
    csv_path = tmp_path / "series.csv"
    rng = np.random.default_rng(0)
    lines = ["a,b"] + [f"{v[0]},{v[1]}" for v in rng.standard_normal((120, 2))]
    csv_path.write_text("\n".join(lines) + "\n")
    code = main([
        "train", "--data-csv", str(csv_path),
        "--context-len", "16", "--patch-len", "4", "--d-model", "4",
        "--n-layers", "1", "--n-heads", "2", "--ffn-width", "8",
        "--horizon", "2", "--epochs", "1", "--seed", "0",
    ])
    assert code == 0
