"""Command-line driver.

Subcommands: simulate, train, evaluate, grid, audit, export-plots.
Exit codes: 0 success, 1 config error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .autodiff import NonFiniteGradientError
from .data import CsvFormatError, SimulatorConfig, simulate
from .experiment import (
    ExperimentConfig,
    emit_heatmap_csv,
    grid_search,
    load_series,
    read_records,
    run_experiment,
)
from .forecaster import CheckpointError, load_checkpoint
from .linalg import PowerIterationError


def _add_data_args(parser):
    parser.add_argument("--data-csv", help="CSV file (header row, one row per step)")
    parser.add_argument("--columns", help="comma-separated channel columns")
    parser.add_argument(
        "--split-channels",
        type=int,
        default=1,
        help="split one column into n equal-length parallel channels",
    )
    parser.add_argument(
        "--system", choices=["van_der_pol", "lorenz"], help="synthetic system"
    )
    parser.add_argument("--mu", type=float, default=1.0)
    parser.add_argument("--sigma", type=float, default=10.0)
    parser.add_argument("--rho", type=float, default=28.0)
    parser.add_argument("--beta", type=float, default=8.0 / 3.0)
    parser.add_argument("--dt", type=float, default=0.01)
    parser.add_argument("--t-end", type=float, default=20.0)
    parser.add_argument("--noise-std", type=float, default=0.02)
    parser.add_argument("--sim-seed", type=int, default=0)


def _add_model_args(parser):
    parser.add_argument(
        "--variant", choices=["patch", "probsparse", "decomp"], default="patch"
    )
    parser.add_argument("--context-len", type=int, default=32)
    parser.add_argument("--horizon", type=int, default=5)
    parser.add_argument("--patch-len", type=int, default=16)
    parser.add_argument("--d-model", type=int, default=16)
    parser.add_argument("--n-layers", type=int, default=2)
    parser.add_argument("--n-heads", type=int, default=2)
    parser.add_argument("--ffn-width", type=int, default=64)
    parser.add_argument("--pe-kind", choices=["sinusoidal", "learnable"], default="sinusoidal")
    parser.add_argument("--ma-kernel", type=int, default=25)
    parser.add_argument("--probsparse-factor", type=float, default=1.0)
    parser.add_argument("--rho-max", type=float, default=0.99)
    parser.add_argument("--tie-factors", action="store_true")
    parser.add_argument("--lambda", dest="lam", type=float, default=0.1)
    parser.add_argument("--epochs", type=int, default=1000)
    parser.add_argument("--learning-rate", type=float, default=None,
                        help="default: 1e-3 for simulators, 3e-4 for CSV data")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--split-fraction", type=float, default=0.8)
    parser.add_argument("--no-scale", action="store_true")
    parser.add_argument("--report-unscaled", action="store_true")
    parser.add_argument("--out-dir", default=None)


def _simulator_config(args) -> SimulatorConfig:
    return SimulatorConfig(
        system=args.system,
        mu=args.mu,
        sigma=args.sigma,
        rho=args.rho,
        beta=args.beta,
        dt=args.dt,
        t_end=args.t_end,
        noise_std=args.noise_std,
        seed=args.sim_seed,
    )


def _experiment_config(args) -> ExperimentConfig:
    if (args.data_csv is None) == (args.system is None):
        raise ValueError("provide exactly one of --data-csv or --system")
    lr = args.learning_rate
    if lr is None:
        lr = 1e-3 if args.system is not None else 3e-4
    return ExperimentConfig(
        simulator=_simulator_config(args) if args.system else None,
        csv_path=args.data_csv,
        csv_columns=tuple(args.columns.split(",")) if args.columns else None,
        csv_split_channels=args.split_channels,
        variant=args.variant,
        context_len=args.context_len,
        horizon=args.horizon,
        patch_len=args.patch_len,
        d_model=args.d_model,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        ffn_width=args.ffn_width,
        pe_kind=args.pe_kind,
        ma_kernel=args.ma_kernel,
        probsparse_factor=args.probsparse_factor,
        rho_max=args.rho_max,
        tie_factors=args.tie_factors,
        lam=args.lam,
        epochs=args.epochs,
        learning_rate=lr,
        batch_size=args.batch_size,
        seed=args.seed,
        split_fraction=args.split_fraction,
        scale=not args.no_scale,
        report_unscaled=args.report_unscaled,
        output_dir=args.out_dir,
    )


def _cmd_simulate(args) -> int:
    cfg = _simulator_config(args)
    series = simulate(cfg)
    series.to_csv(args.out)
    print(f"wrote {series.n_steps} steps x {series.n_channels} channels to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg)
    for record in (result.train_record, result.test_record):
        print(json.dumps(record.to_dict(), sort_keys=True))
    return 0


def _cmd_evaluate(args) -> int:
    from .data import MinMaxScaler, make_windows, train_test_split
    from .experiment import MetricsRecord, _predict, compute_metrics
    from .koopman import StableKoopmanOperator, spectral_trace_entry

    model = load_checkpoint(args.checkpoint)
    cfg = _experiment_config(args)
    series = load_series(cfg)
    train_series, test_series = train_test_split(series, cfg.split_fraction)
    scaler = MinMaxScaler().fit(train_series.values)
    for split, part in (("train", train_series), ("test", test_series)):
        values = scaler.transform(part.values) if cfg.scale else part.values
        windows = make_windows(values, model.cfg.context_len, model.cfg.horizon)
        mse, mae = compute_metrics(_predict(model, windows), windows.y)
        op = StableKoopmanOperator(
            model.params["koop.u_raw"],
            model.params["koop.v_raw"],
            model.params["koop.sigma_raw"],
            model.cfg.rho_max,
            model.cfg.tie_factors,
        )
        record = MetricsRecord(
            fingerprint=cfg.fingerprint(),
            split=split,
            mse=mse,
            mae=mae,
            wall_seconds=0.0,
            final_spectral_radius=spectral_trace_entry(op),
            variant=model.cfg.encoder.variant,
            patch_len=model.cfg.encoder.patch_len,
            horizon=model.cfg.horizon,
            d_model=model.cfg.encoder.d_model,
        )
        print(json.dumps(record.to_dict(), sort_keys=True))
    return 0


def _cmd_grid(args) -> int:
    cfg = _experiment_config(args)
    records = grid_search(
        cfg,
        [int(v) for v in args.patch_lens.split(",")],
        [int(v) for v in args.horizons.split(",")],
        [int(v) for v in args.d_models.split(",")],
        results_path=args.results,
    )
    print(f"{len(records)} records")
    return 0


def _cmd_audit(args) -> int:
    from .forecaster import ModelConfig, init_model
    from .encoder import EncoderConfig
    from .koopman import StableKoopmanOperator, materialize, rollout
    from .linalg import spectral_norm
    from .training import finite_difference_check, sigma_gradient_bound_audit

    rng = np.random.default_rng(args.seed)
    failures = 0

    for i in range(args.samples):
        dim = int(rng.integers(2, 17))
        op = StableKoopmanOperator.random(dim, seed=int(rng.integers(1 << 31)))
        k, _ = materialize(op)
        if spectral_norm(k) > op.rho_max + 1e-8:
            failures += 1
    print(f"spectral cap: {'ok' if failures == 0 else f'{failures} violations'}")

    op = StableKoopmanOperator.random(8, seed=args.seed)
    z0 = rng.standard_normal(8)
    envelope_ok = all(
        np.linalg.norm(z) <= op.rho_max ** (j + 1) * np.linalg.norm(z0) * (1 + 1e-8)
        for j, z in enumerate(rollout(op, z0, 100))
    )
    print(f"geometric decay: {'ok' if envelope_ok else 'violated'}")
    failures += 0 if envelope_ok else 1

    cfg = ModelConfig(
        encoder=EncoderConfig(
            variant="patch", d_model=4, n_layers=1, n_heads=2, ffn_width=8, patch_len=4
        ),
        context_len=8,
        horizon=2,
        n_channels=2,
    )
    model = init_model(cfg, seed=args.seed)
    x = rng.standard_normal((1, 8, 2))
    y = rng.standard_normal((1, 2, 2))
    err = finite_difference_check(model, x, y)
    print(f"gradient check: max relative error {err:.3e}")
    if err > 1e-4:
        failures += 1

    measured, bound = sigma_gradient_bound_audit(model, x)
    print(f"sigma gradient: measured {measured:.3e} <= bound {bound:.3e}")
    if measured > bound:
        failures += 1

    if failures:
        raise NonFiniteGradientError(f"{failures} audit failure(s)")
    print("all audits passed")
    return 0


def _cmd_export_plots(args) -> int:
    records = read_records(os.path.join(args.results_dir, "records.jsonl"))
    if not records:
        raise OSError(f"no records found in {args.results_dir}")
    emit_heatmap_csv(
        args.out, records, col_key=args.col_key, value=args.value, split=args.split
    )
    print(f"wrote heatmap to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopcast",
        description="Stable Koopman-operator forecasting with transformer encoders",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic series as CSV")
    _add_data_args(p_sim)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_train = sub.add_parser("train", help="single training run")
    _add_data_args(p_train)
    _add_model_args(p_train)
    p_train.add_argument("--seed", type=int, required=True)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="checkpoint + data -> metrics")
    _add_data_args(p_eval)
    _add_model_args(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_grid = sub.add_parser("grid", help="grid sweep over (p, H, d_model)")
    _add_data_args(p_grid)
    _add_model_args(p_grid)
    p_grid.add_argument("--seed", type=int, required=True)
    p_grid.add_argument("--patch-lens", required=True, help="comma list")
    p_grid.add_argument("--horizons", required=True, help="comma list")
    p_grid.add_argument("--d-models", required=True, help="comma list")
    p_grid.add_argument("--results", default=None, help="JSONL results path")
    p_grid.set_defaults(func=_cmd_grid)

    p_audit = sub.add_parser("audit", help="run invariant and bound audits")
    p_audit.add_argument("--seed", type=int, default=0)
    p_audit.add_argument("--samples", type=int, default=50)
    p_audit.set_defaults(func=_cmd_audit)

    p_plots = sub.add_parser("export-plots", help="emit heatmap CSV from results")
    p_plots.add_argument("--results-dir", required=True)
    p_plots.add_argument("--out", required=True)
    p_plots.add_argument("--col-key", choices=["patch_len", "d_model"], default="patch_len")
    p_plots.add_argument("--value", choices=["mse", "mae"], default="mse")
    p_plots.add_argument("--split", choices=["train", "test"], default="test")
    p_plots.set_defaults(func=_cmd_export_plots)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (NonFiniteGradientError, PowerIterationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, CsvFormatError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
