"""Experiment harness: single runs, grid searches, metrics, plot data.

Results are persisted as JSON-lines (one record per line, append-only)
so interrupted grids resume by fingerprint; plot emissions are plain CSV
(prediction-vs-truth, eigenvalue trace, heatmap matrices) with no
rendering.
"""

from __future__ import annotations

import dataclasses
import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data import (
    MinMaxScaler,
    SimulatorConfig,
    TimeSeries,
    WindowBatch,
    load_csv,
    make_windows,
    simulate,
    train_test_split,
)
from .encoder import EncoderConfig
from .forecaster import (
    ForecastModel,
    ModelConfig,
    forward,
    init_model,
    save_checkpoint,
)
from .koopman import StableKoopmanOperator, spectral_trace_entry
from .training import TrainingConfig, TrainingTrace, train


@dataclass(frozen=True)
class ExperimentConfig:
    # data source: exactly one of simulator / csv_path
    simulator: SimulatorConfig | None = None
    csv_path: str | None = None
    csv_columns: tuple[str, ...] | None = None
    csv_split_channels: int = 1
    # model
    variant: str = "patch"
    context_len: int = 32
    horizon: int = 5
    patch_len: int = 16
    d_model: int = 16
    n_layers: int = 2
    n_heads: int = 2
    ffn_width: int = 64
    pe_kind: str = "sinusoidal"
    ma_kernel: int = 25
    probsparse_factor: float = 1.0
    rho_max: float = 0.99
    tie_factors: bool = False
    # training
    lam: float = 0.1
    epochs: int = 1000
    learning_rate: float = 1e-3
    batch_size: int | None = None
    seed: int = 0
    # protocol
    split_fraction: float = 0.8
    scale: bool = True
    report_unscaled: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if (self.simulator is None) == (self.csv_path is None):
            raise ValueError("configure exactly one of simulator or csv_path")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.simulator is not None:
            d["simulator"] = dataclasses.asdict(self.simulator)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if d.get("simulator") is not None:
            sim = dict(d["simulator"])
            if sim.get("initial_state") is not None:
                sim["initial_state"] = tuple(sim["initial_state"])
            d["simulator"] = SimulatorConfig(**sim)
        if d.get("csv_columns") is not None:
            d["csv_columns"] = tuple(d["csv_columns"])
        return cls(**d)

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")  # artifact location does not identify the experiment
        blob = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            variant=self.variant,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            ffn_width=self.ffn_width,
            patch_len=self.patch_len,
            pe_kind=self.pe_kind,
            ma_kernel=self.ma_kernel,
            probsparse_factor=self.probsparse_factor,
        )

    def model_config(self, n_channels: int) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder_config(),
            context_len=self.context_len,
            horizon=self.horizon,
            n_channels=n_channels,
            rho_max=self.rho_max,
            tie_factors=self.tie_factors,
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            lam=self.lam,
            batch_size=self.batch_size,
            seed=self.seed,
        )


@dataclass(frozen=True)
class MetricsRecord:
    fingerprint: str
    split: str  # "train" | "test"
    mse: float
    mae: float
    wall_seconds: float
    final_spectral_radius: float
    variant: str = ""
    patch_len: int = 0
    horizon: int = 0
    d_model: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunResult:
    config: ExperimentConfig
    train_record: MetricsRecord
    test_record: MetricsRecord
    trace: TrainingTrace
    model: ForecastModel
    predictions: dict[str, tuple[np.ndarray, np.ndarray]]  # split -> (y_hat, y)


def compute_metrics(y_hat, y) -> tuple[float, float]:
    """Entry-wise mean squared / absolute error."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    err = y_hat - y
    return float(np.mean(err**2)), float(np.mean(np.abs(err)))


def load_series(cfg: ExperimentConfig) -> TimeSeries:
    if cfg.simulator is not None:
        return simulate(cfg.simulator)
    columns = list(cfg.csv_columns) if cfg.csv_columns is not None else None
    return load_csv(cfg.csv_path, columns, split_channels=cfg.csv_split_channels)


def _predict(model: ForecastModel, batch: WindowBatch, chunk: int = 512) -> np.ndarray:
    outs = []
    for i in range(0, len(batch), chunk):
        outs.append(forward(model, batch.x[i : i + chunk]).y_hat)
    return np.concatenate(outs, axis=0)


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Deterministic pipeline: load -> scale -> window -> split -> train
    -> evaluate both splits -> persist."""
    fingerprint = cfg.fingerprint()
    series = load_series(cfg)
    train_series, test_series = train_test_split(series, cfg.split_fraction)

    scaler = MinMaxScaler().fit(train_series.values)
    if cfg.scale:
        train_values = scaler.transform(train_series.values)
        test_values = scaler.transform(test_series.values)
    else:
        train_values = train_series.values
        test_values = test_series.values

    train_windows = make_windows(train_values, cfg.context_len, cfg.horizon)
    test_windows = make_windows(test_values, cfg.context_len, cfg.horizon)

    model = init_model(cfg.model_config(series.n_channels), seed=cfg.seed)
    start = time.perf_counter()
    model, trace = train(model, train_windows.x, train_windows.y, cfg.training_config())
    wall = time.perf_counter() - start

    op = StableKoopmanOperator(
        model.params["koop.u_raw"],
        model.params["koop.v_raw"],
        model.params["koop.sigma_raw"],
        cfg.rho_max,
        cfg.tie_factors,
    )
    radius = spectral_trace_entry(op)

    records = {}
    predictions = {}
    for split, windows in (("train", train_windows), ("test", test_windows)):
        y_hat = _predict(model, windows)
        y_true = windows.y
        if cfg.report_unscaled and cfg.scale:
            y_hat = scaler.inverse_transform(y_hat)
            y_true = scaler.inverse_transform(y_true)
        mse, mae = compute_metrics(y_hat, y_true)
        records[split] = MetricsRecord(
            fingerprint=fingerprint,
            split=split,
            mse=mse,
            mae=mae,
            wall_seconds=wall,
            final_spectral_radius=radius,
            variant=cfg.variant,
            patch_len=cfg.patch_len,
            horizon=cfg.horizon,
            d_model=cfg.d_model,
        )
        predictions[split] = (y_hat, y_true)

    result = RunResult(
        config=cfg,
        train_record=records["train"],
        test_record=records["test"],
        trace=trace,
        model=model,
        predictions=predictions,
    )
    if cfg.output_dir:
        persist_run(result, cfg.output_dir)
    return result


def persist_run(result: RunResult, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    fp = result.train_record.fingerprint
    append_records(
        os.path.join(out_dir, "records.jsonl"),
        [result.train_record, result.test_record],
    )
    result.trace.to_csv(os.path.join(out_dir, f"trace_{fp}.csv"))
    save_checkpoint(result.model, os.path.join(out_dir, f"model_{fp}.npz"))
    emit_plot_data(result, out_dir)


def append_records(path, records) -> None:
    with open(path, "a") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    if not os.path.exists(path):
        return []
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def cell_seed(base_seed: int, patch_len: int, horizon: int, d_model: int) -> int:
    """Stable per-cell seed so grid cells are independent yet reproducible."""
    blob = f"{base_seed}:{patch_len}:{horizon}:{d_model}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")


def grid_search(
    base_cfg: ExperimentConfig,
    p_values,
    h_values,
    d_model_values,
    results_path=None,
) -> list[MetricsRecord]:
    """Cartesian sweep over (patch length, horizon, width).

    Each cell is an independent seeded run.  Completed cells found in the
    results file are skipped, so interrupted grids resume; cell failures
    are recorded and the grid continues.
    """
    if not (p_values and h_values and d_model_values):
        raise ValueError("grid value lists must be nonempty")
    if results_path is None and base_cfg.output_dir:
        results_path = os.path.join(base_cfg.output_dir, "records.jsonl")

    prior = {}
    if results_path:
        for rec in read_records(results_path):
            if "error" not in rec:
                prior.setdefault(rec["fingerprint"], []).append(rec)

    records = []
    for p in p_values:
        for h in h_values:
            for dm in d_model_values:
                cfg = dataclasses.replace(
                    base_cfg,
                    patch_len=p,
                    horizon=h,
                    d_model=dm,
                    seed=cell_seed(base_cfg.seed, p, h, dm),
                    output_dir=None,
                )
                fp = cfg.fingerprint()
                if fp in prior:
                    records.extend(MetricsRecord(**rec) for rec in prior[fp])
                    continue
                try:
                    result = run_experiment(cfg)
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    if results_path:
                        with open(results_path, "a") as fh:
                            fh.write(
                                json.dumps({"fingerprint": fp, "error": str(exc)})
                                + "\n"
                            )
                    continue
                cell_records = [result.train_record, result.test_record]
                if results_path:
                    append_records(results_path, cell_records)
                records.extend(cell_records)
    return records


# -- plot-data emission -------------------------------------------------------


def emit_prediction_csv(path, y_hat: np.ndarray, y: np.ndarray, channel: int) -> None:
    """Flattened (window, step) rows of truth vs prediction for one channel."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "step", "truth", "prediction"])
        for w in range(y.shape[0]):
            for s in range(y.shape[1]):
                writer.writerow(
                    [w, s, repr(float(y[w, s, channel])), repr(float(y_hat[w, s, channel]))]
                )


def emit_eigenvalue_csv(path, trace: TrainingTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "spectral_radius"])
        for i, r in enumerate(trace.spectral_radius, start=1):
            writer.writerow([i, repr(float(r))])


def emit_heatmap_csv(
    path, records, col_key: str = "patch_len", value: str = "mse", split: str = "test"
) -> None:
    """Matrix of metric values: rows = horizon, cols = patch_len or d_model."""
    recs = [r for r in _as_dicts(records) if r["split"] == split]
    h_values = sorted({r["horizon"] for r in recs})
    c_values = sorted({r[col_key] for r in recs})
    lookup = {(r["horizon"], r[col_key]): r[value] for r in recs}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon"] + [str(c) for c in c_values])
        for h in h_values:
            writer.writerow(
                [h] + [repr(float(lookup.get((h, c), float("nan")))) for c in c_values]
            )


def _as_dicts(records):
    return [r.to_dict() if isinstance(r, MetricsRecord) else r for r in records]


def emit_plot_data(result: RunResult, out_dir) -> None:
    """Per-channel prediction CSVs plus the eigenvalue trace."""
    os.makedirs(out_dir, exist_ok=True)
    fp = result.train_record.fingerprint
    y_hat, y = result.predictions["test"]
    for ch in range(y.shape[2]):
        emit_prediction_csv(
            os.path.join(out_dir, f"pred_{fp}_ch{ch}.csv"), y_hat, y, ch
        )
    emit_eigenvalue_csv(os.path.join(out_dir, f"eigs_{fp}.csv"), result.trace)
