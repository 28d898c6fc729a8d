"""Synthetic dynamical systems, CSV ingestion, windowing, scaling, splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray  # (T, d)
    dt: float = 1.0
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f"series must be (T, d) with T >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("series values must be finite")
        object.__setattr__(self, "values", v)
        names = self.channel_names or tuple(f"ch{i}" for i in range(v.shape[1]))
        if len(names) != v.shape[1]:
            raise ValueError("channel_names length mismatch")
        object.__setattr__(self, "channel_names", tuple(names))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.channel_names)
            for row in self.values:
                writer.writerow([repr(float(x)) for x in row])


@dataclass
class WindowBatch:
    x: np.ndarray  # (B, P, d)
    y: np.ndarray  # (B, H, d)

    @property
    def context_len(self) -> int:
        return self.x.shape[1]

    @property
    def horizon(self) -> int:
        return self.y.shape[1]

    def __len__(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class SimulatorConfig:
    system: str = "van_der_pol"
    mu: float = 1.0
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.01
    t_end: float = 20.0
    noise_std: float = 0.02
    seed: int = 0
    initial_state: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def _euler(f, x0: np.ndarray, cfg: SimulatorConfig, names) -> TimeSeries:
    n_steps = int(round(cfg.t_end / cfg.dt))
    rng = np.random.default_rng(cfg.seed)
    out = np.empty((n_steps + 1, x0.shape[0]))
    out[0] = x0
    x = x0.astype(np.float64)
    for n in range(n_steps):
        x = x + cfg.dt * f(x)
        if cfg.noise_std > 0:
            x = x + rng.normal(0.0, cfg.noise_std, size=x.shape)
        out[n + 1] = x
    return TimeSeries(values=out, dt=cfg.dt, channel_names=names)


def simulate_van_der_pol(cfg: SimulatorConfig) -> TimeSeries:
    """Euler integration of the two-state relaxation oscillator, with
    per-step additive Gaussian process noise."""
    if cfg.system != "van_der_pol":
        raise ValueError(f"config is for system {cfg.system!r}")
    x0 = np.asarray(cfg.initial_state if cfg.initial_state is not None else (2.0, 0.0))
    mu = cfg.mu

    def f(x):
        return np.array([x[1], mu * (1.0 - x[0] ** 2) * x[1] - x[0]])

    return _euler(f, x0, cfg, ("x1", "x2"))


def simulate_lorenz(cfg: SimulatorConfig) -> TimeSeries:
    """Euler integration of the three-state chaotic flow, with per-step
    additive Gaussian process noise."""
    if cfg.system != "lorenz":
        raise ValueError(f"config is for system {cfg.system!r}")
    x0 = np.asarray(
        cfg.initial_state if cfg.initial_state is not None else (1.0, 1.0, 1.0)
    )
    s, r, b = cfg.sigma, cfg.rho, cfg.beta

    def f(x):
        return np.array(
            [
                s * (x[1] - x[0]),
                x[0] * (r - x[2]) - x[1],
                x[0] * x[1] - b * x[2],
            ]
        )

    return _euler(f, x0, cfg, ("x1", "x2", "x3"))


def simulate(cfg: SimulatorConfig) -> TimeSeries:
    if cfg.system == "van_der_pol":
        return simulate_van_der_pol(cfg)
    if cfg.system == "lorenz":
        return simulate_lorenz(cfg)
    raise ValueError(f"unknown system {cfg.system!r}")


def make_windows(series: TimeSeries | np.ndarray, context_len: int, horizon: int) -> WindowBatch:
    """Sliding context/target pairs; B = T - P - H + 1."""
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, float)
    t = values.shape[0]
    if t < context_len + horizon:
        raise ValueError(
            f"series of length {t} too short for context {context_len} + horizon {horizon}"
        )
    b = t - context_len - horizon + 1
    x = np.stack([values[i : i + context_len] for i in range(b)])
    y = np.stack([values[i + context_len : i + context_len + horizon] for i in range(b)])
    return WindowBatch(x=x, y=y)


def train_test_split(series: TimeSeries, fraction: float) -> tuple[TimeSeries, TimeSeries]:
    """Chronological split; no window ever crosses the boundary."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must lie strictly between 0 and 1")
    t = series.n_steps
    cut = int(round(t * fraction))
    if cut < 1 or cut >= t:
        raise ValueError("split produces an empty side")
    return (
        TimeSeries(series.values[:cut], series.dt, series.channel_names),
        TimeSeries(series.values[cut:], series.dt, series.channel_names),
    )


class MinMaxScaler:
    """Per-channel map of the fitted range onto [0, 1].

    Constant channels map to 0 so the transform stays linear-affine.
    """

    def __init__(self):
        self.min_ = None
        self.max_ = None

    def fit(self, values: np.ndarray) -> "MinMaxScaler":
        v = np.asarray(values, dtype=np.float64)
        self.min_ = v.min(axis=0)
        self.max_ = v.max(axis=0)
        return self

    def _check(self):
        if self.min_ is None:
            raise RuntimeError("scaler used before fit")

    def transform(self, values: np.ndarray) -> np.ndarray:
        self._check()
        span = self.max_ - self.min_
        safe = np.where(span == 0, 1.0, span)
        return (np.asarray(values, float) - self.min_) / safe

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        self._check()
        span = self.max_ - self.min_
        safe = np.where(span == 0, 1.0, span)
        return np.asarray(values, float) * safe + self.min_


class CsvFormatError(ValueError):
    """CSV input violates the expected layout (header + numeric rows)."""


def load_csv(
    path,
    selected_columns: list[str] | None = None,
    split_channels: int = 1,
) -> TimeSeries:
    """Read a UTF-8 CSV with a header row into a TimeSeries.

    `split_channels=n` cuts a single selected column into n equal-length
    segments stacked as parallel channels (truncating the remainder).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if selected_columns is None:
            selected_columns = header
        try:
            col_idx = [header.index(c) for c in selected_columns]
        except ValueError:
            missing = [c for c in selected_columns if c not in header]
            raise CsvFormatError(f"{path}: missing column(s) {missing}") from None
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: row {line_no} has {len(row)} cells, header has {len(header)}"
                )
            parsed = []
            for ci in col_idx:
                cell = row[ci].strip()
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"{path}: non-numeric cell {cell!r} at row {line_no}, "
                        f"column {header[ci]!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)

    if split_channels > 1:
        if values.shape[1] != 1:
            raise CsvFormatError("column splitting requires exactly one selected column")
        seg = values.shape[0] // split_channels
        if seg < 1:
            raise CsvFormatError("series too short to split")
        values = np.stack(
            [values[i * seg : (i + 1) * seg, 0] for i in range(split_channels)], axis=1
        )
        names = tuple(f"{selected_columns[0]}_{i}" for i in range(split_channels))
        return TimeSeries(values=values, channel_names=names)

    return TimeSeries(values=values, channel_names=tuple(selected_columns))
