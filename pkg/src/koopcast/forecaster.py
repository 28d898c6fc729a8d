"""End-to-end model: encode -> Koopman rollout -> per-step linear decode.

One forward implementation written in autodiff tensors serves both
inference (parameters wrapped as constants) and training (parameters
wrapped with requires_grad).  The decoder is a single linear map shared
across horizon steps; the decomp variant adds a per-step trend-head
contribution computed from the trend window.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor, concat
from .encoder import EncoderConfig, encode, init_encoder_params
from .koopman import materialize_t
from .linalg import spectral_norm

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt or inconsistent with its metadata."""


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    context_len: int = 32
    horizon: int = 5
    n_channels: int = 2
    rho_max: float = 0.99
    tie_factors: bool = False
    use_trend_head: bool | None = None  # None -> on for the decomp variant

    def __post_init__(self):
        if not (0.0 < self.rho_max < 1.0):
            raise ValueError("rho_max must lie in (0, 1)")
        if self.horizon < 0 or self.context_len < 1 or self.n_channels < 1:
            raise ValueError("invalid model dimensions")
        self.encoder.n_tokens(self.context_len)  # validates divisibility

    @property
    def trend_head_enabled(self) -> bool:
        if self.use_trend_head is None:
            return self.encoder.variant == "decomp"
        return self.use_trend_head


@dataclass
class ForecastModel:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    seed: int = 0


@dataclass
class ForecastOutput:
    y_hat: np.ndarray  # (H, d) or (B, H, d)
    latent_trajectory: list[np.ndarray]  # H+1 entries: z_t, z_{t+1}, ...


def init_model(cfg: ModelConfig, seed: int = 0) -> ForecastModel:
    """Seeded initialization of every trainable tensor."""
    d, dm = cfg.n_channels, cfg.encoder.d_model
    params = init_encoder_params(cfg.encoder, d, cfg.context_len, seed=seed)
    rng = np.random.default_rng(seed + 1)
    params["koop.u_raw"] = rng.standard_normal((dm, dm))
    params["koop.v_raw"] = rng.standard_normal((dm, dm))
    params["koop.sigma_raw"] = np.zeros(dm)
    params["decoder_w"] = rng.standard_normal((d, dm)) / np.sqrt(dm)
    if cfg.trend_head_enabled:
        width = cfg.context_len * d
        params["trend_w"] = rng.standard_normal(
            (width, cfg.horizon * d)
        ) / np.sqrt(width)
    return ForecastModel(cfg=cfg, params=params, seed=seed)


def forward_t(
    cfg: ModelConfig,
    params: Mapping[str, Tensor],
    x: np.ndarray,
    differentiate_qr: bool = True,
) -> tuple[Tensor, list[Tensor], Tensor]:
    """Batched differentiable forward pass.

    Returns (y_hat (B,H,d), latent trajectory of B×d_model tensors,
    materialized singular values).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != cfg.context_len or x.shape[2] != cfg.n_channels:
        raise ValueError(
            f"input shape {x.shape[1:]} does not match "
            f"(context_len, n_channels)=({cfg.context_len}, {cfg.n_channels})"
        )
    enc = encode(x, cfg.encoder, params)
    k, sigma = materialize_t(
        params["koop.u_raw"],
        params["koop.v_raw"],
        params["koop.sigma_raw"],
        cfg.rho_max,
        tie_factors=cfg.tie_factors,
        differentiate_qr=differentiate_qr,
    )
    w = params["decoder_w"]
    z = enc.z
    trajectory = [z]
    steps = []
    for _ in range(cfg.horizon):
        z = z @ k.T
        trajectory.append(z)
        steps.append((z @ w.T).reshape(z.shape[0], 1, cfg.n_channels))
    if steps:
        y_hat = concat(steps, axis=1)
    else:
        y_hat = Tensor(np.zeros((x.shape[0], 0, cfg.n_channels)))
    if cfg.trend_head_enabled and enc.trend is not None and cfg.horizon > 0:
        flat = Tensor(enc.trend.reshape(x.shape[0], -1))
        y_hat = y_hat + (flat @ params["trend_w"]).reshape(
            x.shape[0], cfg.horizon, cfg.n_channels
        )
    return y_hat, trajectory, sigma


def forward(model: ForecastModel, x) -> ForecastOutput:
    """Inference forward pass on a (P, d) window or (B, P, d) batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    params = {k: Tensor(v) for k, v in model.params.items()}
    y_hat, trajectory, _ = forward_t(model.cfg, params, x)
    if single:
        return ForecastOutput(
            y_hat=y_hat.data[0],
            latent_trajectory=[z.data[0] for z in trajectory],
        )
    return ForecastOutput(
        y_hat=y_hat.data, latent_trajectory=[z.data for z in trajectory]
    )


def training_loss_t(
    y_hat: Tensor,
    y: np.ndarray | Tensor,
    trajectory: list[Tensor],
    lam: float,
    all_pairs: bool = True,
) -> tuple[Tensor, Tensor, Tensor]:
    """MSE plus Lyapunov penalty on latent energy increments.

    The penalty averages ReLU(‖z_next‖² − ‖z_prev‖²) over consecutive
    trajectory pairs (all pairs by default; `all_pairs=False` restricts
    to the first pair) and over batch elements.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    err = y_hat - y
    mse = (err * err).mean()
    pairs = list(zip(trajectory[:-1], trajectory[1:]))
    if not all_pairs:
        pairs = pairs[:1]
    if pairs:
        terms = []
        for z_prev, z_next in pairs:
            gain = (z_next * z_next).sum(axis=-1) - (z_prev * z_prev).sum(axis=-1)
            terms.append(gain.relu().mean().reshape(1))
        lyap = concat(terms).mean()
    else:
        lyap = Tensor(0.0)
    return mse + lam * lyap, mse, lyap


def training_loss(y_hat, y, trajectory, lam, all_pairs=True):
    """Numpy-facing wrapper around `training_loss_t`; returns floats."""
    y_hat_t = Tensor(np.asarray(y_hat, dtype=np.float64))
    traj_t = [Tensor(np.atleast_2d(np.asarray(z, dtype=np.float64))) for z in trajectory]
    total, mse, lyap = training_loss_t(y_hat_t, np.asarray(y, float), traj_t, lam, all_pairs)
    return float(total.data), float(mse.data), float(lyap.data)


def certified_output_bound(model: ForecastModel, h: int, delta_z_norm: float) -> float:
    """‖W‖₂ · rho_max^h · ‖Δz‖ — cap on decoded deviation after h steps."""
    if h < 0 or delta_z_norm < 0:
        raise ValueError("h and delta_z_norm must be nonnegative")
    return (
        spectral_norm(model.params["decoder_w"]) * model.cfg.rho_max**h * delta_z_norm
    )


# -- checkpointing ------------------------------------------------------------


def _cfg_to_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["encoder"] = dataclasses.asdict(cfg.encoder)
    return d


def _cfg_from_dict(d: dict) -> ModelConfig:
    enc = EncoderConfig(**d["encoder"])
    rest = {k: v for k, v in d.items() if k != "encoder"}
    return ModelConfig(encoder=enc, **rest)


def save_checkpoint(model: ForecastModel, path) -> None:
    """Self-describing container: config, seed, and all parameter tensors."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": _cfg_to_dict(model.cfg),
        "seed": model.seed,
        "param_names": sorted(model.params),
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)


def load_checkpoint(path) -> ForecastModel:
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            arrays = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {meta.get('format_version')}"
        )
    cfg = _cfg_from_dict(meta["config"])
    if sorted(arrays) != meta["param_names"]:
        raise CheckpointError("checkpoint parameter set does not match its manifest")
    model = ForecastModel(cfg=cfg, params=arrays, seed=meta["seed"])
    reference = init_model(cfg, seed=0)
    for name, value in arrays.items():
        if name not in reference.params:
            raise CheckpointError(f"unexpected parameter {name!r} in checkpoint")
        if value.shape != reference.params[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint has {value.shape}, "
                f"config implies {reference.params[name].shape}"
            )
    return model
