"""Unified transformer encoder with three backbone variants.

variant="patch"      non-overlapping patch tokens, full attention
variant="probsparse" raw-step tokens, top-u query sparse attention
variant="decomp"     moving-average trend/seasonal split, full attention

All variants add positional encoding, run n_layers of
(attention -> add&norm -> FFN -> add&norm) and average-pool the tokens
into the latent vector z.  The forward path is written in autodiff
tensors so the same code serves inference and training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import Tensor, affine, layer_norm, mlp, softmax

VARIANTS = ("patch", "probsparse", "decomp")
PE_KINDS = ("sinusoidal", "learnable")


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "patch"
    d_model: int = 16
    n_layers: int = 2
    n_heads: int = 2
    ffn_width: int = 64
    patch_len: int = 16
    pe_kind: str = "sinusoidal"
    ma_kernel: int = 25
    probsparse_factor: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.pe_kind not in PE_KINDS:
            raise ValueError(f"unknown pe_kind {self.pe_kind!r}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.ma_kernel < 1 or self.ma_kernel % 2 == 0:
            raise ValueError("ma_kernel must be odd and >= 1")
        if self.probsparse_factor <= 0:
            raise ValueError("probsparse_factor must be positive")

    def n_tokens(self, context_len: int) -> int:
        if self.variant == "patch":
            if context_len % self.patch_len != 0:
                raise ValueError(
                    f"context length {context_len} not divisible by "
                    f"patch length {self.patch_len}"
                )
            return context_len // self.patch_len
        return context_len

    def token_width(self, n_channels: int) -> int:
        if self.variant == "patch":
            return self.patch_len * n_channels
        return n_channels


class EncodeResult(NamedTuple):
    h: Tensor  # (B, tokens, d_model) encoder output
    z: Tensor  # (B, d_model) pooled latent
    trend: np.ndarray | None  # (B, P, d), decomp variant only


# -- positional encoding ------------------------------------------------------


def sinusoidal_pe(length: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos table: PE[pos, 2k] = sin(pos / 10000^{2k/d_model})."""
    if length < 1 or d_model < 1:
        raise ValueError("length and d_model must be >= 1")
    pe = np.zeros((length, d_model))
    pos = np.arange(length)[:, None].astype(np.float64)
    k2 = np.arange(0, d_model, 2).astype(np.float64)
    angle = pos / np.power(10000.0, k2 / d_model)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe


# -- tokenization -------------------------------------------------------------


def patchify(x: np.ndarray, p: int) -> np.ndarray:
    """Split a (P, d) or (B, P, d) window into P/p non-overlapping patches.

    Each patch row flattens its p time steps in time-major order.
    """
    x = np.asarray(x, dtype=np.float64)
    context = x.shape[-2]
    if context % p != 0:
        raise ValueError(f"context length {context} not divisible by patch length {p}")
    n = context // p
    d = x.shape[-1]
    return x.reshape(*x.shape[:-2], n, p * d)


def moving_average(x: np.ndarray, k: int) -> np.ndarray:
    """Centered per-channel moving average with replicate padding."""
    x = np.asarray(x, dtype=np.float64)
    if k % 2 == 0 or k < 1:
        raise ValueError("moving-average kernel must be odd and >= 1")
    if k > x.shape[-2]:
        raise ValueError("kernel longer than the series")
    if k == 1:
        return x.copy()
    pad = k // 2
    width = [(0, 0)] * x.ndim
    width[-2] = (pad, pad)
    padded = np.pad(x, width, mode="edge")
    cs = np.cumsum(padded, axis=-2)
    lead = np.zeros_like(cs[..., :1, :])
    cs = np.concatenate([lead, cs], axis=-2)
    return (cs[..., k:, :] - cs[..., :-k, :]) / k


def decompose(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Trend/seasonal split; trend + seasonal reconstructs x exactly."""
    trend = moving_average(x, k)
    return trend, x - trend


# -- attention ----------------------------------------------------------------


def _attn_scores(qm: Tensor, km: Tensor, scale: float) -> Tensor:
    # scale the (smaller) query array rather than the full score matrix
    return (qm * scale) @ km.T


def full_attention_t(qm: Tensor, km: Tensor, vm: Tensor, scale=None) -> Tensor:
    if scale is None:
        scale = 1.0 / math.sqrt(km.shape[-1])
    return softmax(_attn_scores(qm, km, scale), axis=-1) @ vm


def full_attention(qm, km, vm, scale=None) -> np.ndarray:
    """Row-wise softmax of scaled scores applied to vm."""
    return full_attention_t(Tensor(qm), Tensor(km), Tensor(vm), scale).data


def probsparse_scores(qm, km, scale=None) -> np.ndarray:
    """Per-query sparsity score M(q) = max_j alpha - mean_j alpha (>= 0)."""
    qm = np.asarray(qm, dtype=np.float64)
    km = np.asarray(km, dtype=np.float64)
    if scale is None:
        scale = 1.0 / math.sqrt(km.shape[-1])
    alpha = (qm @ np.swapaxes(km, -1, -2)) * scale
    return alpha.max(axis=-1) - alpha.mean(axis=-1)


def sparsity_budget(n_tokens: int, c: float) -> int:
    """Number of queries granted full attention: min(n, ceil(c ln(n+1)))."""
    return min(n_tokens, int(math.ceil(c * math.log(n_tokens + 1))))


def _top_u_mask(scores: np.ndarray, u: int) -> np.ndarray:
    """Boolean mask selecting the top-u entries along the last axis.

    Ties break toward lower indices (stable sort on descending score).
    """
    order = np.argsort(-scores, axis=-1, kind="stable")
    idx = order[..., :u]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, idx, True, axis=-1)
    return mask


def probsparse_attention_t(
    qm: Tensor, km: Tensor, vm: Tensor, c: float, scale=None
) -> Tensor:
    if scale is None:
        scale = 1.0 / math.sqrt(km.shape[-1])
    n = qm.shape[-2]
    u = sparsity_budget(n, c)
    alpha = _attn_scores(qm, km, scale)
    if u >= n:
        return softmax(alpha, axis=-1) @ vm
    scores = alpha.data.max(axis=-1) - alpha.data.mean(axis=-1)
    idx = np.argsort(-scores, axis=-1, kind="stable")[..., :u]
    # full attention only for the selected queries; gather and scatter
    # through a constant one-hot matrix so gradients route correctly
    one_hot = np.zeros(alpha.shape[:-1] + (u,))
    np.put_along_axis(
        np.moveaxis(one_hot, -1, -2), idx[..., None], 1.0, axis=-1
    )
    scatter = Tensor(one_hot)
    selected = softmax(scatter.T @ alpha, axis=-1) @ vm
    covered = one_hot.sum(axis=-1, keepdims=True)
    # unselected queries fall back to the value column-mean
    fallback = vm.mean(axis=-2, keepdims=True)
    return scatter @ selected + Tensor(1.0 - covered) * fallback


def probsparse_attention(qm, km, vm, c: float, scale=None) -> np.ndarray:
    """Top-u queries get full attention; the rest the value column-mean."""
    if c <= 0:
        raise ValueError("probsparse factor must be positive")
    return probsparse_attention_t(Tensor(qm), Tensor(km), Tensor(vm), c, scale).data


# -- parameters ---------------------------------------------------------------


def init_encoder_params(
    cfg: EncoderConfig, n_channels: int, context_len: int, seed: int = 0
) -> dict[str, np.ndarray]:
    """Seeded Gaussian initialization for all encoder weights."""
    rng = np.random.default_rng(seed)
    width = cfg.token_width(n_channels)
    dm = cfg.d_model
    params = {
        "embed_w": rng.standard_normal((width, dm)) / math.sqrt(width),
        "embed_b": np.zeros(dm),
    }
    if cfg.pe_kind == "learnable":
        params["pos_table"] = 0.02 * rng.standard_normal(
            (cfg.n_tokens(context_len), dm)
        )
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        for name in ("wq", "wk", "wv", "wo"):
            params[pre + name] = rng.standard_normal((dm, dm)) / math.sqrt(dm)
        params[pre + "ffn_w1"] = rng.standard_normal((dm, cfg.ffn_width)) / math.sqrt(dm)
        params[pre + "ffn_b1"] = np.zeros(cfg.ffn_width)
        params[pre + "ffn_w2"] = rng.standard_normal((cfg.ffn_width, dm)) / math.sqrt(
            cfg.ffn_width
        )
        params[pre + "ffn_b2"] = np.zeros(dm)
        params[pre + "ln1_g"] = np.ones(dm)
        params[pre + "ln1_b"] = np.zeros(dm)
        params[pre + "ln2_g"] = np.ones(dm)
        params[pre + "ln2_b"] = np.zeros(dm)
    return params


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, dm = x.shape
    return x.reshape(b, n, n_heads, dm // n_heads).swapaxes(1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return x.swapaxes(1, 2).reshape(b, n, h * dh)


def _encoder_layer(z: Tensor, p: dict, pre: str, cfg: EncoderConfig) -> Tensor:
    q = _split_heads(z @ p[pre + "wq"], cfg.n_heads)
    k = _split_heads(z @ p[pre + "wk"], cfg.n_heads)
    v = _split_heads(z @ p[pre + "wv"], cfg.n_heads)
    scale = 1.0 / math.sqrt(cfg.d_model)
    if cfg.variant == "probsparse":
        attended = probsparse_attention_t(q, k, v, cfg.probsparse_factor, scale)
    else:
        attended = full_attention_t(q, k, v, scale)
    z = layer_norm(
        _merge_heads(attended) @ p[pre + "wo"],
        p[pre + "ln1_g"],
        p[pre + "ln1_b"],
        residual=z,
    )
    ffn = mlp(
        z,
        p[pre + "ffn_w1"],
        p[pre + "ffn_b1"],
        p[pre + "ffn_w2"],
        p[pre + "ffn_b2"],
    )
    return layer_norm(ffn, p[pre + "ln2_g"], p[pre + "ln2_b"], residual=z)


def encode(x, cfg: EncoderConfig, params) -> EncodeResult:
    """Run the unified encoder on a (P, d) window or a (B, P, d) batch.

    Accepts plain arrays or autodiff tensors for the parameters; returns
    the per-token encoder output, the pooled latent, and (decomp variant)
    the trend component for the forecaster's trend head.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (P, d) or (B, P, d) input, got shape {x.shape}")
    p = {k: (v if isinstance(v, Tensor) else Tensor(v)) for k, v in params.items()}

    trend = None
    if cfg.variant == "decomp":
        trend, seasonal = decompose(x, min(cfg.ma_kernel, _odd_floor(x.shape[1])))
        tokens = seasonal
    elif cfg.variant == "patch":
        tokens = patchify(x, cfg.patch_len)
    else:
        tokens = x

    z = affine(Tensor(tokens), p["embed_w"], p["embed_b"])
    if cfg.pe_kind == "learnable":
        pe = p["pos_table"]
        if pe.shape[0] != z.shape[1]:
            raise ValueError(
                f"learnable positional table covers {pe.shape[0]} tokens, "
                f"input produces {z.shape[1]}"
            )
    else:
        pe = Tensor(sinusoidal_pe(z.shape[1], cfg.d_model))
    z = z + pe

    for i in range(cfg.n_layers):
        z = _encoder_layer(z, p, f"layer{i}.", cfg)

    pooled = z.mean(axis=1)
    if single:
        return EncodeResult(z[0], pooled[0], None if trend is None else trend[0])
    return EncodeResult(z, pooled, trend)


def _odd_floor(n: int) -> int:
    return n if n % 2 == 1 else n - 1
