"""Training loop, Adam optimizer, and gradient auditing.

Gradients come from the reverse-mode tape in `autodiff`; the audits
cross-check them against central finite differences and against the
analytic bound on the sigma-parameter sensitivities.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteGradientError, Tensor
from .forecaster import ForecastModel, forward_t, training_loss_t
from .koopman import StableKoopmanOperator, spectral_trace_entry
from .linalg import spectral_norm


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    lam: float = 0.1
    batch_size: int | None = None  # None -> full batch
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    all_pairs: bool = True  # Lyapunov penalty over all rollout pairs
    differentiate_qr: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class TrainingTrace:
    total: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)
    lyap: list[float] = field(default_factory=list)
    spectral_radius: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.total)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "total_loss", "mse", "lyap", "spectral_radius", "seconds"]
            )
            for i in range(len(self.total)):
                writer.writerow(
                    [
                        i + 1,
                        repr(self.total[i]),
                        repr(self.mse[i]),
                        repr(self.lyap[i]),
                        repr(self.spectral_radius[i]),
                        repr(self.seconds[i]),
                    ]
                )


def grad(
    model: ForecastModel,
    x: np.ndarray,
    y: np.ndarray,
    lam: float,
    all_pairs: bool = True,
    differentiate_qr: bool = True,
) -> tuple[tuple[float, float, float], dict[str, np.ndarray]]:
    """Reverse-mode gradients of the training loss for every parameter.

    Returns ((total, mse, lyap), gradient registry); parameters the loss
    does not touch get exact zero gradients.
    """
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in model.params.items()}
    y_hat, trajectory, _ = forward_t(model.cfg, params, x, differentiate_qr)
    total, mse, lyap = training_loss_t(y_hat, y, trajectory, lam, all_pairs)
    total.backward()
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        grads[name] = g
    return (float(total.data), float(mse.data), float(lyap.data)), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainingConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Standard Adam update with bias correction; mutates params/state."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, g in grads.items():
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        if not np.all(np.isfinite(update)):
            raise NonFiniteGradientError(f"non-finite Adam update for {name!r}")
        params[name] = params[name] - update
    return params, state


def _koop_operator(model: ForecastModel) -> StableKoopmanOperator:
    return StableKoopmanOperator(
        u_raw=model.params["koop.u_raw"],
        v_raw=model.params["koop.v_raw"],
        sigma_raw=model.params["koop.sigma_raw"],
        rho_max=model.cfg.rho_max,
        tie_factors=model.cfg.tie_factors,
    )


def train(
    model: ForecastModel,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainingConfig,
) -> tuple[ForecastModel, TrainingTrace]:
    """Alg.-style loop: forward -> loss -> reverse-mode grad -> Adam.

    `x` is (B, P, d), `y` is (B, H, d).  Full-batch by default; with
    `batch_size` set, epochs iterate seeded random permutations.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("training window set is empty")
    if x.shape[0] != y.shape[0]:
        raise ValueError("context/target batch sizes differ")

    state = AdamState.init(model.params)
    trace = TrainingTrace()
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]

    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        if cfg.batch_size is None:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [
                order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)
            ]
        totals = np.zeros(3)
        count = 0
        try:
            for idx in batches:
                (total, mse, lyap), grads = grad(
                    model,
                    x[idx],
                    y[idx],
                    cfg.lam,
                    all_pairs=cfg.all_pairs,
                    differentiate_qr=cfg.differentiate_qr,
                )
                adam_step(model.params, grads, state, cfg)
                totals += np.array([total, mse, lyap]) * len(idx)
                count += len(idx)
        except NonFiniteGradientError as exc:
            raise NonFiniteGradientError(f"epoch {epoch + 1}: {exc}") from exc
        totals /= count
        trace.total.append(float(totals[0]))
        trace.mse.append(float(totals[1]))
        trace.lyap.append(float(totals[2]))
        trace.spectral_radius.append(spectral_trace_entry(_koop_operator(model)))
        trace.seconds.append(time.perf_counter() - start)
    return model, trace


def finite_difference_check(
    model: ForecastModel,
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float = 1e-5,
    lam: float = 0.1,
    max_coords: int = 500,
    seed: int = 0,
    abs_tol: float = 1e-8,
) -> float:
    """Worst relative error of reverse-mode vs central finite differences.

    Probes a seeded random subset of at most `max_coords` parameter
    coordinates; coordinate pairs agreeing within `abs_tol` count as zero
    error regardless of relative scale.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    (_, _, _), grads = grad(model, x, y, lam)

    coords = [
        (name, idx)
        for name, arr in sorted(model.params.items())
        for idx in range(arr.size)
    ]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picked]

    def loss_at(params):
        probe = ForecastModel(cfg=model.cfg, params=params, seed=model.seed)
        pt = {k: Tensor(v) for k, v in params.items()}
        y_hat, trajectory, _ = forward_t(probe.cfg, pt, x)
        total, _, _ = training_loss_t(y_hat, y, trajectory, lam)
        return float(total.data)

    worst = 0.0
    for name, flat in coords:
        idx = np.unravel_index(flat, model.params[name].shape)
        bumped = {k: v.copy() for k, v in model.params.items()}
        bumped[name][idx] += epsilon
        up = loss_at(bumped)
        bumped[name][idx] -= 2 * epsilon
        down = loss_at(bumped)
        fd = (up - down) / (2 * epsilon)
        ag = grads[name][idx]
        if abs(fd - ag) <= abs_tol:
            continue
        worst = max(worst, abs(fd - ag) / max(abs(fd), abs(ag), abs_tol))
    return worst


def sigma_gradient_bound_audit(
    model: ForecastModel, x: np.ndarray
) -> tuple[float, float]:
    """Measured vs certified sensitivity of one-step outputs to sigma_raw.

    measured = max_{i,j} |d y_j / d sigma_raw_i| for a single-step
    prediction; bound = ‖W‖₂ · rho_max · ‖z_t‖ / 4 (U, V orthogonal).
    """
    cfg1 = dataclasses.replace(model.cfg, horizon=1, use_trend_head=False)
    params = {
        k: v for k, v in model.params.items() if k != "trend_w"
    }
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] != 1:
        raise ValueError("audit expects a single sample")

    measured = 0.0
    d = cfg1.n_channels
    z_norm = None
    for j in range(d):
        pt = {k: Tensor(v, requires_grad=(k == "koop.sigma_raw")) for k, v in params.items()}
        y_hat, trajectory, _ = forward_t(cfg1, pt, x)
        if z_norm is None:
            z_norm = float(np.linalg.norm(trajectory[0].data))
        seed_grad = np.zeros_like(y_hat.data)
        seed_grad[0, 0, j] = 1.0
        y_hat.backward(seed_grad)
        g = pt["koop.sigma_raw"].grad
        if g is not None:
            measured = max(measured, float(np.abs(g).max()))
    bound = spectral_norm(model.params["decoder_w"]) * model.cfg.rho_max * z_norm / 4.0
    return measured, bound
