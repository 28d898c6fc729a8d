"""Strictly stable latent transition operator.

The operator is parameterized as K = U diag(sigma) Vᵀ with U, V the
Q-factors of unconstrained raw matrices and sigma_i = logistic(raw_i) *
rho_max.  Every singular value is therefore capped below rho_max < 1,
which makes the latent dynamics contractive by construction.  The raw
parameters live in flat space, so any unconstrained optimizer applies;
re-orthogonalization happens on every materialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .linalg import as_matrix, as_vector, householder_qr, householder_qr_t
from .linalg import _stable_sigmoid_np


@dataclass(frozen=True)
class StableKoopmanOperator:
    """Raw parameters of the contractive latent transition map."""

    u_raw: np.ndarray
    v_raw: np.ndarray
    sigma_raw: np.ndarray
    rho_max: float = 0.99
    tie_factors: bool = False

    def __post_init__(self):
        u = as_matrix(self.u_raw)
        v = as_matrix(self.v_raw)
        s = as_vector(self.sigma_raw)
        d = u.shape[0]
        if u.shape != (d, d) or v.shape != (d, d) or s.shape != (d,):
            raise ValueError(
                f"inconsistent operator shapes: {u.shape}, {v.shape}, {s.shape}"
            )
        if not (0.0 < self.rho_max < 1.0):
            raise ValueError(f"rho_max must lie in (0, 1), got {self.rho_max}")
        object.__setattr__(self, "u_raw", u)
        object.__setattr__(self, "v_raw", v)
        object.__setattr__(self, "sigma_raw", s)

    @property
    def dim(self) -> int:
        return self.u_raw.shape[0]

    @classmethod
    def random(cls, dim, rho_max=0.99, tie_factors=False, seed=0):
        """Seeded Gaussian raw factors, sigma_raw = 0 (singular values rho_max/2)."""
        rng = np.random.default_rng(seed)
        return cls(
            u_raw=rng.standard_normal((dim, dim)),
            v_raw=rng.standard_normal((dim, dim)),
            sigma_raw=np.zeros(dim),
            rho_max=rho_max,
            tie_factors=tie_factors,
        )


def materialize(op: StableKoopmanOperator) -> tuple[np.ndarray, np.ndarray]:
    """Build (K, sigma) from raw parameters; re-orthogonalizes U and V."""
    u, _ = householder_qr(op.u_raw)
    v = u if op.tie_factors else householder_qr(op.v_raw)[0]
    sigma = _stable_sigmoid_np(op.sigma_raw) * op.rho_max
    k = (u * sigma) @ v.T
    return k, sigma


def materialize_factors(op: StableKoopmanOperator):
    """Like `materialize` but also returns the orthogonal factors (K, sigma, U, V)."""
    u, _ = householder_qr(op.u_raw)
    v = u if op.tie_factors else householder_qr(op.v_raw)[0]
    sigma = _stable_sigmoid_np(op.sigma_raw) * op.rho_max
    return (u * sigma) @ v.T, sigma, u, v


def materialize_t(
    u_raw: Tensor,
    v_raw: Tensor,
    sigma_raw: Tensor,
    rho_max: float,
    tie_factors: bool = False,
    differentiate_qr: bool = True,
) -> tuple[Tensor, Tensor]:
    """Differentiable materialization for the training path.

    With `differentiate_qr` off, the orthogonalization is treated as a
    stop-gradient projection (ablation mode); the default differentiates
    through the full Householder composition.
    """
    if differentiate_qr:
        u, _ = householder_qr_t(u_raw)
        v = u if tie_factors else householder_qr_t(v_raw)[0]
    else:
        u = Tensor(householder_qr(u_raw.data)[0])
        v = u if tie_factors else Tensor(householder_qr(v_raw.data)[0])
    sigma = sigma_raw.sigmoid() * rho_max
    k = (u * sigma.reshape(1, -1)) @ v.T
    return k, sigma


def apply(op: StableKoopmanOperator, z) -> np.ndarray:
    """One step of the latent dynamics: K @ z."""
    z = as_vector(z)
    if z.shape[0] != op.dim:
        raise ValueError(f"latent dimension mismatch: {z.shape[0]} != {op.dim}")
    k, _ = materialize(op)
    return k @ z


def rollout(op: StableKoopmanOperator, z0, h: int) -> list[np.ndarray]:
    """Repeated application: [K z0, K² z0, ..., K^h z0]."""
    z = as_vector(z0)
    if z.shape[0] != op.dim:
        raise ValueError(f"latent dimension mismatch: {z.shape[0]} != {op.dim}")
    if h < 0:
        raise ValueError("horizon must be nonnegative")
    k, _ = materialize(op)
    out = []
    for _ in range(h):
        z = k @ z
        out.append(z)
    return out


def perturbation_bound(
    op: StableKoopmanOperator, decoder_norm: float, h: int, delta_z_norm: float
) -> float:
    """Certified output-deviation cap: ‖W‖₂ · rho_max^h · ‖Δz‖."""
    if decoder_norm < 0 or h < 0 or delta_z_norm < 0:
        raise ValueError("perturbation_bound requires nonnegative inputs")
    return decoder_norm * op.rho_max**h * delta_z_norm


def spectral_trace_entry(op: StableKoopmanOperator) -> float:
    """Largest singular value of the materialized operator (logged per epoch)."""
    _, sigma = materialize(op)
    return float(sigma.max())
