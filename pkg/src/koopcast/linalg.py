"""Deterministic dense linear algebra primitives.

Everything runs in float64.  The QR factorization uses Householder
reflectors with a fixed sign convention (nonnegative R diagonal) so that
re-orthogonalization is a deterministic function of its input.  A
differentiable twin (`householder_qr_t`) builds the same factorization
out of autodiff primitives; the two are cross-checked in the test suite.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, _stable_sigmoid_np


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge within the iteration cap."""


def as_matrix(a) -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def as_vector(a) -> np.ndarray:
    """Validate and return a finite 1-D float64 array."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def stable_sigmoid(x: float) -> float:
    """Logistic function, overflow-free for |x| up to ~745."""
    if not np.isfinite(x):
        raise ValueError("stable_sigmoid requires a finite argument")
    return float(_stable_sigmoid_np(np.asarray(x)))


def householder_qr(m) -> tuple[np.ndarray, np.ndarray]:
    """QR factorization of a square matrix via Householder reflectors.

    Returns (Q, R) with Q orthogonal, R upper-triangular with nonnegative
    diagonal, and Q @ R == m to round-off.
    """
    a = as_matrix(m)
    n, n2 = a.shape
    if n != n2:
        raise ValueError(f"householder_qr requires a square matrix, got {a.shape}")

    r = a.copy()
    q = np.eye(n)
    for k in range(n):
        x = r[k:, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        alpha = -norm_x if x[0] >= 0 else norm_x
        v = x.copy()
        v[0] -= alpha
        norm_v = np.linalg.norm(v)
        if norm_v < 1e-300:
            continue
        v /= norm_v
        r[k:, :] -= 2.0 * np.outer(v, v @ r[k:, :])
        q[:, k:] -= 2.0 * np.outer(q[:, k:] @ v, v)

    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q *= signs
    r = signs[:, None] * r
    return q, np.triu(r)


def householder_qr_t(a: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable Householder QR built from autodiff primitives.

    Matches `householder_qr` to round-off on the forward pass; gradients
    follow from the smooth reflector composition.  Reflector signs and
    the final diagonal-sign fix are locally constant, so treating them
    as constants keeps the tape gradient equal to the analytic one.
    """
    n, n2 = a.shape
    if n != n2:
        raise ValueError(f"householder_qr_t requires a square matrix, got {a.shape}")

    r = a
    q = Tensor(np.eye(n))
    for k in range(n):
        x = r[k:, k : k + 1]
        norm_x = (x * x).sum().sqrt()
        if norm_x.data == 0.0:
            continue
        sign = 1.0 if x.data[0, 0] >= 0 else -1.0
        e1 = np.zeros((n - k, 1))
        e1[0, 0] = 1.0
        v = x - (-sign) * norm_x * Tensor(e1)
        norm_v = (v * v).sum().sqrt()
        if norm_v.data < 1e-300:
            continue
        v = v / norm_v
        r_low = r[k:, :] - 2.0 * (v @ (v.T @ r[k:, :]))
        r = r_low if k == 0 else concat([r[:k, :], r_low], axis=0)
        q_right = q[:, k:] - 2.0 * ((q[:, k:] @ v) @ v.T)
        q = q_right if k == 0 else concat([q[:, :k], q_right], axis=1)

    signs = np.where(np.diag(r.data) < 0, -1.0, 1.0)
    q = q * Tensor(signs)
    r = r * Tensor(signs[:, None] * np.triu(np.ones((n, n))))
    return q, r


def spectral_norm(m, rtol: float = 1e-10, max_iter: int = 1000, seed: int = 0) -> float:
    """Largest singular value via power iteration on MᵀM.

    Deterministic seeded start vector; restarts once with a fresh seed
    before signalling non-convergence.
    """
    a = as_matrix(m)
    if a.size == 0:
        return 0.0

    for attempt_seed in (seed, seed + 1):
        rng = np.random.default_rng(attempt_seed)
        v = rng.standard_normal(a.shape[1])
        nv = np.linalg.norm(v)
        v /= nv
        sigma = 0.0
        for _ in range(max_iter):
            w = a.T @ (a @ v)
            nw = np.linalg.norm(w)
            if nw < 1e-300:
                return 0.0
            v_new = w / nw
            sigma_new = np.linalg.norm(a @ v_new)
            if abs(sigma_new - sigma) <= rtol * max(sigma_new, 1e-300):
                return float(sigma_new)
            sigma = sigma_new
            v = v_new
    raise PowerIterationError(
        f"power iteration did not converge within {max_iter} iterations"
    )
