"""Softmax cross-entropy, function-space residuals, and conditioning analysis.

Loss values are the negative log-likelihood averaged over examples (natural
log), so xent_loss(0, Y) = ln K.  The dynamics module drives training with
the summed residual Y - softmax(Z); the mean here only affects reported
loss values, not update equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import KernelTensor

KAPPA_RCOND = 1e-14


def softmax(Z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, max-shifted for stability; shift-invariant exactly."""
    Z = np.asarray(Z, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise ValueError("softmax input must be finite")
    shifted = Z - Z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(Z: np.ndarray, Y: np.ndarray):
    if Z.shape != Y.shape:
        raise ValueError(f"logits {Z.shape} and labels {Y.shape} do not match")


def xent_loss(Z: np.ndarray, Y: np.ndarray) -> float:
    """Mean over examples of -sum_k Y_k ln softmax(Z)_k."""
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_labels(Z, Y)
    shifted = Z - Z.max(axis=-1, keepdims=True)
    logprob = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return float(-(Y * logprob).sum(axis=-1).mean())


def residual(Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Driving term Y - softmax(Z); rows sum to zero."""
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_labels(Z, Y)
    return Y - softmax(Z)


def accuracy(Z: np.ndarray, Y: np.ndarray) -> float:
    """Fraction of rows whose argmax logit matches the label."""
    Z = np.asarray(Z)
    Y = np.asarray(Y)
    _check_labels(Z, Y)
    return float(np.mean(Z.argmax(axis=-1) == Y.argmax(axis=-1)))


def softmax_jacobian(z_row: np.ndarray) -> np.ndarray:
    """dsigma = diag(sigma) - sigma sigma^T for one logit row."""
    s = softmax(np.asarray(z_row, dtype=np.float64).reshape(-1))
    return np.diag(s) - np.outer(s, s)


@dataclass
class SpectrumApprox:
    """Large-beta eigenpair approximation of the softmax derivative."""

    eigenvalues: np.ndarray     # ordered as (lambda_1, lambda_2, lambda_3, ...)
    eigenvectors: np.ndarray    # columns match eigenvalues


def dsoftmax_spectrum_largebeta(z_row: np.ndarray, beta: float) -> SpectrumApprox:
    """Approximate spectrum of dsigma(beta * z) for a descending logit row.

    With z_1 > z_2 > ... and gaps g_i = z_1 - z_i:
      lambda_1 = 2 exp(-beta g_2)          v_1 = (e_1 - e_2) / sqrt(2)
      lambda_2 = -exp(-2 beta g_2) / 2     v_2 = (e_1 + e_2) / sqrt(2)
      lambda_i = exp(-beta g_i), i > 2     v_i = e_i + exp(-beta (z_2 - z_i)) e_1
    Valid for beta / K >> 1; lambda_2 is the stated expansion value and is
    not sign-consistent with the exact (PSD) spectrum.
    """
    z = np.asarray(z_row, dtype=np.float64).reshape(-1)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if z.size < 2:
        raise ValueError("need at least two classes")
    if np.any(np.diff(z) >= 0):
        raise ValueError("logits must be strictly descending (ties not allowed)")
    K = z.size
    gap12 = z[0] - z[1]
    vals = np.zeros(K)
    vecs = np.zeros((K, K))
    vals[0] = 2.0 * math.exp(-beta * gap12)
    vecs[0, 0], vecs[1, 0] = 1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0)
    vals[1] = -0.5 * math.exp(-2.0 * beta * gap12)
    vecs[0, 1], vecs[1, 1] = 1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)
    for i in range(2, K):
        vals[i] = math.exp(-beta * (z[0] - z[i]))
        vecs[i, i] = 1.0
        vecs[0, i] = math.exp(-beta * (z[1] - z[i]))
    return SpectrumApprox(vals, vecs)


def kappa(A: np.ndarray, rcond: float = KAPPA_RCOND) -> float:
    """Condition number sigma_max / sigma_min; inf when numerically singular."""
    s = np.linalg.svd(np.asarray(A, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0 or s[-1] <= rcond * s[0]:
        return math.inf
    return float(s[0] / s[-1])


def condition_bound(A: np.ndarray, B: np.ndarray) -> tuple:
    """Bracket (kappa(B)/kappa(A), kappa(A)kappa(B)) containing kappa(AB).

    Singular inputs are reported through infinities rather than raised.
    """
    ka, kb = kappa(A), kappa(B)
    if math.isinf(ka):
        return (0.0 if math.isfinite(kb) else 0.0, math.inf)
    lower = kb / ka
    upper = ka * kb
    return (lower, upper)


@dataclass
class HessianReport:
    """Near-equilibrium dynamics operator with its spectrum."""

    matrix: np.ndarray
    eigenvalues: np.ndarray
    condition_number: float


def _blockdiag_dsoftmax(Z_star: np.ndarray) -> np.ndarray:
    M, K = Z_star.shape
    D = np.zeros((M * K, M * K))
    for m in range(M):
        D[m * K:(m + 1) * K, m * K:(m + 1) * K] = softmax_jacobian(Z_star[m])
    return D


def hessian_near_equilibrium(kern, Z_star: np.ndarray, beta: float,
                             lambda_theta: float = 0.0) -> HessianReport:
    """H = beta^2 Theta blockdiag(dsigma(Z*)) + lambda_theta I on (M*K) space.

    H is similar to the symmetric beta^2 Theta^{1/2} D Theta^{1/2}, so the
    spectrum is computed from that form (real, nonnegative before the
    lambda shift).  The condition number drops eigenvalues below
    1e-14 * lambda_max.
    """
    values = kern.values if isinstance(kern, KernelTensor) else np.asarray(kern, dtype=np.float64)
    Z_star = np.asarray(Z_star, dtype=np.float64)
    M, K = Z_star.shape
    if values.shape != (M * K, M * K):
        raise ValueError("kernel and equilibrium logits are inconsistent")
    D = _blockdiag_dsoftmax(Z_star)
    H = beta * beta * (values @ D) + lambda_theta * np.eye(M * K)
    w, V = np.linalg.eigh(0.5 * (values + values.T))
    sqrt_vals = np.sqrt(np.clip(w, 0.0, None))
    root = (V * sqrt_vals) @ V.T
    sym = beta * beta * (root @ D @ root)
    eigs = np.linalg.eigvalsh(0.5 * (sym + sym.T)) + lambda_theta
    eigs = np.sort(eigs)[::-1]
    top = np.max(np.abs(eigs)) if eigs.size else 0.0
    nonzero = np.abs(eigs) > KAPPA_RCOND * top
    if top == 0.0 or not np.any(nonzero):
        cond = math.inf
    else:
        kept = np.abs(eigs[nonzero])
        cond = float(kept.max() / kept.min())
    return HessianReport(H, eigs, cond)
