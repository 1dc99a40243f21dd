"""Empirical and infinite-width tangent kernels over small datasets.

Kernels are stored dense as (M1*K) x (M2*K) matrices with example-major
flattening: row index m*K + k.  A class-block-diagonal kernel additionally
keeps its M x M spatial block for fast application.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as _model

DENSE = "dense"
BLOCK_DIAGONAL = "block_diagonal_in_classes"

# Desk-scale guard: (M*K)^2 dense storage.
MAX_TRAIN_POINTS = 512

PINV_RCOND = 1e-12


@dataclass
class KernelTensor:
    """Dense tangent kernel between two input sets (possibly the same)."""

    values: np.ndarray
    m1: int
    m2: int
    k: int
    structure: str = DENSE
    x_block: np.ndarray = None

    def __post_init__(self):
        expected = (self.m1 * self.k, self.m2 * self.k)
        if self.values.shape != expected:
            raise ValueError(f"kernel shape {self.values.shape} != {expected}")
        if self.structure not in (DENSE, BLOCK_DIAGONAL):
            raise ValueError(f"unknown kernel structure {self.structure!r}")

    @property
    def is_square(self) -> bool:
        return self.m1 == self.m2

    def apply(self, R: np.ndarray) -> np.ndarray:
        """Contract over training examples and classes: sum_j K_ij R_j."""
        R = np.asarray(R, dtype=np.float64)
        if R.shape != (self.m2, self.k):
            raise ValueError(f"expected residual of shape ({self.m2}, {self.k})")
        if self.structure == BLOCK_DIAGONAL and self.x_block is not None:
            return self.x_block @ R
        return (self.values @ R.reshape(-1)).reshape(self.m1, self.k)

    def transpose(self) -> "KernelTensor":
        return KernelTensor(self.values.T.copy(), self.m2, self.m1, self.k,
                            self.structure,
                            None if self.x_block is None else self.x_block.T.copy())


def empirical_ntk(spec, theta: np.ndarray, X1: np.ndarray, X2=None) -> KernelTensor:
    """Gram matrix of logit-parameter Jacobians, assembled layer by layer.

    Each affine layer contributes (G1 G2^T) * (scale^2 h1 h2^T + bias^2),
    which equals the corresponding block of J1 J2^T without materializing
    the Jacobians.  Symmetrized when X2 is omitted (same inputs).
    """
    X1 = np.asarray(X1, dtype=np.float64)
    same = X2 is None
    X2a = X1 if same else np.asarray(X2, dtype=np.float64)
    if max(X1.shape[0], X2a.shape[0]) > MAX_TRAIN_POINTS:
        raise ValueError(f"kernel capped at {MAX_TRAIN_POINTS} points per side")
    K = spec.num_classes
    f1 = _model.backprop_features(spec, theta, X1)
    f2 = f1 if same else _model.backprop_features(spec, theta, X2a)
    m1, m2 = X1.shape[0], X2a.shape[0]
    values = np.zeros((m1 * K, m2 * K))
    for (G1, h1, scale), (G2, h2, _) in zip(f1, f2):
        S = G1.reshape(m1 * K, -1) @ G2.reshape(m2 * K, -1).T
        B = scale * scale * (h1 @ h2.T)
        B = np.repeat(np.repeat(B, K, axis=0), K, axis=1)
        values += S * (B + spec.bias_scale ** 2)
    if same:
        values = 0.5 * (values + values.T)
    return KernelTensor(values, m1, m2, K)


def _pair_stats(activation, v1, v2, k12):
    """One layer of the infinite-width recursion: E[phi phi'] and E[phi' phi']."""
    if activation == "relu":
        norm = np.sqrt(np.outer(v1, v2))
        cos = np.divide(k12, norm, out=np.zeros_like(k12), where=norm > 0)
        cos = np.clip(cos, -1.0, 1.0)
        ang = np.arccos(cos)
        t = norm / (2.0 * math.pi) * (np.sin(ang) + (math.pi - ang) * cos)
        td = (math.pi - ang) / (2.0 * math.pi)
        return t, td
    # erf: closed-form Gaussian integrals
    denom = np.sqrt(np.outer(1.0 + 2.0 * v1, 1.0 + 2.0 * v2))
    t = (2.0 / math.pi) * np.arcsin(np.clip(2.0 * k12 / denom, -1.0, 1.0))
    td = (4.0 / math.pi) / np.sqrt(np.maximum(denom ** 2 - 4.0 * k12 ** 2, 1e-300))
    return t, td


def _self_stats(activation, v):
    if activation == "relu":
        return v / 2.0
    return (2.0 / math.pi) * np.arcsin(np.clip(2.0 * v / (1.0 + 2.0 * v), -1.0, 1.0))


def analytic_ntk_fc(spec, X1: np.ndarray, X2=None) -> KernelTensor:
    """Infinite-width NTK of the fully-connected spec, Id_K (x) Theta_x.

    Uses the standard layerwise recursion with the arc-cosine kernel for
    relu and the closed form for erf, matching the NTK parameterization of
    the finite models (weight_scale / sqrt(fan_in) forward scaling).
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2a = X1 if X2 is None else np.asarray(X2, dtype=np.float64)
    sw2 = spec.weight_scale ** 2
    sb2 = spec.bias_scale ** 2
    n = spec.input_dim
    k12 = sw2 * (X1 @ X2a.T) / n + sb2
    v1 = sw2 * np.einsum("ij,ij->i", X1, X1) / n + sb2
    v2 = sw2 * np.einsum("ij,ij->i", X2a, X2a) / n + sb2
    theta = k12.copy()
    for _ in spec.hidden_widths:
        t, td = _pair_stats(spec.activation, v1, v2, k12)
        new_k12 = sw2 * t + sb2
        theta = new_k12 + sw2 * td * theta
        k12 = new_k12
        v1 = sw2 * _self_stats(spec.activation, v1) + sb2
        v2 = sw2 * _self_stats(spec.activation, v2) + sb2
    K = spec.num_classes
    values = np.kron(theta, np.eye(K))
    return KernelTensor(values, X1.shape[0], X2a.shape[0], K,
                        structure=BLOCK_DIAGONAL, x_block=theta)


def block_diagonal_kernel(theta_x: np.ndarray, num_classes: int) -> KernelTensor:
    """Wrap an M x M spatial block as Id_K (x) Theta_x."""
    theta_x = np.asarray(theta_x, dtype=np.float64)
    m = theta_x.shape[0]
    if theta_x.shape != (m, m):
        raise ValueError("spatial block must be square")
    return KernelTensor(np.kron(theta_x, np.eye(num_classes)), m, m, num_classes,
                        structure=BLOCK_DIAGONAL, x_block=theta_x)


def kernel_apply(kern: KernelTensor, R: np.ndarray) -> np.ndarray:
    return kern.apply(R)


def pinv_psd(values: np.ndarray, rcond: float = PINV_RCOND) -> np.ndarray:
    """Eigendecomposition pseudo-inverse of a symmetric PSD matrix."""
    w, V = np.linalg.eigh(0.5 * (values + values.T))
    cutoff = rcond * np.max(np.abs(w)) if w.size else 0.0
    inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    return (V * inv) @ V.T


def transfer_to_test(kern_xX: KernelTensor, kern_XX: KernelTensor,
                     dZ_train: np.ndarray) -> np.ndarray:
    """Map a training-set logit change to test points through the kernel.

    delta_z(x) = Theta(x, X) Theta^+(X, X) delta_Z(X) with an
    eigendecomposition-based pseudo-inverse (relative cutoff 1e-12).
    """
    if not kern_XX.is_square:
        raise ValueError("training kernel must be square")
    if kern_xX.m2 != kern_XX.m1 or kern_xX.k != kern_XX.k:
        raise ValueError("kernel shapes are inconsistent")
    dZ_train = np.asarray(dZ_train, dtype=np.float64)
    flat = pinv_psd(kern_XX.values) @ dZ_train.reshape(-1)
    return (kern_xX.values @ flat).reshape(kern_xX.m1, kern_xX.k)
