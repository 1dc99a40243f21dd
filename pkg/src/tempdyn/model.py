"""Small fully-connected classifiers with exact parameter Jacobians.

Parameters live in a single flat float64 vector with a deterministic
layer layout (weight matrix then bias, layer by layer).  Networks use the
NTK parameterization: weights and biases are drawn i.i.d. N(0, 1) and the
forward pass rescales each affine layer by weight_scale / sqrt(fan_in)
(biases by bias_scale), so changing a width does not change the
initialization statistics.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

ACTIVATIONS = ("relu", "erf")

# Stream id for draws that must not perturb the base parameter stream.
_INDEP_STREAM = 0x1D


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a fully-connected classifier."""

    input_dim: int
    hidden_widths: tuple
    num_classes: int
    activation: str = "relu"
    weight_scale: float = 1.0
    bias_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.weight_scale > 0:
            raise ValueError("weight_scale must be positive")
        if self.bias_scale < 0:
            raise ValueError("bias_scale must be nonnegative")

    @property
    def layer_dims(self) -> list:
        return [self.input_dim, *self.hidden_widths, self.num_classes]

    @property
    def num_layers(self) -> int:
        return len(self.hidden_widths) + 1

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "num_classes": self.num_classes,
            "activation": self.activation,
            "weight_scale": self.weight_scale,
            "bias_scale": self.bias_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(d["hidden_widths"]),
            num_classes=int(d["num_classes"]),
            activation=d.get("activation", "relu"),
            weight_scale=float(d.get("weight_scale", 1.0)),
            bias_scale=float(d.get("bias_scale", 0.0)),
        )


def layer_slices(spec: NetworkSpec) -> list:
    """Deterministic layout: list of (weight_slice, weight_shape, bias_slice)."""
    out = []
    offset = 0
    dims = spec.layer_dims
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        w = slice(offset, offset + n_out * n_in)
        offset += n_out * n_in
        b = slice(offset, offset + n_out)
        offset += n_out
        out.append((w, (n_out, n_in), b))
    return out


def param_count(spec: NetworkSpec) -> int:
    dims = spec.layer_dims
    return sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))


def unpack(spec: NetworkSpec, theta: np.ndarray) -> list:
    """Split a flat parameter vector into [(W, b), ...] views."""
    theta = np.asarray(theta)
    if theta.shape != (param_count(spec),):
        raise ValueError(f"expected {param_count(spec)} parameters, got {theta.shape}")
    return [
        (theta[w].reshape(shape), theta[b])
        for w, shape, b in layer_slices(spec)
    ]


def pack(spec: NetworkSpec, layers: list) -> np.ndarray:
    """Inverse of unpack; exact round-trip."""
    theta = np.empty(param_count(spec), dtype=np.float64)
    for (w, shape, b), (W, bias) in zip(layer_slices(spec), layers):
        if W.shape != shape or bias.shape != (shape[0],):
            raise ValueError("layer shape mismatch")
        theta[w] = np.asarray(W, dtype=np.float64).ravel()
        theta[b] = bias
    return theta


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    # Philox is counter-based: seed (+ stream id) fully determines the draws.
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """I.i.d. standard normal parameters; same (spec, seed) gives identical bits."""
    return _rng(seed).standard_normal(param_count(spec))


def _act(spec: NetworkSpec, a: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(a, 0.0)
    return _erf(a)


def _act_grad(spec: NetworkSpec, a: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return (a > 0).astype(np.float64)
    return (2.0 / math.sqrt(math.pi)) * np.exp(-a * a)


def forward_cache(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray):
    """Forward pass keeping layer inputs and pre-activations for backprop.

    Returns (inputs, preacts) where inputs[l] feeds affine layer l and
    preacts[l] is its pre-activation; the logits are preacts[-1].
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"expected inputs of shape (M, {spec.input_dim}), got {X.shape}")
    layers = unpack(spec, theta)
    inputs, preacts = [X], []
    h = X
    for l, (W, b) in enumerate(layers):
        scale = spec.weight_scale / math.sqrt(W.shape[1])
        a = scale * (h @ W.T) + spec.bias_scale * b
        preacts.append(a)
        if l < len(layers) - 1:
            h = _act(spec, a)
            inputs.append(h)
    return inputs, preacts


def forward(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Logits z(X) of shape (M, num_classes)."""
    _, preacts = forward_cache(spec, theta, X)
    return preacts[-1]


def jacobian(spec: NetworkSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Exact (num_classes, P) Jacobian dz/dtheta at a single input x.

    Reverse accumulation: one backward sweep seeded with the K unit
    output directions.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("jacobian expects a single input vector")
    inputs, preacts = forward_cache(spec, theta, x[None, :])
    layers = unpack(spec, theta)
    K = spec.num_classes
    J = np.zeros((K, param_count(spec)))
    # G[k, :] = dz_k / d(preact of current layer)
    G = np.eye(K)
    slices = layer_slices(spec)
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        scale = spec.weight_scale / math.sqrt(W.shape[1])
        h_in = inputs[l][0]
        wsl, wshape, bsl = slices[l]
        J[:, wsl] = (scale * G[:, :, None] * h_in[None, None, :]).reshape(K, -1)
        J[:, bsl] = spec.bias_scale * G
        if l > 0:
            G = (G @ W) * scale * _act_grad(spec, preacts[l - 1][0])[None, :]
    return J


def vjp(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray, R: np.ndarray,
        cache=None) -> np.ndarray:
    """sum_{m,k} R[m,k] * dz[m,k]/dtheta as a flat vector (one backward pass)."""
    if cache is None:
        cache = forward_cache(spec, theta, X)
    inputs, preacts = cache
    layers = unpack(spec, theta)
    R = np.asarray(R, dtype=np.float64)
    if R.shape != preacts[-1].shape:
        raise ValueError("seed matrix shape mismatch")
    g = np.zeros(param_count(spec))
    G = R
    slices = layer_slices(spec)
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        scale = spec.weight_scale / math.sqrt(W.shape[1])
        wsl, _, bsl = slices[l]
        g[wsl] = (scale * (G.T @ inputs[l])).ravel()
        g[bsl] = spec.bias_scale * G.sum(axis=0)
        if l > 0:
            G = (G @ W) * scale * _act_grad(spec, preacts[l - 1])
    return g


def backprop_features(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray):
    """Per-layer factors of the parameter Jacobian, for kernel assembly.

    Returns a list over affine layers of (G, h_in, scale) where
    G[m, k, :] = dz[m, k] / d(preact_l[m, :]) and h_in[m, :] is the layer
    input, so the layer's Jacobian block is scale * G (outer) h_in.
    """
    inputs, preacts = forward_cache(spec, theta, X)
    layers = unpack(spec, theta)
    M = X.shape[0]
    K = spec.num_classes
    out = [None] * len(layers)
    G = np.broadcast_to(np.eye(K), (M, K, K)).copy()
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        scale = spec.weight_scale / math.sqrt(W.shape[1])
        out[l] = (G, inputs[l], scale)
        if l > 0:
            G = np.einsum("mki,ij->mkj", G, W) * scale
            G = G * _act_grad(spec, preacts[l - 1])[:, None, :]
    return out


def scale_logits(z: np.ndarray, beta: float) -> np.ndarray:
    """Rescaled logits Z = beta * z (the actual softmax inputs)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    return beta * np.asarray(z, dtype=np.float64)


class MLPModel:
    """Trainable wrapper around (spec, theta) used by the dynamics module."""

    def __init__(self, spec: NetworkSpec, theta: np.ndarray):
        self.spec = spec
        self.theta = np.asarray(theta, dtype=np.float64).copy()

    @classmethod
    def init(cls, spec: NetworkSpec, seed: int) -> "MLPModel":
        return cls(spec, init_params(spec, seed))

    def z(self, X: np.ndarray) -> np.ndarray:
        return forward(self.spec, self.theta, X)

    def forward_cache(self, X: np.ndarray):
        return forward_cache(self.spec, self.theta, X)

    def logits_from_cache(self, cache) -> np.ndarray:
        return cache[1][-1]

    def vjp(self, X: np.ndarray, R: np.ndarray, cache=None) -> np.ndarray:
        return vjp(self.spec, self.theta, X, R, cache=cache)

    def kernel(self, X1: np.ndarray, X2=None):
        from . import kernel as _kernel

        return _kernel.empirical_ntk(self.spec, self.theta, X1, X2)

    def copy(self) -> "MLPModel":
        return MLPModel(self.spec, self.theta)

    def with_theta(self, theta: np.ndarray) -> "MLPModel":
        return MLPModel(self.spec, theta)


class CorrelatedModel:
    """Two-branch output construction that decouples ||Z0|| from the kernel.

    The combined logits are (f(params1) + f(params2)) / sqrt(2) where both
    branches share body parameters at init and the second branch's output
    layer is c * (branch 1 output layer) + sqrt(1 - c^2) * (fresh draw).
    Only branch 1 is trainable, so the tangent kernel never depends on c,
    while E||Z0||_F^2 = beta^2 (1 + c) ||z0||_F^2 with z0 the branch-1
    (base model) logits.
    """

    trainable_branch = 1

    def __init__(self, spec: NetworkSpec, params1: np.ndarray, params2: np.ndarray, c: float):
        self.spec = spec
        self.params1 = np.asarray(params1, dtype=np.float64).copy()
        self.params2 = np.asarray(params2, dtype=np.float64).copy()
        self.c = float(c)

    @property
    def theta(self) -> np.ndarray:
        return self.params1

    @theta.setter
    def theta(self, value: np.ndarray):
        self.params1 = np.asarray(value, dtype=np.float64)

    def z(self, X: np.ndarray) -> np.ndarray:
        z1 = forward(self.spec, self.params1, X)
        z2 = forward(self.spec, self.params2, X)
        return (z1 + z2) / math.sqrt(2.0)

    def base_logits(self, X: np.ndarray) -> np.ndarray:
        """Single-branch logits z0 entering the ||Z0|| norm law."""
        return forward(self.spec, self.params1, X)

    def forward_cache(self, X: np.ndarray):
        cache1 = forward_cache(self.spec, self.params1, X)
        z2 = forward(self.spec, self.params2, X)
        return (cache1, z2)

    def logits_from_cache(self, cache) -> np.ndarray:
        cache1, z2 = cache
        return (cache1[1][-1] + z2) / math.sqrt(2.0)

    def vjp(self, X: np.ndarray, R: np.ndarray, cache=None) -> np.ndarray:
        cache1 = cache[0] if cache is not None else None
        return vjp(self.spec, self.params1, X, R, cache=cache1) / math.sqrt(2.0)

    def kernel(self, X1: np.ndarray, X2=None):
        from . import kernel as _kernel

        kern = _kernel.empirical_ntk(self.spec, self.params1, X1, X2)
        kern.values *= 0.5
        return kern

    def copy(self) -> "CorrelatedModel":
        return CorrelatedModel(self.spec, self.params1, self.params2, self.c)

    def with_theta(self, theta: np.ndarray) -> "CorrelatedModel":
        return CorrelatedModel(self.spec, theta, self.params2, self.c)


def correlated_init(spec: NetworkSpec, seed: int, c: float) -> CorrelatedModel:
    """Build a CorrelatedModel with output-weight correlation c in [-1, 1].

    Branch 1 equals init_params(spec, seed) exactly; the independent part of
    branch 2's output layer comes from a separate counter stream, so branch 1
    (and hence the kernel) is bit-identical for every c.
    """
    if abs(c) > 1:
        raise ValueError("correlation must lie in [-1, 1]")
    p1 = init_params(spec, seed)
    p2 = p1.copy()
    wsl, wshape, bsl = layer_slices(spec)[-1]
    indep = _rng(seed, _INDEP_STREAM).standard_normal(wshape[0] * wshape[1] + wshape[0])
    mix = math.sqrt(1.0 - c * c)
    p2[wsl] = c * p1[wsl] + mix * indep[: wshape[0] * wshape[1]]
    p2[bsl] = c * p1[bsl] + mix * indep[wshape[0] * wshape[1]:]
    return CorrelatedModel(spec, p1, p2, c)


def correlation_for_z0_target(beta: float, z0_norm: float, target: float):
    """Correlation c hitting E||Z0||_F = target given beta and ||z0||_F.

    Returns None when the target exceeds the sqrt(2) * beta * ||z0||_F
    ceiling (c would need to exceed 1).
    """
    if target < 0:
        raise ValueError("target must be nonnegative")
    if z0_norm <= 0 or beta <= 0:
        raise ValueError("need positive beta and base norm")
    c = (target / (beta * z0_norm)) ** 2 - 1.0
    if c > 1.0:
        return None
    return max(c, -1.0)
