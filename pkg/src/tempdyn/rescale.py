"""Continuous-time rescalings for SGD and heavy-ball momentum.

Canonical form: with tau = sqrt(alpha) t and nu = sqrt(alpha) v the momentum
equations become dnu/dtau = -lam nu - g, dtheta/dtau = nu with
lam = gamma / sqrt(alpha), indexed by the single parameter
T_mom = alpha / gamma^2 = 1 / lam^2.  (Fixing the nu coefficient to -1
instead gives an a = gamma rescaling; only the sqrt(alpha) form is exposed.)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EFFECTIVE_LR = "effective_lr"
STEP_INVARIANT = "step_invariant"
SCHEMES = (EFFECTIVE_LR, STEP_INVARIANT)

# "Much greater" cutoff for the fast/slow momentum classification.
FAST_REGIME_RATIO = 10.0


@dataclass(frozen=True)
class MomentumCanonical:
    """Canonical-form coefficients for one (alpha, gamma) pair."""

    a: float       # time scale factor, tau = a t
    b: float       # velocity scale factor, nu = b v
    lam: float     # canonical damping gamma / sqrt(alpha)
    t_mom: float   # alpha / gamma^2 = 1 / lam^2


def canonical_momentum(alpha: float, gamma: float) -> MomentumCanonical:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    root = math.sqrt(alpha)
    return MomentumCanonical(root, root, gamma / root, alpha / gamma ** 2)


@dataclass(frozen=True)
class SchemeParams:
    """Resolved hyperparameters for one beta under a rescaling scheme."""

    scheme: str
    beta: float
    base_rate: float    # eta_tilde (effective_lr) or alpha_hat (step_invariant)
    gamma_tilde: float
    alpha: float
    gamma: float
    tau_scale: float    # collapse-time unit: tau = tau_scale * t

    CSV_HEADER = ("scheme", "beta", "alpha", "gamma", "tau_scale")

    def row(self):
        return (self.scheme, self.beta, self.alpha, self.gamma, self.tau_scale)


def scheme_params(scheme: str, base_rate: float, gamma_tilde: float,
                  beta: float) -> SchemeParams:
    """Fill one of the two beta-parameterization schemes.

    effective_lr:   alpha = base / beta^2, gamma = sqrt(base) gamma_tilde,
                    tau = sqrt(base) t  (fixed-gamma_tilde curves collapse).
    step_invariant: alpha = base / beta, gamma = sqrt(beta base) gamma_tilde,
                    tau = sqrt(beta base) t  (single-step parameter change
                    independent of beta).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not (base_rate > 0 and beta > 0):
        raise ValueError("base rate and beta must be positive")
    if gamma_tilde < 0:
        raise ValueError("gamma_tilde must be nonnegative")
    if scheme == EFFECTIVE_LR:
        alpha = base_rate / beta ** 2
        gamma = math.sqrt(base_rate) * gamma_tilde
        tau_scale = math.sqrt(base_rate)
    else:
        alpha = base_rate / beta
        gamma = math.sqrt(beta * base_rate) * gamma_tilde
        tau_scale = math.sqrt(beta * base_rate)
    if gamma >= 1.0:
        raise ValueError(
            f"momentum {gamma:.4g} >= 1: the rescaled momentum parameter only "
            f"supports alpha < gamma_tilde^-2")
    return SchemeParams(scheme, beta, base_rate, gamma_tilde, alpha, gamma, tau_scale)


def early_momentum_expansion(g: np.ndarray, gamma_tilde: float, tau: float) -> np.ndarray:
    """Two-term early-time displacement -g tau^2 / 2 + gamma_tilde g tau^3 / 6.

    Assumes zero initial velocity and a constant gradient over the window;
    accurate to O(tau^4).
    """
    g = np.asarray(g, dtype=np.float64)
    return -0.5 * g * tau ** 2 + (gamma_tilde / 6.0) * g * tau ** 3


@dataclass(frozen=True)
class StepMagnitudes:
    """Order-of-magnitude single-step sizes, not exact step norms."""

    d_theta: float
    d_loss: float


def step_magnitudes(optimizer: str, alpha: float, beta: float, ell_z: float,
                    g_z: float, gamma: float = None,
                    gamma_tilde: float = None) -> StepMagnitudes:
    """Scaling laws for the parameter and loss change of a single step.

    SGD:      d_theta ~ alpha beta ell_z g_z,  d_loss ~ alpha beta^2 (ell_z g_z)^2
    momentum: d_theta ~ (sqrt(alpha) / gamma_tilde) beta ell_z g_z with
              gamma_tilde = gamma / sqrt(alpha); d_loss ~ beta ell_z g_z d_theta.
    """
    if not (alpha > 0 and beta > 0 and ell_z > 0 and g_z > 0):
        raise ValueError("scales must be positive")
    grad = beta * ell_z * g_z
    if optimizer == "sgd":
        return StepMagnitudes(alpha * grad, alpha * grad ** 2)
    if optimizer != "momentum":
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if gamma_tilde is None:
        if gamma is None:
            raise ValueError("momentum needs gamma or gamma_tilde")
        gamma_tilde = gamma / math.sqrt(alpha)
    if not gamma_tilde > 0:
        raise ValueError("gamma_tilde must be positive")
    d_theta = math.sqrt(alpha) / gamma_tilde * grad
    return StepMagnitudes(d_theta, grad * d_theta)


@dataclass(frozen=True)
class RegimeReport:
    """Fast-vs-slow classification of a momentum configuration."""

    tau_c: float     # canonical time for an appreciable gradient change
    ratio: float     # (gamma^2 / alpha) / (||g|| / ||theta||)
    regime: str      # "fast" (SGD-like at rate alpha / gamma) or "slow"


def momentum_regime(alpha: float, gamma: float, grad_norm: float,
                    param_norm: float, c: float = 0.1) -> RegimeReport:
    """Compare the canonical damping against the gradient's own timescale.

    The gradient changes appreciably once parameters move by c * ||theta||,
    i.e. after tau_c = c lam ||theta|| / ||g||.  The velocity tracks the
    instantaneous gradient (fast regime) when gamma^2 / alpha exceeds
    ||g|| / ||theta|| by FAST_REGIME_RATIO.
    """
    if not (alpha > 0 and 0.0 < gamma < 1.0):
        raise ValueError("need alpha > 0 and gamma in (0, 1)")
    if not (grad_norm > 0 and param_norm > 0):
        raise ValueError("norms must be positive")
    lam = gamma / math.sqrt(alpha)
    tau_c = c * lam * param_norm / grad_norm
    ratio = (gamma ** 2 / alpha) / (grad_norm / param_norm)
    return RegimeReport(tau_c, ratio, "fast" if ratio >= FAST_REGIME_RATIO else "slow")
