"""Early-learning and nonlinearity timescales plus empirical collapse metrics.

Timescales are reported in effective-learning-rate time units (eta_tilde * t)
by default, with raw-time equivalents alongside; comparisons across beta are
only meaningful in the rescaled units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SaturatedModelError, Trajectory
from .kernel import KernelTensor
from .loss import residual

DEFAULT_DEVIATION_TOL = 0.05

# Kernel directional derivative: relative step and Richardson acceptance.
TAU_NL_EPS_SCALE = 1e-4
TAU_NL_RICHARDSON_TOL = 0.05
TAU_NL_NOISE_FLOOR = 1e-10


def effective_lr(alpha: float, beta: float) -> float:
    """eta_tilde = alpha * beta^2, the time unit with no explicit beta."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    return alpha * beta ** 2


def tau_z(kern: KernelTensor, Z0: np.ndarray, Y: np.ndarray, eta_tilde: float) -> float:
    """Raw-time early-learning timescale.

    (1 / eta_tilde) * ||Z0||_F / ||Theta (Y - sigma(Z0))||_F, the time for
    logits to move by order of their initial magnitude.
    """
    if not eta_tilde > 0:
        raise ValueError("eta_tilde must be positive")
    Z0 = np.asarray(Z0, dtype=np.float64)
    drive = kern.apply(residual(Z0, Y))
    denom = float(np.linalg.norm(drive))
    if denom == 0.0:
        raise SaturatedModelError("kernel gradient is exactly zero")
    return float(np.linalg.norm(Z0)) / (eta_tilde * denom)


@dataclass
class TauNL:
    """Nonlinear timescale with finite-difference diagnostics."""

    value: float            # in eta_tilde time units (inf for constant kernels)
    raw: float
    richardson_change: float
    below_noise: bool


def _kernel_drive_rate(model, X, R, theta_dot, eps):
    plus = model.with_theta(model.theta + eps * theta_dot).kernel(X)
    minus = model.with_theta(model.theta - eps * theta_dot).kernel(X)
    return (plus.values - minus.values) / (2.0 * eps), plus.values


def tau_nl(model, data, beta: float, eta_tilde: float,
           eps_scale: float = TAU_NL_EPS_SCALE) -> TauNL:
    """Time for kernel motion to contribute appreciably to the dynamics.

    Zdot = eta_tilde Theta R at t = 0; the nonlinear part of Zddot contracts
    the kernel's directional derivative along the instantaneous parameter
    velocity with the residual.  The directional derivative uses symmetric
    finite differences with step eps = eps_scale * ||theta|| / ||theta_dot||
    and a Richardson check at eps / 2.
    """
    X, Y = data.x_train, data.y_train
    Z0 = beta * model.z(X)
    R = residual(Z0, Y)
    kern = model.kernel(X)
    z_dot = eta_tilde * kern.apply(R)
    theta_dot = (eta_tilde / beta) * model.vjp(X, R)
    v_norm = float(np.linalg.norm(theta_dot))
    if v_norm == 0.0:
        return TauNL(math.inf, math.inf, 0.0, True)
    eps = eps_scale * float(np.linalg.norm(model.theta)) / v_norm

    rates = []
    for step in (eps, eps / 2.0):
        rate, ref = _kernel_drive_rate(model, X, R, theta_dot, step)
        z_ddot = eta_tilde * (rate @ R.reshape(-1))
        rates.append(float(np.linalg.norm(z_ddot)))
    noise = TAU_NL_NOISE_FLOOR * float(np.linalg.norm(ref)) * float(np.linalg.norm(R)) * eta_tilde
    if rates[1] <= noise:
        return TauNL(math.inf, math.inf, 0.0, True)
    change = abs(rates[0] - rates[1]) / rates[1]
    raw = float(np.linalg.norm(z_dot)) / rates[1]
    return TauNL(eta_tilde * raw, raw, change, False)


def _common_grid(times_list, rel_tol=1e-9):
    base = np.asarray(times_list[0], dtype=np.float64)
    scale = max(float(np.max(np.abs(base))), 1e-300)
    for other in times_list[1:]:
        other = np.asarray(other, dtype=np.float64)
        if other.shape != base.shape or np.max(np.abs(other - base)) > rel_tol * scale:
            raise ValueError("trajectories do not share a recording grid")
    return base


def deviation_time(nonlinear: Trajectory, linearized: Trajectory,
                   tol: float = DEFAULT_DEVIATION_TOL):
    """First recorded eta_tilde * t where the runs differ by more than tol.

    Relative Frobenius distance of logit snapshots; None when the threshold
    is never crossed.
    """
    n = min(len(nonlinear), len(linearized))
    grid = _common_grid([nonlinear.eta_times[:n], linearized.eta_times[:n]])
    for i in range(n):
        ref = float(np.linalg.norm(linearized.snapshots[i]))
        diff = float(np.linalg.norm(nonlinear.snapshots[i] - linearized.snapshots[i]))
        rel = 0.0 if diff == 0.0 else (math.inf if ref == 0.0 else diff / ref)
        if rel > tol:
            return float(grid[i])
    return None


def collapse_metric(trajectories, t_cut: float, field: str = "loss",
                    times_list=None) -> float:
    """Maximum relative spread of a trajectory field over a shared grid.

    Spread at each grid point is (max - min) / |mean| across trajectories;
    the metric is the maximum over recorded times strictly below t_cut.
    Grids default to eta_times and must agree across trajectories.
    """
    if len(trajectories) < 2:
        raise ValueError("need at least two trajectories")
    if times_list is None:
        times_list = [t.eta_times for t in trajectories]
    n = min(min(len(t) for t in trajectories), min(len(ts) for ts in times_list))
    grid = _common_grid([np.asarray(ts)[:n] for ts in times_list])
    mask = grid < t_cut
    if not np.any(mask):
        raise ValueError("no recorded times below t_cut")
    values = np.stack([np.asarray(getattr(t, field))[:n][mask] for t in trajectories])
    spread = values.max(axis=0) - values.min(axis=0)
    center = np.abs(values.mean(axis=0))
    rel = spread / np.maximum(center, 1e-300)
    return float(rel.max())


@dataclass
class TimescaleReport:
    """Both timescales for one (beta, ||Z0||) configuration."""

    beta: float
    eta_tilde: float
    z0_norm: float
    tau_z: float        # eta_tilde units
    tau_nl: float       # eta_tilde units (may be inf)
    tau_z_raw: float
    tau_nl_raw: float
    tau_nl_below_noise: bool = False

    CSV_HEADER = ("beta", "z0_norm", "eta_tilde", "tau_z", "tau_nl",
                  "tau_z_raw", "tau_nl_raw")

    def row(self):
        return (self.beta, self.z0_norm, self.eta_tilde, self.tau_z,
                self.tau_nl, self.tau_z_raw, self.tau_nl_raw)


def timescale_report(model, data, beta: float, eta_tilde: float) -> TimescaleReport:
    """Evaluate tau_z and tau_nl for a model at initialization."""
    X, Y = data.x_train, data.y_train
    Z0 = beta * model.z(X)
    kern = model.kernel(X)
    z0_norm = float(np.linalg.norm(Z0))
    if z0_norm == 0.0:
        tz_raw = 0.0
    else:
        tz_raw = tau_z(kern, Z0, Y, eta_tilde)
    tnl = tau_nl(model, data, beta, eta_tilde)
    return TimescaleReport(
        beta=beta,
        eta_tilde=eta_tilde,
        z0_norm=z0_norm,
        tau_z=eta_tilde * tz_raw,
        tau_nl=tnl.value,
        tau_z_raw=tz_raw,
        tau_nl_raw=tnl.raw,
        tau_nl_below_noise=tnl.below_noise,
    )
