"""Parameter-space training (SGD, momentum) and function-space flows.

All dynamics follow the summed-over-examples convention of the update
equations: one SGD step is theta <- theta + alpha * beta * J^T (Y - sigma(Z)),
and the linearized flow is dZ/dt = eta_tilde * Theta (Y - sigma(Z)).  The
loss recorded on trajectories is the per-example mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .kernel import KernelTensor, block_diagonal_kernel
from .loss import accuracy, residual, softmax, xent_loss

DIVERGENCE_NORM = 1e6

MODES = ("nonlinear", "linearized", "regularized_linearized")
INTEGRATORS = ("discrete_steps", "rk4_flow")

FLOW_RTOL = 1e-8
FLOW_ATOL = 1e-12


class IntegrationError(RuntimeError):
    """Adaptive integrator failed (step-size underflow or solver error)."""


class SaturatedModelError(ValueError):
    """Residual is exactly zero, so the early-learning timescale is undefined."""


class FixedPointError(RuntimeError):
    """Self-consistent fixed-point iteration did not converge."""


@dataclass
class TrainConfig:
    """Run description shared by all dynamics entry points.

    Exactly one of alpha / eta_tilde is given; the other is derived through
    eta_tilde = alpha * beta^2.  horizon counts steps for discrete
    integrators and raw continuous time for flows.
    """

    beta: float
    alpha: float = None
    eta_tilde: float = None
    momentum: float = 0.0
    lambda_theta: float = 0.0
    mode: str = "nonlinear"
    integrator: str = "discrete_steps"
    horizon: float = 100
    record_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if (self.alpha is None) == (self.eta_tilde is None):
            raise ValueError("give exactly one of alpha / eta_tilde")
        if self.alpha is None:
            self.alpha = self.eta_tilde / self.beta ** 2
        else:
            self.eta_tilde = self.alpha * self.beta ** 2
        if not self.alpha > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lambda_theta < 0:
            raise ValueError("regularizer must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class Trajectory:
    """Time-indexed record of one dynamics run.

    times are raw t; eta_times = eta_tilde * t.  snapshots holds the
    rescaled logits Z at each recorded time.  test-set metrics are NaN for
    function-space runs without a test surface.
    """

    times: np.ndarray
    eta_times: np.ndarray
    loss: np.ndarray
    train_acc: np.ndarray
    test_acc: np.ndarray
    z_norm: np.ndarray
    snapshots: np.ndarray
    diverged: bool = False
    diverged_step: int = None
    model: object = None

    def __len__(self):
        return len(self.times)

    def rows(self):
        """CSV rows: step,t,eta_t,loss,train_acc,test_acc,z_norm,diverged."""
        for i in range(len(self.times)):
            yield (i, self.times[i], self.eta_times[i], self.loss[i],
                   self.train_acc[i], self.test_acc[i], self.z_norm[i],
                   int(self.diverged))


class _Recorder:
    def __init__(self, eta_tilde):
        self.eta_tilde = eta_tilde
        self.times, self.loss, self.tr_acc, self.te_acc = [], [], [], []
        self.z_norm, self.snaps = [], []

    def add(self, t, Z, Y, Z_test=None, Y_test=None):
        self.times.append(float(t))
        self.loss.append(xent_loss(Z, Y))
        self.tr_acc.append(accuracy(Z, Y))
        if Z_test is None:
            self.te_acc.append(math.nan)
        else:
            self.te_acc.append(accuracy(Z_test, Y_test))
        self.z_norm.append(float(np.linalg.norm(Z)))
        self.snaps.append(np.array(Z, dtype=np.float64))

    def build(self, diverged=False, diverged_step=None, model=None) -> Trajectory:
        times = np.asarray(self.times)
        return Trajectory(
            times=times,
            eta_times=self.eta_tilde * times,
            loss=np.asarray(self.loss),
            train_acc=np.asarray(self.tr_acc),
            test_acc=np.asarray(self.te_acc),
            z_norm=np.asarray(self.z_norm),
            snapshots=np.asarray(self.snaps),
            diverged=diverged,
            diverged_step=diverged_step,
            model=model,
        )


def _is_divergent(Z) -> bool:
    return not np.all(np.isfinite(Z)) or np.linalg.norm(Z) > DIVERGENCE_NORM


def _test_arrays(data):
    if data is None:
        return None, None
    x_test = getattr(data, "x_test", None)
    y_test = getattr(data, "y_test", None)
    if x_test is None or len(x_test) == 0:
        return None, None
    return x_test, y_test


def _discrete_train(model, data, config: TrainConfig, use_momentum: bool) -> Trajectory:
    model = model.copy()
    X, Y = data.x_train, data.y_train
    x_test, y_test = _test_arrays(data)
    beta, alpha, gamma = config.beta, config.alpha, config.momentum
    steps = int(config.horizon)
    rec = _Recorder(config.eta_tilde)
    velocity = np.zeros_like(model.theta) if use_momentum else None
    diverged = False
    diverged_step = None
    for step in range(steps + 1):
        cache = model.forward_cache(X)
        Z = beta * model.logits_from_cache(cache)
        record = step % config.record_every == 0 or step == steps
        if _is_divergent(Z):
            diverged = True
            diverged_step = step
            break
        if record:
            Z_test = None if x_test is None else beta * model.z(x_test)
            rec.add(step, Z, Y, Z_test, y_test)
        if step == steps:
            break
        R = residual(Z, Y)
        direction = model.vjp(X, R, cache=cache)
        if use_momentum:
            # v <- (1 - gamma) v - g with g the summed NLL gradient (-beta J^T R)
            velocity = (1.0 - gamma) * velocity + beta * direction
            model.theta = model.theta + alpha * velocity
        else:
            model.theta = model.theta + alpha * beta * direction
    return rec.build(diverged, diverged_step, model)


def sgd_train(model, data, config: TrainConfig) -> Trajectory:
    """Full-batch discrete SGD on the rescaled cross-entropy objective."""
    if config.momentum != 0.0:
        raise ValueError("sgd_train requires momentum = 0")
    return _discrete_train(model, data, config, use_momentum=False)


def momentum_train(model, data, config: TrainConfig) -> Trajectory:
    """Heavy-ball recursion v <- (1-gamma) v - g, theta <- theta + alpha v."""
    if not 0.0 < config.momentum < 1.0:
        raise ValueError("momentum_train requires momentum in (0, 1)")
    return _discrete_train(model, data, config, use_momentum=True)


def gradient_flow_train(model, data, config: TrainConfig, record_times=None,
                        rtol: float = FLOW_RTOL) -> Trajectory:
    """Continuous-time limit of SGD: dtheta/dt = alpha beta J^T (Y - sigma)."""
    if config.momentum != 0.0:
        raise ValueError("parameter flow implemented for plain SGD only")
    model = model.copy()
    X, Y = data.x_train, data.y_train
    x_test, y_test = _test_arrays(data)
    beta, alpha = config.beta, config.alpha

    def rhs(t, theta):
        m = model.with_theta(theta)
        cache = m.forward_cache(X)
        Z = beta * m.logits_from_cache(cache)
        return alpha * beta * m.vjp(X, residual(Z, Y), cache=cache)

    t_grid = _record_grid(config) if record_times is None else \
        np.asarray(record_times, dtype=np.float64)
    sol = solve_ivp(rhs, (0.0, float(config.horizon)), model.theta,
                    t_eval=t_grid, rtol=rtol, atol=FLOW_ATOL, method="RK45")
    if not sol.success:
        raise IntegrationError(sol.message)
    rec = _Recorder(config.eta_tilde)
    for t, theta in zip(sol.t, sol.y.T):
        m = model.with_theta(theta)
        Z = beta * m.z(X)
        Z_test = None if x_test is None else beta * m.z(x_test)
        rec.add(t, Z, Y, Z_test, y_test)
    model.theta = sol.y[:, -1]
    return rec.build(model=model)


def _record_grid(config: TrainConfig) -> np.ndarray:
    horizon = float(config.horizon)
    n = max(int(round(horizon / config.record_every)), 1)
    return np.linspace(0.0, horizon, n + 1)


def linearized_flow(kern: KernelTensor, Z0: np.ndarray, Y: np.ndarray,
                    eta_tilde: float, horizon: float,
                    integrator: str = "rk4_flow", record_every: int = 1,
                    record_times=None, rtol: float = FLOW_RTOL) -> Trajectory:
    """Frozen-kernel dynamics dZ/dt = eta_tilde Theta (Y - sigma(Z)).

    Integrated in s = eta_tilde * t units, so the solution depends on beta
    and alpha only through Z0 and the recorded raw times.  discrete_steps
    applies the unit-step map Z <- Z + eta_tilde Theta (Y - sigma(Z)),
    matching one full-batch SGD step under a frozen kernel.
    """
    if not eta_tilde > 0:
        raise ValueError("eta_tilde must be positive")
    Z0 = np.asarray(Z0, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    M, K = Y.shape
    if Z0.shape != (M, K) or not (kern.is_square and kern.m1 == M and kern.k == K):
        raise ValueError("kernel, logits, and labels are inconsistent")

    if integrator == "discrete_steps":
        rec = _Recorder(eta_tilde)
        Z = Z0.copy()
        steps = int(horizon)
        diverged = False
        diverged_step = None
        for step in range(steps + 1):
            if _is_divergent(Z):
                diverged = True
                diverged_step = step
                break
            if step % record_every == 0 or step == steps:
                rec.add(step, Z, Y)
            if step == steps:
                break
            Z = Z + eta_tilde * kern.apply(residual(Z, Y))
        return rec.build(diverged, diverged_step)

    if record_times is None:
        t_grid = np.linspace(0.0, float(horizon), max(int(round(horizon / record_every)), 1) + 1)
    else:
        t_grid = np.asarray(record_times, dtype=np.float64)
    s_grid = eta_tilde * t_grid

    def rhs(s, z_flat):
        Z = z_flat.reshape(M, K)
        return kern.apply(residual(Z, Y)).reshape(-1)

    def blowup(s, z_flat):
        return np.linalg.norm(z_flat) - DIVERGENCE_NORM

    blowup.terminal = True
    span = float(s_grid[-1]) if s_grid[-1] > 0 else 1e-12
    lam_max = float(np.linalg.eigvalsh(0.5 * (kern.values + kern.values.T)).max())
    first = min(0.1 / lam_max, span) if lam_max > 0 else None
    sol = solve_ivp(rhs, (0.0, span),
                    Z0.reshape(-1), t_eval=s_grid, rtol=rtol, atol=FLOW_ATOL,
                    method="RK45", first_step=first, events=blowup)
    if sol.status == -1:
        raise IntegrationError(sol.message)
    diverged = sol.status == 1
    rec = _Recorder(eta_tilde)
    for s, z_flat in zip(sol.t, sol.y.T):
        rec.add(s / eta_tilde, z_flat.reshape(M, K), Y)
    return rec.build(diverged, len(sol.t) if diverged else None)


def regularized_linearized_flow(kern: KernelTensor, Z0: np.ndarray, Y: np.ndarray,
                                beta: float, alpha: float, lambda_theta: float,
                                horizon: float, record_every: int = 1,
                                record_times=None, rtol: float = FLOW_RTOL) -> Trajectory:
    """Linearized dynamics with an L2 penalty on the parameter change.

    Integrates dz/dt = beta alpha Theta (Y - sigma(beta z)) - lambda (z - z0)
    in unrescaled logits z = Z / beta; trajectories record Z = beta z.  At
    lambda_theta = 0 this is linearized_flow in rescaled variables.
    """
    if lambda_theta < 0:
        raise ValueError("regularizer must be nonnegative")
    Z0 = np.asarray(Z0, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    M, K = Y.shape
    eta_tilde = alpha * beta ** 2
    z0 = (Z0 / beta).reshape(-1)

    def rhs(t, z_flat):
        Z = beta * z_flat.reshape(M, K)
        drive = beta * alpha * kern.apply(residual(Z, Y)).reshape(-1)
        return drive - lambda_theta * (z_flat - z0)

    def blowup(t, z_flat):
        return beta * np.linalg.norm(z_flat) - DIVERGENCE_NORM

    blowup.terminal = True
    if record_times is None:
        t_grid = np.linspace(0.0, float(horizon), max(int(round(horizon / record_every)), 1) + 1)
    else:
        t_grid = np.asarray(record_times, dtype=np.float64)
    sol = solve_ivp(rhs, (0.0, float(t_grid[-1])), z0, t_eval=t_grid,
                    rtol=rtol, atol=FLOW_ATOL, method="RK45", events=blowup)
    if sol.status == -1:
        raise IntegrationError(sol.message)
    diverged = sol.status == 1
    rec = _Recorder(eta_tilde)
    for t, z_flat in zip(sol.t, sol.y.T):
        rec.add(t, beta * z_flat.reshape(M, K), Y)
    return rec.build(diverged, len(sol.t) if diverged else None)


@dataclass
class FixedPointSmall:
    """Closed-form small-logit equilibrium of the regularized flow."""

    z_star: np.ndarray
    z_star_simplified: np.ndarray
    validity_norm: float  # ||(beta / lambda) Theta||_F; solution valid << 1


def fixed_point_small(theta_x: np.ndarray, Y: np.ndarray, beta: float,
                      lambda_theta: float) -> FixedPointSmall:
    """Solve the linearized equilibrium for ||beta z*|| << 1.

    Expanding sigma(beta z) = (1/K)(1 + beta z) in the equilibrium condition
    z* = (beta / lambda) Theta (Y - sigma(beta z*)) gives
    [I + beta^2 / (K lambda) Theta] z* = (beta / lambda) Theta (Y - 1/K),
    with the simplified form dropping the bracket.
    """
    theta_x = np.asarray(theta_x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    M, K = Y.shape
    if theta_x.shape != (M, M):
        raise ValueError("spatial kernel block must be M x M")
    if not lambda_theta > 0:
        raise ValueError("fixed point requires a positive regularizer")
    rhs = theta_x @ (Y - 1.0 / K)
    bracket = np.eye(M) + (beta ** 2 / (K * lambda_theta)) * theta_x
    try:
        z_star = (beta / lambda_theta) * np.linalg.solve(bracket, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular bracket matrix: {exc}") from exc
    simplified = (beta / lambda_theta) * rhs
    validity = float(beta / lambda_theta * np.linalg.norm(theta_x))
    return FixedPointSmall(z_star, simplified, validity)


@dataclass
class FixedPointLarge:
    """Self-consistent large-logit equilibrium for two classes."""

    z1: np.ndarray
    residual: float        # relative self-consistency residual (inf norm)
    validity_log: float    # ln(beta ||Theta||_F / lambda); solution valid >> 1
    iterations: int


def fixed_point_large_2class(theta_x: np.ndarray, Y: np.ndarray, beta: float,
                             lambda_theta: float, damping: float = 0.5,
                             tol: float = 1e-12, max_iter: int = 200) -> FixedPointLarge:
    """Solve z1 = (beta / lambda) Theta sign(z1) exp(-2 beta |z1|).

    Works in u = beta z1 with the zero-training-error sign ansatz.  A plain
    damped substitution diverges once |u| > 1.5, so the iteration is damped
    Newton (step factor = damping) started from the componentwise Lambert-W
    solution of the decoupled system.
    """
    theta_x = np.asarray(theta_x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != 2:
        raise ValueError("large-logit fixed point is defined for two classes")
    M = Y.shape[0]
    if theta_x.shape != (M, M):
        raise ValueError("spatial kernel block must be M x M")
    s = np.where(Y[:, 0] == 1.0, 1.0, -1.0)
    scale = beta ** 2 / lambda_theta

    def F(u):
        return scale * (theta_x @ (s * np.exp(-2.0 * np.abs(u))))

    from scipy.special import lambertw

    t0 = scale * (theta_x @ s) * s
    u = np.where(t0 > 0, np.real(lambertw(np.maximum(2.0 * t0, 1e-12))) / 2.0, 0.1) * s
    resid = math.inf
    for it in range(1, max_iter + 1):
        h = u - F(u)
        resid = float(np.max(np.abs(h)) / max(np.max(np.abs(u)), 1e-300))
        if resid < tol:
            z1 = u / beta
            check = float(np.max(np.abs(z1 - F(u) / beta)) / max(np.max(np.abs(z1)), 1e-300))
            validity = math.log(beta * np.linalg.norm(theta_x) / lambda_theta)
            return FixedPointLarge(z1, check, validity, it)
        D = np.diag(np.exp(-2.0 * np.abs(u)))
        jac = np.eye(M) + 2.0 * scale * (theta_x @ D)
        step = np.linalg.solve(jac, -h)
        u = u + damping * step
    raise FixedPointError(f"no convergence after {max_iter} iterations "
                          f"(last relative residual {resid:.3e})")


def run(model, data, config: TrainConfig) -> Trajectory:
    """Dispatch a TrainConfig to the matching dynamics routine."""
    if config.mode == "nonlinear":
        if config.integrator == "rk4_flow":
            return gradient_flow_train(model, data, config)
        if config.momentum > 0:
            return momentum_train(model, data, config)
        return sgd_train(model, data, config)
    X, Y = data.x_train, data.y_train
    kern = model.kernel(X)
    Z0 = config.beta * model.z(X)
    if config.mode == "linearized":
        return linearized_flow(kern, Z0, Y, config.eta_tilde, config.horizon,
                               integrator=config.integrator,
                               record_every=config.record_every)
    return regularized_linearized_flow(kern, Z0, Y, config.beta, config.alpha,
                                       config.lambda_theta, config.horizon,
                                       record_every=config.record_every)
