"""tempdyn experiment CLI.

    tempdyn <command> --config <path> --out <dir> [--seed-override N] [--jobs N]

Commands: collapse, timescales, phase-plane, lr-sweep, spectra, fixedpoint,
momentum, ntk-dump.  Every command validates its JSON config against the
schema in tempdyn.config, writes the resolved config (schema version and
hash included) plus a dataset descriptor into the output directory, and
emits deterministic CSV files: reruns with an identical config are byte
identical.  Grid points may run in a worker pool; output order follows the
grid, not completion order.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as _config
from . import datasets as _datasets
from . import dynamics as _dynamics
from . import kernel as _kernel
from . import loss as _loss
from . import model as _model
from . import rescale as _rescale
from . import timescales as _timescales

NAN = float("nan")


# ---------------------------------------------------------------------------
# deterministic output helpers

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return "nan"
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


TRAJ_HEADER = ("step", "t", "eta_t", "loss", "train_acc", "test_acc",
               "z_norm", "diverged")


def write_trajectory(path, traj: _dynamics.Trajectory) -> None:
    write_csv(path, TRAJ_HEADER, traj.rows())


# ---------------------------------------------------------------------------
# config -> objects

def build_spec(cfg) -> _model.NetworkSpec:
    return _model.NetworkSpec.from_dict(cfg["model"])


def build_dataset(cfg) -> _datasets.Dataset:
    d = cfg["dataset"]
    if d["generator"] == "gaussian_blobs":
        return _datasets.gaussian_blobs(
            num_classes=cfg["model"]["num_classes"],
            train_size=d["train_size"],
            test_size=d.get("test_size", 0),
            input_dim=cfg["model"]["input_dim"],
            separation=d["separation"],
            seed=d["seed"],
        )
    return _datasets.load_csv(d["path"])


def correlated_for_target(spec, seed, beta, z0_target, X):
    """Correlated model hitting E||Z0|| = z0_target, or None if unreachable."""
    base = _model.forward(spec, _model.init_params(spec, seed), X)
    c = _model.correlation_for_z0_target(beta, float(np.linalg.norm(base)), z0_target)
    if c is None:
        return None, None
    return _model.correlated_init(spec, seed, c), c


def _emit_common(outdir: Path, cfg, data) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    write_json(outdir / "resolved_config.json", cfg)
    write_json(outdir / "dataset.json", data.descriptor if data is not None else {})


def _run_grid(fn, payloads, jobs):
    if jobs <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, payloads))


# ---------------------------------------------------------------------------
# collapse: learning curves across beta at fixed Z0 and eta_tilde

def cmd_collapse(cfg, outdir: Path, jobs: int = 1) -> None:
    spec = build_spec(cfg)
    data = build_dataset(cfg)
    _emit_common(outdir, cfg, data)
    eta = cfg["eta_tilde"]
    seed = cfg["seed"]
    records = []
    nonlinear, linearized = [], []
    tau_nls = []
    for i, beta in enumerate(cfg["betas"]):
        model, c = correlated_for_target(spec, seed, beta, cfg["z0_target"], data.x_train)
        if model is None:
            raise ValueError(f"z0_target {cfg['z0_target']} unreachable at beta={beta}")
        train_cfg = _dynamics.TrainConfig(
            beta=beta, eta_tilde=eta, horizon=cfg["horizon_steps"],
            record_every=cfg["record_every"], seed=seed)
        nl = _dynamics.sgd_train(model, data, train_cfg)
        kern = model.kernel(data.x_train)
        Z0 = beta * model.z(data.x_train)
        lin = _dynamics.linearized_flow(kern, Z0, data.y_train, eta,
                                        cfg["horizon_steps"],
                                        integrator="discrete_steps",
                                        record_every=cfg["record_every"])
        write_trajectory(outdir / f"traj_{i:02d}_nonlinear.csv", nl)
        write_trajectory(outdir / f"traj_{i:02d}_linearized.csv", lin)
        report = _timescales.timescale_report(model, data, beta, eta)
        tau_nls.append(report.tau_nl)
        dev = _timescales.deviation_time(nl, lin, cfg["deviation_tol"])
        records.append([beta, c, report.z0_norm, eta / beta ** 2, eta,
                        report.tau_nl, dev, int(nl.diverged)])
        nonlinear.append(nl)
        linearized.append(lin)
    finite = [t for t in tau_nls if math.isfinite(t)]
    t_cut = 0.1 * min(finite) if finite else nonlinear[0].eta_times[-1]
    n_common = min(len(t) for t in nonlinear + linearized)
    trimmed_nl = [_trim(t, n_common) for t in nonlinear]
    trimmed_lin = [_trim(t, n_common) for t in linearized]
    col_nl = _timescales.collapse_metric(trimmed_nl, t_cut) if len(nonlinear) > 1 else NAN
    col_lin = _timescales.collapse_metric(trimmed_lin, t_cut) if len(linearized) > 1 else NAN
    header = ("beta", "c", "z0_norm", "alpha", "eta_tilde", "tau_nl",
              "deviation_time", "diverged", "t_cut", "collapse_nonlinear",
              "collapse_linearized")
    write_csv(outdir / "summary.csv", header,
              [r + [t_cut, col_nl, col_lin] for r in records])


def _trim(traj: _dynamics.Trajectory, n: int) -> _dynamics.Trajectory:
    return _dynamics.Trajectory(
        times=traj.times[:n], eta_times=traj.eta_times[:n], loss=traj.loss[:n],
        train_acc=traj.train_acc[:n], test_acc=traj.test_acc[:n],
        z_norm=traj.z_norm[:n], snapshots=traj.snapshots[:n],
        diverged=traj.diverged, diverged_step=traj.diverged_step)


# ---------------------------------------------------------------------------
# timescales: tau_z / tau_nl over a (beta, ||Z0||) grid

TIMESCALE_HEADER = ("beta", "z0_norm", "eta_tilde", "tau_z", "tau_nl",
                    "tau_z_raw", "tau_nl_raw", "tau_z_over_z0",
                    "tau_nl_over_beta", "z0_target", "c", "seed", "unreachable")


def _timescale_point(payload):
    cfg, beta, target, seed = payload
    spec = build_spec(cfg)
    data = build_dataset(cfg)
    eta = cfg["eta_tilde"]
    model, c = correlated_for_target(spec, seed, beta, target, data.x_train)
    if model is None:
        return (beta, NAN, eta, NAN, NAN, NAN, NAN, NAN, NAN, target, NAN, seed, 1)
    rep = _timescales.timescale_report(model, data, beta, eta)
    over_z0 = rep.tau_z / rep.z0_norm if rep.z0_norm > 0 else NAN
    return (beta, rep.z0_norm, eta, rep.tau_z, rep.tau_nl, rep.tau_z_raw,
            rep.tau_nl_raw, over_z0, rep.tau_nl / beta, target, c, seed, 0)


def cmd_timescales(cfg, outdir: Path, jobs: int = 1) -> None:
    data = build_dataset(cfg)
    _emit_common(outdir, cfg, data)
    payloads = [(cfg, beta, target, seed)
                for beta in cfg["betas"]
                for target in cfg["z0_targets"]
                for seed in cfg["seeds"]]
    rows = _run_grid(_timescale_point, payloads, jobs)
    write_csv(outdir / "timescales.csv", TIMESCALE_HEADER, rows)


# ---------------------------------------------------------------------------
# phase plane: (beta, c) grid of early/final metrics

PHASE_HEADER = ("beta", "c", "z0_norm", "alpha", "eta_tilde", "seed",
                "final_loss", "final_train_acc", "final_test_acc",
                "early_train_acc", "early_test_acc", "zf_norm", "tau_z",
                "tau_nl", "deviation_time", "diverged", "config_hash")


def _phase_point(payload):
    cfg, beta, c, seed = payload
    spec = build_spec(cfg)
    data = build_dataset(cfg)
    alpha = cfg.get("alpha", None)
    eta = cfg.get("eta_tilde", None)
    train_cfg = _dynamics.TrainConfig(
        beta=beta, alpha=alpha, eta_tilde=eta, horizon=cfg["horizon_steps"],
        record_every=cfg["record_every"], seed=seed)
    model = _model.correlated_init(spec, seed, c)
    Z0 = beta * model.z(data.x_train)
    z0_norm = float(np.linalg.norm(Z0))
    rep = _timescales.timescale_report(model, data, beta, train_cfg.eta_tilde)
    nl = _dynamics.sgd_train(model, data, train_cfg)
    kern = model.kernel(data.x_train)
    lin = _dynamics.linearized_flow(kern, Z0, data.y_train, train_cfg.eta_tilde,
                                    cfg["horizon_steps"],
                                    integrator="discrete_steps",
                                    record_every=cfg["record_every"])
    dev = _timescales.deviation_time(nl, lin, cfg["deviation_tol"])
    early_idx = np.flatnonzero(nl.times == cfg["early_steps"])
    if nl.diverged:
        final = (NAN, NAN, NAN, NAN)
    else:
        final = (nl.loss[-1], nl.train_acc[-1], nl.test_acc[-1], nl.z_norm[-1])
    if early_idx.size and not (nl.diverged and cfg["early_steps"] >= (nl.diverged_step or 0)):
        early = (nl.train_acc[early_idx[0]], nl.test_acc[early_idx[0]])
    else:
        early = (NAN, NAN)
    return (beta, c, z0_norm, train_cfg.alpha, train_cfg.eta_tilde, seed,
            final[0], final[1], final[2], early[0], early[1], final[3],
            rep.tau_z, rep.tau_nl, dev, int(nl.diverged), cfg["config_hash"])


def cmd_phase_plane(cfg, outdir: Path, jobs: int = 1) -> None:
    data = build_dataset(cfg)
    _emit_common(outdir, cfg, data)
    payloads = [(cfg, beta, c, seed)
                for beta in cfg["betas"]
                for c in cfg["c_values"]
                for seed in cfg["seeds"]]
    rows = _run_grid(_phase_point, payloads, jobs)
    write_csv(outdir / "sweep.csv", PHASE_HEADER, rows)


# ---------------------------------------------------------------------------
# lr sweep: alpha*(beta) and its log-log slope

LR_HEADER = ("beta", "alpha", "seed", "final_loss", "final_train_acc",
             "final_test_acc", "metric", "diverged", "config_hash")


def _lr_point(payload):
    cfg, beta, alpha, seed = payload
    spec = build_spec(cfg)
    data = build_dataset(cfg)
    init = cfg["init"]
    if init["kind"] == "correlated":
        model, _ = correlated_for_target(spec, seed, beta, init["z0_target"], data.x_train)
        if model is None:
            model = _model.correlated_init(spec, seed, 1.0)
    else:
        model = _model.MLPModel.init(spec, seed)
    train_cfg = _dynamics.TrainConfig(
        beta=beta, alpha=alpha, horizon=cfg["horizon_steps"],
        record_every=cfg["horizon_steps"], seed=seed)
    traj = _dynamics.sgd_train(model, data, train_cfg)
    if traj.diverged:
        return (beta, alpha, seed, NAN, NAN, NAN, NAN, 1, cfg["config_hash"])
    metric = traj.test_acc[-1]
    if math.isnan(metric):
        metric = traj.train_acc[-1]
    return (beta, alpha, seed, traj.loss[-1], traj.train_acc[-1],
            traj.test_acc[-1], metric, 0, cfg["config_hash"])


def alpha_star_table(rows, betas, alphas):
    """argmax_alpha of mean metric per beta; all-diverged columns excluded."""
    table = []
    for beta in betas:
        best = None
        for alpha in alphas:
            vals = [r[6] for r in rows if r[0] == beta and r[1] == alpha and not r[7]]
            if not vals:
                continue
            mean = float(np.mean(vals))
            if best is None or mean > best[1]:
                best = (alpha, mean, len(vals))
        table.append((beta, best[0] if best else NAN,
                      best[1] if best else NAN, best[2] if best else 0))
    return table


def cmd_lr_sweep(cfg, outdir: Path, jobs: int = 1) -> None:
    data = build_dataset(cfg)
    _emit_common(outdir, cfg, data)
    payloads = [(cfg, beta, alpha, seed)
                for beta in cfg["betas"]
                for alpha in cfg["alphas"]
                for seed in cfg["seeds"]]
    rows = _run_grid(_lr_point, payloads, jobs)
    write_csv(outdir / "sweep.csv", LR_HEADER, rows)
    table = alpha_star_table(rows, cfg["betas"], cfg["alphas"])
    write_csv(outdir / "alpha_star.csv",
              ("beta", "alpha_star", "mean_metric", "n_seeds"), table)
    valid = [(b, a) for b, a, _, _ in table if not math.isnan(a)]
    if len(valid) >= 2:
        lb = np.log10([b for b, _ in valid])
        la = np.log10([a for _, a in valid])
        slope, intercept = np.polyfit(lb, la, 1)
    else:
        slope, intercept = NAN, NAN
    write_csv(outdir / "slope.csv", ("slope", "intercept", "n_points"),
              [(slope, intercept, len(valid))])


# ---------------------------------------------------------------------------
# spectra: exact vs approximate softmax-derivative eigenvalues

def cmd_spectra(cfg, outdir: Path, jobs: int = 1) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    write_json(outdir / "resolved_config.json", cfg)
    K = cfg["num_classes"]
    rng = np.random.Generator(np.random.Philox(key=np.array([cfg["seed"], 7],
                                                            dtype=np.uint64)))
    z = np.sort(rng.standard_normal(K) * cfg["logit_spread"])[::-1]
    rows = []
    for beta in cfg["betas"]:
        exact = np.sort(np.linalg.eigvalsh(_loss.softmax_jacobian(beta * z)))[::-1]
        approx = _loss.dsoftmax_spectrum_largebeta(z, beta)
        pairing = [(1, exact[0], approx.eigenvalues[0])]
        for i in range(2, K):
            pairing.append((i + 1, exact[i - 1], approx.eigenvalues[i]))
        pairing.append((2, exact[K - 1], approx.eigenvalues[1]))
        for idx, ex, ap in sorted(pairing):
            rel = abs(ap - ex) / abs(ex) if idx != 2 and ex != 0 else NAN
            rows.append((beta, idx, ex, ap, rel))
    write_csv(outdir / "spectra.csv",
              ("beta", "index", "lambda_exact", "lambda_approx", "rel_error"), rows)
    write_json(outdir / "logits.json", {"logits": list(z)})


# ---------------------------------------------------------------------------
# fixedpoint: closed forms vs the regularized flow

def cmd_fixedpoint(cfg, outdir: Path, jobs: int = 1) -> None:
    spec = build_spec(cfg)
    data = build_dataset(cfg)
    _emit_common(outdir, cfg, data)
    beta, lam = cfg["beta"], cfg["lambda_theta"]
    theta_x = _kernel.analytic_ntk_fc(spec, data.x_train).x_block
    Y = data.y_train
    if cfg["regime"] == "small":
        fp = _dynamics.fixed_point_small(theta_x, Y, beta, lam)
        kern = _kernel.block_diagonal_kernel(theta_x, Y.shape[1])
        horizon = cfg.get("flow_horizon", 40.0 / lam)
        flow = _dynamics.regularized_linearized_flow(
            kern, np.zeros_like(Y), Y, beta, 1.0, lam, horizon, record_every=max(horizon, 1))
        z_flow = flow.snapshots[-1] / beta
        rows = []
        M, K = Y.shape
        for m in range(M):
            for k in range(K):
                closed = fp.z_star[m, k]
                rel = abs(closed - z_flow[m, k]) / max(abs(z_flow[m, k]), 1e-300)
                rows.append((m, k, closed, fp.z_star_simplified[m, k],
                             z_flow[m, k], rel, fp.validity_norm))
        write_csv(outdir / "fixedpoint_small.csv",
                  ("example", "class", "z_closed", "z_simplified", "z_flow",
                   "rel_diff", "validity_norm"), rows)
    else:
        fp = _dynamics.fixed_point_large_2class(theta_x, Y, beta, lam)
        rows = [(m, fp.z1[m], fp.residual, fp.validity_log, fp.iterations)
                for m in range(Y.shape[0])]
        write_csv(outdir / "fixedpoint_large.csv",
                  ("example", "z1", "self_residual", "validity_log", "iterations"),
                  rows)


# ---------------------------------------------------------------------------
# momentum: fixed gamma_tilde collapse across alpha, plus scheme tables

def cmd_momentum(cfg, outdir: Path, jobs: int = 1) -> None:
    spec = build_spec(cfg)
    data = build_dataset(cfg)
    _emit_common(outdir, cfg, data)
    beta = cfg["beta"]
    gamma_tilde = cfg["gamma_tilde"]
    taus, losses = [], []
    for i, alpha in enumerate(cfg["alphas"]):
        gamma = gamma_tilde * math.sqrt(alpha)
        if gamma >= 1.0:
            raise ValueError(f"alpha={alpha} exceeds gamma_tilde^-2: momentum >= 1")
        steps = int(math.ceil(cfg["tau_horizon"] / math.sqrt(alpha)))
        train_cfg = _dynamics.TrainConfig(beta=beta, alpha=alpha, momentum=gamma,
                                          horizon=steps, record_every=1,
                                          seed=cfg["seed"])
        model = _model.MLPModel.init(spec, cfg["seed"])
        traj = _dynamics.momentum_train(model, data, train_cfg)
        write_trajectory(outdir / f"traj_{i:02d}.csv", traj)
        taus.append(math.sqrt(alpha) * traj.times)
        losses.append(traj.loss)
    # resample every run onto the coarsest run's canonical-time grid
    coarse = max(range(len(taus)), key=lambda i: taus[i][1] if len(taus[i]) > 1 else 0.0)
    grid = taus[coarse][taus[coarse] <= cfg["tau_horizon"]]
    resampled = [np.interp(grid, t, l) for t, l in zip(taus, losses)]
    spread = (np.max(resampled, axis=0) - np.min(resampled, axis=0)) / \
        np.maximum(np.abs(np.mean(resampled, axis=0)), 1e-300)
    rows = [tuple([g] + [r[j] for r in resampled] + [spread[j]])
            for j, g in enumerate(grid)]
    header = tuple(["tau"] + [f"loss_a{i}" for i in range(len(cfg["alphas"]))]
                   + ["rel_spread"])
    write_csv(outdir / "momentum_collapse.csv", header, rows)
    if cfg.get("scheme_table"):
        st = cfg["scheme_table"]
        srows = []
        for scheme in _rescale.SCHEMES:
            for b in st["betas"]:
                params = _rescale.scheme_params(scheme, st["base_rate"],
                                                gamma_tilde, b)
                srows.append(params.row())
        write_csv(outdir / "schemes.csv", _rescale.SchemeParams.CSV_HEADER, srows)


# ---------------------------------------------------------------------------
# ntk dump

def cmd_ntk_dump(cfg, outdir: Path, jobs: int = 1) -> None:
    spec = build_spec(cfg)
    data = build_dataset(cfg)
    _emit_common(outdir, cfg, data)
    if cfg["kind"] == "empirical":
        kern = _kernel.empirical_ntk(spec, _model.init_params(spec, cfg["seed"]),
                                     data.x_train)
    else:
        kern = _kernel.analytic_ntk_fc(spec, data.x_train)
    if cfg["format"] == "npy":
        np.save(outdir / "ntk.npy", kern.values)
        payload_file = "ntk.npy"
    else:
        write_csv(outdir / "ntk.csv",
                  [f"c{j}" for j in range(kern.values.shape[1])], kern.values)
        payload_file = "ntk.csv"
    write_json(outdir / "ntk_meta.json", {
        "m": kern.m1,
        "k": kern.k,
        "structure": kern.structure,
        "shape": list(kern.values.shape),
        "file": payload_file,
        "format": cfg["format"],
        "config_hash": cfg["config_hash"],
        "schema_version": cfg["schema_version"],
    })


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "collapse": cmd_collapse,
    "timescales": cmd_timescales,
    "phase_plane": cmd_phase_plane,
    "lr_sweep": cmd_lr_sweep,
    "spectra": cmd_spectra,
    "fixedpoint": cmd_fixedpoint,
    "momentum": cmd_momentum,
    "ntk_dump": cmd_ntk_dump,
}


def _apply_seed_override(cfg, seed):
    if seed is None:
        return cfg
    cfg = dict(cfg)
    if "seeds" in cfg:
        cfg["seeds"] = [seed]
    if "seed" in cfg:
        cfg["seed"] = seed
    cfg["config_hash"] = _config.config_hash(cfg)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tempdyn",
        description="Desk-scale experiments on temperature-scaled training dynamics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name.replace("_", "-"))
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed-override", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    command = args.command.replace("-", "_")
    try:
        cfg = _config.load(command, args.config)
    except _config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg = _apply_seed_override(cfg, args.seed_override)
    try:
        COMMANDS[command](cfg, Path(args.out), jobs=args.jobs)
    except (OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
