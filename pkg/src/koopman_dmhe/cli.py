"""Command-line driver: simulate, identify, validate, estimate, compare, report.

Every command takes ``--config`` (a preset name such as ``cstr`` or a YAML
file), ``--seed``, ``--out`` and ``--threads``. Artifacts are written to the
output directory and each command appends a record to ``manifest.json``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .baseline import LinearizationError
from .config import ConfigError, RunConfig, load_config
from .dmhe import EstimationError
from .identify import ScalingError, load_models, save_models
from .predict import LiftedNetwork, PredictionError
from .qp import QPError
from .simulate.cstr import IntegrationError
from .simulate.richards import SoilStateError
from .simulate.signals import Trajectory

log = logging.getLogger("koopman_dmhe")

NUMERICAL_ERRORS = (EstimationError, QPError, PredictionError, IntegrationError, SoilStateError,
                    LinearizationError, np.linalg.LinAlgError, FloatingPointError)
INPUT_ERRORS = (ConfigError, ScalingError, io.SchemaError, FileNotFoundError, KeyError)

SPLITS = ("train", "validate", "test")


# --- helpers ------------------------------------------------------------------

def _config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["out"] = args.out
    return load_config(args.config, overrides)


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg: RunConfig, **extra) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.hash, "process": cfg.process, **extra}


def _record(cfg: RunConfig, command: str, outputs: list[Path], **extra):
    io.write_manifest(_out(cfg), {"command": command, "seed": cfg.seed, "config_hash": cfg.hash,
                                  "outputs": [p.name for p in outputs], **extra})


def _load_split(path: Path, cfg: RunConfig) -> Trajectory:
    t, x, u, y, meta = io.read_trajectory(path)
    if meta.get("config_hash") != cfg.hash or meta.get("seed") != cfg.seed:
        log.warning("%s was produced by a different configuration or seed", path)
    z = np.zeros((len(t), 0))
    return Trajectory(t, x, u, y, z, z, int(meta.get("seed", cfg.seed)), meta)


def _data(cfg: RunConfig, name: str, path: str | None) -> Trajectory:
    p = Path(path) if path else _out(cfg) / f"{name}.csv"
    if not p.is_file():
        raise FileNotFoundError(f"{p} not found; run 'simulate' first or pass the file explicitly")
    return _load_split(p, cfg)


def _model(cfg: RunConfig, path: str | None):
    p = Path(path) if path else _out(cfg) / "models.npz"
    if not p.is_file():
        raise FileNotFoundError(f"{p} not found; run 'identify' first or pass --model")
    models, topology, scaler, meta = load_models(p)
    return models, topology, scaler, meta


# --- commands -----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> dict:
    proc = pipeline.build_process(cfg)
    traj = pipeline.simulate(cfg, proc)
    out = _out(cfg)
    written = []
    for name, part in pipeline.split(cfg, traj).items():
        written.append(io.write_trajectory(out / f"{name}.csv", part, _meta(cfg, split=name),
                                           proc.x_names, proc.u_names))
    _record(cfg, "simulate", written, samples=len(traj))
    print(f"simulated {len(traj)} samples ({cfg.process}, seed {cfg.seed}) -> {out}")
    return {"samples": len(traj)}


def _linear_recovery(cfg: RunConfig, models, topology, scaler) -> float:
    """Largest Frobenius error against the true system in scaled coordinates."""
    system = pipeline.build_process(cfg).model
    span_x = scaler.x_max - scaler.x_min
    span_u = scaler.u_max - scaler.u_min
    worst = 0.0
    for i, mdl in enumerate(models):
        ri = topology.x_slice(i)
        true_ii = system.block(i, i) * span_x[ri][None, :] / span_x[ri][:, None]
        worst = max(worst, float(np.linalg.norm(mdl.A_ii - true_ii)))
        for j, Aij in mdl.A_ij.items():
            rj = topology.x_slice(j)
            true_ij = system.block(i, j) * span_x[rj][None, :] / span_x[ri][:, None]
            worst = max(worst, float(np.linalg.norm(Aij - true_ij)))
        ru = topology.u_slice(i)
        true_b = system.input_block(i) * span_u[ru][None, :] / span_x[ri][:, None]
        worst = max(worst, float(np.linalg.norm(mdl.B[:, :true_b.shape[1]] - true_b)))
    return worst


def cmd_identify(cfg: RunConfig, args) -> dict:
    train = _data(cfg, "train", args.data)
    topology = pipeline.build_process(cfg).topology
    models, scaler = pipeline.identify(cfg, topology, train)
    out = _out(cfg)
    path = out / "models.npz"
    save_models(path, models, topology, scaler, {"seed": cfg.seed, "config_hash": cfg.hash})
    rows = [[m.index, m.n_z, m.diagnostics["rank"], m.diagnostics["n_regressors"], m.diagnostics["fit_rmse"]]
            for m in models]
    diag = io.write_table(out / "identify_diagnostics.csv", "identify-diagnostics",
                          ["subsystem", "n_z", "rank", "n_regressors", "fit_rmse"], rows, _meta(cfg))
    summary = {"subsystems": len(models), "n_z": [m.n_z for m in models],
               "rank": [m.diagnostics["rank"] for m in models]}
    print(f"identified {len(models)} subsystem models, n_z = {summary['n_z']}")
    for m in models:
        print(f"  subsystem {m.index}: rank {m.diagnostics['rank']}/{m.diagnostics['n_regressors']}, "
              f"fit rmse {m.diagnostics['fit_rmse']:.3g}")
    if cfg.process == "linear":
        err = _linear_recovery(cfg, models, topology, scaler)
        summary["recovery_error"] = err
        print(f"  exact recovery: max Frobenius error vs true system {err:.3e}")
    _record(cfg, "identify", [path, diag], **summary)
    return summary


def cmd_validate(cfg: RunConfig, args) -> dict:
    models, topology, scaler, _ = _model(cfg, args.model)
    data = _data(cfg, "validate", args.data)
    x_hat, rmse = pipeline.validate(models, topology, scaler, data)
    out = _out(cfg)
    names = [f"x{c}" for c in range(topology.total_x)]
    pred = io.write_table(out / "validation.csv", "open-loop-prediction", ["t", *names],
                          np.column_stack([data.t, x_hat]), _meta(cfg))
    per = io.write_table(out / "validation_rmse.csv", "per-state-rmse", ["state", "scaled_rmse"],
                         [[c, r] for c, r in enumerate(rmse)], _meta(cfg))
    _record(cfg, "validate", [pred, per], max_rmse=float(rmse.max()))
    print(f"open-loop rollout over {len(data)} samples; scaled RMSE per state:")
    print("  " + " ".join(f"{r:.4f}" for r in rmse))
    return {"rmse_per_state": rmse.tolist()}


def _write_estimate(cfg: RunConfig, est, data: Trajectory, scaler, prefix: str) -> list[Path]:
    out = _out(cfg)
    n = est.x.shape[1]
    err = est.error_norm(data.x, scaler)
    cols = ["t", *[f"x{c}" for c in range(n)], "error_norm"]
    p1 = io.write_table(out / f"{prefix}.csv", "estimate", cols,
                        np.column_stack([data.t, est.x, err]), _meta(cfg))
    m = est.solve_seconds.shape[1]
    # Wall-clock timing is host dependent and kept apart from the data tables.
    p2 = io.write_table(out / f"{prefix}_timing.csv", "solve-timing",
                        ["t", *[f"estimator{i}" for i in range(m)]],
                        np.column_stack([data.t, est.solve_seconds]), _meta(cfg))
    return [p1, p2]


def cmd_estimate(cfg: RunConfig, args) -> dict:
    models, topology, scaler, _ = _model(cfg, args.model)
    data = _data(cfg, "test", args.data)
    net = LiftedNetwork(models, topology, scaler)
    est = pipeline.estimate(cfg, net, data)
    written = _write_estimate(cfg, est, data, scaler, "estimates")
    met = pipeline.metrics(est, data, scaler)
    mpath = _out(cfg) / "estimate_metrics.json"
    mpath.write_text(json.dumps(met, indent=2) + "\n")
    _record(cfg, "estimate", written + [mpath], rmse=met["rmse"])
    print(f"distributed MHE over {len(data)} samples: scaled RMSE {met['rmse']:.4f}, "
          f"mean local solve {met['mean_solve_seconds'] * 1e3:.2f} ms")
    return met


def cmd_compare(cfg: RunConfig, args) -> dict:
    if cfg.process != "cstr":
        raise ConfigError("compare needs the cstr process (the linearized baseline is CSTR specific)")
    proc = pipeline.build_process(cfg)
    parts = pipeline.split(cfg, pipeline.simulate(cfg, proc))
    models, scaler = pipeline.identify(cfg, proc.topology, parts["train"])
    test = parts["test"]
    rows, results = [], {}
    for name, net in (("koopman", LiftedNetwork(models, proc.topology, scaler)),
                      ("linearized", LiftedNetwork(*pipeline.baseline_models(cfg, proc, scaler), scaler))):
        try:
            est = pipeline.estimate(cfg, net, test)
            rmse, secs = est.rmse(test.x, scaler), est.mean_solve_seconds
        except NUMERICAL_ERRORS as exc:
            log.error("%s estimator failed: %s", name, exc)
            rmse, secs = float("inf"), float("nan")
        results[name] = {"rmse": rmse, "mean_solve_seconds": secs}
        rows.append([name, rmse, secs])
    ratio = results["linearized"]["rmse"] / results["koopman"]["rmse"]
    path = io.write_table(_out(cfg) / "comparison.csv", "comparison", ["method", "rmse", "mean_solve_seconds"],
                          rows, _meta(cfg, ratio=ratio))
    _record(cfg, "compare", [path], ratio=ratio)
    print(f"{'method':<12}{'scaled RMSE':>14}{'mean solve [s]':>16}")
    for name, r, s in rows:
        print(f"{name:<12}{r:>14.4f}{s:>16.4f}")
    print(f"RMSE ratio linearized/koopman: {ratio:.3g}")
    return {**results, "ratio": ratio}


def cmd_report(cfg: RunConfig, args) -> dict:
    out = _out(cfg)
    manifest = out / "manifest.json"
    if not manifest.is_file():
        raise FileNotFoundError(f"{manifest} not found; nothing to report")
    runs = json.loads(manifest.read_text())["runs"]
    latest = {}
    for r in runs:
        latest[r["command"]] = r
    lines = [f"# Run report ({cfg.process}, seed {cfg.seed})", "", f"config hash: {cfg.hash}", ""]
    for cmd in ("simulate", "identify", "validate", "estimate", "compare"):
        if cmd not in latest:
            continue
        r = latest[cmd]
        keys = {k: v for k, v in r.items() if k not in ("command", "outputs", "version")}
        lines.append(f"## {cmd}")
        lines += [f"- {k}: {v}" for k, v in keys.items()]
        lines.append(f"- outputs: {', '.join(r['outputs'])}")
        lines.append("")
    text = "\n".join(lines)
    (out / "report.md").write_text(text)
    print(text)
    return {"commands": sorted(latest)}


COMMANDS = {
    "simulate": (cmd_simulate, "simulate the process and write train/validate/test CSVs"),
    "identify": (cmd_identify, "fit the subsystem models on the training split"),
    "validate": (cmd_validate, "open-loop rollout over the validation split"),
    "estimate": (cmd_estimate, "run the distributed estimator over the test split"),
    "compare": (cmd_compare, "Koopman vs linearized-model estimation on identical data"),
    "report": (cmd_report, "summarize the manifest of an output directory"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="koopman-dmhe", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default="cstr", help="preset name or YAML file (default: cstr)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads for local estimators")
        if name in ("identify", "validate", "estimate"):
            p.add_argument("--data", default=None, help="input CSV (default: <out>/<split>.csv)")
        if name in ("validate", "estimate"):
            p.add_argument("--model", default=None, help="model file (default: <out>/models.npz)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command][0](cfg, args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
