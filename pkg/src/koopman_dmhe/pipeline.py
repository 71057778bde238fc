"""Configuration-driven building blocks shared by the CLI and the test suite.

Each function maps a :class:`RunConfig` (plus data) to the objects of the
next stage: process and topology, trajectory, identified models, estimator
configuration, estimate and comparison metrics.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .baseline import linearized_baseline
from .config import ConfigError, RunConfig
from .dmhe import DistributedMHE, EstimatorConfig, GlobalEstimate
from .identify import Scaler, build_snapshots, fit_scaler, identify_all
from .lifting import LiftingDictionary, state_dictionary
from .predict import LiftedNetwork, open_loop_predict, scaled_rmse
from .simulate.cstr import INPUT_NAMES, STATE_NAMES, CstrConfig, calibrate_feeds
from .simulate.linear import chain_topology, random_system, simulate_linear
from .simulate.process import cstr_topology, simulate_cstr, simulate_soil, soil_topology
from .simulate.richards import SoilConfig
from .simulate.signals import NoiseSpec, Trajectory
from .topology import SubsystemTopology

log = logging.getLogger(__name__)


def _vector(value, n: int, name: str, fill=None) -> np.ndarray:
    """Broadcast a scalar or check a list; ``None`` entries become ``fill``."""
    if value is None:
        value = fill
    if np.isscalar(value) or value is None:
        return np.full(n, np.nan if value is None else float(value))
    out = np.array([fill if v is None else v for v in value], dtype=float)
    if out.shape != (n,):
        raise ConfigError(f"{name} needs {n} entries, got {out.size}")
    return out


@dataclass
class Process:
    """Simulator handle: topology, signal names and the underlying model."""

    kind: str
    topology: SubsystemTopology
    model: object
    x_names: list[str]
    u_names: list[str]
    x0: object = None


def build_process(cfg: RunConfig) -> Process:
    p = cfg.params
    try:
        if cfg.process == "cstr":
            fields = {k: v for k, v in p.items() if k != "steady_state"}
            model = CstrConfig.from_dict(fields)
            st = p.get("steady_state") or {}
            if st.get("calibrate_feeds"):
                model = calibrate_feeds(model, st["x_s"], st["Q_s"])
            return Process("cstr", cstr_topology(), model, list(STATE_NAMES), list(INPUT_NAMES))
        if cfg.process == "agro":
            soil = SoilConfig.from_dict(p.get("soil", {}))
            topo = soil_topology(soil.n_cells, int(p.get("n_subsystems", 8)))
            names = [f"h{c + 1}" for c in range(soil.n_cells)]
            return Process("agro", topo, soil, names, ["q_surface"], x0=float(p.get("initial_head", -0.5)))
        topo = chain_topology(p["n_x"], p.get("n_u"), p.get("sensors"))
        system = random_system(topo, int(p.get("system_seed", 0)), float(p.get("spectral_radius", 0.9)),
                               float(p.get("coupling", 0.3)))
        names = [f"x{c}" for c in range(topo.total_x)]
        return Process("linear", topo, system, names, [f"u{c}" for c in range(topo.total_u)])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{cfg.process} parameters: {exc}") from exc


def noise_spec(cfg: RunConfig, topology: SubsystemTopology) -> NoiseSpec:
    n = cfg.noise
    return NoiseSpec(list(_vector(n.get("sigma_w", 0.0), topology.total_x, "noise.sigma_w")),
                     list(_vector(n.get("sigma_v", 0.0), topology.total_y, "noise.sigma_v")),
                     float(n.get("truncation", 5.0)), cfg.seed)


def simulate(cfg: RunConfig, proc: Process | None = None) -> Trajectory:
    proc = proc or build_process(cfg)
    noise = noise_spec(cfg, proc.topology)
    T = cfg.split.total
    if proc.kind == "cstr":
        return simulate_cstr(proc.model, noise, T, cfg.seed, topology=proc.topology)
    if proc.kind == "agro":
        return simulate_soil(proc.model, noise, T, cfg.seed, proc.x0, proc.topology)
    return simulate_linear(proc.model, noise, T, cfg.seed, hold=int(cfg.params.get("hold", 1)))


def split(cfg: RunConfig, traj: Trajectory) -> dict[str, Trajectory]:
    if len(traj) != cfg.split.total:
        raise ConfigError(f"trajectory has {len(traj)} samples, splits need {cfg.split.total}")
    return {name: traj.slice(a, b) for name, (a, b) in cfg.split.bounds().items()}


def dictionaries(cfg: RunConfig, topology: SubsystemTopology):
    d = cfg.dictionaries
    sd = [state_dictionary(d["state"], topology.n_x[i]) for i in range(topology.m)]
    ud = [LiftingDictionary(tuple(d["input"]), topology.n_u[i]) for i in range(topology.m)]
    return sd, ud


def identify(cfg: RunConfig, topology: SubsystemTopology, train: Trajectory):
    """Fit the scaler and all subsystem models on the training segment."""
    scaler = fit_scaler(train.x, train.u)
    sd, ud = dictionaries(cfg, topology)
    snap = build_snapshots(train.x, train.u, train.y, topology, scaler)
    rtol = float(cfg.identification.get("rtol", 1e-10))
    threads = int(cfg.identification.get("threads", cfg.threads))
    models = identify_all(snap, topology, sd, ud, threads=threads, rtol=rtol)
    return models, scaler


def validate(models, topology: SubsystemTopology, scaler: Scaler, data: Trajectory):
    """Open-loop rollout from the first sample; returns ``(x_hat, per-state scaled RMSE)``."""
    net = LiftedNetwork(models, topology, scaler)
    x_hat, _ = open_loop_predict(models, topology, scaler, net.state_dicts, net.input_dicts,
                                 data.x[0], data.u)
    return x_hat, scaled_rmse(data.x, x_hat, scaler, axis=0)


def estimator_config(cfg: RunConfig, net: LiftedNetwork) -> EstimatorConfig:
    e = cfg.estimator
    n = net.topology.total_x
    lz = net.lifted

    def blocks(value, sizes, name):
        if np.isscalar(value):
            return [float(value) * np.eye(s) for s in sizes]
        if len(value) != len(sizes):
            raise ConfigError(f"estimator.{name} needs one entry per subsystem")
        return [float(v) * np.eye(s) if np.isscalar(v) else np.asarray(v, dtype=float)
                for v, s in zip(value, sizes)]

    try:
        return EstimatorConfig(
            N=int(e["N"]),
            P0=blocks(e["P0"], lz.n_z, "P0"),
            Q=blocks(e["Q"], lz.n_z, "Q"),
            R=blocks(e["R"], lz.n_y, "R"),
            x_guess=_vector(e["x_guess"], n, "estimator.x_guess"),
            x_lb=_vector(e.get("x_lb"), n, "estimator.x_lb", fill=-np.inf),
            x_ub=_vector(e.get("x_ub"), n, "estimator.x_ub", fill=np.inf),
            coupling=e.get("coupling", "all"),
            measurements=e.get("measurements", "neighborhood"),
            iterations=int(e.get("iterations", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"estimator: {exc}") from exc


def estimate(cfg: RunConfig, net: LiftedNetwork, data: Trajectory, threads: int | None = None) -> GlobalEstimate:
    ecfg = estimator_config(cfg, net)
    t0 = time.perf_counter()
    est = DistributedMHE(net, ecfg, threads=threads or cfg.threads).run(data.y, data.u)
    est.meta["wall_seconds"] = time.perf_counter() - t0
    return est


def baseline_models(cfg: RunConfig, proc: Process, scaler: Scaler):
    """Linearized subsystem models at the configured steady state (CSTR only)."""
    if proc.kind != "cstr":
        raise ConfigError("the linearized baseline is defined for the cstr process")
    st = cfg.params.get("steady_state") or {}
    if "x_s" not in st or "Q_s" not in st:
        raise ConfigError("cstr.steady_state needs x_s and Q_s")
    b = cfg.baseline
    return linearized_baseline(proc.model, st["x_s"], st["Q_s"], scaler, proc.topology,
                               step=float(b.get("step", 1e-6)), fill_in=b.get("fill_in", "drop"))


def metrics(est: GlobalEstimate, data: Trajectory, scaler: Scaler) -> dict:
    err = est.error_norm(data.x, scaler)
    return {
        "rmse": est.rmse(data.x, scaler),
        "rmse_per_state": scaled_rmse(data.x, est.x, scaler, axis=0).tolist(),
        "error_norm_max": float(np.max(err)),
        "mean_solve_seconds": est.mean_solve_seconds,
        "bound_violation": est.bound_violation,
        "kkt_max": est.kkt_max,
        "p_min_eig": float(np.nanmin(est.p_min_eig)),
        "p_max_asymmetry": float(np.nanmax(est.p_asymmetry)),
        "samples": len(data),
    }
