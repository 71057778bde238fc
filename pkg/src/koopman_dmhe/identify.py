"""Parallel EDMD identification of coupled Koopman subsystem models.

For subsystem ``i`` the regressor stacks the lifted local state, the lifted
neighbor states (ascending index) and the lifted input::

    psi_i = [phi_i(x_i); phi_j(x_j) for j in I_i; delta_i(u_i)]

and only the first block row of the finite Koopman matrix is fitted,

    [A_ii, A_ij..., B_i] = phi_i(X_next) psi^T (psi psi^T)^+ .
"""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .lifting import LiftingDictionary
from .topology import SubsystemTopology, validate

log = logging.getLogger(__name__)

PINV_RTOL = 1e-10
MODEL_SCHEMA = "koopman-subsystem-models/1"


class ScalingError(ValueError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass
class Scaler:
    """Min-max scaling to ``[0, 1]`` for states and inputs.

    Measurements reuse the bounds of the state coordinates they observe, which
    keeps ``C_i = [H_i 0]`` exact for linear sensors.
    """

    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        for name in ("x_min", "x_max", "u_min", "u_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.x_max < self.x_min) or np.any(self.u_max < self.u_min):
            raise ScalingError("max must not be below min")

    def scale_x(self, x):
        return (np.asarray(x) - self.x_min) / (self.x_max - self.x_min)

    def unscale_x(self, s):
        return np.asarray(s) * (self.x_max - self.x_min) + self.x_min

    def scale_u(self, u):
        return (np.asarray(u) - self.u_min) / (self.u_max - self.u_min)

    def unscale_u(self, s):
        return np.asarray(s) * (self.u_max - self.u_min) + self.u_min

    def y_bounds(self, topology: SubsystemTopology):
        H = topology.global_sensor_matrix()
        return H @ self.x_min, H @ self.x_max

    def scale_y(self, y, topology: SubsystemTopology):
        lo, hi = self.y_bounds(topology)
        return (np.asarray(y) - lo) / (hi - lo)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_min", "x_max", "u_min", "u_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("x_min", "x_max", "u_min", "u_max")})


def fit_scaler(x: np.ndarray, u: np.ndarray, x_names: Sequence[str] | None = None,
               u_names: Sequence[str] | None = None) -> Scaler:
    """Fit bounds on row-per-sample data; constant variables are rejected."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float).reshape(len(x), -1)
    if len(x) == 0:
        raise ScalingError("cannot fit a scaler on an empty trajectory")
    for kind, data, names in (("state", x, x_names), ("input", u, u_names)):
        span = data.max(axis=0) - data.min(axis=0)
        for l in np.flatnonzero(span <= 0):
            label = names[l] if names else f"{kind}[{l}]"
            raise ScalingError(f"degenerate variable {label}: max equals min")
    return Scaler(x.min(axis=0), x.max(axis=0), u.min(axis=0), u.max(axis=0))


@dataclass
class SnapshotSet:
    """Scaled snapshot matrices, one column per sample.

    ``X[i]`` holds ``x_i(1..N)``, ``X_next[i]`` holds ``x_i(2..N+1)``; both
    are aligned with ``U[i]`` and ``Y[i]``.
    """

    X: list[np.ndarray]
    X_next: list[np.ndarray]
    U: list[np.ndarray]
    Y: list[np.ndarray]

    @property
    def n_samples(self) -> int:
        return self.X[0].shape[1]

    @staticmethod
    def concatenate(sets: Sequence["SnapshotSet"]) -> "SnapshotSet":
        """Stack column pairs of several runs; no pair straddles two runs."""
        m = len(sets[0].X)
        cat = lambda attr: [np.hstack([getattr(s, attr)[i] for s in sets]) for i in range(m)]
        return SnapshotSet(cat("X"), cat("X_next"), cat("U"), cat("Y"))


def build_snapshots(x: np.ndarray, u: np.ndarray, y: np.ndarray, topology: SubsystemTopology,
                    scaler: Scaler) -> SnapshotSet:
    """Build per-subsystem snapshot matrices from row-per-sample raw data."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two samples to form snapshot pairs")
    xs = scaler.scale_x(x).T
    us = scaler.scale_u(np.asarray(u, dtype=float).reshape(len(x), -1)).T
    ys = scaler.scale_y(y, topology).T
    X, Xn, U, Y = [], [], [], []
    for i in range(topology.m):
        sx, su, sy = topology.x_slice(i), topology.u_slice(i), topology.y_slice(i)
        X.append(xs[sx, :-1])
        Xn.append(xs[sx, 1:])
        U.append(us[su, :-1])
        Y.append(ys[sy, :-1])
    return SnapshotSet(X, Xn, U, Y)


def pinv_svd(M: np.ndarray, rtol: float = PINV_RTOL) -> tuple[np.ndarray, int]:
    """Pseudoinverse through the SVD, dropping singular values below ``rtol * s_max``.

    Returns the pseudoinverse and the retained rank.
    """
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(M.T.shape), 0
    keep = s > rtol * s[0]
    r = int(keep.sum())
    return (Vt[:r].T / s[:r]) @ U[:, :r].T, r


@dataclass
class KoopmanSubsystemModel:
    index: int
    A_ii: np.ndarray
    A_ij: dict[int, np.ndarray]
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_functions: tuple[str, ...]
    input_functions: tuple[str, ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_z(self) -> int:
        return self.A_ii.shape[0]

    @property
    def n_ut(self) -> int:
        return self.B.shape[1]

    def step(self, z_i, neighbor_z: dict[int, np.ndarray], ut_i):
        out = self.A_ii @ z_i + self.B @ ut_i
        for j, Aij in self.A_ij.items():
            out = out + Aij @ neighbor_z[j]
        return out


def regressor(snap: SnapshotSet, topology: SubsystemTopology, state_dicts: Sequence[LiftingDictionary],
              input_dicts: Sequence[LiftingDictionary], i: int) -> np.ndarray:
    parts = [state_dicts[i](snap.X[i])]
    parts += [state_dicts[j](snap.X[j]) for j in topology.neighbors[i]]
    parts.append(input_dicts[i](snap.U[i]))
    return np.vstack(parts)


def identify_subsystem(snap: SnapshotSet, topology: SubsystemTopology, state_dicts, input_dicts, i: int,
                       rtol: float = PINV_RTOL):
    """Least-squares fit of ``(A_ii, {A_ij}, B_i)`` for subsystem ``i``.

    Returns ``(A_ii, A_ij, B_i, diagnostics)``.
    """
    psi = regressor(snap, topology, state_dicts, input_dicts, i)
    target = state_dicts[i](snap.X_next[i])
    if psi.shape[1] != target.shape[1]:
        raise ValueError(f"subsystem {i}: regressor and target sample counts differ")
    gram = psi @ psi.T
    gram_pinv, rank = pinv_svd(gram, rtol)
    if rank < psi.shape[0]:
        warnings.warn(f"subsystem {i}: regressor rank {rank} < {psi.shape[0]}; truncated pseudoinverse used",
                      RankDeficiencyWarning, stacklevel=2)
    K = target @ psi.T @ gram_pinv
    nz = state_dicts[i].n_out
    A_ii = K[:, :nz]
    A_ij = {}
    col = nz
    for j in topology.neighbors[i]:
        A_ij[j] = K[:, col:col + state_dicts[j].n_out]
        col += state_dicts[j].n_out
    B = K[:, col:]
    resid = target - K @ psi
    diag = {
        "rank": rank,
        "n_regressors": int(psi.shape[0]),
        "n_samples": int(psi.shape[1]),
        "fit_rmse": float(np.sqrt(np.mean(resid ** 2))) if resid.size else 0.0,
        "normal_residual": float(np.linalg.norm(resid @ psi.T)),
        "normal_scale": float(np.linalg.norm(target @ psi.T)),
    }
    return A_ii, A_ij, B, diag


def identify_output_matrix(snap: SnapshotSet, topology: SubsystemTopology, state_dicts, i: int,
                           analytic: bool = True, rtol: float = PINV_RTOL) -> np.ndarray:
    """Output matrix ``C_i``; ``[H_i 0]`` for linear sensors, else a least-squares fit."""
    nz = state_dicts[i].n_out
    if analytic:
        C = np.zeros((len(topology.sensors[i]), nz))
        C[:, :topology.n_x[i]] = topology.sensor_matrix(i)
        return C
    phi = state_dicts[i](snap.X[i])
    gram_pinv, _ = pinv_svd(phi @ phi.T, rtol)
    return snap.Y[i] @ phi.T @ gram_pinv


def identify_all(snap: SnapshotSet, topology: SubsystemTopology, state_dicts, input_dicts, *,
                 threads: int = 1, analytic_output: bool = True,
                 rtol: float = PINV_RTOL) -> list[KoopmanSubsystemModel]:
    """Fit every subsystem independently, optionally on a thread pool."""
    validate(topology)

    def fit(i):
        try:
            A_ii, A_ij, B, diag = identify_subsystem(snap, topology, state_dicts, input_dicts, i, rtol)
            C = identify_output_matrix(snap, topology, state_dicts, i, analytic_output, rtol)
        except Exception as exc:
            raise type(exc)(f"subsystem {i}: {exc}") from exc
        nx, nz = topology.n_x[i], state_dicts[i].n_out
        D = np.hstack([np.eye(nx), np.zeros((nx, nz - nx))])
        return KoopmanSubsystemModel(i, A_ii, A_ij, B, C, D, state_dicts[i].functions,
                                     input_dicts[i].functions, diag)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            models = list(pool.map(fit, range(topology.m)))
    else:
        models = [fit(i) for i in range(topology.m)]
    for mdl in models:
        log.info("subsystem %d: rank %d/%d, fit rmse %.3g", mdl.index, mdl.diagnostics["rank"],
                 mdl.diagnostics["n_regressors"], mdl.diagnostics["fit_rmse"])
    return models


def lifted_topology(topology: SubsystemTopology, models: Sequence[KoopmanSubsystemModel]) -> SubsystemTopology:
    return topology.with_lifted([m.n_z for m in models], [m.n_ut for m in models])


# --- model container -------------------------------------------------------

def save_models(path: str | Path, models: Sequence[KoopmanSubsystemModel], topology: SubsystemTopology,
                scaler: Scaler, extra: dict | None = None) -> None:
    """Write ``<path>`` (npz of named matrices) plus ``<path>.json`` metadata."""
    path = Path(path)
    arrays = {}
    for mdl in models:
        i = mdl.index
        arrays[f"A_{i}_{i}"] = mdl.A_ii
        for j, M in mdl.A_ij.items():
            arrays[f"A_{i}_{j}"] = M
        arrays[f"B_{i}"] = mdl.B
        arrays[f"C_{i}"] = mdl.C
        arrays[f"D_{i}"] = mdl.D
    for k, v in scaler.to_dict().items():
        arrays[f"scaler_{k}"] = np.asarray(v)
    np.savez(path, **arrays)
    meta = {
        "schema": MODEL_SCHEMA,
        "topology": topology_to_dict(topology),
        "models": [
            {"index": m.index, "state_functions": list(m.state_functions),
             "input_functions": list(m.input_functions), "neighbors": sorted(m.A_ij),
             "diagnostics": m.diagnostics}
            for m in models
        ],
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        **(extra or {}),
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))


def load_models(path: str | Path):
    """Inverse of :func:`save_models`; returns ``(models, topology, scaler, meta)``."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    if meta.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model container schema {meta.get('schema')!r}")
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    models = []
    for entry in meta["models"]:
        i = entry["index"]
        models.append(KoopmanSubsystemModel(
            i, arrays[f"A_{i}_{i}"], {j: arrays[f"A_{i}_{j}"] for j in entry["neighbors"]},
            arrays[f"B_{i}"], arrays[f"C_{i}"], arrays[f"D_{i}"],
            tuple(entry["state_functions"]), tuple(entry["input_functions"]), entry.get("diagnostics", {}),
        ))
    scaler = Scaler.from_dict({k: arrays[f"scaler_{k}"] for k in ("x_min", "x_max", "u_min", "u_max")})
    return models, topology_from_dict(meta["topology"]), scaler, meta


def topology_to_dict(t: SubsystemTopology) -> dict:
    return {"n_x": list(t.n_x), "n_z": list(t.n_z), "n_u": list(t.n_u), "n_ut": list(t.n_ut),
            "neighbors": [list(n) for n in t.neighbors], "sensors": [list(s) for s in t.sensors]}


def topology_from_dict(d: dict) -> SubsystemTopology:
    return SubsystemTopology(tuple(d["n_x"]), tuple(d.get("n_z", d["n_x"])), tuple(d["n_u"]),
                             tuple(tuple(n) for n in d["neighbors"]), tuple(tuple(s) for s in d["sensors"]),
                             tuple(d.get("n_ut", ())))
