"""Run configuration: YAML presets, inheritance and a stable content hash.

A configuration file is a mapping. ``base: <preset>`` pulls in a packaged
preset (or another file) and the remaining keys are merged on top of it,
recursively for nested mappings. Lists and scalars replace.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

PROCESSES = ("cstr", "agro", "linear")
PRESET_ALIASES = {"paper-cstr": "cstr", "paper-agro": "agro", "custom-linear": "linear"}


class ConfigError(ValueError):
    pass


def preset_names() -> list[str]:
    root = resources.files("koopman_dmhe") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _read_preset(name: str) -> dict:
    name = PRESET_ALIASES.get(name, name)
    path = resources.files("koopman_dmhe") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return yaml.safe_load(path.read_text()) or {}


def deep_merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _resolve(raw: dict, seen: tuple = ()) -> dict:
    raw = dict(raw)
    base = raw.pop("base", None)
    if base is None:
        return raw
    if base in seen:
        raise ConfigError(f"circular base reference through {base!r}")
    path = Path(str(base))
    parent = yaml.safe_load(path.read_text()) if path.suffix in (".yaml", ".yml") and path.is_file() \
        else _read_preset(str(base))
    if not isinstance(parent, dict):
        raise ConfigError(f"base {base!r} is not a mapping")
    return deep_merge(_resolve(parent, seen + (base,)), raw)


def load_raw(source: str | Path | dict, overrides: dict | None = None) -> dict:
    """Resolve a preset name, a YAML path or a mapping into a merged dict."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(str(source))
        if path.is_file():
            try:
                raw = yaml.safe_load(path.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        elif path.suffix in (".yaml", ".yml"):
            raise ConfigError(f"configuration file {path} not found")
        else:
            raw = {"base": str(source)}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    merged = _resolve(raw)
    if overrides:
        merged = deep_merge(merged, overrides)
    return merged


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form, ignoring where outputs go."""
    clean = {k: v for k, v in raw.items() if k not in ("out", "threads")}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Split:
    train: int
    validate: int
    test: int

    @property
    def total(self) -> int:
        return self.train + self.validate + self.test

    def bounds(self) -> dict[str, tuple[int, int]]:
        a, b = self.train, self.train + self.validate
        return {"train": (0, a), "validate": (a, b), "test": (b, self.total)}


@dataclass
class RunConfig:
    process: str
    seed: int
    split: Split
    params: dict
    noise: dict
    dictionaries: dict
    identification: dict
    estimator: dict
    baseline: dict = field(default_factory=dict)
    threads: int = 1
    out: str = "runs"
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def _require(raw: dict, key: str, kind=dict):
    if key not in raw:
        raise ConfigError(f"missing required key {key!r}")
    if kind is not None and not isinstance(raw[key], kind):
        raise ConfigError(f"{key!r} must be a {kind.__name__}")
    return raw[key]


def parse(raw: dict) -> RunConfig:
    process = raw.get("process")
    if process not in PROCESSES:
        raise ConfigError(f"process must be one of {PROCESSES}, got {process!r}")
    sp = _require(raw, "split")
    try:
        split = Split(int(sp["train"]), int(sp["validate"]), int(sp["test"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"split needs integer train/validate/test counts: {exc}") from exc
    if min(split.train, split.validate, split.test) < 1:
        raise ConfigError("every split must hold at least one sample")
    horizon = raw.get("horizon")
    if horizon is not None and int(horizon) != split.total:
        raise ConfigError(f"splits sum to {split.total} but horizon is {horizon}")
    est = _require(raw, "estimator")
    for key in ("N", "P0", "Q", "R", "x_guess"):
        if key not in est:
            raise ConfigError(f"estimator.{key} is required")
    if int(est["N"]) < 1:
        raise ConfigError("estimator.N must be at least 1")
    dicts = _require(raw, "dictionaries")
    if "state" not in dicts or "input" not in dicts:
        raise ConfigError("dictionaries need 'state' and 'input' lists")
    try:
        seed = int(raw.get("seed", 0))
        threads = int(raw.get("threads", 1))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed and threads must be integers: {exc}") from exc
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    return RunConfig(
        process=process, seed=seed, split=split,
        params=_require(raw, process),
        noise=_require(raw, "noise"),
        dictionaries=dicts,
        identification=raw.get("identification", {}) or {},
        estimator=est,
        baseline=raw.get("baseline", {}) or {},
        threads=threads,
        out=str(raw.get("out", "runs")),
        raw=raw,
    )


def load_config(source: str | Path | dict, overrides: dict | None = None) -> RunConfig:
    return parse(load_raw(source, overrides))
