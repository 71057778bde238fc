"""State and input lifting dictionaries.

A dictionary is an ordered list of elementwise basis functions. Lifting a
vector ``x`` of length ``n`` stacks ``f(x)`` for every function ``f`` in
order, so a dictionary of ``p`` functions maps ``R^n`` into ``R^(p*n)``.
State dictionaries must start with ``identity`` so that the first ``n``
lifted coordinates reproduce the state exactly.

All functions act on scaled variables. Arrays may be 1-D (one sample) or
2-D with samples stored column-wise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .topology import SubsystemTopology

BASIS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x,
    "square": np.square,
    "cube_root": np.cbrt,
    "exp": np.exp,
    # constant channel; used to carry the affine offset of linearized models
    "one": np.ones_like,
}


class LiftingError(ValueError):
    pass


@dataclass(frozen=True)
class LiftingDictionary:
    functions: tuple[str, ...]
    n_in: int

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        for f in self.functions:
            if f not in BASIS:
                raise LiftingError(f"unknown basis function {f!r}; choose from {sorted(BASIS)}")

    @property
    def n_out(self) -> int:
        return len(self.functions) * self.n_in

    @property
    def identity_count(self) -> int:
        return self.n_in if self.functions[:1] == ("identity",) else 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n_in:
            raise LiftingError(f"expected {self.n_in} coordinates, got {x.shape[0]}")
        if self.n_in == 0:
            return np.zeros((0,) + x.shape[1:])
        return np.concatenate([BASIS[f](x) for f in self.functions], axis=0)


def state_dictionary(functions: Sequence[str], n_x: int) -> LiftingDictionary:
    d = LiftingDictionary(tuple(functions), n_x)
    if d.identity_count != n_x:
        raise LiftingError("state dictionaries must start with 'identity'")
    return d


def lift_state(d: LiftingDictionary, x: np.ndarray) -> np.ndarray:
    return d(x)


def lift_input(d: LiftingDictionary, u: np.ndarray) -> np.ndarray:
    return d(u)


def lift_neighbors(
    topology: SubsystemTopology,
    dictionaries: Sequence[LiftingDictionary],
    states: Mapping[int, np.ndarray] | Sequence[np.ndarray],
    i: int,
) -> np.ndarray:
    """Concatenate the liftings of every neighbor of ``i`` in ascending order."""
    parts = []
    for j in sorted(topology.neighbors[i]):
        try:
            xj = states[j]
        except (KeyError, IndexError):
            raise LiftingError(f"subsystem {i}: missing state of neighbor {j}") from None
        if xj is None:
            raise LiftingError(f"subsystem {i}: missing state of neighbor {j}")
        parts.append(dictionaries[j](xj))
    if not parts:
        sample = next((np.asarray(s) for s in _values(states) if s is not None), np.zeros(0))
        return np.zeros((0,) + sample.shape[1:])
    return np.concatenate(parts, axis=0)


def _values(states):
    return states.values() if isinstance(states, Mapping) else states
