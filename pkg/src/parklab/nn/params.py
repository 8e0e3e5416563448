"""Named persistent parameters with per-parameter Adam moments."""
from __future__ import annotations

import math

import numpy as np

from .tensor import F32, Tape, Tensor


class ParameterSet:
    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_step_count: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=F32)
        self._params[name] = arr
        self.adam_m[name] = np.zeros_like(arr)
        self.adam_v[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        cur = self._params[name]
        arr = np.asarray(value, dtype=F32)
        if arr.shape != cur.shape:
            raise ValueError(
                f"shape of {name!r} is immutable: {cur.shape} vs {arr.shape}")
        self._params[name] = arr

    def names(self) -> list[str]:
        return list(self._params)

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self._params)

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        """Register every parameter as a leaf on the tape."""
        return {name: tape.leaf(arr, name=name)
                for name, arr in self._params.items()}

    def total_size(self) -> int:
        return sum(a.size for a in self._params.values())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape: tuple[int, ...]) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(F32)


def init_linear(params: ParameterSet, rng: np.random.Generator, name: str,
                n_in: int, n_out: int, zero: bool = False) -> None:
    w = (np.zeros((n_in, n_out), dtype=F32) if zero
         else glorot(rng, n_in, n_out, (n_in, n_out)))
    params.add(f"{name}.w", w)
    params.add(f"{name}.b", np.zeros(n_out, dtype=F32))


def init_conv(params: ParameterSet, rng: np.random.Generator, name: str,
              c_in: int, c_out: int, k: int) -> None:
    fan_in, fan_out = c_in * k * k, c_out * k * k
    params.add(f"{name}.w", glorot(rng, fan_in, fan_out, (c_out, c_in, k, k)))
    params.add(f"{name}.b", np.zeros(c_out, dtype=F32))


def init_conv_transpose(params: ParameterSet, rng: np.random.Generator,
                        name: str, c_in: int, c_out: int, k: int) -> None:
    fan_in, fan_out = c_in * k * k, c_out * k * k
    params.add(f"{name}.w", glorot(rng, fan_in, fan_out, (c_in, c_out, k, k)))
    params.add(f"{name}.b", np.zeros(c_out, dtype=F32))


def init_lstm(params: ParameterSet, rng: np.random.Generator, name: str,
              n_in: int, hidden: int) -> None:
    params.add(f"{name}.w_ih", glorot(rng, n_in, 4 * hidden, (n_in, 4 * hidden)))
    params.add(f"{name}.w_hh", glorot(rng, hidden, 4 * hidden, (hidden, 4 * hidden)))
    params.add(f"{name}.b", np.zeros(4 * hidden, dtype=F32))
