"""Named parameter store with Adam updates.

Parameters live in a flat name -> Tensor map; Adam moments sit alongside and
are serialized with the checkpoint so training restarts bit-exactly.  Bias
correction uses a per-parameter step count because different phases update
different parameter subsets.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from ..errors import MissingGradient
from .autodiff import Tensor


class ParamStore:
    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already present")
        tensor = Tensor(np.array(array, dtype=self.dtype, copy=True), requires_grad=True)
        self._params[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        self._t[name] = 0
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grads(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def adam_step(self, lr: float, names: Iterable[str] | None = None,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        """One Adam update over `names` (default: all parameters).

        Every selected parameter must carry a gradient; gradients of the
        selected parameters are cleared afterwards.
        """
        selected = list(names) if names is not None else list(self._params)
        for name in selected:
            if name not in self._params:
                raise KeyError(f"unknown parameter {name!r}")
            if self._params[name].grad is None:
                raise MissingGradient(f"no gradient accumulated for {name!r}")
        for name in selected:
            tensor = self._params[name]
            g = tensor.grad
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
            tensor.grad = None

    # Serialization as flat named arrays (see checkpoint module).
    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, tensor in self._params.items():
            out[name] = tensor.data
            out[f"adam_m/{name}"] = self._m[name]
            out[f"adam_v/{name}"] = self._v[name]
        return out

    def step_counts(self) -> dict[str, int]:
        return dict(self._t)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray],
                    step_counts: dict[str, int] | None = None,
                    dtype=np.float64) -> "ParamStore":
        store = cls(dtype=dtype)
        names = [n for n in arrays if not n.startswith(("adam_m/", "adam_v/"))]
        for name in names:
            store.add(name, arrays[name])
            if f"adam_m/{name}" in arrays:
                store._m[name] = np.array(arrays[f"adam_m/{name}"], dtype=store.dtype, copy=True)
            if f"adam_v/{name}" in arrays:
                store._v[name] = np.array(arrays[f"adam_v/{name}"], dtype=store.dtype, copy=True)
            if step_counts and name in step_counts:
                store._t[name] = int(step_counts[name])
        return store

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> list[str]:
        """Overwrite matching parameters in place; returns the names loaded."""
        loaded = []
        for name, tensor in self._params.items():
            if name.startswith(prefix) and name in arrays:
                src = arrays[name]
                if src.shape != tensor.data.shape:
                    raise ValueError(f"shape mismatch restoring {name!r}")
                tensor.data[...] = src
                loaded.append(name)
        return loaded
