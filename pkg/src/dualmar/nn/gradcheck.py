"""Central finite-difference verification of analytic gradients.

Used both by the test suite and the `gradcheck` CLI command.  The builder
callback receives a dict of named Tensors and must return a scalar Tensor;
it has to be deterministic (seed any internal randomness per call).
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor

DEFAULT_EPS = 1e-5
DEFAULT_FLOOR = 1e-2


def numeric_gradients(f: Callable[[Mapping[str, np.ndarray]], float],
                      arrays: Mapping[str, np.ndarray],
                      eps: float = DEFAULT_EPS) -> dict[str, np.ndarray]:
    """Central differences of a scalar function, entry by entry."""
    grads: dict[str, np.ndarray] = {}
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in arrays.items()}
    for name, base in work.items():
        g = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = base[idx]
            base[idx] = orig + eps
            fp = f(work)
            base[idx] = orig - eps
            fm = f(work)
            base[idx] = orig
            g[idx] = (fp - fm) / (2.0 * eps)
            it.iternext()
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = DEFAULT_FLOOR) -> float:
    """Worst entrywise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def max_relative_error(build: Callable[[dict[str, Tensor]], Tensor],
                       arrays: Mapping[str, np.ndarray],
                       eps: float = DEFAULT_EPS,
                       floor: float = DEFAULT_FLOOR) -> float:
    """Compare backward-pass gradients of `build` against central differences."""
    params = {k: Tensor(np.array(v, dtype=np.float64, copy=True), requires_grad=True)
              for k, v in arrays.items()}
    out = build(params)
    out.backward()

    def f(arrs: Mapping[str, np.ndarray]) -> float:
        return build({k: Tensor(np.array(v, copy=True)) for k, v in arrs.items()}).item()

    numeric = numeric_gradients(f, arrays, eps=eps)
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numeric[name], floor))
    return worst


def _away_from_zero(rng: np.random.Generator, shape, low=0.1, high=1.0) -> np.ndarray:
    """Values with |x| in [low, high]: keeps relu/leaky-relu kinks out of the
    finite-difference stencil."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def standard_suite(seed: int = 0) -> list[tuple[str, Callable, dict[str, np.ndarray]]]:
    """One named check per differentiable primitive plus the composite layers.

    Each entry is (name, build, arrays); run it through max_relative_error.
    Builders are deterministic: any internal randomness is reseeded per call.
    """
    from . import autodiff as ad
    from .layers import (graph_attention_layer, row_normalized_propagation,
                         global_attention)

    rng = np.random.default_rng(seed)
    n, m = 4, 5

    def r(*shape):
        return rng.standard_normal(shape)

    mask = rng.random((n, n)) < 0.5
    np.fill_diagonal(mask, False)
    seg = np.array([0, 0, 1, 2, 2])
    gidx = np.array([0, 2, 2, 1])
    a_hat = rng.random((n, n))
    a_hat /= a_hat.sum(axis=1, keepdims=True)
    probs = rng.uniform(0.05, 0.95, size=(n, m))
    targets01 = (rng.random((n, m)) < 0.5).astype(np.float64)

    cases: list[tuple[str, Callable, dict[str, np.ndarray]]] = [
        ("add", lambda p: ad.mean_all(ad.add(p["a"], p["b"])),
         {"a": r(n, m), "b": r(n, m)}),
        ("add_broadcast", lambda p: ad.mean_all(ad.add(p["a"], p["b"])),
         {"a": r(n, m), "b": r(1, m)}),
        ("sub", lambda p: ad.mean_all(ad.sub(p["a"], p["b"])),
         {"a": r(n, m), "b": r(n, m)}),
        ("mul", lambda p: ad.mean_all(ad.mul(p["a"], p["b"])),
         {"a": r(n, m), "b": r(n, m)}),
        ("div", lambda p: ad.mean_all(ad.div(p["a"], p["b"])),
         {"a": r(n, m), "b": _away_from_zero(rng, (n, m), 0.5, 2.0)}),
        ("matmul", lambda p: ad.mean_all(ad.matmul(p["a"], p["b"])),
         {"a": r(n, 3), "b": r(3, m)}),
        ("transpose", lambda p: ad.mean_all(ad.matmul(ad.transpose(p["a"]), p["a"])),
         {"a": r(n, 3)}),
        ("tanh", lambda p: ad.mean_all(ad.tanh(p["a"])), {"a": r(n, m)}),
        ("relu", lambda p: ad.mean_all(ad.relu(p["a"])),
         {"a": _away_from_zero(rng, (n, m))}),
        ("leaky_relu", lambda p: ad.mean_all(ad.leaky_relu(p["a"], 0.2)),
         {"a": _away_from_zero(rng, (n, m))}),
        ("logistic", lambda p: ad.mean_all(ad.logistic(p["a"])), {"a": r(n, m)}),
        ("exp", lambda p: ad.mean_all(ad.exp(p["a"])), {"a": r(n, m)}),
        ("log", lambda p: ad.mean_all(ad.log(p["a"])),
         {"a": rng.uniform(0.2, 2.0, size=(n, m))}),
        ("row_softmax", lambda p: ad.mean_all(ad.mul(ad.row_softmax(p["a"]), p["v"])),
         {"a": r(n, m), "v": r(n, m)}),
        ("masked_row_softmax",
         lambda p: ad.mean_all(ad.mul(ad.masked_row_softmax(p["a"], mask | np.eye(n, dtype=bool)), p["v"])),
         {"a": r(n, n), "v": r(n, n)}),
        ("neighbor_weighted_sum",
         lambda p: ad.mean_all(ad.masked_neighbor_weighted_sum(
             p["s"], mask | np.eye(n, dtype=bool), p["h"])),
         {"s": r(n, n), "h": r(n, 3)}),
        ("dropout_train",
         lambda p: ad.mean_all(ad.dropout(p["a"], 0.4, np.random.default_rng(5), True)),
         {"a": r(n, m)}),
        ("concat",
         lambda p: ad.mean_all(ad.matmul(ad.concat([p["a"], p["b"]], axis=1), p["w"])),
         {"a": r(n, 2), "b": r(n, 3), "w": r(5, 2)}),
        ("gather_rows_repeated",
         lambda p: ad.mean_all(ad.mul(ad.gather_rows(p["a"], gidx), p["v"])),
         {"a": r(n, m), "v": r(len(gidx), m)}),
        ("segment_sum",
         lambda p: ad.mean_all(ad.mul(ad.segment_sum(p["a"], seg, 3), p["v"])),
         {"a": r(5, 3), "v": r(3, 3)}),
        ("segment_softmax",
         lambda p: ad.mean_all(ad.mul(ad.segment_softmax(p["s"], seg, 3), p["v"])),
         {"s": r(5, 1), "v": r(5, 1)}),
        ("sum_all", lambda p: ad.sum_all(ad.mul(p["a"], p["a"])), {"a": r(n, m)}),
        ("mean_all", lambda p: ad.mean_all(ad.mul(p["a"], p["a"])), {"a": r(n, m)}),
        ("binary_cross_entropy",
         lambda p: ad.mean_all(ad.binary_cross_entropy(ad.logistic(p["z"]), targets01)),
         {"z": r(n, m)}),
        ("bce_with_logits",
         lambda p: ad.mean_all(ad.bce_with_logits(p["z"], targets01)),
         {"z": r(n, m)}),
        ("bce_with_logits_extreme",
         lambda p: ad.mean_all(ad.bce_with_logits(p["z"], targets01)),
         {"z": 20.0 * r(n, m)}),
        ("graph_attention_layer",
         lambda p: ad.mean_all(graph_attention_layer(p["h"], mask, p["w"], p["a"])),
         {"h": r(n, 3), "w": r(3, 4), "a": r(8, 1)}),
        ("row_normalized_propagation",
         lambda p: ad.mean_all(row_normalized_propagation(p["h"], a_hat, p["w"])),
         {"h": r(n, 3), "w": r(3, 4)}),
        ("global_attention",
         lambda p: ad.mean_all(global_attention(p["rows"], p["w"], p["u"])[1]),
         {"rows": r(n, 3), "w": r(3, 4), "u": r(4, 1)}),
    ]
    return cases
