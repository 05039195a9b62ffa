"""Central finite-difference oracle for the layer backward passes."""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ..errors import StateError
from . import functional as F
from .graph import Sequential
from .layers import (
    GRU,
    Conv2D,
    Dense,
    Flatten,
    Layer,
    MaxPool2D,
    ReLU,
    Sigmoid,
    Softmax,
    Tanh,
)

TOLERANCE = 1e-4


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def finite_difference_grad(
    loss_fn: Callable[[], float],
    param: np.ndarray,
    h: float = 1e-5,
    indices: list[tuple] | None = None,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
):
    """Central differences of loss_fn with respect to entries of param.

    param is perturbed in place and restored. With max_coords set, a random
    subset of coordinates is checked. Returns (indices, numeric gradients).
    """
    if param.dtype != np.float64:
        raise StateError("finite differences need float64 parameters")
    if indices is None:
        all_idx = list(np.ndindex(param.shape))
        if max_coords is not None and len(all_idx) > max_coords:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(all_idx), size=max_coords, replace=False)
            all_idx = [all_idx[i] for i in sorted(pick)]
        indices = all_idx
    numeric = np.empty(len(indices))
    for k, idx in enumerate(indices):
        old = param[idx]
        param[idx] = old + h
        plus = loss_fn()
        param[idx] = old - h
        minus = loss_fn()
        param[idx] = old
        numeric[k] = (plus - minus) / (2 * h)
    return indices, numeric


@dataclass
class GradCheckResult:
    layer: str
    tensor: str
    seed: int
    max_rel_error: float
    worst_index: tuple

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def check_graph(
    name: str,
    graph: Sequential,
    x: np.ndarray,
    loss: Callable[[np.ndarray], float],
    dloss: Callable[[np.ndarray], np.ndarray] | None,
    seed: int,
    labels: np.ndarray | None = None,
    check_input: bool = True,
    max_coords: int = 40,
    h: float = 1e-5,
) -> list[GradCheckResult]:
    """Compare backward against central differences for every parameter
    tensor of graph (and its input, when check_input)."""
    rng = np.random.default_rng(seed + 1000)
    for layer in graph.layers:
        layer.need_input_grad = True
    out = graph.forward(x)
    if labels is not None:
        graph.backward_from_probs(out, labels)
        dx = None
        check_input = False
    else:
        dx = graph.backward(dloss(out))

    def objective():
        return loss(graph.forward(x))

    results = []
    targets = [(qname, layer.params[key], layer.grads[key]) for qname, layer, key in graph.parameters()]
    analytic_all = [g.copy() for _, _, g in targets]
    if check_input:
        targets.append(("input", x, dx))
        analytic_all.append(dx.copy())
    for (qname, tensor, _), analytic in zip(targets, analytic_all):
        idx, numeric = finite_difference_grad(objective, tensor, h, max_coords=max_coords, rng=rng)
        a = np.array([analytic[i] for i in idx])
        err = relative_error(a, numeric)
        worst = int(np.argmax(err))
        results.append(GradCheckResult(name, qname, seed, float(err[worst]), idx[worst]))
    return results


def _projection_loss(rng, shape):
    proj = rng.standard_normal(shape)
    return (lambda out: float((out * proj).sum())), (lambda out: proj.copy())


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-1, 1, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _distinct(rng, shape):
    """Values with pairwise gaps far larger than the difference step."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 + rng.uniform(0, 0.002, n)).reshape(shape)


def _build(layers: list[Layer], seed: int) -> Sequential:
    g = Sequential(layers)
    for layer in g.layers:
        layer.init_params(np.random.default_rng(seed), np.float64)
        # nonzero biases exercise the bias paths
        for key, p in layer.params.items():
            if key == "b":
                layer.params[key] = np.random.default_rng(seed + 7).uniform(-0.5, 0.5, p.shape)
    return g


def layer_cases(seed: int) -> list[tuple]:
    """(name, graph, input, loss, dloss, labels) for every layer kind."""
    rng = np.random.default_rng(seed)
    cases = []
    x = rng.standard_normal((3, 4))
    loss, dloss = _projection_loss(rng, (3, 5))
    cases.append(("dense", _build([Dense(4, 5)], seed), x, loss, dloss, None))

    x = rng.standard_normal((2, 8, 8, 3))
    loss, dloss = _projection_loss(rng, (2, 8, 8, 4))
    cases.append(("conv2d", _build([Conv2D(3, 4, kernel=4, stride=1)], seed), x, loss, dloss, None))

    x = _distinct(rng, (2, 7, 8, 3))
    loss, dloss = _projection_loss(rng, (2, 3, 4, 3))
    cases.append(("maxpool2d", _build([MaxPool2D(2, 2)], seed), x, loss, dloss, None))

    for name, layer in (("relu", ReLU()), ("sigmoid", Sigmoid()), ("tanh", Tanh())):
        x = _away_from_zero(rng, (3, 8, 8, 3)) * 3
        loss, dloss = _projection_loss(rng, (3, 8, 8, 3))
        cases.append((name, _build([layer], seed), x, loss, dloss, None))

    x = rng.standard_normal((4, 3))
    loss, dloss = _projection_loss(rng, (4, 3))
    cases.append(("softmax", _build([Softmax()], seed), x, loss, dloss, None))

    x = rng.standard_normal((5, 6))
    labels = rng.integers(0, 3, size=5)
    graph = _build([Dense(6, 3), Softmax()], seed)
    cases.append(("softmax_xent", graph, x, lambda p, lab=labels: F.cross_entropy(p, lab), None, labels))

    x = rng.standard_normal((2, 5, 6)) * 0.8
    loss, dloss = _projection_loss(rng, (2, 4))
    graph = _build([GRU(6, 4, return_sequences=True), GRU(4, 4)], seed)
    cases.append(("gru", graph, x, loss, dloss, None))

    x = rng.standard_normal((2, 4, 4, 3))
    labels = rng.integers(0, 3, size=2)
    graph = _build(
        [Conv2D(3, 2, 2), Sigmoid(), MaxPool2D(), Flatten(), Dense(8, 3), Softmax()], seed
    )
    cases.append(("conv_stack", graph, x, lambda p, lab=labels: F.cross_entropy(p, lab), None, labels))
    return cases


def run_suite(seeds=(0, 1, 2, 3, 4), max_coords: int = 40) -> list[GradCheckResult]:
    results = []
    for seed in seeds:
        for name, graph, x, loss, dloss, labels in layer_cases(seed):
            results.extend(
                check_graph(name, graph, x, loss, dloss, seed, labels=labels, max_coords=max_coords)
            )
    return results
