"""Sequential model graph: forward, fused softmax/cross-entropy backward."""
from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from ..errors import StateError
from . import functional as F
from .layers import Layer, Softmax


class Sequential:
    def __init__(self, layers: list[Layer], names: list[str] | None = None):
        self.layers = list(layers)
        if names is None:
            names = [f"{layer.kind}{i}" for i, layer in enumerate(self.layers)]
        self.names = list(names)
        self._probs = None

    def init_params(self, rng: np.random.Generator, dtype=np.float32):
        for layer in self.layers:
            layer.init_params(rng, dtype)
        self._mark_input_layer()

    def _mark_input_layer(self):
        # parameters before the first trainable layer need no input gradient
        for layer in self.layers:
            if layer.params:
                layer.need_input_grad = False
                break
            layer.need_input_grad = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        self._probs = x
        return x

    def backward(self, dout: np.ndarray, start: int | None = None) -> np.ndarray | None:
        layers = self.layers if start is None else self.layers[:start]
        for layer in reversed(layers):
            dout = layer.backward(dout)
            if dout is None:
                break
        return dout

    def loss_and_backward(self, x: np.ndarray, labels: np.ndarray) -> float:
        """Forward, mean cross-entropy and gradients for every parameter."""
        probs = self.forward(x)
        loss = F.cross_entropy(probs, labels)
        self.backward_from_probs(probs, labels)
        return loss

    def backward_from_probs(self, probs: np.ndarray, labels: np.ndarray):
        if self._probs is None:
            raise StateError("backward called before forward")
        if isinstance(self.layers[-1], Softmax):
            self.backward(F.softmax_cross_entropy_grad(probs, labels), start=len(self.layers) - 1)
        else:
            labels = np.asarray(labels)
            picked = probs[np.arange(labels.shape[0]), labels]
            dprobs = np.zeros_like(probs)
            dprobs[np.arange(labels.shape[0]), labels] = -1.0 / (
                np.maximum(picked, F.PROB_FLOOR) * labels.shape[0]
            )
            self.backward(dprobs)

    def clear(self):
        self._probs = None
        for layer in self.layers:
            layer.clear()

    def parameters(self) -> Iterator[tuple[str, Layer, str]]:
        for name, layer in zip(self.names, self.layers):
            for key in layer.params:
                yield f"{name}.{key}", layer, key

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(qname, layer.params[key]) for qname, layer, key in self.parameters()]

    def load_tensors(self, tensors: dict[str, np.ndarray]):
        for qname, layer, key in self.parameters():
            arr = tensors[qname]
            if arr.shape != layer.params[key].shape:
                raise StateError(
                    f"tensor {qname}: shape {arr.shape} != expected {layer.params[key].shape}"
                )
            layer.params[key] = arr.astype(layer.params[key].dtype, copy=True)

    def param_count(self) -> int:
        return sum(layer.params[key].size for _, layer, key in self.parameters())

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def shapes(self, input_shape: tuple) -> list[tuple]:
        """Per-layer output shapes (without batch axis) for a given input shape."""
        out = []
        shape = tuple(input_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append(shape)
        return out

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"Sequential([{inner}])"
