"""The three trail classifiers (dense, convolutional, recurrent) and prediction."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import LABELS
from .errors import ConfigurationError, FormatError, InputError, StateError
from .nn import (
    GRU,
    BottomCrop,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ReLU,
    RowSequence,
    Sequential,
    Sigmoid,
    Softmax,
)
from .nn.weights import decode_weights, encode_weights

IMAGE_SHAPE = (100, 100, 3)
NUM_CLASSES = 3
KIND_CODES = {"dnn": 0, "cnn": 1, "rnn": 2}
ROW_ORDERS = ("top-to-bottom", "bottom-to-top")
CROP_FRACTIONS = {"1": 1.0, "2/3": 2 / 3, "1/2": 0.5}
DNN_HIDDEN = (256, 128, 64)
CNN_FILTERS = 32
CNN_KERNEL = 4
CNN_BLOCKS = 4
CNN_DENSE = 200
GRU_HIDDEN = 32


def crop_rows(fraction: float, height: int = IMAGE_SHAPE[0]) -> int:
    """Rows kept by a bottom crop, rounded to the nearest whole row (2/3 -> 67)."""
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"crop fraction must be in (0, 1], got {fraction}")
    return int(np.floor(height * fraction + 0.5))


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    row_order: str = "top-to-bottom"
    crop: float = 1.0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ConfigurationError(f"unknown model kind {self.kind!r}; expected dnn, cnn or rnn")
        if self.row_order not in ROW_ORDERS:
            raise ConfigurationError(f"unknown row order {self.row_order!r}")
        if self.row_order != "top-to-bottom" and self.kind != "rnn":
            raise ConfigurationError("row order only applies to the rnn model")
        crop_rows(self.crop)

    @property
    def rows(self) -> int:
        return crop_rows(self.crop)


@dataclass
class Prediction:
    probs: np.ndarray
    label: int

    @classmethod
    def from_probs(cls, probs) -> "Prediction":
        probs = np.asarray(probs)
        return cls(probs, int(np.argmax(probs)))

    @property
    def name(self) -> str:
        return LABELS[self.label]


def build_dnn(crop: float = 1.0) -> Sequential:
    rows = crop_rows(crop)
    widths = (rows * IMAGE_SHAPE[1] * IMAGE_SHAPE[2],) + DNN_HIDDEN
    layers, names = [BottomCrop(rows), Flatten()], ["crop", "flatten"]
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]), start=1):
        layers += [Dense(a, b), ReLU()]
        names += [f"dense{i}", f"relu{i}"]
    layers += [Dense(widths[-1], NUM_CLASSES), Softmax()]
    names += ["output", "softmax"]
    return Sequential(layers, names)


def build_cnn(crop: float = 1.0) -> Sequential:
    rows = crop_rows(crop)
    layers, names = [BottomCrop(rows, mode="zero")], ["crop"]
    channels, size = IMAGE_SHAPE[2], IMAGE_SHAPE[0]
    for i in range(1, CNN_BLOCKS + 1):
        layers += [Conv2D(channels, CNN_FILTERS, CNN_KERNEL, 1), Sigmoid(), MaxPool2D(2, 2)]
        names += [f"conv{i}", f"sigmoid{i}", f"pool{i}"]
        channels, size = CNN_FILTERS, size // 2
    layers += [
        Flatten(),
        Dense(size * size * channels, CNN_DENSE),
        Sigmoid(),
        Dense(CNN_DENSE, NUM_CLASSES),
        Softmax(),
    ]
    names += ["flatten", "dense1", "sigmoid5", "output", "softmax"]
    return Sequential(layers, names)


def build_rnn(row_order: str = "top-to-bottom", crop: float = 1.0) -> Sequential:
    if row_order not in ROW_ORDERS:
        raise ConfigurationError(f"unknown row order {row_order!r}")
    rows = crop_rows(crop)
    width = IMAGE_SHAPE[1] * IMAGE_SHAPE[2]
    layers = [
        BottomCrop(rows),
        RowSequence(bottom_to_top=row_order == "bottom-to-top"),
        GRU(width, GRU_HIDDEN, return_sequences=True),
        GRU(GRU_HIDDEN, GRU_HIDDEN),
        Dense(GRU_HIDDEN, NUM_CLASSES),
        Softmax(),
    ]
    return Sequential(layers, ["crop", "sequence", "gru1", "gru2", "output", "softmax"])


def image_to_sequence(image: np.ndarray, order: str = "top-to-bottom") -> np.ndarray:
    """(100, 100, 3) image -> (100, 300) sequence, one timestep per row."""
    image = np.asarray(image)
    if image.shape != IMAGE_SHAPE:
        raise InputError(f"expected image of shape {IMAGE_SHAPE}, got {image.shape}")
    if order not in ROW_ORDERS:
        raise ConfigurationError(f"unknown row order {order!r}")
    return RowSequence(order == "bottom-to-top").forward(image[None])[0]


class TrailModel:
    """A built architecture plus its parameters."""

    def __init__(self, spec: ModelSpec, graph: Sequential | None = None):
        self.spec = spec
        if graph is None:
            if spec.kind == "dnn":
                graph = build_dnn(spec.crop)
            elif spec.kind == "cnn":
                graph = build_cnn(spec.crop)
            else:
                graph = build_rnn(spec.row_order, spec.crop)
        self.graph = graph

    @classmethod
    def create(cls, spec: ModelSpec, seed: int, dtype=np.float32) -> "TrailModel":
        model = cls(spec)
        model.graph.init_params(np.random.default_rng(seed), dtype)
        return model

    def _check(self, images: np.ndarray) -> np.ndarray:
        if images.ndim != 4 or images.shape[1:] != IMAGE_SHAPE:
            raise InputError(f"expected images of shape (N, 100, 100, 3), got {images.shape}")
        return images

    def forward(self, images: np.ndarray) -> np.ndarray:
        return self.graph.forward(self._check(images))

    def predict_proba(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        self._check(images)
        out = [self.graph.forward(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
        self.graph.clear()
        return np.concatenate(out) if out else np.empty((0, NUM_CLASSES), np.float32)

    def predict(self, image: np.ndarray) -> Prediction:
        image = np.asarray(image)
        if image.shape != IMAGE_SHAPE:
            raise InputError(f"expected image of shape {IMAGE_SHAPE}, got {image.shape}")
        if image.min() < 0 or image.max() > 1:
            raise InputError("image must be normalized to [0, 1]")
        probs = self.graph.forward(image[None].astype(self.dtype, copy=False))[0]
        self.graph.clear()
        return Prediction.from_probs(probs)

    @property
    def dtype(self):
        for _, layer, key in self.graph.parameters():
            return layer.params[key].dtype
        return np.float32

    def param_count(self) -> int:
        return self.graph.param_count()

    def options_tensor(self) -> np.ndarray:
        return np.array(
            [ROW_ORDERS.index(self.spec.row_order), self.spec.rows], dtype=np.float32
        )

    def to_bytes(self) -> bytes:
        tensors = [("options", self.options_tensor())] + self.graph.named_tensors()
        return encode_weights(KIND_CODES[self.spec.kind], tensors)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "TrailModel":
        kind_code, tensors = decode_weights(buf)
        kinds = {v: k for k, v in KIND_CODES.items()}
        if kind_code not in kinds:
            raise FormatError(f"unknown model kind code {kind_code}")
        table = dict(tensors)
        opts = table.pop("options", np.array([0, IMAGE_SHAPE[0]], np.float32))
        rows = int(opts[1])
        crop = next(
            (f for f in CROP_FRACTIONS.values() if crop_rows(f) == rows), rows / IMAGE_SHAPE[0]
        )
        spec = ModelSpec(kinds[kind_code], ROW_ORDERS[int(opts[0])], crop)
        model = cls(spec)
        missing = [q for q, _, _ in model.graph.parameters() if q not in table]
        if missing:
            raise FormatError(f"weight file lacks tensors {missing}")
        model.graph.init_params(np.random.default_rng(0), np.float32)
        try:
            model.graph.load_tensors(table)
        except StateError as exc:
            raise FormatError(str(exc)) from None
        return model

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TrailModel":
        return cls.from_bytes(Path(path).read_bytes())

    def copy_params(self) -> dict[str, np.ndarray]:
        return {q: layer.params[k].copy() for q, layer, k in self.graph.parameters()}

    def set_params(self, params: dict[str, np.ndarray]):
        for q, layer, k in self.graph.parameters():
            layer.params[k] = params[q].copy()
