"""Minimal numpy neural-network engine with hand-written backward passes."""
from .functional import (
    activation_forward,
    conv2d_forward,
    cross_entropy,
    dense_forward,
    gru_forward,
    maxpool2d_forward,
)
from .graph import Sequential
from .layers import (
    GRU,
    BottomCrop,
    Conv2D,
    Dense,
    Flatten,
    Layer,
    MaxPool2D,
    ReLU,
    RowSequence,
    Sigmoid,
    Softmax,
    Tanh,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "BottomCrop", "Conv2D", "Dense", "Flatten", "GRU", "Layer",
    "MaxPool2D", "ReLU", "RowSequence", "Sequential", "Sigmoid", "Softmax", "Tanh",
    "activation_forward", "adam_step", "conv2d_forward", "cross_entropy", "dense_forward",
    "gru_forward", "maxpool2d_forward",
]
