"""Synthetic trail perception testbed: scene generation, from-scratch neural
networks, training, closed-loop driving and a UDP inference service."""

__version__ = "0.1.0"

LABELS = ("left", "center", "right")
LEFT, CENTER, RIGHT = 0, 1, 2
