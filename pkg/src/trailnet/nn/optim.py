from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update, applied in place to param, m and v."""
    if not (param.shape == grad.shape == state.m.shape == state.v.shape):
        raise ConfigurationError(
            f"adam: shape mismatch param {param.shape} grad {grad.shape} "
            f"m {state.m.shape} v {state.v.shape}"
        )
    state.t += 1
    m, v = state.m, state.v
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * (grad * grad)
    bc1 = 1 - beta1**state.t
    bc2 = 1 - beta2**state.t
    step = np.sqrt(v / bc2)
    step += eps
    np.divide(m, step, out=step)
    step *= lr / bc1
    param -= step.astype(param.dtype, copy=False)
    return param, state


@dataclass
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, model):
        for qname, layer, key in model.parameters():
            param = layer.params[key]
            state = self.states.get(qname)
            if state is None:
                state = self.states[qname] = AdamState.zeros_like(param)
            adam_step(param, layer.grads[key], state, self.lr, self.beta1, self.beta2, self.eps)
