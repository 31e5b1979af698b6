"""Neural building blocks on top of the autodiff tape: LSTM cell, init, Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, OptimizationError

INIT_SCALE = 0.1  # parameters start uniform in [-0.1, 0.1]
FORGET_BIAS = 1.0


def uniform_init(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True)


@dataclass
class LstmParams:
    """Weights for one LSTM layer; gate order along the last axis is [i, f, g, o]."""

    wx: Tensor  # (input_dim, 4*hidden)
    wh: Tensor  # (hidden, 4*hidden)
    b: Tensor   # (4*hidden,)

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    @property
    def input_dim(self) -> int:
        return self.wx.shape[0]


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmParams:
    b = rng.uniform(-INIT_SCALE, INIT_SCALE, size=4 * hidden)
    b[hidden:2 * hidden] = FORGET_BIAS
    return LstmParams(
        wx=uniform_init(rng, input_dim, 4 * hidden),
        wh=uniform_init(rng, hidden, 4 * hidden),
        b=Tensor(b, requires_grad=True),
    )


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One step: sigmoid input/forget/output gates, tanh candidate.

    c' = f*c + i*g ; h' = o*tanh(c'). Inputs are (batch, dim) matrices.
    """
    hid = params.hidden
    if x.shape[-1] != params.input_dim or h.shape[-1] != hid or c.shape[-1] != hid:
        raise DimensionError(
            f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape} vs params "
            f"(input_dim={params.input_dim}, hidden={hid})")
    pre = ad.add(ad.add(ad.matmul(x, params.wx), ad.matmul(h, params.wh)), params.b)
    i = ad.sigmoid(ad.slice_axis(pre, 0, hid))
    f = ad.sigmoid(ad.slice_axis(pre, hid, 2 * hid))
    g = ad.tanh(ad.slice_axis(pre, 2 * hid, 3 * hid))
    o = ad.sigmoid(ad.slice_axis(pre, 3 * hid, 4 * hid))
    c2 = ad.add(ad.mul(f, c), ad.mul(i, g))
    h2 = ad.mul(o, ad.tanh(c2))
    return h2, c2


@dataclass
class AdamState:
    """Per-parameter moments; step counter k counts completed updates."""

    m: np.ndarray
    s: np.ndarray
    k: int = 0

    @classmethod
    def zeros_like(cls, param: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(param.data), s=np.zeros_like(param.data), k=0)


def adam_step(param: Tensor, grad, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              name: str = "") -> tuple[Tensor, AdamState]:
    """Bias-corrected Adam update; returns the new parameter and state."""
    if lr <= 0:
        raise OptimizationError(f"adam_step: lr must be positive, got {lr}")
    g = grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)
    if g.shape != param.data.shape:
        raise DimensionError(f"adam_step: grad {g.shape} vs param {param.data.shape}")
    if not np.all(np.isfinite(g)):
        raise OptimizationError(f"adam_step: non-finite gradient for parameter '{name or 'unnamed'}'")
    k = state.k + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    s = beta2 * state.s + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** k)
    s_hat = s / (1.0 - beta2 ** k)
    new_data = param.data - lr * m_hat / (np.sqrt(s_hat) + eps)
    return Tensor(new_data, requires_grad=param.requires_grad), AdamState(m=m, s=s, k=k)


class Adam:
    """Adam over a dict of named parameters. Missing gradients leave a parameter untouched."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states: dict[str, AdamState] = {}

    def step(self, params: dict[str, Tensor], grads: dict[Tensor, np.ndarray]) -> dict[str, Tensor]:
        new_params = {}
        for name, p in params.items():
            g = grads.get(p)
            if g is None:
                new_params[name] = p
                continue
            state = self.states.get(name)
            if state is None:
                state = AdamState.zeros_like(p)
            new_p, new_state = adam_step(p, g, state, self.lr, self.beta1, self.beta2,
                                         self.eps, name=name)
            self.states[name] = new_state
            new_params[name] = new_p
        return new_params
