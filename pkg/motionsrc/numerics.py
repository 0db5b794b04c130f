"""
Dense-array primitives with exact gradients, plus Adam/AdamW.

All ops take numpy arrays with the feature axis last and any number of
leading axes (frames, or batch x frames). They keep the input dtype: float32
in training and sampling, float64 in gradient checks. Reductions accumulate
in float64.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DimensionError, MotionSrcError

logger = logging.getLogger(__name__)

LAYERNORM_EPS = 1e-5


# ---------------------------------------------------------------------
#  PARAMETERS
# ---------------------------------------------------------------------
@dataclass
class ParamWithGrad:
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(
                f"Gradient shape {self.grad.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self) -> None:
        self.grad.fill(0)


def _check_last_dim(x: np.ndarray, size: int, what: str) -> None:
    if x.shape[-1] != size:
        raise DimensionError(f"{what}: expected last dim {size}, got shape {x.shape}")


# ---------------------------------------------------------------------
#  LINEAR
# ---------------------------------------------------------------------
def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out[..., j] = sum_a x[..., a] * W[a, j] + b[j]"""
    if W.ndim != 2 or b.shape != (W.shape[1],):
        raise DimensionError(f"Weight {W.shape} and bias {b.shape} don't conform")
    _check_last_dim(x, W.shape[0], "linear_forward input")
    return x @ W + b


def linear_backward(
    x: np.ndarray, W: np.ndarray, d_out: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dX, dW, db) for linear_forward(x, W, b)."""
    _check_last_dim(x, W.shape[0], "linear_backward input")
    _check_last_dim(d_out, W.shape[1], "linear_backward upstream grad")
    if x.shape[:-1] != d_out.shape[:-1]:
        raise DimensionError(f"Leading dims differ: {x.shape} vs {d_out.shape}")

    x2 = x.reshape(-1, W.shape[0])
    d2 = d_out.reshape(-1, W.shape[1])
    dW = (x2.T @ d2).astype(W.dtype, copy=False)
    db = d2.sum(axis=0, dtype=np.float64).astype(W.dtype)
    dX = d_out @ W.T
    return dX, dW, db


# ---------------------------------------------------------------------
#  LAYER NORM
# ---------------------------------------------------------------------
class LayerNormCache(NamedTuple):
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    mean: np.ndarray
    var: np.ndarray


def layernorm_forward(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LAYERNORM_EPS
) -> Tuple[np.ndarray, LayerNormCache]:
    if x.shape[-1] < 1:
        raise DimensionError("layernorm over an empty feature axis")
    _check_last_dim(x, gamma.shape[0], "layernorm gamma")
    _check_last_dim(x, beta.shape[0], "layernorm beta")

    # row statistics accumulate in float64; the full tensor stays in x.dtype
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float64).astype(x.dtype)
    centered = x - mean
    var = np.square(centered).mean(axis=-1, keepdims=True, dtype=np.float64)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    x_hat = centered * inv_std
    out = gamma * x_hat + beta
    return out, LayerNormCache(x_hat, inv_std, gamma, mean, var.astype(x.dtype))


def layernorm_backward(
    cache: LayerNormCache, d_out: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dX, dGamma, dBeta)."""
    x_hat, inv_std, gamma = cache.x_hat, cache.inv_std, cache.gamma
    if d_out.shape != x_hat.shape:
        raise DimensionError(f"Upstream grad {d_out.shape} != cached {x_hat.shape}")

    D = x_hat.shape[-1]
    flat_dout = d_out.reshape(-1, D)
    flat_xhat = x_hat.reshape(-1, D)
    d_gamma = (flat_dout * flat_xhat).sum(axis=0, dtype=np.float64).astype(gamma.dtype)
    d_beta = flat_dout.sum(axis=0, dtype=np.float64).astype(gamma.dtype)

    d_xhat = d_out * gamma
    sum_d = d_xhat.sum(axis=-1, keepdims=True, dtype=np.float64).astype(x_hat.dtype)
    sum_dx = (d_xhat * x_hat).sum(axis=-1, keepdims=True, dtype=np.float64).astype(x_hat.dtype)
    d_x = (inv_std / D) * (D * d_xhat - sum_d - x_hat * sum_dx)
    return d_x.astype(x_hat.dtype, copy=False), d_gamma, d_beta


# ---------------------------------------------------------------------
#  SILU
# ---------------------------------------------------------------------
def _as_float(x) -> np.ndarray:
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(np.float64)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(x))
    r = 1.0 / (1.0 + e)
    return np.where(x >= 0, r, e * r)


def silu(x: np.ndarray) -> np.ndarray:
    x = _as_float(x)
    if x.ndim == 0:
        return silu(x.reshape(1))[0]
    return x * _sigmoid(x)


def silu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    x = _as_float(x)
    if x.ndim == 0:
        return silu_backward(x.reshape(1), np.asarray(d_out).reshape(1))[0]
    s = _sigmoid(x)
    return d_out * (s + x * s * (1.0 - s))


# ---------------------------------------------------------------------
#  OPTIMIZERS
# ---------------------------------------------------------------------
OPTIMIZER_KINDS = ("adam", "adamw")


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in OPTIMIZER_KINDS:
            raise MotionSrcError(f"Unknown optimizer kind: {self.kind}")


def make_optimizer(kind: str, params: Sequence[ParamWithGrad], **hyper) -> OptimizerState:
    state = OptimizerState(kind=kind, **hyper)
    state.m = [np.zeros_like(p.value) for p in params]
    state.v = [np.zeros_like(p.value) for p in params]
    return state


def optimizer_step(state: OptimizerState, params: Sequence[ParamWithGrad]) -> None:
    """
    One bias-corrected Adam step over every parameter, in list order.
    AdamW decays the parameter (param *= 1 - lr*wd) before the Adam update;
    plain Adam folds weight decay into the gradient as an L2 term.
    """
    if len(state.m) != len(params):
        raise DimensionError(
            f"Optimizer holds {len(state.m)} moment buffers for {len(params)} params"
        )
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t

    for i, p in enumerate(params):
        g = p.grad
        if state.kind == "adam" and state.weight_decay:
            g = g + state.weight_decay * p.value
        if state.kind == "adamw" and state.weight_decay:
            p.value *= 1.0 - state.lr * state.weight_decay

        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.value.dtype)


# ---------------------------------------------------------------------
#  GRADIENT CHECKING
# ---------------------------------------------------------------------
def numerical_gradient(
    f: Callable[[], float], x: np.ndarray, h: float = 1e-3, indices: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Central differences of the scalar f() with respect to x, perturbed in place.
    If indices (flat) is given only those entries are perturbed; others stay 0.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    entries = range(flat_x.size) if indices is None else indices
    for i in entries:
        old = flat_x[i]
        flat_x[i] = old + h
        f_plus = f()
        flat_x[i] = old - h
        f_minus = f()
        flat_x[i] = old
        flat_g[i] = (f_plus - f_minus) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max|a-b| / max(max|a|, max|b|, floor)"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)
