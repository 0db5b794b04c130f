"""
Forward noising, the clean-signal objective and the DDIM / DDPM samplers.

The network predicts the clean motion x0 directly. An epsilon-predicting
variant is supported via `predict_noise`; samplers always consume a
denoiser callable that returns x0_hat, built by make_denoiser.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .exceptions import DimensionError, DivisionGuardError, MotionSrcError
from .network import MlpConfig, ModelParams, diffusion_backward, diffusion_forward

logger = logging.getLogger(__name__)

BETA_MAX = 0.999
COSINE_OFFSET = 0.008

Denoiser = Callable[[np.ndarray, np.ndarray, int], np.ndarray]
StepCallback = Callable[[int, int], None]


# ---------------------------------------------------------------------
#  SCHEDULE
# ---------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            raise MotionSrcError(f"Timesteps must be integers, got {t.dtype}")
        if np.any(t < 0) or np.any(t >= self.T):
            raise MotionSrcError(f"Timestep out of range [0, {self.T}): {t}")
        return t


def cosine_schedule(T: int = 1000, s: float = COSINE_OFFSET) -> NoiseSchedule:
    """
    f(u) = cos^2(((u/T + s) / (1 + s)) * pi/2), betas from consecutive ratios
    of f, clipped to BETA_MAX. alpha_bar is the running product of the clipped
    alphas so it stays consistent with the per-step betas.
    """
    if T < 1:
        raise MotionSrcError(f"T must be >= 1, got {T}")
    u = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((u / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    ratio = f / f[0]
    betas = np.clip(1.0 - ratio[1:] / ratio[:-1], 0.0, BETA_MAX)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas, alphas, alpha_bars)


def _coef(values: np.ndarray, t, ndim: int) -> np.ndarray:
    """Gather per-timestep coefficients and shape them to broadcast over [..., N, C]."""
    c = values[t]
    if np.ndim(c) == 0:
        return c
    return c.reshape(c.shape + (1,) * (ndim - c.ndim))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps. t may be per sample, shape x0.shape[:-2]."""
    if eps.shape != x0.shape:
        raise DimensionError(f"Noise {eps.shape} doesn't match x0 {x0.shape}")
    t = sched.check_t(t)
    ab = _coef(sched.alpha_bars, t, x0.ndim)
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(x0.dtype, copy=False)


def x0_to_eps(x_t: np.ndarray, x0_hat: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    t = sched.check_t(t)
    ab = _coef(sched.alpha_bars, t, x_t.ndim)
    if np.any(ab >= 1.0):
        logger.error("x0_to_eps called with alpha_bar = 1 at t=%s", t)
        raise DivisionGuardError("alpha_bar is 1; noise is undefined")
    return ((x_t - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)).astype(x_t.dtype, copy=False)


def eps_to_x0(x_t: np.ndarray, eps_hat: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    t = sched.check_t(t)
    ab = _coef(sched.alpha_bars, t, x_t.ndim)
    return ((x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)).astype(x_t.dtype, copy=False)


# ---------------------------------------------------------------------
#  TRAINING OBJECTIVE
# ---------------------------------------------------------------------
GeometricTerm = Callable[[np.ndarray], Tuple[Dict[str, float], np.ndarray]]


def training_loss_dm(
    params: ModelParams,
    config: MlpConfig,
    x0: np.ndarray,
    p: np.ndarray,
    t,
    eps: np.ndarray,
    sched: NoiseSchedule,
    predict_noise: bool = False,
    geometric: Optional[GeometricTerm] = None,
) -> Tuple[float, Dict[str, float]]:
    """
    Zeroes params' gradients, runs one forward/backward and leaves dL/dparams
    in the gradient buffers. Returns (total loss, per-term values).

    The simple term is the mean squared error against x0, or against eps when
    predict_noise is set. `geometric`, if given, maps x0_hat to weighted extra
    terms and their gradient with respect to x0_hat.
    """
    params.zero_grad()
    x_t = q_sample(x0, t, eps, sched)
    out, cache = diffusion_forward(params, config, x_t, p, t)

    target = eps if predict_noise else x0
    diff = out.astype(np.float64) - target
    loss_dm = float(np.mean(diff**2))
    d_out = (2.0 / diff.size) * diff

    terms = {"dm": loss_dm}
    total = loss_dm
    if geometric is not None:
        if predict_noise:
            x0_hat = eps_to_x0(x_t, out, t, sched)
        else:
            x0_hat = out
        geo_terms, d_x0_hat = geometric(x0_hat)
        if predict_noise:
            ab = _coef(sched.alpha_bars, np.asarray(t), x_t.ndim)
            d_x0_hat = d_x0_hat * (-np.sqrt(1.0 - ab) / np.sqrt(ab))
        d_out = d_out + d_x0_hat
        terms.update(geo_terms)
        total += float(sum(geo_terms.values()))

    diffusion_backward(params, config, cache, d_out.astype(out.dtype))
    terms["total"] = total
    return total, terms


# ---------------------------------------------------------------------
#  SAMPLING
# ---------------------------------------------------------------------
SAMPLER_KINDS = ("ddim", "ddpm")


@dataclass
class SamplerSpec:
    kind: str = "ddim"
    num_steps: int = 5

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in SAMPLER_KINDS:
            raise MotionSrcError(f"Unknown sampler '{self.kind}'")
        if self.num_steps < 1:
            raise MotionSrcError("num_steps must be >= 1")

    def timesteps(self, sched: NoiseSchedule) -> List[int]:
        if self.kind == "ddpm":
            return list(range(sched.T - 1, -1, -1))
        return ddim_timestep_subset(sched.T, self.num_steps)


def ddim_timestep_subset(T: int, K: int) -> List[int]:
    """Evenly spaced, strictly decreasing: floor(T*(K-i)/K) - 1 for i in 0..K-1."""
    if not 1 <= K <= T:
        raise MotionSrcError(f"Need 1 <= K <= T, got K={K}, T={T}")
    return [(T * (K - i)) // K - 1 for i in range(K)]


def make_denoiser(
    params: ModelParams,
    config: MlpConfig,
    predict_noise: bool = False,
    sched: Optional[NoiseSchedule] = None,
) -> Denoiser:
    """Wrap a trained network as (x_t, p, t) -> x0_hat."""
    if predict_noise and sched is None:
        raise MotionSrcError("An epsilon-predicting model needs the schedule to recover x0")

    def denoise(x_t: np.ndarray, p: np.ndarray, t: int) -> np.ndarray:
        out, _ = diffusion_forward(params, config, x_t, p, t)
        if predict_noise:
            return eps_to_x0(x_t, out, t, sched)
        return out

    return denoise


def _as_rng(rng) -> "np.random.Generator":
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    return rng


def _initial_noise(rng, p: np.ndarray, out_dim: int, dtype) -> np.ndarray:
    return rng.standard_normal(p.shape[:-1] + (out_dim,)).astype(dtype)


def ddim_sample(
    denoiser: Denoiser,
    p: np.ndarray,
    spec: SamplerSpec,
    sched: NoiseSchedule,
    rng: Union[int, np.random.Generator, None] = 0,
    out_dim: int = 132,
    on_step: Optional[StepCallback] = None,
) -> np.ndarray:
    """Deterministic DDIM (eta = 0). The generator is read once, for x_T."""
    steps = ddim_timestep_subset(sched.T, spec.num_steps)
    if not steps:
        raise MotionSrcError("Empty timestep subset")
    rng = _as_rng(rng)
    x = _initial_noise(rng, p, out_dim, p.dtype)
    ab = sched.alpha_bars

    for k, t in enumerate(steps):
        x0_hat = denoiser(x, p, t)
        if on_step is not None:
            on_step(k, t)
        if k == len(steps) - 1:
            return x0_hat
        eps_hat = x0_to_eps(x, x0_hat, t, sched)
        t_next = steps[k + 1]
        x = (np.sqrt(ab[t_next]) * x0_hat + np.sqrt(1.0 - ab[t_next]) * eps_hat).astype(x.dtype)
    return x


def ddpm_sample(
    denoiser: Denoiser,
    p: np.ndarray,
    sched: NoiseSchedule,
    rng: Union[int, np.random.Generator, None] = 0,
    out_dim: int = 132,
    stochastic: bool = True,
    on_step: Optional[StepCallback] = None,
) -> np.ndarray:
    """
    Ancestral sampling over all T steps with sigma_t^2 = beta_t:

        mu = (x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(alpha_t)
        x_{t-1} = mu + sigma_t z,   z = 0 at t = 0 or when not stochastic
    """
    rng = _as_rng(rng)
    x = _initial_noise(rng, p, out_dim, p.dtype)
    for k, t in enumerate(range(sched.T - 1, -1, -1)):
        x0_hat = denoiser(x, p, t)
        if on_step is not None:
            on_step(k, t)
        eps_hat = x0_to_eps(x, x0_hat, t, sched)
        beta, alpha, ab = sched.betas[t], sched.alphas[t], sched.alpha_bars[t]
        mu = (x - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)
        if t > 0 and stochastic:
            z = rng.standard_normal(x.shape)
            mu = mu + np.sqrt(beta) * z
        x = mu.astype(x.dtype)
    return x
