"""
MLP backbone, the diffusion conditioning head and checkpoint files.

Each block mixes information twice, pre-norm residual style:

    h0 = h + u_t                                  (when a timestep is injected)
    h1 = h0 + SiLU(TemporalMap(LN1(h0)))          W_t acts on the frame axis
    h2 = h1 + SiLU(FeatureMap(LN2(h1)))           W_f acts on the feature axis

Forward functions return (output, cache); the matching *_backward functions
accumulate parameter gradients into ModelParams. Inputs may carry a leading
batch axis: [B, N, C] with t an int or an int array of shape [B].
"""

import json
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .exceptions import CheckpointError, DimensionError, MotionSrcError
from .features import MOTION_DIM, SPARSE_DIM
from .numerics import (
    LayerNormCache,
    ParamWithGrad,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    silu,
    silu_backward,
)

logger = logging.getLogger(__name__)

TIMESTEP_MODES = ("none", "add", "concat", "repin")

CHECKPOINT_MAGIC = b"AGRL"
CHECKPOINT_VERSION = 1


###############################################################################
#                                  CONFIG                                     #
###############################################################################


@dataclass
class MlpConfig:
    num_blocks: int = 12
    latent_dim: int = 512
    seq_len: int = 196
    in_dim: int = MOTION_DIM
    out_dim: int = MOTION_DIM
    cond_dim: int = SPARSE_DIM  # 0 -> predictive MLP (no x_t branch, no timestep)
    timestep_mode: str = "repin"
    embed_dim: int = 512

    def __post_init__(self):
        self.timestep_mode = self.timestep_mode.lower()
        if self.timestep_mode not in TIMESTEP_MODES:
            raise MotionSrcError(f"Unknown timestep mode '{self.timestep_mode}'")
        for name in ("latent_dim", "seq_len", "in_dim", "out_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be >= 1")
        if self.num_blocks < 0 or self.cond_dim < 0:
            raise DimensionError("num_blocks and cond_dim must be >= 0")
        if self.diffusion and self.latent_dim % 2:
            raise DimensionError("The diffusion head splits latent_dim in two; it must be even")
        if not self.diffusion and self.timestep_mode != "none":
            raise DimensionError("The predictive MLP takes no timestep")
        if self.timestep_mode != "none" and self.embed_dim % 2:
            raise DimensionError("Sinusoidal embedding needs an even embed_dim")

    @property
    def diffusion(self) -> bool:
        return self.cond_dim > 0

    @property
    def temporal_len(self) -> int:
        return self.seq_len + 1 if self.timestep_mode == "concat" else self.seq_len

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "MlpConfig":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
        kwargs = {}
        for name, fld in cls.__dataclass_fields__.items():
            if name in values:
                kwargs[name] = values[name] if fld.type in (str, "str") else int(values[name])
        return cls(**kwargs)


def predictive_config(num_blocks: int = 12, latent_dim: int = 512, seq_len: int = 196) -> MlpConfig:
    return MlpConfig(
        num_blocks=num_blocks,
        latent_dim=latent_dim,
        seq_len=seq_len,
        in_dim=SPARSE_DIM,
        out_dim=MOTION_DIM,
        cond_dim=0,
        timestep_mode="none",
        embed_dim=latent_dim,
    )


def diffusion_config(
    num_blocks: int = 12, latent_dim: int = 512, seq_len: int = 196, timestep_mode: str = "repin"
) -> MlpConfig:
    return MlpConfig(
        num_blocks=num_blocks,
        latent_dim=latent_dim,
        seq_len=seq_len,
        in_dim=MOTION_DIM,
        out_dim=MOTION_DIM,
        cond_dim=SPARSE_DIM,
        timestep_mode=timestep_mode,
        embed_dim=latent_dim,
    )


###############################################################################
#                                PARAMETERS                                   #
###############################################################################


def param_layout(config: MlpConfig) -> "OrderedDict[str, Tuple[Tuple[int, ...], str, int]]":
    """name -> (shape, init kind, fan_in), in a fixed order."""
    D, E, Nt = config.latent_dim, config.embed_dim, config.temporal_len
    layout: "OrderedDict[str, Tuple[Tuple[int, ...], str, int]]" = OrderedDict()

    def linear(name, fan_in, fan_out, init="uniform"):
        layout[f"{name}.W"] = ((fan_in, fan_out), init, fan_in)
        layout[f"{name}.b"] = ((fan_out,), init, fan_in)

    if config.diffusion:
        linear("fc0", config.in_dim, D // 2)
        linear("fc1", config.cond_dim, D // 2)
    else:
        linear("input", config.in_dim, D)

    if config.timestep_mode != "none":
        linear("time_mlp.fc1", E, D)
        linear("time_mlp.fc2", D, D)
    if config.timestep_mode in ("add", "concat"):
        linear("time_proj", D, D)

    for j in range(config.num_blocks):
        pre = f"block{j}."
        layout[pre + "ln1.gamma"] = ((D,), "ones", D)
        layout[pre + "ln1.beta"] = ((D,), "zeros", D)
        linear(pre + "temporal", Nt, Nt)
        layout[pre + "ln2.gamma"] = ((D,), "ones", D)
        layout[pre + "ln2.beta"] = ((D,), "zeros", D)
        linear(pre + "feature", D, D)
        if config.timestep_mode == "repin":
            linear(pre + "time", D, D)

    linear("output", D, config.out_dim, init="zeros")
    return layout


def parameter_count(config: MlpConfig) -> int:
    return int(sum(np.prod(shape) for shape, _, _ in param_layout(config).values()))


def parameter_breakdown(config: MlpConfig) -> Dict[str, int]:
    """Parameter totals grouped by the name before the first dot."""
    groups: Dict[str, int] = OrderedDict()
    for name, (shape, _, _) in param_layout(config).items():
        key = name.split(".", 1)[0]
        groups[key] = groups.get(key, 0) + int(np.prod(shape))
    return groups


class ModelParams:
    """Named parameters with gradient buffers, kept in layout order."""

    def __init__(self, config: MlpConfig, tensors: "OrderedDict[str, ParamWithGrad]"):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> List[str]:
        return list(self.tensors)

    def as_list(self) -> List[ParamWithGrad]:
        return list(self.tensors.values())

    def grad(self, name: str) -> np.ndarray:
        return self.tensors[name].grad

    def accumulate(self, name: str, g: np.ndarray) -> None:
        self.tensors[name].grad += g

    def zero_grad(self) -> None:
        for p in self.tensors.values():
            p.zero_grad()

    def count(self) -> int:
        return int(sum(p.value.size for p in self.tensors.values()))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            OrderedDict(
                (n, ParamWithGrad(p.value.astype(dtype))) for n, p in self.tensors.items()
            ),
        )

    def copy(self) -> "ModelParams":
        return self.astype(next(iter(self.tensors.values())).value.dtype)


def init_params(
    config: MlpConfig, rng: Union[int, np.random.Generator, None] = 0, dtype=np.float32
) -> ModelParams:
    """uniform(-k, k) with k = 1/sqrt(fan_in); LayerNorm at identity; output at zero."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    tensors: "OrderedDict[str, ParamWithGrad]" = OrderedDict()
    for name, (shape, init, fan_in) in param_layout(config).items():
        if init == "ones":
            value = np.ones(shape, dtype=dtype)
        elif init == "zeros":
            value = np.zeros(shape, dtype=dtype)
        else:
            k = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-k, k, size=shape).astype(dtype)
        tensors[name] = ParamWithGrad(value)
    return ModelParams(config, tensors)


###############################################################################
#                            TIMESTEP EMBEDDING                               #
###############################################################################


def timestep_embed(t, E: int) -> np.ndarray:
    """emb[2i] = sin(t / 10000^(2i/E)), emb[2i+1] = cos(...). Shape t.shape + (E,)."""
    if E % 2:
        raise DimensionError(f"Embedding size must be even, got {E}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise MotionSrcError("Timesteps must be >= 0")
    freqs = 10000.0 ** (-(2.0 * np.arange(E // 2)) / E)
    args = t[..., None] * freqs
    emb = np.empty(t.shape + (E,), dtype=np.float64)
    emb[..., 0::2] = np.sin(args)
    emb[..., 1::2] = np.cos(args)
    return emb


@dataclass
class TimeCache:
    e0: np.ndarray
    a1: np.ndarray
    e1: np.ndarray
    e: np.ndarray
    proj_pre: Dict[str, np.ndarray] = field(default_factory=dict)  # pre-SiLU projections


def _time_forward(params: ModelParams, config: MlpConfig, t, dtype) -> TimeCache:
    e0 = timestep_embed(t, config.embed_dim).astype(dtype)
    a1 = linear_forward(e0, params["time_mlp.fc1.W"], params["time_mlp.fc1.b"])
    e1 = silu(a1)
    e = linear_forward(e1, params["time_mlp.fc2.W"], params["time_mlp.fc2.b"])
    return TimeCache(e0, a1, e1, e)


def _time_project(params: ModelParams, cache: TimeCache, name: str) -> np.ndarray:
    a = linear_forward(cache.e, params[name + ".W"], params[name + ".b"])
    cache.proj_pre[name] = a
    return silu(a)


def _time_backward(params: ModelParams, cache: TimeCache, d_u: Dict[str, np.ndarray]) -> None:
    d_e = np.zeros_like(cache.e)
    for name, du in d_u.items():
        d_a = silu_backward(cache.proj_pre[name], du)
        d_x, dW, db = linear_backward(cache.e, params[name + ".W"], d_a)
        params.accumulate(name + ".W", dW)
        params.accumulate(name + ".b", db)
        d_e += d_x
    d_e1, dW, db = linear_backward(cache.e1, params["time_mlp.fc2.W"], d_e)
    params.accumulate("time_mlp.fc2.W", dW)
    params.accumulate("time_mlp.fc2.b", db)
    d_a1 = silu_backward(cache.a1, d_e1)
    _, dW, db = linear_backward(cache.e0, params["time_mlp.fc1.W"], d_a1)
    params.accumulate("time_mlp.fc1.W", dW)
    params.accumulate("time_mlp.fc1.b", db)


def _reduce_to(d: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while d.ndim > len(shape):
        d = d.sum(axis=0)
    return d


###############################################################################
#                                  BLOCKS                                     #
###############################################################################


@dataclass
class BlockCache:
    ln1: LayerNormCache
    z1t: np.ndarray
    a1: np.ndarray
    ln2: LayerNormCache
    z2: np.ndarray
    a2: np.ndarray
    u_shape: Optional[Tuple[int, ...]]


def mlp_block_forward(
    params: ModelParams, index: int, h: np.ndarray, u: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, BlockCache]:
    pre = f"block{index}."
    D = params.config.latent_dim
    if h.shape[-1] != D:
        raise DimensionError(f"Block {index} expects {D} features, got {h.shape}")

    h0 = h + u[..., None, :] if u is not None else h
    z1, ln1 = layernorm_forward(h0, params[pre + "ln1.gamma"], params[pre + "ln1.beta"])
    z1t = np.swapaxes(z1, -1, -2)
    a1 = linear_forward(z1t, params[pre + "temporal.W"], params[pre + "temporal.b"])
    h1 = h0 + np.swapaxes(silu(a1), -1, -2)
    z2, ln2 = layernorm_forward(h1, params[pre + "ln2.gamma"], params[pre + "ln2.beta"])
    a2 = linear_forward(z2, params[pre + "feature.W"], params[pre + "feature.b"])
    out = h1 + silu(a2)
    return out, BlockCache(ln1, z1t, a1, ln2, z2, a2, None if u is None else u.shape)


def mlp_block_backward(
    params: ModelParams, index: int, cache: BlockCache, d_out: np.ndarray
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Returns (dL/dh, dL/du or None)."""
    pre = f"block{index}."

    d_a2 = silu_backward(cache.a2, d_out)
    d_z2, dW, db = linear_backward(cache.z2, params[pre + "feature.W"], d_a2)
    params.accumulate(pre + "feature.W", dW)
    params.accumulate(pre + "feature.b", db)
    d_ln2, dg, dbeta = layernorm_backward(cache.ln2, d_z2)
    params.accumulate(pre + "ln2.gamma", dg)
    params.accumulate(pre + "ln2.beta", dbeta)
    d_h1 = d_out + d_ln2

    d_a1 = silu_backward(cache.a1, np.swapaxes(d_h1, -1, -2))
    d_z1t, dW, db = linear_backward(cache.z1t, params[pre + "temporal.W"], d_a1)
    params.accumulate(pre + "temporal.W", dW)
    params.accumulate(pre + "temporal.b", db)
    d_ln1, dg, dbeta = layernorm_backward(cache.ln1, np.swapaxes(d_z1t, -1, -2))
    params.accumulate(pre + "ln1.gamma", dg)
    params.accumulate(pre + "ln1.beta", dbeta)
    d_h0 = d_h1 + d_ln1

    d_u = None
    if cache.u_shape is not None:
        d_u = _reduce_to(d_h0.sum(axis=-2), cache.u_shape)
    return d_h0, d_u


###############################################################################
#                              FULL NETWORKS                                  #
###############################################################################


@dataclass
class ForwardCache:
    inputs: Tuple[np.ndarray, ...]
    blocks: List[BlockCache]
    time: Optional[TimeCache]
    top_u_shape: Optional[Tuple[int, ...]]
    h_out: np.ndarray
    lead_shape: Tuple[int, ...]


def _check_frames(x: np.ndarray, config: MlpConfig, width: int, what: str) -> None:
    if x.ndim < 2 or x.shape[-2] != config.seq_len or x.shape[-1] != width:
        raise DimensionError(
            f"{what}: expected [..., {config.seq_len}, {width}], got {x.shape}"
        )


def _blocks_forward(params, config, h, block_u):
    caches = []
    for j in range(config.num_blocks):
        h, c = mlp_block_forward(params, j, h, block_u[j] if block_u else None)
        caches.append(c)
    return h, caches


def _blocks_backward(params, config, caches, d_h):
    d_us = {}
    for j in range(config.num_blocks - 1, -1, -1):
        d_h, d_u = mlp_block_backward(params, j, caches[j], d_h)
        if d_u is not None:
            d_us[f"block{j}.time"] = d_u
    return d_h, d_us


def _output_forward(params, config, h):
    h_out = h[..., : config.seq_len, :]
    return linear_forward(h_out, params["output.W"], params["output.b"]), h_out


def _output_backward(params, config, cache: ForwardCache, d_out):
    d_hout, dW, db = linear_backward(cache.h_out, params["output.W"], d_out)
    params.accumulate("output.W", dW)
    params.accumulate("output.b", db)
    if config.temporal_len == config.seq_len:
        return d_hout
    d_h = np.zeros(d_hout.shape[:-2] + (config.temporal_len, d_hout.shape[-1]), dtype=d_hout.dtype)
    d_h[..., : config.seq_len, :] = d_hout
    return d_h


def mlp_forward(params: ModelParams, config: MlpConfig, inp: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Predictive baseline: sparse input [.., N, 54] -> motion [.., N, 132]."""
    if config.diffusion or config.timestep_mode != "none":
        raise DimensionError("mlp_forward runs the predictive config (no timestep, no x_t)")
    _check_frames(inp, config, config.in_dim, "mlp input")
    h = linear_forward(inp, params["input.W"], params["input.b"])
    h, blocks = _blocks_forward(params, config, h, None)
    out, h_out = _output_forward(params, config, h)
    return out, ForwardCache((inp,), blocks, None, None, h_out, inp.shape[:-2])


def mlp_backward(params: ModelParams, config: MlpConfig, cache: ForwardCache, d_out: np.ndarray) -> None:
    d_h = _output_backward(params, config, cache, d_out)
    d_h, _ = _blocks_backward(params, config, cache.blocks, d_h)
    _, dW, db = linear_backward(cache.inputs[0], params["input.W"], d_h)
    params.accumulate("input.W", dW)
    params.accumulate("input.b", db)


def diffusion_forward(
    params: ModelParams, config: MlpConfig, x_t: np.ndarray, p: np.ndarray, t
) -> Tuple[np.ndarray, ForwardCache]:
    """x_hat = MLP(Concat(FC0(x_t), FC1(p)), t)"""
    if not config.diffusion:
        raise DimensionError("diffusion_forward needs a config with a conditioning branch")
    _check_frames(x_t, config, config.in_dim, "x_t")
    _check_frames(p, config, config.cond_dim, "sparse input")
    if x_t.shape[:-2] != p.shape[:-2]:
        raise DimensionError(f"Batch shapes differ: {x_t.shape} vs {p.shape}")
    t_arr = np.asarray(t)
    if t_arr.ndim > 0 and t_arr.shape != x_t.shape[:-2]:
        raise DimensionError(f"Per-sample timesteps {t_arr.shape} don't match batch {x_t.shape[:-2]}")

    xb = linear_forward(x_t, params["fc0.W"], params["fc0.b"])
    pb = linear_forward(p, params["fc1.W"], params["fc1.b"])
    h = np.concatenate([xb, pb], axis=-1)

    mode = config.timestep_mode
    time_cache = None
    block_u = None
    top_u_shape = None
    if mode != "none":
        time_cache = _time_forward(params, config, t_arr, h.dtype)
        if mode == "add":
            u = _time_project(params, time_cache, "time_proj")
            top_u_shape = u.shape
            h = h + u[..., None, :]
        elif mode == "concat":
            u = _time_project(params, time_cache, "time_proj")
            top_u_shape = u.shape
            row = np.broadcast_to(u[..., None, :], h.shape[:-2] + (1, h.shape[-1]))
            h = np.concatenate([h, row], axis=-2)
        else:
            block_u = [_time_project(params, time_cache, f"block{j}.time") for j in range(config.num_blocks)]

    h, blocks = _blocks_forward(params, config, h, block_u)
    out, h_out = _output_forward(params, config, h)
    cache = ForwardCache((x_t, p), blocks, time_cache, top_u_shape, h_out, x_t.shape[:-2])
    return out, cache


def diffusion_backward(params: ModelParams, config: MlpConfig, cache: ForwardCache, d_out: np.ndarray) -> None:
    d_h = _output_backward(params, config, cache, d_out)
    d_h, d_us = _blocks_backward(params, config, cache.blocks, d_h)

    mode = config.timestep_mode
    if mode == "add":
        d_us["time_proj"] = _reduce_to(d_h.sum(axis=-2), cache.top_u_shape)
    elif mode == "concat":
        d_us["time_proj"] = _reduce_to(d_h[..., -1, :], cache.top_u_shape)
        d_h = d_h[..., : config.seq_len, :]
    if mode != "none":
        _time_backward(params, cache.time, d_us)

    half = config.latent_dim // 2
    x_t, p = cache.inputs
    _, dW, db = linear_backward(x_t, params["fc0.W"], np.ascontiguousarray(d_h[..., :half]))
    params.accumulate("fc0.W", dW)
    params.accumulate("fc0.b", db)
    _, dW, db = linear_backward(p, params["fc1.W"], np.ascontiguousarray(d_h[..., half:]))
    params.accumulate("fc1.W", dW)
    params.accumulate("fc1.b", db)


###############################################################################
#                               CHECKPOINTS                                   #
###############################################################################


def _write_block(f, payload: bytes) -> None:
    f.write(struct.pack("<I", len(payload)))
    f.write(payload)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"Checkpoint truncated while reading {what}")
    return data


def _read_u32(f, what: str) -> int:
    return struct.unpack("<I", _read_exact(f, 4, what))[0]


def save_checkpoint(
    path: str,
    params: ModelParams,
    meta: Optional[dict] = None,
    extra: Optional[Dict[str, np.ndarray]] = None,
) -> None:
    """
    Little-endian container: b"AGRL", u32 version, u32+config text, u32+JSON
    meta, u32 tensor count, then per tensor u32 name length, name bytes,
    u32 rows, u32 cols, rows*cols float32 values.
    """
    tensors = [(n, params[n]) for n in params.names()]
    tensors += sorted((extra or {}).items())
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        _write_block(f, params.config.to_text().encode("utf-8"))
        _write_block(f, json.dumps(meta or {}, sort_keys=True).encode("utf-8"))
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors:
            arr = np.asarray(value, dtype="<f4")
            rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr.shape
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<II", rows, cols))
            f.write(arr.tobytes(order="C"))
    logger.info("Checkpoint written: %s (%d tensors)", path, len(tensors))


def load_checkpoint(path: str) -> Tuple[ModelParams, dict, Dict[str, np.ndarray]]:
    """Returns (params, meta, extra tensors)."""
    if not os.path.isfile(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
        version = _read_u32(f, "version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"Checkpoint version {version} unsupported")
        config = MlpConfig.from_text(_read_exact(f, _read_u32(f, "config"), "config").decode("utf-8"))
        meta = json.loads(_read_exact(f, _read_u32(f, "meta"), "meta").decode("utf-8"))
        count = _read_u32(f, "tensor count")
        raw: Dict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            name = _read_exact(f, _read_u32(f, "name length"), "name").decode("utf-8")
            rows, cols = struct.unpack("<II", _read_exact(f, 8, f"{name} shape"))
            data = _read_exact(f, rows * cols * 4, name)
            raw[name] = np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float32)

    layout = param_layout(config)
    tensors: "OrderedDict[str, ParamWithGrad]" = OrderedDict()
    for name, (shape, _, _) in layout.items():
        if name not in raw:
            raise CheckpointError(f"Checkpoint is missing parameter '{name}'")
        tensors[name] = ParamWithGrad(raw.pop(name).reshape(shape).copy())
    extra = {}
    for name, value in raw.items():
        base = name.split(".", 2)[-1]
        extra[name] = value.reshape(layout[base][0]).copy() if base in layout else value
    return ModelParams(config, tensors), meta, extra
