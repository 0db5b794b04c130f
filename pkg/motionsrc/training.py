"""
Training loops for the predictive MLP and the diffusion model.

Batches are drawn from a generator seeded by (seed, iteration), so a run is
reproducible bit for bit, a resumed run picks up exactly where it stopped, and
the optional prefetch thread cannot change what the loop sees.
"""

import functools
import json
import logging
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .diffusion import NoiseSchedule, cosine_schedule, training_loss_dm
from .exceptions import CheckpointError, ConfigError, DimensionError, EmptyDatasetError
from .features import build_sparse_input, window
from .lossmetrics import LossWeights, geometric_losses
from .network import (
    MlpConfig,
    ModelParams,
    TIMESTEP_MODES,
    diffusion_config,
    init_params,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    predictive_config,
    save_checkpoint,
)
from .numerics import OptimizerState, make_optimizer, optimizer_step
from .settings import parse_bool
from .skeleton import SkeletonTree, default_test_skeleton
from .synthdata import MotionRecord

logger = logging.getLogger(__name__)

MODEL_KINDS = ("mlp", "diffusion")


###############################################################################
#                                 CONFIG                                      #
###############################################################################


@dataclass
class TrainConfig:
    model: str = "diffusion"
    batch_size: int = 256
    lr_initial: float = 3e-4
    lr_after: float = 1e-5
    lr_switch_iter: int = 200000
    weight_decay: float = 1e-4
    total_iters: int = 1000
    seed: int = 0
    T: int = 1000
    w_pos: float = 0.0
    w_vel: float = 0.0
    w_foot: float = 0.0
    predict_noise: bool = False
    timestep_mode: str = "repin"
    num_blocks: int = 12
    latent_dim: int = 512
    seq_len: int = 196
    stride: int = 0  # 0 -> seq_len // 2
    log_every: int = 100
    checkpoint_every: int = 0
    prefetch: bool = False
    log_level: str = "INFO"

    def __post_init__(self):
        self.model = self.model.lower()
        self.timestep_mode = self.timestep_mode.lower()
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got '{self.model}'")
        if self.timestep_mode not in TIMESTEP_MODES:
            raise ConfigError(f"timestep_mode must be one of {TIMESTEP_MODES}")
        for name in ("batch_size", "total_iters", "T", "latent_dim", "seq_len", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_blocks < 0 or self.stride < 0 or self.checkpoint_every < 0:
            raise ConfigError("num_blocks, stride and checkpoint_every must be >= 0")
        if min(self.w_pos, self.w_vel, self.w_foot) < 0:
            raise ConfigError("Loss weights must be >= 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_pos, self.w_vel, self.w_foot)

    @property
    def window_stride(self) -> int:
        return self.stride or max(1, self.seq_len // 2)

    def network_config(self) -> MlpConfig:
        if self.model == "mlp":
            return predictive_config(self.num_blocks, self.latent_dim, self.seq_len)
        return diffusion_config(self.num_blocks, self.latent_dim, self.seq_len, self.timestep_mode)

    @classmethod
    def from_mapping(cls, values: Dict[str, str], base: Optional["TrainConfig"] = None) -> "TrainConfig":
        current = asdict(base or cls())
        # config keys arrive lowercased
        names = {f.name.lower(): f.name for f in fields(cls)}
        types = {f.name: f.type for f in fields(cls)}
        for raw_key, raw in values.items():
            key = names.get(raw_key.lower())
            if key is None:
                logger.warning("Ignoring unknown training config key '%s'", raw_key)
                continue
            kind = types[key]
            try:
                if kind is bool:
                    current[key] = parse_bool(raw)
                elif kind is int:
                    current[key] = int(float(raw)) if "e" in raw.lower() else int(raw)
                elif kind is float:
                    current[key] = float(raw)
                else:
                    current[key] = raw.strip()
            except ValueError as e:
                raise ConfigError(f"{key}={raw!r} is not a valid {kind.__name__}") from e
        return cls(**current)

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        presets = {"toy": TOY_PRESET, "full": FULL_PRESET}
        if name not in presets:
            raise ConfigError(f"Unknown preset '{name}' (choose from {sorted(presets)})")
        return cls(**dict(presets[name], **overrides))


TOY_PRESET = dict(seq_len=32, latent_dim=64, num_blocks=4, batch_size=16, T=100, total_iters=5000, log_every=250)
FULL_PRESET = dict(seq_len=196, latent_dim=512, num_blocks=12, batch_size=256, T=1000, total_iters=250000)


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Step schedule: lr_initial before lr_switch_iter, lr_after from it on."""
    return config.lr_initial if iteration < config.lr_switch_iter else config.lr_after


###############################################################################
#                                  DATA                                       #
###############################################################################


@dataclass
class TrainingSet:
    sparse: np.ndarray  # [W, N, 54]
    motion: np.ndarray  # [W, N, 132]
    root_trans: np.ndarray  # [W, N, 3]

    def __len__(self) -> int:
        return int(self.motion.shape[0])

    @property
    def seq_len(self) -> int:
        return int(self.motion.shape[1])


def build_windows(
    records: Sequence[MotionRecord],
    tree: SkeletonTree,
    N: int,
    stride: Optional[int] = None,
) -> TrainingSet:
    """Cut every record into N-frame training windows; shorter records are skipped."""
    sparse, motion, roots = [], [], []
    for record in records:
        if record.frames < N:
            logger.warning("Skipping %s: %d frames < window %d", record.name, record.frames, N)
            continue
        p = build_sparse_input(tree, record.motion, record.root_trans)
        for (_, p_w), (_, y_w), (_, r_w) in zip(
            window(p, N, stride), window(record.motion, N, stride), window(record.root_trans, N, stride)
        ):
            sparse.append(p_w)
            motion.append(y_w)
            roots.append(r_w)
    if not motion:
        raise EmptyDatasetError(f"No sequence is long enough for {N}-frame windows")
    return TrainingSet(
        np.stack(sparse).astype(np.float32),
        np.stack(motion).astype(np.float32),
        np.stack(roots).astype(np.float64),
    )


@dataclass
class Batch:
    iteration: int
    sparse: np.ndarray
    motion: np.ndarray
    root_trans: np.ndarray
    t: Optional[np.ndarray] = None
    eps: Optional[np.ndarray] = None


def batch_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration])


def make_batch(data: TrainingSet, config: TrainConfig, iteration: int, diffusion: bool) -> Batch:
    """Windows with replacement, then (diffusion only) timesteps and noise, in that order."""
    rng = batch_rng(config.seed, iteration)
    idx = rng.integers(0, len(data), size=config.batch_size)
    batch = Batch(iteration, data.sparse[idx], data.motion[idx], data.root_trans[idx])
    if diffusion:
        batch.t = rng.integers(0, config.T, size=config.batch_size)
        batch.eps = rng.standard_normal(batch.motion.shape).astype(np.float32)
    for arr in (batch.sparse, batch.motion, batch.root_trans, batch.eps):
        if arr is not None:
            arr.setflags(write=False)
    return batch


def batch_stream(
    data: TrainingSet, config: TrainConfig, start: int, stop: int, diffusion: bool
) -> Iterator[Batch]:
    for it in range(start, stop):
        yield make_batch(data, config, it, diffusion)


class BatchPrefetcher:
    """Runs a batch generator on a worker thread, handing batches over a bounded queue."""

    _DONE = object()

    def __init__(self, source: Iterator[Batch], depth: int = 4):
        self.source = source
        self.q: "queue.Queue" = queue.Queue(maxsize=depth)
        self.error: Optional[BaseException] = None
        self.stop_event = threading.Event()
        self.worker = threading.Thread(target=self._run, daemon=True)
        self.worker.start()

    def _run(self):
        try:
            for item in self.source:
                while not self.stop_event.is_set():
                    try:
                        self.q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self.stop_event.is_set():
                    return
        except BaseException as e:  # handed to the consumer
            self.error = e
        finally:
            self.q.put(self._DONE)

    def __iter__(self) -> Iterator[Batch]:
        while True:
            item = self.q.get()
            if item is self._DONE:
                if self.error is not None:
                    raise self.error
                return
            yield item

    def close(self) -> None:
        self.stop_event.set()
        try:
            while True:
                self.q.get_nowait()
        except queue.Empty:
            pass


###############################################################################
#                                  LOGS                                       #
###############################################################################


@dataclass
class TrainLog:
    records: List[Dict[str, float]] = field(default_factory=list)
    path: Optional[str] = None

    def append(self, iteration: int, terms: Dict[str, float], lr: float, wall: float) -> None:
        if self.records and iteration <= self.records[-1]["iteration"]:
            raise ValueError(f"Log iterations must increase ({iteration} after {self.records[-1]['iteration']})")
        record = {"iteration": iteration, "lr": lr, "wall": round(wall, 4)}
        record.update({k: float(v) for k, v in terms.items()})
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")

    def last(self, key: str = "total") -> float:
        return float(self.records[-1][key])

    @classmethod
    def read(cls, path: str) -> "TrainLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as f:
            log.records = [json.loads(line) for line in f if line.strip()]
        return log


###############################################################################
#                               CHECKPOINTS                                   #
###############################################################################


def save_training_checkpoint(
    path: str, params: ModelParams, state: OptimizerState, iteration: int, config: TrainConfig
) -> None:
    meta = {
        "iteration": iteration,
        "train_config": asdict(config),
        "optimizer": {
            "kind": state.kind,
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "weight_decay": state.weight_decay,
            "step_count": state.step_count,
        },
    }
    extra = {}
    for name, m, v in zip(params.names(), state.m, state.v):
        extra[f"opt.m.{name}"] = m
        extra[f"opt.v.{name}"] = v
    save_checkpoint(path, params, meta=meta, extra=extra)


def load_training_checkpoint(path: str) -> Tuple[ModelParams, Optional[OptimizerState], int, dict]:
    """Returns (params, optimizer state or None, next iteration, meta)."""
    params, meta, extra = load_checkpoint(path)
    opt = meta.get("optimizer")
    state = None
    if opt:
        state = OptimizerState(**opt)
        try:
            state.m = [extra[f"opt.m.{n}"].copy() for n in params.names()]
            state.v = [extra[f"opt.v.{n}"].copy() for n in params.names()]
        except KeyError as e:
            raise CheckpointError(f"Checkpoint has optimizer meta but no moment tensor {e}") from e
    return params, state, int(meta.get("iteration", 0)), meta


###############################################################################
#                                  LOOPS                                      #
###############################################################################

CheckpointCallback = Callable[[int, ModelParams, OptimizerState], None]


def _batches(data, config, start, diffusion):
    source = batch_stream(data, config, start, config.total_iters, diffusion)
    if config.prefetch:
        return BatchPrefetcher(source)
    return source


def _check_dataset(data: TrainingSet, config: TrainConfig) -> None:
    if len(data) == 0:
        raise EmptyDatasetError("Training set is empty")
    if data.seq_len != config.seq_len:
        raise DimensionError(f"Windows have {data.seq_len} frames, config wants {config.seq_len}")


def _run_loop(
    data: TrainingSet,
    config: TrainConfig,
    params: ModelParams,
    state: OptimizerState,
    start: int,
    step: Callable[[Batch], Dict[str, float]],
    diffusion: bool,
    log: TrainLog,
    on_checkpoint: Optional[CheckpointCallback],
    progress: bool,
) -> None:
    t0 = time.perf_counter()
    batches = _batches(data, config, start, diffusion)
    bar = tqdm(total=config.total_iters, initial=start, desc=f"Train {config.model}", unit="it", disable=not progress)
    try:
        for batch in batches:
            it = batch.iteration
            terms = step(batch)
            state.lr = lr_at(config, it)
            optimizer_step(state, params.as_list())
            bar.update(1)

            done = it + 1
            if done % config.log_every == 0 or done == config.total_iters or it == start:
                lr = state.lr
                log.append(done, terms, lr, time.perf_counter() - t0)
                bar.set_postfix(loss=f"{terms['total']:.5f}")
                logger.info("iter %d  loss %.6f  lr %.2e  %s", done, terms["total"], lr,
                            " ".join(f"{k}={v:.5f}" for k, v in terms.items() if k != "total"))
                if not np.isfinite(terms["total"]):
                    logger.error("Non-finite loss at iteration %d", done)
            if on_checkpoint and config.checkpoint_every and done % config.checkpoint_every == 0:
                on_checkpoint(done, params, state)
        if on_checkpoint and (not config.checkpoint_every or config.total_iters % config.checkpoint_every):
            on_checkpoint(config.total_iters, params, state)
    finally:
        bar.close()
        if isinstance(batches, BatchPrefetcher):
            batches.close()


def _setup(config: TrainConfig, resume: Optional[Tuple[ModelParams, Optional[OptimizerState], int]], kind: str, decay: float):
    if resume is not None:
        params, state, start = resume
        if state is None:
            state = make_optimizer(kind, params.as_list(), lr=config.lr_initial, weight_decay=decay)
        logger.info("Resuming %s training at iteration %d", config.model, start)
    else:
        params = init_params(config.network_config(), rng=config.seed)
        state = make_optimizer(kind, params.as_list(), lr=config.lr_initial, weight_decay=decay)
        start = 0
    return params, state, start


def train_mlp(
    data: TrainingSet,
    config: TrainConfig,
    resume: Optional[Tuple[ModelParams, Optional[OptimizerState], int]] = None,
    log: Optional[TrainLog] = None,
    on_checkpoint: Optional[CheckpointCallback] = None,
    progress: bool = False,
) -> Tuple[ModelParams, TrainLog]:
    """Predictive baseline: Adam (weight decay as an L2 term) on the mean squared 6D rotation error."""
    _check_dataset(data, config)
    params, state, start = _setup(config, resume, "adam", config.weight_decay)
    net = params.config
    log = log or TrainLog()

    def step(batch: Batch) -> Dict[str, float]:
        params.zero_grad()
        out, cache = mlp_forward(params, net, batch.sparse)
        diff = out.astype(np.float64) - batch.motion
        loss = float(np.mean(diff**2))
        mlp_backward(params, net, cache, ((2.0 / diff.size) * diff).astype(out.dtype))
        return {"rot": loss, "total": loss}

    _run_loop(data, config, params, state, start, step, False, log, on_checkpoint, progress)
    return params, log


def train_diffusion(
    data: TrainingSet,
    config: TrainConfig,
    resume: Optional[Tuple[ModelParams, Optional[OptimizerState], int]] = None,
    log: Optional[TrainLog] = None,
    on_checkpoint: Optional[CheckpointCallback] = None,
    progress: bool = False,
    tree: Optional[SkeletonTree] = None,
    sched: Optional[NoiseSchedule] = None,
) -> Tuple[ModelParams, TrainLog]:
    """AdamW on the clean-signal objective plus the weighted geometric terms."""
    _check_dataset(data, config)
    params, state, start = _setup(config, resume, "adamw", config.weight_decay)
    net = params.config
    sched = sched or cosine_schedule(config.T)
    tree = tree or default_test_skeleton()
    weights = config.weights
    log = log or TrainLog()

    def step(batch: Batch) -> Dict[str, float]:
        geometric = None
        if weights.any:
            geometric = functools.partial(
                geometric_losses, tree, batch.motion, root_trans=batch.root_trans, weights=weights
            )
        _, terms = training_loss_dm(
            params, net, batch.motion, batch.sparse, batch.t, batch.eps, sched,
            predict_noise=config.predict_noise, geometric=geometric,
        )
        return terms

    _run_loop(data, config, params, state, start, step, True, log, on_checkpoint, progress)
    return params, log


def checkpoint_writer(path: str, config: TrainConfig) -> CheckpointCallback:
    """Callback that overwrites `path` with the latest training state."""
    def write(iteration: int, params: ModelParams, state: OptimizerState) -> None:
        save_training_checkpoint(path, params, state, iteration, config)
    return write
