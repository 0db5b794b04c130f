"""
Command line: gen-data, train, sample, evaluate, bench, ablate.

Every command writes into a run directory, appends one line to its
manifest.jsonl and maps library errors to stable exit codes:
0 ok, 2 usage/config, 3 missing data, 4 shape mismatch, 5 alignment, 1 other.
"""

import argparse
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from tqdm import tqdm

from . import VERSION
from .diffusion import (
    SamplerSpec,
    cosine_schedule,
    ddim_sample,
    ddpm_sample,
    make_denoiser,
)
from .exceptions import AlignmentError, DimensionError, MissingDataError, MotionSrcError, UsageError
from .features import build_sparse_input, mask_tracking_loss, sparse_head_positions, stitch, window
from .lossmetrics import MetricReport, evaluate
from .manifest import RunManifest, append_manifest
from .network import (
    ModelParams,
    init_params,
    load_checkpoint,
    mlp_forward,
    parameter_count,
    predictive_config,
)
from .settings import load_config, setup_logging
from .skeleton import default_test_skeleton, motion_rotations, recover_root_translation
from .synthdata import (
    GenDataConfig,
    MotionRecord,
    MseqFile,
    load_mseq,
    make_dataset,
    read_dataset,
    save_mseq,
    write_dataset,
)
from .training import (
    TrainConfig,
    TrainLog,
    build_windows,
    checkpoint_writer,
    load_training_checkpoint,
    train_diffusion,
    train_mlp,
)

console = Console()
logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.ckpt"
TRAIN_LOG_NAME = "train_log.jsonl"
SWEEP_STEPS = (2, 5, 10, 100, 1000)
WARMUPS = 3
METRIC_COLUMNS = ("mpjre", "mpjpe", "mpjve", "jitter", "hand_pe", "upper_pe", "lower_pe", "root_pe")


###############################################################################
#                                 HELPERS                                     #
###############################################################################


def _start(command: str, run_dir: str, level: str, verbose: bool) -> float:
    setup_logging(os.path.join(run_dir, "logs"), "DEBUG" if verbose else level)
    console.print(Panel(f"motionsrc {VERSION} :: {command}", style="bold magenta"))
    return time.perf_counter()


def _finish(command: str, run_dir: str, t0: float, config: dict, seed, artifacts: List[str]) -> str:
    manifest = RunManifest(
        command=command,
        config=config,
        seed=seed,
        artifacts=artifacts,
        wall_clock=round(time.perf_counter() - t0, 3),
    )
    return append_manifest(run_dir, manifest)


def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Aligned plain-text table (for files that get diffed)."""
    cells = [[str(h) for h in headers]] + [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines) + "\n"


def _rich_table(title: str, headers: Sequence[str], rows: Sequence[Sequence[object]]) -> Table:
    table = Table(title=title)
    for i, h in enumerate(headers):
        table.add_column(h, style="cyan" if i == 0 else "magenta", justify="left" if i == 0 else "right")
    for row in rows:
        table.add_row(*[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    return table


def _write_tables(out_dir: str, stem: str, headers, rows, records: List[str]) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    txt = os.path.join(out_dir, f"{stem}.txt")
    rec = os.path.join(out_dir, f"{stem}.records")
    with open(txt, "w", encoding="utf-8") as f:
        f.write(format_table(headers, rows))
    with open(rec, "w", encoding="utf-8") as f:
        f.writelines(r + "\n" for r in records)
    return [txt, rec]


def _load_train_config(args) -> TrainConfig:
    base = TrainConfig.preset(args.preset) if getattr(args, "preset", None) else TrainConfig()
    if getattr(args, "config", None):
        return TrainConfig.from_mapping(load_config(args.config), base=base)
    return base


###############################################################################
#                                INFERENCE                                    #
###############################################################################


@dataclass
class LoadedModel:
    params: ModelParams
    T: int = 1000
    predict_noise: bool = False
    label: str = "model"

    @property
    def config(self):
        return self.params.config

    @property
    def diffusion(self) -> bool:
        return self.params.config.diffusion


def load_model(path: str) -> LoadedModel:
    params, meta, _ = load_checkpoint(path)
    train_cfg = meta.get("train_config", {})
    label = os.path.basename(os.path.dirname(os.path.abspath(path))) or os.path.basename(path)
    return LoadedModel(
        params,
        T=int(train_cfg.get("T", 1000)),
        predict_noise=bool(train_cfg.get("predict_noise", False)),
        label=label,
    )


def run_inference(
    model: LoadedModel, p: np.ndarray, spec: SamplerSpec, seed: int = 0, on_step=None
) -> np.ndarray:
    """
    Full-length prediction for a [L, 54] sparse input: non-overlapping
    N-frame windows plus a tail window, sampled as one batch, then stitched.
    """
    cfg = model.config
    width = cfg.cond_dim if cfg.diffusion else cfg.in_dim
    if p.ndim != 2 or p.shape[1] != width:
        raise DimensionError(f"Model expects {width}-channel sparse input, got {p.shape}")
    chunks = window(p, cfg.seq_len, cfg.seq_len)
    stack = np.stack([c for _, c in chunks]).astype(np.float32)

    if cfg.diffusion:
        sched = cosine_schedule(model.T)
        denoiser = make_denoiser(model.params, cfg, model.predict_noise, sched)
        if spec.kind == "ddpm":
            out = ddpm_sample(denoiser, stack, sched, seed, cfg.out_dim, on_step=on_step)
        else:
            steps = min(spec.num_steps, model.T)
            if steps != spec.num_steps:
                logger.warning("Clipping DDIM steps %d to T=%d", spec.num_steps, model.T)
            out = ddim_sample(denoiser, stack, SamplerSpec("ddim", steps), sched, seed, cfg.out_dim, on_step)
    else:
        out, _ = mlp_forward(model.params, cfg, stack)
    return stitch([(offset, out[i]) for i, (offset, _) in enumerate(chunks)], p.shape[0])


def sparse_from_mseq(mseq: MseqFile, tree) -> np.ndarray:
    """Accept either a 54-channel sparse file or a full motion file with a ROOT track."""
    if mseq.channels == 54:
        return mseq.data.astype(np.float32)
    if mseq.channels == tree.joint_count * 6:
        if "ROOT" not in mseq.tracks:
            raise MissingDataError("Full-body input needs a ROOT track to derive the sparse signal")
        motion = mseq.data.astype(np.float64)
        root = mseq.tracks["ROOT"].astype(np.float64)
        return build_sparse_input(tree, motion, root).astype(np.float32)
    raise DimensionError(f"Input has {mseq.channels} channels; expected 54 (sparse) or {tree.joint_count * 6}")


def _evaluate_model(
    model: LoadedModel,
    records: Sequence[MotionRecord],
    tree,
    spec: SamplerSpec,
    seed: int,
    mask_fraction: float = 0.0,
    trials: int = 1,
) -> MetricReport:
    """Mean over trials of the mean over sequences."""
    per_trial = []
    for trial in range(trials):
        reports = []
        for k, record in enumerate(records):
            p = build_sparse_input(tree, record.motion, record.root_trans).astype(np.float32)
            if mask_fraction > 0:
                p = mask_tracking_loss(p, mask_fraction, rng=np.random.default_rng([seed, trial, k]))
            pred = run_inference(model, p, spec, seed=seed + k)
            reports.append(evaluate(tree, record.motion, record.root_trans, pred, head_trajectory=record.head))
        per_trial.append(MetricReport.mean(reports))
    return MetricReport.mean(per_trial)


###############################################################################
#                                COMMANDS                                     #
###############################################################################


def cmd_gen_data(args) -> int:
    values = load_config(args.config) if args.config else {}
    cfg = GenDataConfig.from_mapping(values)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.count is not None:
        cfg.count = args.count
    if args.workers is not None:
        cfg.workers = args.workers

    t0 = _start("gen-data", args.out, cfg.log_level, args.verbose)
    dataset = make_dataset(
        cfg.count, cfg.ranges, cfg.seed, frames=cfg.frames, noise_deg=cfg.noise_deg,
        style=cfg.style, workers=cfg.workers,
    )
    paths = write_dataset(dataset, args.out)
    console.print(Panel(
        f"{len(paths)} sequences -> {args.out}\ntrain {len(dataset.train)} / test {len(dataset.test)}",
        title="Dataset", style="green",
    ))
    _finish("gen-data", args.out, t0, dataclasses.asdict(cfg), cfg.seed, paths)
    return 0


def cmd_train(args) -> int:
    resume = None
    if args.resume:
        params, state, start, meta = load_training_checkpoint(args.resume)
        cfg = TrainConfig(**meta.get("train_config", {}))
        if args.config:
            cfg = TrainConfig.from_mapping(load_config(args.config), base=cfg)
        resume = (params, state, start)
    else:
        cfg = _load_train_config(args)
    overrides = {}
    if args.model:
        overrides["model"] = args.model
    if args.timestep_mode:
        overrides["timestep_mode"] = args.timestep_mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iters is not None:
        overrides["total_iters"] = args.iters
    if args.prefetch:
        overrides["prefetch"] = True
    cfg = dataclasses.replace(cfg, **overrides)
    if resume and resume[0].config.diffusion != (cfg.model == "diffusion"):
        raise DimensionError("Resume checkpoint and --model disagree")

    t0 = _start(f"train {cfg.model}", args.out, cfg.log_level, args.verbose)
    tree = default_test_skeleton()
    records = read_dataset(args.data, "train")
    data = build_windows(records, tree, cfg.seq_len, cfg.window_stride)
    console.print(Panel(
        f"{len(records)} sequences, {len(data)} windows of {cfg.seq_len} frames\n"
        f"{parameter_count(cfg.network_config()):,} parameters, {cfg.total_iters} iterations",
        title=f"Training {cfg.model}", style="green",
    ))

    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, CHECKPOINT_NAME)
    log = TrainLog(path=os.path.join(args.out, TRAIN_LOG_NAME))
    trainer = train_diffusion if cfg.model == "diffusion" else train_mlp
    params, log = trainer(data, cfg, resume=resume, log=log, on_checkpoint=checkpoint_writer(ckpt, cfg), progress=True)
    if log.records:
        console.print(f"final loss {log.last():.6f}")
    _finish(f"train {cfg.model}", args.out, t0, dataclasses.asdict(cfg), cfg.seed, [ckpt, log.path])
    return 0


def cmd_sample(args) -> int:
    out_dir = os.path.dirname(os.path.abspath(args.out))
    t0 = _start("sample", out_dir, "INFO", args.verbose)
    tree = default_test_skeleton()
    model = load_model(args.checkpoint)
    p = sparse_from_mseq(load_mseq(args.input), tree)

    steps = args.sweep if args.sweep else [args.ddim_steps]
    artifacts = []
    rows = []
    for K in steps:
        spec = SamplerSpec(args.sampler, K)
        started = time.perf_counter()
        pred = run_inference(model, p, spec, seed=args.seed)
        elapsed = time.perf_counter() - started
        root = recover_root_translation(tree, motion_rotations(tree, pred.astype(np.float64)),
                                        sparse_head_positions(p).astype(np.float64))
        path = args.out if len(steps) == 1 else _suffix(args.out, f"_k{K}")
        save_mseq(path, MseqFile(pred.astype(np.float32), tracks={
            "ROOT": root.astype(np.float32),
            "HEAD": sparse_head_positions(p).astype(np.float32),
        }))
        artifacts.append(path)
        rows.append((K, pred.shape[0], elapsed * 1000.0, path))

    console.print(_rich_table("Samples", ("steps", "frames", "ms", "file"), rows))
    _finish("sample", out_dir, t0, {"checkpoint": args.checkpoint, "input": args.input,
                                    "sampler": args.sampler, "steps": steps}, args.seed, artifacts)
    return 0


def _suffix(path: str, tag: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}{tag}{ext}"


def cmd_evaluate(args) -> int:
    if not args.pred and not args.checkpoint:
        raise UsageError("evaluate needs --pred DIR or at least one --checkpoint")
    t0 = _start("evaluate", args.out, "INFO", args.verbose)
    tree = default_test_skeleton()
    gt = read_dataset(args.gt, args.split)
    headers = ("name",) + METRIC_COLUMNS + ("gt_jitter",)
    rows, records = [], []

    if args.pred:
        missing = [r.name for r in gt if not os.path.isfile(os.path.join(args.pred, f"{r.name}.mseq"))]
        if missing:
            listing = "\n".join(f"  {n}.mseq" for n in missing)
            raise AlignmentError(f"{len(missing)} ground-truth sequences have no prediction in {args.pred}:\n{listing}")
        reports = []
        for record in gt:
            pred = load_mseq(os.path.join(args.pred, f"{record.name}.mseq")).data
            report = evaluate(tree, record.motion, record.root_trans, pred, head_trajectory=record.head)
            reports.append(report)
            rows.append((record.name,) + tuple(getattr(report, c) for c in headers[1:]))
            records.append(report.to_record(sequence=record.name))
        mean = MetricReport.mean(reports)
        rows.append(("MEAN",) + tuple(getattr(mean, c) for c in headers[1:]))
        records.append(mean.to_record(sequence="MEAN"))

    spec = SamplerSpec("ddim", args.ddim_steps)
    for path in args.checkpoint or []:
        model = load_model(path)
        clean = _evaluate_model(model, gt, tree, spec, args.seed)
        rows.append((f"{model.label}",) + tuple(getattr(clean, c) for c in headers[1:]))
        records.append(clean.to_record(model=path, mask_fraction=0.0))
        if args.mask_fraction > 0:
            masked = _evaluate_model(model, gt, tree, spec, args.seed, args.mask_fraction, args.trials)
            degradation = (masked.mpjpe - clean.mpjpe) / max(clean.mpjpe, 1e-12)
            rows.append((f"{model.label} mask={args.mask_fraction:g}",) + tuple(getattr(masked, c) for c in headers[1:]))
            records.append(masked.to_record(model=path, mask_fraction=args.mask_fraction,
                                            trials=args.trials, mpjpe_degradation=degradation))
            logger.info("%s: MPJPE %.3f -> %.3f cm under %.0f%% masking (%+.1f%%)",
                        model.label, clean.mpjpe, masked.mpjpe, 100 * args.mask_fraction, 100 * degradation)

    console.print(_rich_table("Metrics", headers, rows))
    artifacts = _write_tables(args.out, "metrics", headers, rows, records)
    _finish("evaluate", args.out, t0, {"gt": args.gt, "pred": args.pred, "checkpoint": args.checkpoint,
                                       "mask_fraction": args.mask_fraction, "trials": args.trials}, args.seed, artifacts)
    return 0


def _percentiles(samples: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(samples, dtype=np.float64) * 1000.0
    return float(np.median(arr)), float(np.percentile(arr, 95))


def cmd_bench(args) -> int:
    t0 = _start("bench", args.out, "INFO", args.verbose)
    if args.checkpoint:
        model = load_model(args.checkpoint)
    else:
        cfg = TrainConfig.preset(args.preset)
        model = LoadedModel(init_params(cfg.network_config(), rng=args.seed), T=cfg.T, label=args.preset)
    net = model.config
    rng = np.random.default_rng(args.seed)
    p = rng.standard_normal((net.seq_len, net.cond_dim or net.in_dim)).astype(np.float32)
    spec = SamplerSpec("ddim", min(args.ddim_steps, model.T))

    totals, per_step = [], []
    for i in range(WARMUPS + args.repeats):
        marks = [time.perf_counter()]
        run_inference(model, p, spec, seed=args.seed, on_step=lambda k, t: marks.append(time.perf_counter()))
        finished = time.perf_counter()
        if i >= WARMUPS:
            totals.append(finished - marks[0])
            per_step.append(np.diff(marks))
    median, p95 = _percentiles(totals)
    step_ms = (np.mean(per_step, axis=0) * 1000.0).tolist() if per_step and per_step[0].size else []

    mlp_cfg = predictive_config(net.num_blocks, net.latent_dim, net.seq_len)
    mlp_params = init_params(mlp_cfg, rng=args.seed)
    mlp_times = []
    for i in range(WARMUPS + args.repeats):
        started = time.perf_counter()
        mlp_forward(mlp_params, mlp_cfg, p[:, :mlp_cfg.in_dim])
        if i >= WARMUPS:
            mlp_times.append(time.perf_counter() - started)
    mlp_median, mlp_p95 = _percentiles(mlp_times)

    rows = [
        (f"{model.label} DDIM K={spec.num_steps}", median, p95, p95 / max(median, 1e-12)),
        ("predictive MLP forward", mlp_median, mlp_p95, mlp_p95 / max(mlp_median, 1e-12)),
    ]
    rows += [(f"  step {k} (t={t})", ms, float("nan"), float("nan"))
             for k, (t, ms) in enumerate(zip(spec.timesteps(cosine_schedule(model.T)), step_ms))]
    headers = ("run", "median_ms", "p95_ms", "p95/median")
    console.print(_rich_table(f"Latency, {net.seq_len} frames, {args.repeats} repeats", headers, rows))
    record = json.dumps({"frames": net.seq_len, "steps": spec.num_steps, "median_ms": median, "p95_ms": p95,
                         "step_ms": step_ms, "mlp_median_ms": mlp_median, "mlp_p95_ms": mlp_p95,
                         "params": parameter_count(net)})
    artifacts = _write_tables(args.out, "bench", headers, rows, [record])
    _finish("bench", args.out, t0, {"checkpoint": args.checkpoint, "preset": args.preset,
                                    "ddim_steps": spec.num_steps, "repeats": args.repeats}, args.seed, artifacts)
    return 0


###############################################################################
#                                ABLATIONS                                    #
###############################################################################

ABLATION_SUITES: Dict[str, List[Tuple[str, Dict[str, object]]]] = {
    "timestep": [(m, {"timestep_mode": m}) for m in ("none", "add", "concat", "repin")],
    "steps-train": [(f"T={T}", {"T": T}) for T in (10, 100, 1000)],
    "length": [(f"N={n}", {"seq_len": n}) for n in (8, 16, 32, 48)],
    "blocks": [(f"M={m}", {"num_blocks": m}) for m in (1, 2, 4, 8)],
    "losses": [
        ("dm", {}),
        ("dm+pos", {"w_pos": 1.0}),
        ("dm+vel", {"w_vel": 1.0}),
        ("dm+foot", {"w_foot": 1.0}),
        ("dm+pos+vel+foot", {"w_pos": 1.0, "w_vel": 1.0, "w_foot": 1.0}),
    ],
    "predict-noise": [("x0", {"predict_noise": False}), ("eps", {"predict_noise": True})],
}


def run_cell(
    label: str,
    overrides: Dict[str, object],
    base: TrainConfig,
    train_records: Sequence[MotionRecord],
    test_records: Sequence[MotionRecord],
    cell_dir: str,
    ddim_steps: int,
) -> Dict[str, object]:
    """Train and score one ablation cell; everything it touches is its own."""
    started = time.perf_counter()
    tree = default_test_skeleton()
    cfg = dataclasses.replace(base, model="diffusion", **overrides)
    data = build_windows(train_records, tree, cfg.seq_len, cfg.window_stride)
    os.makedirs(cell_dir, exist_ok=True)
    ckpt = os.path.join(cell_dir, CHECKPOINT_NAME)
    params, log = train_diffusion(data, cfg, tree=tree, on_checkpoint=checkpoint_writer(ckpt, cfg))
    model = LoadedModel(params, T=cfg.T, predict_noise=cfg.predict_noise, label=label)
    usable = [r for r in test_records if r.frames >= cfg.seq_len]
    report = _evaluate_model(model, usable, tree, SamplerSpec("ddim", ddim_steps), cfg.seed)
    manifest = RunManifest(
        command=f"ablate-cell {label}",
        config=dataclasses.asdict(cfg),
        seed=cfg.seed,
        artifacts=[ckpt],
        wall_clock=round(time.perf_counter() - started, 3),
    )
    manifest_path = append_manifest(cell_dir, manifest)
    return {
        "label": label,
        "seed": cfg.seed,
        "params": parameter_count(cfg.network_config()),
        "final_loss": log.last() if log.records else float("nan"),
        "report": report,
        "manifest": manifest_path,
    }


def cmd_ablate(args) -> int:
    base = _load_train_config(args)
    if args.iters is not None:
        base = dataclasses.replace(base, total_iters=args.iters)
    t0 = _start(f"ablate {args.suite}", args.out, base.log_level, args.verbose)
    train_records = read_dataset(args.data, "train")
    test_records = read_dataset(args.data, "test")
    seeds = args.seeds or [base.seed]
    cells = [
        (label, dict(overrides, seed=seed), os.path.join(args.out, args.suite, label.replace("=", "").replace("+", "_"), f"seed{seed}"))
        for label, overrides in ABLATION_SUITES[args.suite]
        for seed in seeds
    ]

    def work(cell):
        label, overrides, cell_dir = cell
        return run_cell(label, overrides, base, train_records, test_records, cell_dir, args.ddim_steps)

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(tqdm(pool.map(work, cells), total=len(cells), desc=f"Ablate {args.suite}"))
    else:
        results = [work(c) for c in tqdm(cells, desc=f"Ablate {args.suite}")]

    headers = ("cell", "params") + METRIC_COLUMNS + ("final_loss", "manifest")
    rows, records = [], []
    for label, _ in ABLATION_SUITES[args.suite]:
        group = [r for r in results if r["label"] == label]
        metrics = [float(np.median([getattr(r["report"], c) for r in group])) for c in METRIC_COLUMNS]
        loss = float(np.median([r["final_loss"] for r in group]))
        manifests = ";".join(r["manifest"] for r in group)
        rows.append((label, group[0]["params"], *metrics, loss, manifests))
        records.append(json.dumps({
            "suite": args.suite, "cell": label, "seeds": [r["seed"] for r in group],
            "params": group[0]["params"], "final_loss": loss, "manifests": [r["manifest"] for r in group],
            **dict(zip(METRIC_COLUMNS, metrics)),
        }))

    console.print(_rich_table(f"Ablation: {args.suite}", headers, rows))
    artifacts = _write_tables(args.out, f"ablate_{args.suite}", headers, rows, records)
    _finish(f"ablate {args.suite}", args.out, t0, dataclasses.asdict(base), seeds, artifacts)
    return 0


###############################################################################
#                                  MAIN                                       #
###############################################################################


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionsrc",
        description="Full-body motion from head and hand tracking: data, training, sampling, evaluation.",
    )
    parser.add_argument("-V", "--version", action="version", version=f"motionsrc {VERSION}")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--verbose", action="store_true", help="Debug-level logging")
        return p

    p = common(sub.add_parser("gen-data", help="Generate a synthetic gait dataset"))
    p.add_argument("--config", help="Data config (key=value)")
    p.add_argument("--out", required=True, help="Dataset directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train", help="Train the predictive MLP or the diffusion model"))
    p.add_argument("--model", choices=("mlp", "diffusion"))
    p.add_argument("--config", help="Training config (key=value)")
    p.add_argument("--preset", choices=("toy", "full"))
    p.add_argument("--data", required=True, help="Dataset directory")
    p.add_argument("--out", required=True, help="Run directory")
    p.add_argument("--resume", help="Checkpoint to continue from")
    p.add_argument("--timestep-mode", choices=("none", "add", "concat", "repin"))
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, help="Total iterations")
    p.add_argument("--prefetch", action="store_true", help="Prepare batches on a worker thread")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("sample", help="Predict full-body motion for a sparse input"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="MSEQ with 54 sparse channels, or a full motion with ROOT")
    p.add_argument("--out", required=True, help="Output MSEQ path")
    p.add_argument("--sampler", choices=("ddim", "ddpm"), default="ddim")
    p.add_argument("--ddim-steps", type=int, default=5)
    p.add_argument("--sweep", nargs="?", const=list(SWEEP_STEPS), type=_int_list,
                   help=f"Sample once per step count (default {','.join(map(str, SWEEP_STEPS))})")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("evaluate", help="Score predictions or checkpoints against ground truth"))
    p.add_argument("--gt", required=True, help="Ground-truth dataset directory")
    p.add_argument("--pred", help="Directory of predicted MSEQ files named like the ground truth")
    p.add_argument("--checkpoint", action="append", help="Checkpoint to run (repeatable)")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--mask-fraction", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--ddim-steps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Run directory")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("bench", help="Latency of sampling and of the predictive MLP"))
    p.add_argument("--checkpoint")
    p.add_argument("--preset", choices=("toy", "full"), default="full")
    p.add_argument("--ddim-steps", type=int, default=5)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Run directory")
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("ablate", help="Run a toy-scale ablation grid"))
    p.add_argument("suite", choices=sorted(ABLATION_SUITES))
    p.add_argument("--config", help="Base training config (key=value)")
    p.add_argument("--preset", choices=("toy", "full"), default="toy")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int)
    p.add_argument("--seeds", type=_int_list, help="Comma-separated seeds; cells report the median")
    p.add_argument("--ddim-steps", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args) or 0
    except MotionSrcError as e:
        logger.error("%s failed: %s", args.command, e)
        console.print(Panel(str(e), title=type(e).__name__, style="red"))
        return e.exit_code
