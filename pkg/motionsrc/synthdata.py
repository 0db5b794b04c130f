"""
Procedural gait generator and the MSEQ motion-file format.

MSEQ layout (little-endian):

    b"MSEQ" | u32 version | u32 fps | u32 frames | u32 channels | u32 n_tracks
    frames*channels float32, row-major
    n_tracks x ( 4-byte tag | u32 channels | frames*channels float32 )

Generated sequences carry two tracks: ROOT (pelvis translation) and HEAD
(head trajectory from FK).
"""

import hashlib
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from . import FPS
from .exceptions import (
    BadMagicError,
    ConfigError,
    EmptyDatasetError,
    MissingDataError,
    MotionSrcError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .rotations import matrix_to_rot6d, random_rotations, rot_x, rot_y, rot_z
from .settings import parse_range
from .skeleton import SkeletonTree, default_test_skeleton, forward_kinematics

logger = logging.getLogger(__name__)

MSEQ_MAGIC = b"MSEQ"
MSEQ_VERSION = 1
GROUND_TOLERANCE = 0.05  # m below y=0 a foot may reach
TEST_FRACTION = 0.1
GAIT_STYLES = ("walk", "dance")

# SMPL indices the generator animates
_L_HIP, _R_HIP, _SPINE1, _L_KNEE, _R_KNEE = 1, 2, 3, 4, 5
_L_SHOULDER, _R_SHOULDER, _L_ELBOW, _R_ELBOW = 16, 17, 18, 19


###############################################################################
#                                 GAIT                                        #
###############################################################################


@dataclass
class GaitParams:
    frequency: float = 1.0  # cycles per second
    stride: float = 0.4  # hip swing amplitude (rad)
    arm_swing: float = 0.3  # shoulder swing amplitude (rad)
    speed: float = 1.0  # forward speed (m/s)
    turn_rate: float = 0.0  # heading change (rad/s)
    sway: float = 0.05  # torso side lean amplitude (rad)
    phase: float = 0.0
    frames: int = 196
    fps: int = FPS
    noise_deg: float = 0.5
    arm_drop: float = 1.2  # rest abduction down from the T-pose (rad)
    style: str = "walk"

    def __post_init__(self):
        if self.frequency <= 0:
            raise MotionSrcError(f"Gait frequency must be > 0, got {self.frequency}")
        for name in ("stride", "arm_swing", "sway", "arm_drop"):
            if abs(getattr(self, name)) > np.pi / 2:
                raise MotionSrcError(f"{name}={getattr(self, name)} exceeds the joint limit (pi/2)")
        if self.fps != FPS:
            raise MotionSrcError(f"Generator runs at {FPS} fps, got {self.fps}")
        if self.frames < 1:
            raise MotionSrcError("A gait needs at least one frame")
        if not 0.0 <= self.noise_deg <= 1.0:
            raise MotionSrcError("Per-joint noise must be within [0, 1] degree")
        if self.style not in GAIT_STYLES:
            raise MotionSrcError(f"Unknown gait style '{self.style}'")


def gait_angles(params: GaitParams) -> Dict[str, np.ndarray]:
    """Joint angle trajectories (rad) before they are turned into rotations."""
    n = np.arange(params.frames, dtype=np.float64)
    phi = 2.0 * np.pi * params.frequency * n / params.fps + params.phase
    heading = params.turn_rate * n / params.fps

    if params.style == "dance":
        squat = 0.5 * params.stride * (1.0 - np.cos(phi))
        return {
            "phi": phi,
            "heading": 2.0 * heading,
            "hip_l": squat,
            "hip_r": squat,
            "knee_l": 2.0 * squat,
            "knee_r": 2.0 * squat,
            # arms sweep from the drop position up past horizontal
            "raise_l": params.arm_drop - params.arm_swing * (1.0 + np.sin(phi)),
            "raise_r": params.arm_drop - params.arm_swing * (1.0 + np.sin(phi + np.pi / 2)),
            "swing_l": np.zeros_like(phi),
            "swing_r": np.zeros_like(phi),
            "elbow": 0.5 * params.arm_swing * (1.0 - np.cos(phi)),
            "sway": params.sway * np.sin(2.0 * phi),
        }

    hip_l = params.stride * np.sin(phi)
    hip_r = params.stride * np.sin(phi + np.pi)
    return {
        "phi": phi,
        "heading": heading,
        "hip_l": hip_l,
        "hip_r": hip_r,
        "knee_l": 0.5 * params.stride * (1.0 - np.cos(phi)),
        "knee_r": 0.5 * params.stride * (1.0 - np.cos(phi + np.pi)),
        "raise_l": np.full_like(phi, params.arm_drop),
        "raise_r": np.full_like(phi, params.arm_drop),
        # each arm opposes the leg on its own side
        "swing_l": params.arm_swing * np.sin(phi + np.pi),
        "swing_r": params.arm_swing * np.sin(phi),
        "elbow": 0.25 * params.arm_swing * (1.0 - np.cos(2.0 * phi)),
        "sway": params.sway * np.sin(phi),
    }


def generate_gait(
    params: GaitParams,
    seed: Union[int, np.random.SeedSequence, None] = 0,
    tree: Optional[SkeletonTree] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns (motion [N, J*6], root_trans [N, 3], head [N, 3]), all float64.

    Forward is +z with the body turning about +y. Pelvis height is solved per
    frame so the lowest foot joint sits on y = 0.
    """
    tree = tree or default_test_skeleton()
    rng = np.random.default_rng(seed)
    a = gait_angles(params)
    N, J = params.frames, tree.joint_count

    R = np.broadcast_to(np.eye(3), (N, J, 3, 3)).copy()
    R[:, 0] = rot_y(a["heading"])
    R[:, _SPINE1] = rot_z(a["sway"])
    # flexion swings the thigh toward +z; the knee folds the shank back
    R[:, _L_HIP] = rot_x(-a["hip_l"])
    R[:, _R_HIP] = rot_x(-a["hip_r"])
    R[:, _L_KNEE] = rot_x(a["knee_l"])
    R[:, _R_KNEE] = rot_x(a["knee_r"])
    R[:, _L_SHOULDER] = rot_x(-a["swing_l"]) @ rot_z(-a["raise_l"])
    R[:, _R_SHOULDER] = rot_x(-a["swing_r"]) @ rot_z(a["raise_r"])
    R[:, _L_ELBOW] = rot_y(-a["elbow"])
    R[:, _R_ELBOW] = rot_y(a["elbow"])

    if params.noise_deg > 0:
        noise = random_rotations(rng, J - 1, max_angle=np.radians(params.noise_deg))
        R[:, 1:] = R[:, 1:] @ noise

    direction = np.stack([np.sin(a["heading"]), np.zeros(N), np.cos(a["heading"])], axis=-1)
    root = np.zeros((N, 3))
    root[1:] = np.cumsum(direction[:-1] * params.speed / params.fps, axis=0)

    feet = list(tree.feet) or [int(np.argmin(tree.offsets[:, 1]))]
    rest = forward_kinematics(tree, R, root).global_pos
    root[:, 1] = -rest[:, feet, 1].min(axis=1)

    fk = forward_kinematics(tree, R, root)
    lowest = fk.global_pos[:, feet, 1].min()
    assert lowest >= -GROUND_TOLERANCE, f"foot at {lowest:.3f} m is below the ground plane"

    motion = matrix_to_rot6d(R).reshape(N, J * 6)
    return motion, root, fk.global_pos[:, tree.head].copy()


###############################################################################
#                                DATASETS                                     #
###############################################################################

DEFAULT_RANGES: Dict[str, Tuple[float, float]] = {
    "frequency": (0.8, 1.4),
    "stride": (0.25, 0.55),
    "arm_swing": (0.15, 0.45),
    "speed": (0.6, 1.6),
    "turn_rate": (-0.3, 0.3),
    "sway": (0.0, 0.08),
    "phase": (0.0, 2.0 * np.pi),
}


@dataclass
class MotionRecord:
    name: str
    motion: np.ndarray
    root_trans: np.ndarray
    head: np.ndarray
    params: Optional[GaitParams] = None

    @property
    def frames(self) -> int:
        return int(self.motion.shape[0])


@dataclass
class Dataset:
    records: List[MotionRecord]
    train: List[int] = field(default_factory=list)
    test: List[int] = field(default_factory=list)

    def split(self, name: str) -> List[MotionRecord]:
        indices = {"train": self.train, "test": self.test, "all": range(len(self.records))}[name]
        return [self.records[i] for i in indices]


@dataclass
class GenDataConfig:
    count: int = 64
    seed: int = 0
    frames: int = 196
    noise_deg: float = 0.5
    style: str = "walk"
    workers: int = 1
    log_level: str = "INFO"
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_RANGES))

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "GenDataConfig":
        cfg = cls()
        for key, raw in values.items():
            if key in ("count", "seed", "frames", "workers"):
                cfg_val = _parse(int, key, raw)
            elif key == "noise_deg":
                cfg_val = _parse(float, key, raw)
            elif key in ("style", "log_level"):
                cfg_val = raw.strip()
            elif key.endswith("_range") and key[: -len("_range")] in DEFAULT_RANGES:
                cfg.ranges[key[: -len("_range")]] = parse_range(raw)
                continue
            else:
                logger.warning("Ignoring unknown data config key '%s'", key)
                continue
            setattr(cfg, key, cfg_val)
        return cfg


def _parse(kind, key, raw):
    try:
        return kind(raw)
    except ValueError as e:
        raise ConfigError(f"{key}={raw!r} is not a valid {kind.__name__}") from e


def split_by_hash(count: int, seed: int, fraction: float = TEST_FRACTION) -> Tuple[List[int], List[int]]:
    """Deterministic split: the floor(fraction*count) lowest index hashes go to test."""
    def digest(i):
        return hashlib.sha256(f"{seed}:{i}".encode("utf-8")).hexdigest()

    ranked = sorted(range(count), key=digest)
    n_test = max(1, int(np.floor(fraction * count)))
    test = sorted(ranked[:n_test])
    held_out = set(test)
    train = [i for i in range(count) if i not in held_out]
    return train, test


def make_dataset(
    count: int,
    ranges: Optional[Dict[str, Tuple[float, float]]] = None,
    seed: int = 0,
    frames: int = 196,
    noise_deg: float = 0.5,
    style: str = "walk",
    workers: int = 1,
    tree: Optional[SkeletonTree] = None,
) -> Dataset:
    if count < 2:
        raise EmptyDatasetError(f"A dataset needs at least 2 sequences, got {count}")
    ranges = dict(DEFAULT_RANGES, **(ranges or {}))
    rng = np.random.default_rng(seed)
    param_list = []
    for _ in range(count):
        sampled = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in sorted(ranges.items())}
        param_list.append(GaitParams(frames=frames, noise_deg=noise_deg, style=style, **sampled))
    child_seeds = np.random.SeedSequence(seed).spawn(count)

    def build(i):
        motion, root, head = generate_gait(param_list[i], child_seeds[i], tree)
        return MotionRecord(f"seq_{i:04d}", motion, root, head, param_list[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(tqdm(pool.map(build, range(count)), total=count, desc="Generating", unit="seq"))
    else:
        records = [build(i) for i in tqdm(range(count), desc="Generating", unit="seq")]

    train, test = split_by_hash(count, seed)
    logger.info("Generated %d sequences (%d train / %d test)", count, len(train), len(test))
    return Dataset(records, train, test)


###############################################################################
#                                MSEQ FILES                                   #
###############################################################################


@dataclass
class MseqFile:
    data: np.ndarray  # [frames, channels]
    fps: int = FPS
    tracks: Dict[str, np.ndarray] = field(default_factory=dict)  # tag -> [frames, k]
    version: int = MSEQ_VERSION

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def channels(self) -> int:
        return int(self.data.shape[1])


def save_mseq(path: str, mseq: MseqFile) -> None:
    data = np.asarray(mseq.data, dtype="<f4")
    if data.ndim != 2:
        raise MotionSrcError(f"MSEQ payload must be 2-D, got {data.shape}")
    frames, channels = data.shape
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MSEQ_MAGIC)
        f.write(struct.pack("<IIIII", MSEQ_VERSION, mseq.fps, frames, channels, len(mseq.tracks)))
        f.write(data.tobytes(order="C"))
        for tag, track in mseq.tracks.items():
            tag_bytes = tag.encode("ascii")
            if len(tag_bytes) != 4:
                raise MotionSrcError(f"Track tags are 4 ASCII characters, got '{tag}'")
            track = np.asarray(track, dtype="<f4")
            if track.ndim == 1:
                track = track.reshape(frames, -1)
            if track.ndim != 2 or track.shape[0] != frames:
                raise MotionSrcError(f"Track {tag} has shape {track.shape}, expected [{frames}, k]")
            f.write(tag_bytes)
            f.write(struct.pack("<I", track.shape[1]))
            f.write(track.tobytes(order="C"))


def load_mseq(path: str) -> MseqFile:
    if not os.path.isfile(path):
        raise MissingDataError(f"Motion file not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    return parse_mseq(blob, source=path)


def parse_mseq(blob: bytes, source: str = "<bytes>") -> MseqFile:
    """Validate the whole buffer before returning anything."""
    if blob[:4] != MSEQ_MAGIC:
        if len(blob) < 4 and MSEQ_MAGIC.startswith(blob):
            raise TruncatedPayloadError(f"{source}: file ends inside the magic")
        raise BadMagicError(f"{source}: not an MSEQ file (magic {blob[:4]!r})")
    header_size = 4 + 5 * 4
    if len(blob) < header_size:
        raise TruncatedPayloadError(f"{source}: header truncated")
    version, fps, frames, channels, n_tracks = struct.unpack_from("<IIIII", blob, 4)
    if version != MSEQ_VERSION:
        raise VersionMismatchError(f"{source}: MSEQ version {version}, expected {MSEQ_VERSION}")

    offset = header_size

    def take(width: int, what: str) -> np.ndarray:
        nonlocal offset
        size = frames * width * 4
        if offset + size > len(blob):
            raise TruncatedPayloadError(
                f"{source}: {what} needs {size} bytes, {len(blob) - offset} left"
            )
        if size == 0:
            return np.zeros((frames, width), dtype=np.float32)
        arr = np.frombuffer(blob, dtype="<f4", count=frames * width, offset=offset)
        offset += size
        return arr.reshape(frames, width).astype(np.float32)

    data = take(channels, "payload")
    tracks: Dict[str, np.ndarray] = {}
    for _ in range(n_tracks):
        if offset + 8 > len(blob):
            raise TruncatedPayloadError(f"{source}: track header truncated")
        tag = blob[offset:offset + 4].decode("ascii", errors="replace")
        (width,) = struct.unpack_from("<I", blob, offset + 4)
        offset += 8
        tracks[tag] = take(width, f"track {tag}")
    return MseqFile(data=data, fps=fps, tracks=tracks, version=version)


def record_to_mseq(record: MotionRecord) -> MseqFile:
    return MseqFile(
        data=record.motion.astype(np.float32),
        tracks={"ROOT": record.root_trans.astype(np.float32), "HEAD": record.head.astype(np.float32)},
    )


def mseq_to_record(name: str, mseq: MseqFile) -> MotionRecord:
    if "ROOT" not in mseq.tracks:
        raise MissingDataError(f"{name}: motion file has no ROOT track")
    root = mseq.tracks["ROOT"].astype(np.float64)
    head = mseq.tracks.get("HEAD")
    return MotionRecord(
        name,
        mseq.data.astype(np.float64),
        root,
        None if head is None else head.astype(np.float64),
    )


###############################################################################
#                           DATASET DIRECTORIES                               #
###############################################################################

MANIFEST_NAME = "manifest.tsv"


def write_dataset(dataset: Dataset, out_dir: str) -> List[str]:
    """One MSEQ per record plus manifest.tsv (path, frames, split). Returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    test = set(dataset.test)
    paths, lines = [], []
    for i, record in enumerate(dataset.records):
        fname = f"{record.name}.mseq"
        path = os.path.join(out_dir, fname)
        save_mseq(path, record_to_mseq(record))
        paths.append(path)
        lines.append(f"{fname}\t{record.frames}\t{'test' if i in test else 'train'}\n")
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        f.write("path\tframes\tsplit\n")
        f.writelines(lines)
    logger.info("Dataset written to %s (%d files)", out_dir, len(paths))
    return paths


def read_manifest(data_dir: str) -> List[Tuple[str, int, str]]:
    path = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise MissingDataError(f"No {MANIFEST_NAME} in {data_dir}")
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        next(f, None)
        for line in f:
            if not line.strip():
                continue
            fname, frames, split = line.rstrip("\n").split("\t")
            entries.append((fname, int(frames), split))
    return entries


def read_dataset(data_dir: str, split: str = "all") -> List[MotionRecord]:
    records = []
    for fname, frames, which in read_manifest(data_dir):
        if split != "all" and which != split:
            continue
        mseq = load_mseq(os.path.join(data_dir, fname))
        if mseq.frames != frames:
            raise MissingDataError(f"{fname}: manifest says {frames} frames, file has {mseq.frames}")
        records.append(mseq_to_record(os.path.splitext(fname)[0], mseq))
    if not records:
        raise EmptyDatasetError(f"No '{split}' sequences in {data_dir}")
    return records
