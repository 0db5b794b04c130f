"""Append-only run manifests: one JSON line per command in <run dir>/manifest.jsonl."""

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

from . import VERSION

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.jsonl"

_PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))
_version_hash_cache: Optional[str] = None


def version_hash() -> str:
    """sha256 over the package sources, in sorted file order."""
    global _version_hash_cache
    if _version_hash_cache is None:
        digest = hashlib.sha256()
        for name in sorted(os.listdir(_PACKAGE_DIR)):
            if not name.endswith(".py"):
                continue
            digest.update(name.encode("utf-8"))
            with open(os.path.join(_PACKAGE_DIR, name), "rb") as f:
                while chunk := f.read(4096):
                    digest.update(chunk)
        _version_hash_cache = digest.hexdigest()
    return _version_hash_cache


@dataclass
class RunManifest:
    command: str
    config: Dict[str, object] = field(default_factory=dict)
    seed: Optional[int] = None
    artifacts: List[str] = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = VERSION
    version_hash: str = field(default_factory=version_hash)
    started: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))

    def to_record(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=str)


def append_manifest(run_dir: str, manifest: RunManifest) -> str:
    """Append one record; returns the manifest path."""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, MANIFEST_FILE)
    with open(path, "a", encoding="utf-8") as f:
        f.write(manifest.to_record() + "\n")
    logger.info("Manifest entry '%s' appended to %s", manifest.command, path)
    return path


def read_manifests(run_dir: str) -> List[dict]:
    path = os.path.join(run_dir, MANIFEST_FILE)
    if not os.path.isfile(path):
        return []
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
