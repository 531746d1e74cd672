"""run_manifest.json: what a command was asked to do and which inputs it saw."""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

TOOL_NAME = "thorax-cnn"
TOOL_VERSION = "1.0.0"
MANIFEST_NAME = "run_manifest.json"

PathLike = Union[str, Path]


def file_digest(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def path_digest(path: PathLike) -> str:
    """sha256 of a file, or of every file under a directory in sorted relative-path order"""
    path = Path(path)
    if path.is_file():
        return file_digest(path)
    h = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(child.relative_to(path).as_posix().encode("utf-8"))
        h.update(b"\0")
        h.update(file_digest(child).encode("ascii"))
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: Dict
    seeds: Dict[str, int] = field(default_factory=dict)
    input_digests: Dict[str, str] = field(default_factory=dict)
    tool: str = f"{TOOL_NAME} {TOOL_VERSION}"
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    exit_code: Optional[int] = None

    def add_inputs(self, paths: Iterable[PathLike]):
        for p in paths:
            if p is not None and Path(p).exists():
                self.input_digests[str(p)] = path_digest(p)

    def finish(self, exit_code: int = 0):
        self.finished_at = _now()
        self.exit_code = exit_code

    def write(self, out_dir: PathLike) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        return path


def read_run_manifest(path: PathLike) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return RunManifest(**json.loads(path.read_text()))


def verify_digests(manifest: RunManifest) -> List[str]:
    """Inputs whose current digest differs from the recorded one"""
    return [
        p
        for p, digest in manifest.input_digests.items()
        if not Path(p).exists() or path_digest(p) != digest
    ]
