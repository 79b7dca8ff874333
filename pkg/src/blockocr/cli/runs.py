"""Content-addressed run directories and their manifests."""
from __future__ import annotations

import hashlib
import json
import os
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import blockocr

MANIFEST_VERSION = 1
MANIFEST = "manifest.json"


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical(obj).encode()).hexdigest()


def file_hash(path) -> str:
    """First 16 hex digits of the file's sha256."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def code_version() -> str:
    """git-style blob hashes of every package source file, folded into one tree digest."""
    root = Path(blockocr.__file__).parent
    tree = hashlib.sha1()
    for path in sorted(root.rglob("*.py")):
        data = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        tree.update(f"{path.relative_to(root).as_posix()} {blob}\n".encode())
    return tree.hexdigest()


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    code_version: str = field(default_factory=code_version)
    started: str = field(default_factory=now)
    finished: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    status: str = "running"

    def to_dict(self) -> dict:
        return {"manifest_version": MANIFEST_VERSION, "run_id": self.run_id, "command": self.command,
                "config": self.config, "code_version": self.code_version, "started": self.started,
                "finished": self.finished, "artifacts": self.artifacts, "status": self.status}


def run_dir(out_dir, command: str, config: dict) -> Path:
    """``<out>/<command>-<hash12>``: same resolved config and seed, same directory."""
    return Path(out_dir) / f"{command}-{config_hash(config)[:12]}"


def finish(manifest: RunManifest, directory: Path) -> Path:
    """Check every artifact exists, stamp the end time and write the manifest atomically."""
    missing = [k for k, p in manifest.artifacts.items() if not (directory / p).exists()]
    if missing:
        raise RuntimeError(f"artifacts missing at exit: {', '.join(missing)}")
    manifest.finished = now()
    manifest.status = "complete"
    return write_manifest(manifest, directory)


def write_manifest(manifest: RunManifest, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=2))
    os.replace(tmp, path)
    return path


def load_manifest(directory) -> dict | None:
    path = Path(directory) / MANIFEST
    if not path.exists():
        return None
    return json.loads(path.read_text())


def is_complete(directory) -> bool:
    m = load_manifest(directory)
    return bool(m) and m.get("status") == "complete"
