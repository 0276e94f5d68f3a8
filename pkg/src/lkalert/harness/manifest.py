"""Run manifests: one JSON record per CLI run directory."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from lkalert import __version__

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    command: str
    argv: list[str] = field(default_factory=lambda: list(sys.argv[1:]))
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    artifact_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str = ""

    def finish(self) -> "RunManifest":
        self.finished = _now()
        return self


def write_manifest(out_dir: Path | str, manifest: RunManifest) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(asdict(manifest), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(out_dir: Path | str) -> RunManifest:
    path = Path(out_dir) / MANIFEST_NAME
    return RunManifest(**json.loads(path.read_text(encoding="utf-8")))
