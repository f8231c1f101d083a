"""Run manifests and atomic output files.

A manifest is written next to every command's output and records the exact
command line, resolved configuration, seed, input digests and tool version.
Re-running a command with the same manifest reproduces its outputs
byte-identically; the manifest itself additionally records wall time.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@contextmanager
def atomic_output(path: str | Path):
    """Yield a temp path in the target directory; rename over `path` on
    success, discard on failure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


class ManifestWriter:
    """Collects a command's inputs/outputs and writes the manifest JSON."""

    def __init__(self, command: str, argv: list[str], seed: int | None, config: dict):
        self.command = command
        self.argv = list(argv)
        self.seed = seed
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.started = time.monotonic()

    def add_input(self, path: str | Path | None) -> None:
        if path is None:
            return
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs.append(str(path))

    def write(self, path: str | Path) -> None:
        payload = {
            "tool": "crossmedia",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "wall_time_s": round(time.monotonic() - self.started, 3),
        }
        with atomic_output(path) as tmp:
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
