from __future__ import annotations

import time
from contextlib import contextmanager
from pathlib import Path

from ..core.io import sha256_file, write_json


class RunManifest:
    """Inventory of one command's outputs, with content hashes and stage timings."""

    def __init__(self, command: str, cfg_hash: str, root: Path):
        self.command = command
        self.cfg_hash = cfg_hash
        self.root = Path(root)
        self.components: dict[str, str] = {}
        self.stages: dict[str, float] = {}
        self.files: list[Path] = []

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = round(time.perf_counter() - t0, 3)

    def add(self, *paths) -> None:
        for p in paths:
            self.files.append(Path(p))

    @property
    def path(self) -> Path:
        return self.root / f"manifest_{self.command}.json"

    def write(self) -> Path:
        inventory = {}
        for p in sorted(set(self.files)):
            inventory[str(p.relative_to(self.root))] = sha256_file(p)
        return write_json(self.path, {
            "command": self.command,
            "config_hash": self.cfg_hash,
            "components": self.components,
            "stage_seconds": self.stages,
            "files": inventory,
        })
