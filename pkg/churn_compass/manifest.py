"""Run manifests: what a command ran on, with which settings and seeds."""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

from . import __version__
from .formatter import ReportFormatter
from .storage import file_digest

logger = logging.getLogger(__name__)

STATE_DIR = ".churn-compass"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: Optional[str] = None

    def add_input(self, path: Union[str, Path]) -> None:
        """Record the SHA256 of an input file's bytes."""
        p = Path(path)
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    self.inputs[str(child)] = file_digest(child)
        else:
            self.inputs[str(p)] = file_digest(p)

    def add_output(self, path: Union[str, Path]) -> None:
        self.outputs.append(str(path))

    def finish(self) -> "RunManifest":
        self.finished = _now()
        return self

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seeds": list(self.seeds),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": list(self.outputs),
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
        }

    def write(self, path: Optional[Union[str, Path]] = None) -> Path:
        target = Path(path) if path else default_manifest_path(self.command)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(ReportFormatter.to_json(self) + "\n", encoding="utf-8")
        logger.debug("manifest written to %s", target)
        return target


def default_manifest_path(command: str, root: Union[str, Path] = ".") -> Path:
    return Path(root) / STATE_DIR / f"manifest-{command}.json"


def read_manifest(path: Union[str, Path]) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
