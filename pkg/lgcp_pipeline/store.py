from __future__ import annotations

import hashlib
import json
import os
import tempfile
import uuid
from pathlib import Path
from typing import Any, Protocol

from .config import RunConfig
from .models import RunRecord, StageResult, utc_now_iso

EVENTS_FILE = "events.jsonl"
MANIFEST_FILE = "manifest.json"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _new_run_id() -> str:
    return f"run_{uuid.uuid4().hex[:12]}"


class RunStore(Protocol):
    def start_run(self, command: str, config: RunConfig) -> RunRecord: ...

    def append_event(self, run_id: str, result: StageResult) -> None: ...

    def finish_run(self, run_id: str, status: str, current_stage: str, error: dict[str, Any] | None = None) -> None: ...


class InMemoryRunStore:
    def __init__(self) -> None:
        self.runs: dict[str, RunRecord] = {}
        self.events: list[dict[str, Any]] = []

    def start_run(self, command: str, config: RunConfig) -> RunRecord:
        run = RunRecord(
            run_id=_new_run_id(),
            command=command,
            status="running",
            current_stage="start",
            seed=config.seed,
        )
        self.runs[run.run_id] = run
        return run

    def append_event(self, run_id: str, result: StageResult) -> None:
        self.events.append({"run_id": run_id, **result.to_event()})

    def finish_run(self, run_id: str, status: str, current_stage: str, error: dict[str, Any] | None = None) -> None:
        run = self.runs[run_id]
        run.status = status
        run.current_stage = current_stage
        run.error = error
        run.updated_at = utc_now_iso()


class FileRunStore(InMemoryRunStore):
    """Run store backed by the output directory.

    Every stage result is appended to ``events.jsonl`` as it lands; the
    manifest (config snapshot, version, seed, checksums of inputs and
    outputs, stage timings) is written atomically when the run finishes.
    """

    def __init__(self, output_dir: str | Path, version: str = "") -> None:
        super().__init__()
        self.output_dir = Path(output_dir)
        self.version = version
        self.configs: dict[str, RunConfig] = {}

    def start_run(self, command: str, config: RunConfig) -> RunRecord:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        run = super().start_run(command, config)
        self.configs[run.run_id] = config
        return run

    def append_event(self, run_id: str, result: StageResult) -> None:
        super().append_event(run_id, result)
        line = json.dumps(self.events[-1], separators=(",", ":"), sort_keys=True, default=str)
        with (self.output_dir / EVENTS_FILE).open("a", encoding="utf-8") as handle:
            handle.write(line + "\n")

    def finish_run(self, run_id: str, status: str, current_stage: str, error: dict[str, Any] | None = None) -> None:
        super().finish_run(run_id, status, current_stage, error)
        self.write_manifest(run_id)

    def _checksums(self, paths: list[Path]) -> dict[str, str]:
        return {str(path): sha256_file(path) for path in paths if path.is_file()}

    def manifest(self, run_id: str) -> dict[str, Any]:
        run = self.runs[run_id]
        config = self.configs[run_id]
        events = [e for e in self.events if e["run_id"] == run_id]
        outputs = [name for e in events for name in e["outputs"]]
        return {
            "run_id": run.run_id,
            "command": run.command,
            "status": run.status,
            "current_stage": run.current_stage,
            "error": run.error,
            "version": self.version,
            "seed": run.seed,
            "config_source": config.source,
            "config": config.snapshot(),
            "inputs": self._checksums(config.input_paths()),
            "outputs": {name: sha256_file(self.output_dir / name) for name in outputs if (self.output_dir / name).is_file()},
            "timings": {e["stage"]: e["elapsed_s"] for e in events},
            "warnings": [w for e in events for w in e["warnings"]],
            "created_at": run.created_at,
            "finished_at": run.updated_at,
        }

    def write_manifest(self, run_id: str) -> Path:
        target = self.output_dir / MANIFEST_FILE
        text = json.dumps(self.manifest(run_id), indent=2, sort_keys=True, default=str) + "\n"
        fd, tmp = tempfile.mkstemp(prefix=".manifest.", dir=self.output_dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(text)
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return target
