from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class StageResult:
    stage: str
    payload: dict[str, Any]
    status: str = "ok"
    outputs: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    elapsed_s: float = 0.0
    created_at: str = field(default_factory=utc_now_iso)

    def to_event(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "status": self.status,
            "payload": self.payload,
            "outputs": list(self.outputs),
            "warnings": list(self.warnings),
            "elapsed_s": self.elapsed_s,
            "created_at": self.created_at,
        }


@dataclass
class RunRecord:
    run_id: str
    command: str
    status: str
    current_stage: str
    seed: int
    created_at: str = field(default_factory=utc_now_iso)
    updated_at: str = field(default_factory=utc_now_iso)
    error: dict[str, Any] | None = None
