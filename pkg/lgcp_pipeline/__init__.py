"""Command pipeline for the lgcp library: config, stages, run store and orchestrator."""

from .config import RunConfig
from .graph import build_run_graph
from .models import RunRecord, StageResult
from .runtime import RunOrchestrator
from .stages import COMMANDS, StageContext, stages_for
from .store import FileRunStore, InMemoryRunStore

__all__ = [
    "COMMANDS",
    "FileRunStore",
    "InMemoryRunStore",
    "RunConfig",
    "RunOrchestrator",
    "RunRecord",
    "StageContext",
    "StageResult",
    "build_run_graph",
    "stages_for",
]
