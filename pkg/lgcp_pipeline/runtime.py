from __future__ import annotations

from typing import Any, Callable

from lgcp.errors import LGCPError

from .config import RunConfig
from .graph import build_run_graph
from .models import StageResult
from .stages import Stage, StageContext, stages_for
from .store import RunStore


def error_record(exc: BaseException) -> dict[str, Any]:
    """One-line error record: message, exception type and any path, line or key context."""
    record: dict[str, Any] = {"error": str(exc), "type": type(exc).__name__}
    if isinstance(exc, LGCPError):
        record.update(exc.context())
    elif isinstance(exc, OSError) and exc.filename:
        record["path"] = str(exc.filename)
    return record


class RunOrchestrator:
    """Runs one command's stages in order and records every stage result."""

    def __init__(
        self,
        store: RunStore,
        stages: list[Stage] | None = None,
        use_langgraph: bool = True,
        on_result: Callable[[StageResult], None] | None = None,
    ) -> None:
        self.store = store
        self.stages = stages
        self.use_langgraph = use_langgraph
        self.on_result = on_result

    def run(self, command: str, config: RunConfig) -> dict[str, Any]:
        stages = self.stages if self.stages is not None else stages_for(command)
        run = self.store.start_run(command, config)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        ctx = StageContext(config=config, output_dir=config.output_dir)
        results: list[StageResult] = []

        def record(result: StageResult) -> None:
            results.append(result)
            self.store.append_event(run.run_id, result)
            if self.on_result is not None:
                self.on_result(result)

        graph = build_run_graph(stages, on_result=record, use_langgraph=self.use_langgraph)
        try:
            graph.invoke({"ctx": ctx, "completed": [], "last_result": None})
        except (LGCPError, OSError) as exc:
            current = stages[len(results)].name if len(results) < len(stages) else "end"
            self.store.finish_run(run.run_id, status="failed", current_stage=current, error=error_record(exc))
            raise

        final_stage = results[-1].stage if results else "start"
        status = "completed_with_warnings" if any(r.warnings for r in results) else "completed"
        self.store.finish_run(run.run_id, status=status, current_stage=final_stage)
        return {
            "run_id": run.run_id,
            "command": command,
            "status": status,
            "current_stage": final_stage,
            "seed": config.seed,
            "output_dir": str(config.output_dir),
            "stages": {r.stage: r.payload for r in results},
            "outputs": [name for r in results for name in r.outputs],
            "warnings": [w for r in results for w in r.warnings],
        }
