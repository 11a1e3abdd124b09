from __future__ import annotations

import time
from typing import Any, Callable, TypedDict

from .models import StageResult
from .stages import Stage, StageContext

ResultHook = Callable[[StageResult], None]


class RunState(TypedDict):
    ctx: StageContext
    completed: list[str]
    last_result: StageResult | None


def _node(stage: Stage, on_result: ResultHook | None) -> Callable[[RunState], dict[str, Any]]:
    def run(state: RunState) -> dict[str, Any]:
        started = time.perf_counter()
        result = stage.run(state["ctx"])
        result.elapsed_s = round(time.perf_counter() - started, 6)
        if on_result is not None:
            on_result(result)
        return {"completed": state["completed"] + [stage.name], "last_result": result}

    return run


class FallbackRunGraph:
    """Sequential fallback used when LangGraph is unavailable."""

    def __init__(self, stages: list[Stage], on_result: ResultHook | None = None) -> None:
        self._order = [_node(stage, on_result) for stage in stages]

    def invoke(self, state: RunState) -> RunState:
        current = dict(state)
        for fn in self._order:
            current.update(fn(current))  # type: ignore[arg-type]
        return current  # type: ignore[return-value]


def build_run_graph(stages: list[Stage], on_result: ResultHook | None = None, use_langgraph: bool = True) -> Any:
    if not use_langgraph:
        return FallbackRunGraph(stages, on_result)
    try:
        from langgraph.graph import END, START, StateGraph
    except Exception:
        return FallbackRunGraph(stages, on_result)

    graph = StateGraph(RunState)
    previous = START
    for stage in stages:
        graph.add_node(stage.name, _node(stage, on_result))
        graph.add_edge(previous, stage.name)
        previous = stage.name
    graph.add_edge(previous, END)
    return graph.compile()
