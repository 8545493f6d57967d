"""Schedule traces: the per-step record of every scheduling decision.

Each trace covers one (window, variate) pair. Serialization is JSON
Lines, one record per scheduling step, schema ``leapts-trace-v1``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

__all__ = ["TraceStep", "ScheduleTrace", "write_trace_jsonl", "read_trace_jsonl"]

TRACE_SCHEMA = "leapts-trace-v1"


@dataclass
class TraceStep:
    step: int
    category: int
    category_name: str
    soft: list[float]
    len_cont: float
    len_int: int
    cursor_before: int
    cursor_after: int
    ctrl_mag: float
    time_mag: float
    ctrl_ratio: float
    time_ratio: float
    forced: bool = False


@dataclass
class ScheduleTrace:
    window: int
    variate: int
    volatility: float = 0.0
    steps: list[TraceStep] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def total_int_length(self) -> int:
        return sum(s.len_int for s in self.steps)

    def categories(self) -> list[int]:
        return [s.category for s in self.steps]


def write_trace_jsonl(traces, path):
    with open(path, "w", encoding="utf-8") as fh:
        for tr in traces:
            for st in tr.steps:
                rec = {
                    "schema": TRACE_SCHEMA,
                    "window": tr.window,
                    "variate": tr.variate,
                    "volatility": tr.volatility,
                }
                rec.update(asdict(st))
                fh.write(json.dumps(rec) + "\n")


def read_trace_jsonl(path) -> list[ScheduleTrace]:
    traces: dict[tuple[int, int], ScheduleTrace] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.pop("schema", TRACE_SCHEMA) != TRACE_SCHEMA:
                raise ValueError(f"unsupported trace schema in {path}")
            key = (rec.pop("window"), rec.pop("variate"))
            vol = rec.pop("volatility", 0.0)
            if key not in traces:
                traces[key] = ScheduleTrace(window=key[0], variate=key[1], volatility=vol)
            traces[key].steps.append(TraceStep(**rec))
    out = list(traces.values())
    for tr in out:
        tr.steps.sort(key=lambda s: s.step)
    return out
