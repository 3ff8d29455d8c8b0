"""CSV and JSON writers for simulation results.

Column order is fixed and numbers are written with ``repr``-style
formatting, so files are byte-identical for identical runs regardless of
locale.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable

from .config import ScenarioConfig
from .sim import RunResult

METRICS_COLUMNS = ["flow_id", "window_start", "window_end", "achieved_bps", "green_sent", "red_sent",
                   "green_dropped", "red_dropped", "ecn_feedback", "rtt_mean_s"]
SUMMARY_COLUMNS = ["flow_id", "target_bps", "achieved_bps", "attainment", "excess_bps", "deficit_bps"]


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _csv(columns: list[str], rows: Iterable[Iterable[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def metrics_csv(result: RunResult) -> str:
    return _csv(METRICS_COLUMNS, (
        (r.flow_id, r.window_start, r.window_end, r.achieved_rate, r.green_sent, r.red_sent,
         r.green_dropped, r.red_dropped, r.ecn_feedback, r.rtt_sample_mean) for r in result.records))


def summary_csv(result: RunResult) -> str:
    return _csv(SUMMARY_COLUMNS, (
        (f.flow_id, f.target, f.achieved, f.attainment, f.excess, f.deficit) for f in result.flows))


def run_json(result: RunResult, config: ScenarioConfig, seed: int) -> str:
    def clean(x: float) -> float | str:
        return fmt(x) if isinstance(x, float) and not math.isfinite(x) else x

    doc = {
        "regime": result.regime,
        "fairness_index": clean(result.fairness),
        "seed": seed,
        "counters": result.counters,
        "events": result.events,
        "flows": [{
            "flow_id": f.flow_id, "green_sent": f.green_sent, "yellow_sent": f.yellow_sent,
            "red_sent": f.red_sent, "green_dropped": f.green_dropped, "red_dropped": f.red_dropped,
            "timeouts": f.timeouts, "fast_retransmits": f.fast_retransmits,
            "rtt_mean_s": f.rtt_mean, **{k: clean(v) for k, v in f.extra.items()},
        } for f in result.flows],
        "config": {**config.resolved, "seed": seed},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_run(out: Path, result: RunResult, config: ScenarioConfig, seed: int) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.csv": metrics_csv(result),
        "summary.csv": summary_csv(result),
        "run.json": run_json(result, config, seed),
    }
    paths = []
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths
