"""Run reports and their deterministic JSON, CSV and markdown renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Check:
    criterion: str
    name: str
    value: float
    tolerance: str
    passed: bool


@dataclass
class RunReport:
    scenario: str
    stages: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)     # name -> (header, rows)
    timings: dict = field(default_factory=dict)

    def check(self, criterion: str, name: str, value: float, tolerance: str, passed: bool):
        c = Check(criterion, name, float(value), tolerance, bool(passed))
        self.checks.append(c)
        return c

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


# --- JSON ---------------------------------------------------------------------------

def _float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def plain(obj):
    """numpy/complex/tuple values turned into JSON-ready Python objects."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj, indent: int = 0) -> str:
    """JSON with sorted keys and floats printed to 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(str(obj))


def report_json(report: RunReport) -> str:
    body = {
        "scenario": report.scenario,
        "stages": plain(report.stages),
        "checks": [plain(c.__dict__) for c in report.checks],
        "passed": report.passed,
    }
    return dumps(body) + "\n"


# --- CSV and markdown ---------------------------------------------------------------

def table_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_markdown(report: RunReport) -> str:
    lines = [f"# {report.scenario}", "", "| criterion | check | value | tolerance | result |",
             "|---|---|---|---|---|"]
    for c in report.checks:
        lines.append(f"| {c.criterion} | {c.name} | {c.value:.6g} | {c.tolerance} | "
                     f"{'PASS' if c.passed else 'FAIL'} |")
    if not report.checks:
        lines.append("| - | no asserted tolerances | | | |")
    lines += ["", f"overall: {'PASS' if report.passed else 'FAIL'}", ""]
    if report.timings:
        lines += ["| stage | seconds |", "|---|---|"]
        lines += [f"| {k} | {v:.2f} |" for k, v in report.timings.items()]
        lines.append("")
    return "\n".join(lines)


def emit_report(report: RunReport, out_dir, formats=("json", "csv", "markdown")) -> list:
    """Write report.json, one CSV per table, summary.md and timings.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    if "json" in formats:
        put("report.json", report_json(report))
        put("timings.json", dumps(plain(report.timings)) + "\n")
    if "csv" in formats:
        for name, (header, rows) in sorted(report.tables.items()):
            put(f"{name}.csv", table_csv(header, rows))
    if "markdown" in formats:
        put("summary.md", report_markdown(report))
    return written
