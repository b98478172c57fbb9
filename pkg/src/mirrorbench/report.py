"""Result tables: core and extended layouts, delimited and grid output."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import UsageError
from .metrics import CORE_METRICS, EXTENDED_METRICS, LABELS, SENTINEL, AggregateMetrics, chance_baseline
from .world import Condition

GAP = "n/a"  # metric family absent from the stored aggregate
DELIMITERS = {"csv": ",", "tsv": "\t"}


@dataclass(frozen=True)
class Row:
    backend: str
    aggregate: Optional[AggregateMetrics]
    n_excluded: int = 0


def load_aggregates(results_dirs: Iterable) -> dict[str, list[Row]]:
    """Condition -> rows, one row per (results dir, backend)."""
    tables: dict[str, list[Row]] = {}
    seen: dict[tuple[str, str], int] = {}
    found = False
    for d in results_dirs:
        d = Path(d)
        if not d.is_dir():
            raise UsageError(f"{d} is not a directory")
        for path in sorted(d.glob("*.aggregate.json")):
            found = True
            data = json.loads(path.read_text(encoding="utf-8"))
            cond = Condition.parse(data["condition"]).value
            label = data.get("backend", d.name)
            key = (cond, label)
            seen[key] = seen.get(key, 0) + 1
            if seen[key] > 1:
                label = f"{label} ({d.name})"
            agg = AggregateMetrics.from_dict(data["aggregate"]) if data.get("aggregate") else None
            tables.setdefault(cond, []).append(Row(label, agg, data.get("n_excluded", 0)))
    if not found:
        raise UsageError("no *.aggregate.json files found in the given directories")
    return dict(sorted(tables.items()))


def cell(agg: Optional[AggregateMetrics], metric: str, precision: int = 2) -> str:
    if agg is None:
        return SENTINEL
    summary = agg.metrics.get(metric)
    if summary is None:
        return GAP
    return summary.format(precision)


def table_rows(rows: Sequence[Row], metrics: Sequence[str], precision: int = 2) -> list[list[str]]:
    header = ["backend"] + [LABELS[m] for m in metrics]
    body = [[r.backend] + [cell(r.aggregate, m, precision) for m in metrics] for r in rows]
    return [header] + body


def baseline_note(condition: str) -> str:
    return chance_baseline(condition).describe()


def render_grid(title: str, rows: list[list[str]], footer: str) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def line(r):
        return "| " + " | ".join(v.ljust(w) for v, w in zip(r, widths)) + " |"

    out = [title, rule, line(rows[0]), rule]
    out += [line(r) for r in rows[1:]]
    out += [rule, footer]
    return "\n".join(out)


def write_delimited(path: Path, rows: list[list[str]], footer: str, fmt: str):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=DELIMITERS[fmt], lineterminator="\n")
        writer.writerows(rows)
        writer.writerow([f"# {footer}"])


def report(results_dirs: Sequence, out_dir, fmt: str = "csv", precision: int = 2) -> list[Path]:
    if fmt not in DELIMITERS:
        raise UsageError(f"unknown format {fmt!r}; expected one of {', '.join(DELIMITERS)}")
    tables = load_aggregates(results_dirs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    grid = []
    for cond, rows in tables.items():
        footer = baseline_note(cond)
        for layout, metrics in (("core", CORE_METRICS), ("extended", EXTENDED_METRICS)):
            data = table_rows(rows, metrics, precision)
            path = out / f"{layout}_{cond}.{fmt}"
            write_delimited(path, data, footer, fmt)
            written.append(path)
            grid.append(render_grid(f"{cond} ({layout})", data, footer))
        excluded = [f"{r.backend}: {r.n_excluded}" for r in rows if r.n_excluded]
        if excluded:
            grid.append("excluded episodes (infrastructure): " + ", ".join(excluded))
    grid_path = out / "report.txt"
    grid_path.write_text("\n\n".join(grid) + "\n", encoding="utf-8")
    written.append(grid_path)
    return written
