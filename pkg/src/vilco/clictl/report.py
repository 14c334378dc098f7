"""Result aggregation: one comparison table plus plot-ready forgetting curves.

The table carries one row per method with the benchmark's column layout:
Method, Num. Task, Mem. Capacity, BwF(down), Avg R@1(up), Avg R@5(up),
where BwF and the averages come from the r1@mean / r5@mean matrices and
"up"/"down" render as the usual arrows. The curves CSV holds, per result,
2 x N rows (metrics bwf and avg_r1 against task index); BwF at task 0 is
reported as 0.0 since nothing can have been forgotten yet.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, is_dataclass

from ..clstrat import StrategyConfig

TABLE_HEADERS = ["Method", "Num. Task", "Mem. Capacity", "BwF↓", "Avg R@1↑", "Avg R@5↑"]
CURVE_HEADERS = ["method", "metric", "task_index", "value"]
_MEMORY_METHODS = ("replay", "bic", "vilco")


def _as_dict(result) -> dict:
    return asdict(result) if is_dataclass(result) else dict(result)


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.2f}"


def _mem_capacity(cfg: dict) -> int:
    if cfg["method"] not in _MEMORY_METHODS:
        return 0
    return int(cfg.get("strategy", {}).get("replay_capacity", StrategyConfig().replay_capacity))


def _table_rows(results: list[dict]) -> list[list[str]]:
    rows = []
    for r in sorted(results, key=lambda r: r["config"]["method"]):
        cfg = r["config"]
        rows.append(
            [
                cfg["method"],
                str(len(r["task_names"])),
                str(_mem_capacity(cfg)),
                _fmt(r["bwf_final"].get("r1@mean")),
                _fmt(p[-1] if (p := r["p_sequence"].get("r1@mean")) else None),
                _fmt(p[-1] if (p := r["p_sequence"].get("r5@mean")) else None),
            ]
        )
    return rows


def render_markdown(results: list[dict]) -> str:
    lines = ["| " + " | ".join(TABLE_HEADERS) + " |", "|" + "---|" * len(TABLE_HEADERS)]
    for row in _table_rows(results):
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def render_csv(results: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(TABLE_HEADERS)
    writer.writerows(_table_rows(results))
    return buf.getvalue()


def curve_rows(results: list[dict]) -> list[list]:
    """Per result: bwf and avg_r1 against task index, N rows each."""
    rows = []
    for r in sorted(results, key=lambda r: r["config"]["method"]):
        method = r["config"]["method"]
        n = len(r["task_names"])
        bwf = r["bwf_sequence"].get("r1@mean", [])
        avg = r["p_sequence"].get("r1@mean", [])
        for i in range(n):
            rows.append([method, "bwf", i, 0.0 if i == 0 else bwf[i - 1]])
        for i in range(n):
            rows.append([method, "avg_r1", i, avg[i]])
    return rows


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def emit_report(results: list, out_path: str) -> str:
    """Write the method table to out_path (.md or .csv) plus <stem>_curves.csv.

    Returns the rendered table text. All results must share a task kind.
    """
    if not results:
        raise ValueError("no results to report")
    dicts = [_as_dict(r) for r in results]
    kinds = {d["config"]["task_kind"] for d in dicts}
    if len(kinds) > 1:
        raise ValueError(f"results mix task kinds: {sorted(kinds)}")
    ext = os.path.splitext(out_path)[1].lower()
    if ext == ".md":
        table = render_markdown(dicts)
    elif ext == ".csv":
        table = render_csv(dicts)
    else:
        raise ValueError(f"table output must end in .md or .csv, got {out_path!r}")
    _atomic_write_text(out_path, table)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CURVE_HEADERS)
    writer.writerows(curve_rows(dicts))
    _atomic_write_text(os.path.splitext(out_path)[0] + "_curves.csv", buf.getvalue())
    return table
