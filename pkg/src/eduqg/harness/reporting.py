"""Render metric reports as aligned markdown-style tables plus CSV.

Per column, the best value is **bold** and the second best *italic*
(first occurrence wins ties); a candidate that significantly beats its
designated baseline carries a "(*)" marker. Arrows mark the improvement
direction: down for perplexity, up elsewhere.
"""

from __future__ import annotations

import io
import random
from enum import Enum
from typing import Sequence

from ..generation import DecodeSpec, generate
from ..metrics import LOWER_IS_BETTER, MetricReport, SignificanceResult
from ..model import Checkpoint

_COLUMN_LABELS = {
    "bleu1": "BLEU-1", "bleu2": "BLEU-2", "bleu3": "BLEU-3", "bleu4": "BLEU-4",
    "f1": "F1-Score", "perplexity": "Perplexity", "diversity": "Diversity",
}


class ReportStyle(str, Enum):
    TABLE1 = "table1"     # linguistic quality of human questions per dataset
    TABLE2 = "table2"     # zero-shot model comparison, all seven metrics
    TABLE4 = "table4"     # comparison after the extra fine-tuning stage

    @property
    def columns(self) -> tuple[str, ...]:
        if self is ReportStyle.TABLE1:
            return ("perplexity", "diversity")
        return ("bleu1", "bleu2", "bleu3", "bleu4", "f1", "perplexity", "diversity")


def _column_header(metric: str) -> str:
    arrow = "↓" if metric in LOWER_IS_BETTER else "↑"
    return f"{_COLUMN_LABELS[metric]} {arrow}"


def _format_value(metric: str, value: float) -> str:
    return f"{value:.3f}" if metric == "diversity" else f"{value:.2f}"


def _rank_markers(values: list[float | None], lower_better: bool) -> list[str]:
    present = [(v, i) for i, v in enumerate(values) if v is not None]
    if len(present) < 2:
        return [""] * len(values)
    ordered = sorted(present, key=lambda p: (p[0] if lower_better else -p[0], p[1]))
    markers = [""] * len(values)
    markers[ordered[0][1]] = "bold"
    markers[ordered[1][1]] = "italic"
    return markers


def render_report(
    reports: Sequence[MetricReport],
    significance: Sequence[SignificanceResult] = (),
    style: ReportStyle = ReportStyle.TABLE2,
) -> tuple[str, str]:
    """Returns (aligned markdown table, CSV of the raw values)."""
    if not reports:
        raise ValueError("need at least one report")
    style = ReportStyle(style)
    columns = style.columns

    significant = {
        (res.candidate_id, res.metric)
        for res in significance
        if res.significant
    }

    label = "Dataset" if style is ReportStyle.TABLE1 else "Model"
    header = [label, *(_column_header(c) for c in columns)]

    value_grid: list[list[float | None]] = [
        [rep.corpus_scores.get(c) for c in columns] for rep in reports
    ]
    cell_grid: list[list[str]] = []
    for col_index, metric in enumerate(columns):
        column_values = [row[col_index] for row in value_grid]
        ranks = (_rank_markers(column_values, metric in LOWER_IS_BETTER)
                 if len(reports) > 1 else [""] * len(reports))
        for row_index, rep in enumerate(reports):
            if col_index == 0:
                cell_grid.append([rep.model_id])
            value = column_values[row_index]
            if value is None:
                cell_grid[row_index].append("-")
                continue
            text = _format_value(metric, value)
            if ranks[row_index] == "bold":
                text = f"**{text}**"
            elif ranks[row_index] == "italic":
                text = f"*{text}*"
            if (rep.model_id, metric) in significant:
                text += " (*)"
            cell_grid[row_index].append(text)

    widths = [max(len(header[i]), *(len(row[i]) for row in cell_grid))
              for i in range(len(header))]

    def fmt_row(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    lines = [fmt_row(header),
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    lines += [fmt_row(row) for row in cell_grid]
    table = "\n".join(lines)

    csv_buf = io.StringIO()
    csv_buf.write(",".join([label.lower(), *columns]) + "\n")
    for rep, row in zip(reports, value_grid):
        csv_buf.write(",".join([rep.model_id, *("" if v is None else repr(v) for v in row)]) + "\n")
    return table, csv_buf.getvalue()


def examples_table(
    models: Sequence[tuple[str, Checkpoint]],
    contexts: Sequence[str],
    k: int,
    seed: int,
    decode: DecodeSpec | None = None,
    prefix: str = "generate question: ",
    context_width: int = 80,
) -> str:
    """Side-by-side generated questions for k seeded-random contexts."""
    if k > len(contexts):
        raise ValueError(f"k={k} exceeds {len(contexts)} available contexts")
    header = ["Context", *(name for name, _ in models)]
    if k == 0:
        return "| " + " | ".join(header) + " |"

    rng = random.Random(f"examples:{seed}")
    chosen = sorted(rng.sample(range(len(contexts)), k))
    picked = [contexts[i] for i in chosen]

    per_model = []
    for _, ckpt in models:
        per_model.append(generate(ckpt, picked, decode, prefix=prefix))

    rows = []
    for row_index, ctx in enumerate(picked):
        shown = ctx if len(ctx) <= context_width else ctx[: context_width - 3] + "..."
        rows.append([f"({row_index + 1}) {shown}",
                     *(questions[row_index] for questions in per_model)])

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["| " + " | ".join(c.ljust(w) for c, w in zip(header, widths)) + " |",
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    lines += ["| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |" for r in rows]
    return "\n".join(lines)
