"""Corpus-level ROUGE-L reports, stratified by answer kind and attribute."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from qgen.corpus import ANSWER_KINDS, ATTRIBUTES, Dataset
from qgen.metrics import rouge_l_f1

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    overall: float
    by_answer_kind: dict[str, float] = field(default_factory=dict)
    by_attribute: dict[str, float] = field(default_factory=dict)
    n: dict[str, int] = field(default_factory=dict)
    missing: list[str] = field(default_factory=list)
    unknown: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "by_answer_kind": self.by_answer_kind,
            "by_attribute": self.by_attribute,
            "n": self.n,
            "missing": self.missing,
            "unknown": self.unknown,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        return cls(
            float(d["overall"]),
            dict(d.get("by_answer_kind", {})),
            dict(d.get("by_attribute", {})),
            dict(d.get("n", {})),
            list(d.get("missing", [])),
            list(d.get("unknown", [])),
        )


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def evaluate(predictions: Mapping[str, str], references: Dataset, *, strict: bool = True) -> EvalReport:
    """Mean ROUGE-L F1 of predictions against reference questions.

    A reference without a prediction scores 0 when ``strict`` and is dropped
    (with a warning) otherwise; either way it is listed in ``missing``.
    Predictions for unknown ids are listed in ``unknown`` and ignored.
    """
    ref_ids = {r.id for r in references}
    unknown = sorted(set(predictions) - ref_ids)
    missing = []
    per_kind: dict[str, list[float]] = {k: [] for k in ANSWER_KINDS}
    per_attr: dict[str, list[float]] = {a: [] for a in ATTRIBUTES}
    scores = []
    # sorted by id so the float sums do not depend on input order
    for rec in sorted(references, key=lambda r: r.id):
        pred = predictions.get(rec.id)
        if pred is None:
            missing.append(rec.id)
            if not strict:
                continue
            score = 0.0
        else:
            score = rouge_l_f1(pred, rec.question)
        scores.append(score)
        per_kind[rec.answer_kind].append(score)
        per_attr[rec.attribute].append(score)
    if missing and not strict:
        log.warning("%d reference item(s) have no prediction and were excluded", len(missing))
    if unknown:
        log.warning("%d prediction(s) have ids not in the references", len(unknown))
    n = {"overall": len(scores)}
    n.update({f"answer_kind:{k}": len(v) for k, v in per_kind.items() if v})
    n.update({f"attribute:{a}": len(v) for a, v in per_attr.items() if v})
    return EvalReport(
        overall=_mean(scores),
        by_answer_kind={k: _mean(v) for k, v in per_kind.items() if v},
        by_attribute={a: _mean(v) for a, v in per_attr.items() if v},
        n=n,
        missing=missing,
        unknown=unknown,
    )


# -- formatting --


def _cell(x: float | None) -> str:
    return "-" if x is None else f"{x:.4f}"


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = []
    for j, row in enumerate([header, *rows]):
        cells = [str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_report(report: EvalReport, group_by: Sequence[str] = ("answer_kind", "attribute")) -> str:
    rows = [["all", _cell(report.overall), str(report.n.get("overall", ""))]]
    if "answer_kind" in group_by:
        for k, v in report.by_answer_kind.items():
            rows.append([k, _cell(v), str(report.n.get(f"answer_kind:{k}", ""))])
    if "attribute" in group_by:
        for a, v in report.by_attribute.items():
            rows.append([a, _cell(v), str(report.n.get(f"attribute:{a}", ""))])
    return _table(["stratum", "ROUGE-L", "n"], rows)


def report_json(report: EvalReport, group_by: Sequence[str] = ("answer_kind", "attribute")) -> str:
    d = report.to_dict()
    if "answer_kind" not in group_by:
        d.pop("by_answer_kind")
    if "attribute" not in group_by:
        d.pop("by_attribute")
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class SummaryRow:
    """One method's line in an All / Explicit / Implicit table."""

    method: str
    all: float
    explicit: float | None = None
    implicit: float | None = None

    @classmethod
    def from_report(cls, method: str, report: EvalReport) -> "SummaryRow":
        return cls(method, report.overall, report.by_answer_kind.get("explicit"), report.by_answer_kind.get("implicit"))


def format_summary(rows: Sequence[SummaryRow]) -> str:
    return _table(["Method", "All", "Explicit", "Implicit"], [[r.method, _cell(r.all), _cell(r.explicit), _cell(r.implicit)] for r in rows])


@dataclass
class DecodingGrid:
    """Rows are test-time decodings, columns ranking method / training decoding."""

    rows: list[str]
    columns: list[str]
    cells: dict[tuple[str, str], float]

    def value(self, row: str, column: str) -> float | None:
        return self.cells.get((row, column))

    def render(self) -> str:
        body = [[r, *(_cell(self.value(r, c)) for c in self.columns)] for r in self.rows]
        return _table(["Decoding Type", *self.columns], body)

    def to_json(self) -> str:
        return json.dumps(
            {
                "rows": self.rows,
                "columns": self.columns,
                "cells": [[r, c, v] for (r, c), v in self.cells.items()],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DecodingGrid":
        d = json.loads(text)
        return cls(list(d["rows"]), list(d["columns"]), {(r, c): float(v) for r, c, v in d["cells"]})


def decoding_grid(results: Mapping[tuple[str, str], EvalReport | float]) -> DecodingGrid:
    """Grid from ``{(column, test_decoding): report}``; axis order follows first appearance.

    The key's first element names the column (ranking method, possibly with
    its training decoding); the second names the test-time decoding row.
    """
    rows: list[str] = []
    cols: list[str] = []
    cells = {}
    for (col, row), value in results.items():
        if col not in cols:
            cols.append(col)
        if row not in rows:
            rows.append(row)
        cells[(row, col)] = value.overall if isinstance(value, EvalReport) else float(value)
    return DecodingGrid(rows, cols, cells)
