"""Loading, validating and stratifying FairytaleQA-shaped QA corpora.

Rows are ``{id, context, answer, question, attribute, answer_kind, split}``
in JSONL or CSV.  Invalid rows are collected into ``Dataset.errors`` rather
than aborting the load, unless ``strict=True``.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from qgen.errors import DatasetError

ATTRIBUTES = (
    "character",
    "setting",
    "action",
    "feeling",
    "causal relationship",
    "outcome resolution",
    "prediction",
)
MAJORITY_ATTRIBUTES = frozenset({"action", "causal relationship"})
ANSWER_KINDS = ("explicit", "implicit")
SPLITS = ("train", "val", "test")
FIELDS = ("id", "context", "answer", "question", "attribute", "answer_kind", "split")

_SPLIT_ALIASES = {"validation": "val", "valid": "val", "dev": "val"}


def normalize_attribute(value: str) -> str:
    """Lower-case, trim, and treat ``_``/``-`` as spaces: ``Causal_Relationship`` -> ``causal relationship``."""
    text = str(value).strip().lower().replace("_", " ").replace("-", " ")
    return " ".join(text.split())


@dataclass(frozen=True)
class QARecord:
    id: str
    context: str
    answer: str
    question: str
    attribute: str
    answer_kind: str
    split: str = "train"

    def __post_init__(self) -> None:
        for name in ("context", "answer", "question"):
            if not str(getattr(self, name)).strip():
                raise ValueError(f"field {name!r} is empty")
        attr = normalize_attribute(self.attribute)
        if attr not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {self.attribute!r}")
        kind = str(self.answer_kind).strip().lower()
        if kind not in ANSWER_KINDS:
            raise ValueError(f"unknown answer_kind {self.answer_kind!r}")
        split = str(self.split).strip().lower()
        split = _SPLIT_ALIASES.get(split, split)
        if split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "attribute", attr)
        object.__setattr__(self, "answer_kind", kind)
        object.__setattr__(self, "split", split)

    def with_question(self, question: str, *, id: str | None = None) -> "QARecord":
        return replace(self, question=question, id=self.id if id is None else id)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in FIELDS}

    @classmethod
    def from_dict(cls, row: Mapping) -> "QARecord":
        missing = [name for name in FIELDS if name not in row or row[name] is None]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        return cls(**{name: row[name] for name in FIELDS})


@dataclass(frozen=True)
class RowError:
    row: int  # 0-based index among data rows
    message: str

    def __str__(self) -> str:
        return f"row {self.row}: {self.message}"


@dataclass(frozen=True)
class Dataset:
    records: tuple[QARecord, ...] = ()
    errors: tuple[RowError, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "errors", tuple(self.errors))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[QARecord]:
        return iter(self.records)

    def __getitem__(self, idx: int) -> QARecord:
        return self.records[idx]

    @property
    def counts_by_attribute(self) -> dict[str, int]:
        counts = Counter(r.attribute for r in self.records)
        return {a: counts[a] for a in ATTRIBUTES if counts[a]}

    def by_id(self) -> dict[str, QARecord]:
        return {r.id: r for r in self.records}

    def filter(self, predicate) -> "Dataset":
        return Dataset(tuple(r for r in self.records if predicate(r)))


def minority_subset(d: Dataset) -> Dataset:
    """Records whose attribute is neither ``action`` nor ``causal relationship``."""
    return d.filter(lambda r: r.attribute not in MAJORITY_ATTRIBUTES)


def _iter_jsonl_rows(path: Path) -> Iterator[tuple[int, dict | None, str | None]]:
    idx = 0
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                yield idx, None, f"invalid JSON: {exc.msg}"
            else:
                if isinstance(obj, dict):
                    yield idx, obj, None
                else:
                    yield idx, None, f"expected an object, got {type(obj).__name__}"
            idx += 1


def _iter_csv_rows(path: Path) -> Iterator[tuple[int, dict | None, str | None]]:
    with path.open("r", encoding="utf-8", newline="") as f:
        for idx, row in enumerate(csv.DictReader(f)):
            yield idx, row, None


def load_dataset(
    path: str | Path,
    format: str | None = None,
    *,
    strict: bool = False,
    field_map: Mapping[str, str] | None = None,
) -> Dataset:
    """Read a JSONL or CSV corpus.

    ``field_map`` maps canonical field names to the column names used in the
    file, e.g. ``{"question": "q", "answer_kind": "ex-or-im"}``.  The format is
    inferred from the suffix when not given.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    format = format.lower()
    if format == "jsonl":
        rows = _iter_jsonl_rows(path)
    elif format == "csv":
        rows = _iter_csv_rows(path)
    else:
        raise ValueError(f"unsupported format {format!r} (expected jsonl or csv)")

    mapping = dict(field_map or {})
    records: list[QARecord] = []
    errors: list[RowError] = []
    for idx, row, parse_error in rows:
        if parse_error is not None:
            errors.append(RowError(idx, parse_error))
            continue
        if mapping:
            row = {name: row.get(mapping.get(name, name)) for name in FIELDS}
        try:
            records.append(QARecord.from_dict(row))
        except (ValueError, TypeError) as exc:
            errors.append(RowError(idx, str(exc)))
    if strict and errors:
        raise DatasetError(errors)
    return Dataset(tuple(records), tuple(errors))


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=False))
            f.write("\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"invalid JSON at {path}:{n}: {exc.msg}") from exc
    return out


def save_dataset(path: str | Path, records: Sequence[QARecord]) -> None:
    write_jsonl(path, (r.to_dict() for r in records))
