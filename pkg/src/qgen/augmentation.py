"""Consistency-filtered synthetic question augmentation.

For each eligible training triplet ``(c, a, q)``:

1. prompt the backend with five same-attribute exemplars and sample ``M``
   alternative questions;
2. answer the ground-truth question greedily, giving a second reference
   answer ``a_bar``;
3. answer each candidate greedily and keep it when ROUGE-1 F1 of that answer
   against ``a`` *or* against ``a_bar`` is strictly above the threshold.

Human records keep loss weight ``lambda``; synthetic ones get ``1 - lambda``.
"""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from qgen._util import derive_seed
from qgen.backend import Backend, DecodingParams
from qgen.corpus import Dataset, QARecord, minority_subset
from qgen.errors import BackendError, ContractViolation, ExemplarShortage
from qgen.metrics import rouge_1_f1

log = logging.getLogger(__name__)

N_EXEMPLARS = 5
QG_INSTRUCTION = "Another question with the same answer is:"


@dataclass(frozen=True)
class PromptBundle:
    exemplars: tuple[QARecord, ...]
    target: QARecord
    mode: str = "question_gen"

    def __post_init__(self) -> None:
        object.__setattr__(self, "exemplars", tuple(self.exemplars))
        if self.mode not in ("question_gen", "question_answering"):
            raise ContractViolation(f"unknown prompt mode {self.mode!r}")
        if len(self.exemplars) != N_EXEMPLARS:
            raise ContractViolation(f"expected {N_EXEMPLARS} exemplars, got {len(self.exemplars)}")
        for ex in self.exemplars:
            if ex.attribute != self.target.attribute:
                raise ContractViolation(
                    f"exemplar {ex.id} has attribute {ex.attribute!r}, target has {self.target.attribute!r}"
                )
            if ex.id == self.target.id:
                raise ContractViolation(f"target {ex.id} appears among its own exemplars")


def build_prompt(bundle: PromptBundle) -> str:
    parts = []
    if bundle.mode == "question_gen":
        for ex in bundle.exemplars:
            parts.append(f"Context: {ex.context}\nAnswer: {ex.answer}\nQuestion: {ex.question}\n\n")
        t = bundle.target
        parts.append(f"Context: {t.context}\nAnswer: {t.answer}\nQuestion: {t.question}\n{QG_INSTRUCTION}")
    else:
        for ex in bundle.exemplars:
            parts.append(f"Context: {ex.context}\nQuestion: {ex.question}\nAnswer: {ex.answer}\n\n")
        t = bundle.target
        parts.append(f"Context: {t.context}\nQuestion: {t.question}\nAnswer:")
    return "".join(parts)


def select_exemplars(d: Dataset, target: QARecord, k: int = N_EXEMPLARS, rng: random.Random | None = None) -> list[QARecord]:
    """``k`` distinct same-attribute records other than ``target``, sampled with ``rng``."""
    pool = [r for r in d if r.attribute == target.attribute and r.id != target.id]
    if len(pool) < k:
        raise ExemplarShortage(target.attribute, len(pool), k)
    rng = rng if rng is not None else random.Random(0)
    return rng.sample(pool, k)


@dataclass(frozen=True)
class AugmentedRecord:
    base: QARecord
    provenance: str
    weight: float
    parent_id: str | None = None
    matched_against: str | None = None

    def __post_init__(self) -> None:
        if self.provenance not in ("human", "synthetic"):
            raise ContractViolation(f"unknown provenance {self.provenance!r}")
        if not 0.0 < self.weight <= 1.0:
            raise ContractViolation(f"weight must lie in (0, 1], got {self.weight}")
        if self.provenance == "synthetic" and self.parent_id is None:
            raise ContractViolation("synthetic records need a parent_id")

    def to_dict(self) -> dict:
        return {
            **self.base.to_dict(),
            "provenance": self.provenance,
            "weight": self.weight,
            "parent_id": self.parent_id,
            "matched_against": self.matched_against,
        }


@dataclass(frozen=True)
class AugmentationConfig:
    m_candidates: int = 4
    threshold: float = 0.5
    lam: float = 0.8
    minority_only: bool = True
    gen_params: DecodingParams = field(default_factory=lambda: DecodingParams.nucleus(top_p=0.9, temperature=0.8, n=4))
    qa_params: DecodingParams = field(default_factory=DecodingParams.greedy)
    rng_seed: int = 0
    workers: int = 4
    tolerant: bool = False

    def __post_init__(self) -> None:
        if self.m_candidates < 0:
            raise ContractViolation("m_candidates must be non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ContractViolation("threshold must lie in [0, 1]")
        if not 0.0 < self.lam < 1.0:
            raise ContractViolation("lambda must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "m_candidates": self.m_candidates,
            "threshold": self.threshold,
            "lambda": self.lam,
            "minority_only": self.minority_only,
            "gen_params": self.gen_params.to_dict(),
            "qa_params": self.qa_params.to_dict(),
            "rng_seed": self.rng_seed,
        }


def consistency_match(generated_answer: str, answer: str, regenerated_answer: str | None, threshold: float) -> str | None:
    """Which reference ``generated_answer`` agrees with, or ``None``.

    Comparison is strict: a ROUGE-1 F1 exactly equal to ``threshold`` fails.
    """
    if rouge_1_f1(generated_answer, answer) > threshold:
        return "ground_truth_answer"
    if regenerated_answer is not None and rouge_1_f1(generated_answer, regenerated_answer) > threshold:
        return "regenerated_answer"
    return None


class _Answerer:
    def __init__(self, exemplars: Sequence[QARecord], rec: QARecord, backend: Backend, params: DecodingParams):
        self.exemplars = tuple(exemplars)
        self.rec = rec
        self.backend = backend
        self.params = params

    def __call__(self, question: str) -> str:
        prompt = build_prompt(PromptBundle(self.exemplars, self.rec.with_question(question), "question_answering"))
        return self.backend.generate(prompt, self.params)[0].text.strip()


def augment_record(rec: QARecord, d: Dataset, cfg: AugmentationConfig, backend: Backend) -> list[AugmentedRecord]:
    """Synthetic records for one triplet (human record not included)."""
    if cfg.m_candidates == 0:
        return []
    rng = random.Random(derive_seed(cfg.rng_seed, "exemplars", rec.id))
    exemplars = select_exemplars(d, rec, N_EXEMPLARS, rng)
    prompt = build_prompt(PromptBundle(exemplars, rec, "question_gen"))
    completions = backend.generate(prompt, cfg.gen_params.with_n(cfg.m_candidates))

    gold = rec.question.strip()
    seen: set[str] = set()
    candidates: list[tuple[int, str]] = []
    for j, comp in enumerate(completions):
        q = comp.text.strip()
        if not q or q == gold or q in seen:
            continue
        seen.add(q)
        candidates.append((j, q))
    if not candidates:
        return []

    answer = _Answerer(exemplars, rec, backend, cfg.qa_params)
    regenerated = answer(rec.question)
    out = []
    for j, q in candidates:
        matched = consistency_match(answer(q), rec.answer, regenerated, cfg.threshold)
        if matched is None:
            continue
        out.append(
            AugmentedRecord(
                base=rec.with_question(q, id=f"{rec.id}#syn{j}"),
                provenance="synthetic",
                weight=1.0 - cfg.lam,
                parent_id=rec.id,
                matched_against=matched,
            )
        )
    return out


@dataclass
class AugmentationResult:
    records: list[AugmentedRecord]
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n_synthetic(self) -> int:
        return sum(r.provenance == "synthetic" for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def augment_dataset(d: Dataset, cfg: AugmentationConfig, backend: Backend) -> AugmentationResult:
    """Human records (in input order) followed by synthetics grouped by parent.

    Records are processed on a thread pool; assembly order does not depend on
    completion order.  With ``cfg.tolerant`` a failing record is skipped and
    reported, otherwise the first failure is raised tagged with its record id.
    """
    human = [AugmentedRecord(r, "human", cfg.lam) for r in d]
    eligible = list(minority_subset(d) if cfg.minority_only else d)

    def work(rec: QARecord):
        try:
            return augment_record(rec, d, cfg, backend), None
        except BackendError as exc:
            if not cfg.tolerant:
                raise exc.with_record(rec.id)
            return [], str(exc)
        except ExemplarShortage as exc:
            if not cfg.tolerant:
                raise
            return [], str(exc)

    if cfg.m_candidates == 0 or not eligible:
        results = [([], None)] * len(eligible)
    elif cfg.workers <= 1:
        results = [work(r) for r in eligible]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, eligible))

    records = list(human)
    errors = []
    for rec, (synth, err) in zip(eligible, results):
        if err is not None:
            log.warning("skipping record %s: %s", rec.id, err)
            errors.append((rec.id, err))
        records.extend(synth)
    return AugmentationResult(records, errors)
