"""Overgenerate-and-rank: sample K candidate questions, then pick one.

Two selection criteria are available: lowest perplexity under the backend
(teacher-forced on the generation prompt), or highest score under a trained
:class:`~qgen.scorer.ScorerModel`.  Ties go to the earlier candidate.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qgen.backend import Backend, DecodingParams, TokenScore
from qgen.corpus import Dataset, QARecord
from qgen.errors import BackendError, ContractViolation, EmptyCandidatePool
from qgen.scorer import ScorerModel, TrainingGroup, feature_matrix

log = logging.getLogger(__name__)

EXTRA_BATCHES = 3
METHODS = ("perplexity", "dist_match")


def qg_prompt(context: str, answer: str) -> str:
    return f"Generate question given context and answer: Context: {context} Answer: {answer}"


@dataclass(frozen=True)
class Candidate:
    text: str
    token_scores: tuple[TokenScore, ...] | None = None
    features: tuple[float, ...] | None = None


@dataclass(frozen=True)
class CandidateSet:
    item_id: str
    candidates: tuple[Candidate, ...]
    decoding: DecodingParams
    k: int
    prompt: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) > self.k:
            raise ContractViolation(f"{len(self.candidates)} candidates exceed k={self.k}")
        texts = [c.text.strip() for c in self.candidates]
        if len(set(texts)) != len(texts):
            raise ContractViolation("candidates must be unique after trimming")

    @property
    def texts(self) -> list[str]:
        return [c.text for c in self.candidates]


@dataclass(frozen=True)
class RankingResult:
    item_id: str
    method: str
    ordering: tuple[int, ...]
    scores: tuple[float, ...]
    selected: int

    def __post_init__(self) -> None:
        if sorted(self.ordering) != list(range(len(self.scores))):
            raise ContractViolation("ordering must be a permutation of candidate indices")
        if self.ordering and self.selected != self.ordering[0]:
            raise ContractViolation("selected must equal ordering[0]")


def overgenerate(rec: QARecord, backend: Backend, params: DecodingParams, k: int = 10) -> CandidateSet:
    """Up to ``k`` distinct candidates for ``rec``.

    Issues ``ceil(k / n)`` sampling calls, then at most three extra batches
    while duplicates keep the pool short of ``k``.
    """
    if k < 1:
        raise ContractViolation("k must be positive")
    prompt = qg_prompt(rec.context, rec.answer)
    planned = math.ceil(k / params.n)
    pool: list[Candidate] = []
    seen: set[str] = set()
    call = 0
    while len(pool) < k and call < planned + EXTRA_BATCHES:
        for comp in backend.generate(prompt, params, call_index=call):
            text = comp.text.strip()
            if not text or text in seen:
                continue
            seen.add(text)
            pool.append(Candidate(text, comp.token_scores))
            if len(pool) == k:
                break
        call += 1
    if not pool:
        raise EmptyCandidatePool(f"no usable candidates for record {rec.id}")
    return CandidateSet(rec.id, tuple(pool), params, k, prompt)


def perplexity(token_scores: Sequence[TokenScore | float]) -> float:
    """``exp(-mean logprob)``."""
    if not token_scores:
        raise ContractViolation("perplexity of an empty token sequence is undefined")
    lps = [t.logprob if isinstance(t, TokenScore) else float(t) for t in token_scores]
    return math.exp(-math.fsum(lps) / len(lps))


def _order(scores: Sequence[float], descending: bool) -> tuple[int, ...]:
    sign = -1.0 if descending else 1.0
    return tuple(sorted(range(len(scores)), key=lambda i: (sign * scores[i], i)))


def rank_by_perplexity(cs: CandidateSet, backend: Backend, prompt: str | None = None) -> RankingResult:
    prompt = prompt if prompt is not None else cs.prompt
    if not prompt:
        raise ContractViolation("candidate set carries no generation prompt to condition on")
    scores = []
    for i, cand in enumerate(cs.candidates):
        try:
            # leading space mirrors how the completion followed the prompt
            scores.append(perplexity(backend.score_completion(prompt, " " + cand.text.strip())))
        except (BackendError, ContractViolation) as exc:
            raise type(exc)(f"scoring candidate {i} ({cand.text!r}) of {cs.item_id} failed: {exc}") from exc
    order = _order(scores, descending=False)
    return RankingResult(cs.item_id, "perplexity", order, tuple(scores), order[0])


def candidate_features(cs: CandidateSet, rec: QARecord) -> np.ndarray:
    if all(c.features is not None for c in cs.candidates) and cs.candidates:
        return np.array([c.features for c in cs.candidates], dtype=float)
    return feature_matrix([c.text for c in cs.candidates], rec.context, rec.answer)


def rank_by_scorer(cs: CandidateSet, rec: QARecord, model: ScorerModel) -> RankingResult:
    model.check_schema()
    scores = [float(s) for s in model.scores(candidate_features(cs, rec))]
    order = _order(scores, descending=True)
    return RankingResult(cs.item_id, "dist_match", order, tuple(scores), order[0])


@dataclass
class GroupBuildReport:
    groups: list[TrainingGroup]
    skipped: list[tuple[str, str]] = field(default_factory=list)


def group_from_candidates(cs: CandidateSet, rec: QARecord) -> TrainingGroup | None:
    if len(cs.candidates) < 2:
        return None
    return TrainingGroup(rec.context, rec.answer, tuple(cs.texts), rec.question, item_id=rec.id)


def build_training_groups(
    d: Dataset, backend: Backend, params: DecodingParams, k: int = 10, *, workers: int = 1
) -> GroupBuildReport:
    """One ranker training group per record; pools with fewer than two candidates are skipped."""

    def one(rec: QARecord):
        try:
            cs = overgenerate(rec, backend, params, k)
        except EmptyCandidatePool as exc:
            return None, str(exc)
        group = group_from_candidates(cs, rec)
        if group is None:
            return None, f"only {len(cs.candidates)} distinct candidate(s)"
        return group, None

    records = list(d)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]
    report = GroupBuildReport([])
    for rec, (group, why) in zip(records, results):
        if group is None:
            log.info("skipping record %s: %s", rec.id, why)
            report.skipped.append((rec.id, why))
        else:
            report.groups.append(group)
    return report
