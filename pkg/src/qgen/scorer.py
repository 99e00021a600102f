"""Linear distribution-matching ranker.

A candidate question's score is ``phi . x`` over a 16-dimensional feature
vector ``x``.  Over the ``K`` candidates of one group, the training loss is

    KL( softmax(alpha_p * X phi) || softmax(alpha_r * r) )

where ``r`` holds each candidate's ROUGE-L F1 to the human question.  Both
alphas multiply the scores (they act as inverse temperatures).  The
objective is averaged over groups and minimized with full-batch Adam from
``phi = 0``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from qgen._util import canonical_json
from qgen.errors import ContractViolation, SchemaVersionError, TrainingDiverged
from qgen.metrics import rouge_1_f1, rouge_l_f1, tokenize

log = logging.getLogger(__name__)

FEATURE_SCHEMA_VERSION = 1
WH_WORDS = ("what", "who", "why", "how", "where", "when", "which")
FEATURE_NAMES = (
    "rouge1_question_context",
    "rouge1_question_answer",
    "rougel_question_context",
    "rougel_question_answer",
    "question_length",
    *(f"wh_{w}" for w in WH_WORDS),
    "wh_other",
    "answer_coverage",
    "question_novelty",
    "bias",
)
N_FEATURES = len(FEATURE_NAMES)
_LENGTH_SCALE = 32.0


def extract_features(question: str, context: str, answer: str) -> np.ndarray:
    q, c, a = tokenize(question), tokenize(context), tokenize(answer)
    x = np.zeros(N_FEATURES)
    x[0] = rouge_1_f1(q, c)
    x[1] = rouge_1_f1(q, a)
    x[2] = rouge_l_f1(q, c)
    x[3] = rouge_l_f1(q, a)
    x[4] = min(len(q) / _LENGTH_SCALE, 1.0)
    wh = next((t for t in q if t in WH_WORDS), None)
    x[5 + (WH_WORDS.index(wh) if wh is not None else len(WH_WORDS))] = 1.0
    q_set = set(q)
    a_set = set(a)
    x[13] = len(a_set & q_set) / len(a_set) if a_set else 0.0
    known = set(c) | a_set
    x[14] = sum(t not in known for t in q) / len(q) if q else 0.0
    x[15] = 1.0
    return x


def feature_matrix(candidates: Sequence[str], context: str, answer: str) -> np.ndarray:
    return np.stack([extract_features(q, context, answer) for q in candidates]) if candidates else np.zeros((0, N_FEATURES))


# -- distributions --


def _as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ContractViolation("expected a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ContractViolation("values must be finite")
    return v


def log_softmax_scaled(values, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ContractViolation(f"alpha must be positive, got {alpha}")
    s = alpha * _as_vector(values)
    s = s - s.max()
    return s - np.log(np.exp(s).sum())


def softmax_scaled(values, alpha: float) -> np.ndarray:
    """``p_j = exp(alpha*v_j - max(alpha*v)) / Z``."""
    if not alpha > 0:
        raise ContractViolation(f"alpha must be positive, got {alpha}")
    s = alpha * _as_vector(values)
    e = np.exp(s - s.max())
    return e / e.sum()


def kl_divergence(p, q) -> float:
    """``sum_j p_j ln(p_j / q_j)`` in nats, with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ContractViolation(f"shape mismatch: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or not np.all(np.isfinite(v)) or abs(v.sum() - 1.0) > 1e-9:
            raise ContractViolation(f"{name} is not a probability distribution")
    nz = p > 0
    if np.any(q[nz] <= 0):
        raise ContractViolation("q must be positive wherever p is (KL would be infinite)")
    return float(max(0.0, np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz])))))


# -- model and data --


@dataclass
class ScorerModel:
    phi: np.ndarray
    feature_schema_version: int = FEATURE_SCHEMA_VERSION
    alpha_p: float = 1e-3
    trained_on: str | None = None

    def __post_init__(self) -> None:
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (N_FEATURES,) and self.feature_schema_version == FEATURE_SCHEMA_VERSION:
            raise ContractViolation(f"phi must have length {N_FEATURES}, got {self.phi.shape}")
        if not np.all(np.isfinite(self.phi)):
            raise ContractViolation("phi must be finite")

    @classmethod
    def zeros(cls, **kw) -> "ScorerModel":
        return cls(np.zeros(N_FEATURES), **kw)

    def check_schema(self) -> None:
        if self.feature_schema_version != FEATURE_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"model uses feature schema v{self.feature_schema_version}, extractor is v{FEATURE_SCHEMA_VERSION}"
            )

    def scores(self, features: np.ndarray) -> np.ndarray:
        self.check_schema()
        return np.asarray(features, dtype=float) @ self.phi

    def to_dict(self) -> dict:
        return {
            "feature_schema_version": self.feature_schema_version,
            "phi": [float(v) for v in self.phi],
            "alpha_p": self.alpha_p,
            "trained_on": self.trained_on,
            "feature_names": list(FEATURE_NAMES),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerModel":
        version = int(d["feature_schema_version"])
        if version != FEATURE_SCHEMA_VERSION:
            raise SchemaVersionError(f"model uses feature schema v{version}, extractor is v{FEATURE_SCHEMA_VERSION}")
        return cls(np.asarray(d["phi"], dtype=float), version, float(d.get("alpha_p", 1e-3)), d.get("trained_on"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ScorerModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RankTrainConfig:
    alpha_p: float = 1e-3
    alpha_r: float = 1e-2
    learning_rate: float = 0.05
    epochs: int = 200
    rng_seed: int = 0
    batch_size: int | None = None  # None = full batch

    def __post_init__(self) -> None:
        for name in ("alpha_p", "alpha_r", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")
        if self.epochs < 1:
            raise ContractViolation("epochs must be positive")


@dataclass
class TrainingGroup:
    """One context-answer pair with its K candidates and ROUGE-L targets.

    ``targets`` and ``features`` are computed from the text when omitted.
    """

    context: str
    answer: str
    candidates: tuple[str, ...]
    reference: str
    targets: np.ndarray | None = None
    features: np.ndarray | None = None
    item_id: str | None = None

    def __post_init__(self) -> None:
        self.candidates = tuple(self.candidates)
        if self.targets is None:
            self.targets = np.array([rouge_l_f1(q, self.reference) for q in self.candidates])
        else:
            self.targets = np.asarray(self.targets, dtype=float)
        if self.features is None:
            self.features = feature_matrix(self.candidates, self.context, self.answer)
        else:
            self.features = np.asarray(self.features, dtype=float)
        if len(self.targets) != len(self.candidates) or self.features.shape[0] != len(self.candidates):
            raise ContractViolation("targets/features must align with candidates")

    @property
    def k(self) -> int:
        return len(self.candidates)

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "context": self.context,
            "answer": self.answer,
            "question": self.reference,
            "candidates": list(self.candidates),
            "targets": [float(t) for t in self.targets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingGroup":
        reference = d.get("question", d.get("reference"))
        if reference is None:
            raise ContractViolation("training group needs a ground-truth 'question'")
        cands = d["candidates"]
        texts = [c["text"] if isinstance(c, dict) else c for c in cands]
        return cls(d["context"], d["answer"], tuple(texts), reference, d.get("targets"), None, d.get("item_id"))


def groups_fingerprint(groups: Sequence[TrainingGroup]) -> str:
    blob = canonical_json([[g.context, g.answer, list(g.candidates), g.reference] for g in groups])
    return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- loss and gradient --


def _loss_grad(phi: np.ndarray, X: np.ndarray, r: np.ndarray, alpha_p: float, alpha_r: float) -> tuple[float, np.ndarray]:
    if X.shape[0] < 2:
        raise ContractViolation(f"a group needs K >= 2 candidates, got {X.shape[0]}")
    log_p = log_softmax_scaled(X @ phi, alpha_p)
    log_r = log_softmax_scaled(r, alpha_r)
    p = np.exp(log_p)
    g = log_p - log_r
    loss = float(np.dot(p, g))
    # d/ds_j of sum_k p_k g_k, with s = alpha_p X phi
    ds = p * (g - loss)
    return loss, alpha_p * (X.T @ ds)


def group_loss(model: ScorerModel, group: TrainingGroup, cfg: RankTrainConfig) -> float:
    loss = _loss_grad(model.phi, group.features, group.targets, cfg.alpha_p, cfg.alpha_r)[0]
    return max(loss, 0.0)


def group_gradient(model: ScorerModel, group: TrainingGroup, cfg: RankTrainConfig) -> np.ndarray:
    """Exact gradient of :func:`group_loss` with respect to ``phi``."""
    return _loss_grad(model.phi, group.features, group.targets, cfg.alpha_p, cfg.alpha_r)[1]


def mean_loss_grad(phi: np.ndarray, groups: Sequence[TrainingGroup], cfg: RankTrainConfig) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros_like(phi)
    for g in groups:  # fixed order keeps the reduction deterministic
        l, d = _loss_grad(phi, g.features, g.targets, cfg.alpha_p, cfg.alpha_r)
        total += l
        grad += d
    n = len(groups)
    return total / n, grad / n


@dataclass
class TrainTrace:
    losses: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def running_min(self) -> list[float]:
        return list(np.minimum.accumulate(self.losses)) if self.losses else []


def fit(groups: Sequence[TrainingGroup], cfg: RankTrainConfig | None = None) -> tuple[ScorerModel, TrainTrace]:
    """Adam from ``phi = 0``; returns the lowest-loss parameters seen and the loss trace."""
    cfg = cfg or RankTrainConfig()
    groups = list(groups)
    if not groups:
        raise ContractViolation("no training groups")
    for g in groups:
        if g.k < 2:
            raise ContractViolation(f"group {g.item_id!r} has K={g.k} < 2 candidates")

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    phi = np.zeros(N_FEATURES)
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    rng = np.random.default_rng(cfg.rng_seed)
    trace = TrainTrace()
    best_phi, best_loss = phi.copy(), np.inf
    step = 0

    def check(loss: float, epoch: int) -> None:
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at epoch {epoch} (learning_rate={cfg.learning_rate}); "
                "lower the learning rate or the alpha gains"
            )

    for epoch in range(cfg.epochs):
        loss, grad = mean_loss_grad(phi, groups, cfg)
        check(loss, epoch)
        trace.losses.append(loss)
        if loss < best_loss:
            best_loss, best_phi, trace.best_epoch = loss, phi.copy(), epoch
        if cfg.batch_size is None or cfg.batch_size >= len(groups):
            batches = [None]
        else:
            order = rng.permutation(len(groups))
            batches = [order[i : i + cfg.batch_size] for i in range(0, len(groups), cfg.batch_size)]
        for batch in batches:
            if batch is not None:
                _, grad = mean_loss_grad(phi, [groups[i] for i in batch], cfg)
            if not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}; lower the learning rate")
            step += 1
            with np.errstate(over="ignore"):
                m = beta1 * m + (1 - beta1) * grad
                v = beta2 * v + (1 - beta2) * grad * grad
            m_hat = m / (1 - beta1**step)
            v_hat = v / (1 - beta2**step)
            with np.errstate(over="ignore", invalid="ignore"):
                phi = phi - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
            if not np.all(np.isfinite(phi)):
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}; lower the learning rate")

    loss, _ = mean_loss_grad(phi, groups, cfg)
    check(loss, cfg.epochs)
    trace.losses.append(loss)
    if loss < best_loss:
        best_loss, best_phi, trace.best_epoch = loss, phi.copy(), cfg.epochs
    log.info("ranker training: initial loss %.6g, best %.6g at epoch %d", trace.losses[0], best_loss, trace.best_epoch)
    model = ScorerModel(best_phi, FEATURE_SCHEMA_VERSION, cfg.alpha_p, groups_fingerprint(groups))
    return model, trace


def train(groups: Sequence[TrainingGroup], cfg: RankTrainConfig | None = None) -> ScorerModel:
    return fit(groups, cfg)[0]
