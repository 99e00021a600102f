from __future__ import annotations

import abc
import math
import threading
from dataclasses import asdict, dataclass, replace
from typing import Sequence

from qgen.errors import CapabilityError, ContractViolation, QuotaExceeded

STRATEGIES = ("greedy", "nucleus", "contrastive")


def _fmt(x: float) -> str:
    return f"{x:g}"


@dataclass(frozen=True)
class DecodingParams:
    """A named decoding strategy and its knobs.

    ``greedy`` forces ``n == 1``; ``nucleus`` needs ``top_p`` and
    ``temperature``; ``contrastive`` needs ``top_k`` and ``alpha_penalty``.
    """

    strategy: str = "greedy"
    top_p: float | None = None
    temperature: float | None = None
    top_k: int | None = None
    alpha_penalty: float | None = None
    n: int = 1
    max_new_tokens: int = 64
    stop: tuple[str, ...] = ("\n",)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stop", tuple(self.stop))
        if self.strategy not in STRATEGIES:
            raise ContractViolation(f"unknown decoding strategy {self.strategy!r}")
        if not isinstance(self.n, int) or self.n < 1:
            raise ContractViolation(f"n must be a positive integer, got {self.n!r}")
        if self.max_new_tokens < 1:
            raise ContractViolation("max_new_tokens must be positive")
        if self.strategy == "greedy" and self.n != 1:
            raise ContractViolation("greedy decoding implies n = 1")
        if self.strategy == "nucleus":
            if self.top_p is None or not 0.0 < self.top_p <= 1.0:
                raise ContractViolation(f"nucleus sampling needs top_p in (0, 1], got {self.top_p!r}")
            if self.temperature is None or not self.temperature > 0:
                raise ContractViolation(f"nucleus sampling needs temperature > 0, got {self.temperature!r}")
        if self.strategy == "contrastive":
            if self.top_k is None or self.top_k < 1:
                raise ContractViolation(f"contrastive search needs top_k >= 1, got {self.top_k!r}")
            if self.alpha_penalty is None or not 0.0 <= self.alpha_penalty <= 1.0:
                raise ContractViolation(
                    f"contrastive search needs alpha_penalty in [0, 1], got {self.alpha_penalty!r}"
                )

    @classmethod
    def greedy(cls, **kw) -> "DecodingParams":
        return cls(strategy="greedy", **kw)

    @classmethod
    def nucleus(cls, top_p: float = 0.9, temperature: float = 1.0, n: int = 1, **kw) -> "DecodingParams":
        return cls(strategy="nucleus", top_p=top_p, temperature=temperature, n=n, **kw)

    @classmethod
    def contrastive(cls, top_k: int = 4, alpha_penalty: float = 0.6, n: int = 1, **kw) -> "DecodingParams":
        return cls(strategy="contrastive", top_k=top_k, alpha_penalty=alpha_penalty, n=n, **kw)

    def with_n(self, n: int) -> "DecodingParams":
        return replace(self, n=n)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stop"] = list(self.stop)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecodingParams":
        d = dict(d)
        if "stop" in d:
            d["stop"] = tuple(d["stop"])
        return cls(**d)

    def label(self, k: int | None = None) -> str:
        """Human label, e.g. ``Nucleus Sampling (0.9, 1, 10)``; ``k`` defaults to ``n``."""
        count = self.n if k is None else k
        if self.strategy == "nucleus":
            return f"Nucleus Sampling ({_fmt(self.top_p)}, {_fmt(self.temperature)}, {count})"
        if self.strategy == "contrastive":
            return f"Contrastive Search ({self.top_k}, {_fmt(self.alpha_penalty)}, {count})"
        return "Greedy"


@dataclass(frozen=True)
class TokenScore:
    token: str
    logprob: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.logprob) or self.logprob > 0:
            raise ContractViolation(f"logprob must be finite and <= 0, got {self.logprob!r}")


@dataclass(frozen=True)
class Completion:
    text: str
    token_scores: tuple[TokenScore, ...] | None = None

    def truncated(self, stop: Sequence[str]) -> "Completion":
        cut = len(self.text)
        for s in stop:
            if s:
                pos = self.text.find(s)
                if pos != -1:
                    cut = min(cut, pos)
        if cut == len(self.text):
            return self
        scores = None
        if self.token_scores is not None:
            kept, used = [], 0
            for ts in self.token_scores:
                if used + len(ts.token) > cut:
                    break
                kept.append(ts)
                used += len(ts.token)
            scores = tuple(kept)
        return Completion(self.text[:cut], scores)


class Backend(abc.ABC):
    """Generation and teacher-forced scoring behind one interface.

    Subclasses implement ``_generate`` and ``_score``; this base enforces
    capabilities, the completion budget, and stop-string truncation.
    """

    capabilities: frozenset[str] = frozenset({"greedy", "nucleus", "contrastive", "logprobs"})

    def __init__(self, *, max_completions: int | None = None):
        self.max_completions = max_completions
        self._used = 0
        self._budget_lock = threading.Lock()

    @property
    def completions_used(self) -> int:
        return self._used

    def _consume(self, n: int) -> None:
        with self._budget_lock:
            if self.max_completions is not None and self._used + n > self.max_completions:
                raise QuotaExceeded(
                    f"completion budget exhausted ({self._used}/{self.max_completions} used, {n} requested)"
                )
            self._used += n

    def generate(self, prompt: str, params: DecodingParams, *, call_index: int = 0) -> list[Completion]:
        """``params.n`` completions, each cut at the first stop string.

        ``call_index`` distinguishes repeated sampling calls for the same
        prompt so that caches and seeded mocks can return fresh batches.
        """
        if params.strategy not in self.capabilities:
            raise CapabilityError(f"{type(self).__name__} does not support {params.strategy} decoding")
        self._consume(params.n)
        out = self._generate(prompt, params, call_index)
        if len(out) != params.n:
            raise ContractViolation(f"backend returned {len(out)} completions, expected {params.n}")
        return [c.truncated(params.stop) for c in out]

    def score_completion(self, prompt: str, completion: str) -> list[TokenScore]:
        if not completion or not completion.strip():
            raise ContractViolation("cannot score an empty completion")
        if "logprobs" not in self.capabilities:
            raise CapabilityError(
                f"{type(self).__name__} cannot return logprobs; use the mock backend or a logprob-capable endpoint"
            )
        return list(self._score(prompt, completion))

    @abc.abstractmethod
    def _generate(self, prompt: str, params: DecodingParams, call_index: int) -> list[Completion]: ...

    @abc.abstractmethod
    def _score(self, prompt: str, completion: str) -> list[TokenScore]: ...

    def close(self) -> None:
        pass
