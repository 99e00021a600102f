"""Deterministic offline backend.

Every output is a pure function of ``(seed, prompt, params, call_index)``:
the seed is XOR-mixed with a SHA-256 digest of the request and drives a
``random.Random``.  Prompts matching a fixture return scripted completions;
anything else gets synthesized text built from words of the prompt's last
``Context:`` block.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from qgen._util import MASK64 as _MASK64, stable_hash
from qgen.backend.base import Backend, Completion, DecodingParams, TokenScore

_PIECE_RE = re.compile(r"\s*\S+")
_WORD_RE = re.compile(r"[A-Za-z0-9']+")
_LABELS = {"context", "answer", "question", "another", "generate"}
_WH = ("What", "Who", "Why", "How", "Where", "When", "Which")

Responder = Callable[[str, DecodingParams, int], Sequence[str] | None]


@dataclass(frozen=True)
class MockFixture:
    prompt_substring_match: str
    completions: tuple[str, ...]
    logprob_per_token: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "MockFixture":
        return cls(
            prompt_substring_match=d["prompt_substring_match"],
            completions=tuple(d["completions"]),
            logprob_per_token=d.get("logprob_per_token"),
        )


def load_fixtures(path: str | Path) -> list[MockFixture]:
    fixtures = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                fixtures.append(MockFixture.from_dict(json.loads(line)))
    return fixtures


def split_pieces(text: str) -> list[str]:
    """Whitespace-attached pieces; ``"".join`` restores ``text`` minus trailing blanks."""
    return _PIECE_RE.findall(text)


class MockBackend(Backend):
    """Seeded stand-in for a completions endpoint.

    ``responder`` is consulted first and may return ``None`` to fall through
    to the fixture table; a responder result is treated like a fixture's
    completion list.
    """

    def __init__(
        self,
        seed: int = 0,
        fixtures: Iterable[MockFixture] = (),
        *,
        responder: Responder | None = None,
        default_logprob: float | None = None,
        max_completions: int | None = None,
    ):
        super().__init__(max_completions=max_completions)
        self.seed = int(seed) & _MASK64
        self.fixtures = list(fixtures)
        self.responder = responder
        self.default_logprob = default_logprob

    def _rng(self, *parts) -> random.Random:
        return random.Random(self.seed ^ stable_hash(*parts))

    def _match(self, prompt: str) -> MockFixture | None:
        best = None
        for fx in self.fixtures:
            if fx.prompt_substring_match in prompt:
                if best is None or len(fx.prompt_substring_match) > len(best.prompt_substring_match):
                    best = fx
        return best

    def _generate(self, prompt: str, params: DecodingParams, call_index: int) -> list[Completion]:
        if params.strategy == "greedy":
            call_index = 0  # greedy decoding has a single answer per prompt
        rng = self._rng("generate", prompt, params.to_dict(), call_index)
        scripted = self.responder(prompt, params, call_index) if self.responder else None
        if scripted is None:
            fx = self._match(prompt)
            scripted = fx.completions if fx is not None else None
        if scripted is not None:
            texts = _pick(list(scripted), params, call_index, rng)
        else:
            texts = [_synthesize(prompt, params, rng) for _ in range(params.n)]
        return [Completion(t, tuple(self._score(prompt, t)) if t.strip() else ()) for t in texts]

    def _score(self, prompt: str, completion: str) -> list[TokenScore]:
        fx = self._match(prompt)
        fixed = fx.logprob_per_token if fx is not None and fx.logprob_per_token is not None else self.default_logprob
        out = []
        prefix = ""
        for piece in split_pieces(completion):
            if fixed is not None:
                lp = float(fixed)
            else:
                u = stable_hash("score", self.seed, prompt, prefix, piece) / float(_MASK64)
                lp = -(0.05 + 3.95 * u)
            out.append(TokenScore(piece, lp))
            prefix += piece
        return out


def _pick(pool: list[str], params: DecodingParams, call_index: int, rng: random.Random) -> list[str]:
    if not pool:
        return [""] * params.n
    if params.strategy == "greedy":
        return [pool[0]]
    start = call_index * params.n
    if params.strategy == "contrastive":
        start += rng.randrange(len(pool))
    return [pool[(start + i) % len(pool)] for i in range(params.n)]


def _target_words(prompt: str) -> list[str]:
    tail = prompt.rsplit("Context:", 1)[-1]
    words = [w for w in _WORD_RE.findall(tail) if w.lower() not in _LABELS]
    return words or ["something"]


def _synthesize(prompt: str, params: DecodingParams, rng: random.Random) -> str:
    words = _target_words(prompt)
    last_line = prompt.rstrip().rsplit("\n", 1)[-1]
    if last_line.endswith("Answer:") and "question" not in last_line.lower():
        # question answering: a short contiguous span of the target block
        size = rng.randint(1, min(5, len(words)))
        start = rng.randrange(len(words) - size + 1)
        return " " + " ".join(words[start : start + size])
    wh = rng.choice(_WH)
    size = rng.randint(3, min(9, max(3, len(words))))
    start = rng.randrange(max(1, len(words) - size + 1))
    body = words[start : start + size]
    if params.strategy != "greedy" and len(body) > 2 and rng.random() < 0.5:
        body = body[:]
        i, j = rng.randrange(len(body)), rng.randrange(len(body))
        body[i], body[j] = body[j], body[i]
    return " " + wh + " " + " ".join(body).lower() + "?"
