from __future__ import annotations

import hashlib
import json
import sqlite3
import threading
from pathlib import Path

from qgen.backend.base import Backend, Completion, DecodingParams, TokenScore


def request_key(kind: str, **parts) -> str:
    blob = json.dumps({"kind": kind, **parts}, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _dump_completion(c: Completion) -> dict:
    scores = None if c.token_scores is None else [[t.token, t.logprob] for t in c.token_scores]
    return {"text": c.text, "token_scores": scores}


def _load_completion(d: dict) -> Completion:
    scores = d.get("token_scores")
    return Completion(d["text"], None if scores is None else tuple(TokenScore(t, lp) for t, lp in scores))


class CachedBackend(Backend):
    """Persistent response cache in front of another backend.

    Keys hash ``(prompt, params, call_index)`` for generation and
    ``(prompt, completion)`` for scoring.  Hits do not touch the inner
    backend or its completion budget.
    """

    def __init__(self, inner: Backend, path: str | Path):
        super().__init__()
        self.inner = inner
        self.capabilities = inner.capabilities
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._db = sqlite3.connect(str(path), check_same_thread=False)
        self._db.execute("CREATE TABLE IF NOT EXISTS responses (key TEXT PRIMARY KEY, value TEXT NOT NULL)")
        self._db.commit()

    def _get(self, key: str):
        with self._lock:
            row = self._db.execute("SELECT value FROM responses WHERE key = ?", (key,)).fetchone()
            if row is None:
                self.misses += 1
                return None
            self.hits += 1
            return json.loads(row[0])

    def _put(self, key: str, value) -> None:
        with self._lock:
            self._db.execute(
                "INSERT OR REPLACE INTO responses (key, value) VALUES (?, ?)", (key, json.dumps(value))
            )
            self._db.commit()

    def generate(self, prompt: str, params: DecodingParams, *, call_index: int = 0) -> list[Completion]:
        key = request_key("generate", prompt=prompt, params=params.to_dict(), call_index=call_index)
        cached = self._get(key)
        if cached is not None:
            return [_load_completion(d) for d in cached]
        out = self.inner.generate(prompt, params, call_index=call_index)
        self._put(key, [_dump_completion(c) for c in out])
        return out

    def score_completion(self, prompt: str, completion: str) -> list[TokenScore]:
        key = request_key("score", prompt=prompt, completion=completion)
        cached = self._get(key)
        if cached is not None:
            return [TokenScore(t, lp) for t, lp in cached]
        out = self.inner.score_completion(prompt, completion)
        self._put(key, [[t.token, t.logprob] for t in out])
        return out

    def _generate(self, prompt, params, call_index):  # pragma: no cover - generate is overridden
        raise NotImplementedError

    def _score(self, prompt, completion):  # pragma: no cover - score_completion is overridden
        raise NotImplementedError

    def close(self) -> None:
        with self._lock:
            self._db.close()
        self.inner.close()
