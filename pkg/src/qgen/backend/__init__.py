"""Language-model backends: an OpenAI-compatible HTTP client and a seeded mock."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

from qgen.backend.base import Backend, Completion, DecodingParams, TokenScore
from qgen.backend.cache import CachedBackend
from qgen.backend.http import API_KEY_ENV, HttpBackend
from qgen.backend.mock import MockBackend, MockFixture, load_fixtures


@dataclass
class BackendConfig:
    kind: str = "mock"
    base_url: str = "http://localhost:8000/v1"
    model: str = "code-davinci-002"
    timeout_s: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    requests_per_minute: int | None = None
    max_completions: int | None = None
    mock_fixtures: str | None = None
    cache_path: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def make_backend(cfg: BackendConfig, seed: int = 0) -> Backend:
    if cfg.kind == "mock":
        fixtures = load_fixtures(cfg.mock_fixtures) if cfg.mock_fixtures else ()
        backend: Backend = MockBackend(seed, fixtures, max_completions=cfg.max_completions)
    elif cfg.kind == "http":
        backend = HttpBackend(
            cfg.base_url,
            cfg.model,
            timeout_s=cfg.timeout_s,
            max_retries=cfg.max_retries,
            max_in_flight=cfg.max_in_flight,
            requests_per_minute=cfg.requests_per_minute,
            max_completions=cfg.max_completions,
        )
    else:
        raise ValueError(f"unknown backend kind {cfg.kind!r} (expected mock or http)")
    if cfg.cache_path:
        Path(cfg.cache_path).parent.mkdir(parents=True, exist_ok=True)
        backend = CachedBackend(backend, cfg.cache_path)
    return backend


__all__ = [
    "API_KEY_ENV",
    "Backend",
    "BackendConfig",
    "CachedBackend",
    "Completion",
    "DecodingParams",
    "HttpBackend",
    "MockBackend",
    "MockFixture",
    "TokenScore",
    "load_fixtures",
    "make_backend",
]
