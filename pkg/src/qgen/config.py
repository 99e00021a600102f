"""Pipeline configuration: built-in defaults < config file < command-line flags.

The config file is a single JSON document with one flat table per module::

    {"seed": 7,
     "backend": {"kind": "http", "base_url": "http://localhost:8000/v1"},
     "augment": {"m": 4, "lambda": 0.8},
     "ranker": {"epochs": 300}}
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Mapping

from qgen._util import MASK64, derive_seed
from qgen.augmentation import AugmentationConfig
from qgen.backend import BackendConfig, DecodingParams
from qgen.scorer import RankTrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "backend": BackendConfig().to_dict(),
    "augment": {
        "m": 4,
        "threshold": 0.5,
        "lambda": 0.8,
        "minority_only": True,
        "top_p": 0.9,
        "temperature": 0.8,
        "workers": 4,
        "tolerant": False,
    },
    "overgenerate": {
        "k": 10,
        "strategy": "nucleus",
        "top_p": 0.9,
        "temperature": 1.0,
        "top_k": 4,
        "alpha_penalty": 0.6,
        "batch_n": None,  # completions per request; None = k (greedy: 1)
        "workers": 4,
    },
    "ranker": {
        "alpha_p": 1e-3,
        "alpha_r": 1e-2,
        "learning_rate": 0.05,
        "epochs": 200,
        "batch_size": None,
    },
    "eval": {
        "strict": True,
        "group_by": ["answer_kind", "attribute"],
        "format": "table",
    },
}


class ConfigError(ValueError):
    pass


def load_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, value in data.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config section {key!r}")
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            unknown = set(value) - set(DEFAULTS[key])
            if unknown:
                raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(sorted(unknown))}")
    return data


def resolve(file_cfg: Mapping | None = None, overrides: Mapping | None = None) -> dict:
    """Merge defaults, file values and flag overrides (``None`` flags are ignored)."""
    cfg = copy.deepcopy(DEFAULTS)
    for layer in (file_cfg or {}, overrides or {}):
        for key, value in layer.items():
            if isinstance(cfg.get(key), dict):
                for sub, v in value.items():
                    if v is not None:
                        cfg[key][sub] = v
            elif value is not None:
                cfg[key] = value
    return cfg


def module_seed(cfg: Mapping, module: str) -> int:
    return derive_seed(cfg["seed"], module) & MASK64


def backend_config(cfg: Mapping) -> BackendConfig:
    return BackendConfig(**cfg["backend"])


def augmentation_config(cfg: Mapping) -> AugmentationConfig:
    a = cfg["augment"]
    return AugmentationConfig(
        m_candidates=int(a["m"]),
        threshold=float(a["threshold"]),
        lam=float(a["lambda"]),
        minority_only=bool(a["minority_only"]),
        gen_params=DecodingParams.nucleus(top_p=float(a["top_p"]), temperature=float(a["temperature"]), n=max(1, int(a["m"]))),
        qa_params=DecodingParams.greedy(),
        rng_seed=module_seed(cfg, "augment"),
        workers=int(a["workers"]),
        tolerant=bool(a["tolerant"]),
    )


def overgenerate_params(cfg: Mapping) -> DecodingParams:
    o = cfg["overgenerate"]
    k = int(o["k"])
    n = int(o["batch_n"] or k)
    if o["strategy"] == "greedy":
        return DecodingParams.greedy()
    if o["strategy"] == "nucleus":
        return DecodingParams.nucleus(top_p=float(o["top_p"]), temperature=float(o["temperature"]), n=n)
    if o["strategy"] == "contrastive":
        return DecodingParams.contrastive(top_k=int(o["top_k"]), alpha_penalty=float(o["alpha_penalty"]), n=n)
    raise ConfigError(f"unknown decoding strategy {o['strategy']!r}")


def rank_train_config(cfg: Mapping) -> RankTrainConfig:
    r = cfg["ranker"]
    return RankTrainConfig(
        alpha_p=float(r["alpha_p"]),
        alpha_r=float(r["alpha_r"]),
        learning_rate=float(r["learning_rate"]),
        epochs=int(r["epochs"]),
        rng_seed=module_seed(cfg, "ranker") % (2**32),
        batch_size=r["batch_size"],
    )
