from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qgen.corpus import ATTRIBUTES, Dataset, QARecord  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

_NAMES = ["tom", "the king", "the youth", "a fisher", "the rat", "the princess", "dullhead", "an old man"]
_PLACES = ["the forest", "the castle", "the hill", "the sea", "a cottage", "the palace"]
_VERBS = ["found", "lost", "built", "sang to", "followed", "hid from", "painted", "carried"]
_THINGS = ["a golden key", "the linen thread", "an old tree", "a silver cup", "the cake", "a magic stone"]


def make_record(i: int, attribute: str, answer_kind: str = "explicit", split: str = "train", seed: int = 0) -> QARecord:
    rng = random.Random(f"{seed}:{i}:{attribute}")
    who, where, verb, what = rng.choice(_NAMES), rng.choice(_PLACES), rng.choice(_VERBS), rng.choice(_THINGS)
    context = f"Once upon a time {who} lived near {where}. One day {who} {verb} {what} and was very happy."
    return QARecord(
        id=f"r{i:04d}",
        context=context,
        answer=f"{verb} {what}",
        question=f"What did {who} do near {where}?",
        attribute=attribute,
        answer_kind=answer_kind,
        split=split,
    )


def make_dataset(per_attribute: int = 6, attributes=ATTRIBUTES, split: str = "train", seed: int = 0) -> Dataset:
    records = []
    i = 0
    for attr in attributes:
        for j in range(per_attribute):
            records.append(make_record(i, attr, "explicit" if j % 3 else "implicit", split, seed))
            i += 1
    return Dataset(tuple(records))


@pytest.fixture
def small_dataset() -> Dataset:
    return make_dataset()


def write_rows(path: Path, rows) -> Path:
    with path.open("w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")
    return path


_COMMON = [f"w{i}" for i in range(200)]
_NOISE = [f"z{i}" for i in range(200)]


def separable_groups(n: int, k: int = 10, seed: int = 0):
    """Groups where one candidate has the top ROUGE-L target and dominant features.

    The best candidate copies the reference (all answer words, nothing novel);
    distractors drop answer words and add words found in neither context nor
    answer, so their coverage is lower and novelty higher.
    """
    from qgen.scorer import TrainingGroup

    rng = random.Random(seed)
    groups = []
    for g in range(n):
        context_words = rng.sample(_COMMON, 20)
        answer_words = context_words[5 : 5 + rng.randint(2, 4)]
        lead = context_words[:2]
        reference = " ".join(["what", "did", *lead, "do", "with", *answer_words])
        cands = [reference]
        for _ in range(k - 1):
            kept = answer_words[: rng.randint(0, len(answer_words) - 1)]
            noise = rng.sample(_NOISE, rng.randint(2, 6))
            words = ["what", *noise[: len(noise) // 2], *kept, *noise[len(noise) // 2 :]]
            cands.append(" ".join(words))
        rng.shuffle(cands)
        groups.append(TrainingGroup(" ".join(context_words), " ".join(answer_words), tuple(cands), reference, item_id=f"g{g}"))
    return groups


def last_question(prompt: str) -> str:
    return prompt.rsplit("Question: ", 1)[1].split("\n", 1)[0]


class ScriptedQA:
    """Responder keyed on the target question of each prompt.

    ``generations`` maps a ground-truth question to its candidate list;
    ``answers`` maps any question to the answer the backend should give.
    Unknown prompts fall through to the mock's own synthesis.
    """

    def __init__(self, generations=None, answers=None):
        self.generations = dict(generations or {})
        self.answers = dict(answers or {})
        self.qa_calls: list[str] = []

    def __call__(self, prompt, params, call_index):
        q = last_question(prompt)
        if prompt.endswith("same answer is:"):
            return self.generations.get(q)
        self.qa_calls.append(q)
        if q in self.answers:
            return [self.answers[q]]
        return None


def load_consistency_fixture():
    """Dataset with filler exemplars plus a responder scripted from the fixture file."""
    fx = json.loads((FIXTURES / "consistency.json").read_text())
    filler = make_dataset(per_attribute=6, attributes=["feeling"])
    items = [QARecord.from_dict(it["record"]) for it in fx["items"]]
    responder = ScriptedQA()
    for rec, it in zip(items, fx["items"]):
        responder.generations[rec.question] = [c["text"] for c in it["candidates"]]
        responder.answers[rec.question] = it["regenerated_answer"]
        for c in it["candidates"]:
            responder.answers.setdefault(c["text"].strip(), c["answer"])
    return fx, Dataset(filler.records + tuple(items)), responder


def run_pipeline(workdir: Path, seed: int = 0, *extra: str) -> dict[str, Path]:
    """augment -> overgenerate -> train-ranker -> rank -> eval on mock data."""
    from qgen.cli import main

    workdir.mkdir(parents=True, exist_ok=True)
    train = workdir / "train.jsonl"
    test = workdir / "test.jsonl"
    write_rows(train, [r.to_dict() for r in make_dataset(per_attribute=6, seed=1)])
    write_rows(test, [r.to_dict() for r in make_dataset(per_attribute=2, split="test", seed=2)])
    p = {name: workdir / name for name in ("aug.jsonl", "train_cands.jsonl", "cands.jsonl", "model.json", "selected.jsonl", "report.txt")}
    s = ["--seed", str(seed), *extra]
    steps = [
        ["augment", "--input", str(train), "--out", str(p["aug.jsonl"]), *s],
        ["overgenerate", "--input", str(train), "--out", str(p["train_cands.jsonl"]), "--k", "10", *s],
        ["overgenerate", "--input", str(test), "--out", str(p["cands.jsonl"]), "--k", "10", *s],
        ["train-ranker", "--groups", str(p["train_cands.jsonl"]), "--out", str(p["model.json"]), "--epochs", "50", "--seed", str(seed)],
        ["rank", "--candidates", str(p["cands.jsonl"]), "--method", "distmatch", "--model", str(p["model.json"]), "--out", str(p["selected.jsonl"]), *s],
        ["eval", "--pred", str(p["selected.jsonl"]), "--ref", str(test), "--out", str(p["report.txt"])],
    ]
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise AssertionError(f"{argv[0]} exited {code}")
    return p


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
