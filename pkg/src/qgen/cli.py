"""Command-line entry point.

Subcommands: ``augment``, ``overgenerate``, ``train-ranker``, ``rank``,
``eval``, ``rouge``.  Exit status is 0 on success, 1 on validation errors
(bad flags, bad input files, contract violations) and 2 on backend or
transport errors.  Every subcommand that writes ``--out`` also writes
``<out>.manifest.json`` with input hashes and the effective config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from qgen import __version__
from qgen import config as qconfig
from qgen._util import sha256_file
from qgen.augmentation import augment_dataset
from qgen.backend import DecodingParams, make_backend
from qgen.corpus import QARecord, load_dataset, read_jsonl, write_jsonl
from qgen.errors import BackendError, DatasetError, EmptyCandidatePool, QGenError
from qgen.evalreport import evaluate, format_report, report_json
from qgen.metrics import rouge, rouge_l_f1
from qgen.ranking import Candidate, CandidateSet, overgenerate, rank_by_perplexity, rank_by_scorer
from qgen.scorer import ScorerModel, TrainingGroup, fit

log = logging.getLogger("qgen")

EXIT_OK, EXIT_VALIDATION, EXIT_BACKEND = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2; usage errors are validation errors here
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int, default=None, help="master seed fanned out to every module")
    p.add_argument("-v", "--verbose", action="store_true")


def _backend_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument("--backend", choices=["mock", "http"], default=None)
    g.add_argument("--base-url", default=None)
    g.add_argument("--lm-model", dest="backend_model", default=None, help="model name sent to the completions endpoint")
    g.add_argument("--timeout", type=float, default=None)
    g.add_argument("--max-retries", type=int, default=None)
    g.add_argument("--max-in-flight", type=int, default=None)
    g.add_argument("--requests-per-minute", type=int, default=None)
    g.add_argument("--max-completions", type=int, default=None, help="hard budget of completions for this run")
    g.add_argument("--mock-fixtures", default=None, help="JSONL fixture table for the mock backend")
    g.add_argument("--cache", default=None, help="sqlite response cache path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qgen {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("augment", help="add consistency-filtered synthetic questions to a training set")
    _common(p)
    _backend_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=None, help="candidates per record (default 4)")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="weight of human records (default 0.8)")
    p.add_argument("--minority-only", dest="minority_only", action="store_true", default=None)
    p.add_argument("--all-attributes", dest="minority_only", action="store_false")
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--tolerant", action="store_true", default=None, help="skip records whose augmentation fails")

    p = sub.add_parser("overgenerate", help="sample K candidate questions per record")
    _common(p)
    _backend_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--strategy", choices=["greedy", "nucleus", "contrastive"], default=None)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--alpha-penalty", type=float, default=None)
    p.add_argument("--batch-n", type=int, default=None, help="completions per request (default k)")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("train-ranker", help="fit the distribution-matching scorer")
    _common(p)
    p.add_argument("--groups", required=True, help="JSONL of {context, answer, question, candidates}")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha-p", type=float, default=None)
    p.add_argument("--alpha-r", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("rank", help="select one question per candidate set")
    _common(p)
    _backend_flags(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--method", choices=["ppl", "distmatch"], required=True)
    p.add_argument("--model", dest="ranker_model", default=None, help="scorer model JSON (distmatch)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="ROUGE-L report of selected questions against references")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--ref-format", choices=["jsonl", "csv"], default=None)
    p.add_argument("--group-by", default=None, help="comma list from answer_kind,attribute")
    p.add_argument("--format", choices=["table", "json"], default=None)
    p.add_argument("--lenient", action="store_true", help="drop items without a prediction instead of scoring 0")
    p.add_argument("--out", default=None)

    p = sub.add_parser("rouge", help="score one candidate against one reference")
    p.add_argument("--candidate", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--variant", choices=["l", "1"], default="l")
    return parser


def _effective_config(args: argparse.Namespace) -> dict:
    file_cfg = qconfig.load_config_file(getattr(args, "config", None))
    g = lambda name: getattr(args, name, None)  # noqa: E731
    overrides = {
        "seed": g("seed"),
        "backend": {
            "kind": g("backend"),
            "base_url": g("base_url"),
            "model": g("backend_model"),
            "timeout_s": g("timeout"),
            "max_retries": g("max_retries"),
            "max_in_flight": g("max_in_flight"),
            "requests_per_minute": g("requests_per_minute"),
            "max_completions": g("max_completions"),
            "mock_fixtures": g("mock_fixtures"),
            "cache_path": g("cache"),
        },
    }
    if args.command == "augment":
        overrides["augment"] = {
            "m": g("m"),
            "threshold": g("threshold"),
            "lambda": g("lam"),
            "minority_only": g("minority_only"),
            "top_p": g("top_p"),
            "temperature": g("temperature"),
            "workers": g("workers"),
            "tolerant": g("tolerant"),
        }
    elif args.command == "overgenerate":
        overrides["overgenerate"] = {
            "k": g("k"),
            "strategy": g("strategy"),
            "top_p": g("top_p"),
            "temperature": g("temperature"),
            "top_k": g("top_k"),
            "alpha_penalty": g("alpha_penalty"),
            "batch_n": g("batch_n"),
            "workers": g("workers"),
        }
    elif args.command == "train-ranker":
        overrides["ranker"] = {
            "alpha_p": g("alpha_p"),
            "alpha_r": g("alpha_r"),
            "epochs": g("epochs"),
            "learning_rate": g("lr"),
            "batch_size": g("batch_size"),
        }
    elif args.command == "eval":
        overrides["eval"] = {
            "strict": False if g("lenient") else None,
            "group_by": [s.strip() for s in g("group_by").split(",") if s.strip()] if g("group_by") else None,
            "format": g("format"),
        }
    return qconfig.resolve(file_cfg, overrides)


def _write_manifest(out: str | Path, command: str, inputs: Sequence[str | Path], cfg: dict, **extra) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "inputs": {str(p): sha256_file(p) for p in inputs if p and Path(p).exists()},
        "output": {str(out): sha256_file(out)} if Path(out).exists() else {},
        "config": cfg,
        **extra,
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_input(path: str, fmt: str | None):
    d = load_dataset(path, fmt)
    for err in d.errors:
        log.warning("%s: %s", path, err)
    return d


# -- subcommands --


def cmd_augment(args, cfg) -> int:
    d = _load_input(args.input, args.format)
    acfg = qconfig.augmentation_config(cfg)
    backend = make_backend(qconfig.backend_config(cfg), qconfig.module_seed(cfg, "backend"))
    try:
        result = augment_dataset(d, acfg, backend)
    finally:
        backend.close()
    write_jsonl(args.out, (r.to_dict() for r in result.records))
    log.info("wrote %d records (%d synthetic) to %s", len(result.records), result.n_synthetic, args.out)
    _write_manifest(
        args.out, "augment", [args.input], cfg,
        counts={"human": len(d), "synthetic": result.n_synthetic, "input_row_errors": len(d.errors)},
        errors=[{"id": i, "error": e} for i, e in result.errors],
    )
    return EXIT_OK


def cmd_overgenerate(args, cfg) -> int:
    d = _load_input(args.input, args.format)
    k = int(cfg["overgenerate"]["k"])
    params = qconfig.overgenerate_params(cfg)
    backend = make_backend(qconfig.backend_config(cfg), qconfig.module_seed(cfg, "backend"))

    def one(rec: QARecord):
        try:
            return overgenerate(rec, backend, params, k)
        except EmptyCandidatePool as exc:
            log.warning("%s", exc)
            return None

    try:
        workers = int(cfg["overgenerate"]["workers"])
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sets = list(pool.map(one, d))
        else:
            sets = [one(r) for r in d]
    finally:
        backend.close()
    rows = []
    for rec, cs in zip(d, sets):
        if cs is None:
            continue
        rows.append({
            "item_id": rec.id,
            "context": rec.context,
            "answer": rec.answer,
            "question": rec.question,
            "attribute": rec.attribute,
            "answer_kind": rec.answer_kind,
            "prompt": cs.prompt,
            "decoding": cs.decoding.to_dict(),
            "k": cs.k,
            "candidates": cs.texts,
            "targets": [rouge_l_f1(t, rec.question) for t in cs.texts],
        })
    write_jsonl(args.out, rows)
    _write_manifest(args.out, "overgenerate", [args.input], cfg, counts={"items": len(d), "written": len(rows)})
    return EXIT_OK


def cmd_train_ranker(args, cfg) -> int:
    groups = []
    for i, row in enumerate(read_jsonl(args.groups)):
        try:
            group = TrainingGroup.from_dict(row)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{args.groups} row {i}: {exc}") from exc
        if group.k < 2:
            log.warning("skipping group %s: K=%d < 2", group.item_id or i, group.k)
            continue
        groups.append(group)
    tcfg = qconfig.rank_train_config(cfg)
    model, trace = fit(groups, tcfg)
    model.save(args.out)
    _write_manifest(
        args.out, "train-ranker", [args.groups], cfg,
        training={"groups": len(groups), "initial_loss": trace.losses[0], "best_loss": min(trace.losses), "best_epoch": trace.best_epoch},
    )
    return EXIT_OK


def _candidate_set(row: dict) -> tuple[CandidateSet, QARecord]:
    rec = QARecord(
        id=row["item_id"],
        context=row["context"],
        answer=row["answer"],
        question=row.get("question") or "?",
        attribute=row.get("attribute", "action"),
        answer_kind=row.get("answer_kind", "explicit"),
        split="test",
    )
    decoding = DecodingParams.from_dict(row["decoding"]) if row.get("decoding") else DecodingParams.greedy()
    texts = row["candidates"]
    cs = CandidateSet(rec.id, tuple(Candidate(t) for t in texts), decoding, int(row.get("k", len(texts))), row.get("prompt", ""))
    return cs, rec


def cmd_rank(args, cfg) -> int:
    if args.method == "distmatch" and not args.ranker_model:
        raise UsageError("--method distmatch requires --model <model.json>")
    rows = read_jsonl(args.candidates)
    pairs = [_candidate_set(r) for r in rows]
    out = []
    inputs = [args.candidates]
    if args.method == "distmatch":
        model = ScorerModel.load(args.ranker_model)
        inputs.append(args.ranker_model)
        results = [rank_by_scorer(cs, rec, model) for cs, rec in pairs]
    else:
        backend = make_backend(qconfig.backend_config(cfg), qconfig.module_seed(cfg, "backend"))
        try:
            results = [rank_by_perplexity(cs, backend) for cs, _ in pairs]
        finally:
            backend.close()
    for (cs, _), res in zip(pairs, results):
        out.append({
            "item_id": res.item_id,
            "question": cs.candidates[res.selected].text,
            "method": res.method,
            "score": res.scores[res.selected],
            "ordering": list(res.ordering),
        })
    write_jsonl(args.out, out)
    _write_manifest(args.out, "rank", inputs, cfg, method=args.method)
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    preds = {}
    for row in read_jsonl(args.pred):
        preds[str(row["item_id"])] = row["question"]
    refs = _load_input(args.ref, args.ref_format)
    ecfg = cfg["eval"]
    group_by = ecfg["group_by"]
    bad = set(group_by) - {"answer_kind", "attribute"}
    if bad:
        raise UsageError(f"unknown --group-by value(s): {', '.join(sorted(bad))}")
    report = evaluate(preds, refs, strict=bool(ecfg["strict"]))
    text = report_json(report, group_by) if ecfg["format"] == "json" else format_report(report, group_by)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _write_manifest(args.out, "eval", [args.pred, args.ref], cfg)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_rouge(args) -> int:
    print(f"{rouge(args.candidate, args.reference, args.variant):.6f}")
    return EXIT_OK


COMMANDS = {
    "augment": cmd_augment,
    "overgenerate": cmd_overgenerate,
    "train-ranker": cmd_train_ranker,
    "rank": cmd_rank,
    "eval": cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "rouge":
        return cmd_rouge(args)
    try:
        cfg = _effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except BackendError as exc:
        print(f"qgen {args.command}: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (UsageError, DatasetError, QGenError, ValueError, KeyError, OSError) as exc:
        print(f"qgen {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
