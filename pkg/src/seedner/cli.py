"""Command line front end.

Subcommands:

    harvest         rank span surface forms; optionally pick a lexicon interactively
    annotate        project a lexicon onto a corpus, report coverage
    run             full weakly supervised training run driven by a manifest
    predict         tag a corpus with a trained model
    eval            entity-level scoring of predictions against gold
    inspect-traces  summarize a rule trace log

A `run` is reproducible from the manifest it writes into its output
directory. Option precedence, highest first: command line flag, then a
``SEEDNER_*`` environment variable (SEED, OUT, MLM_ENDPOINT,
TAGGER_ENDPOINT), then the config file.

Exit codes: 0 success, 2 bad invocation or manifest, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import wire
from .backend import make_mlm_backend
from .corpus import (
    CONLL_2003,
    ColumnConfig,
    Document,
    Sentence,
    read_corpus,
    strip_labels,
    write_corpus,
)
from .lexicon import (
    Lexicon,
    LexiconEntry,
    annotate_with_lexicon,
    format_lexicon,
    harvest_candidates,
    load_lexicon,
    validate_unambiguous,
)
from .mlm import ThresholdTable
from .rules import RuleConfig, RuleTrace
from .scoring import WNUT_TO_CONLL, map_labels, score_entities
from .selftrain import (
    PipelineConfig,
    PipelineResult,
    StageSchedule,
    run_pipeline,
    tag_documents,
)
from .tagger import TaggerHyperparams, TaggerModel, make_tagger_backend

_ENV_PREFIX = "SEEDNER_"

_FORMATS = {
    "plain": ColumnConfig(),
    "conll": CONLL_2003,
    "unlabeled": ColumnConfig(text_col=0, pos_col=1, label_col=None, columns=2),
}

_DEFAULT_CLASSES = ("PER", "LOC", "ORG", "MISC")


class UsageError(Exception):
    """Bad invocation or bad manifest; maps to exit code 2."""


def _env(name: str) -> str | None:
    return os.environ.get(_ENV_PREFIX + name)


def _column_config(name: str) -> ColumnConfig:
    try:
        return _FORMATS[name]
    except KeyError:
        raise UsageError(f"unknown corpus format {name!r}, expected one of "
                         f"{sorted(_FORMATS)}") from None


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def _read_corpus_files(paths: Sequence[str], config: ColumnConfig) -> list[Document]:
    """Read and concatenate corpora, renumbering ids so they stay globally
    unique and ascending across files."""
    docs: list[Document] = []
    next_sid = 0
    for path in paths:
        for doc in read_corpus(_read_text(path), config):
            sentences = []
            for s in doc.sentences:
                sentences.append(dataclasses.replace(s, sentence_id=next_sid))
                next_sid += 1
            docs.append(Document(sentences, doc_id=f"doc{len(docs):04d}"))
    if not docs:
        raise UsageError(f"empty corpus: {', '.join(paths)}")
    return docs


def _load_lexicon_checked(path: str) -> Lexicon:
    if not Path(path).is_file():
        raise UsageError(f"no such lexicon file: {path}")
    lexicon = load_lexicon(path)
    dupes = validate_unambiguous(lexicon)
    if dupes:
        listed = ", ".join(" ".join(s) for s in dupes[:5])
        raise UsageError(f"lexicon lists surfaces under multiple classes: {listed}")
    return lexicon


def _write_or_print(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- manifest

_MANIFEST_KEYS = frozenset({
    "corpus", "lexicon", "dev_corpus", "out", "format", "seed",
    "mlm_endpoint", "tagger_endpoint",
})
_PIPELINE_KEYS = frozenset({
    "schedule", "window", "treat_nnps_as_wall", "thresholds", "rules",
    "rule_order", "hyperparams", "mlm_top_k", "case_sensitive",
    "unlabeled_cap",
})


@dataclass(frozen=True)
class RunManifest:
    """Everything a training run needs, resolved from config file,
    environment, and flags. ``pipeline`` holds the declarative sections
    that become the PipelineConfig."""

    corpus: tuple[str, ...]
    lexicon: str
    out: str
    mlm_endpoint: str
    seed: int = 13
    tagger_endpoint: str = "native"
    dev_corpus: str | None = None
    format: str = "plain"
    pipeline: dict = field(default_factory=dict)

    def validate_inputs(self) -> None:
        for path in (*self.corpus, self.lexicon, self.dev_corpus):
            if path is not None and not Path(path).is_file():
                raise UsageError(f"no such file: {path}")
        _column_config(self.format)
        _check_endpoint(self.mlm_endpoint)
        _check_endpoint(self.tagger_endpoint)

    def payload(self) -> dict:
        record = {
            "corpus": list(self.corpus),
            "lexicon": self.lexicon,
            "out": self.out,
            "format": self.format,
            "seed": self.seed,
            "mlm_endpoint": self.mlm_endpoint,
            "tagger_endpoint": self.tagger_endpoint,
        }
        if self.dev_corpus is not None:
            record["dev_corpus"] = self.dev_corpus
        record.update(self.pipeline)
        return record


def _check_endpoint(endpoint: str) -> None:
    """Syntax check only; nothing is dialed."""
    if endpoint == "native" or endpoint.startswith("stub:hash:") \
            or endpoint.startswith("stub:map:"):
        return
    try:
        wire.parse_endpoint(endpoint)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_manifest(args: argparse.Namespace) -> RunManifest:
    payload: dict = {}
    if args.config:
        try:
            payload = json.loads(_read_text(args.config))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
        if not isinstance(payload, dict):
            raise UsageError(f"{args.config}: top level must be an object")

    unknown = set(payload) - _MANIFEST_KEYS - _PIPELINE_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")

    def resolve(flag, env_name, key, default=None):
        if flag is not None:
            return flag
        env = _env(env_name)
        if env is not None:
            return env
        return payload.get(key, default)

    corpus = payload.get("corpus")
    if isinstance(corpus, str):
        corpus = [corpus]
    lexicon = payload.get("lexicon")
    out = resolve(args.out, "OUT", "out")
    seed = resolve(args.seed, "SEED", "seed", 13)
    mlm = resolve(args.mlm_endpoint, "MLM_ENDPOINT", "mlm_endpoint")
    tagger = resolve(args.tagger_endpoint, "TAGGER_ENDPOINT", "tagger_endpoint",
                     "native")

    missing = [name for name, value in
               [("corpus", corpus), ("lexicon", lexicon), ("out", out),
                ("mlm_endpoint", mlm)] if not value]
    if missing:
        raise UsageError(f"manifest is missing: {', '.join(missing)}")
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise UsageError(f"seed must be an integer, got {seed!r}") from None

    return RunManifest(
        corpus=tuple(corpus),
        lexicon=str(lexicon),
        out=str(out),
        seed=seed,
        mlm_endpoint=str(mlm),
        tagger_endpoint=str(tagger),
        dev_corpus=payload.get("dev_corpus"),
        format=str(payload.get("format", "plain")),
        pipeline={k: payload[k] for k in _PIPELINE_KEYS if k in payload},
    )


def _pipeline_config(pipeline: dict, seed: int) -> PipelineConfig:
    """Build the typed config from the manifest's declarative sections.

    The manifest seed doubles as the tagger seed unless the hyperparams
    section pins its own.
    """
    try:
        schedule = StageSchedule(**pipeline.get("schedule", {}))
        hp = dict(pipeline.get("hyperparams", {}))
        hp.setdefault("seed", seed)
        hyperparams = TaggerHyperparams(**hp)

        thresholds_raw = pipeline.get("thresholds")
        if thresholds_raw is None:
            thresholds = PipelineConfig().thresholds
        elif set(thresholds_raw) <= {"values", "default"}:
            thresholds = ThresholdTable(**thresholds_raw)
        else:
            thresholds = ThresholdTable(values=dict(thresholds_raw))

        rules_raw = dict(pipeline.get("rules", {}))
        for key in ("company_suffixes", "honorifics", "propagate_classes"):
            if key in rules_raw:
                rules_raw[key] = frozenset(rules_raw[key])
        rules = RuleConfig(**rules_raw)

        kwargs = {}
        for key in ("window", "treat_nnps_as_wall", "mlm_top_k",
                    "case_sensitive", "unlabeled_cap"):
            if key in pipeline:
                kwargs[key] = pipeline[key]
        if "rule_order" in pipeline:
            kwargs["rule_order"] = tuple(pipeline["rule_order"])
        return PipelineConfig(
            schedule=schedule,
            thresholds=thresholds,
            rules=rules,
            hyperparams=hyperparams,
            seed=seed,
            **kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad pipeline config: {exc}") from exc


# --------------------------------------------------------------------- run

def _trace_record(trace: RuleTrace) -> dict:
    record = dataclasses.asdict(trace)
    record["before"] = list(record["before"])
    record["after"] = list(record["after"])
    return record


def _write_run_artifacts(outdir: Path, manifest: RunManifest,
                         result: PipelineResult) -> None:
    outdir.joinpath("manifest.json").write_text(
        json.dumps(manifest.payload(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    with outdir.joinpath("metrics.jsonl").open("w", encoding="utf-8") as fh:
        for m in result.metrics:
            fh.write(json.dumps(m.to_record(), sort_keys=True) + "\n")
    with outdir.joinpath("traces.jsonl").open("w", encoding="utf-8") as fh:
        for trace in result.traces:
            fh.write(json.dumps(_trace_record(trace), sort_keys=True) + "\n")
    outdir.joinpath("model.bin").write_bytes(result.model.blob)
    outdir.joinpath("model.json").write_text(json.dumps({
        "classes": list(result.model.classes),
        "signature": result.model.signature,
        "model_id": result.model.model_id,
        "blob": "model.bin",
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outdir.joinpath("labeled.txt").write_text(
        write_corpus(result.documents), encoding="utf-8")
    outdir.joinpath("annotation.json").write_text(
        json.dumps(dataclasses.asdict(result.annotation), indent=2,
                   sort_keys=True) + "\n", encoding="utf-8")


def cmd_run(args: argparse.Namespace) -> int:
    manifest = _load_manifest(args)
    manifest.validate_inputs()
    cfg = _pipeline_config(manifest.pipeline, manifest.seed)

    if args.dry_run:
        total = cfg.schedule.burn_in + cfg.schedule.intermediate \
            + cfg.schedule.burn_out
        print(f"manifest ok: {len(manifest.corpus)} corpus file(s), "
              f"{total} iteration(s), seed {manifest.seed}")
        print(f"would write to {manifest.out}")
        return 0

    outdir = Path(manifest.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if not os.access(outdir, os.W_OK):
        raise UsageError(f"output directory not writable: {outdir}")

    colcfg = _column_config(manifest.format)
    docs = _read_corpus_files(manifest.corpus, colcfg)
    dev_docs = None
    if manifest.dev_corpus is not None:
        dev_docs = _read_corpus_files([manifest.dev_corpus], colcfg)
    lexicon = _load_lexicon_checked(manifest.lexicon)

    mlm_backend = make_mlm_backend(manifest.mlm_endpoint)
    tagger_backend = make_tagger_backend(manifest.tagger_endpoint)

    result = run_pipeline(docs, lexicon, cfg, mlm_backend=mlm_backend,
                          tagger_backend=tagger_backend, dev_docs=dev_docs)
    _write_run_artifacts(outdir, manifest, result)

    for m in result.metrics:
        line = (f"iteration {m.iteration} [{m.stage}] "
                f"labeled={m.labeled} unlabeled={m.unlabeled} "
                f"harvested={m.harvested}")
        if m.dev_f1 is not None:
            line += f" dev_f1={m.dev_f1:.2f}"
        print(line)
    print(f"done: model and logs in {outdir}")
    return 0


# ----------------------------------------------------------------- harvest

def _interactive_pick(
    candidates: Sequence[tuple[tuple[str, ...], int]],
    classes: Sequence[str],
    per_class: int,
    ask: Callable[[str], str],
    echo: Callable[[str], None],
) -> Lexicon:
    """Walk ranked candidates, asking for a class for each. A surface can
    land under one class only; duplicate picks are rejected on the spot."""
    picked: dict[str, list[LexiconEntry]] = {cls: [] for cls in classes}
    owner: dict[tuple[str, ...], str] = {}
    options = "/".join(classes)

    def full() -> bool:
        return all(len(v) >= per_class for v in picked.values())

    for rank, (surface, count) in enumerate(candidates, start=1):
        if full():
            break
        text = " ".join(surface)
        while True:
            answer = ask(f"[{rank}/{len(candidates)}] {text!r} ({count} hits) "
                         f"{options}, s(kip), d(one)? ").strip()
            if not answer or answer.lower() in ("s", "skip"):
                break
            if answer.lower() in ("d", "done"):
                return _picked_lexicon(picked)
            cls = answer.upper()
            if cls not in picked:
                echo(f"unknown class {answer!r}, expected {options}")
                continue
            if surface in owner:
                echo(f"rejected: {text!r} is already listed under {owner[surface]}")
                continue
            if len(picked[cls]) >= per_class:
                echo(f"{cls} already has {per_class} entries")
                continue
            picked[cls].append(LexiconEntry(surface, frequency=count))
            owner[surface] = cls
            break
    return _picked_lexicon(picked)


def _picked_lexicon(picked: dict[str, list[LexiconEntry]]) -> Lexicon:
    lexicon = Lexicon({cls: tuple(v) for cls, v in picked.items() if v})
    dupes = validate_unambiguous(lexicon)
    if dupes:
        raise UsageError(f"ambiguous picks: {dupes}")
    return lexicon


def cmd_harvest(args: argparse.Namespace) -> int:
    docs = _read_corpus_files(args.corpus, _column_config(args.format))
    candidates = harvest_candidates(docs, args.top)
    if not args.interactive:
        lines = [f"{' '.join(surface)}\t{count}" for surface, count in candidates]
        _write_or_print("\n".join(lines) + "\n" if lines else "", args.out)
        return 0

    if args.out is None:
        raise UsageError("--interactive needs --out to save the lexicon")
    classes = tuple(c.strip().upper() for c in args.classes.split(",") if c.strip())
    if not classes:
        raise UsageError("--classes must name at least one class")
    lexicon = _interactive_pick(candidates, classes, args.per_class,
                                ask=input, echo=print)
    total = sum(len(v) for v in lexicon.entries.values())
    if total == 0:
        raise UsageError("nothing picked, lexicon not written")
    Path(args.out).write_text(format_lexicon(lexicon) + "\n", encoding="utf-8")
    print(f"wrote {total} entries to {args.out}")
    return 0


# ---------------------------------------------------------------- annotate

def _strip_docs(docs: Sequence[Document]) -> list[Document]:
    return [
        Document([strip_labels(s) for s in d.sentences], doc_id=d.doc_id)
        for d in docs
    ]


def _merge_by_sid(docs: Sequence[Document],
                  sentences: dict[int, Sentence]) -> list[Document]:
    return [
        Document([sentences.get(s.sentence_id, s) for s in d.sentences],
                 doc_id=d.doc_id)
        for d in docs
    ]


def cmd_annotate(args: argparse.Namespace) -> int:
    docs = _strip_docs(_read_corpus_files(args.corpus, _column_config(args.format)))
    lexicon = _load_lexicon_checked(args.lexicon)
    labeled, _, stats = annotate_with_lexicon(
        docs, lexicon, case_sensitive=not args.case_insensitive)
    merged = _merge_by_sid(docs, {s.sentence_id: s for s in labeled})
    _write_or_print(write_corpus(merged), args.out)
    print(f"matched {stats.matched_entities} entities "
          f"({stats.matched_tokens} tokens) in {stats.sentences_labeled}"
          f"/{stats.sentences_total} sentences", file=sys.stderr)
    return 0


# ----------------------------------------------------------------- predict

def _load_model(path: str) -> TaggerModel:
    p = Path(path)
    if p.is_dir():
        p = p / "model.json"
    if not p.is_file():
        raise UsageError(f"no such model description: {p}")
    try:
        meta = json.loads(p.read_text(encoding="utf-8"))
        classes = tuple(meta["classes"])
        signature = meta["signature"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{p}: bad model description: {exc}") from exc
    blob = b""
    if meta.get("blob"):
        blob_path = p.parent / meta["blob"]
        if not blob_path.is_file():
            raise UsageError(f"model blob missing: {blob_path}")
        blob = blob_path.read_bytes()
    return TaggerModel(classes=classes, signature=signature, blob=blob,
                       model_id=meta.get("model_id"))


def cmd_predict(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    backend = make_tagger_backend(args.tagger_endpoint or "native")
    predictor = backend.predictor(model)
    docs = _read_corpus_files(args.corpus, _column_config(args.format))
    tagged = tag_documents(predictor, docs)
    _write_or_print(write_corpus(tagged), args.out)
    return 0


# -------------------------------------------------------------------- eval

def _load_mapping(spec: str) -> dict[str, str]:
    if spec == "wnut":
        return dict(WNUT_TO_CONLL)
    mapping = json.loads(_read_text(spec))
    if not isinstance(mapping, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()):
        raise UsageError(f"{spec}: mapping must be a string-to-string object")
    return mapping


def cmd_eval(args: argparse.Namespace) -> int:
    colcfg = _column_config(args.format)
    pred = _read_corpus_files([args.pred], colcfg)
    gold = _read_corpus_files([args.gold], colcfg)
    if args.mapping:
        try:
            pred = map_labels(pred, _load_mapping(args.mapping))
        except KeyError as exc:
            raise UsageError(f"mapping is not total: {exc.args[0]}") from exc
    report = score_entities(pred, gold)
    print(report.format())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_records(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    return 0


# --------------------------------------------------------- inspect-traces

def cmd_inspect_traces(args: argparse.Namespace) -> int:
    counts: dict[str, int] = {}
    shown = 0
    lines = _read_text(args.traces).splitlines()
    details = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            rule = record["rule"]
            detail = (f"{rule}  sentence {record['sentence_id']}  "
                      f"[{record['start']},{record['end']})  "
                      f"{' '.join(record['before'])} -> {' '.join(record['after'])}")
            if record.get("reason"):
                detail += f"  ({record['reason']})"
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{args.traces} line {lineno}: {exc}") from exc
        counts[rule] = counts.get(rule, 0) + 1
        if args.rule in (None, rule) and shown < args.limit:
            details.append(detail)
            shown += 1
    for rule in sorted(counts, key=lambda r: (-counts[r], r)):
        print(f"{counts[rule]:6d}  {rule}")
    if details:
        print()
        print("\n".join(details))
    if not counts:
        print("no traces")
    return 0


# -------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seedner",
        description="Weakly supervised named entity tagging from a "
                    "10-exemplar lexicon.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_format(p):
        p.add_argument("--format", default="plain", choices=sorted(_FORMATS),
                       help="corpus column layout (default: plain)")

    p = sub.add_parser("run", help="train from a manifest")
    p.add_argument("--config", help="manifest JSON file")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--mlm-endpoint", help="mlm scorer endpoint override")
    p.add_argument("--tagger-endpoint", help="tagger endpoint override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--dry-run", action="store_true",
                   help="validate the manifest and exit without writing")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("harvest", help="rank candidate surface forms")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--top", type=int, default=100)
    p.add_argument("--out")
    p.add_argument("--interactive", action="store_true",
                   help="pick lexicon entries class by class")
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--classes", default=",".join(_DEFAULT_CLASSES))
    add_format(p)
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("annotate", help="project a lexicon onto a corpus")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out")
    p.add_argument("--case-insensitive", action="store_true")
    add_format(p)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("predict", help="tag a corpus with a trained model")
    p.add_argument("corpus", nargs="+")
    p.add_argument("--model", required=True,
                   help="run output directory or model.json path")
    p.add_argument("--tagger-endpoint")
    p.add_argument("--out")
    add_format(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("pred")
    p.add_argument("gold")
    p.add_argument("--mapping",
                   help="label mapping applied to predictions first: "
                        "'wnut' or a JSON file")
    p.add_argument("--out", help="write per-class records as JSON")
    add_format(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-traces", help="summarize a rule trace log")
    p.add_argument("traces")
    p.add_argument("--rule", help="show details for this rule only")
    p.add_argument("--limit", type=int, default=10,
                   help="max detail lines (default: 10)")
    p.set_defaults(func=cmd_inspect_traces)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, wire.ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
