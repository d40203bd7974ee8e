"""Three-stage self-training that grows the labeled set from seed matches.

Burn-in trusts the cloze heuristic over the freshly minted tagger and
defers the confidence-based rules; the intermediate stage flips precedence
to the tagger and enables the full sieve; burn-out is plain self-training
that moves every remaining unlabeled sentence. Dynamic window filtering
guards every retraining set, and the tagger is retrained from scratch at
each iteration boundary so runs are reproducible.

Sentences move from U (unlabeled) to L (labeled) exactly once and never
back; a sentence is harvested when its labels after the full combination
(cloze + tagger + sieve) differ from its pre-iteration labels. Proposals
on sentences that end the iteration unchanged are discarded.
"""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .backend import MlmBackend
from .corpus import (
    Document,
    LabelSource,
    PROTECTED_SOURCES,
    Sentence,
    apply_span,
    strip_labels,
)
from .lexicon import AnnotationStats, Lexicon, annotate_with_lexicon, filter_for_mlm
from .mlm import DEFAULT_THRESHOLDS, ThresholdTable, annotate_sentence_mlm
from .rules import CONFIDENCE_RULES, DEFAULT_ORDER, RuleConfig, RuleTrace, apply_sieve
from .scoring import score_entities
from .tagger import TaggerBackend, TaggerHyperparams, TaggerModel
from .window_filter import DEFAULT_WINDOW, filter_sentence


class PipelineError(RuntimeError):
    """A component failure, wrapped with the iteration and stage it hit."""


class StageKind(Enum):
    BURN_IN = "burn-in"
    INTERMEDIATE = "intermediate"
    BURN_OUT = "burn-out"


@dataclass(frozen=True)
class StageSchedule:
    """How many iterations each stage runs, in burn-in → intermediate →
    burn-out order. ``iterations`` may be passed as a cross-check; it must
    equal the sum of the stage counts."""

    burn_in: int = 1
    intermediate: int = 2
    burn_out: int = 1
    iterations: int | None = None

    def __post_init__(self):
        counts = (self.burn_in, self.intermediate, self.burn_out)
        if any(c < 0 for c in counts):
            raise ValueError(f"stage counts must be >= 0, got {counts}")
        total = sum(counts)
        if self.iterations is None:
            object.__setattr__(self, "iterations", total)
        elif self.iterations != total:
            raise ValueError(
                f"iterations={self.iterations} != sum of stage counts {total}"
            )

    def kinds(self) -> tuple[StageKind, ...]:
        return (
            (StageKind.BURN_IN,) * self.burn_in
            + (StageKind.INTERMEDIATE,) * self.intermediate
            + (StageKind.BURN_OUT,) * self.burn_out
        )


@dataclass(frozen=True)
class PipelineConfig:
    schedule: StageSchedule = StageSchedule()
    window: int = DEFAULT_WINDOW
    treat_nnps_as_wall: bool = True
    thresholds: ThresholdTable = DEFAULT_THRESHOLDS
    rules: RuleConfig = RuleConfig()
    rule_order: tuple[str, ...] = DEFAULT_ORDER
    hyperparams: TaggerHyperparams = TaggerHyperparams()
    mlm_top_k: int = 20
    case_sensitive: bool = True
    seed: int = 13
    unlabeled_cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "rule_order", tuple(self.rule_order))
        if self.unlabeled_cap is not None and self.unlabeled_cap < 0:
            raise ValueError("unlabeled_cap must be >= 0")


@dataclass(frozen=True)
class PipelineState:
    """Every sentence lives in exactly one of L (labeled), U (unlabeled),
    or the ignored pool (subsampled away); the union never changes size."""

    sentences: dict[int, Sentence]
    doc_ids: tuple[str, ...]
    doc_members: dict[str, tuple[int, ...]]
    labeled: frozenset[int]
    unlabeled: frozenset[int]
    ignored: frozenset[int] = frozenset()
    extras: tuple[Sentence, ...] = ()
    classes: tuple[str, ...] = ()
    model: TaggerModel | None = None
    iteration: int = 0

    def verify(self) -> None:
        buckets = (self.labeled, self.unlabeled, self.ignored)
        union: set[int] = set()
        for bucket in buckets:
            if union & bucket:
                raise ValueError("L, U, and ignored must be pairwise disjoint")
            union |= bucket
        if union != set(self.sentences):
            raise ValueError("L + U + ignored must cover every sentence exactly once")
        member_union = [sid for doc in self.doc_ids for sid in self.doc_members[doc]]
        if sorted(member_union) != sorted(self.sentences):
            raise ValueError("document membership must cover every sentence exactly once")
        for sid in self.unlabeled:
            if any(label != "O" for label in self.sentences[sid].labels()):
                raise ValueError(f"unlabeled sentence {sid} carries labels")

    def document(self, doc_id: str) -> Document:
        return Document(
            tuple(self.sentences[sid] for sid in self.doc_members[doc_id]), doc_id
        )

    def documents(self) -> list[Document]:
        return [self.document(doc_id) for doc_id in self.doc_ids]


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    stage: str
    labeled: int
    unlabeled: int
    harvested: int
    mlm_spans: int
    rule_traces: dict[str, int]
    extra_sentences: int
    training_segments: int
    dev_f1: float | None = None

    def to_record(self) -> dict:
        record = {
            "iteration": self.iteration,
            "stage": self.stage,
            "labeled": self.labeled,
            "unlabeled": self.unlabeled,
            "harvested": self.harvested,
            "mlm_spans": self.mlm_spans,
            "rule_traces": dict(sorted(self.rule_traces.items())),
            "extra_sentences": self.extra_sentences,
            "training_segments": self.training_segments,
        }
        if self.dev_f1 is not None:
            record["dev_f1"] = round(self.dev_f1, 4)
        return record


@dataclass(frozen=True)
class PipelineResult:
    model: TaggerModel
    metrics: tuple[IterationMetrics, ...]
    traces: tuple[RuleTrace, ...]
    documents: tuple[Document, ...]
    state: PipelineState
    annotation: AnnotationStats


def _training_segments(state: PipelineState, cfg: PipelineConfig):
    segments = []
    pool = [state.sentences[sid] for sid in sorted(state.labeled)]
    pool.extend(state.extras)
    for sentence in pool:
        segments.extend(
            filter_sentence(
                sentence, window=cfg.window, treat_nnps_as_wall=cfg.treat_nnps_as_wall
            )
        )
    return segments


def _retrain(
    state: PipelineState, cfg: PipelineConfig, tagger_backend: TaggerBackend
) -> tuple[TaggerModel, int]:
    segments = _training_segments(state, cfg)
    if not segments:
        raise ValueError("no training material: the lexicon matched nothing")
    model = tagger_backend.train(segments, cfg.hyperparams, classes=state.classes)
    return model, len(segments)


def _with_spans(base: Sentence, spans) -> Sentence:
    out = base
    for span in sorted(spans, key=lambda sp: sp.start):
        out = apply_span(out, span)
    return out


def _overlay(winners, losers) -> list:
    """Winning spans plus every losing span that touches none of them."""
    kept = list(winners)
    for span in losers:
        if all(span.end <= w.start or w.end <= span.start for w in winners):
            kept.append(span)
    return kept


def run_iteration(
    state: PipelineState,
    kind: StageKind,
    cfg: PipelineConfig,
    *,
    tagger_backend: TaggerBackend,
    mlm_backend: MlmBackend | None = None,
    mlm_lexicon: Lexicon | None = None,
) -> tuple[PipelineState, IterationMetrics, tuple[RuleTrace, ...]]:
    state.verify()
    try:
        return _run_iteration(
            state, kind, cfg,
            tagger_backend=tagger_backend,
            mlm_backend=mlm_backend,
            mlm_lexicon=mlm_lexicon,
        )
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(
            f"iteration {state.iteration}, stage {kind.value}: {exc}"
        ) from exc


def _run_iteration(
    state: PipelineState,
    kind: StageKind,
    cfg: PipelineConfig,
    *,
    tagger_backend: TaggerBackend,
    mlm_backend: MlmBackend | None,
    mlm_lexicon: Lexicon | None,
) -> tuple[PipelineState, IterationMetrics, tuple[RuleTrace, ...]]:
    if kind is not StageKind.BURN_OUT and (mlm_backend is None or mlm_lexicon is None):
        raise ValueError(f"{kind.value} needs an MLM backend and its filtered lexicon")

    model = state.model
    if model is None:
        model, _ = _retrain(state, cfg, tagger_backend)
    predictor = tagger_backend.predictor(model)

    sentences = dict(state.sentences)
    traces: list[RuleTrace] = []
    candidates: list[Sentence] = []
    mlm_span_count = 0

    if kind is StageKind.BURN_OUT:
        harvested = set(state.unlabeled)
        for sid in sorted(harvested):
            base = sentences[sid]
            sentences[sid] = _with_spans(base, predictor.predict(base).spans)
    else:
        proposals: dict[int, Sentence] = {}
        modified: set[int] = set()
        mlm_modified: set[int] = set()
        for sid in sorted(state.unlabeled):
            base = sentences[sid]
            _, mlm_spans, _ = annotate_sentence_mlm(
                base, mlm_lexicon, cfg.thresholds, mlm_backend
            )
            tagger_spans = [
                sp for sp in predictor.predict(base).spans
                if not any(
                    t.source in PROTECTED_SOURCES for t in base.tokens[sp.start:sp.end]
                )
            ]
            if kind is StageKind.BURN_IN:
                combined = _overlay(mlm_spans, tagger_spans)
            else:
                combined = _overlay(tagger_spans, mlm_spans)
            updated = _with_spans(base, combined)
            proposals[sid] = updated
            if mlm_spans:
                mlm_modified.add(sid)
                mlm_span_count += len(mlm_spans)
            if updated.labels() != base.labels():
                modified.add(sid)

        if kind is StageKind.BURN_IN:
            editable = mlm_modified
            order = tuple(r for r in cfg.rule_order if r not in CONFIDENCE_RULES)
            conf_sources = frozenset({LabelSource.MLM, LabelSource.TAGGER})
            sieve_tagger = None
        else:
            editable = modified
            order = cfg.rule_order
            conf_sources = frozenset({LabelSource.TAGGER})
            sieve_tagger = predictor

        after = dict(proposals)
        for doc_id in state.doc_ids:
            members = state.doc_members[doc_id]
            if not any(sid in editable for sid in members):
                continue
            doc = Document(
                tuple(after.get(sid, sentences[sid]) for sid in members), doc_id
            )
            result = apply_sieve(
                doc, order, cfg.rules,
                tagger=sieve_tagger,
                editable=set(editable),
                confidence_sources=conf_sources,
            )
            traces.extend(result.traces)
            candidates.extend(result.candidates)
            for sentence in result.document.sentences:
                if sentence.sentence_id in editable:
                    after[sentence.sentence_id] = sentence

        harvested = set()
        for sid in state.unlabeled:
            final = after[sid]
            if final.labels() != state.sentences[sid].labels():
                harvested.add(sid)
                sentences[sid] = final

    new_state = dataclasses.replace(
        state,
        sentences=sentences,
        labeled=frozenset(state.labeled | harvested),
        unlabeled=frozenset(state.unlabeled - harvested),
        extras=state.extras + tuple(candidates),
        iteration=state.iteration + 1,
    )
    model, segment_count = _retrain(new_state, cfg, tagger_backend)
    new_state = dataclasses.replace(new_state, model=model)
    new_state.verify()

    rule_counts: dict[str, int] = {}
    for trace in traces:
        rule_counts[trace.rule] = rule_counts.get(trace.rule, 0) + 1
    metrics = IterationMetrics(
        iteration=state.iteration,
        stage=kind.value,
        labeled=len(new_state.labeled),
        unlabeled=len(new_state.unlabeled),
        harvested=len(harvested),
        mlm_spans=mlm_span_count,
        rule_traces=rule_counts,
        extra_sentences=len(new_state.extras),
        training_segments=segment_count,
    )
    return new_state, metrics, tuple(traces)


def tag_documents(predictor, docs: Sequence[Document]) -> list[Document]:
    """Strip labels, predict each sentence, write the predicted spans."""
    out = []
    for doc in docs:
        tagged = []
        for sentence in doc.sentences:
            base = strip_labels(sentence)
            tagged.append(_with_spans(base, predictor.predict(base).spans))
        out.append(dataclasses.replace(doc, sentences=tuple(tagged)))
    return out


def _initial_state(
    docs: Sequence[Document], lexicon: Lexicon, cfg: PipelineConfig
) -> tuple[PipelineState, AnnotationStats]:
    stripped = [
        dataclasses.replace(
            doc, sentences=tuple(strip_labels(s) for s in doc.sentences)
        )
        for doc in docs
    ]
    labeled_sents, unlabeled_sents, stats = annotate_with_lexicon(
        stripped, lexicon, case_sensitive=cfg.case_sensitive
    )
    sentences = {s.sentence_id: s for s in labeled_sents}
    sentences.update({s.sentence_id: s for s in unlabeled_sents})
    unlabeled = {s.sentence_id for s in unlabeled_sents}
    ignored: set[int] = set()
    if cfg.unlabeled_cap is not None and len(unlabeled) > cfg.unlabeled_cap:
        rng = random.Random(cfg.seed)
        kept = set(rng.sample(sorted(unlabeled), cfg.unlabeled_cap))
        ignored = unlabeled - kept
        unlabeled = kept
    state = PipelineState(
        sentences=sentences,
        doc_ids=tuple(doc.doc_id for doc in stripped),
        doc_members={
            doc.doc_id: tuple(s.sentence_id for s in doc.sentences) for doc in stripped
        },
        labeled=frozenset(s.sentence_id for s in labeled_sents),
        unlabeled=frozenset(unlabeled),
        ignored=frozenset(ignored),
        classes=tuple(sorted(lexicon.classes)),
    )
    state.verify()
    return state, stats


def run_pipeline(
    docs: Sequence[Document],
    lexicon: Lexicon,
    cfg: PipelineConfig,
    *,
    mlm_backend: MlmBackend,
    tagger_backend: TaggerBackend,
    dev_docs: Sequence[Document] | None = None,
) -> PipelineResult:
    """Annotate with the lexicon, run the stage schedule, return the final
    model plus per-iteration metrics and the full rule trace log.

    Input labels are discarded: the pipeline treats the corpus as
    unlabeled text. Deterministic given the config seed and deterministic
    backends.
    """
    state, stats = _initial_state(docs, lexicon, cfg)
    try:
        mlm_lexicon = filter_for_mlm(lexicon, mlm_backend, cfg.mlm_top_k)
    except Exception as exc:
        raise PipelineError(f"lexicon preparation: {exc}") from exc

    metrics: list[IterationMetrics] = []
    traces: list[RuleTrace] = []
    kinds = cfg.schedule.kinds()
    if not kinds:
        try:
            model, _ = _retrain(state, cfg, tagger_backend)
        except Exception as exc:
            raise PipelineError(f"initial training: {exc}") from exc
        state = dataclasses.replace(state, model=model)
    for kind in kinds:
        state, iteration_metrics, iteration_traces = run_iteration(
            state, kind, cfg,
            tagger_backend=tagger_backend,
            mlm_backend=mlm_backend,
            mlm_lexicon=mlm_lexicon,
        )
        if dev_docs is not None:
            predictor = tagger_backend.predictor(state.model)
            report = score_entities(tag_documents(predictor, dev_docs), dev_docs)
            iteration_metrics = dataclasses.replace(
                iteration_metrics, dev_f1=report.overall.f1
            )
        metrics.append(iteration_metrics)
        traces.extend(iteration_traces)

    return PipelineResult(
        model=state.model,
        metrics=tuple(metrics),
        traces=tuple(traces),
        documents=tuple(state.documents()),
        state=state,
        annotation=stats,
    )
