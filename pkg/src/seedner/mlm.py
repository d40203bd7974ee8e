"""Cloze-based span labeling: mask a detected span, try every lexicon
exemplar as the fill, and keep the class whose best exemplar fits best —
if it beats the runner-up by that class's margin threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backend import ClozeCandidate, ClozeRequest, MlmBackend
from .corpus import (
    EntitySpan,
    LabelSource,
    PROTECTED_SOURCES,
    Sentence,
    apply_span,
)
from .lexicon import Lexicon
from .span_detector import DEFAULT_PATTERN, SpanPattern, detect_spans


@dataclass(frozen=True)
class ClassScore:
    label: str
    score: float
    best_exemplar: tuple[str, ...]

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score out of [0,1]: {self.score}")


@dataclass(frozen=True)
class ThresholdTable:
    """Per-class acceptance margins: the winner must beat the runner-up by
    strictly more than its class threshold."""

    values: dict[str, float] = field(default_factory=dict)
    default: float = 0.0

    def __post_init__(self):
        for cls, v in {**self.values, "": self.default}.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"threshold out of [0,1] for {cls or 'default'}: {v}")

    def margin(self, cls: str) -> float:
        return self.values.get(cls, self.default)


DEFAULT_THRESHOLDS = ThresholdTable({"ORG": 0.28, "PER": 0.2, "LOC": 0.1, "MISC": 0.05})


def score_span(
    sentence: Sentence,
    span: tuple[int, int],
    mlm_lexicon: Lexicon,
    backend: MlmBackend,
) -> list[ClassScore]:
    """Score every class against the masked span.

    One backend round trip covers all (class, exemplar) candidates; a
    class's score is the max over its eligible exemplars of the mean
    per-mask probability. Classes with no eligible exemplar are omitted.
    Output is sorted by descending score, then label, so the result is
    stable under exemplar order permutations.
    """
    start, end = span
    candidates = [
        ClozeCandidate(cls, entry.surface) for cls, entry in mlm_lexicon.items()
    ]
    if not candidates:
        return []
    request = ClozeRequest(sentence.texts(), start, end, tuple(candidates))
    results = backend.mask_fill_probabilities(request)
    best: dict[str, tuple[float, tuple[str, ...]]] = {}
    for cand, result in zip(candidates, results):
        if not result.eligible:
            continue
        mean = result.mean
        cur = best.get(cand.label)
        if cur is None or mean > cur[0] or (mean == cur[0] and cand.words < cur[1]):
            best[cand.label] = (mean, cand.words)
    scores = [ClassScore(cls, mean, words) for cls, (mean, words) in best.items()]
    scores.sort(key=lambda s: (-s.score, s.label))
    return scores


def classify_span(
    scores: list[ClassScore], thresholds: ThresholdTable = DEFAULT_THRESHOLDS
) -> tuple[str, float] | None:
    """Inverse breaking ties: accept the top class only when its lead over
    the runner-up strictly exceeds the class margin. A lone class competes
    against an implicit 0. Exact score ties abstain."""
    if not scores:
        return None
    top = scores[0]
    runner_up = scores[1].score if len(scores) > 1 else 0.0
    if len(scores) > 1 and scores[1].score == top.score:
        return None  # no unique argmax
    margin = top.score - runner_up
    if margin > thresholds.margin(top.label):
        return top.label, margin
    return None


def annotate_sentence_mlm(
    sentence: Sentence,
    mlm_lexicon: Lexicon,
    thresholds: ThresholdTable,
    backend: MlmBackend,
    pattern: SpanPattern = DEFAULT_PATTERN,
) -> tuple[Sentence, list[EntitySpan], bool]:
    """Detect candidate spans, score each, and write the accepted ones with
    MLM provenance and the winning score as confidence.

    Spans touching Gold- or Lexicon-sourced tokens are skipped whole.
    Returns (new sentence, accepted spans, changed flag).
    """
    accepted: list[EntitySpan] = []
    out = sentence
    for start, end in detect_spans([t.pos for t in sentence.tokens], pattern):
        if any(t.source in PROTECTED_SOURCES for t in sentence.tokens[start:end]):
            continue
        scores = score_span(sentence, (start, end), mlm_lexicon, backend)
        decision = classify_span(scores, thresholds)
        if decision is None:
            continue
        cls, _margin = decision
        winning = next(s for s in scores if s.label == cls)
        span = EntitySpan(sentence.sentence_id, start, end, cls, LabelSource.MLM, winning.score)
        out = apply_span(out, span)
        accepted.append(span)
    return out, accepted, bool(accepted)
