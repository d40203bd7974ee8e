"""Deterministic label-correction sieve.

Rules run in a configurable order, each seeing the previous rule's output.
Per-sentence rules: company_suffix, loc_org_adjacency, sports_score.
Document-scoped rules: ospd, multi_mention, affix_strip. Every label
change emits exactly one trace; replaying the traces over the input
document reproduces the output document (tested property).

Gold- and Lexicon-sourced labels are never rewritten; they still count as
evidence (votes, triggers). An ``editable`` id set limits which sentences
a rule may write to, while evidence is always gathered document-wide.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .corpus import (
    Document,
    EntitySpan,
    LabelSource,
    OUTSIDE,
    PROTECTED_SOURCES,
    Sentence,
    Token,
    spans_from_bio,
)

DEFAULT_COMPANY_SUFFIXES = frozenset(
    {"Inc.", "Inc", "Corp.", "Corp", "Ltd.", "Ltd", "Co.", "Plc", "LLC", "AG", "NV"}
)
DEFAULT_HONORIFICS = frozenset({"Mr.", "Mrs.", "Ms.", "Dr.", "Prof.", "Sir"})
DEFAULT_SCORE_PATTERN = r"\d+-\d+"
DEFAULT_ORDER = (
    "company_suffix",
    "loc_org_adjacency",
    "sports_score",
    "multi_mention",
    "affix_strip",
    "ospd",
)
GLOBAL_RULES = ("company_suffix", "loc_org_adjacency", "sports_score")
CONFIDENCE_RULES = ("multi_mention", "affix_strip")

_INTEGER = re.compile(r"\d+")


@dataclass(frozen=True)
class RuleConfig:
    company_suffixes: frozenset[str] = DEFAULT_COMPANY_SUFFIXES
    honorifics: frozenset[str] = DEFAULT_HONORIFICS
    score_pattern: str = DEFAULT_SCORE_PATTERN
    confidence_threshold: float = 0.9
    propagate_classes: frozenset[str] = frozenset({"ORG", "LOC", "PER"})

    def __post_init__(self):
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ValueError(f"threshold must be in (0,1]: {self.confidence_threshold}")
        if not self.company_suffixes or not self.honorifics:
            raise ValueError("suffix and honorific sets must be non-empty")
        try:
            re.compile(self.score_pattern)
        except re.error as exc:
            raise ValueError(f"bad score pattern {self.score_pattern!r}: {exc}") from exc

    @property
    def score_re(self) -> re.Pattern:
        return re.compile(self.score_pattern)


@dataclass(frozen=True)
class RuleTrace:
    """One label rewrite: ``after`` replaces labels at [start, end) of the
    named sentence. Traces replay in order."""

    rule: str
    sentence_id: int
    start: int
    end: int
    before: tuple[str, ...]
    after: tuple[str, ...]
    reason: str = ""


class SpanPredictor(Protocol):
    """The slice of a trained tagger the affix rule needs."""

    def predict(self, sentence: Sentence): ...


def _writable(span: EntitySpan) -> bool:
    return span.source not in PROTECTED_SOURCES


def _rewrite_range(
    sentence: Sentence,
    start: int,
    end: int,
    after: Sequence[str],
    rule: str,
    reason: str,
    traces: list[RuleTrace],
) -> Sentence:
    """Relabeling keeps a token's provenance when it stays inside an
    entity: the detection (and its confidence) is still the same one, only
    the class was corrected, and later confidence-triggered rules may
    still fire from it. Tokens newly pulled into an entity are
    rule-sourced; tokens dropped to O reset to the default source."""
    before = sentence.labels()[start:end]
    if tuple(before) == tuple(after):
        return sentence
    tokens = list(sentence.tokens)
    for i, label in zip(range(start, end), after):
        if tokens[i].label == label:
            continue
        if label == OUTSIDE:
            tokens[i] = Token(tokens[i].text, tokens[i].pos)
        elif tokens[i].label == OUTSIDE:
            tokens[i] = Token(tokens[i].text, tokens[i].pos, label, LabelSource.RULE)
        else:
            tokens[i] = dataclasses.replace(tokens[i], label=label)
    traces.append(RuleTrace(rule, sentence.sentence_id, start, end, tuple(before), tuple(after), reason))
    return dataclasses.replace(sentence, tokens=tuple(tokens))


def _relabel_span(
    sentence: Sentence,
    span: EntitySpan,
    new_class: str,
    rule: str,
    reason: str,
    traces: list[RuleTrace],
) -> Sentence:
    after = [("B-" if i == span.start else "I-") + new_class for i in range(span.start, span.end)]
    return _rewrite_range(sentence, span.start, span.end, after, rule, reason, traces)


def rule_company_suffix(
    sentence: Sentence, cfg: RuleConfig
) -> tuple[Sentence, list[RuleTrace]]:
    """A person span that ends in, or is immediately followed by, a company
    suffix is really an organization; the suffix joins the span."""
    traces: list[RuleTrace] = []
    changed = True
    while changed:
        changed = False
        for span in spans_from_bio(sentence):
            if span.label != "PER" or not _writable(span):
                continue
            last = sentence.tokens[span.end - 1].text
            if last in cfg.company_suffixes:
                sentence = _relabel_span(sentence, span, "ORG", "company_suffix",
                                         f"ends in suffix {last!r}", traces)
                changed = True
                break
            if span.end < len(sentence):
                nxt = sentence.tokens[span.end]
                if (
                    nxt.text in cfg.company_suffixes
                    and nxt.label == OUTSIDE
                    and nxt.source not in PROTECTED_SOURCES
                ):
                    after = ["B-ORG"] + ["I-ORG"] * (span.end - span.start)
                    sentence = _rewrite_range(
                        sentence, span.start, span.end + 1, after, "company_suffix",
                        f"followed by suffix {nxt.text!r}", traces,
                    )
                    changed = True
                    break
    return sentence, traces


def rule_loc_org_adjacency(sentence: Sentence) -> tuple[Sentence, list[RuleTrace]]:
    """A location span touching an organization span is part of the
    organization's name; the location span is relabeled ORG."""
    traces: list[RuleTrace] = []
    changed = True
    while changed:
        changed = False
        spans = spans_from_bio(sentence)
        for a, b in zip(spans, spans[1:]):
            if a.end != b.start:
                continue
            pair = {a.label, b.label}
            if pair != {"LOC", "ORG"}:
                continue
            loc = a if a.label == "LOC" else b
            if not _writable(loc):
                continue
            sentence = _relabel_span(sentence, loc, "ORG", "loc_org_adjacency",
                                     "adjacent to ORG span", traces)
            changed = True
            break
    return sentence, traces


def rule_sports_score(
    sentence: Sentence, cfg: RuleConfig
) -> tuple[Sentence, list[RuleTrace]]:
    """A location followed later in the sentence by a score token or by at
    least two integers is a team, not a place."""
    traces: list[RuleTrace] = []
    score_re = cfg.score_re
    for span in spans_from_bio(sentence):
        if span.label != "LOC" or not _writable(span):
            continue
        tail = [t.text for t in sentence.tokens[span.end :]]
        has_score = any(score_re.fullmatch(t) for t in tail)
        n_integers = sum(1 for t in tail if _INTEGER.fullmatch(t))
        if has_score or n_integers >= 2:
            reason = "score token follows" if has_score else f"{n_integers} integers follow"
            sentence = _relabel_span(sentence, span, "ORG", "sports_score", reason, traces)
    return sentence, traces


def _doc_mentions(document: Document) -> dict[tuple[str, ...], list[tuple[int, EntitySpan]]]:
    """surface -> [(sentence index, span)] over all labeled spans."""
    groups: dict[tuple[str, ...], list[tuple[int, EntitySpan]]] = {}
    for idx, sentence in enumerate(document.sentences):
        for span in spans_from_bio(sentence):
            surface = tuple(t.text for t in sentence.tokens[span.start : span.end])
            groups.setdefault(surface, []).append((idx, span))
    return groups


def rule_ospd(
    document: Document, editable: set[int] | None = None
) -> tuple[Document, list[RuleTrace]]:
    """One sense per discourse: a surface mentioned more than once in a
    document takes its unique-plurality class everywhere. Ties leave the
    document alone. Only labeled mentions move; plain text is not
    promoted (that is the multi-mention rule's job)."""
    traces: list[RuleTrace] = []
    sentences = list(document.sentences)
    for surface, mentions in sorted(_doc_mentions(document).items()):
        if len(mentions) < 2:
            continue
        counts: dict[str, int] = {}
        for _, span in mentions:
            counts[span.label] = counts.get(span.label, 0) + 1
        top = max(counts.values())
        winners = [cls for cls, n in counts.items() if n == top]
        if len(winners) != 1:
            continue
        majority = winners[0]
        for idx, span in mentions:
            if span.label == majority or not _writable(span):
                continue
            sid = sentences[idx].sentence_id
            if editable is not None and sid not in editable:
                continue
            sentences[idx] = _relabel_span(
                sentences[idx], span, majority, "ospd",
                f"majority {majority} ({top}/{len(mentions)})", traces,
            )
    return dataclasses.replace(document, sentences=tuple(sentences)), traces


def _find_occurrences(sentence: Sentence, surface: tuple[str, ...]) -> list[int]:
    """Start indices of all-O occurrences of the surface, left to right,
    non-overlapping, never touching protected tokens."""
    texts = [t.text for t in sentence.tokens]
    n, m = len(texts), len(surface)
    out = []
    i = 0
    while i + m <= n:
        window = sentence.tokens[i : i + m]
        if (
            tuple(texts[i : i + m]) == surface
            and all(t.label == OUTSIDE for t in window)
            and all(t.source not in PROTECTED_SOURCES for t in window)
        ):
            out.append(i)
            i += m
        else:
            i += 1
    return out


def _propagate_surface(
    sentences: list[Sentence],
    surface: tuple[str, ...],
    target: str,
    rule: str,
    reason: str,
    editable: set[int] | None,
    traces: list[RuleTrace],
) -> None:
    """Force every mention (labeled spans and clean text runs) of the
    surface to the target class. Shared by multi_mention and affix_strip."""
    for idx, sentence in enumerate(sentences):
        if editable is not None and sentence.sentence_id not in editable:
            continue
        for span in spans_from_bio(sentence):
            mention = tuple(t.text for t in sentence.tokens[span.start : span.end])
            if mention != surface or span.label == target or not _writable(span):
                continue
            sentence = _relabel_span(sentence, span, target, rule, reason, traces)
        for start in _find_occurrences(sentence, surface):
            after = [("B-" if k == start else "I-") + target
                     for k in range(start, start + len(surface))]
            # a span directly after the occurrence stays intact: occurrence
            # tokens are O, so no I- continuation can follow them
            sentence = _rewrite_range(
                sentence, start, start + len(surface), after, rule, reason, traces
            )
        sentences[idx] = sentence


def rule_multi_mention(
    document: Document,
    cfg: RuleConfig,
    editable: set[int] | None = None,
    confidence_sources: frozenset[LabelSource] = frozenset(
        {LabelSource.MLM, LabelSource.TAGGER}
    ),
) -> tuple[Document, list[RuleTrace]]:
    """A high-confidence span's label is forced onto every other mention of
    the same surface in the document. Between conflicting triggers the
    higher confidence wins; an exact confidence tie with different labels
    leaves the surface alone."""
    traces: list[RuleTrace] = []
    sentences = list(document.sentences)
    triggers: dict[tuple[str, ...], list[EntitySpan]] = {}
    for idx, sentence in enumerate(sentences):
        for span in spans_from_bio(sentence):
            if (
                span.label in cfg.propagate_classes
                and span.confidence is not None
                and span.confidence > cfg.confidence_threshold
                and span.source in confidence_sources
            ):
                surface = tuple(t.text for t in sentence.tokens[span.start : span.end])
                triggers.setdefault(surface, []).append(span)
    for surface in sorted(triggers):
        best = max(triggers[surface], key=lambda s: s.confidence)
        rivals = [s for s in triggers[surface] if s.label != best.label]
        if rivals and max(r.confidence for r in rivals) == best.confidence:
            continue  # tied conflict: no change
        _propagate_surface(
            sentences, surface, best.label, "multi_mention",
            f"confidence {best.confidence:.3f} > {cfg.confidence_threshold}",
            editable, traces,
        )
    return dataclasses.replace(document, sentences=tuple(sentences)), traces


def _strip_affix(
    sentence: Sentence, span: EntitySpan, cfg: RuleConfig
) -> tuple[tuple[str, ...], int, int] | None:
    """Returns (remainder surface, drop index, remainder start in the
    stripped sentence) when the span carries a strippable affix."""
    if len(span) < 2:
        return None
    first = sentence.tokens[span.start].text
    last = sentence.tokens[span.end - 1].text
    if last in cfg.company_suffixes:
        surface = tuple(t.text for t in sentence.tokens[span.start : span.end - 1])
        return surface, span.end - 1, span.start
    if first in cfg.honorifics:
        surface = tuple(t.text for t in sentence.tokens[span.start + 1 : span.end])
        return surface, span.start, span.start
    return None


def _drop_token(sentence: Sentence, index: int) -> Sentence:
    tokens = sentence.tokens[:index] + sentence.tokens[index + 1 :]
    fixed = []
    prev_class = None
    for tok in tokens:
        prefix = tok.label[:1]
        cls = tok.label[2:] if tok.label != OUTSIDE else None
        if prefix == "I" and cls != prev_class:
            tok = dataclasses.replace(tok, label="B-" + cls)
        prev_class = cls if tok.label != OUTSIDE else None
        fixed.append(tok)
    return dataclasses.replace(sentence, tokens=tuple(fixed))


def rule_affix_strip(
    document: Document,
    tagger: SpanPredictor | None,
    cfg: RuleConfig,
    editable: set[int] | None = None,
    confidence_sources: frozenset[LabelSource] = frozenset(
        {LabelSource.MLM, LabelSource.TAGGER}
    ),
) -> tuple[Document, list[Sentence], list[RuleTrace]]:
    """For a high-confidence span wearing a company suffix or honorific:
    propagate its class to mentions of the affix-less remainder, and build
    the affix-stripped sentence. If the tagger is unsure about the stripped
    span (labels differ or confidence at most the threshold), the new
    sentence is returned as training material for the next iteration."""
    if tagger is None:
        raise ValueError("affix_strip needs a trained tagger for reclassification")
    traces: list[RuleTrace] = []
    candidates: list[Sentence] = []
    sentences = list(document.sentences)
    for idx, sentence in enumerate(sentences):
        if editable is not None and sentence.sentence_id not in editable:
            continue
        for span in spans_from_bio(sentence):
            if (
                span.confidence is None
                or span.confidence <= cfg.confidence_threshold
                or span.source not in confidence_sources
            ):
                continue
            stripped = _strip_affix(sentence, span, cfg)
            if stripped is None:
                continue
            remainder, drop_at, new_start = stripped
            # an earlier trigger's propagation may have rewritten this span
            current = sentences[idx].labels()[span.start : span.end]
            expected = tuple(
                ("B-" if k == span.start else "I-") + span.label
                for k in range(span.start, span.end)
            )
            if current != expected:
                continue
            _propagate_surface(
                sentences, remainder, span.label, "affix_strip",
                f"affix-stripped form of confident {span.label}", editable, traces,
            )
            base = _drop_token(sentences[idx], drop_at)
            synthetic = base
            rng = range(new_start, new_start + len(remainder))
            transplant = [("B-" if k == rng.start else "I-") + span.label for k in rng]
            tokens = list(synthetic.tokens)
            for k, label in zip(rng, transplant):
                tokens[k] = Token(tokens[k].text, tokens[k].pos, label, LabelSource.RULE)
            if rng.stop < len(tokens) and tokens[rng.stop].label.startswith("I-"):
                tokens[rng.stop] = dataclasses.replace(
                    tokens[rng.stop], label="B-" + tokens[rng.stop].label[2:]
                )
            synthetic = dataclasses.replace(synthetic, tokens=tuple(tokens))
            prediction = tagger.predict(synthetic)
            predicted_slice = tuple(prediction.labels[rng.start : rng.stop])
            confident_match = False
            if predicted_slice == tuple(transplant):
                conf = next(
                    (s.confidence for s in prediction.spans
                     if s.start == rng.start and s.end == rng.stop), None,
                )
                confident_match = conf is not None and conf > cfg.confidence_threshold
            if not confident_match:
                candidates.append(synthetic)
    return dataclasses.replace(document, sentences=tuple(sentences)), candidates, traces


@dataclass(frozen=True)
class SieveResult:
    document: Document
    candidates: tuple[Sentence, ...]
    traces: tuple[RuleTrace, ...]


def apply_sieve(
    document: Document,
    order: Sequence[str] = DEFAULT_ORDER,
    cfg: RuleConfig = RuleConfig(),
    *,
    tagger: SpanPredictor | None = None,
    editable: set[int] | None = None,
    confidence_sources: frozenset[LabelSource] = frozenset(
        {LabelSource.MLM, LabelSource.TAGGER}
    ),
) -> SieveResult:
    """Run the named rules in order, each over the previous one's output."""
    unknown = [name for name in order if name not in DEFAULT_ORDER]
    if unknown:
        raise ValueError(f"unknown rules: {unknown}; known: {list(DEFAULT_ORDER)}")
    traces: list[RuleTrace] = []
    candidates: list[Sentence] = []

    def over_sentences(fn: Callable[[Sentence], tuple[Sentence, list[RuleTrace]]]):
        nonlocal document
        sentences = []
        for sentence in document.sentences:
            if editable is not None and sentence.sentence_id not in editable:
                sentences.append(sentence)
                continue
            sentence, new_traces = fn(sentence)
            traces.extend(new_traces)
            sentences.append(sentence)
        document = dataclasses.replace(document, sentences=tuple(sentences))

    for name in order:
        if name == "company_suffix":
            over_sentences(lambda s: rule_company_suffix(s, cfg))
        elif name == "loc_org_adjacency":
            over_sentences(rule_loc_org_adjacency)
        elif name == "sports_score":
            over_sentences(lambda s: rule_sports_score(s, cfg))
        elif name == "ospd":
            document, new_traces = rule_ospd(document, editable)
            traces.extend(new_traces)
        elif name == "multi_mention":
            document, new_traces = rule_multi_mention(
                document, cfg, editable, confidence_sources
            )
            traces.extend(new_traces)
        elif name == "affix_strip":
            document, new_candidates, new_traces = rule_affix_strip(
                document, tagger, cfg, editable, confidence_sources
            )
            candidates.extend(new_candidates)
            traces.extend(new_traces)
    return SieveResult(document, tuple(candidates), tuple(traces))
