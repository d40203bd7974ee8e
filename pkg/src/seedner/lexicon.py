"""Seed lexicon: representation, harvesting, validation, annotation, and
the single-subword/top-k filter used by the cloze heuristic.

File format: one surface form per line under a `[CLASS]` section header,
words space-separated, with an optional tab-separated frequency suffix.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .corpus import Document, EntitySpan, LabelSource, Sentence, apply_span
from .span_detector import DEFAULT_PATTERN, SpanPattern, detect_spans

Surface = tuple[str, ...]


class SubwordCounter(Protocol):
    """The slice of the MLM backend the lexicon filter needs."""

    def subword_counts(self, words: Sequence[str]) -> list[int]: ...


class LexiconFormatError(ValueError):
    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class AmbiguousLexiconError(ValueError):
    """A surface form appears under more than one class."""


@dataclass(frozen=True)
class LexiconEntry:
    surface: Surface
    frequency: int = 0

    def __post_init__(self):
        object.__setattr__(self, "surface", tuple(self.surface))
        if not self.surface or any(not w or any(c.isspace() for c in w) for w in self.surface):
            raise ValueError(f"bad surface form: {self.surface!r}")
        if self.frequency < 0:
            raise ValueError("frequency must be >= 0")


@dataclass(frozen=True)
class Lexicon:
    """Per-class exemplar lists. Construction does not enforce unambiguity;
    callers that rely on it go through validate_unambiguous."""

    entries: dict[str, tuple[LexiconEntry, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "entries", {cls: tuple(items) for cls, items in self.entries.items()}
        )

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.entries)

    def surfaces(self, cls: str) -> tuple[Surface, ...]:
        return tuple(e.surface for e in self.entries.get(cls, ()))

    def items(self) -> Iterable[tuple[str, LexiconEntry]]:
        for cls, entries in self.entries.items():
            for entry in entries:
                yield cls, entry

    @staticmethod
    def from_pairs(pairs: dict[str, Sequence[str | Surface]]) -> "Lexicon":
        """Convenience: {'LOC': ['Germany', 'New York'], ...} with zero freqs."""
        entries = {}
        for cls, surfaces in pairs.items():
            items = []
            for s in surfaces:
                words = tuple(s.split()) if isinstance(s, str) else tuple(s)
                items.append(LexiconEntry(words))
            entries[cls] = tuple(items)
        return Lexicon(entries)


def parse_lexicon(text: str) -> Lexicon:
    entries: dict[str, list[LexiconEntry]] = {}
    current: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise LexiconFormatError("empty class name", lineno)
            entries.setdefault(current, [])
            continue
        if current is None:
            raise LexiconFormatError(f"entry before any [CLASS] header: {line!r}", lineno)
        surface_part, _, freq_part = line.partition("\t")
        freq = 0
        if freq_part:
            try:
                freq = int(freq_part.strip())
            except ValueError:
                raise LexiconFormatError(f"bad frequency: {freq_part!r}", lineno) from None
        words = tuple(surface_part.split())
        if not words:
            raise LexiconFormatError("empty surface form", lineno)
        entries[current].append(LexiconEntry(words, freq))
    return Lexicon({cls: tuple(items) for cls, items in entries.items()})


def format_lexicon(lexicon: Lexicon) -> str:
    lines = []
    for cls, items in lexicon.entries.items():
        lines.append(f"[{cls}]")
        for e in items:
            suffix = f"\t{e.frequency}" if e.frequency else ""
            lines.append(" ".join(e.surface) + suffix)
        lines.append("")
    return "\n".join(lines)


def load_lexicon(path) -> Lexicon:
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh.read())


def validate_unambiguous(lexicon: Lexicon) -> list[Surface]:
    """Every surface form present under two or more classes, sorted."""
    seen: dict[Surface, set[str]] = {}
    for cls, entry in lexicon.items():
        seen.setdefault(entry.surface, set()).add(cls)
    return sorted(s for s, classes in seen.items() if len(classes) > 1)


def harvest_candidates(
    docs: Sequence[Document],
    top_n: int,
    pattern: SpanPattern = DEFAULT_PATTERN,
) -> list[tuple[Surface, int]]:
    """Rank surface forms of detected spans by occurrence count.

    Fully unsupervised: only POS tags are consulted. Ties break
    lexicographically on the surface words.
    """
    counts: Counter[Surface] = Counter()
    saw_pos = False
    for doc in docs:
        for sentence in doc.sentences:
            pos = [t.pos for t in sentence]
            saw_pos = saw_pos or any(pos)
            for start, end in detect_spans(pos, pattern):
                counts[tuple(t.text for t in sentence.tokens[start:end])] += 1
    if not saw_pos and any(doc.sentences for doc in docs):
        raise ValueError("corpus has no POS tags; harvesting needs them")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_n]


@dataclass(frozen=True)
class AnnotationStats:
    matched_entities: int
    matched_tokens: int
    sentences_labeled: int
    sentences_total: int


def _surface_key(surface: Surface, case_sensitive: bool) -> Surface:
    return surface if case_sensitive else tuple(w.lower() for w in surface)


def match_surfaces(
    sentence: Sentence,
    index: dict[Surface, str],
    max_len: int,
    *,
    case_sensitive: bool = True,
) -> list[tuple[int, int, str]]:
    """Left-to-right, longest-match-first scan. Matches touching a
    protected (Gold/Lexicon) token are skipped, not shortened."""
    texts = [t.text for t in sentence.tokens]
    n = len(texts)
    out = []
    i = 0
    while i < n:
        hit = None
        for length in range(min(max_len, n - i), 0, -1):
            key = _surface_key(tuple(texts[i : i + length]), case_sensitive)
            cls = index.get(key)
            if cls is None:
                continue
            window = sentence.tokens[i : i + length]
            if any(t.source in (LabelSource.GOLD, LabelSource.LEXICON) for t in window):
                continue
            hit = (i, i + length, cls)
            break
        if hit:
            out.append(hit)
            i = hit[1]
        else:
            i += 1
    return out


def annotate_with_lexicon(
    docs: Sequence[Document],
    lexicon: Lexicon,
    *,
    case_sensitive: bool = True,
) -> tuple[list[Sentence], list[Sentence], AnnotationStats]:
    """Label exact lexicon matches; split sentences into (L, U).

    L holds sentences with at least one match (rewritten with
    Lexicon-sourced labels); U holds the rest untouched. The two lists
    together are a partition of the input sentences in corpus order.
    """
    violations = validate_unambiguous(lexicon)
    if violations:
        raise AmbiguousLexiconError(f"surface forms under multiple classes: {violations}")
    index: dict[Surface, str] = {}
    max_len = 1
    for cls, entry in lexicon.items():
        index[_surface_key(entry.surface, case_sensitive)] = cls
        max_len = max(max_len, len(entry.surface))

    labeled: list[Sentence] = []
    unlabeled: list[Sentence] = []
    entities = tokens = 0
    total = 0
    for doc in docs:
        for sentence in doc.sentences:
            total += 1
            matches = match_surfaces(sentence, index, max_len, case_sensitive=case_sensitive)
            if not matches:
                unlabeled.append(sentence)
                continue
            for start, end, cls in matches:
                sentence = apply_span(
                    sentence, EntitySpan(sentence.sentence_id, start, end, cls, LabelSource.LEXICON)
                )
                entities += 1
                tokens += end - start
            labeled.append(sentence)
    stats = AnnotationStats(entities, tokens, len(labeled), total)
    return labeled, unlabeled, stats


def filter_for_mlm(lexicon: Lexicon, backend: SubwordCounter, top_k: int = 20) -> Lexicon:
    """Keep entries whose every word is a single subword, then the top_k
    most frequent per class (ties lexicographic). Idempotent."""
    words = sorted({w for _, entry in lexicon.items() for w in entry.surface})
    counts = backend.subword_counts(words)
    if len(counts) != len(words):
        raise ValueError(
            f"backend returned {len(counts)} subword counts for {len(words)} words"
        )
    single = {w for w, c in zip(words, counts) if c == 1}
    entries = {}
    for cls, items in lexicon.entries.items():
        kept = [e for e in items if all(w in single for w in e.surface)]
        kept.sort(key=lambda e: (-e.frequency, e.surface))
        entries[cls] = tuple(kept[:top_k])
    return Lexicon(entries)
