"""Data model for documents, sentences, tokens and BIO labels, plus the
column-based corpus reader/writer.

All values are immutable after construction. Pipeline stages that "modify"
a sentence build a new one; helpers at the bottom of this module cover the
common rewrites.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence

DEFAULT_CLASSES = ("PER", "ORG", "LOC", "MISC")
DOCSTART = "-DOCSTART-"

OUTSIDE = "O"


class LabelSource(Enum):
    """Where a token's label came from, in decreasing order of trust."""

    GOLD = "gold"
    LEXICON = "lexicon"
    MLM = "mlm"
    TAGGER = "tagger"
    RULE = "rule"
    DEFAULT = "default"


# Sources whose labels must never be overwritten by weak annotators.
PROTECTED_SOURCES = frozenset({LabelSource.GOLD, LabelSource.LEXICON})
# Sources whose labels carry a confidence value.
CONFIDENT_SOURCES = frozenset({LabelSource.MLM, LabelSource.TAGGER})


class CorpusFormatError(ValueError):
    """Raised on malformed input lines; carries the 1-based line number."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def split_label(label: str) -> tuple[str, str | None]:
    """Split a BIO label into (prefix, class). 'O' maps to ('O', None)."""
    if label == OUTSIDE:
        return OUTSIDE, None
    if len(label) > 2 and label[1] == "-" and label[0] in "BI":
        return label[0], label[2:]
    raise ValueError(f"not a BIO label: {label!r}")


@dataclass(frozen=True)
class Token:
    text: str
    pos: str
    label: str = OUTSIDE
    source: LabelSource = LabelSource.DEFAULT
    confidence: float | None = None

    def __post_init__(self):
        if not self.text or any(c.isspace() for c in self.text):
            raise ValueError(f"token text must be non-empty, no whitespace: {self.text!r}")
        split_label(self.label)  # shape check
        has_conf = self.confidence is not None
        if has_conf != (self.source in CONFIDENT_SOURCES):
            raise ValueError(
                f"confidence must be present iff source is MLM/Tagger "
                f"(source={self.source.value}, confidence={self.confidence})"
            )
        if has_conf and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0,1]: {self.confidence}")

    @property
    def entity_class(self) -> str | None:
        return split_label(self.label)[1]


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    sentence_id: int

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        prev_class: str | None = None
        for i, tok in enumerate(self.tokens):
            prefix, cls = split_label(tok.label)
            if prefix == "I" and cls != prev_class:
                raise ValueError(
                    f"invalid BIO at token {i}: {tok.label} does not continue "
                    f"{prev_class or 'O'}"
                )
            prev_class = cls if prefix in ("B", "I") else None

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    def texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.tokens)


@dataclass(frozen=True)
class Document:
    sentences: tuple[Sentence, ...]
    doc_id: str

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        ids = [s.sentence_id for s in self.sentences]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError(f"sentence ids not strictly ascending in {self.doc_id}: {ids}")


@dataclass(frozen=True)
class EntitySpan:
    """A contiguous token range [start, end) carrying one entity class."""

    sentence_id: int
    start: int
    end: int
    label: str
    source: LabelSource = LabelSource.DEFAULT
    confidence: float | None = None

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span bounds [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ColumnConfig:
    """Which whitespace-separated columns hold what.

    ``columns`` fixes the expected column count per data line; None accepts
    any line wide enough to cover the configured indices. ``label_col`` may
    be None for unlabeled corpora (every token then gets O / default source).
    ``repair_bio`` rewrites an I-X that does not continue an X run to B-X;
    with the flag off such input is a hard error.
    """

    text_col: int = 0
    pos_col: int | None = 1
    label_col: int | None = 2
    columns: int | None = 3
    docstart: str = DOCSTART
    repair_bio: bool = True

    def needed(self) -> int:
        cols = [self.text_col]
        if self.pos_col is not None:
            cols.append(self.pos_col)
        if self.label_col is not None:
            cols.append(self.label_col)
        return max(cols) + 1


CONLL_2003 = ColumnConfig(text_col=0, pos_col=1, label_col=3, columns=4)


def repair_bio_labels(labels: Sequence[str], *, repair: bool = True) -> list[str]:
    """Fix invalid BIO transitions by rewriting stray I-X to B-X.

    The walk uses the already-repaired prefix as context, so `O I-X I-X`
    becomes `O B-X I-X` (the second I-X now legally continues the run).
    With repair off, raises ValueError at the first bad transition.
    """
    out: list[str] = []
    prev_class: str | None = None
    for i, label in enumerate(labels):
        prefix, cls = split_label(label)
        if prefix == "I" and cls != prev_class:
            if not repair:
                raise ValueError(f"invalid BIO transition to {label} at position {i}")
            label = "B-" + cls
        out.append(label)
        prev_class = cls if prefix in ("B", "I") else None
    return out


def read_corpus(
    stream: Iterable[str] | str,
    config: ColumnConfig = ColumnConfig(),
    *,
    assume_single_discourse: bool = False,
) -> list[Document]:
    """Parse a token-per-line column stream into Documents.

    Blank lines separate sentences; a line whose first field equals
    ``config.docstart`` separates documents. When the stream carries no
    document markers at all, each sentence becomes its own single-sentence
    document (document-scoped heuristics then degrade to sentence scope);
    pass ``assume_single_discourse=True`` to treat the whole stream as one
    document instead. Doc ids are positional, sentence ids ascend globally.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()

    saw_marker = False
    pending: list[tuple[str, str, str]] = []  # (text, pos, raw label)
    sentences: list[Sentence] = []  # of the current document
    documents: list[Document] = []
    next_sentence_id = 0

    def flush_sentence():
        nonlocal next_sentence_id
        if not pending:
            return
        labels = repair_bio_labels([lab for _, _, lab in pending], repair=config.repair_bio)
        tokens = []
        for (text, pos, raw), label in zip(pending, labels):
            source = LabelSource.DEFAULT if raw == "" or label == OUTSIDE else LabelSource.GOLD
            tokens.append(Token(text=text, pos=pos, label=label, source=source))
        sentences.append(Sentence(tuple(tokens), next_sentence_id))
        next_sentence_id += 1
        pending.clear()

    def flush_document():
        if sentences:
            documents.append(Document(tuple(sentences), f"doc{len(documents):04d}"))
            sentences.clear()

    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            flush_sentence()
            continue
        fields = line.split()
        if fields[0] == config.docstart:
            flush_sentence()
            flush_document()
            saw_marker = True
            continue
        if config.columns is not None and len(fields) != config.columns:
            raise CorpusFormatError(
                f"expected {config.columns} columns, got {len(fields)}: {line!r}", lineno
            )
        if len(fields) < config.needed():
            raise CorpusFormatError(
                f"need {config.needed()} columns, got {len(fields)}: {line!r}", lineno
            )
        text = fields[config.text_col]
        pos = fields[config.pos_col] if config.pos_col is not None else ""
        raw = fields[config.label_col] if config.label_col is not None else ""
        label = raw if raw else OUTSIDE
        try:
            split_label(label)
        except ValueError as exc:
            raise CorpusFormatError(str(exc), lineno) from None
        pending.append((text, pos, label))

    flush_sentence()
    if saw_marker or assume_single_discourse:
        flush_document()
    else:
        # No markers anywhere: conservative default, one document per sentence.
        for s in sentences:
            documents.append(Document((s,), f"doc{len(documents):04d}"))
        sentences.clear()
    return documents


def write_corpus(docs: Sequence[Document], config: ColumnConfig = ColumnConfig()) -> str:
    """Serialize Documents back to the column format.

    The document marker line is emitted only between documents, so a
    marker-less single-document corpus round-trips byte-identically.
    """
    ncols = config.columns if config.columns is not None else config.needed()
    lines: list[str] = []

    def emit(text: str, pos: str, label: str):
        fields = ["-X-"] * ncols
        fields[config.text_col] = text
        if config.pos_col is not None:
            fields[config.pos_col] = pos
        if config.label_col is not None:
            fields[config.label_col] = label
        lines.append(" ".join(fields))

    for d, doc in enumerate(docs):
        if d > 0:
            emit(config.docstart, "-X-", OUTSIDE)
            lines.append("")
        for sentence in doc.sentences:
            for tok in sentence:
                emit(tok.text, tok.pos, tok.label)
            lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


def spans_from_bio(sentence: Sentence) -> list[EntitySpan]:
    """Collect maximal B-X (I-X)* runs as EntitySpans, sorted by start."""
    spans: list[EntitySpan] = []
    start = None
    cls: str | None = None
    for i, tok in enumerate(sentence):
        prefix, tok_cls = split_label(tok.label)
        if prefix != "I" and start is not None:
            head = sentence.tokens[start]
            spans.append(
                EntitySpan(sentence.sentence_id, start, i, cls, head.source, head.confidence)
            )
            start, cls = None, None
        if prefix == "B":
            start, cls = i, tok_cls
    if start is not None:
        head = sentence.tokens[start]
        spans.append(
            EntitySpan(sentence.sentence_id, start, len(sentence), cls, head.source, head.confidence)
        )
    return spans


def bio_from_spans(spans: Sequence[EntitySpan], length: int) -> list[str]:
    """Inverse of spans_from_bio: lay spans onto an all-O label list."""
    labels = [OUTSIDE] * length
    for span in spans:
        if span.end > length:
            raise ValueError(f"span {span} exceeds sentence length {length}")
        for i in range(span.start, span.end):
            if labels[i] != OUTSIDE:
                raise ValueError(f"overlapping span at token {i}")
            labels[i] = ("B-" if i == span.start else "I-") + span.label
    return labels


# -- rewrite helpers ---------------------------------------------------------


def _with_label(tok: Token, label: str, source: LabelSource, confidence: float | None) -> Token:
    if source not in CONFIDENT_SOURCES:
        confidence = None
    return dataclasses.replace(tok, label=label, source=source, confidence=confidence)


def apply_span(sentence: Sentence, span: EntitySpan) -> Sentence:
    """Return a copy with the span's tokens labeled B-/I-<class>.

    Tokens outside the span keep their labels; a leftover I-X immediately
    after the span is turned into B-X to keep the sentence valid.
    """
    tokens = list(sentence.tokens)
    for i in range(span.start, span.end):
        label = ("B-" if i == span.start else "I-") + span.label
        tokens[i] = _with_label(tokens[i], label, span.source, span.confidence)
    j = span.end
    if j < len(tokens):
        prefix, cls = split_label(tokens[j].label)
        if prefix == "I" and cls != span.label:
            tokens[j] = dataclasses.replace(tokens[j], label="B-" + cls)
    return dataclasses.replace(sentence, tokens=tuple(tokens))


def clear_span(sentence: Sentence, start: int, end: int) -> Sentence:
    """Return a copy with tokens in [start, end) reset to O / default."""
    tokens = list(sentence.tokens)
    for i in range(start, end):
        tokens[i] = Token(tokens[i].text, tokens[i].pos)
    if end < len(tokens):
        prefix, cls = split_label(tokens[end].label)
        if prefix == "I":
            tokens[end] = dataclasses.replace(tokens[end], label="B-" + cls)
    return dataclasses.replace(sentence, tokens=tuple(tokens))


def strip_labels(sentence: Sentence) -> Sentence:
    """Return a copy with every token O / default source."""
    return dataclasses.replace(
        sentence, tokens=tuple(Token(t.text, t.pos) for t in sentence.tokens)
    )


def span_surface(sentence: Sentence, span: EntitySpan) -> tuple[str, ...]:
    return tuple(t.text for t in sentence.tokens[span.start : span.end])


def set_labels(
    sentence: Sentence,
    labels: Sequence[str],
    source: LabelSource,
    confidences: Sequence[float | None] | None = None,
) -> Sentence:
    """Replace the whole label sequence; O tokens get the default source."""
    if len(labels) != len(sentence):
        raise ValueError("label count does not match sentence length")
    tokens = []
    for i, (tok, label) in enumerate(zip(sentence.tokens, labels)):
        conf = confidences[i] if confidences is not None else None
        if label == OUTSIDE:
            tokens.append(Token(tok.text, tok.pos))
        else:
            tokens.append(_with_label(tok, label, source, conf))
    return dataclasses.replace(sentence, tokens=tuple(tokens))
