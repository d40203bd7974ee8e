"""Entity-level scoring (exact-match chunk semantics), supervision
accounting, label-set mapping, and length alignment for externally
produced tag sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus import (
    Document,
    LabelSource,
    OUTSIDE,
    Sentence,
    bio_from_spans,
    spans_from_bio,
)


@dataclass(frozen=True)
class ClassCounts:
    gold: int
    predicted: int
    correct: int

    @property
    def precision(self) -> float:
        return 100.0 * self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class ScoreReport:
    overall: ClassCounts
    per_class: dict[str, ClassCounts] = field(default_factory=dict)

    def format(self) -> str:
        rows = [("class", "prec", "rec", "f1", "gold", "pred", "corr")]
        items = sorted(self.per_class.items()) + [("OVERALL", self.overall)]
        for name, c in items:
            rows.append(
                (name, f"{c.precision:.2f}", f"{c.recall:.2f}", f"{c.f1:.2f}",
                 str(c.gold), str(c.predicted), str(c.correct))
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join(
            "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows
        )

    def to_records(self) -> list[dict]:
        out = []
        for name, c in sorted(self.per_class.items()) + [("OVERALL", self.overall)]:
            out.append({
                "class": name,
                "precision": round(c.precision, 4),
                "recall": round(c.recall, 4),
                "f1": round(c.f1, 4),
                "gold": c.gold,
                "predicted": c.predicted,
                "correct": c.correct,
            })
        return out


class AlignmentError(ValueError):
    """Pred/gold corpora disagree in shape; names the first divergence."""


def _sentence_pairs(pred_docs: Sequence[Document], gold_docs: Sequence[Document]):
    pred_sents = [s for d in pred_docs for s in d.sentences]
    gold_sents = [s for d in gold_docs for s in d.sentences]
    if len(pred_sents) != len(gold_sents):
        raise AlignmentError(
            f"sentence count mismatch: predicted {len(pred_sents)}, gold {len(gold_sents)}"
        )
    for k, (p, g) in enumerate(zip(pred_sents, gold_sents)):
        if len(p) != len(g):
            raise AlignmentError(
                f"sentence {k}: token count mismatch (predicted {len(p)}, gold {len(g)})"
            )
        for i, (pt, gt) in enumerate(zip(p.tokens, g.tokens)):
            if pt.text != gt.text:
                raise AlignmentError(
                    f"sentence {k}, token {i}: text mismatch ({pt.text!r} vs {gt.text!r})"
                )
        yield p, g


def score_entities(
    pred_docs: Sequence[Document], gold_docs: Sequence[Document]
) -> ScoreReport:
    """Exact-match entity scoring: a predicted span counts as correct iff
    class, start, and end all equal a gold span. Micro-averaged overall."""
    gold_n: dict[str, int] = {}
    pred_n: dict[str, int] = {}
    corr_n: dict[str, int] = {}
    for p, g in _sentence_pairs(pred_docs, gold_docs):
        gold_spans = {(s.start, s.end, s.label) for s in spans_from_bio(g)}
        pred_spans = {(s.start, s.end, s.label) for s in spans_from_bio(p)}
        for _, _, cls in gold_spans:
            gold_n[cls] = gold_n.get(cls, 0) + 1
        for _, _, cls in pred_spans:
            pred_n[cls] = pred_n.get(cls, 0) + 1
        for key in pred_spans & gold_spans:
            corr_n[key[2]] = corr_n.get(key[2], 0) + 1
    per_class = {
        cls: ClassCounts(gold_n.get(cls, 0), pred_n.get(cls, 0), corr_n.get(cls, 0))
        for cls in sorted(set(gold_n) | set(pred_n))
    }
    overall = ClassCounts(
        sum(gold_n.values()), sum(pred_n.values()), sum(corr_n.values())
    )
    return ScoreReport(overall, per_class)


def supervision_degree(
    labeled: Sequence[Sentence], gold_docs: Sequence[Document]
) -> tuple[float, int]:
    """How much of the gold signal the weak annotation actually covers:
    (weak entities / gold entities x 100, weakly labeled token count)."""
    weak_entities = sum(len(spans_from_bio(s)) for s in labeled)
    weak_tokens = sum(1 for s in labeled for t in s.tokens if t.label != OUTSIDE)
    gold_entities = sum(
        len(spans_from_bio(s)) for d in gold_docs for s in d.sentences
    )
    pct = 100.0 * weak_entities / gold_entities if gold_entities else 0.0
    return pct, weak_tokens


WNUT_TO_CONLL = {
    "person": "PER",
    "location": "LOC",
    "corporation": "ORG",
    "group": "ORG",
    "product": "MISC",
    "creative-work": "MISC",
}


def map_labels(docs: Sequence[Document], mapping: dict[str, str]) -> list[Document]:
    """Relabel every span through the mapping; a target of O drops the
    span. Unmapped classes are an error (the mapping must be total)."""
    import dataclasses

    out = []
    for doc in docs:
        new_sents = []
        for s in doc.sentences:
            spans = []
            for span in spans_from_bio(s):
                if span.label not in mapping:
                    raise KeyError(
                        f"no mapping for class {span.label!r} (sentence {s.sentence_id})"
                    )
                target = mapping[span.label]
                if target == OUTSIDE:
                    continue
                spans.append(dataclasses.replace(span, label=target))
            labels = bio_from_spans(spans, len(s))
            confs = [None] * len(s)
            for span in spans:
                for i in range(span.start, span.end):
                    confs[i] = span.confidence
            new_sents.append(_relabel(s, labels, confs))
        out.append(dataclasses.replace(doc, sentences=tuple(new_sents)))
    return out


def _relabel(sentence: Sentence, labels, confs) -> Sentence:
    import dataclasses

    tokens = []
    for tok, label, conf in zip(sentence.tokens, labels, confs):
        if label == OUTSIDE:
            tokens.append(dataclasses.replace(tok, label=OUTSIDE,
                                              source=LabelSource.DEFAULT, confidence=None))
        else:
            keep_conf = conf if tok.source in (LabelSource.MLM, LabelSource.TAGGER) else None
            tokens.append(dataclasses.replace(tok, label=label, confidence=keep_conf))
    return dataclasses.replace(sentence, tokens=tuple(tokens))


def align_length(tags: Sequence[str], n: int) -> list[str]:
    """Pad with O on the right, or truncate on the right, to length n."""
    if n < 0:
        raise ValueError("target length must be >= 0")
    tags = list(tags[:n])
    tags.extend([OUTSIDE] * (n - len(tags)))
    return tags
