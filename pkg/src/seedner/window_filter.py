"""Dynamic window filtering: carve sparsely labeled sentences into training
segments that exclude suspected unlabeled entities.

An O-labeled proper noun is treated as a wall: it is probably an entity the
weak annotation missed, and training on it as O would teach the tagger to
ignore real entities. Windows grow outward from each labeled entity and
stop at walls or sentence edges; overlapping windows merge, so the result
is the set of maximal wall-free intervals that contain at least one
labeled token.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Sentence, Token

DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class TrainingSegment:
    sentence_id: int
    start: int
    end: int
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad segment bounds [{self.start}, {self.end})")
        if len(self.tokens) != self.end - self.start:
            raise ValueError("token count does not match segment bounds")


def _is_wall(token: Token, proper_tags: frozenset[str]) -> bool:
    return token.label == "O" and token.pos in proper_tags


def filter_sentence(
    sentence: Sentence,
    window: int = DEFAULT_WINDOW,
    *,
    treat_nnps_as_wall: bool = True,
    admit_unlabeled: bool = False,
) -> list[TrainingSegment]:
    """Split a labeled sentence into wall-free training segments.

    ``window`` is the initial half-width the window starts from; growth
    continues token-by-token past it until a wall or the sentence edge, so
    the emitted segments do not depend on its value (it is kept as an
    explicit knob for interface stability). Values < 1 are rejected.

    Segments with no labeled token are dropped unless ``admit_unlabeled``
    is set (an all-O sentence then comes back whole, minus walls).
    ``treat_nnps_as_wall`` extends the wall test from NNP to NNPS.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    proper = frozenset({"NNP", "NNPS"}) if treat_nnps_as_wall else frozenset({"NNP"})

    segments: list[TrainingSegment] = []
    start = None
    for i, tok in enumerate(sentence.tokens):
        if _is_wall(tok, proper):
            if start is not None:
                segments.append(_segment(sentence, start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        segments.append(_segment(sentence, start, len(sentence)))

    if admit_unlabeled:
        return segments
    return [s for s in segments if any(t.label != "O" for t in s.tokens)]


def _segment(sentence: Sentence, start: int, end: int) -> TrainingSegment:
    tokens = sentence.tokens[start:end]
    # A segment sliced out of a span tail would start with I-X; rebrand it
    # so segments stay BIO-valid on their own. Walls are O-labeled, so this
    # only fires when callers slice across a span boundary manually.
    if tokens and tokens[0].label.startswith("I-"):
        import dataclasses

        tokens = (dataclasses.replace(tokens[0], label="B-" + tokens[0].label[2:]),) + tokens[1:]
    return TrainingSegment(sentence.sentence_id, start, end, tokens)
