"""Candidate entity span detection over POS tags.

The pattern is `(P)+ (IN (P)+)?` with P a proper-noun tag: one or more
proper nouns, optionally extended through a single preposition into a
second proper-noun run. Matching is leftmost-longest maximal munch; at
most one preposition bridge per span.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class SpanPattern:
    proper_tags: frozenset[str] = frozenset({"NNP", "NNPS"})
    preposition_tag: str = "IN"

    def __post_init__(self):
        if not self.proper_tags:
            raise ValueError("proper_tags must be non-empty")
        if self.preposition_tag in self.proper_tags:
            raise ValueError("preposition tag must not be a proper-noun tag")


DEFAULT_PATTERN = SpanPattern()


def detect_spans(
    pos_sequence: Sequence[str], pattern: SpanPattern = DEFAULT_PATTERN
) -> list[tuple[int, int]]:
    """Return non-overlapping (start, end) matches, scanned left to right.

    From each proper-noun position the match takes the full proper-noun
    run, then greedily crosses one preposition if another proper-noun run
    follows. The scan resumes after the match, so output is sorted and
    disjoint by construction.
    """
    proper = pattern.proper_tags
    spans: list[tuple[int, int]] = []
    n = len(pos_sequence)
    i = 0
    while i < n:
        if pos_sequence[i] not in proper:
            i += 1
            continue
        j = i + 1
        while j < n and pos_sequence[j] in proper:
            j += 1
        # Optional tail: exactly one preposition, then >=1 proper noun.
        if j + 1 < n and pos_sequence[j] == pattern.preposition_tag and pos_sequence[j + 1] in proper:
            j += 2
            while j < n and pos_sequence[j] in proper:
                j += 1
        spans.append((i, j))
        i = j
    return spans
