"""Synthetic four-class world with disjoint per-class vocabularies.

Entity surfaces are the only class signal: every class shares the same
context templates, so a tagger can reach high held-out F1 only by learning
surface identities it was never seed-labeled with. The stub MLM backend is
built from the generator's truth map and therefore plays the role of an
oracle teacher for self-training experiments.

Construction rules that keep the task well-posed:
- a non-IN filler always follows an entity, so entities are never adjacent
  (adjacent same-class entities make segmentation ambiguous) and the
  IN-bridge of the span detector can never fuse two entities;
- context words are never capitalized, so detected proper-noun spans are
  exactly the planted entities.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from seedner.backend import SurfaceMapStubMlm
from seedner.corpus import Document, LabelSource, Sentence, Token
from seedner.lexicon import Lexicon, LexiconEntry

CLASSES = ("LOC", "MISC", "ORG", "PER")

# Word material is morphologically neutral: a pool of synthetic proper
# nouns is shuffled once and dealt to the classes, so no affix or shape
# feature correlates with class and word identity is the only class signal.
_ONSETS = ["B", "D", "F", "G", "K", "L", "M", "N", "P", "R", "S", "T", "V", "Z"]
_RIMES = ["ando", "elor", "imbra", "osta", "umel", "arpa", "edin", "olvi", "unta", "ebro"]
_ONE_WORD_PER_CLASS = 17
_TWO_WORD_PER_CLASS = 7
_FILLERS = [
    ("said", "VBD"), ("visited", "VBD"), ("beat", "VBD"), ("joined", "VBD"),
    ("signed", "VBD"), ("the", "DT"), ("a", "DT"), ("deal", "NN"),
    ("team", "NN"), ("office", "NN"), ("report", "NN"), ("match", "NN"),
    ("yesterday", "RB"), ("again", "RB"), ("quickly", "RB"),
]
_IN_FILLERS = [("in", "IN"), ("near", "IN"), ("with", "IN"), ("against", "IN")]
LEXICON_ONE_WORD = 7
LEXICON_TWO_WORD = 3


@dataclass(frozen=True)
class SynthWorld:
    classes: tuple[str, ...]
    vocab: dict[str, tuple[tuple[str, ...], ...]]
    lexicon: Lexicon
    truth: dict[str, str]


def build_world() -> SynthWorld:
    pool = [onset + rime for onset in _ONSETS for rime in _RIMES]
    random.Random(2024).shuffle(pool)
    per_class = _ONE_WORD_PER_CLASS + 2 * _TWO_WORD_PER_CLASS
    vocab: dict[str, tuple[tuple[str, ...], ...]] = {}
    lexicon_entries: dict[str, tuple[LexiconEntry, ...]] = {}
    truth: dict[str, str] = {}
    for index, cls in enumerate(CLASSES):
        words = pool[index * per_class : (index + 1) * per_class]
        one_word = [(w,) for w in words[:_ONE_WORD_PER_CLASS]]
        heads = words[_ONE_WORD_PER_CLASS : _ONE_WORD_PER_CLASS + _TWO_WORD_PER_CLASS]
        tails = words[_ONE_WORD_PER_CLASS + _TWO_WORD_PER_CLASS :]
        two_word = list(zip(heads, tails))
        surfaces = tuple(one_word + two_word)
        vocab[cls] = surfaces
        for surface in surfaces:
            truth[" ".join(surface)] = cls
        seed_surfaces = one_word[:LEXICON_ONE_WORD] + two_word[:LEXICON_TWO_WORD]
        lexicon_entries[cls] = tuple(
            # descending fake frequencies keep harvest-style ordering stable
            LexiconEntry(surface, frequency=100 - k)
            for k, surface in enumerate(seed_surfaces)
        )
    return SynthWorld(CLASSES, vocab, Lexicon(lexicon_entries), truth)


def _pick_surface(world: SynthWorld, cls: str, rng: random.Random) -> tuple[str, ...]:
    return rng.choice(world.vocab[cls])


def _sentence_rows(world: SynthWorld, rng: random.Random) -> list[tuple[str, str, str]]:
    rows: list[tuple[str, str, str]] = []
    for _ in range(rng.randint(1, 3)):
        cls = rng.choice(world.classes)
        surface = _pick_surface(world, cls, rng)
        for k, word in enumerate(surface):
            rows.append((word, "NNP", ("B-" if k == 0 else "I-") + cls))
        word, pos = rng.choice(_FILLERS)
        rows.append((word, pos, "O"))
        for _ in range(rng.randint(0, 3)):
            word, pos = rng.choice(_FILLERS + _IN_FILLERS)
            rows.append((word, pos, "O"))
    rows.append((".", ".", "O"))
    return rows


def generate_docs(
    world: SynthWorld,
    n_sentences: int,
    seed: int,
    *,
    sentences_per_doc: int = 10,
    start_sid: int = 0,
) -> list[Document]:
    """Gold-labeled documents; pipelines strip the labels themselves."""
    rng = random.Random(seed)
    docs: list[Document] = []
    sentences: list[Sentence] = []
    sid = start_sid
    for _ in range(n_sentences):
        tokens = tuple(
            Token(
                text, pos, label,
                LabelSource.GOLD if label != "O" else LabelSource.DEFAULT,
            )
            for text, pos, label in _sentence_rows(world, rng)
        )
        sentences.append(Sentence(tokens, sid))
        sid += 1
        if len(sentences) == sentences_per_doc:
            docs.append(Document(tuple(sentences), f"doc{len(docs):04d}"))
            sentences = []
    if sentences:
        docs.append(Document(tuple(sentences), f"doc{len(docs):04d}"))
    return docs


def make_backend(world: SynthWorld, *, jitter: float = 0.02, seed: int = 0) -> SurfaceMapStubMlm:
    return SurfaceMapStubMlm(
        surface_classes=dict(world.truth), hi=0.8, lo=0.2, jitter=jitter, seed=seed
    )


def mlm_spec_payload(world: SynthWorld, *, jitter: float = 0.02, seed: int = 0) -> dict:
    """JSON body for a `stub:map:<file>` MLM endpoint."""
    return {
        "surfaces": dict(world.truth),
        "hi": 0.8,
        "lo": 0.2,
        "jitter": jitter,
        "seed": seed,
    }
