import pytest

from seedner.corpus import Document, LabelSource, Sentence, Token, bio_from_spans
from seedner.scoring import (
    WNUT_TO_CONLL,
    AlignmentError,
    align_length,
    map_labels,
    score_entities,
    supervision_degree,
)
from seedner.corpus import EntitySpan


def build_sentence(sid, length, spans, source=LabelSource.GOLD):
    labels = bio_from_spans(
        [EntitySpan(sid, s, e, cls) for (s, e, cls) in spans], length
    )
    toks = []
    for i, lab in enumerate(labels):
        src = source if lab != "O" else LabelSource.DEFAULT
        toks.append(Token(f"s{sid}t{i}", "NN", lab, src))
    return Sentence(tuple(toks), sid)


def build_docs(per_sentence_spans, length=6, chunk=20):
    docs = []
    sents = []
    for sid, spans in enumerate(per_sentence_spans):
        sents.append(build_sentence(sid, length, spans))
        if len(sents) == chunk:
            docs.append(Document(tuple(sents), f"doc{len(docs):04d}"))
            sents = []
    if sents:
        docs.append(Document(tuple(sents), f"doc{len(docs):04d}"))
    return docs


# 20 sentences, planted errors. Right-hand tallies are computed by hand:
#   gold:      PER 6  ORG 6  LOC 7  MISC 5   -> 24
#   predicted: PER 7  ORG 6  LOC 7  MISC 5   -> 25
#   correct:   PER 5  ORG 3  LOC 5  MISC 3   -> 16
FIXTURE = [
    # (gold spans, predicted spans)
    ([(0, 2, "PER")], [(0, 2, "PER")]),                              # exact
    ([(1, 3, "ORG")], [(1, 3, "ORG")]),                              # exact
    ([(4, 5, "LOC")], [(4, 5, "LOC")]),                              # exact
    ([(0, 1, "MISC")], [(0, 1, "MISC")]),                            # exact
    ([(0, 3, "PER")], [(0, 2, "PER")]),                              # boundary
    ([(2, 4, "ORG")], [(2, 5, "ORG")]),                              # boundary
    ([(1, 2, "LOC")], [(1, 2, "ORG")]),                              # class
    ([(3, 4, "MISC")], [(3, 4, "LOC")]),                             # class
    ([], [(2, 3, "PER")]),                                           # spurious
    ([(0, 2, "ORG")], []),                                           # missed
    ([(0, 1, "PER"), (3, 4, "LOC")], [(0, 1, "PER"), (3, 4, "LOC")]),
    ([(1, 2, "ORG"), (4, 5, "MISC")], [(1, 2, "ORG"), (4, 5, "MISC")]),
    ([(0, 2, "PER"), (4, 6, "LOC")], [(0, 2, "PER"), (4, 6, "ORG")]),  # class
    ([(0, 1, "LOC")], [(0, 1, "LOC"), (2, 3, "MISC")]),              # spurious
    ([(1, 3, "PER"), (4, 5, "ORG")], [(1, 3, "PER")]),               # missed
    ([(0, 2, "MISC")], [(0, 1, "MISC")]),                            # boundary
    ([(2, 3, "LOC")], [(2, 3, "LOC")]),                              # exact
    ([(0, 3, "ORG")], [(0, 3, "ORG")]),                              # exact
    ([(4, 5, "PER")], [(4, 5, "PER"), (0, 1, "LOC")]),               # spurious
    ([(1, 2, "LOC"), (3, 4, "MISC")], [(1, 2, "LOC"), (3, 4, "MISC")]),
]


def fixture_docs():
    gold = build_docs([g for g, _ in FIXTURE])
    pred = build_docs([p for _, p in FIXTURE])
    return pred, gold


class TestScoreEntities:
    def test_hand_computed_fixture(self):
        pred, gold = fixture_docs()
        report = score_entities(pred, gold)
        o = report.overall
        assert (o.gold, o.predicted, o.correct) == (24, 25, 16)
        # 16/25 and 16/24, F1 = 2PR/(P+R): worked out by hand.
        assert round(o.precision, 2) == 64.00
        assert round(o.recall, 2) == 66.67
        assert round(o.f1, 2) == 65.31
        expected = {
            "PER": (71.43, 83.33, 76.92, 6, 7, 5),
            "ORG": (50.00, 50.00, 50.00, 6, 6, 3),
            "LOC": (71.43, 71.43, 71.43, 7, 7, 5),
            "MISC": (60.00, 60.00, 60.00, 5, 5, 3),
        }
        assert set(report.per_class) == set(expected)
        for cls, (p, r, f, ng, np_, nc) in expected.items():
            c = report.per_class[cls]
            assert round(c.precision, 2) == p, cls
            assert round(c.recall, 2) == r, cls
            assert round(c.f1, 2) == f, cls
            assert (c.gold, c.predicted, c.correct) == (ng, np_, nc), cls

    def test_gold_vs_gold_is_perfect(self):
        _, gold = fixture_docs()
        report = score_entities(gold, gold)
        assert report.overall.precision == 100.0
        assert report.overall.recall == 100.0
        assert report.overall.f1 == 100.0

    def test_class_error_counts_both_ways(self):
        gold = build_docs([[(0, 1, "LOC")]])
        pred = build_docs([[(0, 1, "ORG")]])
        report = score_entities(pred, gold)
        assert report.per_class["LOC"].gold == 1
        assert report.per_class["LOC"].correct == 0
        assert report.per_class["ORG"].predicted == 1
        assert report.per_class["ORG"].correct == 0
        assert report.overall.f1 == 0.0

    def test_document_grouping_invariance(self):
        pred, gold = fixture_docs()
        report_flat = score_entities(pred, gold)
        pred5 = build_docs([p for _, p in FIXTURE], chunk=5)
        gold5 = build_docs([g for g, _ in FIXTURE], chunk=5)
        assert score_entities(pred5, gold5) == report_flat

    def test_sentence_count_mismatch(self):
        pred, gold = fixture_docs()
        with pytest.raises(AlignmentError):
            score_entities(pred[:0], gold)

    def test_token_text_mismatch_names_position(self):
        gold = build_docs([[(0, 1, "LOC")]])
        bad = Sentence((Token("other", "NN", "B-LOC", LabelSource.GOLD),
                        *gold[0].sentences[0].tokens[1:]), 0)
        pred = [Document((bad,), "doc0000")]
        with pytest.raises(AlignmentError) as err:
            score_entities(pred, gold)
        assert "sentence 0, token 0" in str(err.value)

    def test_empty_prediction_zero_scores(self):
        gold = build_docs([[(0, 1, "LOC")]])
        pred = build_docs([[]])
        report = score_entities(pred, gold)
        assert report.overall.precision == 0.0
        assert report.overall.recall == 0.0
        assert report.overall.f1 == 0.0

    def test_report_formatting(self):
        pred, gold = fixture_docs()
        report = score_entities(pred, gold)
        table = report.format()
        assert "OVERALL" in table and "65.31" in table
        records = report.to_records()
        assert records[-1]["class"] == "OVERALL"
        assert records[-1]["f1"] == 65.3061


class TestSupervisionDegree:
    def test_fraction_of_gold_entities(self):
        gold = build_docs([[(0, 2, "PER")], [(3, 4, "LOC")], [(1, 2, "ORG")],
                           [(0, 1, "MISC")], [(2, 3, "PER")]])
        weak = [build_sentence(0, 6, [(0, 2, "PER")], source=LabelSource.LEXICON)]
        pct, tokens = supervision_degree(weak, gold)
        assert pct == pytest.approx(100.0 / 5)
        assert tokens == 2

    def test_empty_weak_set(self):
        gold = build_docs([[(0, 1, "LOC")]])
        assert supervision_degree([], gold) == (0.0, 0)


class TestMapLabels:
    def test_wnut_mapping(self):
        docs = build_docs([[(0, 1, "group")], [(2, 3, "creative-work")],
                           [(1, 2, "person")]])
        mapped = map_labels(docs, WNUT_TO_CONLL)
        sents = [s for d in mapped for s in d.sentences]
        assert sents[0].labels()[0] == "B-ORG"
        assert sents[1].labels()[2] == "B-MISC"
        assert sents[2].labels()[1] == "B-PER"

    def test_identity_mapping(self):
        docs = build_docs([[(0, 2, "PER")], [(1, 3, "ORG")]])
        mapping = {"PER": "PER", "ORG": "ORG"}
        assert map_labels(docs, mapping) == list(docs)

    def test_mapping_to_outside_drops_span(self):
        docs = build_docs([[(0, 1, "product")]])
        mapped = map_labels(docs, {"product": "O"})
        assert mapped[0].sentences[0].labels() == ("O",) * 6

    def test_unmapped_label_rejected(self):
        docs = build_docs([[(0, 1, "corporation")]])
        with pytest.raises(KeyError):
            map_labels(docs, {"person": "PER"})


class TestAlignLength:
    def test_pad(self):
        assert align_length(["B-PER", "I-PER", "O"], 5) == ["B-PER", "I-PER", "O", "O", "O"]

    def test_truncate(self):
        assert align_length(["B-PER", "I-PER", "O", "B-LOC", "O"], 3) == ["B-PER", "I-PER", "O"]

    def test_identity(self):
        tags = ["O", "B-ORG"]
        assert align_length(tags, 2) == tags

    def test_always_length_n(self):
        for n in range(6):
            assert len(align_length(["O", "B-LOC"], n)) == n
