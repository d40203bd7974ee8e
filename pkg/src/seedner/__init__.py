"""Weakly supervised NER: a tiny per-class lexicon plus unlabeled text in,
a trained sequence tagger out.

The pieces compose left to right: `corpus` holds the data model,
`lexicon` projects exemplars onto text, `span_detector` proposes
candidate mentions from POS patterns, `mlm` classifies them with a cloze
scorer, `window_filter` carves safe training segments, `rules` is the
deterministic correction sieve, `tagger` trains and decodes, and
`selftrain` drives the staged loop. `wire` and `backend` carry the
external-process protocol; `cli` is the command line.
"""

from .backend import HashStubMlm, MlmBackend, SurfaceMapStubMlm, make_mlm_backend, serve_mlm
from .corpus import (
    CONLL_2003,
    ColumnConfig,
    CorpusFormatError,
    Document,
    EntitySpan,
    LabelSource,
    Sentence,
    Token,
    read_corpus,
    spans_from_bio,
    write_corpus,
)
from .lexicon import (
    Lexicon,
    LexiconEntry,
    annotate_with_lexicon,
    harvest_candidates,
    load_lexicon,
    parse_lexicon,
    validate_unambiguous,
)
from .mlm import DEFAULT_THRESHOLDS, ThresholdTable, annotate_sentence_mlm, classify_span, score_span
from .rules import RuleConfig, RuleTrace, apply_sieve
from .scoring import ScoreReport, map_labels, score_entities, supervision_degree
from .selftrain import (
    IterationMetrics,
    PipelineConfig,
    PipelineError,
    PipelineResult,
    StageSchedule,
    run_pipeline,
    tag_documents,
)
from .span_detector import SpanPattern, detect_spans
from .tagger import (
    NativeTagger,
    TaggerBackend,
    TaggerHyperparams,
    TaggerModel,
    make_tagger_backend,
    serve_tagger,
)
from .window_filter import filter_sentence

__version__ = "0.1.0"

__all__ = [
    "CONLL_2003",
    "ColumnConfig",
    "CorpusFormatError",
    "DEFAULT_THRESHOLDS",
    "Document",
    "EntitySpan",
    "HashStubMlm",
    "IterationMetrics",
    "LabelSource",
    "Lexicon",
    "LexiconEntry",
    "MlmBackend",
    "NativeTagger",
    "PipelineConfig",
    "PipelineError",
    "PipelineResult",
    "RuleConfig",
    "RuleTrace",
    "ScoreReport",
    "Sentence",
    "SpanPattern",
    "StageSchedule",
    "SurfaceMapStubMlm",
    "TaggerBackend",
    "TaggerHyperparams",
    "TaggerModel",
    "ThresholdTable",
    "Token",
    "annotate_sentence_mlm",
    "annotate_with_lexicon",
    "apply_sieve",
    "classify_span",
    "detect_spans",
    "filter_sentence",
    "harvest_candidates",
    "load_lexicon",
    "make_mlm_backend",
    "make_tagger_backend",
    "map_labels",
    "parse_lexicon",
    "read_corpus",
    "run_pipeline",
    "score_entities",
    "score_span",
    "serve_mlm",
    "serve_tagger",
    "spans_from_bio",
    "supervision_degree",
    "tag_documents",
    "validate_unambiguous",
    "write_corpus",
]
