"""Trainable sequence tagger: the pluggable contract, a native averaged
structured perceptron, and wire adapters for external plugins.

The native model keeps the pipeline free of ML runtimes. Features are the
classic templates (word identities in a +/-2 window, word shapes, POS tags,
prefixes and suffixes up to length 3, previous label); decoding is Viterbi
under the BIO validity mask; span confidence is a logistic transform of the
smallest max-marginal margin inside the span. Encoder-based taggers attach
over the wire protocol instead and advertise calibrated confidences in the
handshake.

The native trainer ignores ``learning_rate`` and ``batch_size`` (perceptron
updates are unit-sized and online) as well as ``gce_q``/``label_smoothing``
(parameters of the plugin's noise-robust loss); it honors ``epochs`` and
``seed``.
"""

from __future__ import annotations

import base64
import gzip
import hashlib
import io
import json
import math
import random
from dataclasses import dataclass
from typing import Protocol, Sequence

from . import wire
from .corpus import EntitySpan, LabelSource, Sentence, Token, split_label
from .wire import Session, WireClient, WireServer
from .window_filter import TrainingSegment

NATIVE_SIGNATURE = "native-perceptron/1"
_START = "<s>"
_PAD = "<pad>"
_CONFIDENCE_SCALE = 8.0


@dataclass(frozen=True)
class TaggerHyperparams:
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 5
    gce_q: float = 0.7
    label_smoothing: float = 0.1
    seed: int = 13

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.gce_q <= 1:
            raise ValueError("gce_q must be in (0, 1]")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")


@dataclass(frozen=True)
class TaggerPrediction:
    """BIO labels plus one confidence-bearing span per entity segment."""

    labels: tuple[str, ...]
    spans: tuple[EntitySpan, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "spans", tuple(self.spans))
        segments = _bio_segments(self.labels)
        found = [(sp.start, sp.end, sp.label) for sp in self.spans]
        if found != segments:
            raise ValueError(f"spans {found} do not match label segmentation {segments}")
        for sp in self.spans:
            if sp.confidence is None:
                raise ValueError(f"span {sp} lacks a confidence")


@dataclass(frozen=True)
class TaggerModel:
    """Opaque trained model: a serialized blob for local models, a backend
    handle for wire-served ones, sometimes both."""

    classes: tuple[str, ...]
    signature: str
    blob: bytes = b""
    model_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.blob and self.model_id is None:
            raise ValueError("model carries neither a blob nor a model_id")


@dataclass(frozen=True)
class TaggerCapabilities:
    version: int
    calibrated: bool
    name: str = ""
    classes: tuple[str, ...] | None = None


class TaggerBackend(Protocol):
    def capabilities(self) -> TaggerCapabilities: ...

    def train(
        self,
        segments: Sequence[TrainingSegment],
        hp: TaggerHyperparams = TaggerHyperparams(),
        classes: Sequence[str] | None = None,
    ) -> TaggerModel: ...

    def predictor(self, model: TaggerModel): ...


def _bio_segments(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """(start, end, class) segments; rejects dangling I- labels."""
    segments = []
    open_cls, open_at = None, 0
    for i, label in enumerate(labels):
        prefix, cls = split_label(label)
        if prefix == "I":
            if open_cls != cls:
                raise ValueError(f"dangling {label} at position {i}")
            continue
        if open_cls is not None:
            segments.append((open_at, i, open_cls))
        open_cls, open_at = (cls, i) if prefix == "B" else (None, i)
    if open_cls is not None:
        segments.append((open_at, len(labels), open_cls))
    return segments


def ensure_classes(model: TaggerModel, classes: Sequence[str]) -> None:
    if tuple(sorted(classes)) != tuple(sorted(model.classes)):
        raise ValueError(
            f"model classes {sorted(model.classes)} != pipeline classes {sorted(classes)}"
        )


# --- native feature templates ------------------------------------------------


def word_shape(word: str) -> str:
    out = []
    for ch in word:
        if ch.isupper():
            cls = "X"
        elif ch.islower():
            cls = "x"
        elif ch.isdigit():
            cls = "d"
        else:
            cls = ch
        if not out or out[-1] != cls:
            out.append(cls)
    return "".join(out)


def _static_features(texts: Sequence[str], tags: Sequence[str], i: int) -> list[str]:
    n = len(texts)

    def at(seq, j):
        return seq[j] if 0 <= j < n else _PAD

    w = texts[i]
    feats = [
        "b",
        "w0=" + w,
        "w-1=" + at(texts, i - 1),
        "w-2=" + at(texts, i - 2),
        "w+1=" + at(texts, i + 1),
        "w+2=" + at(texts, i + 2),
        "sh0=" + word_shape(w),
        "sh-1=" + (word_shape(at(texts, i - 1)) if i > 0 else _PAD),
        "sh+1=" + (word_shape(at(texts, i + 1)) if i + 1 < n else _PAD),
        "p0=" + tags[i],
        "p-1=" + at(tags, i - 1),
        "p+1=" + at(tags, i + 1),
    ]
    for k in (1, 2, 3):
        if len(w) >= k:
            feats.append(f"pre{k}=" + w[:k])
            feats.append(f"suf{k}=" + w[-k:])
    return feats


def _tagset(classes: Sequence[str]) -> list[str]:
    labels = ["O"]
    for cls in sorted(classes):
        labels.append("B-" + cls)
        labels.append("I-" + cls)
    return labels


def _allowed_prevs(labels: list[str]) -> list[list[int]]:
    """For each label index, the label indices legally preceding it."""
    index = {lab: i for i, lab in enumerate(labels)}
    out = []
    for lab in labels:
        prefix, cls = split_label(lab)
        if prefix == "I":
            out.append([index["B-" + cls], index["I-" + cls]])
        else:
            out.append(list(range(len(labels))))
    return out


class _AveragedWeights:
    """Perceptron weights with lazily-maintained running totals so the
    final averaging pass is O(nonzero entries)."""

    def __init__(self, n_labels: int):
        self.n = n_labels
        self.w: dict[str, list[float]] = {}
        self._totals: dict[str, list[float]] = {}
        self._stamps: dict[str, list[int]] = {}
        self.steps = 0

    def update(self, feat: str, label: int, delta: float) -> None:
        row = self.w.get(feat)
        if row is None:
            row = self.w[feat] = [0.0] * self.n
            self._totals[feat] = [0.0] * self.n
            self._stamps[feat] = [0] * self.n
        totals, stamps = self._totals[feat], self._stamps[feat]
        totals[label] += (self.steps - stamps[label]) * row[label]
        stamps[label] = self.steps
        row[label] += delta

    def averaged(self) -> dict[str, list[float]]:
        denom = max(self.steps, 1)
        out = {}
        for feat, row in self.w.items():
            totals, stamps = self._totals[feat], self._stamps[feat]
            avg = [
                (totals[y] + (self.steps - stamps[y]) * row[y]) / denom
                for y in range(self.n)
            ]
            if any(avg):
                out[feat] = avg
        return out


def _emissions(
    feats: list[list[str]], weights: dict[str, list[float]], n_labels: int
) -> list[list[float]]:
    scores = []
    for position_feats in feats:
        row = [0.0] * n_labels
        for feat in position_feats:
            wrow = weights.get(feat)
            if wrow is not None:
                for y in range(n_labels):
                    row[y] += wrow[y]
        scores.append(row)
    return scores


def _transition(weights: dict[str, list[float]], prev_label: str, y: int) -> float:
    row = weights.get("prev=" + prev_label)
    return row[y] if row is not None else 0.0


def _viterbi(
    emissions: list[list[float]],
    weights: dict[str, list[float]],
    labels: list[str],
    allowed_prevs: list[list[int]],
) -> list[int]:
    n, m = len(emissions), len(labels)
    neg_inf = float("-inf")
    dp = [emissions[0][y] + _transition(weights, _START, y) if not labels[y].startswith("I-")
          else neg_inf for y in range(m)]
    back: list[list[int]] = []
    for i in range(1, n):
        row = [neg_inf] * m
        ptr = [0] * m
        for y in range(m):
            best, best_prev = neg_inf, 0
            for p in allowed_prevs[y]:
                score = dp[p] + _transition(weights, labels[p], y)
                if score > best:
                    best, best_prev = score, p
            row[y] = best + emissions[i][y]
            ptr[y] = best_prev
        dp = row
        back.append(ptr)
    best_y = max(range(m), key=lambda y: (dp[y], -y))
    path = [best_y]
    for ptr in reversed(back):
        path.append(ptr[path[-1]])
    path.reverse()
    return path


def _max_marginal_gaps(
    emissions: list[list[float]],
    weights: dict[str, list[float]],
    labels: list[str],
    allowed_prevs: list[list[int]],
    path: list[int],
) -> list[float]:
    """For each position, how far the best path through any OTHER label at
    that position falls below the Viterbi score (+inf when no alternative
    is reachable)."""
    n, m = len(emissions), len(labels)
    neg_inf = float("-inf")
    fwd = [[neg_inf] * m for _ in range(n)]
    for y in range(m):
        if not labels[y].startswith("I-"):
            fwd[0][y] = emissions[0][y] + _transition(weights, _START, y)
    for i in range(1, n):
        for y in range(m):
            best = neg_inf
            for p in allowed_prevs[y]:
                score = fwd[i - 1][p] + _transition(weights, labels[p], y)
                if score > best:
                    best = score
            fwd[i][y] = best + emissions[i][y] if best > neg_inf else neg_inf
    allowed_nexts: list[list[int]] = [[] for _ in range(m)]
    for y in range(m):
        for p in allowed_prevs[y]:
            allowed_nexts[p].append(y)
    bwd = [[neg_inf] * m for _ in range(n)]
    bwd[n - 1] = [0.0] * m
    for i in range(n - 2, -1, -1):
        for y in range(m):
            best = neg_inf
            for nxt in allowed_nexts[y]:
                score = _transition(weights, labels[y], nxt) + emissions[i + 1][nxt] + bwd[i + 1][nxt]
                if score > best:
                    best = score
            bwd[i][y] = best
    total = max(fwd[n - 1])
    gaps = []
    for i in range(n):
        rival = neg_inf
        for y in range(m):
            if y == path[i]:
                continue
            through = fwd[i][y] + bwd[i][y]
            if through > rival:
                rival = through
        gaps.append(math.inf if rival == neg_inf else total - rival)
    return gaps


def train(
    segments: Sequence[TrainingSegment],
    hp: TaggerHyperparams = TaggerHyperparams(),
    classes: Sequence[str] | None = None,
) -> TaggerModel:
    """Averaged structured perceptron; deterministic for a fixed seed."""
    if not segments:
        raise ValueError("cannot train on an empty segment list")
    seen = sorted({
        tok.entity_class for seg in segments for tok in seg.tokens
        if tok.entity_class is not None
    })
    if classes is None:
        class_list = seen
    else:
        class_list = sorted(classes)
        extra = [c for c in seen if c not in class_list]
        if extra:
            raise ValueError(f"segment labels {extra} outside the configured class set")
    labels = _tagset(class_list)
    index = {lab: y for y, lab in enumerate(labels)}
    allowed = _allowed_prevs(labels)
    n_labels = len(labels)

    prepared = []
    for seg in segments:
        texts = [t.text for t in seg.tokens]
        tags = [t.pos for t in seg.tokens]
        feats = [_static_features(texts, tags, i) for i in range(len(texts))]
        gold = [index[t.label] for t in seg.tokens]
        prepared.append((feats, gold))

    weights = _AveragedWeights(n_labels)
    rng = random.Random(hp.seed)
    order = list(range(len(prepared)))
    for _ in range(hp.epochs):
        rng.shuffle(order)
        for k in order:
            feats, gold = prepared[k]
            emissions = _emissions(feats, weights.w, n_labels)
            pred = _viterbi(emissions, weights.w, labels, allowed)
            weights.steps += 1
            if pred == gold:
                continue
            for i, position_feats in enumerate(feats):
                g, p = gold[i], pred[i]
                if g != p:
                    for feat in position_feats:
                        weights.update(feat, g, 1.0)
                        weights.update(feat, p, -1.0)
                g_prev = labels[gold[i - 1]] if i else _START
                p_prev = labels[pred[i - 1]] if i else _START
                if g != p or g_prev != p_prev:
                    weights.update("prev=" + g_prev, g, 1.0)
                    weights.update("prev=" + p_prev, p, -1.0)

    payload = {
        "signature": NATIVE_SIGNATURE,
        "classes": class_list,
        "weights": weights.averaged(),
    }
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
        gz.write(raw)
    return TaggerModel(
        classes=tuple(class_list), signature=NATIVE_SIGNATURE, blob=buf.getvalue()
    )


class NativePredictor:
    """Decodes with a deserialized native model. Read-only, thread-safe."""

    def __init__(self, model: TaggerModel):
        if not model.blob:
            raise ValueError("model has no local blob; use its backend's predictor")
        payload = json.loads(gzip.decompress(model.blob).decode("utf-8"))
        if payload.get("signature") != NATIVE_SIGNATURE:
            raise ValueError(
                f"blob signature {payload.get('signature')!r} != {NATIVE_SIGNATURE!r}"
            )
        self.classes = tuple(payload["classes"])
        if self.classes != tuple(sorted(model.classes)):
            raise ValueError("model metadata classes do not match its blob")
        self._weights = payload["weights"]
        self._labels = _tagset(self.classes)
        self._allowed = _allowed_prevs(self._labels)

    def predict(self, sentence: Sentence) -> TaggerPrediction:
        texts, tags = list(sentence.texts()), [t.pos for t in sentence.tokens]
        feats = [_static_features(texts, tags, i) for i in range(len(texts))]
        emissions = _emissions(feats, self._weights, len(self._labels))
        path = _viterbi(emissions, self._weights, self._labels, self._allowed)
        label_seq = tuple(self._labels[y] for y in path)
        segments = _bio_segments(label_seq)
        if not segments:
            return TaggerPrediction(label_seq, ())
        gaps = _max_marginal_gaps(emissions, self._weights, self._labels, self._allowed, path)
        spans = []
        for start, end, cls in segments:
            margin = min(gaps[start:end])
            confidence = 1.0 if margin == math.inf else 1.0 / (
                1.0 + math.exp(-margin / _CONFIDENCE_SCALE)
            )
            spans.append(EntitySpan(
                sentence.sentence_id, start, end, cls,
                source=LabelSource.TAGGER, confidence=confidence,
            ))
        return TaggerPrediction(label_seq, tuple(spans))


class NativeTagger:
    """In-process TaggerBackend."""

    name = "native-perceptron"

    def capabilities(self) -> TaggerCapabilities:
        return TaggerCapabilities(wire.PROTOCOL_VERSION, calibrated=False, name=self.name)

    def train(self, segments, hp=TaggerHyperparams(), classes=None) -> TaggerModel:
        return train(segments, hp, classes)

    def predictor(self, model: TaggerModel) -> NativePredictor:
        return NativePredictor(model)


def predict(model: TaggerModel, sentence: Sentence) -> TaggerPrediction:
    """One-shot convenience; loops should reuse ``NativePredictor``."""
    return NativePredictor(model).predict(sentence)


# --- wire adapters ------------------------------------------------------------


def _hp_payload(hp: TaggerHyperparams) -> dict:
    return {
        "learning_rate": hp.learning_rate,
        "batch_size": hp.batch_size,
        "epochs": hp.epochs,
        "gce_q": hp.gce_q,
        "label_smoothing": hp.label_smoothing,
        "seed": hp.seed,
    }


class _WirePredictor:
    def __init__(self, client: WireClient, model: TaggerModel):
        if model.model_id is None:
            raise ValueError("wire predictor needs a model_id")
        self._client = client
        self._model = model

    def predict(self, sentence: Sentence) -> TaggerPrediction:
        response = self._client.rpc(
            "predict",
            {"model_id": self._model.model_id},
            stream=[{"tokens": [[t.text, t.pos] for t in sentence.tokens]}],
        )
        predictions = response.get("predictions")
        if not isinstance(predictions, list) or len(predictions) != 1:
            raise wire.ProtocolError("predict response predictions missing or mis-sized")
        return _decode_prediction(predictions[0], sentence)


def _decode_prediction(item: dict, sentence: Sentence) -> TaggerPrediction:
    labels = tuple(item.get("labels", ()))
    if len(labels) != len(sentence):
        raise wire.ProtocolError(
            f"prediction has {len(labels)} labels for {len(sentence)} tokens"
        )
    spans = tuple(
        EntitySpan(
            sentence.sentence_id, int(s), int(e), str(cls),
            source=LabelSource.TAGGER, confidence=float(conf),
        )
        for s, e, cls, conf in item.get("spans", ())
    )
    try:
        return TaggerPrediction(labels, spans)
    except ValueError as exc:
        raise wire.ProtocolError(f"backend returned an invalid prediction: {exc}") from exc


class WireTaggerBackend:
    """TaggerBackend speaking the wire protocol to a remote server."""

    def __init__(self, endpoint: str, timeout: float = 300.0):
        self._client = WireClient(endpoint, timeout=timeout)
        info = self._client.hello()
        if info.get("role") != "tagger":
            raise wire.ProtocolError(f"endpoint serves role {info.get('role')!r}, need 'tagger'")
        self._caps = TaggerCapabilities(
            version=int(info.get("version", 0)),
            calibrated=bool(info.get("calibrated")),
            name=str(info.get("name", "")),
        )

    def capabilities(self) -> TaggerCapabilities:
        return self._caps

    def train(self, segments, hp=TaggerHyperparams(), classes=None) -> TaggerModel:
        if not segments:
            raise ValueError("cannot train on an empty segment list")
        stream = [
            {"tokens": [[t.text, t.pos, t.label] for t in seg.tokens]} for seg in segments
        ]
        response = self._client.rpc(
            "train",
            {
                "hyperparams": _hp_payload(hp),
                "classes": sorted(classes) if classes is not None else None,
            },
            stream=stream,
        )
        model_id = response.get("model_id")
        if not model_id:
            raise wire.ProtocolError("train response lacks a model_id")
        return TaggerModel(
            classes=tuple(response.get("classes", ())),
            signature=str(response.get("signature", "")),
            blob=base64.b64decode(response.get("blob_b64", "") or ""),
            model_id=str(model_id),
        )

    def predictor(self, model: TaggerModel) -> _WirePredictor:
        return _WirePredictor(self._client, model)

    def close(self) -> None:
        self._client.close()


def plugin_handshake(endpoint: str, timeout: float = 60.0) -> TaggerCapabilities:
    """Connect, verify protocol version and role, report capabilities."""
    client = WireClient(endpoint, timeout=timeout)
    try:
        info = client.hello()
        if info.get("role") != "tagger":
            raise wire.ProtocolError(
                f"endpoint serves role {info.get('role')!r}, need 'tagger'"
            )
        classes = info.get("classes")
        return TaggerCapabilities(
            version=int(info.get("version", 0)),
            calibrated=bool(info.get("calibrated")),
            name=str(info.get("name", "")),
            classes=tuple(classes) if classes is not None else None,
        )
    finally:
        client.close()


class TaggerService:
    """Serve any in-process TaggerBackend over the wire (reference server)."""

    def __init__(self, backend: TaggerBackend | None = None):
        self.backend = backend if backend is not None else NativeTagger()
        self._models: dict[str, tuple[TaggerModel, object]] = {}

    def _read_stream(self, record: dict, session: Session) -> list[dict]:
        count = int(record.get("count", 0))
        out = []
        for _ in range(count):
            item = session.read_record()
            if item is None:
                raise wire.TransportError("stream cut short")
            out.append(item)
        return out

    def handle(self, record: dict, session: Session) -> dict:
        op = record.get("op")
        if op == "hello":
            caps = self.backend.capabilities()
            return wire.hello_payload("tagger", calibrated=caps.calibrated, name=caps.name)
        if op == "train":
            return self._handle_train(record, session)
        if op == "predict":
            return self._handle_predict(record, session)
        raise ValueError(f"unknown op {op!r}")

    def _handle_train(self, record: dict, session: Session) -> dict:
        lines = self._read_stream(record, session)
        hp_in = record.get("hyperparams") or {}
        hp = TaggerHyperparams(**{
            key: hp_in[key] for key in (
                "learning_rate", "batch_size", "epochs", "gce_q", "label_smoothing", "seed",
            ) if key in hp_in
        })
        segments = []
        for k, item in enumerate(lines):
            tokens = tuple(
                Token(
                    text, pos, label,
                    source=LabelSource.GOLD if label != "O" else LabelSource.DEFAULT,
                )
                for text, pos, label in item["tokens"]
            )
            sentence = Sentence(tokens, k)
            segments.append(TrainingSegment(k, 0, len(tokens), sentence.tokens))
        classes = record.get("classes")
        model = self.backend.train(segments, hp, classes)
        model_id = "m" + hashlib.sha256(
            model.blob or repr(sorted(model.classes)).encode("utf-8")
        ).hexdigest()[:16]
        self._models[model_id] = (model, self.backend.predictor(model))
        return {
            "model_id": model_id,
            "classes": list(model.classes),
            "signature": model.signature,
            "blob_b64": base64.b64encode(model.blob).decode("ascii"),
        }

    def _handle_predict(self, record: dict, session: Session) -> dict:
        lines = self._read_stream(record, session)
        model_id = record.get("model_id")
        entry = self._models.get(model_id)
        if entry is None:
            raise ValueError(f"unknown model_id {model_id!r}")
        _, predictor = entry
        predictions = []
        for k, item in enumerate(lines):
            tokens = tuple(Token(text, pos) for text, pos in item["tokens"])
            prediction = predictor.predict(Sentence(tokens, k))
            predictions.append({
                "labels": list(prediction.labels),
                "spans": [
                    [sp.start, sp.end, sp.label, sp.confidence] for sp in prediction.spans
                ],
            })
        return {"predictions": predictions}


def serve_tagger(
    backend: TaggerBackend | None = None, endpoint: str = "tcp:127.0.0.1:0"
) -> WireServer:
    return WireServer(TaggerService(backend), endpoint).start()


def make_tagger_backend(endpoint: str) -> TaggerBackend:
    """`native` for the in-process perceptron, else a wire endpoint."""
    if endpoint == "native":
        return NativeTagger()
    return WireTaggerBackend(endpoint)
