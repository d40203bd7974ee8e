"""Tagger role: neural token tagger behind the JSONL wire protocol.

Confidences come from the decoder's per-token softmax, so the handshake
advertises ``calibrated: true``. Training requests are serialized through
a lock; model ids are local to this server process.
"""

from __future__ import annotations

import base64
import hashlib
import threading

from . import protocol
from .models import PluginConfig, TrainedTagger, train_tagger

SERVER_NAME = "plugin-encoder"

# wire hyperparams applied by this backend; others are accepted and ignored
_HP_KEYS = frozenset(
    {"learning_rate", "batch_size", "epochs", "gce_q", "label_smoothing", "seed"}
)


def _parse_segment(record: dict, line_no: int) -> list[tuple[str, str, str]]:
    tokens = record.get("tokens")
    if not isinstance(tokens, list) or not tokens:
        raise ValueError(f"segment {line_no}: 'tokens' must be a non-empty array")
    out = []
    for triple in tokens:
        if not isinstance(triple, (list, tuple)) or len(triple) != 3:
            raise ValueError(f"segment {line_no}: tokens are [text, pos, label] triples")
        text, pos, label = (str(x) for x in triple)
        out.append((text, pos, label))
    return out


def _parse_sentence(record: dict, line_no: int) -> list[tuple[str, str]]:
    tokens = record.get("tokens")
    if not isinstance(tokens, list):
        raise ValueError(f"sentence {line_no}: 'tokens' must be an array")
    out = []
    for pair in tokens:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ValueError(f"sentence {line_no}: tokens are [text, pos] pairs")
        out.append((str(pair[0]), str(pair[1])))
    return out


class TaggerService:
    def __init__(self, config: PluginConfig = PluginConfig()):
        self.config = config
        self._models: dict[str, TrainedTagger] = {}
        self._lock = threading.Lock()

    # --- protocol.Service

    def handle(self, record: dict, conn: protocol.Connection) -> dict:
        op = record.get("op")
        if op == "hello":
            return self._hello(record)
        if op in ("train", "predict"):
            # drain the stream before validating anything else, so a failed
            # request leaves the session aligned on the next header
            count = record.get("count")
            if not isinstance(count, int) or count < 0:
                raise ValueError(f"'count' must be a non-negative integer: {count!r}")
            stream = conn.read_stream(count)
            if op == "train":
                return self._train(record, stream)
            return self._predict(record, stream)
        raise ValueError(f"unknown op {op!r}")

    # --- ops

    def _hello(self, record: dict) -> dict:
        version = record.get("version")
        if version != protocol.PROTOCOL_VERSION:
            raise ValueError(
                f"unsupported protocol version {version!r} "
                f"(this server speaks {protocol.PROTOCOL_VERSION})")
        return {
            "version": protocol.PROTOCOL_VERSION,
            "role": "tagger",
            "calibrated": True,
            "name": SERVER_NAME,
        }

    def _train(self, record: dict, stream: list[dict]) -> dict:
        segments = [_parse_segment(line, i) for i, line in enumerate(stream)]
        if not segments:
            raise ValueError("cannot train on an empty segment list")
        classes = record.get("classes")
        if classes is not None:
            if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
                raise ValueError("'classes' must be null or an array of strings")
        raw_hp = record.get("hyperparams") or {}
        if not isinstance(raw_hp, dict):
            raise ValueError("'hyperparams' must be an object")
        cfg = self.config
        hp = {
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "gce_q": cfg.q,
            "label_smoothing": cfg.label_smoothing,
            "seed": 13,
        }
        hp.update({k: v for k, v in raw_hp.items() if k in _HP_KEYS})

        with self._lock:
            model = train_tagger(
                cfg.encoder_model, segments, hp, classes=classes, device=cfg.device)
            blob = model.to_blob()
            model_id = "m" + hashlib.sha256(blob).hexdigest()[:16]
            self._models[model_id] = model
        return {
            "model_id": model_id,
            "classes": list(model.classes),
            "signature": f"{SERVER_NAME}/1",
            "blob_b64": base64.b64encode(blob).decode("ascii"),
        }

    def _predict(self, record: dict, stream: list[dict]) -> dict:
        model_id = record.get("model_id")
        model = self._models.get(model_id)
        if model is None:
            raise KeyError(f"unknown model_id {model_id!r}")
        sentences = [_parse_sentence(line, i) for i, line in enumerate(stream)]
        predictions = []
        with self._lock:
            for sentence in sentences:
                labels, spans, _ = model.predict_with_probs([t for t, _ in sentence])
                predictions.append({
                    "labels": labels,
                    "spans": [[s, e, cls, conf] for s, e, cls, conf in spans],
                })
        return {"predictions": predictions}


def serve(endpoint: str = "tcp:127.0.0.1:0",
          config: PluginConfig = PluginConfig()) -> protocol.Server:
    return protocol.Server(TaggerService(config), endpoint)
