"""Masked-LM scorer role behind the JSONL wire protocol.

Serves ``subword_counts`` and ``cloze``. Per the protocol the server
reports raw per-slot probabilities and never aggregates; margins and
means are the caller's business.
"""

from __future__ import annotations

import threading

import torch

from . import protocol
from .models import PluginConfig, TinyMaskedLM, build_masked_lm

SERVER_NAME = "plugin-mlm"


class MlmService:
    def __init__(self, config: PluginConfig = PluginConfig()):
        self.config = config
        self.model = build_masked_lm(config.mlm_model, config.device)
        self._lock = threading.Lock()

    # --- model-kind shims

    def _counts(self, words: list[str]) -> list[int]:
        if isinstance(self.model, TinyMaskedLM):
            return [1] * len(words)
        return [self.model.subword_count(w) for w in words]

    def _word_column(self, word: str) -> int | None:
        """Vocabulary column for a single-subword word, None if not one."""
        if isinstance(self.model, TinyMaskedLM):
            return self.model.word_id(word)
        return self.model.single_id(word)

    # --- protocol.Service

    def handle(self, record: dict, conn: protocol.Connection) -> dict:
        op = record.get("op")
        if op == "hello":
            version = record.get("version")
            if version != protocol.PROTOCOL_VERSION:
                raise ValueError(
                    f"unsupported protocol version {version!r} "
                    f"(this server speaks {protocol.PROTOCOL_VERSION})")
            return {
                "version": protocol.PROTOCOL_VERSION,
                "role": "mlm",
                "name": SERVER_NAME,
            }
        if op == "subword_counts":
            return self._subword_counts(record)
        if op == "cloze":
            return self._cloze(record)
        raise ValueError(f"unknown op {op!r}")

    def _subword_counts(self, record: dict) -> dict:
        words = record.get("words")
        if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
            raise ValueError("'words' must be an array of strings")
        with self._lock:
            return {"counts": self._counts(words)}

    def _cloze(self, record: dict) -> dict:
        tokens = record.get("tokens")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise ValueError("'tokens' must be an array of strings")
        span = record.get("span")
        if (not isinstance(span, list) or len(span) != 2
                or not all(isinstance(x, int) for x in span)):
            raise ValueError("'span' must be [start, end]")
        start, end = span
        if not 0 <= start < end <= len(tokens):
            raise ValueError(f"bad span [{start}, {end}) for {len(tokens)} tokens")
        candidates = record.get("candidates")
        if not isinstance(candidates, list):
            raise ValueError("'candidates' must be an array")
        parsed = []
        for i, cand in enumerate(candidates):
            if not isinstance(cand, dict) or not isinstance(cand.get("words"), list):
                raise ValueError(f"candidate {i}: must be an object with a 'words' array")
            parsed.append([str(w) for w in cand["words"]])

        slots = end - start
        with self._lock, torch.no_grad():
            need_model = any(
                len(words) == slots and all(c == 1 for c in self._counts(words))
                for words in parsed)
            dist = self.model.slot_distributions(tokens, start, end) if need_model else None
            results = []
            for words in parsed:
                if len(words) != slots or any(c != 1 for c in self._counts(words)):
                    results.append({"eligible": False})
                    continue
                probs = []
                for k, word in enumerate(words):
                    col = self._word_column(word)
                    probs.append(float(dist[k, col]) if col is not None else 0.0)
                results.append({"eligible": True, "probs": probs})
        return {"results": results}


def serve(endpoint: str = "tcp:127.0.0.1:0",
          config: PluginConfig = PluginConfig()) -> protocol.Server:
    return protocol.Server(MlmService(config), endpoint)
