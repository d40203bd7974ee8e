"""Model construction, training, decoding, and serialization.

Two backbones per role, selected by identifier:

- ``tiny-random`` (optionally ``tiny-random:<dim>x<layers>``): a small
  randomly initialized transformer built here in plain torch. No
  pretrained weights, no downloads; it exists so the full protocol stack
  trains, predicts, and round-trips deterministically on any machine.
- anything else is treated as a `transformers` model identifier or local
  path and needs the ``hf`` extra plus obtainable weights.

Trained taggers serialize to a self-describing gzip blob (JSON header,
raw little-endian tensor bytes, gzip mtime pinned to 0), so equal
training requests produce byte-identical blobs.
"""

from __future__ import annotations

import base64
import contextlib
import gzip
import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .gce import IGNORE_INDEX, smoothed_gce_loss

BLOB_FORMAT = "seedner-plugin/tagger/1"
SIGNATURE = "plugin-encoder/1"
TINY = "tiny-random"
_TINY_RE = re.compile(r"^tiny-random(?::(\d+)x(\d+))?$")

PAD_ID = 0
UNK_ID = 1
_SPECIALS = 2

OUTSIDE = "O"


@dataclass(frozen=True)
class PluginConfig:
    """Server-side settings: model identities, device, and the training
    defaults used when a request omits a hyperparameter.

    ``epochs`` is the per-training-request default; the protocol lets
    every request override it. The default of 5 was picked on the
    synthetic dev fixture.
    """

    encoder_model: str = TINY
    mlm_model: str = TINY
    q: float = 0.7
    label_smoothing: float = 0.1
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 5
    device: str = "cpu"

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must be in (0, 1]: {self.q}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"smoothing must be in [0, 1): {self.label_smoothing}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @staticmethod
    def load(path: str) -> "PluginConfig":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if not isinstance(payload, dict):
            raise ValueError(f"{path}: top level must be an object")
        return PluginConfig(**payload)


@contextlib.contextmanager
def single_threaded():
    """Pin torch to one CPU thread: reduction order, and therefore exact
    float results, must not depend on the host's core count."""
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(n)


def _tiny_dims(identifier: str) -> tuple[int, int]:
    m = _TINY_RE.match(identifier)
    if not m:
        raise ValueError(f"not a tiny-random identifier: {identifier!r}")
    d_model, layers = int(m.group(1) or 64), int(m.group(2) or 2)
    if d_model % 4 or d_model < 4 or layers < 1:
        raise ValueError(f"tiny-random dims must be a positive multiple of 4: {identifier!r}")
    return d_model, layers


def _encoder(d_model: int, layers: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=d_model, nhead=4, dim_feedforward=4 * d_model,
        dropout=0.0, batch_first=True, norm_first=True)
    return nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)


# ------------------------------------------------------------ label space

def tagset_for(classes: Sequence[str]) -> tuple[str, ...]:
    labels = [OUTSIDE]
    for cls in sorted(classes):
        labels.append(f"B-{cls}")
        labels.append(f"I-{cls}")
    return tuple(labels)


def classes_of(labels: Sequence[Sequence[str]]) -> tuple[str, ...]:
    found = set()
    for row in labels:
        for label in row:
            if label == OUTSIDE:
                continue
            if len(label) < 3 or label[0] not in "BI" or label[1] != "-":
                raise ValueError(f"bad BIO label {label!r}")
            found.add(label[2:])
    return tuple(sorted(found))


def check_bio(labels: Sequence[str]) -> None:
    prev = None
    for i, label in enumerate(labels):
        if label.startswith("I-") and prev != label[2:]:
            raise ValueError(f"I- without matching run at position {i}: {label}")
        prev = label[2:] if label != OUTSIDE else None


# ------------------------------------------------------------- tiny models

class TinyTokenTagger(nn.Module):
    """Word-level transformer classifier over a closed train-time vocab."""

    def __init__(self, vocab_size: int, n_labels: int, d_model: int,
                 layers: int, max_len: int = 512):
        super().__init__()
        self.max_len = max_len
        self.embed = nn.Embedding(vocab_size, d_model, padding_idx=PAD_ID)
        self.pos = nn.Embedding(max_len, d_model)
        self.encoder = _encoder(d_model, layers)
        self.head = nn.Linear(d_model, n_labels)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        t = ids.size(1)
        if t > self.max_len:
            raise ValueError(f"sequence of {t} tokens exceeds max length {self.max_len}")
        positions = torch.arange(t, device=ids.device).unsqueeze(0)
        hidden = self.embed(ids) + self.pos(positions)
        hidden = self.encoder(hidden, src_key_padding_mask=pad_mask)
        return self.head(hidden)


class TinyMaskedLM(nn.Module):
    """Fixed-weight cloze scorer over a hashed word vocabulary.

    Words map to one of ``buckets`` ids through a stable digest, so any
    word has a probability without a training corpus. Weights are seeded
    once at construction; the module is inference-only.
    """

    MASK_ID = 1

    def __init__(self, buckets: int = 4096, d_model: int = 64, layers: int = 2,
                 seed: int = 0, max_len: int = 512):
        super().__init__()
        self.buckets = buckets
        self.max_len = max_len
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.embed = nn.Embedding(buckets + _SPECIALS, d_model, padding_idx=PAD_ID)
            self.pos = nn.Embedding(max_len, d_model)
            self.encoder = _encoder(d_model, layers)
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def word_id(self, word: str) -> int:
        digest = hashlib.md5(word.encode("utf-8")).digest()
        return _SPECIALS + int.from_bytes(digest[:8], "big") % self.buckets

    @torch.no_grad()
    def slot_distributions(self, tokens: Sequence[str], start: int, end: int) -> torch.Tensor:
        """Softmax over the vocabulary at each masked slot of [start, end)."""
        if end > self.max_len:
            raise ValueError(f"span end {end} exceeds position limit {self.max_len}")
        ids = [self.word_id(w) for w in tokens]
        for k in range(start, end):
            ids[k] = self.MASK_ID
        ids = ids[: self.max_len]
        with single_threaded():
            x = torch.tensor([ids], dtype=torch.long)
            positions = torch.arange(x.size(1)).unsqueeze(0)
            hidden = self.encoder(self.embed(x) + self.pos(positions))
            logits = hidden[0] @ self.embed.weight.T
            return torch.softmax(logits[start:end].double(), dim=-1)


# -------------------------------------------------- transformers adapters

def _require_transformers():
    try:
        import transformers
    except ImportError as exc:  # pragma: no cover - exercised only without extra
        raise RuntimeError(
            "this model identifier needs the 'hf' extra: pip install seedner-plugin[hf]"
        ) from exc
    return transformers


class HfTokenTagger(nn.Module):
    """Pretrained encoder + linear head; words are represented by their
    first subword, so the head sees one vector per input word."""

    def __init__(self, identifier: str, n_labels: int):
        super().__init__()
        transformers = _require_transformers()
        self.identifier = identifier
        self.tokenizer = transformers.AutoTokenizer.from_pretrained(identifier)
        self.backbone = transformers.AutoModel.from_pretrained(identifier)
        hidden = self.backbone.config.hidden_size
        self.head = nn.Linear(hidden, n_labels)

    def forward_words(self, batch: Sequence[Sequence[str]]) -> tuple[torch.Tensor, torch.Tensor]:
        enc = self.tokenizer(
            [list(words) for words in batch], is_split_into_words=True,
            padding=True, truncation=True, return_tensors="pt")
        device = next(self.parameters()).device
        enc = {k: v.to(device) for k, v in enc.items()}
        hidden = self.backbone(**enc).last_hidden_state
        n = max(len(words) for words in batch)
        gathered = hidden.new_zeros((len(batch), n, hidden.size(-1)))
        pad = torch.ones((len(batch), n), dtype=torch.bool, device=device)
        for b, words in enumerate(batch):
            word_ids = self.tokenizer(
                list(words), is_split_into_words=True, truncation=True
            ).word_ids()
            seen = set()
            for pos, wid in enumerate(word_ids):
                if wid is not None and wid not in seen:
                    seen.add(wid)
                    gathered[b, wid] = hidden[b, pos]
                    pad[b, wid] = False
        return self.head(gathered), pad


class HfMaskedLM:
    """Cloze scoring and subword counting through a pretrained masked LM."""

    def __init__(self, identifier: str, device: str = "cpu"):
        transformers = _require_transformers()
        self.tokenizer = transformers.AutoTokenizer.from_pretrained(identifier)
        self.model = transformers.AutoModelForMaskedLM.from_pretrained(identifier)
        self.model.to(device).eval()
        self.device = device

    def subword_count(self, word: str) -> int:
        return len(self.tokenizer.tokenize(word))

    def single_id(self, word: str) -> int | None:
        pieces = self.tokenizer.tokenize(word)
        if len(pieces) != 1:
            return None
        return self.tokenizer.convert_tokens_to_ids(pieces)[0]

    @torch.no_grad()
    def slot_distributions(self, tokens: Sequence[str], start: int, end: int) -> torch.Tensor:
        words = list(tokens)
        for k in range(start, end):
            words[k] = self.tokenizer.mask_token
        enc = self.tokenizer(words, is_split_into_words=True, truncation=True,
                             return_tensors="pt").to(self.device)
        logits = self.model(**enc).logits[0]
        mask_positions = (enc["input_ids"][0] == self.tokenizer.mask_token_id).nonzero(as_tuple=True)[0]
        if mask_positions.numel() != end - start:
            raise ValueError("mask slots lost to truncation")
        return torch.softmax(logits[mask_positions].double(), dim=-1)


# ----------------------------------------------------------- trained model

@dataclass(frozen=True)
class TrainedTagger:
    identifier: str
    labels: tuple[str, ...]
    vocab: tuple[str, ...]  # empty for subword-tokenized backbones
    module: nn.Module = field(compare=False)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted({lab[2:] for lab in self.labels if lab != OUTSIDE}))

    # ---- encoding

    def _word_logits(self, batch: Sequence[Sequence[str]]) -> tuple[torch.Tensor, torch.Tensor]:
        if isinstance(self.module, HfTokenTagger):
            return self.module.forward_words(batch)
        index = {w: i for i, w in enumerate(self.vocab)}
        n = max(len(words) for words in batch)
        ids = torch.full((len(batch), n), PAD_ID, dtype=torch.long)
        pad = torch.ones((len(batch), n), dtype=torch.bool)
        for b, words in enumerate(batch):
            for t, w in enumerate(words):
                ids[b, t] = index.get(w, UNK_ID)
                pad[b, t] = False
        return self.module(ids, pad), pad

    # ---- decoding

    def predict_with_probs(
        self, words: Sequence[str]
    ) -> tuple[list[str], list[tuple[int, int, str, float]], list[float]]:
        """Greedy BIO-constrained decode.

        Returns (labels, spans, chosen-label probability per token); a
        span's confidence is the minimum of its tokens' probabilities.
        """
        if not words:
            return [], [], []
        self.module.eval()
        with torch.no_grad(), single_threaded():
            logits, _ = self._word_logits([list(words)])
            probs = torch.softmax(logits[0, : len(words)].double(), dim=-1)

        labels: list[str] = []
        chosen: list[float] = []
        prev_cls = None
        for t in range(len(words)):
            best, best_p = None, -1.0
            for j, label in enumerate(self.labels):
                if label.startswith("I-") and label[2:] != prev_cls:
                    continue
                p = float(probs[t, j])
                if p > best_p:
                    best, best_p = label, p
            labels.append(best)
            chosen.append(best_p)
            prev_cls = best[2:] if best != OUTSIDE else None

        spans = []
        t = 0
        while t < len(labels):
            if labels[t].startswith("B-"):
                cls = labels[t][2:]
                end = t + 1
                while end < len(labels) and labels[end] == f"I-{cls}":
                    end += 1
                spans.append((t, end, cls, min(chosen[t:end])))
                t = end
            else:
                t += 1
        return labels, spans, chosen

    def predict(self, words: Sequence[str]):
        labels, spans, _ = self.predict_with_probs(words)
        return labels, spans

    # ---- serialization

    def to_blob(self) -> bytes:
        state = {}
        for name, tensor in sorted(self.module.state_dict().items()):
            array = tensor.detach().cpu().contiguous().numpy()
            state[name] = {
                "dtype": str(array.dtype),
                "shape": list(array.shape),
                "data": base64.b64encode(array.tobytes()).decode("ascii"),
            }
        payload = {
            "format": BLOB_FORMAT,
            "identifier": self.identifier,
            "labels": list(self.labels),
            "vocab": list(self.vocab),
            "state": state,
        }
        raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return gzip.compress(raw, mtime=0)

    @staticmethod
    def from_blob(blob: bytes) -> "TrainedTagger":
        try:
            payload = json.loads(gzip.decompress(blob).decode("utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"unreadable model blob: {exc}") from exc
        if payload.get("format") != BLOB_FORMAT:
            raise ValueError(f"unknown blob format {payload.get('format')!r}")
        labels = tuple(payload["labels"])
        vocab = tuple(payload["vocab"])
        identifier = payload["identifier"]
        module = _build_module(identifier, len(labels), len(vocab))
        state = {}
        for name, item in payload["state"].items():
            array = np.frombuffer(
                base64.b64decode(item["data"]), dtype=np.dtype(item["dtype"])
            ).reshape(item["shape"]).copy()
            state[name] = torch.from_numpy(array)
        module.load_state_dict(state)
        module.eval()
        return TrainedTagger(identifier, labels, vocab, module)


def _build_module(identifier: str, n_labels: int, vocab_size: int) -> nn.Module:
    if _TINY_RE.match(identifier):
        d_model, layers = _tiny_dims(identifier)
        return TinyTokenTagger(vocab_size, n_labels, d_model, layers)
    return HfTokenTagger(identifier, n_labels)


# -------------------------------------------------------------- training

def train_tagger(
    identifier: str,
    segments: Sequence[Sequence[tuple[str, str, str]]],
    hp: dict,
    classes: Sequence[str] | None = None,
    device: str = "cpu",
) -> TrainedTagger:
    """Fine-tune (or fit from scratch, for tiny-random) a token tagger.

    ``segments`` rows are (text, pos, bio_label) triples. ``hp`` uses the
    wire names: learning_rate, batch_size, epochs, gce_q, label_smoothing,
    seed. Deterministic: same inputs, byte-identical blob.
    """
    if not segments:
        raise ValueError("cannot train on an empty segment list")
    label_rows = [[lab for _, _, lab in seg] for seg in segments]
    for row in label_rows:
        check_bio(row)
    inferred = classes_of(label_rows)
    if classes is None:
        classes = inferred
        if not classes:
            raise ValueError("no entity labels in the training data")
    elif not set(inferred) <= set(classes):
        raise ValueError(f"labels outside the class inventory: "
                         f"{sorted(set(inferred) - set(classes))}")
    labels = tagset_for(classes)
    label_index = {lab: i for i, lab in enumerate(labels)}

    seed = int(hp.get("seed", 13))
    lr = float(hp.get("learning_rate", 1e-5))
    batch_size = int(hp.get("batch_size", 16))
    epochs = int(hp.get("epochs", 5))
    q = float(hp.get("gce_q", 0.7))
    smoothing = float(hp.get("label_smoothing", 0.1))

    words = sorted({text for seg in segments for text, _, _ in seg})
    vocab = ("<pad>", "<unk>", *words)
    # seed before construction so parameter init is part of the seeded walk
    torch.manual_seed(seed)
    module = _build_module(identifier, len(labels), len(vocab))
    module.to(device).train()
    model = TrainedTagger(identifier, labels, vocab, module)

    optimizer = torch.optim.AdamW(module.parameters(), lr=lr)
    rng = random.Random(seed)
    order = list(range(len(segments)))

    with single_threaded():
        for _ in range(epochs):
            rng.shuffle(order)
            for lo in range(0, len(order), batch_size):
                chunk = order[lo : lo + batch_size]
                batch = [[text for text, _, _ in segments[i]] for i in chunk]
                logits, _ = model._word_logits(batch)
                n = logits.size(1)
                target = torch.full((len(chunk), n), IGNORE_INDEX, dtype=torch.long)
                for b, i in enumerate(chunk):
                    for t, (_, _, lab) in enumerate(segments[i]):
                        target[b, t] = label_index[lab]
                loss = smoothed_gce_loss(
                    logits.reshape(-1, len(labels)), target.reshape(-1),
                    q=q, smoothing=smoothing)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

    module.eval()
    return model


def build_masked_lm(identifier: str, device: str = "cpu"):
    if _TINY_RE.match(identifier):
        d_model, layers = _tiny_dims(identifier)
        return TinyMaskedLM(d_model=d_model, layers=layers)
    return HfMaskedLM(identifier, device)
