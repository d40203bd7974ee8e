"""Masked-LM backend contract, deterministic stub implementations, and the
wire client/server adapters.

A backend answers two questions: how many subwords a word splits into, and
how probable each candidate string is when substituted into a masked span.
The core never sees subword vocabularies; eligibility (mask count versus
candidate length) is the backend's call.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from . import wire
from .wire import Session, WireClient, WireServer


@dataclass(frozen=True)
class ClozeCandidate:
    label: str
    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        if not self.words:
            raise ValueError("candidate words must be non-empty")


@dataclass(frozen=True)
class ClozeRequest:
    tokens: tuple[str, ...]
    start: int
    end: int
    candidates: tuple[ClozeCandidate, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not 0 <= self.start < self.end <= len(self.tokens):
            raise ValueError(f"bad span [{self.start}, {self.end}) for {len(self.tokens)} tokens")

    @property
    def mask_count(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class CandidateResult:
    """Per-position fill probabilities, or ineligibility (length mismatch)."""

    eligible: bool
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(self.probs))
        if self.eligible and not self.probs:
            raise ValueError("eligible result must carry probabilities")
        if not self.eligible and self.probs:
            raise ValueError("ineligible result must not carry probabilities")
        if any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise ValueError(f"probabilities out of [0,1]: {self.probs}")

    @property
    def mean(self) -> float:
        return sum(self.probs) / len(self.probs)


class MlmBackend(Protocol):
    def mask_fill_probabilities(self, request: ClozeRequest) -> list[CandidateResult]: ...

    def subword_counts(self, words: Sequence[str]) -> list[int]: ...


def _unit_interval_hash(*parts: str) -> float:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


@dataclass(frozen=True)
class HashStubMlm:
    """Fully deterministic noise backend: probabilities are a pure hash of
    (seed, sentence, span, candidate, position). Useful for oracle tests —
    any caller can recompute the exact values."""

    seed: int = 0
    subword_table: dict[str, int] = field(default_factory=dict)

    def mask_fill_probabilities(self, request: ClozeRequest) -> list[CandidateResult]:
        out = []
        for cand in request.candidates:
            if len(cand.words) != request.mask_count:
                out.append(CandidateResult(False))
                continue
            probs = tuple(
                _unit_interval_hash(
                    str(self.seed),
                    " ".join(request.tokens),
                    f"{request.start}:{request.end}",
                    cand.label,
                    " ".join(cand.words),
                    str(i),
                )
                for i in range(request.mask_count)
            )
            out.append(CandidateResult(True, probs))
        return out

    def subword_counts(self, words: Sequence[str]) -> list[int]:
        return [self.subword_table.get(w, 1) for w in words]


@dataclass(frozen=True)
class SurfaceMapStubMlm:
    """Planted-truth backend for end-to-end runs without a model: a span
    whose surface is in the map scores ``hi`` for its true class and ``lo``
    elsewhere; unknown surfaces score ``lo`` everywhere (forcing
    abstention). ``jitter`` adds a hash-derived perturbation bounded by its
    value, keeping determinism."""

    surface_classes: dict[str, str] = field(default_factory=dict)
    hi: float = 0.8
    lo: float = 0.2
    jitter: float = 0.0
    seed: int = 0
    subword_table: dict[str, int] = field(default_factory=dict)

    def mask_fill_probabilities(self, request: ClozeRequest) -> list[CandidateResult]:
        surface = " ".join(request.tokens[request.start : request.end])
        true_class = self.surface_classes.get(surface)
        out = []
        for cand in request.candidates:
            if len(cand.words) != request.mask_count:
                out.append(CandidateResult(False))
                continue
            base = self.hi if cand.label == true_class else self.lo
            probs = []
            for i in range(request.mask_count):
                p = base
                if self.jitter:
                    noise = _unit_interval_hash(
                        str(self.seed), surface, cand.label, " ".join(cand.words), str(i)
                    )
                    p = min(1.0, max(0.0, p + self.jitter * (noise - 0.5)))
                probs.append(p)
            out.append(CandidateResult(True, tuple(probs)))
        return out

    def subword_counts(self, words: Sequence[str]) -> list[int]:
        return [self.subword_table.get(w, 1) for w in words]


@dataclass(frozen=True)
class FixedTableStubMlm:
    """Hand-scripted backend: (label, words) -> probability list. Anything
    not in the table is ineligible. For boundary-value tests."""

    table: dict[tuple[str, tuple[str, ...]], tuple[float, ...]] = field(default_factory=dict)

    def mask_fill_probabilities(self, request: ClozeRequest) -> list[CandidateResult]:
        out = []
        for cand in request.candidates:
            probs = self.table.get((cand.label, cand.words))
            if probs is None:
                out.append(CandidateResult(False))
            else:
                out.append(CandidateResult(True, tuple(probs)))
        return out

    def subword_counts(self, words: Sequence[str]) -> list[int]:
        return [1 for _ in words]


# -- wire adapters -----------------------------------------------------------


class WireMlmBackend:
    """MlmBackend speaking the wire protocol to a remote server."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self._client = WireClient(endpoint, timeout=timeout)
        info = self._client.hello()
        if info.get("role") != "mlm":
            raise wire.ProtocolError(f"endpoint serves role {info.get('role')!r}, need 'mlm'")

    def mask_fill_probabilities(self, request: ClozeRequest) -> list[CandidateResult]:
        response = self._client.rpc(
            "cloze",
            {
                "tokens": list(request.tokens),
                "span": [request.start, request.end],
                "candidates": [
                    {"label": c.label, "words": list(c.words)} for c in request.candidates
                ],
            },
        )
        results = response.get("results")
        if not isinstance(results, list) or len(results) != len(request.candidates):
            raise wire.ProtocolError("cloze response results missing or mis-sized")
        out = []
        for item in results:
            eligible = bool(item.get("eligible"))
            probs = tuple(item.get("probs", ())) if eligible else ()
            out.append(CandidateResult(eligible, probs))
        return out

    def subword_counts(self, words: Sequence[str]) -> list[int]:
        response = self._client.rpc("subword_counts", {"words": list(words)})
        counts = response.get("counts")
        if not isinstance(counts, list) or len(counts) != len(words):
            raise wire.ProtocolError("subword_counts response mis-sized")
        return [int(c) for c in counts]

    def close(self) -> None:
        self._client.close()


class MlmService:
    """Serve any in-process MlmBackend over the wire (reference server)."""

    def __init__(self, backend: MlmBackend):
        self.backend = backend

    def handle(self, record: dict, session: Session) -> dict:
        op = record.get("op")
        if op == "hello":
            return wire.hello_payload("mlm")
        if op == "subword_counts":
            words = record["words"]
            return {"counts": self.backend.subword_counts(words)}
        if op == "cloze":
            start, end = record["span"]
            request = ClozeRequest(
                tokens=tuple(record["tokens"]),
                start=int(start),
                end=int(end),
                candidates=tuple(
                    ClozeCandidate(c["label"], tuple(c["words"])) for c in record["candidates"]
                ),
            )
            results = self.backend.mask_fill_probabilities(request)
            return {
                "results": [
                    {"eligible": r.eligible, "probs": list(r.probs)} if r.eligible
                    else {"eligible": False}
                    for r in results
                ]
            }
        raise ValueError(f"unknown op {op!r}")


def serve_mlm(backend: MlmBackend, endpoint: str = "tcp:127.0.0.1:0") -> WireServer:
    return WireServer(MlmService(backend), endpoint).start()


def _load_stub_spec(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def make_mlm_backend(endpoint: str) -> MlmBackend:
    """Endpoint grammar: `tcp:host:port`, `unix:/path`, `stub:hash:<seed>`,
    or `stub:map:<spec.json>` (keys: surfaces, hi, lo, jitter, seed,
    subwords)."""
    if endpoint.startswith("stub:hash:"):
        return HashStubMlm(seed=int(endpoint.rsplit(":", 1)[1]))
    if endpoint.startswith("stub:map:"):
        spec = _load_stub_spec(endpoint[len("stub:map:"):])
        return SurfaceMapStubMlm(
            surface_classes=dict(spec.get("surfaces", {})),
            hi=float(spec.get("hi", 0.8)),
            lo=float(spec.get("lo", 0.2)),
            jitter=float(spec.get("jitter", 0.0)),
            seed=int(spec.get("seed", 0)),
            subword_table={k: int(v) for k, v in spec.get("subwords", {}).items()},
        )
    return WireMlmBackend(endpoint)
