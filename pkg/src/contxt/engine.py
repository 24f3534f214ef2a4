"""Context vectors, steering indexes and the additive steering transform.

A context vector ``c`` is a reference activation at one tap point.  For an
activation ``h`` the index is ``d = c - h`` and a steering spec with terms
``(c_j, a_j)`` maps ``h`` to ``h + sum_j a_j * (c_j - h)``.  Positive
strengths inject a context, negative strengths remove it.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CacheMissError, ConfigError, DimensionError, EmptyContextSetError
from .tensor_core import mean_of

MEAN = "mean"
LAST_TOKEN = "last_token"
MEAN_OF_PHRASES = "mean_of_phrases"


@dataclass(frozen=True, eq=False)
class ContextVector:
    label: str
    layer: int
    vector: np.ndarray
    provenance: str = MEAN
    sample_count: int | None = None
    phrase: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise DimensionError(f"context {self.label!r} must be a non-empty 1-d vector")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        if self.provenance not in (MEAN, LAST_TOKEN, MEAN_OF_PHRASES):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance in (MEAN, MEAN_OF_PHRASES) and (self.sample_count is None or self.sample_count < 1):
            raise EmptyContextSetError(f"context {self.label!r}: mean provenance needs sample_count >= 1")
        if self.phrase is not None:
            object.__setattr__(self, "phrase", tuple(self.phrase))

    @property
    def key(self) -> tuple[int, str]:
        return (self.layer, self.label)

    @property
    def experimental(self) -> bool:
        # averaging several phrases gives unreliable transformer contexts
        return self.provenance == MEAN_OF_PHRASES

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.layer}|{self.label}|{self.provenance}".encode("utf-8"))
        h.update(self.vector.astype("<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContextVector):
            return NotImplemented
        return (self.key == other.key and self.provenance == other.provenance
                and self.sample_count == other.sample_count and self.phrase == other.phrase
                and self.vector.tobytes() == other.vector.tobytes())


@dataclass(frozen=True)
class SteeringIndex:
    context: ContextVector
    d: np.ndarray

    @classmethod
    def form(cls, context: ContextVector, h) -> "SteeringIndex":
        h = np.asarray(h, dtype=np.float64)
        if h.shape[-1] != context.vector.shape[0]:
            raise DimensionError(f"activation width {h.shape[-1]} != context width {context.vector.shape[0]}")
        return cls(context, context.vector - h)


@dataclass(frozen=True)
class SteeringSpec:
    layer: int
    terms: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        terms = tuple((str(label), float(alpha)) for label, alpha in self.terms)
        for label, alpha in terms:
            if not math.isfinite(alpha):
                raise ConfigError(f"steering strength for {label!r} is not finite")
        object.__setattr__(self, "terms", terms)

    @property
    def is_identity(self) -> bool:
        return all(alpha == 0.0 for _, alpha in self.terms)

    def resolve(self, cache: "ContextCache") -> list[tuple[ContextVector, float]]:
        return [(cache.get(self.layer, label), alpha) for label, alpha in self.terms]

    def bind(self, cache: "ContextCache"):
        """Resolve contexts once and return an ``h -> h_steered`` callable.

        The affine coefficients are folded here, so each call costs one
        multiply and one add per activation element.
        """
        width, scale, offset = _fold(self.resolve(cache))

        def steer(h):
            h = np.asarray(h, dtype=np.float64)
            if width is not None and h.shape[-1] != width:
                raise DimensionError(f"activation width {h.shape[-1]} != context width {width}")
            if offset is None:
                return h.copy()
            if scale == 0.0:
                return np.broadcast_to(offset, h.shape).copy()
            out = np.multiply(h, scale)
            out += offset
            return out

        return steer

    def to_dict(self) -> dict:
        return {"layer": self.layer, "terms": [[label, alpha] for label, alpha in self.terms]}


def _fold(resolved: Sequence[tuple[ContextVector, float]]):
    """Collapse terms into ``(width, 1 - sum a_j, sum a_j c_j)``; offset is None if all a_j are 0."""
    widths = {ctx.vector.shape[0] for ctx, _ in resolved}
    if len(widths) > 1:
        raise DimensionError(f"steering contexts have mixed widths {sorted(widths)}")
    width = widths.pop() if widths else None
    active = [(ctx.vector, alpha) for ctx, alpha in resolved if alpha != 0.0]
    if not active:
        return width, 1.0, None
    # h + sum a_j (c_j - h) evaluated as (1 - sum a_j) h + sum a_j c_j:
    # algebraically identical, and exact at a single term with a = 1
    scale = 1.0 - math.fsum(alpha for _, alpha in active)
    offset = active[0][1] * active[0][0]
    for c, alpha in active[1:]:
        offset = offset + alpha * c
    return width, scale, offset


def _steer(h, resolved: Sequence[tuple[ContextVector, float]]) -> np.ndarray:
    width, scale, offset = _fold(resolved)
    h = np.asarray(h, dtype=np.float64)
    if width is not None and h.shape[-1] != width:
        raise DimensionError(f"activation width {h.shape[-1]} != context width {width}")
    if offset is None:
        return h.copy()
    if scale == 0.0:
        # h drops out; adding 0 * h would turn a -0.0 context entry into +0.0
        return np.broadcast_to(offset, h.shape).copy()
    return scale * h + offset


def apply_steering(h, spec: SteeringSpec, cache: "ContextCache") -> np.ndarray:
    """Steer one activation (or a stack of activations along the last axis)."""
    return _steer(h, spec.resolve(cache))


def make_classifier_spec(inject: str, remove: str, alpha_in: float, alpha_out: float, layer: int,
                         cache: "ContextCache | None" = None) -> SteeringSpec:
    """Inject the source-domain context and remove the target-domain context.

    Both strengths are nonnegative magnitudes; removal is applied with a
    negative sign.
    """
    if alpha_in < 0 or alpha_out < 0:
        raise ConfigError("injection and removal strengths must be >= 0")
    if cache is not None:
        cache.get(layer, inject)
        cache.get(layer, remove)
    return SteeringSpec(layer, ((inject, float(alpha_in)), (remove, -float(alpha_out))))


def extract_mean_context(model, samples, layer: int, label: str) -> ContextVector:
    """Average the tapped activation over a set of inputs.

    Only the inputs are consulted; class labels never enter the context.
    """
    X = getattr(samples, "X", samples)
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0 or X.ndim != 2 or X.shape[0] == 0:
        raise EmptyContextSetError(f"context {label!r}: empty sample set")
    acts = model.capture(X, layer)
    return ContextVector(label, layer, mean_of(acts), MEAN, sample_count=X.shape[0])


def extract_phrase_context(model, phrase: Sequence[int], layer: int, label: str,
                           phrase_text: Sequence[str] | None = None) -> ContextVector:
    """Residual activation of the final phrase token at ``layer``."""
    if len(phrase) == 0:
        raise EmptyContextSetError(f"context {label!r}: empty phrase")
    _, captured = model.forward_with_tap(np.asarray(phrase, dtype=np.int64), layer)
    return ContextVector(label, layer, captured[-1], LAST_TOKEN,
                         phrase=tuple(phrase_text) if phrase_text is not None else tuple(int(t) for t in phrase))


def extract_mean_phrase_context(model, phrases: Sequence[Sequence[int]], layer: int, label: str) -> ContextVector:
    """Mean of last-token contexts over several phrases (experimental)."""
    phrases = [p for p in phrases]
    if not phrases:
        raise EmptyContextSetError(f"context {label!r}: no phrases")
    vecs = [extract_phrase_context(model, p, layer, label).vector for p in phrases]
    return ContextVector(label, layer, mean_of(vecs), MEAN_OF_PHRASES, sample_count=len(vecs))


CACHE_MAGIC = b"CTXTCACH"
CACHE_VERSION = 1


@dataclass
class ContextCache:
    """Keyed store of context vectors, one per ``(layer, label)``."""

    entries: dict[tuple[int, str], ContextVector] = field(default_factory=dict)
    model_digest: str = ""
    path: Path | None = None

    def put(self, context: ContextVector) -> None:
        self.entries[context.key] = context

    def get(self, layer: int, label: str) -> ContextVector:
        try:
            return self.entries[(layer, label)]
        except KeyError:
            raise CacheMissError(f"no context {label!r} cached at layer {layer}") from None

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries[k] for k in sorted(self.entries))

    def digests(self) -> dict[str, str]:
        return {f"{ctx.layer}:{ctx.label}": ctx.digest() for ctx in self}

    def to_bytes(self) -> bytes:
        meta, payload = [], []
        for ctx in self:
            meta.append({"layer": ctx.layer, "label": ctx.label, "provenance": ctx.provenance,
                         "sample_count": ctx.sample_count,
                         "phrase": list(ctx.phrase) if ctx.phrase is not None else None,
                         "length": int(ctx.vector.shape[0])})
            payload.append(ctx.vector.astype("<f8").tobytes())
        header = json.dumps({"version": CACHE_VERSION, "model_digest": self.model_digest, "entries": meta},
                            sort_keys=True, separators=(",", ":")).encode("utf-8")
        body = CACHE_MAGIC + struct.pack("<HI", CACHE_VERSION, len(header)) + header + b"".join(payload)
        return body + hashlib.sha256(body).digest()

    def save(self, path=None) -> Path:
        path = Path(path or self.path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        self.path = path
        return path

    @classmethod
    def load(cls, path) -> "ContextCache":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise CacheMissError(f"cannot read context cache {path}: {exc}") from exc
        if raw[:len(CACHE_MAGIC)] != CACHE_MAGIC or len(raw) < len(CACHE_MAGIC) + 38:
            raise CacheMissError(f"{path}: not a context cache file")
        body, digest = raw[:-32], raw[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise CacheMissError(f"{path}: checksum mismatch")
        version, hlen = struct.unpack_from("<HI", body, len(CACHE_MAGIC))
        if version != CACHE_VERSION:
            raise CacheMissError(f"{path}: unsupported cache version {version}")
        start = len(CACHE_MAGIC) + 6
        header = json.loads(body[start:start + hlen].decode("utf-8"))
        offset = start + hlen
        cache = cls(model_digest=header["model_digest"], path=path)
        for e in header["entries"]:
            n = e["length"]
            vec = np.frombuffer(body, dtype="<f8", count=n, offset=offset).astype(np.float64)
            offset += 8 * n
            cache.put(ContextVector(e["label"], e["layer"], vec, e["provenance"], e["sample_count"],
                                    tuple(e["phrase"]) if e["phrase"] is not None else None))
        return cache


def cache_put(cache: ContextCache, context: ContextVector) -> None:
    cache.put(context)


def cache_get(cache: ContextCache, layer: int, label: str) -> ContextVector:
    return cache.get(layer, label)


def cache_save(cache: ContextCache, path) -> Path:
    return cache.save(path)


def cache_load(path) -> ContextCache:
    return ContextCache.load(path)
