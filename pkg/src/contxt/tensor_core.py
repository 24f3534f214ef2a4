"""Dense float64 kernel: vectors, matrices, activations and seeded RNG.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
The helpers here validate shapes and always allocate fresh outputs.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyContextSetError

DenseVector = np.ndarray
DenseMatrix = np.ndarray

RNG_ALGORITHM = "numpy.PCG64"


def as_vector(values) -> DenseVector:
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"expected a non-empty 1-d vector, got shape {v.shape}")
    return v


def as_matrix(values) -> DenseMatrix:
    m = np.array(values, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise DimensionError(f"expected a non-empty 2-d matrix, got shape {m.shape}")
    return m


def matvec(m: DenseMatrix, v: DenseVector) -> DenseVector:
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} matrix by {v.shape} vector")
    return m @ v


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DimensionError("softmax of an empty vector")
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - np.max(v, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def mean_of(vs: Sequence[DenseVector]) -> DenseVector:
    """Elementwise arithmetic mean of a non-empty set of equal-length vectors."""
    if isinstance(vs, np.ndarray):
        if vs.ndim != 2:
            raise DimensionError(f"expected a stack of vectors, got shape {vs.shape}")
        stack = vs.astype(np.float64, copy=False)
    else:
        vs = list(vs)
        if not vs:
            raise EmptyContextSetError("cannot average an empty set of vectors")
        lengths = {np.shape(v) for v in vs}
        if len(lengths) != 1 or len(next(iter(lengths))) != 1:
            raise DimensionError(f"mixed vector shapes: {sorted(lengths)}")
        stack = np.stack([np.asarray(v, dtype=np.float64) for v in vs])
    if stack.shape[0] == 0:
        raise EmptyContextSetError("cannot average an empty set of vectors")
    return stack.mean(axis=0)


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties resolve to the lowest index."""
    # np.argmax already returns the first occurrence of the maximum
    return np.argmax(logits, axis=-1)


class SeededRng:
    """Reproducible generator with named substreams.

    Wraps ``numpy.random.Generator(PCG64)``; PCG64 output is specified
    bit-for-bit, so a seed yields the same stream on every platform.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, stream: str = ""):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream = stream
        entropy = [self.seed]
        if stream:
            digest = hashlib.sha256(stream.encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:8], "little"))
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def substream(self, name: str) -> "SeededRng":
        full = f"{self.stream}/{name}" if self.stream else name
        return SeededRng(self.seed, full)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, seq, size=None, replace: bool = True):
        return self.generator.choice(seq, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream!r}, algorithm={self.algorithm})"
