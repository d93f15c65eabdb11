"""Column-wise similarity, relevance matrix, and relevance embedding.

The block mixes the columns of an input image by how strongly each one
correlates with the columns of a priority map:

    S = Q^T A          similarity of image column i and priority column j
    W = softmax(S / t) row-wise, so each row is a distribution over columns
    O = Q W^T          each output column is a convex combination of input
                       columns, injecting global context into the image

Everything runs through the autodiff tape, so gradients reach both the
image path and the priority-map path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor


@dataclass(frozen=True)
class RAConfig:
    """Knobs for the relevance computation.

    temperature divides the similarity matrix before the softmax.  Raw
    inner products of length-n columns grow with n and saturate the
    softmax for tall images; sqrt(n) is a reasonable setting there.  The
    default of 1 applies the softmax to the raw inner products.

    column_normalize rescales every column of both operands to unit
    Euclidean norm before the inner product (cosine similarity).
    """

    temperature: float = 1.0
    column_normalize: bool = False

    def __post_init__(self):
        if not (self.temperature > 0):
            raise ValueError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class RelevanceMatrix:
    """Row-stochastic m x m column-affinity weights (inspection wrapper).

    Row i holds the weights of output column i over the input columns;
    each row sums to 1 and every entry lies strictly inside (0, 1).
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"relevance matrix must be square, got {w.shape}")
        tol = 1e-9 if w.dtype == np.float64 else 1e-7
        sums = w.sum(axis=1)
        if np.abs(sums - 1.0).max() > tol:
            raise ValueError("relevance rows must sum to 1")
        if w.min() <= 0.0 or w.max() >= 1.0:
            raise ValueError("relevance entries must lie strictly inside (0, 1)")
        wc = np.ascontiguousarray(w)
        wc.flags.writeable = False
        object.__setattr__(self, "weights", wc)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def similarity(q: Tensor, a: Tensor, cfg: RAConfig | None = None) -> Tensor:
    """Inner products of every image column with every priority column: Q^T A."""
    if q.data.ndim != 2 or a.data.ndim != 2:
        raise ShapeError(f"similarity: expected 2D operands, got {q.shape} and {a.shape}")
    if q.shape != a.shape:
        raise ShapeError(f"similarity: shapes {q.shape} and {a.shape} differ")
    if cfg is not None and cfg.column_normalize:
        q = ad.normalize_columns(q)
        a = ad.normalize_columns(a)
    return ad.matmul(ad.transpose(q), a)


def relevance(s: Tensor, cfg: RAConfig = RAConfig()) -> Tensor:
    """Row-stochastic relevance weights: softmax over priority columns."""
    if s.data.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"relevance: similarity matrix must be square, got {s.shape}")
    if cfg.temperature != 1.0:
        s = ad.scale(s, 1.0 / cfg.temperature)
    return ad.softmax_rows(s)


def embed(q: Tensor, w: Tensor) -> Tensor:
    """Recalibrate the image by its relevance weights: O = Q W^T."""
    if q.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"embed: expected 2D operands, got {q.shape} and {w.shape}")
    m = q.shape[1]
    if w.shape != (m, m):
        raise ShapeError(f"embed: weights must be {m}x{m} for input {q.shape}, got {w.shape}")
    return ad.matmul(q, ad.transpose(w))


def ra_apply(q: Tensor, a: Tensor, cfg: RAConfig = RAConfig()) -> Tensor:
    """Full block: similarity -> relevance -> embedding, differentiable in q and a."""
    s = similarity(q, a, cfg)
    w = relevance(s, cfg)
    return embed(q, w)


def relevance_of(image: np.ndarray, priority: np.ndarray, cfg: RAConfig = RAConfig()) -> RelevanceMatrix:
    """Convenience: the relevance matrix for raw arrays, as an inspection value."""
    tape = Tape(np.float64)
    w = relevance(similarity(tape.tensor(image), tape.tensor(priority), cfg), cfg)
    return RelevanceMatrix(w.data)


def enhance(image: np.ndarray, priority: np.ndarray, cfg: RAConfig = RAConfig()) -> np.ndarray:
    """Convenience: run the block on raw arrays at float64, without gradients."""
    tape = Tape(np.float64)
    out = ra_apply(tape.tensor(image), tape.tensor(priority), cfg)
    return out.data
