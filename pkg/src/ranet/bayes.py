"""Bayesian point-supervision loss for density maps.

Each pixel location x_m gets a posterior over labels {head_1..head_N,
background}.  Foreground likelihoods are isotropic Gaussians around the
annotated points; the background likelihood places a virtual band at
distance d from the nearest head.  With a uniform label prior, posteriors
reduce to a per-pixel normalization of the likelihoods.  Expected counts
are posterior-weighted density sums, and the loss drives each head's
expected count to one and the background's to zero with an absolute-value
penalty.

Posterior computation happens in log space with a per-pixel max shift, so
distant pixels cannot underflow every likelihood to zero.  The Gaussian
prefactor 1/(sqrt(2 pi) delta) is common to all labels and cancels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, ShapeError, Tensor

_PREFACTOR = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class BayesParams:
    """delta: Gaussian spread in pixels; d_ratio: background-band margin as a
    fraction of the shorter crop side (converted to pixels per evaluation)."""

    delta: float = 8.0
    d_ratio: float = 0.1

    def __post_init__(self):
        if not (self.delta > 0):
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not (0 < self.d_ratio < 1):
            raise ValueError(f"d_ratio must lie in (0, 1), got {self.d_ratio}")


@dataclass(frozen=True)
class PosteriorField:
    """Label posteriors per pixel: rows head_1..head_N then background."""

    probs: np.ndarray  # shape (N + 1, M); every column sums to 1

    def __post_init__(self):
        p = np.asarray(self.probs)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError(f"posterior field must be (N+1) x M, got {p.shape}")
        pc = np.ascontiguousarray(p)
        pc.flags.writeable = False
        object.__setattr__(self, "probs", pc)

    @property
    def n_heads(self) -> int:
        return self.probs.shape[0] - 1

    @property
    def n_pixels(self) -> int:
        return self.probs.shape[1]

    @property
    def head_rows(self) -> np.ndarray:
        return self.probs[:-1]

    @property
    def background_row(self) -> np.ndarray:
        return self.probs[-1]


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Pixel-center locations (x, y) in row-major order, shape (H*W, 2)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def _sq_distances(pixels: np.ndarray, heads: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (N, M)."""
    diff = heads[:, None, :] - pixels[None, :, :]
    return (diff * diff).sum(axis=2)


def likelihood_fg(pixels: np.ndarray, heads: np.ndarray, delta: float) -> np.ndarray:
    """Gaussian head likelihoods, shape (N, M): entry (n, m) for pixel m, head n."""
    pixels = np.asarray(pixels, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64).reshape(-1, 2)
    if pixels.ndim != 2 or pixels.shape[1] != 2 or pixels.shape[0] == 0:
        raise ValueError(f"pixels must be a non-empty (M, 2) array, got {pixels.shape}")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    sq = _sq_distances(pixels, heads)
    return (_PREFACTOR / delta) * np.exp(-sq / (2.0 * delta * delta))


def likelihood_bg(
    pixels: np.ndarray, heads: np.ndarray, delta: float, d: float
) -> np.ndarray:
    """Background likelihood per pixel, shape (M,), from the nearest-head distance."""
    pixels = np.asarray(pixels, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64).reshape(-1, 2)
    if heads.shape[0] == 0:
        raise ValueError("likelihood_bg needs at least one head; empty scenes fix the "
                         "background posterior at 1 instead")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if d <= 0:
        raise ValueError(f"background margin d must be positive, got {d}")
    nearest = np.sqrt(_sq_distances(pixels, heads).min(axis=0))
    return (_PREFACTOR / delta) * np.exp(-((d - nearest) ** 2) / (2.0 * delta * delta))


def _posteriors_from_log(log_fg: np.ndarray, log_bg: np.ndarray) -> np.ndarray:
    logs = np.vstack([log_fg, log_bg[None, :]])
    shifted = logs - logs.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def posteriors(fg: np.ndarray, bg: np.ndarray) -> PosteriorField:
    """Normalize likelihoods into per-pixel label posteriors (uniform prior)."""
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    if fg.ndim != 2 or bg.ndim != 1 or fg.shape[1] != bg.shape[0]:
        raise ShapeError(f"posteriors: fg {fg.shape} and bg {bg.shape} do not align")
    if (fg < 0).any() or (bg < 0).any():
        raise ValueError("likelihoods must be non-negative")
    dead = (fg.sum(axis=0) + bg) <= 0.0
    if dead.any():
        raise NumericError(
            f"posteriors: {int(dead.sum())} pixel(s) have every likelihood equal to "
            "zero; compute from exponents via posteriors_from_distances instead"
        )
    with np.errstate(divide="ignore"):
        return PosteriorField(_posteriors_from_log(np.log(fg), np.log(bg)))


def posteriors_from_distances(
    pixels: np.ndarray, heads: np.ndarray, delta: float, d: float
) -> PosteriorField:
    """Posteriors computed directly from distances; immune to underflow."""
    pixels = np.asarray(pixels, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64).reshape(-1, 2)
    if heads.shape[0] == 0:
        return PosteriorField(np.ones((1, pixels.shape[0])))
    sq = _sq_distances(pixels, heads)
    inv = 1.0 / (2.0 * delta * delta)
    log_fg = -sq * inv
    nearest = np.sqrt(sq.min(axis=0))
    log_bg = -((d - nearest) ** 2) * inv
    return PosteriorField(_posteriors_from_log(log_fg, log_bg))


def expected_counts(post: PosteriorField, density: np.ndarray) -> tuple[np.ndarray, float]:
    """Posterior-weighted density sums: (per-head counts, background count)."""
    d = np.asarray(density, dtype=np.float64).ravel()
    if d.shape[0] != post.n_pixels:
        raise ShapeError(
            f"expected_counts: density has {d.shape[0]} pixels, field has {post.n_pixels}"
        )
    counts = post.probs @ d
    return counts[:-1], float(counts[-1])


def margin_pixels(params: BayesParams, height: int, width: int) -> float:
    """The background margin d in pixels for a given crop shape."""
    return params.d_ratio * min(height, width)


def bayes_loss(dmap: Tensor, heads: np.ndarray, params: BayesParams) -> Tensor:
    """Point-supervision loss on a [H, W] density tensor, differentiable in dmap.

    L = sum_n |1 - E[c_n]| + |0 - E[c_0]|.  With no heads the background
    posterior is identically 1 and the loss collapses to |total count|.
    """
    if dmap.data.ndim != 2:
        raise ShapeError(f"bayes_loss: density must be [H, W], got {dmap.shape}")
    if not np.all(np.isfinite(dmap.data)):
        raise NumericError("bayes_loss: density map contains non-finite values")
    heads = np.asarray(heads, dtype=np.float64).reshape(-1, 2)
    h, w = dmap.shape
    n = heads.shape[0]

    grid = pixel_grid(h, w)
    d = margin_pixels(params, h, w)
    post = posteriors_from_distances(grid, heads, params.delta, d)

    tape = dmap.tape
    weights = tape.constant(post.probs)            # (N+1, M), constant w.r.t. dmap
    target = tape.constant(np.append(np.ones(n), 0.0).reshape(n + 1, 1))
    counts = ad.matmul(weights, ad.reshape(dmap, (h * w, 1)))
    residual = ad.add(target, ad.scale(counts, -1.0))
    return ad.sum_all(ad.abs_val(residual))
