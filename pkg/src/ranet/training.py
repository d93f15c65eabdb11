"""Optimization harness: random crops, Adam updates, checkpoints, telemetry.

Samples are evaluated sequentially on fresh tapes and gradients reduced in
a fixed order, so a full run is byte-deterministic for a given seed.  The
per-epoch telemetry line is `epoch=<i> loss=<f> mae_train=<f>`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bayes import BayesParams
from .core import FormatError, GrayImage, PointAnnotations, Scene
from .network import ModelParams, NetConfig, full_forward, init_params, pass1_param_names

CHECKPOINT_MAGIC = b"RACK"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Aborted run: non-finite loss or invalid training inputs."""


def _training_bayes_default() -> BayesParams:
    """Training recipe default: a wider Gaussian than the loss module's own
    default.  At 64x64 toy scale, delta 16 keeps the posterior force field
    majority-foreground, which is what makes from-scratch training converge
    instead of collapsing the density to zero (measured, not theorized)."""
    return BayesParams(delta=16.0, d_ratio=0.1)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    crop: int = 64
    epochs: int = 30
    bayes: BayesParams = field(default_factory=_training_bayes_default)
    net: NetConfig = field(default_factory=NetConfig)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.crop < 16 or self.crop % 8:
            raise ValueError(f"crop must be >= 16 and divisible by 8, got {self.crop}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "crop": self.crop,
            "epochs": self.epochs,
            "delta": self.bayes.delta,
            "d_ratio": self.bayes.d_ratio,
            "net": self.net.to_dict(),
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "clip_norm": self.clip_norm,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(
            lr=doc["lr"],
            batch_size=doc["batch_size"],
            crop=doc["crop"],
            epochs=doc["epochs"],
            bayes=BayesParams(delta=doc["delta"], d_ratio=doc["d_ratio"]),
            net=NetConfig.from_dict(doc["net"]),
            seed=doc["seed"],
            beta1=doc["beta1"],
            beta2=doc["beta2"],
            eps=doc["eps"],
            clip_norm=doc["clip_norm"],
        )


@dataclass
class OptState:
    """Adam first/second moments per parameter, plus the step counter."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def fresh(cls, params: ModelParams) -> "OptState":
        return cls(
            step=0,
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    mae_train: float
    pass1_grad_min: float   # smallest per-batch priority-path gradient norm
    pass1_grad_mean: float

    def telemetry(self) -> str:
        return f"epoch={self.epoch} loss={self.mean_loss:.6f} mae_train={self.mae_train:.6f}"


def random_crop(scene: Scene, size: int, rng: np.random.Generator) -> Scene:
    """Uniformly positioned square crop; annotations shifted, outsiders dropped."""
    h, w = scene.image.height, scene.image.width
    if size > h or size > w:
        raise ValueError(f"crop {size} exceeds image {h}x{w}")
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    window = scene.image.pixels[y0 : y0 + size, x0 : x0 + size]
    pts = scene.annotations.points
    if len(pts):
        keep = (
            (pts[:, 0] >= x0)
            & (pts[:, 0] < x0 + size)
            & (pts[:, 1] >= y0)
            & (pts[:, 1] < y0 + size)
        )
        shifted = pts[keep] - np.array([x0, y0], dtype=np.float64)
    else:
        shifted = pts
    return Scene(GrayImage(window), PointAnnotations(shifted))


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.square(g, dtype=np.float64).sum())
    return float(np.sqrt(total))


def _adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptState,
               cfg: TrainConfig) -> ModelParams:
    state.step += 1
    t = state.step
    b1 = np.float32(cfg.beta1)
    b2 = np.float32(cfg.beta2)
    corr1 = np.float32(1.0 - cfg.beta1**t)
    corr2 = np.float32(1.0 - cfg.beta2**t)
    lr = np.float32(cfg.lr)
    eps = np.float32(cfg.eps)
    new_params: ModelParams = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (np.float32(1.0) - b1) * g
        state.v[name] = b2 * state.v[name] + (np.float32(1.0) - b2) * g * g
        m_hat = state.m[name] / corr1
        v_hat = state.v[name] / corr2
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params


def train_epoch(
    params: ModelParams,
    scenes: list[Scene],
    cfg: TrainConfig,
    state: OptState,
    epoch: int,
) -> tuple[ModelParams, OptState, EpochStats]:
    """One shuffle-and-batch pass; deterministic in (cfg.seed, epoch)."""
    if not scenes:
        raise TrainingError("empty training set")
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(scenes))
    p1_names = [n for n in pass1_param_names(cfg.net) if n in params]

    losses: list[float] = []
    abs_errors: list[float] = []
    batch_norms: list[float] = []

    for start in range(0, len(order), cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        grad_sum: dict[str, np.ndarray] = {k: np.zeros_like(a) for k, a in params.items()}
        for sample_pos, idx in enumerate(batch):
            crop = random_crop(scenes[idx], cfg.crop, rng)
            res = full_forward(
                crop.image.pixels,
                crop.annotations.points,
                params,
                cfg.net,
                cfg.bayes,
                dtype=np.float32,
            )
            loss_val = float(res.loss.data)
            if not np.isfinite(loss_val):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, sample {int(idx)} "
                    f"(batch position {sample_pos})"
                )
            ad.backward(res.loss)
            losses.append(loss_val)
            abs_errors.append(
                abs(float(res.density.data.sum(dtype=np.float64)) - len(crop.annotations))
            )
            for name, leaf in res.leaves.items():
                if leaf.grad is not None:
                    grad_sum[name] += leaf.grad

        inv = np.float32(1.0 / len(batch))
        grads = {k: g * inv for k, g in grad_sum.items()}
        batch_norms.append(_global_norm({k: grads[k] for k in p1_names}))
        norm = _global_norm(grads)
        if norm > cfg.clip_norm:
            factor = np.float32(cfg.clip_norm / norm)
            grads = {k: g * factor for k, g in grads.items()}
        params = _adam_step(params, grads, state, cfg)

    stats = EpochStats(
        epoch=epoch,
        mean_loss=float(np.mean(losses)),
        mae_train=float(np.mean(abs_errors)),
        pass1_grad_min=float(min(batch_norms)),
        pass1_grad_mean=float(np.mean(batch_norms)),
    )
    return params, state, stats


def train(
    scenes: list[Scene],
    cfg: TrainConfig,
    log_path=None,
    emit=print,
) -> tuple[ModelParams, list[EpochStats]]:
    """Full run from fresh parameters; emits one telemetry line per epoch."""
    for scene in scenes:
        if cfg.crop > scene.image.height or cfg.crop > scene.image.width:
            raise TrainingError(
                f"crop {cfg.crop} exceeds a {scene.image.height}x{scene.image.width} image"
            )
    params = init_params(cfg.net)
    state = OptState.fresh(params)
    history: list[EpochStats] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if log_fh:
            log_fh.write("epoch,loss,mae_train,pass1_grad_min,pass1_grad_mean\n")
        for epoch in range(cfg.epochs):
            params, state, stats = train_epoch(params, scenes, cfg, state, epoch)
            history.append(stats)
            if emit:
                emit(stats.telemetry())
            if log_fh:
                log_fh.write(
                    f"{stats.epoch},{stats.mean_loss:.9g},{stats.mae_train:.9g},"
                    f"{stats.pass1_grad_min:.9g},{stats.pass1_grad_mean:.9g}\n"
                )
    finally:
        if log_fh:
            log_fh.close()
    return params, history


# ---------------------------------------------------------------------------
# RACK checkpoint format
# ---------------------------------------------------------------------------


def _u32(value: int) -> bytes:
    return np.array([value], dtype="<u4").tobytes()


def save_checkpoint(params: ModelParams, cfg: TrainConfig, path) -> None:
    """Magic, version, length-prefixed config JSON, then named float32 records."""
    doc = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_u32(CHECKPOINT_VERSION))
        fh.write(_u32(len(doc)))
        fh.write(doc)
        for name, arr in params.items():
            name_b = name.encode("utf-8")
            fh.write(_u32(len(name_b)))
            fh.write(name_b)
            fh.write(_u32(arr.ndim))
            for dim in arr.shape:
                fh.write(_u32(dim))
            fh.write(arr.astype("<f4").tobytes(order="C"))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return int(np.frombuffer(self.take(4), dtype="<u4")[0])

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.blob)


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = TrainConfig.from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unreadable config block ({exc})") from None
    params: ModelParams = {}
    while not r.exhausted:
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        n_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(r.take(4 * n_values), dtype="<f4").reshape(shape)
        params[name] = data.copy()
    return params, cfg
