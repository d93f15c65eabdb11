"""Miniature two-pass counting network with priority-map feedback.

Pass 1 extracts multi-scale features (strides 2, 4, 8, 8), runs a
multi-grid pooled context head and a parallel dilated-convolution head,
and decodes them into a full-resolution priority map in [0, 1].  The
priority map re-enters through the column-relevance block to produce an
enhanced input, and pass 2 (shared weights by default) turns that into a
non-negative density map via sibling feature / attention heads.

Parameters live as plain float32 arrays in a name -> array map and are
bound to a fresh tape per forward pass, so verification can run the same
network at float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor
from .bayes import BayesParams, bayes_loss
from .core import DensityMap, GrayImage, PriorityMap
from .region_aware import RAConfig, ra_apply

ModelParams = dict[str, np.ndarray]


@dataclass(frozen=True)
class NetConfig:
    widths: tuple[int, ...] = (8, 16, 32, 32)
    pool_grids: tuple[int, ...] = (1, 2, 3, 6)
    dilation_rates: tuple[int, ...] = (1, 2, 3, 4)
    ra: RAConfig = field(default_factory=RAConfig)
    seed: int = 0
    two_tower: bool = False
    context_channels: int = 8
    aspp_channels: int = 8
    decoder_channels: int = 16
    head_channels: int = 16
    density_bias: float = -6.0  # softplus(-6) ~ 2.5e-3/cell: start near count scale

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least 2 backbone blocks")
        if any(w < 1 for w in self.widths):
            raise ValueError("all channel widths must be >= 1")
        if any(g < 1 for g in self.pool_grids):
            raise ValueError("pooling grids must be >= 1")
        if any(r < 1 for r in self.dilation_rates):
            raise ValueError("dilation rates must be >= 1")

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "pool_grids": list(self.pool_grids),
            "dilation_rates": list(self.dilation_rates),
            "ra_temperature": self.ra.temperature,
            "ra_column_normalize": self.ra.column_normalize,
            "seed": self.seed,
            "two_tower": self.two_tower,
            "context_channels": self.context_channels,
            "aspp_channels": self.aspp_channels,
            "decoder_channels": self.decoder_channels,
            "head_channels": self.head_channels,
            "density_bias": self.density_bias,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetConfig":
        return cls(
            widths=tuple(doc["widths"]),
            pool_grids=tuple(doc["pool_grids"]),
            dilation_rates=tuple(doc["dilation_rates"]),
            ra=RAConfig(
                temperature=doc["ra_temperature"],
                column_normalize=doc["ra_column_normalize"],
            ),
            seed=doc["seed"],
            two_tower=doc["two_tower"],
            context_channels=doc["context_channels"],
            aspp_channels=doc["aspp_channels"],
            decoder_channels=doc["decoder_channels"],
            head_channels=doc["head_channels"],
            density_bias=doc["density_bias"],
        )


@dataclass
class ForwardResult:
    """Everything a training step needs from one sample."""

    loss: Tensor
    density: Tensor   # [H, W], non-negative
    priority: Tensor  # [H, W], in [0, 1]
    leaves: dict[str, Tensor]
    tape: Tape


# ---------------------------------------------------------------------------
# Parameter construction
# ---------------------------------------------------------------------------


def _conv_spec(cfg: NetConfig) -> list[tuple[str, int, int, int, float | None]]:
    """(name, out_ch, in_ch, kernel_side, bias_init) for every conv, fixed order."""
    w = cfg.widths
    cc, ac, dc, hc = (
        cfg.context_channels,
        cfg.aspp_channels,
        cfg.decoder_channels,
        cfg.head_channels,
    )
    spec: list[tuple[str, int, int, int, float | None]] = []

    def backbone(prefix: str):
        in_ch = 1
        for i, out_ch in enumerate(w):
            spec.append((f"{prefix}.block{i + 1}", out_ch, in_ch, 3, 0.0))
            in_ch = out_ch

    backbone("bb")
    if cfg.two_tower:
        backbone("bb2")
    for g in cfg.pool_grids:
        spec.append((f"ctx.scale{g}", cc, w[-2], 1, 0.0))
    spec.append(("ctx.fuse", w[-2], w[-2] + cc * len(cfg.pool_grids), 1, 0.0))
    for r in cfg.dilation_rates:
        spec.append((f"aspp.rate{r}", ac, w[-1], 3, 0.0))
    spec.append(("aspp.fuse", w[-1] // 2, ac * len(cfg.dilation_rates), 1, 0.0))
    spec.append(("dec.fuse1", dc, w[-2] + w[-1] // 2 + w[1], 1, 0.0))
    spec.append(("dec.fuse2", dc // 2, dc + w[0], 1, 0.0))
    spec.append(("dec.out", 1, dc // 2, 1, 0.0))
    spec.append(("head.fuse1", hc, w[-1] + w[1], 1, 0.0))
    spec.append(("head.fuse2", hc, hc + w[0], 1, 0.0))
    spec.append(("head.feat", hc, hc, 3, 0.0))
    spec.append(("head.att", hc, hc, 3, 0.0))
    spec.append(("head.out", 1, hc, 1, cfg.density_bias))
    return spec


def init_params(cfg: NetConfig) -> ModelParams:
    """Fan-in scaled uniform weights, deterministic per seed; float32."""
    rng = np.random.default_rng(cfg.seed)
    params: ModelParams = {}
    for name, out_ch, in_ch, k, bias_init in _conv_spec(cfg):
        fan_in = in_ch * k * k
        bound = np.sqrt(6.0 / fan_in)
        if name == "head.out":
            # keep the initial density bias-dominated so the count starts at a
            # controlled scale instead of whatever the random features produce
            bound *= 0.1
        params[f"{name}.k"] = rng.uniform(
            -bound, bound, size=(out_ch, in_ch, k, k)
        ).astype(np.float32)
        params[f"{name}.b"] = np.full(out_ch, bias_init, dtype=np.float32)
    return params


def pass1_param_names(cfg: NetConfig) -> list[str]:
    """Parameters used only by the priority path (context, dilated head, decoder)."""
    names = []
    for name, *_ in _conv_spec(cfg):
        if name.startswith(("ctx.", "aspp.", "dec.")):
            names += [f"{name}.k", f"{name}.b"]
    return names


def bind(tape: Tape, params: ModelParams, requires_grad: bool = True) -> dict[str, Tensor]:
    """Wrap the parameter arrays as leaf tensors on a tape."""
    return {name: tape.tensor(arr, requires_grad=requires_grad) for name, arr in params.items()}


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


def _check_input_shape(h: int, w: int) -> None:
    if h < 16 or w < 16 or h % 8 or w % 8:
        raise ShapeError(
            f"input sides must be >= 16 and divisible by 8, got {h}x{w}; "
            f"reflect-pad to {-(-max(h, 16) // 8) * 8}x{-(-max(w, 16) // 8) * 8} first"
        )


def _conv(x: Tensor, p: dict[str, Tensor], name: str, dilation: int = 1) -> Tensor:
    return ad.conv2d(x, p[f"{name}.k"], bias=p[f"{name}.b"], dilation=dilation)


def _backbone(x: Tensor, p: dict[str, Tensor], cfg: NetConfig, prefix: str):
    """Features at strides 2, 4, 8, 8 (pooling after the first three blocks)."""
    n = len(cfg.widths)
    feats = []
    h = x
    for i in range(n):
        h = ad.relu(_conv(h, p, f"{prefix}.block{i + 1}"))
        if i < min(3, n - 1):
            h = ad.avgpool(h, 2)
        feats.append(h)
    return feats


def pass1(x: Tensor, p: dict[str, Tensor], cfg: NetConfig) -> Tensor:
    """Image tensor [1, H, W] -> priority tensor [1, H, W] in [0, 1]."""
    _, h, w = x.shape
    _check_input_shape(h, w)
    feats = _backbone(x, p, cfg, "bb")
    f2, f3, f4, f5 = feats[0], feats[1], feats[-2], feats[-1]

    fh, fw = f4.shape[1], f4.shape[2]
    if any(g > min(fh, fw) for g in cfg.pool_grids):
        raise ValueError(
            f"pooling grids {cfg.pool_grids} exceed the {fh}x{fw} context feature map"
        )

    # multi-grid pooled context on the stride-8 features
    branches = [f4]
    for g in cfg.pool_grids:
        b = ad.relu(_conv(ad.adaptive_avgpool(f4, g), p, f"ctx.scale{g}"))
        branches.append(ad.upsample_bilinear(b, fh, fw))
    ctx = ad.relu(_conv(ad.concat_channels(branches), p, "ctx.fuse"))

    # parallel dilated convolutions on the deepest features
    rate_outs = [
        ad.relu(_conv(f5, p, f"aspp.rate{r}", dilation=r)) for r in cfg.dilation_rates
    ]
    aspp = ad.relu(_conv(ad.concat_channels(rate_outs), p, "aspp.fuse"))

    # decode: everything meets the stride-4 skip, then stride 2, then full size
    h4, w4 = f3.shape[1], f3.shape[2]
    d1 = ad.concat_channels(
        [ad.upsample_bilinear(ctx, h4, w4), ad.upsample_bilinear(aspp, h4, w4), f3]
    )
    d1 = ad.relu(_conv(d1, p, "dec.fuse1"))
    h2, w2 = f2.shape[1], f2.shape[2]
    d2 = ad.concat_channels([ad.upsample_bilinear(d1, h2, w2), f2])
    d2 = ad.relu(_conv(d2, p, "dec.fuse2"))
    logits = ad.upsample_bilinear(_conv(d2, p, "dec.out"), h, w)
    return ad.sigmoid(logits)


def feedback_apply(image: Tensor, priority: Tensor, cfg: NetConfig) -> Tensor:
    """Enhance a [H, W] image with its [H, W] priority map (column relevance)."""
    return ra_apply(image, priority, cfg.ra)


def pass2(x: Tensor, p: dict[str, Tensor], cfg: NetConfig) -> Tensor:
    """Enhanced input [1, H, W] -> non-negative density tensor [1, H, W].

    Deep features are brought back to stride 2 through two skip fusions so
    the density heads can resolve individual heads, which are only a few
    pixels wide at this scale.
    """
    _, h, w = x.shape
    _check_input_shape(h, w)
    prefix = "bb2" if cfg.two_tower else "bb"
    feats = _backbone(x, p, cfg, prefix)
    f2, f3, f5 = feats[0], feats[1], feats[-1]

    u1 = ad.upsample_bilinear(f5, f3.shape[1], f3.shape[2])
    d1 = ad.relu(_conv(ad.concat_channels([u1, f3]), p, "head.fuse1"))
    u2 = ad.upsample_bilinear(d1, f2.shape[1], f2.shape[2])
    d2 = ad.relu(_conv(ad.concat_channels([u2, f2]), p, "head.fuse2"))

    feat = ad.relu(_conv(d2, p, "head.feat"))
    att = ad.sigmoid(_conv(d2, p, "head.att"))
    fused = _conv(ad.mul(feat, att), p, "head.out")
    density = ad.softplus(fused)
    return ad.upsample_bilinear(density, h, w)


def full_forward(
    image: np.ndarray,
    heads: np.ndarray,
    params: ModelParams,
    cfg: NetConfig,
    bayes: BayesParams,
    dtype=np.float32,
    requires_grad: bool = True,
) -> ForwardResult:
    """Compose pass 1 -> feedback -> pass 2 -> point-supervision loss."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"expected a 2D image, got shape {image.shape}")
    tape = Tape(dtype)
    leaves = bind(tape, params, requires_grad)
    x2d = tape.constant(image)
    x = ad.reshape(x2d, (1,) + image.shape)

    prio = pass1(x, leaves, cfg)
    prio2d = ad.reshape(prio, image.shape)
    enhanced = feedback_apply(x2d, prio2d, cfg)
    density = pass2(ad.reshape(enhanced, (1,) + image.shape), leaves, cfg)
    density2d = ad.reshape(density, image.shape)
    loss = bayes_loss(density2d, heads, bayes)
    return ForwardResult(loss=loss, density=density2d, priority=prio2d,
                         leaves=leaves, tape=tape)


def predict(
    img: GrayImage, params: ModelParams, cfg: NetConfig, dtype=np.float32
) -> tuple[DensityMap, PriorityMap]:
    """Inference convenience: run both passes without gradients."""
    tape = Tape(dtype)
    leaves = bind(tape, params, requires_grad=False)
    x2d = tape.constant(img.pixels)
    x = ad.reshape(x2d, (1, img.height, img.width))
    prio = pass1(x, leaves, cfg)
    enhanced = feedback_apply(x2d, ad.reshape(prio, (img.height, img.width)), cfg)
    density = pass2(ad.reshape(enhanced, (1, img.height, img.width)), leaves, cfg)
    return (
        DensityMap(np.asarray(density.data[0], dtype=np.float64)),
        PriorityMap(np.clip(np.asarray(prio.data[0], dtype=np.float64), 0.0, 1.0)),
    )


def priority_of(img: GrayImage, params: ModelParams, cfg: NetConfig) -> PriorityMap:
    """Pass-1 convenience: the priority map for a single image."""
    tape = Tape(np.float32)
    leaves = bind(tape, params, requires_grad=False)
    x = tape.constant(img.pixels.reshape(1, img.height, img.width))
    prio = pass1(x, leaves, cfg)
    return PriorityMap(np.clip(np.asarray(prio.data[0], dtype=np.float64), 0.0, 1.0))


def two_tower_variant(cfg: NetConfig) -> NetConfig:
    return replace(cfg, two_tower=True)
