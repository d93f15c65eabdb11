"""Deterministic synthetic crowd scenes: bright shaded head discs over a
noisy background with unannotated clutter blobs.

Head radii grow from the top of the frame to the bottom (a perspective
gradient), clutter blobs imitate background structures that look vaguely
head-like but carry no annotation, and uniform noise sits on top.  Every
scene is a pure function of (seed, index), so datasets regenerate
bit-identically in any order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    GrayImage,
    PointAnnotations,
    Scene,
    load_annotations,
    load_density,
    load_image,
    rasterize_density,
    save_annotations,
    save_density,
    save_image,
)

DENSITY_SIGMA = 2.0  # reference-density Gaussian spread, pixels

HEAD_PEAK_LO, HEAD_PEAK_HI = 0.85, 1.0
CLUTTER_PEAK_LO, CLUTTER_PEAK_HI = 0.15, 0.30
CLUTTER_RADIUS_LO, CLUTTER_RADIUS_HI = 3.0, 8.0
BACKGROUND_LEVEL = 0.08


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    min_heads: int = 1
    max_heads: int = 15
    min_radius: float = 2.0
    max_radius: float = 5.0
    noise: float = 0.05
    min_clutter: int = 0
    max_clutter: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("scene sides must be at least 8 pixels")
        if not (0 <= self.min_heads <= self.max_heads):
            raise ValueError("need 0 <= min_heads <= max_heads")
        if not (1.0 <= self.min_radius <= self.max_radius):
            raise ValueError("need 1 <= min_radius <= max_radius")
        if self.max_radius >= min(self.width, self.height) / 2:
            raise ValueError(
                f"max_radius {self.max_radius} must stay below half the shorter "
                f"side ({min(self.width, self.height) / 2})"
            )
        if not (0.0 <= self.noise < 1.0):
            raise ValueError("noise amplitude must lie in [0, 1)")
        if not (0 <= self.min_clutter <= self.max_clutter):
            raise ValueError("need 0 <= min_clutter <= max_clutter")


def _stamp_disc(canvas: np.ndarray, x: float, y: float, radius: float, peak: float):
    """Add a radially shaded disc: peak at the center, zero at the rim."""
    h, w = canvas.shape
    r0 = max(0, int(np.floor(y - radius)))
    r1 = min(h, int(np.ceil(y + radius)) + 1)
    c0 = max(0, int(np.floor(x - radius)))
    c1 = min(w, int(np.ceil(x + radius)) + 1)
    ys = np.arange(r0, r1, dtype=np.float64)[:, None]
    xs = np.arange(c0, c1, dtype=np.float64)[None, :]
    d2 = ((ys - y) ** 2 + (xs - x) ** 2) / (radius * radius)
    canvas[r0:r1, c0:c1] += peak * np.clip(1.0 - d2, 0.0, None)


def gen_scene(spec: SceneSpec, index: int) -> Scene:
    """Render scene number `index`; deterministic in (spec.seed, index)."""
    rng = np.random.default_rng([spec.seed, int(index)])
    h, w = spec.height, spec.width
    canvas = np.full((h, w), BACKGROUND_LEVEL, dtype=np.float64)

    n_clutter = int(rng.integers(spec.min_clutter, spec.max_clutter + 1))
    for _ in range(n_clutter):
        cx = rng.uniform(0, w - 1)
        cy = rng.uniform(0, h - 1)
        cr = rng.uniform(CLUTTER_RADIUS_LO, CLUTTER_RADIUS_HI)
        peak = rng.uniform(CLUTTER_PEAK_LO, CLUTTER_PEAK_HI)
        _stamp_disc(canvas, cx, cy, cr, peak)

    n_heads = int(rng.integers(spec.min_heads, spec.max_heads + 1))
    pts = []
    for _ in range(n_heads):
        x = rng.uniform(0, w - 1)
        y = rng.uniform(0, h - 1)
        # perspective: heads lower in the frame are closer, hence larger
        depth = y / (h - 1)
        radius = spec.min_radius + (spec.max_radius - spec.min_radius) * depth
        radius = float(np.clip(radius * rng.uniform(0.9, 1.1), spec.min_radius, spec.max_radius))
        _stamp_disc(canvas, x, y, radius, rng.uniform(HEAD_PEAK_LO, HEAD_PEAK_HI))
        pts.append((x, y))

    if spec.noise > 0:
        canvas += rng.uniform(0.0, spec.noise, size=(h, w))
    canvas = np.clip(canvas, 0.0, 1.0)

    ann = PointAnnotations(np.array(pts, dtype=np.float64).reshape(len(pts), 2))
    density = rasterize_density(ann, h, w, DENSITY_SIGMA)
    return Scene(GrayImage(canvas), ann, density)


def head_mask(scene: Scene, spec: SceneSpec) -> np.ndarray:
    """Boolean mask of pixels within max_radius of any annotation."""
    h, w = scene.image.height, scene.image.width
    mask = np.zeros((h, w), dtype=bool)
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    for x, y in scene.annotations.points:
        mask |= (ys - y) ** 2 + (xs - x) ** 2 <= spec.max_radius**2
    return mask


# ---------------------------------------------------------------------------
# Dataset directories and their manifest
# ---------------------------------------------------------------------------


def gen_dataset(spec: SceneSpec, n_train: int, n_test: int, out_dir) -> Path:
    """Write images, annotations, reference densities, and manifest.json.

    Test scenes use indices n_train .. n_train + n_test - 1, so the same
    spec always produces the same bytes for every file.
    """
    out = Path(out_dir)
    manifest = {"train": [], "test": []}
    for split, count, base in (("train", n_train, 0), ("test", n_test, n_train)):
        (out / split).mkdir(parents=True, exist_ok=True)
        for i in range(count):
            scene = gen_scene(spec, base + i)
            stem = f"{split}/scene_{i:04d}"
            save_image(scene.image, out / f"{stem}.pgm")
            save_annotations(scene.annotations, out / f"{stem}.json")
            save_density(scene.density, out / f"{stem}.radm")
            manifest[split].append(
                {
                    "image": f"{stem}.pgm",
                    "annotations": f"{stem}.json",
                    "density": f"{stem}.radm",
                }
            )
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest_path


def load_manifest(manifest_path) -> dict:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for split in ("train", "test"):
        if split not in doc or not isinstance(doc[split], list):
            raise ValueError(f"{manifest_path}: manifest is missing the '{split}' list")
    return doc


def load_split(manifest_path, split: str, with_density: bool = False) -> list[Scene]:
    """Materialize one split's scenes relative to the manifest location."""
    doc = load_manifest(manifest_path)
    if split not in doc:
        raise ValueError(f"unknown split {split!r}")
    base = Path(manifest_path).parent
    scenes = []
    for entry in doc[split]:
        img = load_image(base / entry["image"])
        ann = load_annotations(base / entry["annotations"])
        density = load_density(base / entry["density"]) if with_density else None
        scenes.append(Scene(img, ann, density))
    return scenes
