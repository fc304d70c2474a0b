"""Procedural scenes with synthetic faces over textured backgrounds.

Faces are layered templates (oval base, two eye blobs, a mouth bar) with
per-instance color, rotation and aspect jitter, drawn in a warm palette
that the cool, desaturated backgrounds never use. Face side lengths are
sampled near the detector's anchor scales (a jittered multiple of one of
the configured size centers) so that every face has at least one anchor
above the positive matching threshold; sizes drawn uniformly over the
whole range would leave coverage gaps between anchor scales and cap the
attainable recall regardless of training.

Per-image RNG streams derive from (seed, index), so generating a range in
parallel or serially yields bit-identical results.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArtifactIOError, ConfigError, LayoutError
from .fileio import read_ppm, write_ppm
from .geometry import BoundingBox, iou

DIFFICULTIES = ("easy", "medium", "hard")


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of the synthetic scene distribution."""

    image_size: int = 160
    faces_min: int = 1
    faces_max: int = 3
    face_scale_min: float = 14.0
    face_scale_max: float = 150.0
    face_size_centers: tuple[float, ...] = (16.0, 32.0, 64.0, 128.0)
    face_size_jitter: float = 0.15
    max_gt_iou: float = 0.3
    template_family: int = 0
    background_family: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.faces_min < 1 or self.faces_max < self.faces_min:
            raise ConfigError("need 1 <= faces_min <= faces_max")
        if not (0 < self.face_scale_min < self.face_scale_max):
            raise ConfigError("need 0 < face_scale_min < face_scale_max")
        if self.template_family not in (0, 1) or self.background_family not in (0, 1):
            raise ConfigError("template/background family must be 0 or 1")


@dataclass
class LabeledImage:
    """One scene: (1,3,H,W) float32 pixels in [0,1] plus box labels."""

    image: np.ndarray
    boxes: list[BoundingBox]
    difficulty: list[str] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.image.shape[2]

    @property
    def width(self) -> int:
        return self.image.shape[3]


def _rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def _value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    grid = rng.random((cells + 1, cells + 1))
    ys = np.linspace(0, cells, size, endpoint=False)
    xs = np.linspace(0, cells, size, endpoint=False)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = grid[y0][:, x0]
    tr = grid[y0][:, x0 + 1]
    bl = grid[y0 + 1][:, x0]
    br = grid[y0 + 1][:, x0 + 1]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
            + bl * fy * (1 - fx) + br * fy * fx)


def _background(rng: np.random.Generator, size: int, family: int) -> np.ndarray:
    coarse = _value_noise(rng, size, 5)
    fine = _value_noise(rng, size, 20)
    lum = 0.25 + 0.5 * (0.65 * coarse + 0.35 * fine)
    # cool, desaturated tint keeps backgrounds apart from the face palette
    hue = rng.uniform(0.30, 0.90)
    sat = rng.uniform(0.05, 0.22)
    tint = np.array(colorsys.hsv_to_rgb(hue, sat, 1.0))
    img = lum[None, :, :] * tint[:, None, None]
    n_rects = rng.integers(4, 9) if family == 0 else rng.integers(8, 15)
    for _ in range(n_rects):
        rw = int(rng.integers(8, size // 2))
        rh = int(rng.integers(8, size // 2))
        x0 = int(rng.integers(0, size - rw + 1))
        y0 = int(rng.integers(0, size - rh + 1))
        hue = rng.uniform(0.30, 0.90)
        color = np.array(colorsys.hsv_to_rgb(hue, rng.uniform(0.1, 0.5), rng.uniform(0.35, 0.9)))
        alpha = rng.uniform(0.4, 0.8)
        img[:, y0:y0 + rh, x0:x0 + rw] *= (1 - alpha)
        img[:, y0:y0 + rh, x0:x0 + rw] += alpha * color[:, None, None]
    return np.clip(img, 0.0, 1.0)


def _soft_ellipse(u: np.ndarray, v: np.ndarray, cu: float, cv: float,
                  su: float, sv: float, px: float) -> np.ndarray:
    """Anti-aliased ellipse coverage in unit face coordinates.

    px is the pixel scale of one unit, used to keep the soft edge ~1px wide.
    """
    q = ((u - cu) / su) ** 2 + ((v - cv) / sv) ** 2
    edge = min(su, sv) * px
    return np.clip((1.0 - q) * 0.5 * max(edge, 1.0), 0.0, 1.0)


def _draw_face(img: np.ndarray, rng: np.random.Generator, box: BoundingBox,
               family: int) -> None:
    h_img, w_img = img.shape[1], img.shape[2]
    pad = int(math.ceil(max(box.w, box.h) * 0.75))
    x_lo = max(0, int(box.cx) - pad)
    x_hi = min(w_img, int(box.cx) + pad + 1)
    y_lo = max(0, int(box.cy) - pad)
    y_hi = min(h_img, int(box.cy) + pad + 1)
    ys = np.arange(y_lo, y_hi)[:, None] + 0.5
    xs = np.arange(x_lo, x_hi)[None, :] + 0.5
    theta = rng.uniform(-0.20, 0.20)
    ct, st = math.cos(theta), math.sin(theta)
    dx = xs - box.cx
    dy = ys - box.cy
    u = (ct * dx + st * dy) / box.w
    v = (-st * dx + ct * dy) / box.h
    px = min(box.w, box.h)

    skin_h = rng.uniform(0.02, 0.11)
    skin = np.array(colorsys.hsv_to_rgb(skin_h, rng.uniform(0.35, 0.6), rng.uniform(0.55, 0.95)))
    dark = np.array(colorsys.hsv_to_rgb(rng.uniform(0.0, 0.1), rng.uniform(0.2, 0.5), rng.uniform(0.05, 0.25)))
    mouth_col = np.array(colorsys.hsv_to_rgb(rng.uniform(0.96, 1.0) % 1.0, rng.uniform(0.5, 0.8), rng.uniform(0.25, 0.5)))

    if family == 0:
        base_su, base_sv = 0.46, 0.47
        eye_u, eye_v = 0.17, -0.14
        eye_su, eye_sv = 0.075, 0.055
        mouth_v, mouth_su, mouth_sv = 0.24, 0.20, 0.05
    else:
        base_su, base_sv = 0.48, 0.44
        eye_u, eye_v = 0.19, -0.10
        eye_su, eye_sv = 0.06, 0.06
        mouth_v, mouth_su, mouth_sv = 0.27, 0.16, 0.06

    region = img[:, y_lo:y_hi, x_lo:x_hi]
    for cov, color in (
        (_soft_ellipse(u, v, 0.0, 0.0, base_su, base_sv, px), skin),
        (_soft_ellipse(u, v, -eye_u, eye_v, eye_su, eye_sv, px), dark),
        (_soft_ellipse(u, v, eye_u, eye_v, eye_su, eye_sv, px), dark),
        (_soft_ellipse(u, v, 0.0, mouth_v, mouth_su, mouth_sv, px), mouth_col),
    ):
        region *= (1 - cov)[None, :, :]
        region += cov[None, :, :] * color[:, None, None]


def _sample_face_size(rng: np.random.Generator, spec: SceneSpec) -> float:
    j = spec.face_size_jitter
    centers = [c for c in spec.face_size_centers
               if c * (1 + j) >= spec.face_scale_min and c * (1 - j) <= spec.face_scale_max]
    if not centers:
        raise ConfigError("no face size centers inside the configured scale range")
    c = centers[rng.integers(0, len(centers))]
    size = c * rng.uniform(1 - j, 1 + j)
    return float(np.clip(size, spec.face_scale_min, spec.face_scale_max))


def generate_one(spec: SceneSpec, index: int) -> LabeledImage:
    """Generate scene number `index`; deterministic in (spec.seed, index)."""
    rng = _rng_for(spec.seed, index)
    size = spec.image_size
    img = _background(rng, size, spec.background_family)
    n_faces = int(rng.integers(spec.faces_min, spec.faces_max + 1))
    for attempt in range(100):
        boxes: list[BoundingBox] = []
        ok = True
        for _ in range(n_faces):
            s = _sample_face_size(rng, spec)
            w = s * rng.uniform(0.95, 1.05)
            h = s * rng.uniform(0.95, 1.05)
            if w >= size - 2 or h >= size - 2:
                ok = False
                break
            cx = rng.uniform(w / 2 + 1, size - w / 2 - 1)
            cy = rng.uniform(h / 2 + 1, size - h / 2 - 1)
            cand = BoundingBox(cx, cy, w, h)
            if any(iou(cand, b) > spec.max_gt_iou for b in boxes):
                ok = False
                break
            boxes.append(cand)
        if ok:
            break
    else:
        raise LayoutError(f"could not place {n_faces} faces after 100 attempts")
    for box in boxes:
        _draw_face(img, rng, box, spec.template_family)
    out = np.clip(img, 0.0, 1.0).astype(np.float32)[None]
    return LabeledImage(out, boxes)


def tag_difficulty(images: Sequence[LabeledImage]) -> None:
    """Tag every box easy/medium/hard by size tercile (small faces are hard)."""
    sizes = np.array([math.sqrt(b.w * b.h) for im in images for b in im.boxes])
    if sizes.size == 0:
        return
    q33, q67 = np.quantile(sizes, [1 / 3, 2 / 3])
    for im in images:
        im.difficulty = []
        for b in im.boxes:
            s = math.sqrt(b.w * b.h)
            if s <= q33:
                im.difficulty.append("hard")
            elif s <= q67:
                im.difficulty.append("medium")
            else:
                im.difficulty.append("easy")


def generate(spec: SceneSpec, count: int) -> list[LabeledImage]:
    """Generate `count` labeled scenes with difficulty tags."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    images = [generate_one(spec, i) for i in range(count)]
    tag_difficulty(images)
    return images


def _resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    from . import backend

    return backend.resample_bilinear_forward(
        np.ascontiguousarray(image), out_h, out_w,
        image.shape[2] / out_h, image.shape[3] / out_w, 0.0, 0.0)


def augment(img: LabeledImage, flip_prob: float, jitter_factors: Sequence[float],
            rng: np.random.Generator, size_cap: int = 320) -> LabeledImage:
    """Random horizontal flip plus scale jitter, boxes kept consistent.

    If the jittered longer side exceeds size_cap, a random size_cap crop
    containing at least one ground-truth box is taken (retried up to 20
    times); boxes whose centers leave the crop are dropped.
    """
    image = img.image
    boxes = list(img.boxes)
    tags = list(img.difficulty) if img.difficulty else ["medium"] * len(boxes)
    w_img = img.width
    if rng.random() < flip_prob:
        image = image[:, :, :, ::-1].copy()
        boxes = [BoundingBox(w_img - b.cx, b.cy, b.w, b.h) for b in boxes]
    factor = float(jitter_factors[rng.integers(0, len(jitter_factors))])
    if factor != 1.0:
        out_h = max(8, int(round(image.shape[2] * factor)))
        out_w = max(8, int(round(image.shape[3] * factor)))
        fy = out_h / image.shape[2]
        fx = out_w / image.shape[3]
        image = _resize_image(image, out_h, out_w)
        boxes = [BoundingBox(b.cx * fx, b.cy * fy, b.w * fx, b.h * fy) for b in boxes]
    h, w = image.shape[2], image.shape[3]
    if max(h, w) > size_cap and boxes:
        ch, cw = min(h, size_cap), min(w, size_cap)
        for _ in range(20):
            k = int(rng.integers(0, len(boxes)))
            anchor_box = boxes[k]
            # window origin range that keeps the picked box's center inside
            x_a = max(0, int(math.ceil(anchor_box.cx)) - cw + 1)
            x_b = min(w - cw, int(math.floor(anchor_box.cx)))
            y_a = max(0, int(math.ceil(anchor_box.cy)) - ch + 1)
            y_b = min(h - ch, int(math.floor(anchor_box.cy)))
            if x_b < x_a or y_b < y_a:
                continue
            x_lo = int(rng.integers(x_a, x_b + 1))
            y_lo = int(rng.integers(y_a, y_b + 1))
            kept_idx = [i for i, b in enumerate(boxes)
                        if x_lo < b.cx < x_lo + cw and y_lo < b.cy < y_lo + ch]
            if kept_idx:
                image = image[:, :, y_lo:y_lo + ch, x_lo:x_lo + cw].copy()
                new_boxes = []
                new_tags = []
                for i in kept_idx:
                    b = boxes[i]
                    x1 = max(b.x1 - x_lo, 0.0)
                    y1 = max(b.y1 - y_lo, 0.0)
                    x2 = min(b.x2 - x_lo, float(cw))
                    y2 = min(b.y2 - y_lo, float(ch))
                    new_boxes.append(BoundingBox.from_corners(x1, y1, x2, y2))
                    new_tags.append(tags[i])
                boxes, tags = new_boxes, new_tags
                break
    return LabeledImage(np.ascontiguousarray(image, dtype=np.float32), boxes, tags)


class Dataset:
    """In-memory dataset; pixels are kept as uint8 and decoded on access."""

    def __init__(self, images_u8: list[np.ndarray], boxes: list[list[BoundingBox]],
                 difficulty: list[list[str]]):
        self._images = images_u8
        self.boxes = boxes
        self.difficulty = difficulty

    def __len__(self) -> int:
        return len(self._images)

    def __getitem__(self, i: int) -> LabeledImage:
        img = (self._images[i].astype(np.float32) / 255.0)[None]
        return LabeledImage(img, self.boxes[i], self.difficulty[i])

    @staticmethod
    def from_images(images: Sequence[LabeledImage]) -> "Dataset":
        u8 = [np.clip(np.rint(im.image[0] * 255.0), 0, 255).astype(np.uint8) for im in images]
        return Dataset(u8, [im.boxes for im in images], [im.difficulty for im in images])


def dump_dataset(path: Path | str, images: Sequence[LabeledImage], force: bool = False) -> None:
    """Write PPM images plus a JSON-lines annotation file."""
    root = Path(path)
    if root.exists() and any(root.iterdir()) and not force:
        raise ArtifactIOError(f"{root} exists and is not empty (use force)")
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, im in enumerate(images):
        rel = f"images/{i:06d}.ppm"
        write_ppm(root / rel, im.image)
        lines.append(json.dumps({
            "image": rel,
            "boxes": [[b.cx, b.cy, b.w, b.h] for b in im.boxes],
            "difficulty": im.difficulty,
        }, sort_keys=True))
    with open(root / "annotations.jsonl", "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path: Path | str) -> Dataset:
    root = Path(path)
    ann = root / "annotations.jsonl"
    if not ann.is_file():
        raise ArtifactIOError(f"missing annotation file {ann}")
    images, boxes, tags = [], [], []
    with open(ann, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            arr = read_ppm(root / rec["image"])
            images.append(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))
            boxes.append([BoundingBox(*b) for b in rec["boxes"]])
            tags.append(list(rec["difficulty"]))
    return Dataset(images, boxes, tags)
