"""Synthetic desk-scale dataset generation and on-disk dataset I/O.

Disk layout: <root>/images/<id>.png (8-bit RGB), <root>/masks/<id>.png
(8-bit class indices, 255 = IGNORE), <root>/classes.json (names, palette,
optional key bindings), <root>/manifest.json (provenance).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import GroundTruthMask, Image
from .seeding import substream

__all__ = [
    "SyntheticSpec",
    "Dataset",
    "default_palette",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
]

_BASE_PALETTE: tuple[tuple[int, int, int], ...] = (
    (96, 100, 108),   # slate background
    (202, 56, 46),    # crimson
    (58, 166, 80),    # green
    (224, 98, 70),    # ember (deliberately near crimson: a confusable pair)
    (62, 102, 206),   # blue
    (226, 178, 48),   # amber
    (150, 70, 190),   # violet
    (64, 182, 182),   # teal
)


def default_palette(num_classes: int) -> tuple[tuple[int, int, int], ...]:
    """Visually distinct display colors, extended around the hue wheel if needed."""
    colors = list(_BASE_PALETTE[:num_classes])
    i = 0
    while len(colors) < num_classes:
        hue = (i * 0.618033988749895) % 1.0
        k = hue * 6.0
        c = int(k) % 6
        f = k - int(k)
        v, p, q, t = 230, 60, int(230 - 170 * f), int(60 + 170 * f)
        rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][c]
        colors.append(rgb)
        i += 1
    return tuple(colors)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a reproducible dataset of noisy shapes on textured backgrounds."""

    num_images: int = 100
    height: int = 64
    width: int = 64
    num_classes: int = 4
    shapes_per_image: tuple[int, int] = (4, 8)
    noise_std: float = 0.14
    palette: tuple[tuple[int, int, int], ...] | None = None
    seed: int = 0
    id_prefix: str = "img_"

    def __post_init__(self) -> None:
        if self.num_images < 1:
            raise ValueError("num_images must be >= 1")
        if self.height < 8 or self.width < 8:
            raise ValueError("images must be at least 8x8")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        lo, hi = self.shapes_per_image
        if lo < 1 or hi < lo:
            raise ValueError(f"bad shapes_per_image range {self.shapes_per_image}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.palette is not None and len(self.palette) != self.num_classes:
            raise ValueError("palette must have one color per class")


@dataclass(frozen=True)
class Dataset:
    """Images with their ground-truth masks, class names and display palette."""

    images: tuple[Image, ...]
    masks: tuple[GroundTruthMask, ...]
    class_names: tuple[str, ...]
    palette: tuple[tuple[int, int, int], ...]
    keys: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "masks", tuple(self.masks))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "palette", tuple(tuple(c) for c in self.palette))
        if len(self.images) != len(self.masks):
            raise ValueError("one mask per image required")
        if len(self.class_names) != len(self.palette):
            raise ValueError("class_names and palette lengths differ")
        c = len(self.class_names)
        for img, mask in zip(self.images, self.masks):
            if img.id != mask.image_id:
                raise ValueError(f"image {img.id!r} paired with mask {mask.image_id!r}")
            if (img.height, img.width) != (mask.height, mask.width):
                raise ValueError(f"image {img.id!r}: mask dims do not match")
            if mask.num_classes != c:
                raise ValueError(f"mask {img.id!r}: num_classes {mask.num_classes} != {c}")
        if self.keys is not None:
            if len(self.keys) != c or len(set(self.keys)) != c:
                raise ValueError("keys must be unique, one per class")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.images)

    def ids(self) -> tuple[str, ...]:
        return tuple(img.id for img in self.images)

    def image_by_id(self, image_id: str) -> Image:
        for img in self.images:
            if img.id == image_id:
                return img
        raise KeyError(image_id)

    def mask_by_id(self, image_id: str) -> GroundTruthMask:
        for mask in self.masks:
            if mask.image_id == image_id:
                return mask
        raise KeyError(image_id)

    def masks_by_id(self) -> dict[str, GroundTruthMask]:
        return {m.image_id: m for m in self.masks}


# --- generation -----------------------------------------------------------------

def _paint_background(rng: np.random.Generator, h: int, w: int, base: np.ndarray) -> np.ndarray:
    rows = np.linspace(0.0, 1.0, h)[:, None, None]
    cols = np.linspace(0.0, 1.0, w)[None, :, None]
    gdir = rng.uniform(-1.0, 1.0, size=2)
    gradient = 0.05 * (gdir[0] * rows + gdir[1] * cols)
    freq = rng.uniform(2.0, 5.0, size=2)
    phase = rng.uniform(0.0, 2 * np.pi, size=2)
    texture = 0.03 * (
        np.sin(2 * np.pi * freq[0] * rows + phase[0])
        + np.sin(2 * np.pi * freq[1] * cols + phase[1])
    )
    return np.clip(base[None, None, :] + gradient + texture, 0.0, 1.0)


def _shape_mask(rng: np.random.Generator, h: int, w: int, scale: float = 1.0) -> np.ndarray:
    """A filled rectangle, circle or triangle somewhere in the frame."""
    s = min(h, w) * scale
    rr, cc = np.mgrid[0:h, 0:w]
    cy = rng.uniform(0.15, 0.85) * h
    cx = rng.uniform(0.15, 0.85) * w
    kind = int(rng.integers(3))
    if kind == 0:  # rectangle
        hy = max(1.0, rng.uniform(0.06, 0.16) * s)
        hx = max(1.0, rng.uniform(0.06, 0.16) * s)
        return (np.abs(rr - cy) <= hy) & (np.abs(cc - cx) <= hx)
    if kind == 1:  # circle
        rad = max(1.2, rng.uniform(0.07, 0.16) * s)
        return (rr - cy) ** 2 + (cc - cx) ** 2 <= rad**2
    # triangle: three vertices around the center, ordered by angle
    rad = max(2.0, rng.uniform(0.10, 0.20) * s)
    angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=3))
    vy = cy + rad * rng.uniform(0.6, 1.0, size=3) * np.sin(angles)
    vx = cx + rad * rng.uniform(0.6, 1.0, size=3) * np.cos(angles)
    inside = np.ones((h, w), dtype=bool)
    for i in range(3):
        y1, x1 = vy[i], vx[i]
        y2, x2 = vy[(i + 1) % 3], vx[(i + 1) % 3]
        cross = (x2 - x1) * (rr - y1) - (y2 - y1) * (cc - x1)
        inside &= cross >= 0
    return inside


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic scenes: class-colored shapes over a textured background,
    occluding each other in painter's order, plus per-pixel Gaussian noise.
    """
    palette = spec.palette if spec.palette is not None else default_palette(spec.num_classes)
    pal = np.asarray(palette, dtype=np.float64) / 255.0
    images: list[Image] = []
    masks: list[GroundTruthMask] = []
    lo, hi = spec.shapes_per_image

    for i in range(spec.num_images):
        rng = substream(spec.seed, "image", spec.id_prefix, i)
        h, w = spec.height, spec.width
        base = np.clip(pal[0] * rng.uniform(0.9, 1.1, size=3), 0.0, 1.0)
        px = _paint_background(rng, h, w, base)
        mask = np.zeros((h, w), dtype=np.int32)

        num_shapes = int(rng.integers(lo, hi + 1))
        fg = spec.num_classes - 1
        # The first C-1 shapes cover each foreground class once so that
        # (occlusion aside) every class appears in every image.
        cls_seq = list(rng.permutation(fg) + 1)
        while len(cls_seq) < num_shapes:
            cls_seq.append(int(rng.integers(1, fg + 1)))
        cls_seq = cls_seq[:num_shapes]

        # Higher class index -> smaller shapes (rarer pixels); drawing is in
        # cls_seq order but painting goes big-to-small so rare classes are
        # not wiped out by occlusion.
        shapes = []
        for cls in cls_seq:
            scale = 0.62 ** (cls - 1)
            inside = _shape_mask(rng, h, w, scale)
            color = np.clip(pal[cls] * rng.uniform(0.88, 1.12, size=3), 0.0, 1.0)
            shapes.append((cls, inside, color))
        for cls, inside, color in sorted(shapes, key=lambda t: t[0]):
            px[inside] = color
            mask[inside] = cls

        if spec.noise_std > 0:
            px = px + rng.normal(0.0, spec.noise_std, size=px.shape)
        px = np.clip(px, 0.0, 1.0)
        # Snap to the 8-bit grid so PNG round-trips are lossless.
        px = np.round(px * 255.0) / 255.0

        image_id = f"{spec.id_prefix}{i:04d}"
        images.append(Image(id=image_id, pixels=px.astype(np.float32)))
        masks.append(GroundTruthMask(image_id=image_id, classes=mask, num_classes=spec.num_classes))

    names = tuple(
        "background" if c == 0 else f"class_{c}" for c in range(spec.num_classes)
    )
    return Dataset(images=tuple(images), masks=tuple(masks), class_names=names, palette=palette)


# --- disk I/O ---------------------------------------------------------------------

def save_dataset(dataset: Dataset, root: str | Path, spec: SyntheticSpec | None = None) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for img in dataset.images:
        arr = np.round(np.asarray(img.pixels, dtype=np.float64) * 255.0).astype(np.uint8)
        PILImage.fromarray(arr, mode="RGB").save(root / "images" / f"{img.id}.png")
    for mask in dataset.masks:
        arr = np.asarray(mask.classes, dtype=np.uint8)
        PILImage.fromarray(arr, mode="L").save(root / "masks" / f"{mask.image_id}.png")
    classes = {
        "class_names": list(dataset.class_names),
        "palette": [list(c) for c in dataset.palette],
    }
    if dataset.keys is not None:
        classes["keys"] = list(dataset.keys)
    (root / "classes.json").write_text(json.dumps(classes, indent=2) + "\n", encoding="utf-8")
    heights = {img.height for img in dataset.images}
    widths = {img.width for img in dataset.images}
    manifest = {
        "num_images": len(dataset.images),
        "height": heights.pop() if len(heights) == 1 else None,
        "width": widths.pop() if len(widths) == 1 else None,
        "num_classes": dataset.num_classes,
        "spec": asdict(spec) if spec is not None else None,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    classes_path = root / "classes.json"
    if not classes_path.exists():
        raise FileNotFoundError(f"{classes_path}: dataset metadata missing")
    try:
        meta = json.loads(classes_path.read_text(encoding="utf-8"))
        class_names = tuple(meta["class_names"])
        palette = tuple(tuple(int(v) for v in c) for c in meta["palette"])
        keys = tuple(meta["keys"]) if "keys" in meta else None
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"{classes_path}: malformed metadata: {exc}") from exc
    num_classes = len(class_names)

    images: list[Image] = []
    masks: list[GroundTruthMask] = []
    image_files = sorted((root / "images").glob("*.png"))
    if not image_files:
        raise ValueError(f"{root}: no images found under images/")
    for img_path in image_files:
        image_id = img_path.stem
        mask_path = root / "masks" / f"{image_id}.png"
        if not mask_path.exists():
            raise FileNotFoundError(f"missing mask file for image {image_id!r}: {mask_path}")
        try:
            rgb = np.asarray(PILImage.open(img_path).convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise ValueError(f"{img_path}: cannot decode image: {exc}") from exc
        try:
            cls = np.asarray(PILImage.open(mask_path), dtype=np.int32)
        except Exception as exc:
            raise ValueError(f"{mask_path}: cannot decode mask: {exc}") from exc
        if cls.ndim != 2:
            raise ValueError(f"{mask_path}: mask must be single-channel, got shape {cls.shape}")
        if rgb.shape[:2] != cls.shape:
            raise ValueError(
                f"image {image_id!r}: image is {rgb.shape[:2]}, mask is {cls.shape}"
            )
        images.append(Image(id=image_id, pixels=rgb.astype(np.float32) / 255.0))
        try:
            masks.append(
                GroundTruthMask(image_id=image_id, classes=cls, num_classes=num_classes)
            )
        except ValueError as exc:
            raise ValueError(f"{mask_path}: {exc}") from exc
    return Dataset(
        images=tuple(images),
        masks=tuple(masks),
        class_names=class_names,
        palette=palette,
        keys=keys,
    )
