"""Domain types shared by every module: images, masks, probability maps,
pixel references and the annotation database with its JSONL persistence.

All types are immutable values after construction (arrays are frozen);
the annotation database is the one mutable container and is owned by a
single writer at a time.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "IGNORE_LABEL",
    "Image",
    "GroundTruthMask",
    "ProbabilityMap",
    "PixelRef",
    "LabelSource",
    "LabelledPixel",
    "AnnotationDatabase",
    "DuplicatePixelError",
    "softmax_normalize",
    "db_insert",
    "candidate_pool",
    "encode_entry",
    "decode_entry",
    "save_annotations",
    "load_annotations",
]

# Mask value excluded from training, acquisition and evaluation.
IGNORE_LABEL = 255


class DuplicatePixelError(ValueError):
    """A pixel may be labelled at most once; a repeat signals an acquisition bug."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Image:
    """An RGB image with channel values normalized to [0, 1]."""

    id: str
    pixels: np.ndarray  # (H, W, 3) float32

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"image {self.id!r}: pixels must be (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image {self.id!r}: empty spatial dims {px.shape}")
        if not np.isfinite(px).all():
            raise ValueError(f"image {self.id!r}: non-finite pixel values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError(f"image {self.id!r}: channel values outside [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class GroundTruthMask:
    """Per-pixel class indices for one image; IGNORE_LABEL marks excluded pixels."""

    image_id: str
    classes: np.ndarray  # (H, W) int32
    num_classes: int

    def __post_init__(self) -> None:
        cls = np.asarray(self.classes)
        if not np.issubdtype(cls.dtype, np.integer):
            raise ValueError(f"mask {self.image_id!r}: classes must be integers")
        cls = cls.astype(np.int32)
        if cls.ndim != 2:
            raise ValueError(f"mask {self.image_id!r}: classes must be (H, W), got {cls.shape}")
        if self.num_classes < 2:
            raise ValueError(f"mask {self.image_id!r}: num_classes must be >= 2")
        valid = (cls == IGNORE_LABEL) | ((cls >= 0) & (cls < self.num_classes))
        if not valid.all():
            bad = cls[~valid].flat[0]
            raise ValueError(
                f"mask {self.image_id!r}: class value {int(bad)} outside "
                f"[0, {self.num_classes}) and not IGNORE ({IGNORE_LABEL})"
            )
        object.__setattr__(self, "classes", _frozen(cls))

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel class distributions: every pixel lies on the (C-1)-simplex."""

    image_id: str
    probs: np.ndarray  # (H, W, C) float64

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] < 2:
            raise ValueError(
                f"probability map {self.image_id!r}: probs must be (H, W, C>=2), got {p.shape}"
            )
        if not np.isfinite(p).all():
            raise ValueError(f"probability map {self.image_id!r}: non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError(f"probability map {self.image_id!r}: values outside [0, 1]")
        sums = p.sum(axis=2)
        err = np.abs(sums - 1.0).max()
        if err > 1e-6:
            r, c = np.unravel_index(np.abs(sums - 1.0).argmax(), sums.shape)
            raise ValueError(
                f"probability map {self.image_id!r}: pixel ({r}, {c}) sums to "
                f"{sums[r, c]!r}, violating the simplex invariant"
            )
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]


@dataclass(frozen=True, order=True)
class PixelRef:
    """A coordinate in the global pixel lattice: (image, row, col), origin top-left."""

    image_id: str
    row: int
    col: int

    def __post_init__(self) -> None:
        if self.row < 0 or self.col < 0:
            raise ValueError(f"pixel ({self.image_id!r}, {self.row}, {self.col}): negative coordinate")


class LabelSource(enum.Enum):
    SIMULATED = "simulated"
    NOISY = "noisy"
    HUMAN = "human"


@dataclass(frozen=True)
class LabelledPixel:
    """One labelled pixel: where, which class, when (round) and from whom."""

    pixel: PixelRef
    class_id: int
    round: int
    source: LabelSource = LabelSource.SIMULATED

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValueError(f"label for {self.pixel}: negative class_id {self.class_id}")
        if self.round < 0:
            raise ValueError(f"label for {self.pixel}: negative round {self.round}")


class AnnotationDatabase:
    """Ordered collection of labelled pixels with lookup by coordinate.

    Invariants enforced on insert: a pixel is labelled at most once,
    class ids stay below num_classes (when known), and round numbers are
    non-decreasing in insertion order.
    """

    def __init__(self, num_classes: int | None = None) -> None:
        if num_classes is not None and num_classes < 2:
            raise ValueError("num_classes must be >= 2 when given")
        self.num_classes = num_classes
        self._entries: list[LabelledPixel] = []
        self._index: dict[PixelRef, LabelledPixel] = {}
        self._by_image: dict[str, list[LabelledPixel]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LabelledPixel]:
        return iter(self._entries)

    def __contains__(self, pixel: PixelRef) -> bool:
        return pixel in self._index

    @property
    def entries(self) -> tuple[LabelledPixel, ...]:
        return tuple(self._entries)

    def lookup(self, pixel: PixelRef) -> LabelledPixel | None:
        return self._index.get(pixel)

    def for_image(self, image_id: str) -> tuple[LabelledPixel, ...]:
        return tuple(self._by_image.get(image_id, ()))

    def image_ids(self) -> tuple[str, ...]:
        return tuple(self._by_image.keys())

    def insert(self, lp: LabelledPixel) -> None:
        if lp.pixel in self._index:
            raise DuplicatePixelError(f"pixel {lp.pixel} is already labelled")
        if self.num_classes is not None and lp.class_id >= self.num_classes:
            raise ValueError(
                f"label for {lp.pixel}: class_id {lp.class_id} >= num_classes {self.num_classes}"
            )
        if self._entries and lp.round < self._entries[-1].round:
            raise ValueError(
                f"label for {lp.pixel}: round {lp.round} decreases below "
                f"previous round {self._entries[-1].round}"
            )
        self._entries.append(lp)
        self._index[lp.pixel] = lp
        self._by_image.setdefault(lp.pixel.image_id, []).append(lp)

    def extend(self, labels: Iterable[LabelledPixel]) -> None:
        for lp in labels:
            self.insert(lp)

    def copy(self) -> "AnnotationDatabase":
        out = AnnotationDatabase(self.num_classes)
        out.extend(self._entries)
        return out


def db_insert(db: AnnotationDatabase, lp: LabelledPixel) -> AnnotationDatabase:
    """Insert one label and return the database (mutating convenience form)."""
    db.insert(lp)
    return db


def softmax_normalize(logits: np.ndarray, image_id: str = "") -> ProbabilityMap:
    """Map an (H, W, C) grid of logits onto the per-pixel probability simplex.

    Computed in float64 with the max-shift trick so rows sum to 1 within
    1e-9 regardless of the input's scale.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"logits must be (H, W, C), got {z.shape}")
    finite = np.isfinite(z)
    if not finite.all():
        r, c, _ = np.unravel_index((~finite).argmax(), z.shape)
        raise ValueError(f"non-finite logit at pixel ({r}, {c}) of image {image_id!r}")
    shifted = z - z.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=2, keepdims=True)
    return ProbabilityMap(image_id=image_id, probs=probs)


def candidate_pool(
    images: Sequence[Image], db: AnnotationDatabase
) -> set[PixelRef]:
    """All lattice coordinates of the given images minus the labelled ones."""
    pool: set[PixelRef] = set()
    for img in images:
        for r in range(img.height):
            for c in range(img.width):
                pool.add(PixelRef(img.id, r, c))
    pool.difference_update(db._index.keys())
    return pool


# --- JSONL persistence ------------------------------------------------------
#
# One object per line, append-only, UTF-8, LF endings:
#   {"image": "<id>", "row": 3, "col": 7, "class": 2, "round": 0, "source": "simulated"}

def encode_entry(lp: LabelledPixel) -> str:
    return json.dumps(
        {
            "image": lp.pixel.image_id,
            "row": lp.pixel.row,
            "col": lp.pixel.col,
            "class": lp.class_id,
            "round": lp.round,
            "source": lp.source.value,
        },
        ensure_ascii=False,
        separators=(",", ":"),
    )


def decode_entry(line: str) -> LabelledPixel:
    try:
        obj = json.loads(line)
        return LabelledPixel(
            pixel=PixelRef(obj["image"], int(obj["row"]), int(obj["col"])),
            class_id=int(obj["class"]),
            round=int(obj["round"]),
            source=LabelSource(obj["source"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"malformed annotation line {line!r}: {exc}") from exc


def save_annotations(db: AnnotationDatabase, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for lp in db:
            fh.write(encode_entry(lp) + "\n")


def load_annotations(path: str | Path, num_classes: int | None = None) -> AnnotationDatabase:
    path = Path(path)
    db = AnnotationDatabase(num_classes)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                db.insert(decode_entry(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return db
