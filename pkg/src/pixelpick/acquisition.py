"""Uncertainty scoring and batch selection for unlabelled pixels.

Every strategy is normalized to larger-is-more-uncertain so that one
selection path serves them all. Ranking is per image; ties are broken
lexicographically by (row, col) for determinism.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import IGNORE_LABEL, GroundTruthMask, PixelRef, ProbabilityMap

__all__ = [
    "Strategy",
    "Heuristic",
    "UncertaintyMap",
    "AcquisitionConfig",
    "ShortfallError",
    "score_least_confidence",
    "score_margin",
    "score_entropy",
    "score_uncertainty",
    "select_variant_b",
    "select_variant_a",
    "select_random",
    "class_diversity",
    "save_uncertainty_grid",
    "load_uncertainty_grid",
    "save_selected_refs",
]


class Strategy(enum.Enum):
    RANDOM = "random"
    LEAST_CONFIDENCE = "lc"
    MARGIN = "margin"
    ENTROPY = "entropy"


class Heuristic(enum.Enum):
    """Order of the uniform/uncertainty stages in the diversity heuristic.

    VARIANT_A subsamples uniformly first, then takes the n most uncertain.
    VARIANT_B ranks first, then samples n uniformly from the top M%.
    """

    VARIANT_A = "a"
    VARIANT_B = "b"


class ShortfallError(ValueError):
    """Fewer eligible pixels than requested."""


@dataclass(frozen=True)
class UncertaintyMap:
    """Per-pixel uncertainty for one image; larger means more uncertain."""

    image_id: str
    values: np.ndarray  # (H, W) float64

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"uncertainty map must be (H, W), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError(f"uncertainty map {self.image_id!r}: non-finite values")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class AcquisitionConfig:
    """What to score, how to diversify, and how many pixels per image."""

    strategy: Strategy = Strategy.MARGIN
    committee: bool = False
    mc_passes: int = 20
    top_percent: float = 5.0
    pixels_per_image: int = 10
    heuristic: Heuristic = Heuristic.VARIANT_B
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pixels_per_image < 1:
            raise ValueError("pixels_per_image must be >= 1")
        if not 0.0 < self.top_percent <= 100.0:
            raise ValueError("top_percent must be in (0, 100]")
        if self.mc_passes < 1:
            raise ValueError("mc_passes must be >= 1")
        if self.committee and self.strategy is Strategy.RANDOM:
            raise ValueError("a committee needs an uncertainty strategy, not random")


# --- scoring -----------------------------------------------------------------

def score_least_confidence(probs: ProbabilityMap) -> UncertaintyMap:
    """1 - max_c p(c): zero when one class is certain."""
    values = 1.0 - probs.probs.max(axis=2)
    return UncertaintyMap(probs.image_id, values)


def score_margin(probs: ProbabilityMap) -> UncertaintyMap:
    """Negated gap between the two most probable classes; 0 at an exact tie."""
    part = np.partition(probs.probs, probs.num_classes - 2, axis=2)
    top1 = part[:, :, -1]
    top2 = part[:, :, -2]
    return UncertaintyMap(probs.image_id, top2 - top1)


def score_entropy(probs: ProbabilityMap) -> UncertaintyMap:
    """Shannon entropy (natural log) with the 0*log(0) := 0 convention."""
    p = probs.probs
    logp = np.log(np.where(p > 0, p, 1.0))
    values = -(p * logp).sum(axis=2)
    return UncertaintyMap(probs.image_id, values)


_SCORERS = {
    Strategy.LEAST_CONFIDENCE: score_least_confidence,
    Strategy.MARGIN: score_margin,
    Strategy.ENTROPY: score_entropy,
}


def score_uncertainty(strategy: Strategy, probs: ProbabilityMap) -> UncertaintyMap:
    if strategy not in _SCORERS:
        raise ValueError(f"strategy {strategy} has no uncertainty map")
    return _SCORERS[strategy](probs)


# --- selection -----------------------------------------------------------------

def _excluded_grid(
    excluded: Iterable[PixelRef] | np.ndarray | None,
    image_id: str,
    shape: tuple[int, int],
) -> np.ndarray:
    if isinstance(excluded, np.ndarray):
        if excluded.shape != shape or excluded.dtype != bool:
            raise ValueError("excluded grid must be a boolean (H, W) array")
        return excluded
    grid = np.zeros(shape, dtype=bool)
    if excluded:
        for ref in excluded:
            if ref.image_id != image_id:
                continue
            if not (0 <= ref.row < shape[0] and 0 <= ref.col < shape[1]):
                raise ValueError(f"excluded pixel {ref} is outside the {shape} grid")
            grid[ref.row, ref.col] = True
    return grid


def _ranked_candidates(
    umap: UncertaintyMap, excluded_grid: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Flat candidate indices (row-major, i.e. lexicographic) and their rank order.

    Rank order sorts by value descending; the stable sort over the
    row-major base order breaks ties by (row, col).
    """
    flat_vals = umap.values.ravel()
    cand = np.flatnonzero(~excluded_grid.ravel())
    order = np.argsort(-flat_vals[cand], kind="stable")
    return cand, order


def select_variant_b(
    umap: UncertaintyMap,
    n: int,
    top_percent: float,
    excluded: Iterable[PixelRef] | np.ndarray | None,
    seed: int,
) -> list[PixelRef]:
    """Uniformly sample n pixels from the top-M% most uncertain candidates.

    RNG protocol (relied on by replay tests): default_rng(seed).choice
    over the top set, size n, without replacement, where the top set is
    the first ceil(M/100 * num_candidates) entries in rank order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < top_percent <= 100.0:
        raise ValueError("top_percent must be in (0, 100]")
    h, w = umap.values.shape
    grid = _excluded_grid(excluded, umap.image_id, (h, w))
    cand, order = _ranked_candidates(umap, grid)
    if len(cand) < n:
        raise ShortfallError(
            f"image {umap.image_id!r}: {n} pixels requested, only {len(cand)} candidates"
        )
    top_count = math.ceil(top_percent * len(cand) / 100.0)
    if top_count < n:
        raise ShortfallError(
            f"image {umap.image_id!r}: top {top_percent}% holds {top_count} pixels, "
            f"fewer than the {n} requested"
        )
    top = cand[order[:top_count]]
    rng = np.random.default_rng(seed)
    picked = top[rng.choice(top_count, size=n, replace=False)]
    return [PixelRef(umap.image_id, int(i // w), int(i % w)) for i in picked]


def select_variant_a(
    umap: UncertaintyMap,
    n: int,
    subsample_percent: float,
    excluded: Iterable[PixelRef] | np.ndarray | None,
    seed: int,
) -> list[PixelRef]:
    """Uniformly subsample the candidates, then take the n most uncertain.

    RNG protocol: default_rng(seed).choice over the lexicographically
    ordered candidates, size ceil(pct/100 * num_candidates), without
    replacement; the subsample is then ranked by (value desc, row, col).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < subsample_percent <= 100.0:
        raise ValueError("subsample_percent must be in (0, 100]")
    h, w = umap.values.shape
    grid = _excluded_grid(excluded, umap.image_id, (h, w))
    flat_vals = umap.values.ravel()
    cand = np.flatnonzero(~grid.ravel())
    k = math.ceil(subsample_percent * len(cand) / 100.0)
    if k < n:
        raise ShortfallError(
            f"image {umap.image_id!r}: subsample of {k} is smaller than n={n}"
        )
    rng = np.random.default_rng(seed)
    sub = cand[rng.choice(len(cand), size=k, replace=False)]
    rows = sub // w
    cols = sub % w
    order = np.lexsort((cols, rows, -flat_vals[sub]))
    chosen = sub[order[:n]]
    return [PixelRef(umap.image_id, int(i // w), int(i % w)) for i in chosen]


def select_random(
    candidates: Iterable[PixelRef], n: int, seed: int
) -> list[PixelRef]:
    """n pixels per image, uniform without replacement, merged in image-id order.

    Each image draws from its own substream hashed from (seed, image_id),
    so the selection is independent of every other image and of the
    iteration order of the candidate set.
    """
    from .seeding import substream

    if n < 1:
        raise ValueError("n must be >= 1")
    by_image: dict[str, list[PixelRef]] = {}
    for ref in candidates:
        by_image.setdefault(ref.image_id, []).append(ref)
    out: list[PixelRef] = []
    for image_id in sorted(by_image):
        refs = sorted(by_image[image_id])
        if len(refs) < n:
            raise ShortfallError(
                f"image {image_id!r}: {n} pixels requested, only {len(refs)} candidates"
            )
        rng = substream(seed, "random", image_id)
        idx = rng.choice(len(refs), size=n, replace=False)
        out.extend(refs[i] for i in idx)
    return out


def class_diversity(
    queried: Sequence[PixelRef], gts: Mapping[str, GroundTruthMask]
) -> float:
    """Mean, over images with queries, of the number of distinct true classes hit."""
    if not queried:
        raise ValueError("class_diversity needs at least one queried pixel")
    per_image: dict[str, set[int]] = {}
    for ref in queried:
        if ref.image_id not in gts:
            raise ValueError(f"no ground-truth mask for queried image {ref.image_id!r}")
        mask = gts[ref.image_id]
        if not (0 <= ref.row < mask.height and 0 <= ref.col < mask.width):
            raise ValueError(f"query {ref} is outside the mask")
        cls = int(mask.classes[ref.row, ref.col])
        bucket = per_image.setdefault(ref.image_id, set())
        if cls != IGNORE_LABEL:
            bucket.add(cls)
    return float(np.mean([len(s) for s in per_image.values()]))


# --- debug dumps ------------------------------------------------------------

def save_uncertainty_grid(umap: UncertaintyMap, path: str | Path) -> None:
    """Portable text grid: 'H W' header line, then row-major values."""
    h, w = umap.values.shape
    lines = [f"{h} {w}"]
    for r in range(h):
        lines.append(" ".join(repr(float(v)) for v in umap.values[r]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_uncertainty_grid(path: str | Path, image_id: str = "") -> UncertaintyMap:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    h, w = (int(t) for t in text[0].split())
    values = np.array([[float(v) for v in line.split()] for line in text[1 : 1 + h]])
    if values.shape != (h, w):
        raise ValueError(f"{path}: expected {h}x{w} grid, got {values.shape}")
    return UncertaintyMap(image_id, values)


def save_selected_refs(refs: Sequence[PixelRef], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for ref in refs:
            fh.write(
                json.dumps(
                    {"image": ref.image_id, "row": ref.row, "col": ref.col},
                    separators=(",", ":"),
                )
                + "\n"
            )
