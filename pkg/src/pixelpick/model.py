"""A small fully-convolutional segmentation model with exact hand-derived
gradients, trained from scratch each round on sparse pixel labels.

Architecture: [3x3 conv -> ReLU -> optional dropout] x num_blocks, then a
1x1 conv head to class logits. Stride 1, zero padding, so output spatial
dims always equal input dims. All gradients are reverse-mode and exact
(verified against central finite differences in the test suite).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    AnnotationDatabase,
    Image,
    LabelledPixel,
    ProbabilityMap,
    softmax_normalize,
)
from .seeding import stable_seed, substream

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "Model",
    "init_model",
    "forward",
    "sparse_ce_loss",
    "sparse_training_loss",
    "loss_gradient",
    "make_dropout_masks",
    "augment",
    "train_round",
    "train_round_history",
    "predict",
    "save_model",
    "load_model",
    "params_to_vector",
    "vector_to_params",
]

# Eq. is undefined at p = 0, so probabilities are clamped here before log.
PROB_CLAMP = 1e-12

# Default number of dropout-perturbed passes for the committee estimate.
DEFAULT_MC_PASSES = 20


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the network: depth knob, width, classes, dropout, init seed."""

    num_blocks: int = 2
    channels: int = 10
    num_classes: int = 4
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.num_blocks <= 8:
            raise ValueError(f"num_blocks must be in [1, 8], got {self.num_blocks}")
        if not 4 <= self.channels <= 64:
            raise ValueError(f"channels must be in [4, 64], got {self.channels}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = []
        cin = 3
        for _ in range(self.num_blocks):
            shapes.append((3, 3, cin, self.channels))
            shapes.append((self.channels,))
            cin = self.channels
        shapes.append((self.channels, self.num_classes))
        shapes.append((self.num_classes,))
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    """SGD-with-momentum schedule for one training round."""

    epochs: int = 16
    learning_rate: float = 0.07
    momentum: float = 0.9
    lr_decay_epochs: tuple[int, ...] = (11, 14)
    lr_decay_factor: float = 0.1
    batch_images: int = 10
    augment: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        decay = tuple(self.lr_decay_epochs)
        if any(b <= a for a, b in zip(decay, decay[1:])):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        object.__setattr__(self, "lr_decay_epochs", decay)
        if self.lr_decay_factor <= 0:
            raise ValueError("lr_decay_factor must be > 0")
        if self.batch_images < 1:
            raise ValueError("batch_images must be >= 1")


@dataclass(frozen=True)
class Model:
    """Immutable parameter set: (W, b) per block, then the 1x1 head."""

    config: ModelConfig
    params: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        expected = self.config.param_shapes()
        if len(self.params) != len(expected):
            raise ValueError(
                f"expected {len(expected)} parameter arrays, got {len(self.params)}"
            )
        frozen = []
        for i, (p, shape) in enumerate(zip(self.params, expected)):
            arr = np.asarray(p)
            if arr.shape != shape:
                raise ValueError(f"parameter {i}: expected shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"parameter {i}: non-finite values")
            arr = arr.copy()
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "params", tuple(frozen))

    @property
    def dtype(self) -> np.dtype:
        return self.params[0].dtype

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params)


def init_model(config: ModelConfig, dtype: np.dtype = np.float32) -> Model:
    """Fresh parameters: fan-in-scaled uniform weights, zero biases.

    Deterministic given config.seed; each layer draws from its own
    hashed substream so depth changes do not reshuffle earlier layers.
    """
    params: list[np.ndarray] = []
    shapes = config.param_shapes()
    for i in range(0, len(shapes), 2):
        w_shape = shapes[i]
        fan_in = int(np.prod(w_shape[:-1]))
        bound = np.sqrt(6.0 / fan_in)
        rng = substream(config.seed, "init", i // 2)
        w = rng.uniform(-bound, bound, size=w_shape)
        params.append(w.astype(dtype))
        params.append(np.zeros(shapes[i + 1], dtype=dtype))
    return Model(config=config, params=tuple(params))


# --- forward / backward core (batched over same-shape images) ---------------

def _im2col(padded: np.ndarray, h: int, w: int) -> np.ndarray:
    """(N, H+2, W+2, Cin) -> (N*H*W, 9*Cin) patch matrix for a 3x3 window."""
    n, _, _, cin = padded.shape
    out = np.empty((n, h, w, 3, 3, cin), dtype=padded.dtype)
    for a in range(3):
        for b in range(3):
            out[:, :, :, a, b, :] = padded[:, a : a + h, b : b + w, :]
    return out.reshape(n * h * w, 9 * cin)


def _col2im(dpatches: np.ndarray, n: int, h: int, w: int, cin: int) -> np.ndarray:
    """Scatter-add the patch gradient back to input space (inverse of _im2col)."""
    dp = dpatches.reshape(n, h, w, 3, 3, cin)
    dpad = np.zeros((n, h + 2, w + 2, cin), dtype=dpatches.dtype)
    for a in range(3):
        for b in range(3):
            dpad[:, a : a + h, b : b + w, :] += dp[:, :, :, a, b, :]
    return dpad[:, 1 : h + 1, 1 : w + 1, :]


def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))


def _forward_core(
    model: Model,
    x: np.ndarray,
    dropout_masks: Sequence[np.ndarray] | None,
    keep_cache: bool,
) -> tuple[np.ndarray, list]:
    """Run the network on a batch (N, H, W, 3); optionally keep the backward cache.

    dropout_masks, when given, holds one float mask per block (already
    scaled by 1/keep_prob); None disables dropout entirely.
    """
    cfg = model.config
    n, h, w, _ = x.shape
    cache: list = []
    act = x.astype(model.dtype, copy=False)
    for i in range(cfg.num_blocks):
        wk = model.params[2 * i]
        bk = model.params[2 * i + 1]
        cin = wk.shape[2]
        patches = _im2col(_pad(act), h, w)
        z = patches @ wk.reshape(9 * cin, -1) + bk
        z = z.reshape(n, h, w, cfg.channels)
        a = np.maximum(z, 0)
        if dropout_masks is not None:
            mask = dropout_masks[i]
            out = a * mask
        else:
            mask = None
            out = a
        if keep_cache:
            cache.append((patches, z, mask))
        act = out
    wh = model.params[-2]
    bh = model.params[-1]
    logits = act.reshape(n * h * w, cfg.channels) @ wh + bh
    logits = logits.reshape(n, h, w, cfg.num_classes)
    if keep_cache:
        cache.append(act)
    return logits, cache


def _backward_core(
    model: Model, cache: list, dlogits: np.ndarray
) -> tuple[np.ndarray, ...]:
    """Exact reverse-mode gradients for every parameter, given dL/dlogits."""
    cfg = model.config
    n, h, w, _ = dlogits.shape
    grads: list[np.ndarray] = [None] * len(model.params)  # type: ignore[list-item]

    head_in: np.ndarray = cache[-1]
    dy = dlogits.reshape(n * h * w, cfg.num_classes)
    x2d = head_in.reshape(n * h * w, cfg.channels)
    grads[-2] = x2d.T @ dy
    grads[-1] = dy.sum(axis=0)
    dact = (dy @ model.params[-2].T).reshape(n, h, w, cfg.channels)

    for i in reversed(range(cfg.num_blocks)):
        patches, z, mask = cache[i]
        if mask is not None:
            dact = dact * mask
        dz = np.where(z > 0, dact, 0)
        dz2d = dz.reshape(n * h * w, cfg.channels)
        wk = model.params[2 * i]
        cin = wk.shape[2]
        grads[2 * i] = (patches.T @ dz2d).reshape(3, 3, cin, cfg.channels)
        grads[2 * i + 1] = dz2d.sum(axis=0)
        if i > 0:
            dpatches = dz2d @ wk.reshape(9 * cin, -1).T
            dact = _col2im(dpatches, n, h, w, cin)
    return tuple(grads)


def make_dropout_masks(
    model: Model, height: int, width: int, rng: np.random.Generator, batch: int = 1
) -> list[np.ndarray]:
    """One float mask per block, pre-scaled by 1/keep_prob (inverted dropout)."""
    cfg = model.config
    if cfg.dropout_rate <= 0:
        raise ValueError("dropout masks requested but dropout_rate is 0")
    keep = 1.0 - cfg.dropout_rate
    masks = []
    for _ in range(cfg.num_blocks):
        keep_mask = rng.random((batch, height, width, cfg.channels)) < keep
        masks.append(keep_mask.astype(model.dtype) / model.dtype.type(keep))
    return masks


def forward(model: Model, image: Image) -> np.ndarray:
    """Logits grid (H, W, C) for one image; dropout disabled."""
    if image.height < 3 or image.width < 3:
        raise ValueError(
            f"image {image.id!r} is {image.height}x{image.width}; minimum is 3x3"
        )
    x = image.pixels[None].astype(model.dtype)
    logits, _ = _forward_core(model, x, None, keep_cache=False)
    return logits[0]


# --- loss and gradient -------------------------------------------------------

def _check_labels_inside(
    labels: Sequence[LabelledPixel], image_id: str, h: int, w: int, c: int
) -> None:
    for lp in labels:
        if lp.pixel.image_id != image_id:
            raise ValueError(f"label {lp.pixel} does not belong to image {image_id!r}")
        if not (0 <= lp.pixel.row < h and 0 <= lp.pixel.col < w):
            raise ValueError(f"label {lp.pixel} is outside the {h}x{w} grid")
        if lp.class_id >= c:
            raise ValueError(f"label {lp.pixel}: class {lp.class_id} >= C={c}")


def sparse_ce_loss(probs: ProbabilityMap, labels: Sequence[LabelledPixel]) -> float:
    """Mean cross-entropy over the labelled pixels only."""
    labels = list(labels)
    if not labels:
        raise ValueError("sparse_ce_loss is undefined for an empty label set")
    _check_labels_inside(labels, probs.image_id, probs.height, probs.width, probs.num_classes)
    rows = np.array([lp.pixel.row for lp in labels])
    cols = np.array([lp.pixel.col for lp in labels])
    cls = np.array([lp.class_id for lp in labels])
    p = np.maximum(probs.probs[rows, cols, cls], PROB_CLAMP)
    return float(-np.log(p).mean())


def _sparse_ce_from_logits(
    logits2d: np.ndarray, cls: np.ndarray
) -> tuple[float, np.ndarray]:
    """Loss and dL/dlogits rows for the selected (K, C) logit rows, in float64."""
    z = logits2d.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    k = len(cls)
    py = p[np.arange(k), cls]
    loss = float(-np.log(np.maximum(py, PROB_CLAMP)).mean())
    drows = p.copy()
    drows[np.arange(k), cls] -= 1.0
    drows /= k
    # Clamped pixels have zero gradient: the loss is flat below the clamp.
    drows[py <= PROB_CLAMP] = 0.0
    return loss, drows


def sparse_training_loss(
    model: Model,
    image: Image,
    labels: Sequence[LabelledPixel],
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> float:
    """Loss of sparse_ce_loss(softmax(forward(image))) with optional fixed masks."""
    labels = list(labels)
    if not labels:
        raise ValueError("empty label set")
    c = model.config.num_classes
    _check_labels_inside(labels, image.id, image.height, image.width, c)
    x = image.pixels[None].astype(model.dtype)
    logits, _ = _forward_core(model, x, dropout_masks, keep_cache=False)
    rows = np.array([lp.pixel.row for lp in labels])
    cols = np.array([lp.pixel.col for lp in labels])
    cls = np.array([lp.class_id for lp in labels])
    loss, _ = _sparse_ce_from_logits(logits[0, rows, cols], cls)
    return loss


def loss_gradient(
    model: Model,
    image: Image,
    labels: Sequence[LabelledPixel],
    dropout_masks: Sequence[np.ndarray] | None = None,
) -> tuple[np.ndarray, ...]:
    """Exact gradient of sparse_training_loss w.r.t. every parameter array."""
    labels = list(labels)
    if not labels:
        raise ValueError("empty label set")
    c = model.config.num_classes
    _check_labels_inside(labels, image.id, image.height, image.width, c)
    x = image.pixels[None].astype(model.dtype)
    logits, cache = _forward_core(model, x, dropout_masks, keep_cache=True)
    rows = np.array([lp.pixel.row for lp in labels])
    cols = np.array([lp.pixel.col for lp in labels])
    cls = np.array([lp.class_id for lp in labels])
    _, drows = _sparse_ce_from_logits(logits[0, rows, cols], cls)
    dlogits = np.zeros_like(logits)
    # Accumulate (not assign): coincident labels must sum their contributions.
    np.add.at(dlogits, (0, rows, cols), drows.astype(model.dtype))
    return _backward_core(model, cache, dlogits)


# --- augmentation -------------------------------------------------------------

def augment(
    image: Image,
    labels: Sequence[LabelledPixel],
    seed: int,
    force_flip: bool | None = None,
    enable_jitter: bool = True,
) -> tuple[Image, tuple[LabelledPixel, ...]]:
    """Random horizontal flip plus photometric jitter.

    A flip mirrors pixels and maps each label's col to W-1-col; jitter
    scales each channel by a factor in [0.8, 1.2] (clamped to [0, 1])
    and never touches labels or coordinates.
    """
    rng = substream(seed, "augment", image.id)
    flip = rng.random() < 0.5 if force_flip is None else force_flip
    px = np.asarray(image.pixels, dtype=np.float32)
    out_labels = tuple(labels)
    if flip:
        px = px[:, ::-1, :]
        w = image.width
        out_labels = tuple(
            replace(lp, pixel=replace(lp.pixel, col=w - 1 - lp.pixel.col))
            for lp in out_labels
        )
    if enable_jitter:
        scale = rng.uniform(0.8, 1.2, size=3).astype(np.float32)
        px = np.clip(px * scale, 0.0, 1.0)
    return Image(id=image.id, pixels=px), out_labels


# --- training loop ------------------------------------------------------------

def _epoch_lr(tconfig: TrainConfig, epoch: int) -> float:
    lr = tconfig.learning_rate
    for decay_at in tconfig.lr_decay_epochs:
        if epoch >= decay_at:
            lr *= tconfig.lr_decay_factor
    return lr


def train_round_history(
    mconfig: ModelConfig,
    tconfig: TrainConfig,
    images: Sequence[Image],
    db: AnnotationDatabase,
) -> tuple[Model, list[float]]:
    """Fresh init, then SGD with momentum over the labelled images.

    Returns the trained model and the mean per-label loss for each epoch.
    Deterministic given (mconfig.seed, tconfig.seed, db, images).
    """
    if len(db) == 0:
        raise ValueError(
            "annotation database is empty; bootstrap by labelling randomly "
            "sampled pixels before training"
        )
    by_id = {img.id: img for img in images}
    missing = [iid for iid in db.image_ids() if iid not in by_id]
    if missing:
        raise ValueError(f"labelled images missing from the dataset: {missing}")

    labelled_ids = sorted(db.image_ids())
    model = init_model(mconfig)
    params = [p.astype(model.dtype) for p in model.params]
    velocity = [np.zeros_like(p) for p in params]
    rng = substream(tconfig.seed, "train")
    history: list[float] = []

    for epoch in range(tconfig.epochs):
        lr = _epoch_lr(tconfig, epoch)
        order = rng.permutation(len(labelled_ids))
        loss_sum = 0.0
        label_count = 0
        batch: list[tuple[Image, tuple[LabelledPixel, ...]]] = []

        def flush() -> None:
            nonlocal loss_sum, label_count
            if not batch:
                return
            n = len(batch)
            h, w = batch[0][0].height, batch[0][0].width
            x = np.stack([img.pixels for img, _ in batch]).astype(model.dtype)
            bidx, rows, cols, cls = [], [], [], []
            for bi, (_, lps) in enumerate(batch):
                for lp in lps:
                    bidx.append(bi)
                    rows.append(lp.pixel.row)
                    cols.append(lp.pixel.col)
                    cls.append(lp.class_id)
            bidx_a = np.array(bidx)
            rows_a = np.array(rows)
            cols_a = np.array(cols)
            cls_a = np.array(cls)

            live = Model(config=mconfig, params=tuple(params))
            masks = None
            if mconfig.dropout_rate > 0:
                masks = make_dropout_masks(live, h, w, rng, batch=n)
            logits, cache = _forward_core(live, x, masks, keep_cache=True)
            loss, drows = _sparse_ce_from_logits(logits[bidx_a, rows_a, cols_a], cls_a)
            dlogits = np.zeros_like(logits)
            np.add.at(dlogits, (bidx_a, rows_a, cols_a), drows.astype(model.dtype))
            grads = _backward_core(live, cache, dlogits)
            for j, g in enumerate(grads):
                velocity[j] = tconfig.momentum * velocity[j] - lr * g
                params[j] = params[j] + velocity[j]
            loss_sum += loss * len(cls)
            label_count += len(cls)
            batch.clear()

        for idx in order:
            iid = labelled_ids[idx]
            img = by_id[iid]
            lps = db.for_image(iid)
            if tconfig.augment:
                img, lps = augment(img, lps, stable_seed(tconfig.seed, "aug", epoch, iid))
            if batch and (
                len(batch) >= tconfig.batch_images
                or batch[0][0].pixels.shape != img.pixels.shape
            ):
                flush()
            batch.append((img, lps))
        flush()
        history.append(loss_sum / max(label_count, 1))

    final = Model(config=mconfig, params=tuple(params))
    return final, history


def train_round(
    mconfig: ModelConfig,
    tconfig: TrainConfig,
    images: Sequence[Image],
    db: AnnotationDatabase,
) -> Model:
    """Train a fresh model on the current database (see train_round_history)."""
    model, _ = train_round_history(mconfig, tconfig, images, db)
    return model


# --- prediction ----------------------------------------------------------------

def predict(
    model: Model, image: Image, mc_passes: int = 0, seed: int = 0
) -> ProbabilityMap:
    """Class probabilities for one image.

    mc_passes=0 disables dropout and returns softmax(forward(image));
    mc_passes=T averages T dropout-perturbed softmax outputs (the
    Monte Carlo committee), which requires dropout_rate > 0.
    """
    if mc_passes < 0:
        raise ValueError("mc_passes must be >= 0")
    if mc_passes == 0:
        return softmax_normalize(forward(model, image), image_id=image.id)
    if model.config.dropout_rate <= 0:
        raise ValueError(
            "mc_passes > 0 requires dropout_rate > 0; a committee without "
            "dropout would be degenerate"
        )
    if image.height < 3 or image.width < 3:
        raise ValueError(f"image {image.id!r} smaller than 3x3")
    rng = substream(seed, "mc", image.id)
    x = image.pixels[None].astype(model.dtype)
    acc = np.zeros((image.height, image.width, model.config.num_classes))
    for _ in range(mc_passes):
        masks = make_dropout_masks(model, image.height, image.width, rng)
        logits, _ = _forward_core(model, x, masks, keep_cache=False)
        acc += softmax_normalize(logits[0], image_id=image.id).probs
    return ProbabilityMap(image_id=image.id, probs=acc / mc_passes)


# --- checkpoint I/O --------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_model(model: Model, path: str | Path) -> None:
    """Versioned npz blob: config JSON plus the flat parameter arrays."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "num_blocks": model.config.num_blocks,
            "channels": model.config.channels,
            "num_classes": model.config.num_classes,
            "dropout_rate": model.config.dropout_rate,
            "seed": model.config.seed,
        },
    }
    arrays = {f"param_{i}": p for i, p in enumerate(model.params)}
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> Model:
    with np.load(Path(path)) as blob:
        meta = json.loads(bytes(blob["meta"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {meta.get('version')!r}")
        cfg = ModelConfig(**meta["config"])
        params = tuple(blob[f"param_{i}"] for i in range(2 * cfg.num_blocks + 2))
    return Model(config=cfg, params=params)


# --- helpers for tests and tooling ------------------------------------------------

def params_to_vector(params: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(p).ravel() for p in params])


def vector_to_params(vec: np.ndarray, shapes: Sequence[tuple[int, ...]]) -> tuple[np.ndarray, ...]:
    out = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(np.asarray(vec[offset : offset + size]).reshape(shape))
        offset += size
    if offset != len(vec):
        raise ValueError("vector length does not match the parameter shapes")
    return tuple(out)
