"""The active-learning loop: bootstrap with random pixels, train from
scratch each round, score uncertainty, acquire the next batch, and report
per-round mIoU. Also hosts the desk-scale ablation studies.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .acquisition import (
    AcquisitionConfig,
    Heuristic,
    ShortfallError,
    Strategy,
    class_diversity,
    save_selected_refs,
    save_uncertainty_grid,
    score_uncertainty,
    select_variant_a,
    select_variant_b,
)
from .core import (
    IGNORE_LABEL,
    AnnotationDatabase,
    GroundTruthMask,
    Image,
    LabelSource,
    LabelledPixel,
    PixelRef,
)
from .datasets import Dataset, SyntheticSpec, generate_synthetic, load_dataset
from .model import Model, ModelConfig, TrainConfig, predict, train_round_history
from .oracle import OracleConfig, OracleKind, reveal, reveal_noisy
from .seeding import stable_seed, substream

__all__ = [
    "LoopConfig",
    "RoundReport",
    "compute_miou",
    "distribute_budget",
    "run_active_learning",
    "run_experiment",
    "write_report_csv",
    "study_diversity_ratio",
    "study_round_batch",
    "study_noise",
    "study_depth",
    "resolve_datasets",
]

EVAL_FRACTION = 0.2


@dataclass(frozen=True)
class RoundReport:
    """Metrics for one acquisition round."""

    round: int
    labels_per_image: int
    miou: float
    per_class_iou: tuple[float, ...]
    train_loss: float
    seconds: float
    class_diversity: float | None = None


@dataclass(frozen=True)
class LoopConfig:
    """Everything one experiment needs; seeds give one repeat each."""

    dataset: Dataset | SyntheticSpec | str | Path
    eval_dataset: Dataset | None = None
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    acquisition: AcquisitionConfig = AcquisitionConfig()
    oracle: OracleConfig = OracleConfig()
    rounds: int = 6
    pixels_per_image: int = 10
    eta: float = 1.0
    seeds: tuple[int, ...] = (0,)
    # When set, each acquisition step dumps per-image uncertainty grids and
    # the selected coordinates under <dump_dir>/seed_<s>/round_<r>/.
    dump_dir: str | Path | None = None

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.pixels_per_image < 1:
            raise ValueError("pixels_per_image must be >= 1")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.seeds:
            raise ValueError("at least one seed is required")


# --- metrics ----------------------------------------------------------------

def compute_miou(
    preds: Sequence[np.ndarray],
    gts: Sequence[GroundTruthMask],
    num_classes: int,
) -> tuple[float, np.ndarray]:
    """Global-confusion-matrix IoU over the whole evaluation set.

    IGNORE pixels count toward neither intersection nor union; classes
    absent from both ground truth and predictions are excluded from the
    mean (their per-class entry is NaN).
    """
    if len(preds) != len(gts):
        raise ValueError("one prediction per ground-truth mask required")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred)
        if pred.shape != gt.classes.shape:
            raise ValueError(
                f"image {gt.image_id!r}: prediction {pred.shape} does not match "
                f"mask {gt.classes.shape}"
            )
        valid = gt.classes != IGNORE_LABEL
        p = pred[valid]
        if p.size and (p.min() < 0 or p.max() >= num_classes):
            raise ValueError(f"image {gt.image_id!r}: prediction values outside [0, C)")
        g = gt.classes[valid]
        conf += np.bincount(
            g.astype(np.int64) * num_classes + p.astype(np.int64),
            minlength=num_classes * num_classes,
        ).reshape(num_classes, num_classes)
    tp = np.diag(conf).astype(np.float64)
    fn = conf.sum(axis=1) - tp
    fp = conf.sum(axis=0) - tp
    denom = tp + fp + fn
    present = denom > 0
    if not present.any():
        raise ValueError("no non-IGNORE pixels in the evaluation set")
    per_class = np.full(num_classes, np.nan)
    per_class[present] = tp[present] / denom[present]
    return float(per_class[present].mean()), per_class


# --- budget distribution ------------------------------------------------------

def distribute_budget(
    total_pixels: int, num_images: int, eta: float, seed: int
) -> dict[int, int]:
    """Spread a pixel budget over max(1, round(eta * N)) uniformly chosen images.

    Each chosen image gets floor(total / N_img) pixels; the remainder goes
    one-each to the first images in seeded draw order.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must be in (0, 1]")
    if num_images < 1:
        raise ValueError("num_images must be >= 1")
    n_img = max(1, round(eta * num_images))
    if total_pixels < n_img:
        raise ValueError(
            f"budget {total_pixels} cannot give each of {n_img} images a pixel"
        )
    rng = substream(seed, "budget")
    chosen = rng.choice(num_images, size=n_img, replace=False)
    base = total_pixels // n_img
    remainder = total_pixels - base * n_img
    alloc: dict[int, int] = {}
    for i, idx in enumerate(chosen):
        alloc[int(idx)] = base + (1 if i < remainder else 0)
    return alloc


# --- dataset resolution ----------------------------------------------------------

def resolve_datasets(config: LoopConfig) -> tuple[Dataset, Dataset]:
    """Produce (train, eval) sets.

    Synthetic specs get a freshly generated eval split from a disjoint
    seed stream; on-disk datasets are split 80/20 by sorted image id.
    An explicit eval_dataset always wins.
    """
    ds = config.dataset
    if isinstance(ds, SyntheticSpec):
        train = generate_synthetic(ds)
        if config.eval_dataset is not None:
            return train, config.eval_dataset
        eval_spec = replace(
            ds,
            num_images=max(1, round(EVAL_FRACTION * ds.num_images)),
            seed=stable_seed(ds.seed, "eval-split"),
            id_prefix="eval_",
        )
        return train, generate_synthetic(eval_spec)
    if isinstance(ds, (str, Path)):
        ds = load_dataset(ds)
    if not isinstance(ds, Dataset):
        raise TypeError(f"unsupported dataset source: {type(config.dataset)!r}")
    if config.eval_dataset is not None:
        return ds, config.eval_dataset
    order = np.argsort([img.id for img in ds.images])
    n_eval = max(1, round(EVAL_FRACTION * len(ds.images)))
    if n_eval >= len(ds.images):
        raise ValueError("dataset too small to hold out an evaluation split")
    eval_idx = set(int(i) for i in order[len(ds.images) - n_eval :])
    pick = lambda keep: Dataset(
        images=tuple(ds.images[i] for i in range(len(ds.images)) if (i in eval_idx) == keep),
        masks=tuple(ds.masks[i] for i in range(len(ds.masks)) if (i in eval_idx) == keep),
        class_names=ds.class_names,
        palette=ds.palette,
        keys=ds.keys,
    )
    return pick(False), pick(True)


# --- selection plumbing -----------------------------------------------------------

def _choose_from_grid(
    image_id: str, eligible: np.ndarray, n: int, seed: int
) -> list[PixelRef]:
    """Uniform without-replacement draw over the row-major eligible pixels.

    Matches select_random's per-image protocol exactly: same substream,
    same lexicographic candidate order.
    """
    h, w = eligible.shape
    cand = np.flatnonzero(eligible.ravel())
    if len(cand) < n:
        raise ShortfallError(
            f"image {image_id!r}: {n} pixels requested, only {len(cand)} candidates"
        )
    rng = substream(seed, "random", image_id)
    idx = rng.choice(len(cand), size=n, replace=False)
    picked = cand[idx]
    return [PixelRef(image_id, int(i // w), int(i % w)) for i in picked]


def _answer_queries(
    oracle: OracleConfig,
    gts: Mapping[str, GroundTruthMask],
    refs: Sequence[PixelRef],
    round_index: int,
    run_seed: int,
) -> list[LabelledPixel]:
    out: list[LabelledPixel] = []
    if oracle.kind is OracleKind.SIMULATED:
        for ref in refs:
            out.append(
                LabelledPixel(ref, reveal(gts[ref.image_id], ref), round_index, LabelSource.SIMULATED)
            )
    elif oracle.kind is OracleKind.NOISY:
        noise_seed = stable_seed(run_seed, "oracle", oracle.seed)
        for ref in refs:
            cls = reveal_noisy(gts[ref.image_id], ref, oracle.error_rate, noise_seed)
            out.append(LabelledPixel(ref, cls, round_index, LabelSource.NOISY))
    else:
        raise ValueError(
            "the human oracle is served through the annotation server "
            "(pixelpick serve), not the simulation loop"
        )
    return out


# --- the loop ----------------------------------------------------------------------

def run_active_learning(
    config: LoopConfig, seed: int | None = None, return_db: bool = False
):
    """One seeded run of the full loop; returns one report per round.

    Round 0 bootstraps with uniform random pixels; every round labels the
    pending batch, retrains from scratch, evaluates mIoU on the held-out
    split, and (except after the last round) acquires the next batch.
    On candidate exhaustion the loop warns and returns the reports so far.
    With return_db=True the final annotation database is returned alongside
    the reports.
    """
    if seed is None:
        seed = config.seeds[0]
    train_ds, eval_ds = resolve_datasets(config)
    c = train_ds.num_classes
    n = config.pixels_per_image
    gts = train_ds.masks_by_id()

    ids_sorted = sorted(train_ds.ids())
    n_total = len(ids_sorted)
    n_img = max(1, round(config.eta * n_total))
    if n_img < n_total:
        pick = substream(seed, "image-subset").choice(n_total, size=n_img, replace=False)
        selected_ids = sorted(ids_sorted[int(i)] for i in pick)
    else:
        selected_ids = ids_sorted
    images_by_id = {img.id: img for img in train_ds.images}

    # Eligibility grids: not IGNORE and not yet labelled.
    eligible = {
        iid: gts[iid].classes != IGNORE_LABEL for iid in selected_ids
    }

    db = AnnotationDatabase(c)
    reports: list[RoundReport] = []
    pending: list[PixelRef] = []
    try:
        pending = _select_batch_random(eligible, n, stable_seed(seed, "round", 0))
    except ShortfallError as exc:
        raise ValueError(f"cannot bootstrap: {exc}") from exc

    for r in range(config.rounds):
        t0 = time.perf_counter()
        labels = _answer_queries(config.oracle, gts, pending, r, seed)
        db.extend(labels)
        for lp in labels:
            eligible[lp.pixel.image_id][lp.pixel.row, lp.pixel.col] = False
        assert len(db) == (r + 1) * n * len(selected_ids), "budget accounting broke"

        mcfg = replace(config.model, num_classes=c, seed=stable_seed(seed, "init", r))
        tcfg = replace(config.train, seed=stable_seed(seed, "train", r))
        model, history = train_round_history(mcfg, tcfg, train_ds.images, db)

        preds = [predict(model, img).probs.argmax(axis=2) for img in eval_ds.images]
        miou, per_class = compute_miou(preds, eval_ds.masks, c)
        diversity = class_diversity(pending, gts)

        next_pending: list[PixelRef] = []
        if r + 1 < config.rounds:
            try:
                next_pending = _select_batch(
                    config, model, images_by_id, eligible, selected_ids, n, seed, r + 1
                )
            except ShortfallError as exc:
                warnings.warn(f"candidates exhausted at round {r}: {exc}", stacklevel=2)
                reports.append(
                    _report(r, n, miou, per_class, history, t0, diversity)
                )
                return (reports, db) if return_db else reports
        reports.append(_report(r, n, miou, per_class, history, t0, diversity))
        pending = next_pending
    return (reports, db) if return_db else reports


def _report(
    r: int,
    n: int,
    miou: float,
    per_class: np.ndarray,
    history: list[float],
    t0: float,
    diversity: float,
) -> RoundReport:
    return RoundReport(
        round=r,
        labels_per_image=n * (r + 1),
        miou=miou,
        per_class_iou=tuple(float(v) for v in per_class),
        train_loss=float(history[-1]),
        seconds=time.perf_counter() - t0,
        class_diversity=diversity,
    )


def _select_batch_random(
    eligible: Mapping[str, np.ndarray], n: int, seed: int
) -> list[PixelRef]:
    out: list[PixelRef] = []
    for iid in sorted(eligible):
        out.extend(_choose_from_grid(iid, eligible[iid], n, seed))
    return out


def _select_batch(
    config: LoopConfig,
    model: Model,
    images_by_id: Mapping[str, Image],
    eligible: Mapping[str, np.ndarray],
    selected_ids: Sequence[str],
    n: int,
    seed: int,
    next_round: int,
) -> list[PixelRef]:
    acq = config.acquisition
    if acq.strategy is Strategy.RANDOM:
        return _select_batch_random(eligible, n, stable_seed(seed, "round", next_round))
    dump_dir = None
    if config.dump_dir is not None:
        dump_dir = Path(config.dump_dir) / f"seed_{seed}" / f"round_{next_round}"
        dump_dir.mkdir(parents=True, exist_ok=True)
    out: list[PixelRef] = []
    for iid in selected_ids:
        img = images_by_id[iid]
        if acq.committee:
            pm = predict(
                model, img, mc_passes=acq.mc_passes, seed=stable_seed(seed, "mc", next_round)
            )
        else:
            pm = predict(model, img)
        umap = score_uncertainty(acq.strategy, pm)
        pick_seed = stable_seed(seed, acq.seed, "acquire", iid, next_round)
        excluded = ~eligible[iid]
        if acq.heuristic is Heuristic.VARIANT_B:
            picks = select_variant_b(umap, n, acq.top_percent, excluded, pick_seed)
        else:
            picks = select_variant_a(umap, n, acq.top_percent, excluded, pick_seed)
        if dump_dir is not None:
            save_uncertainty_grid(umap, dump_dir / f"{iid}.txt")
        out.extend(picks)
    if dump_dir is not None:
        save_selected_refs(out, dump_dir / "selected.jsonl")
    return out


def run_experiment(config: LoopConfig) -> dict[int, list[RoundReport]]:
    """run_active_learning once per configured seed."""
    return {seed: run_active_learning(config, seed) for seed in config.seeds}


# --- CSV emission ------------------------------------------------------------------

def _fmt(x: object) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_report_csv(
    path: str | Path,
    reports_by_seed: Mapping[int, Sequence[RoundReport]],
    num_classes: int,
) -> None:
    """Schema: round,labels_per_image,miou,class_<c>_iou...,train_loss,seconds,seed"""
    header = (
        ["round", "labels_per_image", "miou"]
        + [f"class_{c}_iou" for c in range(num_classes)]
        + ["train_loss", "seconds", "seed"]
    )
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for seed, reports in reports_by_seed.items():
            for rep in reports:
                row = (
                    [rep.round, rep.labels_per_image, _fmt(rep.miou)]
                    + [_fmt(v) for v in rep.per_class_iou]
                    + [_fmt(rep.train_loss), _fmt(rep.seconds), seed]
                )
                writer.writerow(row)


def _write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


# --- studies -------------------------------------------------------------------------

def study_diversity_ratio(
    config: LoopConfig, etas: Sequence[float], out_path: str | Path | None = None
) -> list[dict]:
    """Single-round training at each diversity ratio, fixed total budget.

    The budget equals pixels_per_image * num_train_images (i.e. what eta=1
    would spend), redistributed per eta.
    """
    train_ds, eval_ds = resolve_datasets(config)
    c = train_ds.num_classes
    gts = train_ds.masks_by_id()
    ids_sorted = sorted(train_ds.ids())
    n_total = len(ids_sorted)
    total_budget = config.pixels_per_image * n_total

    rows: list[dict] = []
    for eta in sorted(etas):
        mious: list[float] = []
        for seed in config.seeds:
            alloc = distribute_budget(
                total_budget, n_total, eta, stable_seed(seed, "diversity", repr(eta))
            )
            db = AnnotationDatabase(c)
            refs: list[PixelRef] = []
            for idx in sorted(alloc):
                iid = ids_sorted[idx]
                grid = gts[iid].classes != IGNORE_LABEL
                refs.extend(
                    _choose_from_grid(iid, grid, alloc[idx], stable_seed(seed, "eta-pick", repr(eta)))
                )
            db.extend(_answer_queries(config.oracle, gts, refs, 0, seed))
            mcfg = replace(config.model, num_classes=c, seed=stable_seed(seed, "init", 0))
            tcfg = replace(config.train, seed=stable_seed(seed, "train", 0))
            model, _ = train_round_history(mcfg, tcfg, train_ds.images, db)
            preds = [predict(model, img).probs.argmax(axis=2) for img in eval_ds.images]
            miou, _ = compute_miou(preds, eval_ds.masks, c)
            mious.append(miou)
        mean, std = _mean_std(mious)
        rows.append({"eta": eta, "mean_miou": mean, "std_miou": std, "mious": tuple(mious)})
    if out_path is not None:
        _write_rows(
            out_path,
            ["eta", "mean_miou", "std_miou"],
            [(r["eta"], r["mean_miou"], r["std_miou"]) for r in rows],
        )
    return rows


def study_round_batch(
    config: LoopConfig,
    ns: Sequence[int],
    max_budget_per_image: int,
    out_path: str | Path | None = None,
) -> list[dict]:
    """Learning curves for different per-round query counts at a shared budget."""
    rows: list[dict] = []
    for n in ns:
        rounds = math.ceil(max_budget_per_image / n)
        cfg = replace(config, rounds=rounds, pixels_per_image=n)
        by_seed = run_experiment(cfg)
        totals = [sum(rep.seconds for rep in reports) for reports in by_seed.values()]
        num_rounds = min(len(reports) for reports in by_seed.values())
        for r in range(num_rounds):
            mean, std = _mean_std([by_seed[s][r].miou for s in cfg.seeds])
            rows.append(
                {
                    "n": n,
                    "rounds_total": rounds,
                    "round": r,
                    "labels_per_image": n * (r + 1),
                    "mean_miou": mean,
                    "std_miou": std,
                    "mean_total_seconds": float(np.mean(totals)),
                }
            )
    if out_path is not None:
        _write_rows(
            out_path,
            ["n", "rounds_total", "round", "labels_per_image", "mean_miou", "std_miou", "mean_total_seconds"],
            [
                (r["n"], r["rounds_total"], r["round"], r["labels_per_image"], r["mean_miou"], r["std_miou"], r["mean_total_seconds"])
                for r in rows
            ],
        )
    return rows


def study_noise(
    config: LoopConfig, error_rate: float, out_path: str | Path | None = None
) -> list[dict]:
    """Paired clean-vs-noisy runs sharing seeds, differing only in oracle kind."""
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError("error_rate must be in [0, 1]")
    clean_cfg = replace(config, oracle=OracleConfig(kind=OracleKind.SIMULATED))
    noisy_cfg = replace(
        config, oracle=OracleConfig(kind=OracleKind.NOISY, error_rate=error_rate)
    )
    clean = run_experiment(clean_cfg)
    noisy = run_experiment(noisy_cfg)
    rows: list[dict] = []
    num_rounds = min(
        min(len(r) for r in clean.values()), min(len(r) for r in noisy.values())
    )
    for r in range(num_rounds):
        cm, cs = _mean_std([clean[s][r].miou for s in config.seeds])
        nm, ns_ = _mean_std([noisy[s][r].miou for s in config.seeds])
        rows.append(
            {
                "round": r,
                "labels_per_image": config.pixels_per_image * (r + 1),
                "clean_mean_miou": cm,
                "clean_std_miou": cs,
                "noisy_mean_miou": nm,
                "noisy_std_miou": ns_,
            }
        )
    if out_path is not None:
        _write_rows(
            out_path,
            ["round", "labels_per_image", "clean_mean_miou", "clean_std_miou", "noisy_mean_miou", "noisy_std_miou"],
            [
                (r["round"], r["labels_per_image"], r["clean_mean_miou"], r["clean_std_miou"], r["noisy_mean_miou"], r["noisy_std_miou"])
                for r in rows
            ],
        )
    return rows


def study_depth(
    config: LoopConfig, blocks: Sequence[int], out_path: str | Path | None = None
) -> list[dict]:
    """Config sweep over encoder depth (num_blocks); qualitative output only."""
    rows: list[dict] = []
    for b in blocks:
        cfg = replace(config, model=replace(config.model, num_blocks=b))
        by_seed = run_experiment(cfg)
        num_rounds = min(len(r) for r in by_seed.values())
        for r in range(num_rounds):
            mean, std = _mean_std([by_seed[s][r].miou for s in cfg.seeds])
            rows.append(
                {
                    "num_blocks": b,
                    "round": r,
                    "labels_per_image": cfg.pixels_per_image * (r + 1),
                    "mean_miou": mean,
                    "std_miou": std,
                }
            )
    if out_path is not None:
        _write_rows(
            out_path,
            ["num_blocks", "round", "labels_per_image", "mean_miou", "std_miou"],
            [
                (r["num_blocks"], r["round"], r["labels_per_image"], r["mean_miou"], r["std_miou"])
                for r in rows
            ],
        )
    return rows
