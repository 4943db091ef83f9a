"""Command-line interface: dataset generation, simulated active learning,
ablation studies, training from collected labels, and the annotation server.
"""

from __future__ import annotations

import functools
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .acquisition import AcquisitionConfig, Heuristic, Strategy, select_random
from .core import IGNORE_LABEL, PixelRef, load_annotations
from .datasets import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .engine import (
    LoopConfig,
    compute_miou,
    resolve_datasets,
    run_experiment,
    study_depth,
    study_diversity_ratio,
    study_noise,
    study_round_batch,
    write_report_csv,
)
from .model import ModelConfig, TrainConfig, load_model, predict, save_model, train_round_history
from .oracle import OracleConfig, OracleKind
from .seeding import stable_seed

_STRATEGIES = {
    "random": Strategy.RANDOM,
    "lc": Strategy.LEAST_CONFIDENCE,
    "margin": Strategy.MARGIN,
    "entropy": Strategy.ENTROPY,
}


def _parse_list(value: str, cast) -> tuple:
    return tuple(cast(v) for v in value.split(",") if v.strip())


def _decay_schedule(epochs: int) -> tuple[int, ...]:
    """Step-decay epochs at roughly 70% and 87% of the run."""
    return tuple(sorted({e for e in (int(epochs * 0.7), int(epochs * 0.875)) if 1 <= e < epochs}))


@click.group()
def main() -> None:
    """Active learning for semantic segmentation from sparse pixel labels."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output dataset directory.")
@click.option("--images", default=100, show_default=True, help="Number of images.")
@click.option("--size", default=64, show_default=True, help="Image height and width.")
@click.option("--classes", "num_classes", default=4, show_default=True, help="Number of classes.")
@click.option("--seed", default=0, show_default=True, help="Generator seed.")
@click.option("--noise-std", default=0.14, show_default=True, help="Gaussian pixel noise std.")
def generate(out_dir: str, images: int, size: int, num_classes: int, seed: int, noise_std: float) -> None:
    """Generate a synthetic shapes dataset."""
    spec = SyntheticSpec(
        num_images=images,
        height=size,
        width=size,
        num_classes=num_classes,
        noise_std=noise_std,
        seed=seed,
    )
    dataset = generate_synthetic(spec)
    save_dataset(dataset, out_dir, spec=spec)
    click.echo(f"wrote {len(dataset)} images to {out_dir}")


def _loop_options(fn):
    @click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
    @click.option("--rounds", default=6, show_default=True)
    @click.option("--pixels-per-image", "pixels_per_image", default=10, show_default=True)
    @click.option("--strategy", default="margin", show_default=True,
                  type=click.Choice(sorted(_STRATEGIES)))
    @click.option("--committee", is_flag=True, help="Average MC-dropout passes before scoring.")
    @click.option("--mc-passes", default=20, show_default=True)
    @click.option("--top-percent", default=5.0, show_default=True)
    @click.option("--heuristic", default="b", show_default=True, type=click.Choice(["a", "b"]))
    @click.option("--oracle", "oracle_kind", default="sim", show_default=True,
                  type=click.Choice(["sim", "noisy"]))
    @click.option("--error-rate", default=0.1, show_default=True)
    @click.option("--eta", default=1.0, show_default=True)
    @click.option("--seeds", default="0", show_default=True, help="Comma-separated seeds, one repeat each.")
    @click.option("--epochs", default=16, show_default=True)
    @click.option("--lr", default=0.07, show_default=True)
    @click.option("--batch-images", default=10, show_default=True)
    @click.option("--channels", default=10, show_default=True)
    @click.option("--num-blocks", default=2, show_default=True)
    @click.option("--dropout", default=0.1, show_default=True)
    @click.option("--augment", is_flag=True)
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def _build_config(
    dataset_dir: str,
    rounds: int,
    pixels_per_image: int,
    strategy: str,
    committee: bool,
    mc_passes: int,
    top_percent: float,
    heuristic: str,
    oracle_kind: str,
    error_rate: float,
    eta: float,
    seeds: str,
    epochs: int,
    lr: float,
    batch_images: int,
    channels: int,
    num_blocks: int,
    dropout: float,
    augment: bool,
) -> LoopConfig:
    dataset = load_dataset(dataset_dir)
    oracle = (
        OracleConfig(kind=OracleKind.NOISY, error_rate=error_rate)
        if oracle_kind == "noisy"
        else OracleConfig(kind=OracleKind.SIMULATED)
    )
    return LoopConfig(
        dataset=dataset,
        model=ModelConfig(
            num_blocks=num_blocks,
            channels=channels,
            num_classes=dataset.num_classes,
            dropout_rate=dropout,
        ),
        train=TrainConfig(
            epochs=epochs,
            learning_rate=lr,
            batch_images=batch_images,
            augment=augment,
            lr_decay_epochs=_decay_schedule(epochs),
        ),
        acquisition=AcquisitionConfig(
            strategy=_STRATEGIES[strategy],
            committee=committee,
            mc_passes=mc_passes,
            top_percent=top_percent,
            pixels_per_image=pixels_per_image,
            heuristic=Heuristic(heuristic),
        ),
        oracle=oracle,
        rounds=rounds,
        pixels_per_image=pixels_per_image,
        eta=eta,
        seeds=_parse_list(seeds, int),
    )


@main.command()
@_loop_options
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--dump-uncertainty", "dump_dir", default=None, type=click.Path(),
              help="Dump per-image uncertainty grids and selections per round.")
def simulate(out_csv: str, dump_dir: str | None, **kwargs) -> None:
    """Run the active-learning loop against a simulated oracle."""
    config = _build_config(**kwargs)
    if dump_dir is not None:
        config = replace(config, dump_dir=dump_dir)
    reports = run_experiment(config)
    num_classes = next(iter(reports.values()))[0].per_class_iou
    write_report_csv(out_csv, reports, len(num_classes))
    final = [reps[-1].miou for reps in reports.values()]
    click.echo(f"final mIoU over {len(final)} seed(s): {np.mean(final):.4f}")
    click.echo(f"report written to {out_csv}")


@main.group()
def study() -> None:
    """Desk-scale ablation studies."""


@study.command("diversity-ratio")
@_loop_options
@click.option("--etas", default="0.01,0.1,0.25,0.5,1.0", show_default=True)
@click.option("--out", "out_csv", required=True, type=click.Path())
def study_diversity_cmd(etas: str, out_csv: str, **kwargs) -> None:
    """Sweep the annotation diversity ratio at a fixed total budget."""
    config = _build_config(**kwargs)
    rows = study_diversity_ratio(config, _parse_list(etas, float), out_csv)
    for row in rows:
        click.echo(f"eta={row['eta']:<6} mean mIoU {row['mean_miou']:.4f} (+/- {row['std_miou']:.4f})")


@study.command("round-batch")
@_loop_options
@click.option("--ns", default="1,2,5,10", show_default=True)
@click.option("--max-budget", default=10, show_default=True, help="Total pixels per image.")
@click.option("--out", "out_csv", required=True, type=click.Path())
def study_round_batch_cmd(ns: str, max_budget: int, out_csv: str, **kwargs) -> None:
    """Sweep pixels-per-round at a shared maximum budget."""
    config = _build_config(**kwargs)
    rows = study_round_batch(config, _parse_list(ns, int), max_budget, out_csv)
    for n in _parse_list(ns, int):
        last = [r for r in rows if r["n"] == n][-1]
        click.echo(
            f"n={n}: final mIoU {last['mean_miou']:.4f}, "
            f"total train wall-clock {last['mean_total_seconds']:.1f}s"
        )


@study.command("noise")
@_loop_options
@click.option("--out", "out_csv", required=True, type=click.Path())
def study_noise_cmd(out_csv: str, **kwargs) -> None:
    """Paired clean-vs-noisy oracle curves with shared seeds."""
    error_rate = kwargs.pop("error_rate")
    config = _build_config(error_rate=0.0, **dict(kwargs, oracle_kind="sim"))
    rows = study_noise(config, error_rate, out_csv)
    last = rows[-1]
    drop = 1.0 - last["noisy_mean_miou"] / max(last["clean_mean_miou"], 1e-12)
    click.echo(
        f"final round: clean {last['clean_mean_miou']:.4f}, "
        f"noisy {last['noisy_mean_miou']:.4f} (relative drop {drop:.1%})"
    )


@study.command("depth")
@_loop_options
@click.option("--blocks", default="1,2,3,4", show_default=True)
@click.option("--out", "out_csv", required=True, type=click.Path())
def study_depth_cmd(blocks: str, out_csv: str, **kwargs) -> None:
    """Sweep the encoder depth knob (qualitative)."""
    config = _build_config(**kwargs)
    rows = study_depth(config, _parse_list(blocks, int), out_csv)
    for b in _parse_list(blocks, int):
        last = [r for r in rows if r["num_blocks"] == b][-1]
        click.echo(f"num_blocks={b}: final mIoU {last['mean_miou']:.4f}")


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--out-model", "out_model", required=True, type=click.Path())
@click.option("--report", "report_csv", default=None, type=click.Path())
@click.option("--epochs", default=16, show_default=True)
@click.option("--channels", default=10, show_default=True)
@click.option("--num-blocks", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train(
    dataset_dir: str,
    labels_path: str,
    out_model: str,
    report_csv: str | None,
    epochs: int,
    channels: int,
    num_blocks: int,
    seed: int,
) -> None:
    """Train one round from a collected JSONL label file (e.g. a human session)."""
    dataset = load_dataset(dataset_dir)
    db = load_annotations(labels_path, num_classes=dataset.num_classes)
    if len(db) == 0:
        raise click.ClickException(f"{labels_path} holds no labels")
    mcfg = ModelConfig(
        num_blocks=num_blocks,
        channels=channels,
        num_classes=dataset.num_classes,
        seed=stable_seed(seed, "init", 0),
    )
    tcfg = TrainConfig(
        epochs=epochs,
        lr_decay_epochs=_decay_schedule(epochs),
        seed=stable_seed(seed, "train", 0),
    )
    model, history = train_round_history(mcfg, tcfg, dataset.images, db)
    save_model(model, out_model)
    click.echo(f"trained on {len(db)} labels; final epoch loss {history[-1]:.4f}")

    config = LoopConfig(dataset=dataset, rounds=1, seeds=(seed,))
    try:
        _, eval_ds = resolve_datasets(config)
    except ValueError:
        eval_ds = None
    if eval_ds is not None:
        preds = [predict(model, img).probs.argmax(axis=2) for img in eval_ds.images]
        miou, _ = compute_miou(preds, eval_ds.masks, dataset.num_classes)
        click.echo(f"held-out mIoU: {miou:.4f}")
    click.echo(f"model checkpoint written to {out_model}")


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--session-out", "session_out", required=True, type=click.Path())
@click.option("--pixels-per-image", "pixels_per_image", default=10, show_default=True)
@click.option("--mode", default="propose", show_default=True, type=click.Choice(["propose", "human-pick"]))
@click.option("--model", "model_path", default=None, type=click.Path(exists=True),
              help="Checkpoint for margin-based proposals (default: random proposals).")
@click.option("--seed", default=0, show_default=True)
@click.option("--ui-dir", "ui_dir", default=None, type=click.Path(exists=True),
              help="Static directory with the annotation UI (defaults to the bundled build).")
@click.option("--resume", is_flag=True, help="Restore session state from an existing label file.")
def serve(
    dataset_dir: str,
    port: int,
    host: str,
    session_out: str,
    pixels_per_image: int,
    mode: str,
    model_path: str | None,
    seed: int,
    ui_dir: str | None,
    resume: bool,
) -> None:
    """Run the annotation server (and UI) for a live labelling session."""
    import uvicorn

    from .acquisition import score_margin, select_variant_b
    from .server import SessionStore, create_app

    dataset = load_dataset(dataset_dir)
    store = SessionStore(dataset, session_out)

    proposals: list[PixelRef] = []
    if mode == "propose":
        already = {lp.pixel for lp in store._existing}
        if model_path is not None:
            model = load_model(model_path)
            for img in dataset.images:
                mask = dataset.mask_by_id(img.id)
                umap = score_margin(predict(model, img))
                excluded = (mask.classes == IGNORE_LABEL).copy()
                for ref in already:
                    if ref.image_id == img.id:
                        excluded[ref.row, ref.col] = True
                proposals.extend(
                    select_variant_b(
                        umap, pixels_per_image, 5.0, excluded, stable_seed(seed, "serve", img.id)
                    )
                )
        else:
            candidates = [
                PixelRef(img.id, r, c)
                for img in dataset.images
                for r in range(img.height)
                for c in range(img.width)
                if dataset.mask_by_id(img.id).classes[r, c] != IGNORE_LABEL
                and PixelRef(img.id, r, c) not in already
            ]
            proposals = select_random(candidates, pixels_per_image, stable_seed(seed, "serve"))

    sid = store.create_session(proposals, mode=mode, resume=resume, session_id="default")
    if ui_dir is None:
        bundled = Path(__file__).resolve().parent.parent.parent / "frontend"
        ui_dir = str(bundled) if (bundled / "index.html").exists() else None
    app = create_app(store, static_dir=ui_dir)
    click.echo(f"session {sid!r}: {len(proposals)} proposals, labels -> {session_out}")
    click.echo(f"serving on http://{host}:{port}/ (API under /sessions/{sid}/...)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
