"""Command line interface.

Subcommands mirror the pipeline stages: colorize raw depth, encode features
into the cache, train per-level classifiers, evaluate end to end, fuse
exported score CSVs, run the pooling ablation and the reseed-stability
experiment, and regenerate report text from per-run CSVs.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .config import RunConfig, load_config
from .depth import CameraIntrinsics, colorize_depth, load_depth_png
from .fusion import average_vote, modality_weight_table, weighted_scores, write_fusion_csv
from .runner import (
    FeatureStore,
    RunReport,
    encode_modality_level,
    pooling_ablation,
    reseed_stability,
    resolve_split,
    run_experiment,
)
from .svm import SvmConfig, predict, save_model, topk_accuracy, train_ovr
from .tensor_io import load_manifest, write_tensor


def _parse_levels(expr: str) -> list[int]:
    levels = set()
    for part in expr.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            levels.update(range(int(lo), int(hi) + 1))
        elif part:
            levels.add(int(part))
    return sorted(levels)


def _narrow(cfg: RunConfig, split: str | None, seed: int | None, levels: str | None,
            out: str | None) -> RunConfig:
    if split and split != "all":
        chosen = [s for s in cfg.splits if s.split_id == split]
        if not chosen:
            raise click.UsageError(f"split {split!r} not in config")
        cfg = replace(cfg, splits=chosen)
    if seed is not None:
        cfg = replace(cfg, seeds=[seed])
    if levels:
        wanted = set(_parse_levels(levels))
        kept = {lv: spec for lv, spec in cfg.levels.items() if lv in wanted}
        missing = wanted - set(kept)
        if missing:
            raise click.UsageError(f"levels {sorted(missing)} not in config")
        fusion = replace(
            cfg.fusion,
            levels_rgb=tuple(l for l in cfg.fusion.levels_rgb if l in wanted),
            levels_depth=tuple(l for l in cfg.fusion.levels_depth if l in wanted),
        )
        cfg = replace(cfg, levels=kept, fusion=fusion)
    if out:
        cfg = replace(cfg, out_dir=Path(out))
    return cfg


@click.group()
def main():
    """Multi-level random recursive encoding and RGB-D fusion pipeline."""


@main.command()
@click.option("--depth", "depth_file", type=click.Path(exists=True), help="single 16-bit depth PNG")
@click.option("--depth-dir", type=click.Path(exists=True, file_okay=False), help="directory of depth PNGs")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--fx", required=True, type=float)
@click.option("--fy", required=True, type=float)
@click.option("--cx", required=True, type=float)
@click.option("--cy", required=True, type=float)
@click.option("--depth-scale", default=0.001, show_default=True, help="meters per stored unit")
@click.option("--short-side", is_flag=True, help="resize short side to 256 instead of square 256x256")
def colorize(depth_file, depth_dir, out, fx, fy, cx, cy, depth_scale, short_side):
    """Convert raw depth PNGs to standardized surface-normal tensors."""
    if not depth_file and not depth_dir:
        raise click.UsageError("need --depth or --depth-dir")
    paths = [Path(depth_file)] if depth_file else sorted(Path(depth_dir).glob("*.png"))
    if not paths:
        raise click.UsageError("no depth PNGs found")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)
    for p in paths:
        frame = load_depth_png(p, depth_scale=depth_scale)
        tensor = colorize_depth(frame, intr, short_side=short_side)
        target = out_dir / (p.stem + ".npy")
        write_tensor(tensor, target)
        click.echo(f"colorized {p.name} -> {target}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="all", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--levels", default=None, help="e.g. 1-7 or 2,4,6")
@click.option("--out", default=None, type=click.Path(file_okay=False))
@click.option("--export-weights", is_flag=True,
              help="also dump each level's stacked encoder matrix for audit")
def encode(config_path, split, seed, levels, out, export_weights):
    """Encode every configured level into the feature cache."""
    cfg = _narrow(load_config(config_path), split, seed, levels, out)
    store = FeatureStore(root=Path(cfg.out_dir) / "cache")
    manifest = load_manifest(cfg.manifest_path)
    if export_weights:
        from .encoder import EncoderConfig, stacked_weights

        weights_dir = Path(cfg.out_dir) / "weights"
        weights_dir.mkdir(parents=True, exist_ok=True)
        for run_seed in cfg.seeds:
            for lv in sorted(cfg.levels):
                spec = cfg.levels[lv]
                k, s, _ = spec.target_shape
                enc = EncoderConfig(
                    num_rnns=cfg.encoder_params["num_rnns"],
                    channels=k,
                    block_size=s,
                    tree_depth=cfg.encoder_params["tree_depth"],
                    child_block=cfg.encoder_params["child_block"],
                    master_seed=run_seed,
                )
                target = weights_dir / f"level{lv}_seed{run_seed}.npy"
                np.save(target, stacked_weights(enc, lv))
                click.echo(f"exported encoder weights -> {target}")
    for split_spec in cfg.splits:
        split_manifest = resolve_split(manifest, split_spec)
        for run_seed in cfg.seeds:
            for modality in split_manifest.modalities():
                for lv in sorted(cfg.levels):
                    ids, _, _, feats = encode_modality_level(
                        split_manifest,
                        modality,
                        cfg.levels[lv],
                        cfg.encoder_params,
                        run_seed,
                        workers=cfg.workers,
                        store=store,
                    )
                    click.echo(
                        f"split {split_spec.split_id} seed {run_seed} {modality} "
                        f"level {lv}: {len(ids)} samples x {feats.shape[1]} dims"
                    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="all", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--levels", default=None)
@click.option("--out", default=None, type=click.Path(file_okay=False))
def train(config_path, split, seed, levels, out):
    """Train per-level one-vs-rest SVMs and save the model blobs."""
    cfg = _narrow(load_config(config_path), split, seed, levels, out)
    store = FeatureStore(root=Path(cfg.out_dir) / "cache")
    manifest = load_manifest(cfg.manifest_path)
    models_dir = Path(cfg.out_dir) / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    for split_spec in cfg.splits:
        split_manifest = resolve_split(manifest, split_spec)
        for run_seed in cfg.seeds:
            svm_cfg = SvmConfig(seed=run_seed, **cfg.svm_params)
            for modality in split_manifest.modalities():
                for lv in sorted(cfg.levels):
                    _, labels, roles, feats = encode_modality_level(
                        split_manifest,
                        modality,
                        cfg.levels[lv],
                        cfg.encoder_params,
                        run_seed,
                        workers=cfg.workers,
                        store=store,
                    )
                    mask = roles == "train"
                    model = train_ovr(feats[mask], labels[mask], svm_cfg)
                    path = models_dir / (
                        f"{split_spec.split_id}_{run_seed}_{modality}_level{lv}.svm"
                    )
                    save_model(model, path)
                    click.echo(f"trained {path.name} (objectives: "
                               + ", ".join(f"{o:.3f}" for o in model.objectives) + ")")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="all", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--levels", default=None)
@click.option("--out", default=None, type=click.Path(file_okay=False))
@click.option("--workers", type=int, default=None)
def evaluate(config_path, split, seed, levels, out, workers):
    """Run the full protocol and write report CSVs + text summary."""
    cfg = _narrow(load_config(config_path), split, seed, levels, out)
    if workers is not None:
        cfg = replace(cfg, workers=workers)
    report = run_experiment(cfg)
    click.echo(report.to_text(), nl=False)
    click.echo(f"reports written to {Path(cfg.out_dir) / 'reports'}")


def _read_scores_csv(path):
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_scores = len(header) - 2
        ids, labels, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(int(row[1]))
            rows.append([float(v) for v in row[2:]])
    return ids, np.array(labels), np.array(rows), n_scores


@main.command()
@click.option("--rgb-scores", required=True, type=click.Path(exists=True))
@click.option("--depth-scores", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option(
    "--strategy",
    type=click.Choice(["weighted_vote", "average_vote"]),
    default="weighted_vote",
    show_default=True,
)
def fuse(rgb_scores, depth_scores, out, strategy):
    """Fuse two exported score CSVs into final predictions."""
    rgb_ids, rgb_labels, s_rgb, _ = _read_scores_csv(rgb_scores)
    depth_ids, depth_labels, s_depth, _ = _read_scores_csv(depth_scores)
    index = {sid: i for i, sid in enumerate(depth_ids)}
    pairs = [(i, index[sid]) for i, sid in enumerate(rgb_ids) if sid in index]
    if not pairs:
        raise click.UsageError("no shared sample ids between the two score files")
    ri = np.array([i for i, _ in pairs])
    di = np.array([j for _, j in pairs])
    if strategy == "weighted_vote":
        fused = weighted_scores(s_rgb[ri], s_depth[di])
    else:
        fused = average_vote([s_rgb[ri], s_depth[di]])
    preds = predict(fused)
    table = modality_weight_table(s_rgb[ri], s_depth[di])
    write_fusion_csv(out, [rgb_ids[i] for i in ri], table, preds)
    acc = topk_accuracy(fused, rgb_labels[ri], 1)
    click.echo(f"fused {len(pairs)} samples, accuracy {acc * 100:.2f}% -> {out}")


@main.command("ablate-pooling")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="all", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", default=None, type=click.Path(file_okay=False))
@click.option("--force-constant-weights", is_flag=True,
              help="pin random pooling weights to 1/|area| (averaging check)")
def ablate_pooling(config_path, split, seed, out, force_constant_weights):
    """Compare random, max, and average pooling with shared encoder seeds."""
    cfg = _narrow(load_config(config_path), split, seed, None, out)
    reports = pooling_ablation(cfg, force_constant_weights=force_constant_weights)
    click.echo(f"{'method':<8} {'modality':<8} {'level':<6} {'top1':>8}")
    for method, report in reports.items():
        for s in report.summary:
            click.echo(
                f"{method:<8} {s['modality']:<8} {s['level']:<6} "
                f"{s['top1_mean'] * 100:8.2f}"
            )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--runs", required=True, type=int)
@click.option("--seed", type=int, default=None, help="base master seed override")
@click.option("--out", default=None, type=click.Path(file_okay=False))
def stability(config_path, runs, seed, out):
    """Reseed-stability experiment: rerun with fresh master seeds."""
    cfg = _narrow(load_config(config_path), None, seed, None, out)
    report = reseed_stability(cfg, runs)
    click.echo(report.to_text(), nl=False)


@main.command()
@click.option("--out", "reports_dir", required=True, type=click.Path(exists=True, file_okay=False))
def report(reports_dir):
    """Regenerate summary.csv and report.txt from per_run.csv."""
    per_run = Path(reports_dir) / "per_run.csv"
    if not per_run.exists():
        raise click.UsageError(f"{per_run} not found")
    with open(per_run) as fh:
        reader = csv.DictReader(fh)
        top_k = tuple(
            int(c[3:]) for c in reader.fieldnames if c.startswith("top")
        )
        rows = []
        for row in reader:
            entry = {
                "split": row["split"],
                "seed": int(row["seed"]),
                "modality": row["modality"],
                "level": row["level"],
            }
            for k in top_k:
                entry[f"top{k}"] = float(row[f"top{k}"])
            rows.append(entry)
    confusion_path = Path(reports_dir) / "confusion_matrix.csv"
    confusion = (
        np.loadtxt(confusion_path, delimiter=",", dtype=np.int64, ndmin=2)
        if confusion_path.exists()
        else None
    )
    rebuilt = RunReport(rows=rows, top_k=top_k, confusion=confusion)
    rebuilt.write(Path(reports_dir))
    click.echo(rebuilt.to_text(), nl=False)


if __name__ == "__main__":
    main()
