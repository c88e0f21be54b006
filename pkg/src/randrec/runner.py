"""Config-driven experiment runner tying the stages together.

For each (split, seed) the runner encodes every configured level of every
modality present in the manifest, trains one-vs-rest SVMs on the train
role, scores the test role, applies the fusion plan, and aggregates
accuracies into a report with mean and population standard deviation over
runs.

Encoded features are cached on disk under ``<out_dir>/cache``, keyed by a
content hash of the relevant config slice plus the input tensor bytes, so
reruns skip the encode stage entirely and deleting the cache reproduces
identical numbers. Encoding runs in fixed-size chunks handed to a bounded
worker pool; chunk boundaries never depend on the worker count, which keeps
feature files byte-identical between serial and parallel runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, SplitSpec
from .encoder import EncoderConfig, encode_batch
from .errors import ConfigurationError, StageError, ValidationError
from .fusion import (
    average_vote,
    concat_levels,
    modality_weight_table,
    weighted_scores,
    write_fusion_csv,
)
from .pooling import LevelSpec, preprocess_batch
from .svm import (
    SvmConfig,
    confusion_matrix,
    decision_scores,
    predict,
    topk_accuracy,
    train_ovr,
)
from .tensor_io import (
    ActivationTensor,
    DatasetManifest,
    draw_heldout,
    load_manifest,
    make_instance_split,
    read_tensor,
    write_tensor,
)

ENCODE_CHUNK = 64  # fixed so results never depend on the worker count


def _stage(name: str, context: str):
    """Decorator-free stage wrapper: call fn inside for error context."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(f"stage {name} failed ({context}): {exc}") from exc
            return False

    return _Ctx()


def resolve_split(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    if spec.kind == "manifest":
        return manifest
    if spec.kind == "heldout":
        return make_instance_split(manifest, dict(spec.heldout))
    if spec.kind == "draw":
        return make_instance_split(manifest, draw_heldout(manifest, spec.draw_seed))
    raise ConfigurationError(f"unknown split kind {spec.kind!r}")


def manifest_content_digest(manifest: DatasetManifest, modality: str, level: int) -> str:
    """Hash of the tensor bytes feeding one (modality, level) encode."""
    h = hashlib.sha256()
    for r in manifest.filter(modality=modality):
        if level not in r.level_paths:
            raise ValidationError(
                f"sample {r.sample_id}/{modality} lacks a level{level} tensor"
            )
        h.update(r.sample_id.encode())
        h.update(manifest.resolve_path(r.level_paths[level]).read_bytes())
    return h.hexdigest()


@dataclass
class FeatureStore:
    """Per-sample encoded-feature cache under out_dir/cache."""

    root: Path

    def key(
        self,
        content_digest: str,
        level_spec: LevelSpec,
        encoder_params: dict,
        seed: int,
        force_constant_weights: bool,
    ) -> str:
        slice_repr = json.dumps(
            {
                "input": content_digest,
                "level": level_spec.level,
                "raw": list(level_spec.raw_shape),
                "target": list(level_spec.target_shape),
                "preprocess": level_spec.preprocess,
                "method": level_spec.method,
                "encoder": {k: encoder_params[k] for k in sorted(encoder_params)},
                "seed": seed,
                "constant_weights": force_constant_weights,
            },
            sort_keys=True,
        )
        return hashlib.sha256(slice_repr.encode()).hexdigest()[:24]

    def dir_for(self, key: str) -> Path:
        return self.root / key

    def load(self, key: str, sample_ids: list[str]) -> np.ndarray | None:
        d = self.dir_for(key)
        if not d.is_dir():
            return None
        rows = []
        for sid in sample_ids:
            p = d / f"{sid}.npy"
            if not p.exists():
                return None
            rows.append(read_tensor(p).values)
        return np.vstack(rows)

    def save(self, key: str, sample_ids: list[str], features: np.ndarray) -> None:
        d = self.dir_for(key)
        d.mkdir(parents=True, exist_ok=True)
        for sid, row in zip(sample_ids, features):
            write_tensor(ActivationTensor(values=row), d / f"{sid}.npy")


def _encoder_for(level_spec: LevelSpec, encoder_params: dict, seed: int) -> EncoderConfig:
    k, s, _ = level_spec.target_shape
    return EncoderConfig(
        num_rnns=encoder_params["num_rnns"],
        channels=k,
        block_size=s,
        tree_depth=encoder_params["tree_depth"],
        child_block=encoder_params["child_block"],
        master_seed=seed,
    )


def encode_modality_level(
    manifest: DatasetManifest,
    modality: str,
    level_spec: LevelSpec,
    encoder_params: dict,
    seed: int,
    workers: int = 1,
    store: FeatureStore | None = None,
    force_constant_weights: bool = False,
):
    """Encode one (modality, level) for every sample, cached when possible.

    Returns (sample_ids, labels, roles, features); row order follows the
    manifest record order for the modality.
    """
    records = manifest.filter(modality=modality)
    if not records:
        raise ValidationError(f"manifest has no {modality} records")
    sample_ids = [r.sample_id for r in records]
    labels = np.array([r.category for r in records], dtype=np.int64)
    roles = np.array([r.split_role for r in records])

    cfg = _encoder_for(level_spec, encoder_params, seed)
    digest = manifest_content_digest(manifest, modality, level_spec.level)
    key = None
    if store is not None:
        key = store.key(digest, level_spec, encoder_params, seed, force_constant_weights)
        cached = store.load(key, sample_ids)
        if cached is not None:
            return sample_ids, labels, roles, cached

    paths = [manifest.resolve_path(r.level_paths[level_spec.level]) for r in records]

    def encode_chunk(start: int) -> np.ndarray:
        chunk_paths = paths[start : start + ENCODE_CHUNK]
        raws = []
        for sid, p in zip(sample_ids[start:], chunk_paths):
            with _stage("encode:load", f"sample {sid}, level {level_spec.level}"):
                raws.append(read_tensor(p).values)
        batch = np.stack(raws)
        with _stage("encode:preprocess", f"level {level_spec.level}, {modality}"):
            canon = preprocess_batch(
                batch, level_spec, seed, force_constant_weights=force_constant_weights
            )
        with _stage("encode:rnn", f"level {level_spec.level}, {modality}"):
            return encode_batch(canon, cfg, level_spec.level)

    starts = list(range(0, len(records), ENCODE_CHUNK))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(encode_chunk, starts))
    else:
        blocks = [encode_chunk(s) for s in starts]
    features = np.vstack(blocks)

    if store is not None and key is not None:
        store.save(key, sample_ids, features)
    return sample_ids, labels, roles, features


def _metrics(scores: np.ndarray, labels: np.ndarray, top_k: tuple[int, ...]) -> dict:
    n_classes = scores.shape[1]
    return {
        f"top{k}": topk_accuracy(scores, labels, min(k, n_classes)) for k in top_k
    }


@dataclass
class RunReport:
    """Per-run accuracy rows plus their aggregate and the fused confusion."""

    rows: list[dict]
    top_k: tuple[int, ...]
    confusion: np.ndarray | None = None
    summary: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.summary:
            self.summary = summarize_rows(self.rows, self.top_k)

    def to_text(self) -> str:
        lines = [
            "run report",
            "==========",
            f"runs: {len({(r['split'], r['seed']) for r in self.rows})} "
            f"(std is population std over runs)",
            "",
            f"{'modality':<8} {'level':<6} " + " ".join(f"{'top%d' % k:>16}" for k in self.top_k),
        ]
        for s in self.summary:
            cells = " ".join(
                (
                    f"{s[f'top{k}_mean'] * 100:7.2f} +- {s[f'top{k}_std'] * 100:5.2f}"
                    if s[f"top{k}_std"] is not None
                    else f"{s[f'top{k}_mean'] * 100:7.2f}         "
                )
                for k in self.top_k
            )
            lines.append(f"{s['modality']:<8} {s['level']:<6} {cells}")
        if self.confusion is not None:
            acc = np.trace(self.confusion) / max(self.confusion.sum(), 1)
            lines += ["", f"fused confusion matrix trace accuracy: {acc * 100:.2f}"]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "per_run.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["split", "seed", "modality", "level"] + [
                f"top{k}" for k in self.top_k
            ]
            writer.writerow(header)
            for r in self.rows:
                writer.writerow(
                    [r["split"], r["seed"], r["modality"], r["level"]]
                    + [f"{r[f'top{k}']:.6f}" for k in self.top_k]
                )
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["modality", "level", "n_runs"]
            for k in self.top_k:
                header += [f"top{k}_mean", f"top{k}_std"]
            writer.writerow(header)
            for s in self.summary:
                row = [s["modality"], s["level"], s["n_runs"]]
                for k in self.top_k:
                    std = s[f"top{k}_std"]
                    row += [
                        f"{s[f'top{k}_mean']:.6f}",
                        "" if std is None else f"{std:.6f}",
                    ]
                writer.writerow(row)
        if self.confusion is not None:
            np.savetxt(
                out_dir / "confusion_matrix.csv",
                self.confusion,
                fmt="%d",
                delimiter=",",
            )
        (out_dir / "report.txt").write_text(self.to_text())


def summarize_rows(rows: list[dict], top_k: tuple[int, ...]) -> list[dict]:
    """Mean and population std per (modality, level) over all runs.

    The std is only defined over two or more runs; single-run groups carry
    None and the writers omit the cell.
    """
    groups: dict[tuple[str, str], list[dict]] = {}
    order = []
    for r in rows:
        key = (r["modality"], str(r["level"]))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    summary = []
    for key in order:
        members = groups[key]
        entry = {"modality": key[0], "level": key[1], "n_runs": len(members)}
        for k in top_k:
            vals = np.array([m[f"top{k}"] for m in members], dtype=np.float64)
            entry[f"top{k}_mean"] = float(vals.mean())
            entry[f"top{k}_std"] = float(vals.std()) if len(vals) > 1 else None
        summary.append(entry)
    return summary


def _write_scores_csv(path: Path, sample_ids, labels, scores) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "label"] + [f"score_{c}" for c in range(scores.shape[1])]
        )
        for sid, lab, row in zip(sample_ids, labels, scores):
            writer.writerow([sid, int(lab)] + [f"{v:.9f}" for v in row])


def _fuse_levels(
    plan_levels: tuple[int, ...],
    strategy: str,
    per_level: dict[int, dict],
    svm_cfg: SvmConfig,
):
    """Combine the selected levels of one modality into a single score set."""
    selected = [per_level[lv] for lv in plan_levels]
    if strategy == "average_vote":
        scores = average_vote([s["scores"] for s in selected])
        return scores
    feats_train = concat_levels(*[s["train_features"] for s in selected])
    feats_test = concat_levels(*[s["test_features"] for s in selected])
    model = train_ovr(feats_train, selected[0]["train_labels"], svm_cfg)
    return decision_scores(model, feats_test)


def run_single(
    cfg: RunConfig,
    split_spec: SplitSpec,
    seed: int,
    store: FeatureStore | None = None,
    force_constant_weights: bool = False,
    write_artifacts: bool = True,
):
    """One (split, seed) pass. Returns (rows, fused confusion or None)."""
    manifest = load_manifest(cfg.manifest_path)
    with _stage("split", f"split {split_spec.split_id}"):
        split = resolve_split(manifest, split_spec)
    svm_cfg = SvmConfig(seed=seed, **cfg.svm_params)
    top_k = cfg.report.top_k
    reports_dir = Path(cfg.out_dir) / "reports"
    if write_artifacts:
        reports_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    modality_fused: dict[str, dict] = {}
    for modality in split.modalities():
        per_level: dict[int, dict] = {}
        for lv in sorted(cfg.levels):
            spec = cfg.levels[lv]
            sample_ids, labels, roles, feats = encode_modality_level(
                split,
                modality,
                spec,
                cfg.encoder_params,
                seed,
                workers=cfg.workers,
                store=store,
                force_constant_weights=force_constant_weights,
            )
            train_mask = roles == "train"
            test_mask = roles == "test"
            if not train_mask.any() or not test_mask.any():
                raise ValidationError(
                    f"split {split_spec.split_id} leaves {modality} without both "
                    f"train and test samples"
                )
            with _stage("train", f"{modality} level {lv}"):
                model = train_ovr(feats[train_mask], labels[train_mask], svm_cfg)
            with _stage("score", f"{modality} level {lv}"):
                scores = decision_scores(model, feats[test_mask])
            per_level[lv] = {
                "scores": scores,
                "train_features": feats[train_mask],
                "test_features": feats[test_mask],
                "train_labels": labels[train_mask],
                "test_labels": labels[test_mask],
                "test_ids": [s for s, m in zip(sample_ids, test_mask) if m],
            }
            rows.append(
                {
                    "split": split_spec.split_id,
                    "seed": seed,
                    "modality": modality,
                    "level": str(lv),
                    **_metrics(scores, labels[test_mask], top_k),
                }
            )
        plan_levels = cfg.fusion.levels_for(modality) or tuple(sorted(cfg.levels))
        with _stage("fuse:levels", f"{modality} levels {plan_levels}"):
            fused_scores = _fuse_levels(
                plan_levels, cfg.fusion.level_strategy, per_level, svm_cfg
            )
        ref = per_level[plan_levels[0]]
        modality_fused[modality] = {
            "scores": fused_scores,
            "labels": ref["test_labels"],
            "ids": ref["test_ids"],
        }
        rows.append(
            {
                "split": split_spec.split_id,
                "seed": seed,
                "modality": modality,
                "level": "fused",
                **_metrics(fused_scores, ref["test_labels"], top_k),
            }
        )
        if write_artifacts:
            _write_scores_csv(
                reports_dir
                / f"scores_{split_spec.split_id}_{seed}_{modality}.csv",
                ref["test_ids"],
                ref["test_labels"],
                fused_scores,
            )

    confusion = None
    if "rgb" in modality_fused and "depth" in modality_fused:
        rgb, depth = modality_fused["rgb"], modality_fused["depth"]
        index_depth = {sid: i for i, sid in enumerate(depth["ids"])}
        keep = [(i, index_depth[sid]) for i, sid in enumerate(rgb["ids"]) if sid in index_depth]
        if not keep:
            raise ValidationError("no test sample is present in both modalities")
        ri = np.array([i for i, _ in keep])
        di = np.array([j for _, j in keep])
        s_rgb = rgb["scores"][ri]
        s_depth = depth["scores"][di]
        labels = rgb["labels"][ri]
        if not np.array_equal(labels, depth["labels"][di]):
            raise ValidationError("rgb and depth labels disagree for shared samples")
        with _stage("fuse:modalities", cfg.fusion.modality_strategy):
            if cfg.fusion.modality_strategy == "weighted_vote":
                fused = weighted_scores(
                    s_rgb, s_depth, per_sample=cfg.fusion.per_sample_weights
                )
            else:
                fused = average_vote([s_rgb, s_depth])
        preds = predict(fused)
        rows.append(
            {
                "split": split_spec.split_id,
                "seed": seed,
                "modality": "rgbd",
                "level": "fused",
                **_metrics(fused, labels, top_k),
            }
        )
        n_classes = fused.shape[1]
        if cfg.report.confusion_matrix:
            confusion = confusion_matrix(preds, labels, n_classes)
        if write_artifacts and cfg.fusion.modality_strategy == "weighted_vote":
            table = modality_weight_table(s_rgb, s_depth)
            write_fusion_csv(
                reports_dir / f"fusion_{split_spec.split_id}_{seed}.csv",
                [rgb["ids"][i] for i in ri],
                table,
                preds,
            )
    elif cfg.report.confusion_matrix and modality_fused:
        only = next(iter(modality_fused.values()))
        preds = predict(only["scores"])
        confusion = confusion_matrix(preds, only["labels"], only["scores"].shape[1])

    return rows, confusion


def run_experiment(cfg: RunConfig) -> RunReport:
    """Full protocol: every configured split x seed, aggregated."""
    store = FeatureStore(root=Path(cfg.out_dir) / "cache")
    all_rows = []
    confusion_total = None
    for split_spec in cfg.splits:
        for seed in cfg.seeds:
            rows, confusion = run_single(cfg, split_spec, seed, store=store)
            all_rows.extend(rows)
            if confusion is not None:
                confusion_total = (
                    confusion if confusion_total is None else confusion_total + confusion
                )
    report = RunReport(rows=all_rows, top_k=cfg.report.top_k, confusion=confusion_total)
    report.write(Path(cfg.out_dir) / "reports")
    return report


def reseed_stability(cfg: RunConfig, n_runs: int, seeds: list[int] | None = None) -> RunReport:
    """Rerun encode+train+test with fresh master seeds on the first split.

    Data (manifest and split) stays fixed; only the random streams change.
    The per-level std in the summary is the stability measure.
    """
    if n_runs < 2:
        raise ConfigurationError("reseed stability needs n_runs >= 2")
    if seeds is None:
        base = cfg.seeds[0]
        seeds = [base + i for i in range(n_runs)]
    elif len(seeds) != n_runs:
        raise ConfigurationError(f"expected {n_runs} seeds, got {len(seeds)}")
    store = FeatureStore(root=Path(cfg.out_dir) / "cache")
    split_spec = cfg.splits[0]
    all_rows = []
    for seed in seeds:
        rows, _ = run_single(cfg, split_spec, seed, store=store, write_artifacts=False)
        all_rows.extend(rows)
    report = RunReport(rows=all_rows, top_k=cfg.report.top_k)
    report.write(Path(cfg.out_dir) / "reports" / "stability")
    return report


def pooling_ablation(cfg: RunConfig, force_constant_weights: bool = False) -> dict[str, RunReport]:
    """Run the identical pipeline with random, max, and average pooling.

    The RNN weight streams depend only on the master seed, so all three
    methods share the same encoder weights. `force_constant_weights` pins
    the random method's pooling weights to 1/|area| (averaging equivalence).
    """
    if all(spec.preprocess == "reshape" for spec in cfg.levels.values()):
        raise ConfigurationError(
            "pooling ablation needs at least one pooled level in the config"
        )
    out: dict[str, RunReport] = {}
    for method in ("random", "max", "average"):
        method_cfg = cfg.with_method(method)
        store = FeatureStore(root=Path(cfg.out_dir) / "cache")
        all_rows = []
        for split_spec in method_cfg.splits:
            for seed in method_cfg.seeds:
                rows, _ = run_single(
                    method_cfg,
                    split_spec,
                    seed,
                    store=store,
                    force_constant_weights=force_constant_weights and method == "random",
                    write_artifacts=False,
                )
                all_rows.extend(rows)
        out[method] = RunReport(rows=all_rows, top_k=method_cfg.report.top_k)
    ablation_dir = Path(cfg.out_dir) / "reports" / "pooling_ablation"
    ablation_dir.mkdir(parents=True, exist_ok=True)
    with open(ablation_dir / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "modality", "level", "top1_mean", "top1_std"])
        for method, report in out.items():
            for s in report.summary:
                std = s["top1_std"]
                writer.writerow(
                    [
                        method,
                        s["modality"],
                        s["level"],
                        f"{s['top1_mean']:.6f}",
                        "" if std is None else f"{std:.6f}",
                    ]
                )
    return out
