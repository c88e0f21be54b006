"""Shape probing and per-level activation export.

The export walks a dataset laid out as <data>/<category>/<instance>/<file>,
runs each batch through the hooked backbone in eval mode, and writes one
NPY file (little-endian float32, C order) per (sample, level) plus a
manifest CSV with the columns the downstream pipeline expects:
sample_id, category, instance_id, modality, split_role, level1..level7.
Split roles are written as "train"; the pipeline reassigns them when it
builds instance splits.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch

from .backbones import ActivationTap, BackboneSpec, ExporterError, build_model
from .preprocess import IMAGE_SUFFIXES, prepare_input

MANIFEST_COLUMNS = (
    "sample_id",
    "category",
    "instance_id",
    "modality",
    "split_role",
    "level1",
    "level2",
    "level3",
    "level4",
    "level5",
    "level6",
    "level7",
)


def probe_shapes(spec: BackboneSpec, model: torch.nn.Module | None = None) -> dict[int, tuple[int, ...]]:
    """Run one dummy 3x224x224 input and record each level's shape.

    Flat declarations (rank-1 sidecar shapes) match any activation that
    flattens to that length, mirroring how tensors are stored.
    """
    if model is None:
        model = build_model(spec, weights="none")
    with ActivationTap(model, spec) as tap:
        outs = tap.run(torch.zeros(1, 3, 224, 224))
    shapes = {}
    for p in sorted(spec.points, key=lambda p: p.level):
        act = outs[p.level][0]
        shapes[p.level] = (
            (int(act.numel()),) if len(p.shape) == 1 else tuple(act.shape)
        )
    return shapes


def shape_mismatches(spec: BackboneSpec, shapes: dict[int, tuple[int, ...]]) -> list[str]:
    report = []
    for p in sorted(spec.points, key=lambda p: p.level):
        if shapes[p.level] != p.shape:
            report.append(
                f"level {p.level} ({p.module}): probe {shapes[p.level]} "
                f"!= declared {p.shape}"
            )
    return report


def discover_samples(data_dir: Path) -> list[dict]:
    """Category/instance/file walk; categories map to sorted 0..N-1."""
    data_dir = Path(data_dir)
    categories = sorted(p.name for p in data_dir.iterdir() if p.is_dir())
    if not categories:
        raise ExporterError(f"no category directories under {data_dir}")
    samples = []
    for cat_index, cat in enumerate(categories):
        for inst_dir in sorted((data_dir / cat).iterdir()):
            if not inst_dir.is_dir():
                continue
            for f in sorted(inst_dir.iterdir()):
                if f.suffix.lower() in IMAGE_SUFFIXES + (".npy",):
                    samples.append(
                        {
                            "path": f,
                            "category": cat_index,
                            "category_name": cat,
                            "instance_id": f"{cat}_{inst_dir.name}",
                            "sample_id": f"{cat}_{inst_dir.name}_{f.stem}",
                        }
                    )
    if not samples:
        raise ExporterError(f"no images or tensors found under {data_dir}")
    return samples


def export(
    data_dir: Path,
    spec: BackboneSpec,
    out_dir: Path,
    modality: str = "rgb",
    weights: str = "pretrained",
    levels: tuple[int, ...] | None = None,
    batch_size: int = 8,
    progress=None,
) -> Path:
    """Export per-level activations plus a manifest; returns the manifest path.

    Probes activation shapes against the sidecar before writing anything;
    a mismatch aborts with a per-level report.
    """
    levels = tuple(sorted(levels)) if levels else tuple(range(1, 8))
    unknown = [l for l in levels if not 1 <= l <= 7]
    if unknown:
        raise ExporterError(f"levels out of range 1..7: {unknown}")
    model = build_model(spec, weights=weights)
    mismatches = shape_mismatches(spec, probe_shapes(spec, model))
    if mismatches:
        raise ExporterError(
            "activation shapes disagree with the backbone spec:\n  "
            + "\n  ".join(mismatches)
        )

    samples = discover_samples(data_dir)
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    with ActivationTap(model, spec) as tap:
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            batch = torch.stack([prepare_input(s["path"]) for s in chunk])
            outs = tap.run(batch)
            for j, s in enumerate(chunk):
                level_cells = {}
                for lv in levels:
                    point = spec.point(lv)
                    act = outs[lv][j].cpu().numpy().astype(np.float32, copy=False)
                    act = act.reshape(-1) if len(point.shape) == 1 else act
                    rel = Path("tensors") / f"{s['sample_id']}_{modality}_l{lv}.npy"
                    np.save(out_dir / rel, np.ascontiguousarray(act))
                    level_cells[lv] = str(rel)
                rows.append(
                    {
                        "sample_id": s["sample_id"],
                        "category": s["category"],
                        "instance_id": s["instance_id"],
                        "modality": modality,
                        "split_role": "train",
                        **{f"level{lv}": cell for lv, cell in level_cells.items()},
                    }
                )
            if progress is not None:
                progress(min(start + batch_size, len(samples)), len(samples))

    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, restval="")
        writer.writeheader()
        writer.writerows(rows)
    return manifest_path
