import csv
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from activation_exporter import ExporterError, build_model, export, load_sidecar

CLASS_COLORS = [
    (230, 40, 40),
    (40, 200, 40),
    (40, 80, 230),
    (230, 220, 40),
    (200, 40, 210),
]


def make_image(path: Path, cls: int, inst: int, idx: int, rng: np.random.Generator):
    """224x224 pattern with a class color and class-specific stripe period."""
    img = np.zeros((224, 224, 3), dtype=np.float64)
    img[:] = CLASS_COLORS[cls]
    period = 8 + 6 * cls
    stripes = ((np.arange(224) // period) % 2).astype(np.float64)
    img[:, :, cls % 3] *= 0.6 + 0.4 * stripes[None, :]
    img += (inst - 0.5) * 12.0  # instance tint
    img += rng.normal(scale=10.0, size=img.shape)
    arr = np.clip(img, 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def build_image_dataset(root: Path, n_classes, instances, images, seed=0) -> Path:
    rng = np.random.default_rng(seed)
    data = root / "data"
    for cls in range(n_classes):
        for inst in range(instances):
            for idx in range(images):
                make_image(
                    data / f"c{cls}" / f"i{inst}" / f"img{idx:03d}.png",
                    cls, inst, idx, rng,
                )
    return data


def test_counting_invariant(tmp_path):
    # 10 images, 7 levels -> 70 tensor files + 10 manifest rows.
    data = build_image_dataset(tmp_path, n_classes=2, instances=1, images=5)
    spec = load_sidecar("alexnet")
    manifest = export(data, spec, tmp_path / "out", weights="none", batch_size=4)
    tensors = list((tmp_path / "out" / "tensors").glob("*.npy"))
    assert len(tensors) == 70
    rows = list(csv.DictReader(open(manifest)))
    assert len(rows) == 10
    assert rows[0]["split_role"] == "train"


def test_manifest_and_tensors_conform_to_pipeline_formats(tmp_path):
    # The pipeline's own loaders are the conformance oracle for the
    # external interface (NPY v1.0 float32 + manifest CSV schema).
    from randrec.tensor_io import load_manifest, read_tensor

    data = build_image_dataset(tmp_path, n_classes=2, instances=2, images=2, seed=1)
    spec = load_sidecar("alexnet")
    manifest_path = export(
        data, spec, tmp_path / "out", weights="none", levels=(6, 7), batch_size=4
    )
    manifest = load_manifest(manifest_path)
    assert len(manifest.records) == 8
    assert manifest.levels() == [6, 7]
    first = manifest.records[0]
    t = read_tensor(manifest.resolve_path(first.level_paths[7]))
    assert t.shape == (4096,)
    assert t.values.dtype == np.float32


def test_export_deterministic_given_checkpoint(tmp_path):
    data = build_image_dataset(tmp_path, n_classes=2, instances=1, images=2, seed=2)
    torch.manual_seed(0)
    spec = load_sidecar("alexnet")
    model = build_model(spec, weights="none")
    ckpt = tmp_path / "model.pt"
    torch.save(model.state_dict(), ckpt)
    spec_ckpt = load_sidecar("alexnet", checkpoint=ckpt)

    export(data, spec_ckpt, tmp_path / "run1", weights="none", levels=(7,))
    export(data, spec_ckpt, tmp_path / "run2", weights="none", levels=(7,))
    files1 = sorted((tmp_path / "run1" / "tensors").glob("*.npy"))
    files2 = sorted((tmp_path / "run2" / "tensors").glob("*.npy"))
    assert files1 and [f.name for f in files1] == [f.name for f in files2]
    for a, b in zip(files1, files2):
        assert a.read_bytes() == b.read_bytes()


def test_shape_probe_mismatch_aborts_before_writing(tmp_path):
    import json

    spec = load_sidecar("alexnet")
    doc = {
        "model": "alexnet",
        "points": [
            {
                "level": p.level,
                "module": p.module,
                "shape": [1, 2, 3] if p.level == 2 else list(p.shape),
            }
            for p in spec.points
        ],
    }
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    data = build_image_dataset(tmp_path, n_classes=2, instances=1, images=1, seed=3)
    with pytest.raises(ExporterError, match="level 2"):
        export(data, load_sidecar(str(bad)), tmp_path / "out", weights="none")
    assert not (tmp_path / "out" / "tensors").exists()


PRIMARY_CONFIG = """\
config_version: 1
paths:
  manifest: export/manifest.csv
  out_dir: pipeline_out
encoder:
  num_rnns: 128
  channels: 64
  block_size: 8
levels:
  - {{level: 5, raw_shape: [1024, 14, 14], target_shape: [64, 7, 7], preprocess: pool_both}}
  - {{level: 6, raw_shape: [2048, 7, 7], target_shape: [64, 7, 7], preprocess: pool_maps}}
  - {{level: 7, raw_shape: [2048], target_shape: [32, 8, 8], preprocess: reshape}}
fusion:
  level_strategy: average_vote
  modality_strategy: weighted_vote
splits:
  - id: holdout
    heldout: {heldout}
seeds: [0]
workers: 2
report:
  top_k: [1, 3]
  confusion_matrix: true
"""


def test_mini_dataset_through_primary_pipeline(tmp_path):
    """100 exported images train to above-chance accuracy downstream."""
    n_classes, instances, images = 5, 2, 10
    data = build_image_dataset(
        tmp_path, n_classes=n_classes, instances=instances, images=images, seed=4
    )
    spec = load_sidecar("resnet101")
    torch.manual_seed(7)  # random backbone init for offline runs
    manifest = export(
        data,
        spec,
        tmp_path / "export",
        weights="none",
        levels=(5, 6, 7),
        batch_size=10,
    )
    rows = list(csv.DictReader(open(manifest)))
    assert len(rows) == n_classes * instances * images == 100

    heldout = "{" + ", ".join(f"{c}: c{c}_i0" for c in range(n_classes)) + "}"
    config = tmp_path / "run.yaml"
    config.write_text(PRIMARY_CONFIG.format(heldout=heldout))

    randrec = shutil.which("randrec")
    assert randrec, "primary package CLI must be installed"
    proc = subprocess.run(
        [randrec, "evaluate", "--config", str(config)],
        capture_output=True,
        text=True,
        timeout=900,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr

    with open(tmp_path / "pipeline_out" / "reports" / "summary.csv") as fh:
        summary = {(r["modality"], r["level"]): r for r in csv.DictReader(fh)}
    fused = float(summary[("rgb", "fused")]["top1_mean"])
    chance = 1.0 / n_classes
    assert fused > 2 * chance, f"fused accuracy {fused:.3f} not above 2x chance"
    print(
        f"ACCEPTANCE PASS: exporter mini-dataset through pipeline "
        f"(fused top-1 {fused:.3f} vs chance {chance:.2f})"
    )
