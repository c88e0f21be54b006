"""CLI: probe extraction-point shapes and export activations."""

from __future__ import annotations

from pathlib import Path

import click

from .backbones import SUPPORTED_MODELS, build_model, load_sidecar
from .export import export as export_dataset
from .export import probe_shapes, shape_mismatches


@click.group()
def main():
    """Per-level CNN activation exporter (NPY + manifest CSV)."""


@main.command()
@click.option("--model", required=True, help=f"one of {SUPPORTED_MODELS} or a sidecar JSON path")
@click.option("--weights", type=click.Choice(["pretrained", "none"]), default="none",
              show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
def probe(model, weights, checkpoint):
    """Dry-run one dummy input and compare shapes against the sidecar."""
    spec = load_sidecar(model, checkpoint)
    shapes = probe_shapes(spec, build_model(spec, weights=weights))
    mismatches = shape_mismatches(spec, shapes)
    for p in sorted(spec.points, key=lambda p: p.level):
        status = "ok" if shapes[p.level] == p.shape else "MISMATCH"
        click.echo(f"level {p.level}: {p.module:<22} {shapes[p.level]} [{status}]")
    if mismatches:
        raise click.ClickException("\n".join(mismatches))
    click.echo("all 7 extraction points match the sidecar")


@main.command("export")
@click.option("--model", required=True)
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="dataset laid out as <category>/<instance>/<image or npy>")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="finetuned state dict to load instead of the stock weights")
@click.option("--weights", type=click.Choice(["pretrained", "none"]), default="pretrained",
              show_default=True)
@click.option("--modality", type=click.Choice(["rgb", "depth"]), default="rgb",
              show_default=True)
@click.option("--levels", default=None, help="subset like 5,6,7 (default: all)")
@click.option("--batch-size", default=8, show_default=True)
def export_cmd(model, data_dir, out_dir, checkpoint, weights, modality, levels, batch_size):
    """Export per-sample, per-level activations plus a manifest CSV."""
    spec = load_sidecar(model, checkpoint)
    level_tuple = tuple(int(x) for x in levels.split(",")) if levels else None

    def progress(done, total):
        click.echo(f"  {done}/{total} samples", err=True)

    manifest = export_dataset(
        Path(data_dir),
        spec,
        Path(out_dir),
        modality=modality,
        weights=weights,
        levels=level_tuple,
        batch_size=batch_size,
        progress=progress,
    )
    click.echo(f"manifest written to {manifest}")


if __name__ == "__main__":
    main()
