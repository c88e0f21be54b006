"""Backbone loading and activation capture via forward hooks.

Extraction points are declared in JSON sidecars bundled with the package
(one per supported model), so adding a backbone needs no code changes: the
sidecar names seven modules and the activation shape expected at each.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import torch
from torchvision import models as tv_models

SUPPORTED_MODELS = ("alexnet", "vgg16_bn", "resnet50", "resnet101", "densenet121")


class ExporterError(Exception):
    pass


@dataclass(frozen=True)
class ExtractionPoint:
    level: int
    module: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class BackboneSpec:
    model_name: str
    points: tuple[ExtractionPoint, ...]
    checkpoint: Path | None = None

    def __post_init__(self):
        if len(self.points) != 7:
            raise ExporterError(
                f"backbone spec must declare exactly 7 extraction points, "
                f"got {len(self.points)}"
            )
        levels = sorted(p.level for p in self.points)
        if levels != list(range(1, 8)):
            raise ExporterError(f"extraction levels must be 1..7, got {levels}")

    def point(self, level: int) -> ExtractionPoint:
        return next(p for p in self.points if p.level == level)


def load_sidecar(model_name: str, checkpoint: str | Path | None = None) -> BackboneSpec:
    """Read the bundled sidecar (or a JSON path) into a BackboneSpec."""
    path = Path(model_name)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        if model_name not in SUPPORTED_MODELS:
            raise ExporterError(
                f"unknown model {model_name!r}; supported: {SUPPORTED_MODELS}"
            )
        text = (
            resources.files("activation_exporter") / "sidecars" / f"{model_name}.json"
        ).read_text()
    doc = json.loads(text)
    points = tuple(
        ExtractionPoint(
            level=int(p["level"]),
            module=str(p["module"]),
            shape=tuple(int(x) for x in p["shape"]),
        )
        for p in doc["points"]
    )
    return BackboneSpec(
        model_name=str(doc["model"]),
        points=points,
        checkpoint=Path(checkpoint) if checkpoint else None,
    )


def build_model(spec: BackboneSpec, weights: str = "pretrained") -> torch.nn.Module:
    """Instantiate the torchvision model in eval mode on CPU.

    `weights` is "pretrained" (torchvision default weights) or "none"
    (random init, useful for shape probing and offline smoke tests). A
    finetuned checkpoint from `spec.checkpoint` overrides the state dict.
    """
    if weights not in ("pretrained", "none"):
        raise ExporterError(f"weights must be 'pretrained' or 'none', got {weights!r}")
    tv_weights = "DEFAULT" if weights == "pretrained" and spec.checkpoint is None else None
    model = tv_models.get_model(spec.model_name, weights=tv_weights)
    if spec.checkpoint is not None:
        state = torch.load(spec.checkpoint, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        model.load_state_dict(state)
    model.eval()
    return model


class ActivationTap:
    """Forward hooks on the spec's modules, collecting one tensor per level."""

    def __init__(self, model: torch.nn.Module, spec: BackboneSpec):
        self.model = model
        self.spec = spec
        self.outputs: dict[int, torch.Tensor] = {}
        self._handles = []
        named = dict(model.named_modules())
        for p in spec.points:
            if p.module not in named:
                raise ExporterError(
                    f"{spec.model_name} has no module {p.module!r} "
                    f"(declared for level {p.level})"
                )
            self._handles.append(
                named[p.module].register_forward_hook(self._hook(p.level))
            )

    def _hook(self, level: int):
        def fn(_module, _inputs, output):
            self.outputs[level] = output.detach()

        return fn

    def run(self, batch: torch.Tensor) -> dict[int, torch.Tensor]:
        self.outputs = {}
        with torch.no_grad():
            self.model(batch)
        missing = [p.level for p in self.spec.points if p.level not in self.outputs]
        if missing:
            raise ExporterError(f"no activation captured for levels {missing}")
        return dict(self.outputs)

    def close(self):
        for h in self._handles:
            h.remove()
        self._handles = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
