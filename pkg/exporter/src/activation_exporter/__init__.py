"""Activation exporter: hooks seven extraction points of a pretrained
backbone and writes NPY tensors plus a manifest in the pipeline's formats."""

from .backbones import (
    SUPPORTED_MODELS,
    ActivationTap,
    BackboneSpec,
    ExporterError,
    ExtractionPoint,
    build_model,
    load_sidecar,
)
from .export import discover_samples, export, probe_shapes, shape_mismatches

__version__ = "0.1.0"
