"""Run configuration: YAML schema, validation, and the dataclasses the
pipeline consumes.

The config file is a key-value tree with a required ``config_version``.
Unknown keys are rejected so typos fail loudly. Relative paths are resolved
against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .pooling import LevelSpec

CONFIG_VERSION = 1

LEVEL_STRATEGIES = ("concat_features", "average_vote")
MODALITY_STRATEGIES = ("average_vote", "weighted_vote")


@dataclass(frozen=True)
class FusionPlan:
    """Which levels to fuse per modality and how."""

    level_strategy: str = "average_vote"
    modality_strategy: str = "weighted_vote"
    levels_rgb: tuple[int, ...] = ()
    levels_depth: tuple[int, ...] = ()
    per_sample_weights: bool = True

    def __post_init__(self):
        if self.level_strategy not in LEVEL_STRATEGIES:
            raise ConfigurationError(
                f"level_strategy must be one of {LEVEL_STRATEGIES}, "
                f"got {self.level_strategy!r}"
            )
        if self.modality_strategy not in MODALITY_STRATEGIES:
            raise ConfigurationError(
                f"modality_strategy must be one of {MODALITY_STRATEGIES}, "
                f"got {self.modality_strategy!r}"
            )

    def levels_for(self, modality: str) -> tuple[int, ...]:
        return self.levels_rgb if modality == "rgb" else self.levels_depth


@dataclass(frozen=True)
class SplitSpec:
    """One evaluation split: manifest roles as-is, an explicit held-out
    instance per category, or a seeded draw."""

    split_id: str
    kind: str  # "manifest" | "heldout" | "draw"
    heldout: tuple[tuple[int, str], ...] = ()
    draw_seed: int = 0


@dataclass(frozen=True)
class ReportOptions:
    top_k: tuple[int, ...] = (1, 3, 5)
    confusion_matrix: bool = True

    def __post_init__(self):
        if 1 not in self.top_k:
            raise ConfigurationError("report.top_k must include 1 (plain accuracy)")


@dataclass
class RunConfig:
    manifest_path: Path
    out_dir: Path
    encoder_params: dict
    levels: dict[int, LevelSpec]
    svm_params: dict
    fusion: FusionPlan
    splits: list[SplitSpec]
    seeds: list[int]
    workers: int = 1
    report: ReportOptions = field(default_factory=ReportOptions)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seeds list must be non-empty")
        if not self.splits:
            raise ConfigurationError("splits list must be non-empty")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        configured = set(self.levels)
        for modality in ("rgb", "depth"):
            missing = [l for l in self.fusion.levels_for(modality) if l not in configured]
            if missing:
                raise ConfigurationError(
                    f"fusion references unconfigured {modality} levels {missing}; "
                    f"configured: {sorted(configured)}"
                )
        for k in self.report.top_k:
            if k < 1:
                raise ConfigurationError(f"top_k entries must be >= 1, got {k}")

    def with_method(self, method: str) -> "RunConfig":
        """Copy of this config with every pooled level's method replaced."""
        levels = {
            lv: replace(spec, method=method) if spec.preprocess != "reshape" else spec
            for lv, spec in self.levels.items()
        }
        return replace(self, levels=levels)


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigurationError(f"{where}: missing keys {sorted(missing)}")


def _parse_level(entry: dict, where: str) -> LevelSpec:
    _require_keys(
        entry,
        {"level", "raw_shape", "target_shape", "preprocess", "method"},
        {"level", "raw_shape", "target_shape", "preprocess"},
        where,
    )
    return LevelSpec(
        level=int(entry["level"]),
        raw_shape=tuple(int(x) for x in entry["raw_shape"]),
        target_shape=tuple(int(x) for x in entry["target_shape"]),
        preprocess=str(entry["preprocess"]),
        method=str(entry.get("method", "random")),
    )


def _parse_split(entry: dict, where: str) -> SplitSpec:
    _require_keys(entry, {"id", "source", "heldout", "draw_seed"}, {"id"}, where)
    split_id = str(entry["id"])
    if "heldout" in entry:
        heldout = tuple(
            sorted((int(k), str(v)) for k, v in dict(entry["heldout"]).items())
        )
        return SplitSpec(split_id=split_id, kind="heldout", heldout=heldout)
    if "draw_seed" in entry:
        return SplitSpec(split_id=split_id, kind="draw", draw_seed=int(entry["draw_seed"]))
    if entry.get("source", "manifest") != "manifest":
        raise ConfigurationError(f"{where}: source must be 'manifest'")
    return SplitSpec(split_id=split_id, kind="manifest")


def parse_config(tree: dict, base_dir: Path) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigurationError("config root must be a mapping")
    _require_keys(
        tree,
        {
            "config_version",
            "paths",
            "encoder",
            "levels",
            "svm",
            "fusion",
            "splits",
            "seeds",
            "workers",
            "report",
        },
        {"config_version", "paths", "levels", "splits", "seeds"},
        "config",
    )
    version = tree["config_version"]
    if version != CONFIG_VERSION:
        raise ConfigurationError(
            f"config_version {version!r} unsupported (expected {CONFIG_VERSION})"
        )

    paths = tree["paths"]
    _require_keys(paths, {"manifest", "out_dir"}, {"manifest", "out_dir"}, "paths")
    manifest_path = base_dir / str(paths["manifest"])
    out_dir = base_dir / str(paths["out_dir"])

    enc = dict(tree.get("encoder", {}))
    _require_keys(
        enc,
        {"num_rnns", "channels", "block_size", "tree_depth", "child_block"},
        set(),
        "encoder",
    )
    encoder_params = {
        "num_rnns": int(enc.get("num_rnns", 128)),
        "channels": int(enc.get("channels", 64)),
        "block_size": int(enc.get("block_size", 8)),
        "tree_depth": int(enc.get("tree_depth", 1)),
        "child_block": int(enc.get("child_block", 2)),
    }

    # encoder.channels/block_size are the canonical defaults; each level's
    # actual (K, s) comes from its target shape, so targets may deviate from
    # the canonical form (e.g. a flat FC level reshaped to 32x8x8).
    levels = {}
    for i, entry in enumerate(tree["levels"]):
        spec = _parse_level(entry, f"levels[{i}]")
        if spec.level in levels:
            raise ConfigurationError(f"levels[{i}]: level {spec.level} repeated")
        levels[spec.level] = spec

    svm = dict(tree.get("svm", {}))
    _require_keys(svm, {"C", "tol", "max_iter"}, set(), "svm")
    svm_params = {
        "C": float(svm.get("C", 1.0)),
        "tol": float(svm.get("tol", 1e-4)),
        "max_iter": int(svm.get("max_iter", 1000)),
    }

    fus = dict(tree.get("fusion", {}))
    _require_keys(
        fus,
        {"level_strategy", "modality_strategy", "levels", "per_sample_weights"},
        set(),
        "fusion",
    )
    fusion_levels = dict(fus.get("levels", {}))
    _require_keys(fusion_levels, {"rgb", "depth"}, set(), "fusion.levels")
    default_levels = tuple(sorted(levels))
    fusion = FusionPlan(
        level_strategy=str(fus.get("level_strategy", "average_vote")),
        modality_strategy=str(fus.get("modality_strategy", "weighted_vote")),
        levels_rgb=tuple(int(x) for x in fusion_levels.get("rgb", default_levels)),
        levels_depth=tuple(int(x) for x in fusion_levels.get("depth", default_levels)),
        per_sample_weights=bool(fus.get("per_sample_weights", True)),
    )

    splits = [
        _parse_split(entry, f"splits[{i}]") for i, entry in enumerate(tree["splits"])
    ]
    if len({s.split_id for s in splits}) != len(splits):
        raise ConfigurationError("split ids must be unique")

    seeds = [int(s) for s in tree["seeds"]]

    rep = dict(tree.get("report", {}))
    _require_keys(rep, {"top_k", "confusion_matrix"}, set(), "report")
    report = ReportOptions(
        top_k=tuple(int(k) for k in rep.get("top_k", (1, 3, 5))),
        confusion_matrix=bool(rep.get("confusion_matrix", True)),
    )

    return RunConfig(
        manifest_path=manifest_path,
        out_dir=out_dir,
        encoder_params=encoder_params,
        levels=levels,
        svm_params=svm_params,
        fusion=fusion,
        splits=splits,
        seeds=seeds,
        workers=int(tree.get("workers", 1)),
        report=report,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        tree = yaml.safe_load(fh)
    return parse_config(tree, path.parent.resolve())
