"""Tensor file I/O, dataset manifests, and train/test split generation.

Activation tensors are stored as NPY v1.0 files restricted to little-endian
float32, C order. The reader and writer are implemented directly against the
published container layout (magic ``\\x93NUMPY``, version byte pair, 2-byte
header length, ASCII dict header padded so the payload starts on a 64-byte
boundary) so that round-trips are bit-exact and foreign dtypes are rejected
up front instead of silently converted.

Manifests are CSV files with one row per (sample, modality) and per-level
tensor paths in fixed columns ``level1..level7``; an empty cell means the
level is absent for that sample.
"""

from __future__ import annotations

import ast
import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import TensorFormatError, UnsupportedDtypeError, ValidationError
from .rng import DOMAIN_SPLIT, stream

NPY_MAGIC = b"\x93NUMPY"
_HEADER_ALIGN = 64

MODALITIES = ("rgb", "depth")
SPLIT_ROLES = ("train", "test")
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


@dataclass
class ActivationTensor:
    """Dense rank-1 or rank-3 float32 tensor holding one CNN level output.

    Rank-3 tensors are laid out as (maps, size, size). ``level_tag`` carries
    the extraction level (1..7) when known.
    """

    values: np.ndarray
    level_tag: int | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float32))
        if v.ndim not in (1, 3):
            raise ValidationError(f"tensor rank must be 1 or 3, got {v.ndim}")
        if v.size == 0 or min(v.shape) <= 0:
            raise ValidationError(f"tensor extents must be positive, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError("tensor contains NaN or Inf values")
        if self.level_tag is not None and not 1 <= int(self.level_tag) <= 7:
            raise ValidationError(f"level_tag must be in 1..7, got {self.level_tag}")
        self.values = v

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.level_tag == other.level_tag
            and np.array_equal(self.values, other.values)
        )


def _build_header(shape: tuple[int, ...]) -> bytes:
    shape_repr = "(%s)" % (
        "%d," % shape[0] if len(shape) == 1 else ", ".join(str(s) for s in shape)
    )
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % shape_repr
    prefix_len = len(NPY_MAGIC) + 2 + 2  # magic + version + header-size field
    total = prefix_len + len(header) + 1  # trailing newline
    pad = (-total) % _HEADER_ALIGN
    return (header + " " * pad + "\n").encode("latin1")


def write_tensor(t: ActivationTensor, path: str | Path) -> None:
    """Write `t` as NPY v1.0 little-endian float32, C order."""
    v = t.values
    if not np.isfinite(v).all():
        raise ValidationError("refusing to write tensor with NaN or Inf values")
    header = _build_header(v.shape)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(NPY_MAGIC)
            fh.write(bytes((1, 0)))
            fh.write(len(header).to_bytes(2, "little"))
            fh.write(header)
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    except OSError as exc:
        raise OSError(f"failed to write tensor to {path}: {exc}") from exc


def read_tensor(path: str | Path, level_tag: int | None = None) -> ActivationTensor:
    """Read an NPY v1.0 file written by `write_tensor` (or any conforming
    little-endian float32 C-order NPY)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != NPY_MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic!r}")
        version = fh.read(2)
        if len(version) != 2:
            raise TensorFormatError(f"{path}: truncated version field")
        if version != bytes((1, 0)):
            raise TensorFormatError(
                f"{path}: unsupported NPY version {version[0]}.{version[1]}"
            )
        size_bytes = fh.read(2)
        if len(size_bytes) != 2:
            raise TensorFormatError(f"{path}: truncated header length")
        header_len = int.from_bytes(size_bytes, "little")
        raw_header = fh.read(header_len)
        if len(raw_header) != header_len:
            raise TensorFormatError(f"{path}: truncated header")
        try:
            header = ast.literal_eval(raw_header.decode("latin1"))
            descr = header["descr"]
            fortran = header["fortran_order"]
            shape = tuple(int(s) for s in header["shape"])
        except Exception as exc:
            raise TensorFormatError(f"{path}: malformed header dict") from exc
        if descr != "<f4":
            raise UnsupportedDtypeError(
                f"{path}: dtype {descr!r} not supported (need little-endian float32)"
            )
        if fortran:
            raise UnsupportedDtypeError(f"{path}: Fortran-order payload not supported")
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise TensorFormatError(
                f"{path}: payload has {len(payload)} bytes, expected {4 * count}"
            )
    data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return ActivationTensor(values=data.copy(), level_tag=level_tag)


@dataclass
class SampleRecord:
    """One (sample, modality) row of a dataset manifest."""

    sample_id: str
    category: int
    instance_id: str
    modality: str
    split_role: str
    level_paths: dict[int, Path] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    """Validated collection of sample records plus the manifest's base dir.

    Level paths are stored as written (usually relative); `resolve_path`
    anchors them at the manifest's directory.
    """

    records: list[SampleRecord]
    base_dir: Path = Path(".")

    def __post_init__(self):
        _validate_records(self.records)

    @property
    def n_categories(self) -> int:
        return max(r.category for r in self.records) + 1

    def resolve_path(self, p: Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def filter(self, *, modality: str | None = None, split_role: str | None = None):
        recs = [
            r
            for r in self.records
            if (modality is None or r.modality == modality)
            and (split_role is None or r.split_role == split_role)
        ]
        return recs

    def modalities(self) -> list[str]:
        return [m for m in MODALITIES if any(r.modality == m for r in self.records)]

    def levels(self) -> list[int]:
        present = set()
        for r in self.records:
            present.update(r.level_paths)
        return sorted(present)


def _validate_records(records: list[SampleRecord]) -> None:
    if not records:
        raise ValidationError("manifest has no records")
    seen: set[tuple[str, str]] = set()
    dupes = []
    for r in records:
        if r.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {r.modality!r} for {r.sample_id}")
        if r.split_role not in SPLIT_ROLES:
            raise ValidationError(
                f"unknown split_role {r.split_role!r} for {r.sample_id}"
            )
        key = (r.sample_id, r.modality)
        if key in seen:
            dupes.append(key)
        seen.add(key)
    if dupes:
        raise ValidationError(f"duplicate sample_id per modality: {sorted(dupes)}")
    cats = sorted({r.category for r in records})
    expected = list(range(len(cats)))
    if cats != expected:
        raise ValidationError(
            f"categories must form a contiguous 0..N-1 range, got {cats}"
        )


def load_manifest(path: str | Path, check_paths: bool = True) -> DatasetManifest:
    """Load and fully validate a manifest CSV.

    Level paths are resolved relative to the manifest's directory; with
    `check_paths` every referenced tensor file must exist.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing_cols = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing_cols:
            raise ValidationError(f"{path}: missing columns {missing_cols}")
        records = []
        for ln, row in enumerate(reader, start=2):
            try:
                category = int(row["category"])
            except ValueError:
                raise ValidationError(
                    f"{path}:{ln}: category {row['category']!r} is not an integer"
                ) from None
            level_paths = {}
            for lv in range(1, 8):
                cell = (row.get(f"level{lv}") or "").strip()
                if cell:
                    level_paths[lv] = Path(cell)
            records.append(
                SampleRecord(
                    sample_id=row["sample_id"],
                    category=category,
                    instance_id=row["instance_id"],
                    modality=row["modality"],
                    split_role=row["split_role"],
                    level_paths=level_paths,
                )
            )
    manifest = DatasetManifest(records=records, base_dir=base)
    if check_paths:
        unresolved = []
        for r in manifest.records:
            for lv, p in r.level_paths.items():
                if not manifest.resolve_path(p).exists():
                    unresolved.append(f"{r.sample_id}/{r.modality} level{lv}: {p}")
        if unresolved:
            raise ValidationError(
                "manifest references missing tensor files: " + "; ".join(unresolved)
            )
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            row = [r.sample_id, r.category, r.instance_id, r.modality, r.split_role]
            row += [str(r.level_paths.get(lv, "")) for lv in range(1, 8)]
            writer.writerow(row)


def make_instance_split(
    manifest: DatasetManifest, heldout: dict[int, str]
) -> DatasetManifest:
    """Assign split roles by holding out one instance per category.

    Every sample of a held-out instance becomes test; everything else train.
    The input manifest is not modified.
    """
    by_category: dict[int, set[str]] = {}
    for r in manifest.records:
        by_category.setdefault(r.category, set()).add(r.instance_id)
    for cat, instances in sorted(by_category.items()):
        if cat not in heldout:
            raise ValidationError(f"no held-out instance named for category {cat}")
        if heldout[cat] not in instances:
            raise ValidationError(
                f"held-out instance {heldout[cat]!r} absent from category {cat}"
            )
        if len(instances) < 2:
            raise ValidationError(
                f"category {cat} has fewer than 2 instances; cannot hold one out"
            )
    records = [
        replace(
            r,
            split_role=(
                "test" if heldout.get(r.category) == r.instance_id else "train"
            ),
            level_paths=dict(r.level_paths),
        )
        for r in manifest.records
    ]
    return DatasetManifest(records=records, base_dir=manifest.base_dir)


def draw_heldout(manifest: DatasetManifest, seed: int) -> dict[int, str]:
    """Pick one held-out instance per category by seeded uniform choice."""
    by_category: dict[int, list[str]] = {}
    for r in manifest.records:
        group = by_category.setdefault(r.category, [])
        if r.instance_id not in group:
            group.append(r.instance_id)
    heldout = {}
    for cat in sorted(by_category):
        instances = sorted(by_category[cat])
        gen = stream(seed, DOMAIN_SPLIT, cat)
        heldout[cat] = instances[int(gen.integers(len(instances)))]
    return heldout
