"""On-disk interchange formats and in-memory data model.

A feature matrix is stored as a directory with three files:

``manifest.json``
    All scalar fields plus ``dtype`` ("f32"), ``byte_order``
    ("little-endian") and ``layout`` ("row-major").
``data.bin``
    Raw little-endian float32 values, row-major, no header.
``meta.csv``
    One row per feature vector: ``image_id,class_label,grid_row,grid_col``.
    Absent integer fields are empty cells (in memory: -1).

Clusterings are stored analogously as ``clustering.json`` +
``memberships.bin`` (n*k float32) + ``hard_labels.bin`` (int32, -1 noise).
Every JSON document carries a ``schema_version`` field.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

SCHEMA_VERSION = 1

TOKEN_KINDS = ("SEQ", "CLS")

ABSENT = -1


def _require(cond, msg):
    if not cond:
        raise ValidationError(msg)


@dataclass(frozen=True)
class SourceInfo:
    """Descriptor of where a representation came from."""

    model: str = "unknown"
    layer_index: int = 1  # 1-based
    token_kind: str = "SEQ"

    def validate(self):
        _require(self.layer_index >= 1, "layer_index is 1-based and must be >= 1")
        _require(self.token_kind in TOKEN_KINDS,
                 f"token_kind must be one of {TOKEN_KINDS}, got {self.token_kind!r}")


@dataclass
class RowMeta:
    """Per-row metadata. Integer fields use -1 for 'absent'."""

    image_ids: list
    class_labels: np.ndarray
    grid_rows: np.ndarray
    grid_cols: np.ndarray

    @classmethod
    def empty(cls, n):
        ids = [f"row{i}" for i in range(n)]
        absent = np.full(n, ABSENT, dtype=np.int32)
        return cls(ids, absent.copy(), absent.copy(), absent.copy())

    def __len__(self):
        return len(self.image_ids)

    def validate(self, n):
        _require(len(self.image_ids) == n, "meta must have exactly n rows")
        for name in ("class_labels", "grid_rows", "grid_cols"):
            arr = getattr(self, name)
            _require(arr.shape == (n,), f"meta.{name} must have exactly n entries")


@dataclass
class FeatureMatrix:
    """N feature vectors of dimension F plus per-row metadata."""

    data: np.ndarray  # (n, f) float32
    meta: RowMeta
    source: SourceInfo = field(default_factory=SourceInfo)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.validate()

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def f(self):
        return self.data.shape[1]

    def validate(self):
        _require(self.data.ndim == 2, "data must be a 2-d array")
        n, f = self.data.shape
        _require(n >= 1 and f >= 1, "need n >= 1 and f >= 1")
        if not np.isfinite(self.data).all():
            raise ValidationError("feature matrix contains non-finite values")
        self.meta.validate(n)
        self.source.validate()


@dataclass
class SoftClustering:
    """Probabilistic concept memberships plus the hard labelling they refine.

    ``memberships[i, a]`` is the concept proximity score of point i for
    concept a: a value in [0, 1], with each row summing to at most 1 (the
    residual mass is the probability of being noise). ``hard_labels`` uses
    -1 for noise. ``lambda_max`` holds each concept's maximum persistence.
    """

    memberships: np.ndarray  # (n, k) float
    hard_labels: np.ndarray  # (n,) int, -1 = noise
    lambda_max: np.ndarray  # (k,)
    seed: int = 0

    def __post_init__(self):
        self.memberships = np.ascontiguousarray(self.memberships, dtype=np.float64)
        self.hard_labels = np.ascontiguousarray(self.hard_labels, dtype=np.int32)
        self.lambda_max = np.ascontiguousarray(self.lambda_max, dtype=np.float64)
        self.validate()

    @property
    def n(self):
        return self.memberships.shape[0]

    @property
    def concept_count(self):
        return self.memberships.shape[1]

    @property
    def noise_rate(self):
        return float(np.mean(self.hard_labels == -1)) if self.n else 0.0

    def validate(self):
        _require(self.memberships.ndim == 2, "memberships must be 2-d")
        n, k = self.memberships.shape
        _require(self.hard_labels.shape == (n,), "hard_labels must have n entries")
        _require(self.lambda_max.shape == (k,), "lambda_max must have k entries")
        if k:
            if self.memberships.min(initial=0.0) < -1e-12 or self.memberships.max(initial=0.0) > 1 + 1e-9:
                raise ValidationError("membership entries must lie in [0, 1]")
            row_sums = self.memberships.sum(axis=1)
            if row_sums.size and row_sums.max() > 1 + 1e-6:
                raise ValidationError("membership row sums must not exceed 1")
        bad = (self.hard_labels < -1) | (self.hard_labels >= max(k, 1))
        if k == 0:
            bad = self.hard_labels != -1
        _require(not bad.any(), "hard labels must lie in {-1, 0..k-1}")


@dataclass
class RunManifest:
    """Record of every stage parameter and input hash of a pipeline run."""

    params: dict = field(default_factory=dict)
    input_hashes: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.params,
            "input_hashes": self.input_hashes,
        }

    @classmethod
    def from_json(cls, doc):
        return cls(params=dict(doc["params"]), input_hashes=dict(doc["input_hashes"]))

    def save(self, path):
        write_json(path, self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(read_json(path))


def write_json(path, doc):
    """Write a JSON document deterministically (sorted keys, fixed layout)."""
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    return json.loads(path.read_text())


def _meta_to_csv(meta, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "class_label", "grid_row", "grid_col"])
        for i, image_id in enumerate(meta.image_ids):
            row = [image_id]
            for arr in (meta.class_labels, meta.grid_rows, meta.grid_cols):
                v = int(arr[i])
                row.append("" if v == ABSENT else v)
            writer.writerow(row)


def _meta_from_csv(path, n):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    ids = []
    cols = {name: [] for name in ("class_label", "grid_row", "grid_col")}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["image_id", "class_label", "grid_row", "grid_col"]
        if reader.fieldnames != expected:
            raise ValidationError(f"malformed meta.csv header: {reader.fieldnames}")
        for rec in reader:
            if rec["image_id"] is None:
                raise ValidationError("malformed meta.csv row")
            ids.append(rec["image_id"])
            for name in cols:
                cell = rec[name]
                try:
                    cols[name].append(ABSENT if cell in ("", None) else int(cell))
                except ValueError as exc:
                    raise ValidationError(f"malformed meta.csv cell {cell!r}") from exc
    if len(ids) != n:
        raise ValidationError(f"meta.csv has {len(ids)} rows, manifest says n={n}")
    return RowMeta(
        ids,
        np.asarray(cols["class_label"], dtype=np.int32),
        np.asarray(cols["grid_row"], dtype=np.int32),
        np.asarray(cols["grid_col"], dtype=np.int32),
    )


def save_feature_matrix(m, path):
    """Write ``manifest.json`` + ``data.bin`` + ``meta.csv`` under ``path``."""
    m.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "feature_matrix",
        "n": m.n,
        "f": m.f,
        "dtype": "f32",
        "byte_order": "little-endian",
        "layout": "row-major",
        "source": {
            "model": m.source.model,
            "layer_index": m.source.layer_index,
            "token_kind": m.source.token_kind,
        },
    }
    write_json(path / "manifest.json", manifest)
    m.data.astype("<f4").tofile(path / "data.bin")
    _meta_to_csv(m.meta, path / "meta.csv")


def load_feature_matrix(path):
    """Load and validate a feature-matrix directory written by `save_feature_matrix`."""
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    if manifest.get("kind") != "feature_matrix":
        raise ValidationError(f"{path} does not hold a feature matrix")
    n, f = int(manifest["n"]), int(manifest["f"])
    bin_path = path / "data.bin"
    if not bin_path.is_file():
        raise ValidationError(f"missing file: {bin_path}")
    raw = np.fromfile(bin_path, dtype="<f4")
    if raw.size != n * f:
        raise ValidationError(
            f"size mismatch: manifest says {n}x{f}={n * f} values, data.bin has {raw.size}"
        )
    src = manifest.get("source", {})
    source = SourceInfo(
        model=src.get("model", "unknown"),
        layer_index=int(src.get("layer_index", 1)),
        token_kind=src.get("token_kind", "SEQ"),
    )
    meta = _meta_from_csv(path / "meta.csv", n)
    return FeatureMatrix(raw.reshape(n, f), meta, source)


def save_embedding(e, path):
    """Persist embedded coordinates in the manifest+binary layout."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    pts = np.ascontiguousarray(e.points, dtype=np.float32)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "embedding",
        "n": int(pts.shape[0]),
        "f": int(pts.shape[1]),
        "dtype": "f32",
        "byte_order": "little-endian",
        "layout": "row-major",
        "params": e.params,
    }
    write_json(path / "manifest.json", manifest)
    pts.astype("<f4").tofile(path / "data.bin")


def load_embedding(path):
    from .embed import Embedding  # deferred: data is imported by embed

    path = Path(path)
    manifest = read_json(path / "manifest.json")
    if manifest.get("kind") != "embedding":
        raise ValidationError(f"{path} does not hold an embedding")
    n, f = int(manifest["n"]), int(manifest["f"])
    raw = np.fromfile(path / "data.bin", dtype="<f4")
    if raw.size != n * f:
        raise ValidationError("size mismatch between manifest and embedding payload")
    return Embedding(raw.reshape(n, f).astype(np.float64), dict(manifest.get("params", {})))


def save_clustering(c, path, params=None):
    """Write ``clustering.json`` + ``memberships.bin`` + ``hard_labels.bin``."""
    c.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "clustering",
        "n": c.n,
        "concept_count": c.concept_count,
        "noise_rate": c.noise_rate,
        "lambda_max": [float(v) for v in c.lambda_max],
        "seed": c.seed,
        "params": params or {},
    }
    write_json(path / "clustering.json", doc)
    c.memberships.astype("<f4").tofile(path / "memberships.bin")
    c.hard_labels.astype("<i4").tofile(path / "hard_labels.bin")


def load_clustering(path):
    path = Path(path)
    doc = read_json(path / "clustering.json")
    if doc.get("kind") != "clustering":
        raise ValidationError(f"{path} does not hold a clustering")
    n, k = int(doc["n"]), int(doc["concept_count"])
    mem = np.fromfile(path / "memberships.bin", dtype="<f4")
    if mem.size != n * k:
        raise ValidationError("size mismatch between clustering.json and memberships.bin")
    labels = np.fromfile(path / "hard_labels.bin", dtype="<i4")
    if labels.size != n:
        raise ValidationError("size mismatch between clustering.json and hard_labels.bin")
    return SoftClustering(
        mem.reshape(n, k).astype(np.float64),
        labels,
        np.asarray(doc["lambda_max"], dtype=np.float64),
        seed=int(doc.get("seed", 0)),
    )


def stage_seed(seed, stage):
    """Derive a 64-bit stream seed for a named pipeline stage.

    The split is SHA-256 over ``"{stage}\\x1f{seed}"``; the first 8 digest
    bytes, little-endian, seed a PCG64 generator. Documented so that the
    index sets are reproducible from the run manifest alone.
    """
    digest = hashlib.sha256(f"{stage}\x1f{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stage_rng(seed, stage):
    return np.random.Generator(np.random.PCG64(stage_seed(seed, stage)))


def subsample(n, fraction, seed, stage="subsample"):
    """Pick ``ceil(fraction * n)`` distinct row indices uniformly at random.

    Pure function of ``(n, fraction, seed, stage)``: the PCG64 stream seeded
    by `stage_seed` drives a full permutation of ``range(n)`` whose prefix is
    returned, sorted ascending.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    m = int(np.ceil(fraction * n))
    if m < 2:
        raise ValidationError(f"subsample of {m} < 2 points is not usable")
    rng = stage_rng(seed, stage)
    return np.sort(rng.permutation(n)[:m])


def content_hash(*paths_or_bytes):
    """SHA-256 over file contents and/or byte strings, for stage caching."""
    h = hashlib.sha256()
    for item in paths_or_bytes:
        if isinstance(item, bytes):
            h.update(item)
        else:
            h.update(Path(item).read_bytes())
    return h.hexdigest()
