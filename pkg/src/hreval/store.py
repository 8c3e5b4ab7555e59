"""On-disk layout for model outputs and the run manifests that tie them together.

A split dump is a little-endian binary file::

    b"HRE1" | u32 n | u32 K | n*K f32 logits (row-major) | n i32 labels

Labels of ``-1`` mark unlabeled rows (typical for OOD data). Raw input features
for the toy runtime use the identical layout with ``K`` replaced by the feature
width, so a single reader serves both.

A run manifest is a JSON document::

    {
      "schema_version": 1,
      "model_id": "erm-mlp",
      "group": "baseline",
      "num_classes": 4,
      "model": "erm-mlp.model.json",          # optional, enables ODIN / toy attacks
      "splits": [
        {"role": "id_val", "path": "id_val.hre", "features": "id_val.feat"},
        {"role": "adv_id", "path": "adv.hre", "source": "id_test", "indices": [...]},
        ...
      ]
    }

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MissingSplit, ShapeMismatch

MAGIC = b"HRE1"
HEADER = struct.Struct("<4sII")
SCHEMA_VERSION = 1
ROLE_RE = re.compile(r"^(id_val|id_test|adv_id|ds_[A-Za-z0-9_.-]+|ood_[A-Za-z0-9_.-]+)$")


@dataclass(frozen=True)
class SplitDump:
    """Logits and labels for one dataset split. Arrays are read-only."""

    logits: np.ndarray
    labels: np.ndarray
    role: str = ""

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float32, copy=True)
        labels = np.array(self.labels, dtype=np.int32, copy=True)
        if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
            raise ShapeMismatch(
                f"logits {logits.shape} and labels {labels.shape} do not pair up"
            )
        logits.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    @property
    def unlabeled(self) -> bool:
        return self.n > 0 and bool(np.all(self.labels == -1))


def _check_values(matrix: np.ndarray, labels: np.ndarray, width: int) -> None:
    if not np.all(np.isfinite(matrix)):
        raise ValueError("non-finite value in matrix")
    if labels.size and (labels.min() < -1 or labels.max() > width - 1):
        raise ValueError(f"label out of range [-1, {width - 1}]")


def write_split(path, logits, labels) -> None:
    """Write an ``n x K`` matrix and its labels in the dump layout."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim == 1 and logits.size == 0:
        logits = logits.reshape(0, 0)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("refusing to write non-finite logits")
    if labels.size and not np.all(labels == np.round(labels)):
        raise ValueError("labels must be integers")
    n, k = logits.shape
    f32 = logits.astype("<f4")
    if not np.all(np.isfinite(f32)):
        raise ValueError("logits overflow float32")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, n, k))
        fh.write(np.ascontiguousarray(f32).tobytes())
        fh.write(labels.astype("<i4").tobytes())


def _read_raw(path, label_width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, n, k = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = HEADER.size + 4 * n * k + 4 * n
    if len(data) != expected:
        raise FormatError(f"{path}: length {len(data)} != expected {expected}")
    body = np.frombuffer(data, dtype="<f4", count=n * k, offset=HEADER.size)
    labels = np.frombuffer(data, dtype="<i4", count=n, offset=HEADER.size + 4 * n * k)
    matrix = body.reshape(n, k).astype(np.float32)
    labels = labels.astype(np.int32)
    _check_values(matrix, labels, k if label_width is None else label_width)
    return matrix, labels


def read_split(path, role: str = "") -> SplitDump:
    logits, labels = _read_raw(path)
    return SplitDump(logits, labels, role)


def write_features(path, features, labels) -> None:
    """Raw-feature companion file: same layout, feature width in place of K."""
    write_split(path, features, labels)


def read_features(path) -> tuple[np.ndarray, np.ndarray]:
    # the header width is the feature count, so labels are only checked for >= -1 here
    features, labels = _read_raw(path, label_width=np.iinfo(np.int32).max)
    return features.astype(np.float64), labels.astype(np.int64)


def subsample_indices(n: int, cap: int, seed: int) -> np.ndarray:
    """Sorted row indices of a seeded uniform subset of size ``min(n, cap)``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.permutation(n)[:cap])


def subsample(split: SplitDump, cap: int, seed: int = 0) -> SplitDump:
    idx = subsample_indices(split.n, cap, seed)
    if idx.size == split.n:
        return split
    return SplitDump(split.logits[idx], split.labels[idx], split.role)


@dataclass(frozen=True)
class ModelRun:
    model_id: str
    group: str
    num_classes: int
    splits: dict
    features: dict = field(default_factory=dict)
    model_path: Path | None = None
    adv_source: str | None = None
    adv_indices: np.ndarray | None = None
    manifest_path: Path | None = None

    def split(self, role: str) -> SplitDump:
        try:
            return self.splits[role]
        except KeyError:
            raise MissingSplit(f"{self.model_id}: no split with role {role!r}") from None

    @property
    def ds_roles(self) -> list[str]:
        return sorted(r for r in self.splits if r.startswith("ds_"))

    @property
    def ood_roles(self) -> list[str]:
        return sorted(r for r in self.splits if r.startswith("ood_"))

    @property
    def N(self) -> int:
        return len(self.ds_roles)

    @property
    def M(self) -> int:
        return len(self.ood_roles)

    @property
    def has_adv(self) -> bool:
        return "adv_id" in self.splits

    def load_model(self):
        if self.model_path is None:
            return None
        from .runtime import load_model

        return load_model(self.model_path)


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def parse_manifest(doc: dict, base: Path) -> ModelRun:
    for key in ("model_id", "num_classes", "splits"):
        if key not in doc:
            raise FormatError(f"manifest missing field {key!r}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {version}")
    k = int(doc["num_classes"])
    splits, features = {}, {}
    adv_source, adv_indices = None, None
    for entry in doc["splits"]:
        role = entry.get("role", "")
        if not ROLE_RE.match(role):
            raise FormatError(f"unknown split role {role!r}")
        if role in splits:
            raise FormatError(f"duplicate split role {role!r}")
        dump = read_split(_resolve(base, entry["path"]), role)
        if dump.num_classes != k:
            raise ShapeMismatch(
                f"split {role}: K={dump.num_classes} but num_classes={k}"
            )
        splits[role] = dump
        if "features" in entry:
            feats, flabels = read_features(_resolve(base, entry["features"]))
            if feats.shape[0] != dump.n or not np.array_equal(flabels, dump.labels):
                raise ShapeMismatch(f"split {role}: features do not align with logits")
            feats.flags.writeable = False
            features[role] = feats
        if role == "adv_id":
            adv_source = entry.get("source")
            if "indices" in entry:
                adv_indices = np.asarray(entry["indices"], dtype=np.int64)

    for role in ("id_val", "id_test"):
        if role not in splits:
            raise MissingSplit(f"manifest has no {role} split")
    if not any(r.startswith("ds_") for r in splits):
        raise MissingSplit("manifest needs at least one ds_ split")
    if not any(r.startswith("ood_") for r in splits):
        raise MissingSplit("manifest needs at least one ood_ split")

    if "adv_id" in splits and adv_source is not None:
        if adv_source not in splits:
            raise MissingSplit(f"adv_id source {adv_source!r} not present")
        src = splits[adv_source].labels
        adv = splits["adv_id"]
        if adv_indices is not None:
            if adv_indices.shape[0] != adv.n or adv_indices.max(initial=-1) >= src.shape[0]:
                raise ShapeMismatch("adv_id indices do not fit its source split")
            expected = src[adv_indices]
        elif adv.n == src.shape[0]:
            expected = src
        else:
            raise ShapeMismatch("adv_id is a subset of its source but no indices given")
        if not np.array_equal(adv.labels, expected):
            raise ShapeMismatch("adv_id labels differ from the source subset")

    model_path = _resolve(base, doc["model"]) if doc.get("model") else None
    return ModelRun(
        model_id=str(doc["model_id"]),
        group=str(doc.get("group", "baseline")),
        num_classes=k,
        splits=splits,
        features=features,
        model_path=model_path,
        adv_source=adv_source,
        adv_indices=adv_indices,
    )


def load_run(manifest_path) -> ModelRun:
    """Load a manifest and every dump it references, validating all invariants."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc
    run = parse_manifest(doc, manifest_path.parent)
    object.__setattr__(run, "manifest_path", manifest_path)
    return run


def write_manifest(path, model_id: str, group: str, num_classes: int, splits: list,
                   model: str | None = None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "model_id": model_id,
        "group": group,
        "num_classes": int(num_classes),
    }
    if model is not None:
        doc["model"] = model
    doc["splits"] = splits
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def save_run(run: ModelRun, directory, manifest_name: str = "manifest.json") -> Path:
    """Write every split of ``run`` plus a manifest into ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for role in sorted(run.splits):
        dump = run.splits[role]
        write_split(directory / f"{role}.hre", dump.logits, dump.labels)
        entry = {"role": role, "path": f"{role}.hre"}
        if role in run.features:
            write_features(directory / f"{role}.feat", run.features[role], dump.labels)
            entry["features"] = f"{role}.feat"
        if role == "adv_id" and run.adv_source is not None:
            entry["source"] = run.adv_source
            if run.adv_indices is not None:
                entry["indices"] = [int(i) for i in run.adv_indices]
        entries.append(entry)
    model = str(Path(run.model_path).resolve()) if run.model_path is not None else None
    path = directory / manifest_name
    write_manifest(path, run.model_id, run.group, run.num_classes, entries, model)
    return path
