"""Interaction ingestion, k-core filtering, splits, feature files, checkpoints, config files."""
from __future__ import annotations

import json
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import ParamStore
from .tensor import Tensor


class FormatError(ValueError):
    """A file does not follow its declared layout."""


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class UserSequence:
    items: list[int]
    timestamps: list[int]

    def __post_init__(self):
        if len(self.items) != len(self.timestamps):
            raise ValueError("items and timestamps differ in length")
        if any(b < a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be sorted")


@dataclass
class Example:
    user: str
    items: list[int]
    timestamps: list[int]
    target: int


@dataclass
class DatasetSplit:
    train: list[Example] = field(default_factory=list)
    valid: list[Example] = field(default_factory=list)
    test: list[Example] = field(default_factory=list)


@dataclass
class ItemCatalog:
    """Row 0 is the pad item with zero features; item ``i`` sits at row ``i``."""
    item_ids: list[str]
    feat_v: np.ndarray
    feat_t: np.ndarray
    presence_v: np.ndarray
    presence_t: np.ndarray

    def __post_init__(self):
        rows = len(self.item_ids) + 1
        for name in ("feat_v", "feat_t", "presence_v", "presence_t"):
            if getattr(self, name).shape[0] != rows:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {rows}")
        self.id_index = {item: row for row, item in enumerate(self.item_ids, start=1)}

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @property
    def feature_dims(self) -> tuple[int, int]:
        return self.feat_v.shape[1], self.feat_t.shape[1]

    @classmethod
    def from_features(cls, item_ids, feat_v, feat_t, presence_v=None, presence_t=None) -> ItemCatalog:
        n = len(item_ids)
        pv = np.ones(n, dtype=bool) if presence_v is None else np.asarray(presence_v, dtype=bool)
        pt = np.ones(n, dtype=bool) if presence_t is None else np.asarray(presence_t, dtype=bool)
        fv = np.vstack([np.zeros((1, feat_v.shape[1])), feat_v * pv[:, None]]).astype(np.float32)
        ft = np.vstack([np.zeros((1, feat_t.shape[1])), feat_t * pt[:, None]]).astype(np.float32)
        return cls(list(item_ids), fv, ft, np.concatenate([[False], pv]), np.concatenate([[False], pt]))


# ------------------------------------------------------------------ interactions

def parse_interactions(path) -> list[InteractionRecord]:
    """Read ``user \\t item \\t timestamp`` lines, failing on the first bad row."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"interaction file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0] or not parts[1]:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                ts = int(parts[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: timestamp {parts[2]!r} is not an integer") from None
            if ts < 0:
                raise FormatError(f"{path}:{lineno}: negative timestamp")
            records.append(InteractionRecord(parts[0], parts[1], ts))
    return records


def write_interactions(path, records) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.timestamp}\n")


def kcore_filter(records, k: int) -> list[InteractionRecord]:
    """Drop users and items with fewer than ``k`` interactions until nothing changes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = list(records)
    while True:
        users = Counter(r.user_id for r in kept)
        items = Counter(r.item_id for r in kept)
        nxt = [r for r in kept if users[r.user_id] >= k and items[r.item_id] >= k]
        if len(nxt) == len(kept):
            return nxt
        kept = nxt


def build_sequences(records) -> tuple[dict[str, UserSequence], list[str]]:
    """Per-user sequences sorted by ``(timestamp, item_id)``; items indexed from 1 in sorted-id order."""
    if not records:
        raise ValueError("no interactions")
    item_ids = sorted({r.item_id for r in records})
    index = {item: row for row, item in enumerate(item_ids, start=1)}
    grouped = defaultdict(list)
    for r in records:
        grouped[r.user_id].append((r.timestamp, r.item_id))
    seqs = {}
    for user in sorted(grouped):
        events = sorted(grouped[user])
        seqs[user] = UserSequence([index[i] for _, i in events], [t for t, _ in events])
    return seqs, item_ids


def leave_one_out_split(sequences: dict[str, UserSequence]) -> DatasetSplit:
    """Last item is the test target, second-last the validation target.

    Each split example carries the full prefix before its target; the train
    example predicts the last item of the training prefix.  Users with fewer
    than three interactions only contribute training examples.
    """
    split = DatasetSplit()
    for user, seq in sequences.items():
        items, ts = seq.items, seq.timestamps
        n = len(items)
        if n >= 3:
            split.test.append(Example(user, items[:-1], ts[:-1], items[-1]))
            split.valid.append(Example(user, items[:-2], ts[:-2], items[-2]))
            train_end = n - 2
        else:
            train_end = n
        if train_end >= 2:
            split.train.append(Example(user, items[:train_end - 1], ts[:train_end - 1], items[train_end - 1]))
    return split


def save_split(path, split: DatasetSplit) -> None:
    doc = {name: [vars(e) for e in getattr(split, name)] for name in ("train", "valid", "test")}
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_split(path) -> DatasetSplit:
    doc = json.loads(Path(path).read_text())
    return DatasetSplit(**{name: [Example(**e) for e in doc[name]] for name in ("train", "valid", "test")})


# ------------------------------------------------------------------ features

_MMF_HEADER = struct.Struct("<4sIBII")


def save_feature_matrix(path, matrix, presence=None, modality: int = 0, item_ids=None) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    n, dim = matrix.shape
    presence = np.ones(n, dtype=np.uint8) if presence is None else np.asarray(presence, dtype=np.uint8)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MMF_HEADER.pack(b"MMF1", 1, modality, n, dim))
        fh.write(matrix.tobytes())
        fh.write(presence.tobytes())
    if item_ids is not None:
        sidecar = path.with_name("items.idx")
        sidecar.write_text("".join(f"{i}\n" for i in item_ids), encoding="utf-8")


def load_feature_matrix(path, expect_modality: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(matrix, presence)``; checks the sidecar ``items.idx`` if present."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _MMF_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, modality, n, dim = _MMF_HEADER.unpack_from(raw)
    if magic != b"MMF1":
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    if expect_modality is not None and modality != expect_modality:
        raise FormatError(f"{path}: modality {modality}, expected {expect_modality}")
    body = _MMF_HEADER.size + 4 * n * dim
    if len(raw) != body + n:
        raise FormatError(f"{path}: truncated or oversized payload ({len(raw)} bytes, expected {body + n})")
    matrix = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=_MMF_HEADER.size).reshape(n, dim).copy()
    presence = np.frombuffer(raw, dtype=np.uint8, count=n, offset=body).astype(bool)
    sidecar = path.with_name("items.idx")
    if sidecar.exists():
        rows = sidecar.read_text(encoding="utf-8").splitlines()
        if len(rows) != n:
            raise FormatError(f"{path}: {n} rows but {sidecar.name} lists {len(rows)} items")
    return matrix, presence


def read_item_index(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def load_catalog(directory, item_ids: list[str] | None = None) -> ItemCatalog:
    """Catalog from ``features_v.mmf``/``features_t.mmf`` and ``items.idx``, reordered to ``item_ids``."""
    directory = Path(directory)
    file_ids = read_item_index(directory / "items.idx")
    fv, pv = load_feature_matrix(directory / "features_v.mmf", 0)
    ft, pt = load_feature_matrix(directory / "features_t.mmf", 1)
    if item_ids is None:
        item_ids = file_ids
    pos = {item: row for row, item in enumerate(file_ids)}
    missing = [i for i in item_ids if i not in pos]
    if missing:
        raise FormatError(f"items without features: {missing[:5]}")
    rows = np.array([pos[i] for i in item_ids], dtype=np.int64)
    return ItemCatalog.from_features(item_ids, fv[rows], ft[rows], pv[rows], pt[rows])


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path, store: ParamStore) -> None:
    """Binary ``MMCK`` file plus a ``.json`` manifest mirror next to it."""
    path = Path(path)
    names = list(store.tensors)
    header = {"meta": store.meta,
              "tensors": [{"name": n, "shape": list(store.tensors[n].shape)} for n in names],
              "aliases": [{"name": a, "alias_of": c} for a, c in store.aliases.items()]}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with path.open("wb") as fh:
        fh.write(b"MMCK")
        fh.write(struct.pack("<II", 1, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(store.tensors[n].data, dtype="<f4").tobytes())
    mirror = {"meta": store.meta, "manifest": store.manifest(), "manifest_hash": store.manifest_hash()}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(mirror, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> ParamStore:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != b"MMCK":
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    version, size = struct.unpack_from("<II", raw, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(raw[12:12 + size])
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable manifest") from exc
    store = ParamStore()
    store.meta = header["meta"]
    offset = 12 + size
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * count > len(raw):
            raise FormatError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        store.add(entry["name"], Tensor(arr.astype(np.float32)))
        offset += 4 * count
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    for entry in header["aliases"]:
        store.alias(entry["name"], entry["alias_of"])
    return store


# ------------------------------------------------------------------ config files

def parse_config(path, allowed: dict[str, type]) -> dict:
    """``key = value`` lines; ``#`` comments; unknown keys are an error."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        kind = allowed[key]
        try:
            if kind is bool:
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = value.lower() in ("true", "1", "yes")
            else:
                out[key] = kind(value)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out
