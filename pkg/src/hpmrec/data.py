"""Interaction ingestion, k-core filtering, train/valid/test splitting and
the binary feature-matrix format."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyInputError, FormatError, ParseError

log = logging.getLogger(__name__)

MODALITIES = ("visual", "textual")

FEATURE_MAGIC = b"HPMF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIQQ")


@dataclass(frozen=True)
class InteractionTable:
    num_users: int
    num_items: int
    pairs: np.ndarray  # (E, 2) int64, columns (user, item)
    user_ids: tuple
    item_ids: tuple
    num_duplicates: int = 0

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    @property
    def num_interactions(self) -> int:
        return len(self.pairs)

    @property
    def user_vocab(self) -> dict:
        return {u: i for i, u in enumerate(self.user_ids)}

    @property
    def item_vocab(self) -> dict:
        return {v: i for i, v in enumerate(self.item_ids)}

    @property
    def sparsity(self) -> float:
        return 1.0 - self.num_interactions / (self.num_users * self.num_items)

    def validate(self) -> None:
        p = self.pairs
        if len(p) == 0:
            raise EmptyInputError("interaction table is empty")
        if p[:, 0].min() < 0 or p[:, 0].max() >= self.num_users:
            raise DataError("user index out of range")
        if p[:, 1].min() < 0 or p[:, 1].max() >= self.num_items:
            raise DataError("item index out of range")
        if len(np.unique(p[:, 0] * self.num_items + p[:, 1])) != len(p):
            raise DataError("duplicate (user, item) pairs")
        if len(np.unique(p[:, 0])) != self.num_users or len(np.unique(p[:, 1])) != self.num_items:
            raise DataError("every user and item must appear in at least one pair")


@dataclass(frozen=True)
class SplitDataset:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int
    num_users: int
    num_items: int

    def user_items(self, which: str) -> list:
        """Per-user item lists for one split, indexed by user."""
        pairs = getattr(self, which)
        out = [[] for _ in range(self.num_users)]
        for u, v in pairs:
            out[u].append(int(v))
        return out


@dataclass(frozen=True)
class FeatureMatrix:
    modality: str
    values: np.ndarray  # (items, width) float32

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def table_from_pairs(pairs) -> InteractionTable:
    """Build a table from (original_user, original_item) pairs, indexing in first-seen order."""
    users, items = {}, {}
    seen = set()
    out = []
    dups = 0
    for u, v in pairs:
        key = (u, v)
        if key in seen:
            dups += 1
            continue
        seen.add(key)
        ui = users.setdefault(u, len(users))
        vi = items.setdefault(v, len(items))
        out.append((ui, vi))
    return InteractionTable(
        num_users=len(users),
        num_items=len(items),
        pairs=np.array(out, dtype=np.int64).reshape(-1, 2),
        user_ids=tuple(users),
        item_ids=tuple(items),
        num_duplicates=dups,
    )


def load_interactions(path) -> InteractionTable:
    """Read a ``user_id<TAB>item_id`` file."""
    path = Path(path)
    raw = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0] or not cols[1]:
                raise ParseError(path, lineno, f"expected 2 tab-separated columns, got {len(cols)}")
            raw.append((cols[0], cols[1]))
    if not raw:
        raise EmptyInputError(f"{path}: no interactions")
    table = table_from_pairs(raw)
    if table.num_duplicates:
        log.warning("%s: dropped %d duplicate interactions", path, table.num_duplicates)
    return table


def _reindex(table: InteractionTable, keep: np.ndarray) -> InteractionTable:
    pairs = table.pairs[keep]
    users = np.unique(pairs[:, 0])
    items = np.unique(pairs[:, 1])
    umap = np.full(table.num_users, -1, dtype=np.int64)
    vmap = np.full(table.num_items, -1, dtype=np.int64)
    umap[users] = np.arange(len(users))
    vmap[items] = np.arange(len(items))
    return InteractionTable(
        num_users=len(users),
        num_items=len(items),
        pairs=np.stack([umap[pairs[:, 0]], vmap[pairs[:, 1]]], axis=1),
        user_ids=tuple(table.user_ids[i] for i in users),
        item_ids=tuple(table.item_ids[i] for i in items),
    )


def kcore_filter(table: InteractionTable, k: int) -> InteractionTable:
    """Drop users and items with fewer than ``k`` interactions until nothing changes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = np.ones(len(table.pairs), dtype=bool)
    u, v = table.pairs[:, 0], table.pairs[:, 1]
    while True:
        udeg = np.bincount(u[keep], minlength=table.num_users)
        vdeg = np.bincount(v[keep], minlength=table.num_items)
        new_keep = keep & (udeg[u] >= k) & (vdeg[v] >= k)
        if new_keep.sum() == keep.sum():
            break
        keep = new_keep
    if not keep.any():
        raise EmptyInputError(f"no interactions survive {k}-core filtering")
    return _reindex(table, keep)


def _per_user_counts(deg: int, ratios) -> tuple:
    # the tiny offset keeps e.g. 0.7 * 10 from flooring to 6
    n_train = max(1, int(np.floor(ratios[0] * deg + 1e-9)))
    n_valid = min(int(np.floor(ratios[1] * deg + 1e-9)), deg - n_train)
    return n_train, n_valid, deg - n_train - n_valid


def split_dataset(table: InteractionTable, ratios=(0.8, 0.1, 0.1), seed: int = 0,
                  per_user: bool = True, rng=None) -> SplitDataset:
    """Random train/valid/test split.

    Per-user mode shuffles each user's items and takes
    ``floor(r_train * deg)`` (at least one) for training, ``floor(r_valid * deg)``
    for validation and the remainder for testing.  Global mode cuts one
    shuffled list of all pairs and then moves one pair back into training for
    any user left without one.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed) if rng is None else rng
    pairs = table.pairs
    if per_user:
        order = np.argsort(pairs[:, 0], kind="stable")
        bounds = np.searchsorted(pairs[order, 0], np.arange(table.num_users + 1))
        parts = ([], [], [])
        for u in range(table.num_users):
            idx = order[bounds[u]:bounds[u + 1]]
            idx = idx[rng.permutation(len(idx))]
            n_train, n_valid, _ = _per_user_counts(len(idx), ratios)
            parts[0].append(idx[:n_train])
            parts[1].append(idx[n_train:n_train + n_valid])
            parts[2].append(idx[n_train + n_valid:])
        tr, va, te = (np.concatenate(p) if p else np.empty(0, np.int64) for p in parts)
    else:
        perm = rng.permutation(len(pairs))
        n_train = int(np.floor(ratios[0] * len(pairs)))
        n_valid = int(np.floor(ratios[1] * len(pairs)))
        tr, rest = perm[:n_train], perm[n_train:]
        has_train = np.zeros(table.num_users, dtype=bool)
        has_train[pairs[tr, 0]] = True
        moved = np.zeros(len(rest), dtype=bool)
        for j, idx in enumerate(rest):
            if not has_train[pairs[idx, 0]]:
                has_train[pairs[idx, 0]] = True
                moved[j] = True
        tr = np.concatenate([tr, rest[moved]])
        rest = rest[~moved]
        va, te = rest[:n_valid], rest[n_valid:]
    return SplitDataset(
        train=pairs[np.sort(tr)], valid=pairs[np.sort(va)], test=pairs[np.sort(te)],
        seed=seed, num_users=table.num_users, num_items=table.num_items,
    )


def save_features(matrix, path) -> None:
    values = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise FormatError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, *values.shape))
        fh.write(values.tobytes(order="C"))


def load_features(path, expected_rows=None, modality: str = "visual") -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = blob[_FEATURE_HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {rows * cols * 4}")
    if expected_rows is not None and rows != expected_rows:
        raise FormatError(f"{path}: {rows} feature rows but {expected_rows} items")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite feature values")
    return FeatureMatrix(modality=modality, values=values)


def subset_features(matrix: FeatureMatrix, table: InteractionTable, source: InteractionTable) -> FeatureMatrix:
    """Reorder rows aligned with ``source`` items to match ``table`` items."""
    vocab = source.item_vocab
    rows = np.array([vocab[v] for v in table.item_ids], dtype=np.int64)
    return FeatureMatrix(matrix.modality, matrix.values[rows])


def _write_pairs(path, pairs, table) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in pairs:
            fh.write(f"{table.user_ids[u]}\t{table.item_ids[v]}\n")


def write_split(split: SplitDataset, table: InteractionTable, out_dir) -> dict:
    """Emit train/valid/test TSVs (original ids), vocabularies and a JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        _write_pairs(out / f"{name}.tsv", getattr(split, name), table)
    (out / "users.txt").write_text("".join(f"{u}\n" for u in table.user_ids), encoding="utf-8")
    (out / "items.txt").write_text("".join(f"{v}\n" for v in table.item_ids), encoding="utf-8")
    summary = {
        "num_users": table.num_users,
        "num_items": table.num_items,
        "num_interactions": table.num_interactions,
        "sparsity": table.sparsity,
        "seed": split.seed,
        "train": len(split.train),
        "valid": len(split.valid),
        "test": len(split.test),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def read_split(out_dir):
    """Inverse of :func:`write_split`; returns ``(table, split)``."""
    out = Path(out_dir)
    try:
        user_ids = tuple(out.joinpath("users.txt").read_text(encoding="utf-8").splitlines())
        item_ids = tuple(out.joinpath("items.txt").read_text(encoding="utf-8").splitlines())
        summary = json.loads(out.joinpath("summary.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"prepared split not found in {out}: {exc.filename}") from None
    uv = {u: i for i, u in enumerate(user_ids)}
    iv = {v: i for i, v in enumerate(item_ids)}
    parts = {}
    for name in ("train", "valid", "test"):
        rows = []
        path = out / f"{name}.tsv"
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                cols = line.rstrip("\r\n").split("\t")
                if len(cols) != 2 or cols[0] not in uv or cols[1] not in iv:
                    raise ParseError(path, lineno, "unknown or malformed pair")
                rows.append((uv[cols[0]], iv[cols[1]]))
        parts[name] = np.array(rows, dtype=np.int64).reshape(-1, 2)
    all_pairs = np.concatenate([parts["train"], parts["valid"], parts["test"]])
    table = InteractionTable(len(user_ids), len(item_ids), all_pairs[np.lexsort((all_pairs[:, 1], all_pairs[:, 0]))],
                             user_ids, item_ids)
    split = SplitDataset(parts["train"], parts["valid"], parts["test"], summary["seed"],
                         len(user_ids), len(item_ids))
    return table, split
