"""User-item and item-item graph construction and sparse propagation."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import FormatError
from .ops import softmax, softmax_vjp

SPARSE_MAGIC = b"HPMS"
SPARSE_VERSION = 1
_SPARSE_HEADER = struct.Struct("<4sIQQ")
_SPARSE_ENTRY = np.dtype([("row", "<u8"), ("col", "<u8"), ("value", "<f4")])

ITEM_GRAPH_NORMS = ("sym", "none")


def build_norm_adj(train_pairs, num_users: int, num_items: int, dtype=np.float64) -> sp.csr_matrix:
    """Symmetric-normalized bipartite adjacency over users then items.

    Entry (u, v) and (v, u) is ``1 / (sqrt(deg_u) * sqrt(deg_v))`` with degrees
    counted on ``train_pairs``.  Isolated nodes get empty rows.
    """
    pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    u, v = pairs[:, 0], pairs[:, 1]
    du = np.bincount(u, minlength=num_users).astype(np.float64)
    dv = np.bincount(v, minlength=num_items).astype(np.float64)
    vals = 1.0 / (np.sqrt(du[u]) * np.sqrt(dv[v]))
    n = num_users + num_items
    rows = np.concatenate([u, v + num_users])
    cols = np.concatenate([v + num_users, u])
    adj = sp.csr_matrix((np.concatenate([vals, vals]).astype(dtype), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return adj


def propagate(adj, h0, num_layers: int) -> list:
    """Return ``[H(0), ..., H(L)]`` with ``H(l) = adj @ H(l-1)``."""
    h0 = np.asarray(h0)
    if h0.shape[0] != adj.shape[0]:
        raise ValueError(f"embedding rows {h0.shape[0]} != graph nodes {adj.shape[0]}")
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    out = [h0]
    for _ in range(num_layers):
        out.append(np.asarray(adj @ out[-1]))
    return out


def _cosine_block(block, f, block_norms, norms):
    # divide raw dot products so orthogonal rows give an exact 0 and ties stay ties
    denom = block_norms[:, None] * norms[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, (block @ f.T) / np.where(denom > 0, denom, 1.0), 0.0)


def cosine_similarity(features) -> np.ndarray:
    """Dense cosine table; rows with zero norm have similarity 0 to everything."""
    f = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(f, axis=1)
    return _cosine_block(f, f, norms, norms)


def build_knn_graph(features, k: int, chunk: int = 1024) -> sp.csr_matrix:
    """Keep each item's ``k`` most cosine-similar other items (raw cosine values).

    Ties go to the smaller item index.
    """
    f = features.values if hasattr(features, "values") else features
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} items, got {n}")
    norms = np.linalg.norm(f, axis=1)
    rows, cols, vals = [], [], []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sim = _cosine_block(f[start:stop], f, norms[start:stop], norms)
        local = np.arange(stop - start)
        sim[local, local + start] = -np.inf
        # stable sort on -sim keeps the smaller index first among ties
        top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
        rows.append(np.repeat(np.arange(start, stop), k))
        cols.append(top.ravel())
        vals.append(sim[local[:, None], top].ravel())
    rows, cols, vals = (np.concatenate(x) for x in (rows, cols, vals))
    order = np.lexsort((cols, rows))
    g = sp.csr_matrix((vals[order], (rows[order], cols[order])), shape=(n, n))
    g.sort_indices()
    return g


class ItemItemGraph:
    """Frozen per-modality kNN graphs fused with trainable softmax weights.

    The union sparsity pattern is computed once; :meth:`operator` only
    recomputes values, so re-fusing after a weight update costs O(nnz).
    """

    def __init__(self, graphs: dict, k: int | None = None):
        if not graphs:
            raise ValueError("need at least one modality graph")
        self.modalities = tuple(graphs)
        shapes = {g.shape for g in graphs.values()}
        if len(shapes) != 1:
            raise ValueError(f"modality graphs disagree on shape: {shapes}")
        self.shape = shapes.pop()
        self.k = k
        self.graphs = {m: sp.csr_matrix(g) for m, g in graphs.items()}
        n = self.shape[0]
        keys = []
        for g in self.graphs.values():
            coo = g.tocoo()
            keys.append(coo.row.astype(np.int64) * n + coo.col)
        keys = np.unique(np.concatenate(keys)) if keys else np.empty(0, np.int64)
        self.rows = keys // n
        self.cols = keys % n
        self.values = np.zeros((len(self.modalities), len(keys)))
        for i, g in enumerate(self.graphs.values()):
            coo = g.tocoo()
            pos = np.searchsorted(keys, coo.row.astype(np.int64) * n + coo.col)
            self.values[i, pos] = coo.data
        self.indptr = np.searchsorted(self.rows, np.arange(n + 1)).astype(np.int64)
        for arr in (self.rows, self.cols, self.values, self.indptr):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def fused_values(self, alpha) -> np.ndarray:
        return softmax(alpha) @ self.values

    def _normalized(self, s):
        deg = np.bincount(self.rows, weights=np.abs(s), minlength=self.shape[0])
        with np.errstate(divide="ignore"):
            r = np.where(deg > 0, deg ** -0.5, 0.0)
        return s * r[self.rows] * r[self.cols], deg, r

    def operator_values(self, alpha, norm: str = "sym") -> np.ndarray:
        if norm not in ITEM_GRAPH_NORMS:
            raise ValueError(f"unknown item graph normalization {norm!r}")
        s = self.fused_values(alpha)
        return self._normalized(s)[0] if norm == "sym" else s

    def operator(self, alpha, norm: str = "sym", dtype=np.float64) -> sp.csr_matrix:
        vals = self.operator_values(alpha, norm).astype(dtype)
        return sp.csr_matrix((vals, self.cols.copy(), self.indptr.copy()), shape=self.shape)

    def alpha_grad(self, alpha, grad_values, norm: str = "sym") -> np.ndarray:
        """Backpropagate a gradient on operator values (pattern order) to ``alpha``."""
        w = softmax(alpha)
        s = w @ self.values
        q = np.asarray(grad_values, dtype=np.float64)
        if norm == "sym":
            _, deg, r = self._normalized(s)
            ds = q * r[self.rows] * r[self.cols]
            t = q * s
            n = self.shape[0]
            dr = (np.bincount(self.rows, weights=t * r[self.cols], minlength=n)
                  + np.bincount(self.cols, weights=t * r[self.rows], minlength=n))
            with np.errstate(divide="ignore"):
                ddeg = np.where(deg > 0, -0.5 * dr * deg ** -1.5, 0.0)
            ds = ds + ddeg[self.rows] * np.sign(s)
        else:
            ds = q
        return softmax_vjp(w, self.values @ ds)


def pattern_grad(graph: ItemItemGraph, grad_out, inputs, chunk: int = 65536) -> np.ndarray:
    """Gradient of ``<grad_out, op @ inputs>`` w.r.t. each stored value of ``op``."""
    out = np.empty(graph.nnz)
    for start in range(0, graph.nnz, chunk):
        stop = min(start + chunk, graph.nnz)
        out[start:stop] = np.einsum(
            "nf,nf->n", grad_out[graph.rows[start:stop]], inputs[graph.cols[start:stop]]
        )
    return out


def save_sparse(matrix, path) -> None:
    coo = sp.coo_matrix(matrix)
    if coo.shape[0] != coo.shape[1]:
        raise FormatError("sparse format stores square matrices only")
    order = np.lexsort((coo.col, coo.row))
    rec = np.empty(coo.nnz, dtype=_SPARSE_ENTRY)
    rec["row"] = coo.row[order]
    rec["col"] = coo.col[order]
    rec["value"] = coo.data[order]
    with open(path, "wb") as fh:
        fh.write(_SPARSE_HEADER.pack(SPARSE_MAGIC, SPARSE_VERSION, coo.shape[0], coo.nnz))
        fh.write(rec.tobytes())


def load_sparse(path) -> sp.csr_matrix:
    blob = Path(path).read_bytes()
    if len(blob) < _SPARSE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, nnz = _SPARSE_HEADER.unpack_from(blob)
    if magic != SPARSE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SPARSE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = blob[_SPARSE_HEADER.size:]
    if len(body) != nnz * _SPARSE_ENTRY.itemsize:
        raise FormatError(f"{path}: expected {nnz} entries")
    rec = np.frombuffer(body, dtype=_SPARSE_ENTRY)
    return sp.csr_matrix(
        (rec["value"].astype(np.float32), (rec["row"].astype(np.int64), rec["col"].astype(np.int64))),
        shape=(rows, rows),
    )
