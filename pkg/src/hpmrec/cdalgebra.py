"""Cayley-Dickson hypercomplex arithmetic over vector-valued components.

A hypercomplex embedding with exponent ``n`` has ``2**(n+1)`` components,
each a real vector of width ``d``.  The ``d`` coordinates are treated as
``d`` independent hypercomplex numbers, so every operation here acts
coordinatewise and keeps the operand shape.

All array-level functions take the component axis as ``-2`` and the feature
axis as ``-1``, which lets the model code pass whole ``(rows, N, d)`` blocks.
The :class:`HcVec` wrapper adds validation for single embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_EXP = 4


def num_components(n_exp: int) -> int:
    return 2 ** (n_exp + 1)


def _check_exp(n_exp: int) -> None:
    if not isinstance(n_exp, (int, np.integer)) or not 0 <= n_exp <= MAX_EXP:
        raise ValueError(f"n_exp must be an integer in [0, {MAX_EXP}], got {n_exp!r}")


def _exp_for(num: int) -> int:
    n_exp = int(num).bit_length() - 2
    if num < 2 or num != 2 ** (n_exp + 1):
        raise ValueError(f"component count must be a power of two >= 2, got {num}")
    return n_exp


@dataclass(frozen=True)
class HcVec:
    """One hypercomplex embedding: ``data[k]`` is component ``k`` (row 0 is real)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"HcVec data must be 2-D (components, dim), got shape {data.shape}")
        _exp_for(data.shape[0])
        _check_exp(_exp_for(data.shape[0]))
        if data.shape[1] < 1:
            raise ValueError("HcVec dim must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError("HcVec entries must be finite")
        object.__setattr__(self, "data", data)

    @property
    def num_components(self) -> int:
        return self.data.shape[0]

    @property
    def n_exp(self) -> int:
        return _exp_for(self.data.shape[0])

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def real(self) -> np.ndarray:
        return self.data[0]

    @property
    def imag(self) -> np.ndarray:
        return self.data[1:]

    @classmethod
    def zeros(cls, n_exp: int, dim: int, dtype=np.float64) -> "HcVec":
        _check_exp(n_exp)
        return cls(np.zeros((num_components(n_exp), dim), dtype=dtype))

    @classmethod
    def basis(cls, n_exp: int, index: int, dim: int = 1, dtype=np.float64) -> "HcVec":
        out = np.zeros((num_components(n_exp), dim), dtype=dtype)
        out[index] = 1.0
        return cls(out)

    def __add__(self, other):
        return cd_add(self, other)

    def __sub__(self, other):
        return cd_sub(self, other)

    def __mul__(self, other):
        if isinstance(other, HcVec):
            return cd_mul(self, other)
        return cd_scale(other, self)

    def __rmul__(self, other):
        return cd_scale(other, self)

    def __neg__(self):
        return cd_scale(-1.0, self)


@dataclass(frozen=True)
class StructureTable:
    """Multiplication table: ``e_i * e_j = sign[i, j] * e_{index[i, j]}``."""

    order: int
    sign: np.ndarray
    index: np.ndarray


def _unwrap(x):
    if isinstance(x, HcVec):
        return x.data, True
    return np.asarray(x), False


def _wrap(arr, as_hc):
    return HcVec(arr) if as_hc else arr


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim < 2:
        raise ValueError("operands need a component axis and a feature axis")


def _conj_arr(x: np.ndarray) -> np.ndarray:
    out = -x
    out[..., 0, :] = x[..., 0, :]
    return out


def _recursive_mul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # (a, b)(c, d) = (ac - conj(d) b, d a + b conj(c))
    n = x.shape[-2]
    if n == 1:
        return x * y
    h = n // 2
    a, b = x[..., :h, :], x[..., h:, :]
    c, d = y[..., :h, :], y[..., h:, :]
    re = _recursive_mul(a, c) - _recursive_mul(_conj_arr(d), b)
    im = _recursive_mul(d, a) + _recursive_mul(b, _conj_arr(c))
    return np.concatenate([re, im], axis=-2)


def cd_mul_recursive(x, y):
    """Product computed directly by the doubling recursion (slow; used as an oracle)."""
    a, as_hc = _unwrap(x)
    b, _ = _unwrap(y)
    _check_pair(a, b)
    _exp_for(a.shape[-2])
    return _wrap(_recursive_mul(a, b), as_hc)


@lru_cache(maxsize=None)
def structure_table(n_exp: int) -> StructureTable:
    _check_exp(n_exp)
    n = num_components(n_exp)
    eye = np.eye(n)[:, :, None]
    sign = np.empty((n, n), dtype=np.int8)
    index = np.empty((n, n), dtype=np.int64)
    for i in range(n):
        prods = _recursive_mul(np.broadcast_to(eye[i], (n, n, 1)), eye)[..., 0]
        for j in range(n):
            nz = np.flatnonzero(prods[j])
            assert nz.size == 1 and abs(prods[j, nz[0]]) == 1.0
            index[i, j] = nz[0]
            sign[i, j] = int(prods[j, nz[0]])
    sign.setflags(write=False)
    index.setflags(write=False)
    return StructureTable(order=n, sign=sign, index=index)


def cd_add(x, y):
    a, as_hc = _unwrap(x)
    b, _ = _unwrap(y)
    _check_pair(a, b)
    return _wrap(a + b, as_hc)


def cd_sub(x, y):
    a, as_hc = _unwrap(x)
    b, _ = _unwrap(y)
    _check_pair(a, b)
    return _wrap(a - b, as_hc)


def cd_conjugate(x):
    a, as_hc = _unwrap(x)
    return _wrap(_conj_arr(a), as_hc)


def cd_scale(gamma, x):
    a, as_hc = _unwrap(x)
    return _wrap(a * np.asarray(gamma, dtype=a.dtype), as_hc)


def cd_norm(x) -> np.ndarray:
    a, _ = _unwrap(x)
    return np.sqrt(np.sum(a * a, axis=-2))


def cd_mul(x, y):
    """Coordinatewise hypercomplex product via the cached structure table."""
    a, as_hc = _unwrap(x)
    b, _ = _unwrap(y)
    _check_pair(a, b)
    table = structure_table(_exp_for(a.shape[-2]))
    sign = table.sign.astype(np.result_type(a, b))[:, :, None]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for i in range(table.order):
        # each table row is a permutation of the components
        out[..., table.index[i], :] += sign[i] * a[..., i : i + 1, :] * b
    return _wrap(out, as_hc)


def cd_mul_vjp(x, y, g):
    """Vector-Jacobian products of ``(x, y) -> x * y`` against cotangent ``g``."""
    a, as_hc = _unwrap(x)
    b, _ = _unwrap(y)
    gg, _ = _unwrap(g)
    _check_pair(a, b)
    _check_pair(a, gg)
    table = structure_table(_exp_for(a.shape[-2]))
    sign = table.sign.astype(np.result_type(a, b, gg))[:, :, None]
    gx = np.empty_like(a, dtype=np.result_type(a, b, gg))
    gy = np.zeros_like(gx)
    for i in range(table.order):
        gi = sign[i] * gg[..., table.index[i], :]
        gx[..., i, :] = np.sum(gi * b, axis=-2)
        gy += gi * a[..., i : i + 1, :]
    return _wrap(gx, as_hc), _wrap(gy, as_hc)
