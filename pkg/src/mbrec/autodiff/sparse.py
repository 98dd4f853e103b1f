"""Sparse adjacency matrices and the sparse-dense product.

Adjacency is data, not parameters: spmm only propagates gradient through
the dense operand. Storage is compressed-row (scipy CSR) with the
transpose cached, since message passing needs both directions.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError
from .ops import _emit
from .tensor import Tensor


class SparseMatrix:
    """Non-negative sparse matrix with unique (row, col) coordinates."""

    def __init__(self, csr: sp.csr_matrix, _transpose: "SparseMatrix | None" = None):
        if not sp.issparse(csr):
            raise TypeError("SparseMatrix wraps a scipy sparse matrix")
        csr = csr.tocsr().astype(np.float64)
        csr.sum_duplicates()
        if csr.nnz and csr.data.min() < 0:
            raise ValueError("adjacency weights must be non-negative")
        self.csr = csr
        self._t = _transpose

    @classmethod
    def from_entries(cls, rows: int, cols: int,
                     entries: list[tuple[int, int, float]]) -> "SparseMatrix":
        if not entries:
            return cls(sp.csr_matrix((rows, cols)))
        r, c, v = zip(*entries)
        r, c = np.asarray(r), np.asarray(c)
        if len(set(zip(r.tolist(), c.tolist()))) != len(entries):
            raise ValueError("duplicate (row, col) coordinates")
        if r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols:
            raise ShapeError(f"entry out of bounds for {rows}x{cols} matrix")
        return cls(sp.csr_matrix((np.asarray(v, dtype=np.float64), (r, c)),
                                 shape=(rows, cols)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def rows(self) -> int:
        return self.csr.shape[0]

    @property
    def cols(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    @property
    def T(self) -> "SparseMatrix":
        if self._t is None:
            self._t = SparseMatrix(self.csr.T.tocsr(), _transpose=self)
        return self._t

    def densify(self) -> np.ndarray:
        return np.asarray(self.csr.todense())

    def entries(self) -> list[tuple[int, int, float]]:
        coo = self.csr.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.csr.sum(axis=1)).ravel()

    def __repr__(self) -> str:
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def spmm(s: SparseMatrix, d) -> Tensor:
    """Sparse @ dense; gradient flows through the dense operand only."""
    from .ops import _coerce

    d = _coerce(d)
    if d.ndim != 2 or s.cols != d.shape[0]:
        raise ShapeError(f"spmm shapes incompatible: {s.shape} x {d.shape}")

    def bwd(g):
        return (spmm(s.T, g),)

    return _emit("spmm", (d,), np.asarray(s.csr @ d.data), bwd)
