"""Column-stochastic similarity matrices between user clusters.

Entry ``(i, j)`` is how much cluster ``i`` influences cluster ``j``, so
column ``j`` holds the convex weights that mix every cluster's parameter
into cluster ``j``'s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .clustering import ClusterModel
from .errors import DimensionMismatch, ZeroColumn

COLUMN_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SimilarityMatrix:
    entries: NDArray[np.float64]
    sparsity_pct: float = 100.0

    def __post_init__(self):
        w = np.array(self.entries, dtype=np.float64, ndmin=2)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionMismatch(f"similarity matrix must be square, got {w.shape}")
        if not 0 < self.sparsity_pct <= 100:
            raise ValueError(f"sparsity must lie in (0, 100], got {self.sparsity_pct}")
        w.setflags(write=False)
        object.__setattr__(self, "entries", w)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def column(self, i: int) -> NDArray[np.float64]:
        return column(self, i)

    def validate(self, tol: float = COLUMN_SUM_TOL) -> list[str]:
        """Return a list of invariant violations (empty when valid)."""
        w = self.entries
        problems = []
        if not np.all(np.isfinite(w)):
            problems.append("non-finite entries")
        if np.any(w < 0) or np.any(w > 1):
            problems.append("entries outside [0, 1]")
        sums = w.sum(axis=0)
        bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
        if bad.size:
            problems.append(f"columns {bad.tolist()} do not sum to 1 (max error {np.abs(sums - 1).max():.3g})")
        if np.any(np.diag(w) <= 0):
            problems.append("zero diagonal entries")
        return problems

    @classmethod
    def identity(cls, m: int) -> "SimilarityMatrix":
        return cls(np.eye(m))


def _normalize_columns(raw: NDArray) -> NDArray:
    sums = raw.sum(axis=0)
    zero = np.flatnonzero(sums <= 0)
    if zero.size:
        raise ZeroColumn(f"columns {zero.tolist()} have no positive weight")
    return raw / sums


def from_raw(raw: ArrayLike) -> SimilarityMatrix:
    """Clamp negatives to zero and normalize each column to sum to one."""
    raw = np.maximum(np.asarray(raw, dtype=np.float64), 0.0)
    return SimilarityMatrix(_normalize_columns(raw))


def build_w(model: ClusterModel | ArrayLike) -> SimilarityMatrix:
    """Similarity from centroid dot products, negatives clamped to zero.

    Raises
    ------
    ZeroColumn
        When a centroid has no positive overlap with anything, itself included.
    """
    c = model.centroids if isinstance(model, ClusterModel) else np.array(model, dtype=np.float64, ndmin=2)
    return from_raw(c @ c.T)


def keep_count(m: int, keep_pct: float) -> int:
    # round first so 25% of 80 does not become 21 through 0.25*80 = 20.000000000000004
    return min(m, max(1, math.ceil(round(keep_pct / 100.0 * m, 9))))


def sparsify(w: SimilarityMatrix, keep_pct: float) -> SimilarityMatrix:
    """Keep the largest ``keep_pct`` percent of each column, then renormalize.

    The diagonal always survives. At the cut-off, equal weights are broken in
    favour of the lower row index.
    """
    if not 0 < keep_pct <= 100:
        raise ValueError(f"keep_pct must lie in (0, 100], got {keep_pct}")
    if keep_pct == 100:
        return w
    m = w.m
    keep = keep_count(m, keep_pct)
    src = w.entries
    out = np.zeros_like(src)
    for j in range(m):
        col = src[:, j]
        # stable sort on -value keeps lower indices first among equals
        order = np.argsort(-col, kind="stable")[:keep]
        out[order, j] = col[order]
        out[j, j] = col[j]
    out = _normalize_columns(out)
    return SimilarityMatrix(out, sparsity_pct=float(keep_pct))


def column(w: SimilarityMatrix, i: int) -> NDArray[np.float64]:
    if not 0 <= i < w.m:
        raise IndexError(f"column {i} out of range for {w.m} clusters")
    return w.entries[:, i].copy()


def perturb(w: SimilarityMatrix, strength: float, rng: np.random.Generator) -> SimilarityMatrix:
    """Misspecified copy of ``w``: mix each column with a random column-stochastic one."""
    noise = rng.random((w.m, w.m))
    noise /= noise.sum(axis=0)
    return SimilarityMatrix(_normalize_columns((1 - strength) * w.entries + strength * noise))
