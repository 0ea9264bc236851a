"""Dense linear-algebra primitives for the collaborative bandits.

Vectors and matrices are plain float64 numpy arrays. The only stateful
object is :class:`InverseState`, which keeps ``A^{-1}`` up to date under
rank-one additions ``A <- A + u v^T`` without ever inverting ``A``.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg.blas import dger

from .errors import DegenerateUpdate, DimensionMismatch

# |1 + v^T A^{-1} u| below this means the update would make A singular.
DEGENERATE_TOL = 1e-12


def _vec(x: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def sm_update(inv: ArrayLike, u: ArrayLike, v: ArrayLike | None = None) -> NDArray[np.float64]:
    """Return ``(A + u v^T)^{-1}`` given ``inv = A^{-1}`` (Sherman-Morrison).

    Pure function; ``inv`` is not modified. ``v`` defaults to ``u``.
    """
    inv = np.asarray(inv, dtype=np.float64)
    state = InverseState(inv.shape[0], inv=inv.copy())
    state.update(u, v)
    return state.inv


class InverseState:
    """Incrementally maintained inverse of a square matrix.

    Starts from the identity unless ``inv`` is given. :meth:`update` works
    in place with O(dim^2) cost per call.
    """

    __slots__ = ("dim", "inv")

    def __init__(self, dim: int, inv: NDArray[np.float64] | None = None):
        if dim < 0:
            raise DimensionMismatch(f"dimension must be nonnegative, got {dim}")
        self.dim = dim
        if inv is None:
            inv = np.eye(dim)
        else:
            inv = np.ascontiguousarray(inv, dtype=np.float64)
            if inv.shape != (dim, dim):
                raise DimensionMismatch(f"expected {dim}x{dim} inverse, got {inv.shape}")
        self.inv = inv

    def copy(self) -> "InverseState":
        return InverseState(self.dim, self.inv.copy())

    def update(self, u: ArrayLike, v: ArrayLike | None = None) -> "InverseState":
        """Apply ``A <- A + u v^T`` to the tracked inverse (``v = u`` if omitted).

        Raises
        ------
        DegenerateUpdate
            If ``|1 + v^T A^{-1} u| < 1e-12``; the state is left untouched.
        """
        u = _vec(u)
        if u.shape[0] != self.dim:
            raise DimensionMismatch(f"update vector has dim {u.shape[0]}, state has {self.dim}")
        inv = self.inv
        inv_u = inv @ u
        if v is None:
            v_inv = inv_u  # symmetric inverse: v^T A^{-1} = (A^{-1} u)^T
            denom = 1.0 + u @ inv_u
        else:
            v = _vec(v)
            if v.shape[0] != self.dim:
                raise DimensionMismatch(f"update vector has dim {v.shape[0]}, state has {self.dim}")
            v_inv = v @ inv
            denom = 1.0 + v @ inv_u
        if not abs(denom) >= DEGENERATE_TOL:
            raise DegenerateUpdate(f"Sherman-Morrison denominator {denom!r} is numerically zero")
        if self.dim == 0:
            return self
        # dger on the transposed (Fortran-ordered) view updates inv in place
        out = dger(-1.0 / denom, v_inv, inv_u, a=inv.T, overwrite_a=1)
        if not np.shares_memory(out, inv):
            inv[...] = out.T
        return self

    def quad_form(self, z: ArrayLike) -> float:
        z = _vec(z)
        return float(z @ self.inv @ z)

    def quad_forms(self, zs: NDArray[np.float64]) -> NDArray[np.float64]:
        """Row-wise ``z^T inv z`` for a stack of vectors ``zs`` of shape (n, dim)."""
        return np.einsum("ij,ij->i", zs @ self.inv, zs)

    def solve(self, b: ArrayLike) -> NDArray[np.float64]:
        """``A^{-1} b`` via the tracked inverse."""
        return self.inv @ _vec(b)


def quad_form(state: InverseState, z: ArrayLike) -> float:
    return state.quad_form(z)


def self_outer(x: ArrayLike) -> NDArray[np.float64]:
    x = _vec(x)
    return np.outer(x, x)


def kron_vec(w: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
    """Block vector whose block ``j`` is ``w[j] * x`` (i.e. ``w ⊗ x``)."""
    w = _vec(w)
    x = _vec(x)
    return (w[:, None] * x[None, :]).reshape(-1)


def kron_rows(w: ArrayLike, xs: ArrayLike) -> NDArray[np.float64]:
    """:func:`kron_vec` applied to every row of ``xs``; returns shape (n, len(w)*d)."""
    w = _vec(w)
    xs = np.asarray(xs, dtype=np.float64)
    n, d = xs.shape
    return (w[None, :, None] * xs[:, None, :]).reshape(n, w.shape[0] * d)


def pad_vector(x: ArrayLike, block_index: int, num_blocks: int) -> NDArray[np.float64]:
    """Place ``x`` in block ``block_index`` of a zero vector with ``num_blocks`` blocks."""
    if not 0 <= block_index < num_blocks:
        raise IndexError(f"block {block_index} out of range for {num_blocks} blocks")
    x = _vec(x)
    d = x.shape[0]
    out = np.zeros(num_blocks * d)
    out[block_index * d : (block_index + 1) * d] = x
    return out


def reshape_mat(x: ArrayLike, r: int, c: int) -> NDArray[np.float64]:
    """Unstack ``x`` column-major into an ``r x c`` matrix.

    Column ``j`` is ``x[j*r:(j+1)*r]``, so block ``j`` of a :func:`kron_vec`
    layout becomes column ``j``.
    """
    x = _vec(x)
    if x.shape[0] != r * c:
        raise DimensionMismatch(f"cannot reshape vector of dim {x.shape[0]} into {r}x{c}")
    return x.reshape(c, r).T.copy()


def flatten_mat(m: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`reshape_mat` (column-major stacking)."""
    return np.asarray(m, dtype=np.float64).T.reshape(-1).copy()
