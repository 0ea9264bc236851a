"""k-means over user features; the centroids stand in for users."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, TooFewPoints


@dataclass(frozen=True)
class ClusterModel:
    centroids: NDArray[np.float64]
    # SSE after each Lloyd iteration; empty for models loaded from disk
    history: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64, ndmin=2)
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def assign(self, user_features: ArrayLike) -> int:
        return assign(self, user_features)

    def assign_many(self, points: ArrayLike) -> NDArray[np.intp]:
        return _nearest(np.asarray(points, dtype=np.float64), self.centroids)[0]


def _sq_dists(points: NDArray, centroids: NDArray) -> NDArray:
    # |p|^2 - 2 p.c + |c|^2 loses precision for nearby points; go direct
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _nearest(points: NDArray, centroids: NDArray) -> tuple[NDArray[np.intp], NDArray]:
    if points.shape[0] == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0)
    # chunk to bound the (n, k, d) temporary
    labels = np.empty(points.shape[0], dtype=np.intp)
    best = np.empty(points.shape[0])
    step = max(1, 2_000_000 // max(1, centroids.size))
    for start in range(0, points.shape[0], step):
        d2 = _sq_dists(points[start : start + step], centroids)
        lab = np.argmin(d2, axis=1)  # first minimum wins ties
        labels[start : start + step] = lab
        best[start : start + step] = d2[np.arange(lab.shape[0]), lab]
    return labels, best


def assign(model: ClusterModel, user_features: ArrayLike) -> int:
    """Index of the nearest centroid (squared Euclidean); lowest index on ties."""
    x = np.asarray(user_features, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.dim:
        raise DimensionMismatch(f"user features have dim {x.shape[0]}, model expects {model.dim}")
    diff = model.centroids - x
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def _kmeanspp(points: NDArray, k: int, rng: np.random.Generator) -> NDArray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = _sq_dists(points, centroids[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        # points already chosen have zero weight, so picks stay distinct
        idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, _sq_dists(points, centroids[j : j + 1])[:, 0])
    return centroids


def sse(points: ArrayLike, model: ClusterModel) -> float:
    points = np.asarray(points, dtype=np.float64)
    return float(_nearest(points, model.centroids)[1].sum())


def fit_kmeans(points: ArrayLike, k: int, seed: int = 0, max_iters: int = 100) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding.

    Stops after ``max_iters`` iterations or once no assignment changes. A
    cluster that goes empty is re-seeded with the point farthest from its
    current centroid. The result depends only on ``(points order, k, seed,
    max_iters)``.

    Raises
    ------
    TooFewPoints
        When ``k`` exceeds the number of distinct points.
    """
    points = np.array(points, dtype=np.float64, ndmin=2)
    if points.shape[0] == 0:
        raise TooFewPoints("no points to cluster")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    n_distinct = np.unique(points, axis=0).shape[0]
    if k > n_distinct:
        raise TooFewPoints(f"k={k} exceeds the {n_distinct} distinct points")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(points, k, rng)
    labels, best = _nearest(points, centroids)
    history = [float(best.sum())]
    for _ in range(max_iters):
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=k)
        taken = np.zeros(points.shape[0], dtype=bool)
        for j in range(k):
            if counts[j]:
                new[j] = points[labels == j].mean(axis=0)
            else:
                far = _sq_dists(points, centroids[j : j + 1])[:, 0]
                far[taken] = -1.0
                idx = int(np.argmax(far))
                taken[idx] = True
                new[j] = points[idx]
        centroids = new
        new_labels, best = _nearest(points, centroids)
        history.append(float(best.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return ClusterModel(centroids, history=tuple(history))


def standardize(points: ArrayLike) -> tuple[NDArray, NDArray, NDArray]:
    """Column z-scores; constant columns keep unit scale. Returns (z, mean, scale)."""
    points = np.asarray(points, dtype=np.float64)
    mean = points.mean(axis=0)
    scale = points.std(axis=0)
    scale[scale == 0] = 1.0
    return (points - mean) / scale, mean, scale
