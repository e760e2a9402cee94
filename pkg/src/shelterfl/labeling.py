"""Chronic / episodic / transitional labeling by 3-means clustering of
(total stays, total episodes) tuples.

Clustering runs on raw, unscaled tuples. Three variants are provided:
merged-data labeling, per-agency labeling, and the decentralized scheme in
which agencies upload only role-tagged centroids and a client count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import Label, LabelCentroids, StayTuple

logger = logging.getLogger(__name__)

K = 3
MAX_ITER = 300
N_INIT = 10


class DegenerateClustering(ValueError):
    """Fewer than three distinct tuples; 3-means is undefined."""


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (3, 2)
    assignments: np.ndarray  # (m,)
    inertia: float
    iterations: int
    converged: bool = True
    inertia_history: list[float] = field(default_factory=list)


def _as_points(tuples) -> np.ndarray:
    pts = np.asarray(tuples, dtype=np.float64)
    if pts.ndim != 2 or (pts.size and pts.shape[1] != 2):
        pts = pts.reshape(-1, 2)
    return pts


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d0 = x[:, None, 0] - c[None, :, 0]
    d1 = x[:, None, 1] - c[None, :, 1]
    return d0 * d0 + d1 * d1


def _kmeanspp(x, w, rng) -> np.ndarray:
    """k-means++ seeding on weighted points (weight = multiplicity)."""
    n = x.shape[0]
    idx = [int(rng.choice(n, p=w / w.sum()))]
    d2 = _sq_dists(x, x[idx])[:, 0]
    for _ in range(1, K):
        p = w * d2
        idx.append(int(rng.choice(n, p=p / p.sum())))
        d2 = np.minimum(d2, _sq_dists(x, x[idx[-1:]])[:, 0])
    return x[idx].copy()


def _lloyd(x, w, centroids, max_iter):
    assign = None
    history = []
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        new_assign = np.argmin(d2, axis=1)
        history.append(float(np.sum(w * d2[np.arange(x.shape[0]), new_assign])))
        if assign is not None and np.array_equal(new_assign, assign):
            return centroids, assign, history, it - 1, True
        assign = new_assign
        counts = np.bincount(assign, weights=w, minlength=K)
        for j in range(K):
            if counts[j] == 0:
                # empty cluster: move it to the worst-served point of a shared cluster
                members = np.bincount(assign, minlength=K)
                cost = w * d2[np.arange(x.shape[0]), assign] * (members[assign] > 1)
                assign[int(np.argmax(cost))] = j
                counts = np.bincount(assign, weights=w, minlength=K)
        sums = np.stack(
            [np.bincount(assign, weights=w * x[:, d], minlength=K) for d in range(2)], axis=1
        )
        centroids = sums / counts[:, None]
    d2 = _sq_dists(x, centroids)
    final = np.argmin(d2, axis=1)
    history.append(float(np.sum(w * d2[np.arange(x.shape[0]), final])))
    return centroids, final, history, max_iter, np.array_equal(final, assign)


def kmeans3(tuples, seed: int = 0, n_init: int = N_INIT, max_iter: int = MAX_ITER) -> KMeansResult:
    """Best-of-``n_init`` Lloyd 3-means with k-means++ seeding.

    Duplicate tuples are collapsed to weighted unique points before clustering,
    so the result does not depend on input order.
    """
    pts = _as_points(tuples)
    if pts.shape[0] == 0:
        raise DegenerateClustering("no tuples to cluster")
    uniq, inverse, counts = np.unique(pts, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if uniq.shape[0] < K:
        raise DegenerateClustering(f"only {uniq.shape[0]} distinct tuples")
    w = counts.astype(np.float64)

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        c0 = _kmeanspp(uniq, w, rng)
        c, a, hist, iters, conv = _lloyd(uniq, w, c0, max_iter)
        if best is None or hist[-1] < best[2][-1]:
            best = (c, a, hist, iters, conv)
    c, a, hist, iters, conv = best
    return KMeansResult(
        centroids=c,
        assignments=a[inverse],
        inertia=hist[-1],
        iterations=iters,
        converged=conv,
        inertia_history=hist,
    )


def assign_roles(centroids) -> LabelCentroids:
    """Chronic = most stays; of the other two, episodic = more episodes.

    Stay-count ties go to the centre with fewer episodes; episode ties go to
    the centre with more stays.
    """
    c = np.asarray(centroids, dtype=np.float64).reshape(K, 2)
    if len({tuple(r) for r in c.tolist()}) != K:
        raise ValueError("centroids must be distinct")
    chronic = max(range(K), key=lambda i: (c[i, 0], -c[i, 1]))
    rest = [i for i in range(K) if i != chronic]
    episodic = max(rest, key=lambda i: (c[i, 1], c[i, 0]))
    transitional = next(i for i in rest if i != episodic)
    return LabelCentroids(
        chronic=tuple(c[chronic]), episodic=tuple(c[episodic]), transitional=tuple(c[transitional])
    )


def label_tuples(tuples, centroids: LabelCentroids) -> np.ndarray:
    """Nearest-centroid labels (as Label ints). Ties resolve to the lower Label."""
    pts = _as_points(tuples)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(_sq_dists(pts, centroids.as_array()), axis=1).astype(np.int64)


def label_with_centroids(t: StayTuple, centroids: LabelCentroids) -> Label:
    return Label(int(label_tuples([t], centroids)[0]))


def local_centroids(tuples, seed: int = 0) -> LabelCentroids:
    """One agency's role-assigned centroids. Raises DegenerateClustering."""
    return assign_roles(kmeans3(tuples, seed=seed).centroids)


def average_centroids(local: Mapping[str, tuple[LabelCentroids, int]]) -> LabelCentroids:
    """Server step: size-weighted, role-by-role mean of agency centroids.

    Reduction runs over agencies in sorted id order.
    """
    if not local:
        raise ValueError("no agency centroids to average")
    keys = sorted(local)
    sizes = np.array([local[k][1] for k in keys], dtype=np.float64)
    if np.any(sizes <= 0):
        raise ValueError("agency sizes must be positive")
    weights = sizes / sizes.sum()
    acc = np.zeros((K, 2))
    for k, wk in zip(keys, weights):
        acc = acc + wk * local[k][0].as_array()
    return LabelCentroids.from_array(acc)


def decentralized_labeling(agencies: Mapping[str, Sequence], seed: int = 0) -> LabelCentroids:
    """Global centroids from per-agency clustering.

    Each agency clusters its own tuples and tags the clusters by role; only the
    three centroids and the agency's client count reach the server. Agencies
    with fewer than three distinct tuples are left out of the average.
    """
    uploads: dict[str, tuple[LabelCentroids, int]] = {}
    for agency_id in sorted(agencies):
        tuples = _as_points(agencies[agency_id])
        try:
            uploads[agency_id] = (local_centroids(tuples, seed=seed), tuples.shape[0])
        except DegenerateClustering as exc:
            logger.warning("agency %s excluded from centroid averaging: %s", agency_id, exc)
    if not uploads:
        raise DegenerateClustering("every agency is degenerate")
    return average_centroids(uploads)


def centralized_labeling(all_tuples, seed: int = 0) -> tuple[LabelCentroids, np.ndarray]:
    """Cluster the merged tuples; returns centroids and per-client labels."""
    pts = _as_points(all_tuples)
    centroids = local_centroids(pts, seed=seed)
    return centroids, label_tuples(pts, centroids)


def centroid_distance(a: LabelCentroids, b: LabelCentroids) -> dict[str, float]:
    """Euclidean distance between matching roles."""
    return {
        role: math.dist(getattr(a, role), getattr(b, role))
        for role in ("transitional", "episodic", "chronic")
    }
