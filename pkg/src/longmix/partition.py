"""Point-estimate clustering from stored label draws, and partition scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import average, fcluster

from . import kernels


@dataclass
class SimilarityMatrix:
    """Posterior co-clustering probabilities over stored draws."""

    values: np.ndarray  # (N, N), symmetric, diagonal 1
    n_draws: int


@dataclass
class PartitionResult:
    labels: np.ndarray  # (N,) in 0..K-1
    binder_loss: float
    n_clusters: int


def similarity_matrix(draws: np.ndarray) -> SimilarityMatrix:
    """Normalized pairwise co-clustering frequencies, one row/column per individual."""
    draws = np.ascontiguousarray(np.atleast_2d(draws), dtype=np.int64)
    s, n = draws.shape
    if s < 1:
        raise ValueError("need at least one stored draw")
    counts = np.zeros((n, n))
    kernels.cocluster_counts(draws, counts)
    return SimilarityMatrix(values=counts / s, n_draws=s)


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel to first-appearance order starting at 0."""
    out = np.empty(labels.shape[0], dtype=np.int64)
    seen = {}
    for i, c in enumerate(labels):
        out[i] = seen.setdefault(int(c), len(seen))
    return out


def binder_loss(labels: np.ndarray, sim: np.ndarray) -> float:
    same = labels[:, None] == labels[None, :]
    diff = np.abs(same.astype(float) - sim)
    return float(np.triu(diff, 1).sum())


def _refine(labels: np.ndarray, sim: np.ndarray) -> np.ndarray:
    """Greedy single-move descent on the Binder loss until a local minimum."""
    labels = _canonical(labels)
    n = labels.shape[0]
    # moving i to cluster c changes the loss by sum_j (1-2 sim_ij) over the
    # pairs gained minus the pairs lost; track per-cluster column sums
    w = 1.0 - 2.0 * sim
    np.fill_diagonal(w, 0.0)
    improved = True
    while improved:
        improved = False
        k = labels.max() + 1
        member_w = np.zeros((n, k + 1))
        for c in range(k):
            member_w[:, c] = w[:, labels == c].sum(axis=1)
        for i in range(n):
            cur = labels[i]
            gains = member_w[i] - member_w[i, cur] + w[i, i]
            gains[cur] = 0.0
            best = int(np.argmin(gains))
            if gains[best] < -1e-12:
                member_w[:, cur] -= w[:, i]
                member_w[:, best] += w[:, i]
                labels[i] = best
                improved = True
        labels = _canonical(labels)
    return labels


def binder_partition(sim: SimilarityMatrix, draws: np.ndarray) -> PartitionResult:
    """Partition minimizing the posterior-expected Binder loss.

    Candidates are every stored draw plus average-linkage dendrogram cuts of
    the distance 1 - similarity at every cluster count up to the largest one
    observed, each refined by greedy single moves. Ties prefer fewer
    clusters, then the first candidate found.
    """
    s = np.asarray(sim.values, dtype=float)
    draws = np.atleast_2d(draws)
    n = s.shape[0]
    candidates = [_canonical(d) for d in draws]
    k_max = max(int(d.max()) + 1 for d in candidates)
    if n > 1:
        dist = 1.0 - s
        iu = np.triu_indices(n, 1)
        link = average(dist[iu])
        for k in range(1, k_max + 1):
            cut = fcluster(link, t=k, criterion="maxclust")
            candidates.append(_canonical(cut))
    best = None
    for cand in candidates:
        cand = _refine(cand, s)
        loss = binder_loss(cand, s)
        k = int(cand.max()) + 1
        if (best is None or loss < best[0] - 1e-12
                or (loss <= best[0] + 1e-12 and k < best[1])):
            best = (loss, k, cand)
    loss, k, labels = best
    return PartitionResult(labels=labels, binder_loss=loss, n_clusters=k)


def adjusted_rand(p1: np.ndarray, p2: np.ndarray) -> float:
    """Adjusted Rand index between two partitions of the same items."""
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    if p1.shape != p2.shape or p1.ndim != 1:
        raise ValueError("partitions must be equal-length vectors")
    n = p1.shape[0]
    _, i1 = np.unique(p1, return_inverse=True)
    _, i2 = np.unique(p2, return_inverse=True)
    k1, k2 = i1.max() + 1, i2.max() + 1
    table = np.zeros((k1, k2), dtype=np.int64)
    np.add.at(table, (i1, i2), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table.astype(float)).sum()
    a = comb2(table.sum(axis=1).astype(float)).sum()
    b = comb2(table.sum(axis=0).astype(float)).sum()
    total = comb2(float(n))
    expected = a * b / total
    denom = 0.5 * (a + b) - expected
    if denom == 0.0:
        # both partitions trivial (all-singletons or single block)
        return 1.0
    return float((sum_ij - expected) / denom)
