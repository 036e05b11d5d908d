"""Cluster-pruned local outlier factor.

DBSCAN groups the rows, each cluster gets a center and a mean-distance radius,
and only points on or beyond their cluster's radius (plus DBSCAN noise) are
scored with LOF. Neighbors for the score always come from the full point set,
so pruning changes which points are scored, never the scores themselves.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ContractError

NOISE = -1
DIST_FLOOR = 1e-12


def zscore(points: np.ndarray) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def default_eps(z: np.ndarray, k: int = 5, quantile: float = 90.0) -> float:
    """90th percentile of k-NN distances; floored so identical points still cluster."""
    n = len(z)
    if n < 2:
        return 1.0
    k = min(k, n - 1)
    d, _ = cKDTree(z).query(z, k=k + 1)
    return max(float(np.percentile(d[:, -1], quantile)), 1e-9)


def dbscan_cluster(points: np.ndarray, eps: float | None = None, min_pts: int = 5,
                   standardize: bool = True) -> np.ndarray:
    """Labels per row; ``-1`` is noise. Neighbor counts include the point itself."""
    z = zscore(points) if standardize else np.asarray(points, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if eps is None:
        eps = default_eps(z)
    if eps <= 0 or min_pts < 1:
        raise ContractError("dbscan needs eps > 0 and min_pts >= 1")
    n = len(z)
    hoods = cKDTree(z).query_ball_point(z, r=eps)
    hoods = [sorted(h) for h in hoods]
    core = np.array([len(h) >= min_pts for h in hoods], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        queue = deque([i])
        visited[i] = True
        labels[i] = cluster
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in hoods[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                if not visited[q]:
                    visited[q] = True
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


@dataclass
class OutlierCandidateSet:
    indices: np.ndarray        # row indices into the point table, ascending
    cluster_ids: np.ndarray    # owning cluster, -1 for DBSCAN noise
    distances: np.ndarray      # distance to cluster center (NaN for noise)
    radii: dict                # cluster id -> mean member-to-center distance

    def __len__(self):
        return int(self.indices.size)


def build_candidate_set(points: np.ndarray, labels: np.ndarray) -> OutlierCandidateSet:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    keep = np.zeros(len(x), dtype=bool)
    dist = np.full(len(x), np.nan)
    radii = {}
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if c == NOISE:
            keep[members] = True
            continue
        center = x[members].mean(axis=0)
        d = np.linalg.norm(x[members] - center, axis=1)
        radius = float(d.mean())
        radii[int(c)] = radius
        dist[members] = d
        # a zero radius means perfect duplicates: admit nobody
        keep[members] = d > radius if radius <= 0.0 else d >= radius
    idx = np.flatnonzero(keep)
    return OutlierCandidateSet(idx, labels[idx].astype(np.int64), dist[idx], radii)


def _knn(tree: cKDTree, x: np.ndarray, rows: np.ndarray, k: int):
    """k nearest neighbors of ``x[rows]`` excluding the row itself."""
    d, nb = tree.query(x[rows], k=k + 1)
    d = np.atleast_2d(d)
    nb = np.atleast_2d(nb)
    out_d = np.empty((rows.size, k))
    out_nb = np.empty((rows.size, k), dtype=np.int64)
    for r, row in enumerate(rows):
        sel = nb[r] != row
        if sel.all():
            sel[-1] = False
        out_d[r] = d[r][sel][:k]
        out_nb[r] = nb[r][sel][:k]
    return out_d, out_nb


def lof_score(candidates, all_points: np.ndarray, k: int = 10) -> np.ndarray:
    """Classical LOF for the candidate rows, neighbors drawn from ``all_points``."""
    x = np.asarray(all_points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    cand = np.asarray(candidates.indices if isinstance(candidates, OutlierCandidateSet)
                      else candidates, dtype=np.int64)
    if k < 1 or k >= len(x):
        raise ContractError(f"LOF needs 1 <= k < number of points, got k={k}, n={len(x)}")
    if cand.size == 0:
        return np.empty(0)
    tree = cKDTree(x)
    knn_d, knn_nb = {}, {}

    def ensure(rows):
        todo = np.array(sorted(set(rows.tolist()) - knn_d.keys()), dtype=np.int64)
        if todo.size:
            d, nb = _knn(tree, x, todo, k)
            for r, row in enumerate(todo):
                knn_d[int(row)] = d[r]
                knn_nb[int(row)] = nb[r]

    ensure(cand)
    need_lrd = np.unique(np.concatenate([cand, np.concatenate([knn_nb[int(c)] for c in cand])]))
    ensure(need_lrd)
    ensure(np.unique(np.concatenate([knn_nb[int(p)] for p in need_lrd])))

    def lrd(p):
        nbrs = knn_nb[p]
        kdist = np.array([knn_d[int(o)][-1] for o in nbrs])
        reach = np.maximum(kdist, knn_d[p])
        return 1.0 / max(reach.mean(), DIST_FLOOR)

    lrds = {int(p): lrd(int(p)) for p in need_lrd}
    return np.array([np.mean([lrds[int(o)] for o in knn_nb[int(c)]]) / lrds[int(c)] for c in cand])


def lof_threshold(scores) -> float:
    s = np.asarray(scores, dtype=np.float64)
    return float(s.mean() + 4.0 * s.std())


def detect_outliers(scores) -> np.ndarray:
    """Positions whose score exceeds mean + 4 population SD (strictly)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ContractError("detect_outliers needs at least one score")
    return np.flatnonzero(s > lof_threshold(s))


def cluster_lof(points: np.ndarray, k: int = 10, eps: float | None = None, min_pts: int = 5):
    """Full pipeline on a point table. Returns (candidates, scores, flagged rows, threshold)."""
    z = zscore(points)
    labels = dbscan_cluster(z, eps=eps, min_pts=min_pts, standardize=False)
    cands = build_candidate_set(z, labels)
    if len(cands) == 0:
        return cands, np.empty(0), np.empty(0, dtype=np.int64), float("nan")
    scores = lof_score(cands, z, k=min(k, len(z) - 1))
    flagged = cands.indices[detect_outliers(scores)]
    return cands, scores, flagged, lof_threshold(scores)
