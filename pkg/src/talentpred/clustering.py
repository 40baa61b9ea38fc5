"""Clusterers used to auto-label award embeddings.

Agglomerative clustering (Ward and average linkage) is the default labeler;
K-Means, Mini-Batch K-Means, DBSCAN and a diagonal Gaussian mixture are kept
for comparison runs. All distances are Euclidean and ties go to the lowest
index so results depend only on (points, params, seed).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DomainError
from .talent import N_TYPES, TALENT_TYPES, TalentType

log = logging.getLogger(__name__)

ALGORITHMS = ("ward", "average", "kmeans", "minibatch_kmeans", "dbscan", "gmm")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    history: List[float] = field(default_factory=list)
    extra: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)


@dataclass
class ClusterParams:
    algorithm: str = "ward"
    k: int = N_TYPES
    eps: float = 0.5
    min_points: int = 5
    batch_size: int = 64
    max_iter: int = 300
    tol: float = 1e-6
    seed: int = 0

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown clustering algorithm {self.algorithm!r}")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.min_points < 1:
            raise ConfigError("min_points must be at least 1")


def _points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DomainError("points must be an n x d matrix")
    return x


def sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _relabel(raw: np.ndarray) -> np.ndarray:
    """Dense ids in order of first appearance; negative ids stay -1."""
    out = np.full(raw.shape, -1, dtype=np.int64)
    seen: Dict[int, int] = {}
    for i, r in enumerate(raw.tolist()):
        if r < 0:
            continue
        if r not in seen:
            seen[r] = len(seen)
        out[i] = seen[r]
    return out


# ------------------------------------------------------------ agglomerative

def agglomerative(points, k: int, linkage: str = "ward") -> ClusterAssignment:
    """Bottom-up merging with Lance-Williams distance updates.

    Ward runs on squared Euclidean distances, average linkage on plain
    Euclidean distances. Each merge picks the lexicographically smallest
    (i, j) pair among those at minimum distance, where a cluster is indexed
    by its smallest member.
    """
    x = _points(points)
    n = x.shape[0]
    if k < 1 or k > n:
        raise DomainError(f"cannot form {k} clusters from {n} points")
    if linkage not in ("ward", "average"):
        raise ConfigError(f"unknown linkage {linkage!r}")
    D = sq_dists(x, x)
    if linkage == "average":
        D = np.sqrt(D)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    member_of = np.arange(n)
    nn = np.argmin(D, axis=1)
    nd = D[np.arange(n), nn]
    merges = []
    for _ in range(n - k):
        i = int(np.argmin(nd))
        j = int(nn[i])
        a, b = (i, j) if i < j else (j, i)
        d_ab = D[a, b]
        merges.append((a, b, float(d_ab)))
        na, nb = size[a], size[b]
        if linkage == "ward":
            nk = size
            new = ((na + nk) * D[a] + (nb + nk) * D[b] - nk * d_ab) / (na + nb + nk)
        else:
            new = (na * D[a] + nb * D[b]) / (na + nb)
        new[~active] = np.inf
        new[a] = np.inf
        new[b] = np.inf
        D[a, :] = new
        D[:, a] = new
        D[b, :] = np.inf
        D[:, b] = np.inf
        size[a] = na + nb
        active[b] = False
        member_of[member_of == b] = a
        nd[b] = np.inf
        # rows whose cached neighbour vanished or changed need a rescan
        stale = np.nonzero(active & ((nn == a) | (nn == b)))[0]
        for r in stale:
            nn[r] = int(np.argmin(D[r]))
            nd[r] = D[r, nn[r]]
        better = active & ((new < nd) | ((new == nd) & (a < nn)))
        better[a] = False
        nn[better] = a
        nd[better] = new[better]
        if active[a]:
            nn[a] = int(np.argmin(D[a]))
            nd[a] = D[a, nn[a]]
    labels = _relabel(member_of)
    return ClusterAssignment(labels, k, extra={"merges": merges})


# ------------------------------------------------------------------ k-means

def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    closest = sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def inertia(x: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    return float(((x - centers[labels]) ** 2).sum())


def kmeans(points, k: int, params: Optional[ClusterParams] = None) -> ClusterAssignment:
    """Lloyd iterations from k-means++ seeding (or mini-batch updates).

    ``history`` records the inertia after every Lloyd iteration.
    """
    params = params or ClusterParams(algorithm="kmeans", k=k)
    x = _points(points)
    n = x.shape[0]
    if k < 1 or k > n:
        raise DomainError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(params.seed)
    centers = kmeans_pp(x, k, rng)
    if params.algorithm == "minibatch_kmeans":
        return _minibatch(x, centers, params, rng)
    labels = np.argmin(sq_dists(x, centers), axis=1)
    history = [inertia(x, centers, labels)]
    for _ in range(params.max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point worst served by its centre
                far = int(np.argmax(((x - centers[labels]) ** 2).sum(1)))
                centers[c] = x[far]
                labels[far] = c
        new = np.argmin(sq_dists(x, centers), axis=1)
        history.append(inertia(x, centers, new))
        if np.array_equal(new, labels):
            break
        labels = new
    return ClusterAssignment(labels, k, history, {"centers": centers})


def _minibatch(x, centers, params: ClusterParams, rng) -> ClusterAssignment:
    n, k = x.shape[0], centers.shape[0]
    counts = np.zeros(k)
    history = []
    b = min(params.batch_size, n)
    for _ in range(params.max_iter):
        idx = rng.choice(n, size=b, replace=False)
        batch = x[idx]
        near = np.argmin(sq_dists(batch, centers), axis=1)
        old = centers.copy()
        for p, c in zip(batch, near):
            counts[c] += 1
            centers[c] += (p - centers[c]) / counts[c]
        labels = np.argmin(sq_dists(x, centers), axis=1)
        history.append(inertia(x, centers, labels))
        if np.abs(centers - old).max() < params.tol:
            break
    labels = np.argmin(sq_dists(x, centers), axis=1)
    return ClusterAssignment(labels, k, history, {"centers": centers})


# ------------------------------------------------------------------- DBSCAN

def dbscan(points, eps: float, min_points: int, distances=None) -> ClusterAssignment:
    """Density clustering; noise points get label -1.

    ``min_points`` counts the point itself, so ``min_points=1`` makes every
    point a core point. ``distances`` may carry a precomputed Euclidean
    distance matrix.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if min_points < 1:
        raise ConfigError("min_points must be at least 1")
    x = _points(points)
    n = x.shape[0]
    D = np.sqrt(sq_dists(x, x)) if distances is None else distances
    core = (D <= eps).sum(axis=1) >= min_points
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = [i]
        head = 0
        while head < len(queue):
            p = queue[head]
            head += 1
            if not core[p]:
                continue
            fresh = np.nonzero((D[p] <= eps) & (labels == -1))[0]
            labels[fresh] = cluster
            queue.extend(fresh.tolist())
        cluster += 1
    return ClusterAssignment(labels, cluster)


def dbscan_sweep(points, target_k: int = N_TYPES, min_points: int = 5,
                 candidates: Optional[Sequence[float]] = None) -> ClusterAssignment:
    """Try a ladder of eps values and keep the run whose cluster count is
    closest to ``target_k``; fewer noise points, then smaller eps, break ties.
    """
    x = _points(points)
    D = np.sqrt(sq_dists(x, x))
    if candidates is None:
        upper = D[np.triu_indices(len(x), 1)]
        lo = max(float(np.quantile(upper, 0.001)), 1e-9)
        hi = max(float(np.quantile(upper, 0.5)), lo * 2)
        candidates = np.geomspace(lo, hi, 30)
    best = None
    for eps in candidates:
        res = dbscan(x, float(eps), min_points, distances=D)
        key = (abs(res.k - target_k), int((res.labels < 0).sum()), float(eps))
        if best is None or key < best[0]:
            best = (key, res, float(eps))
    res = best[1]
    res.extra["eps"] = best[2]
    return res


# ----------------------------------------------------------- Gaussian mixture

def _diag_log_density(x, means, variances):
    # (n, k) log N(x | mean_k, diag(var_k))
    diff2 = (x[:, None, :] - means[None]) ** 2
    return -0.5 * (np.log(2 * np.pi * variances)[None] + diff2 / variances[None]).sum(-1)


def gaussian_mixture(points, k: int, params: Optional[ClusterParams] = None,
                     var_floor: float = 1e-6) -> ClusterAssignment:
    """Diagonal-covariance EM. ``history`` holds the mean log-likelihood
    before each M-step; ``extra['responsibilities']`` the final posteriors."""
    params = params or ClusterParams(algorithm="gmm", k=k)
    x = _points(points)
    n, d = x.shape
    if k < 1 or k > n:
        raise DomainError(f"cannot fit {k} components to {n} points")
    rng = np.random.default_rng(params.seed)
    means = kmeans_pp(x, k, rng)
    variances = np.tile(np.maximum(x.var(axis=0), var_floor), (k, 1))
    weights = np.full(k, 1.0 / k)
    history: List[float] = []
    for _ in range(params.max_iter):
        logp = _diag_log_density(x, means, variances) + np.log(weights)[None]
        norm = logsumexp(logp, axis=1)
        history.append(float(norm.mean()))
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        variances = (resp.T @ (x * x)) / nk[:, None] - means**2
        variances = np.maximum(variances, var_floor)
        if len(history) > 1 and abs(history[-1] - history[-2]) < params.tol:
            break
    logp = _diag_log_density(x, means, variances) + np.log(weights)[None]
    norm = logsumexp(logp, axis=1)
    history.append(float(norm.mean()))
    resp = np.exp(logp - norm[:, None])
    labels = np.argmax(resp, axis=1)
    return ClusterAssignment(labels, k, history, {
        "responsibilities": resp, "means": means, "variances": variances, "weights": weights,
    })


# ----------------------------------------------------------------- dispatch

def cluster(points, params: ClusterParams) -> ClusterAssignment:
    params.validate()
    algo = params.algorithm
    if algo in ("ward", "average"):
        return agglomerative(points, params.k, algo)
    if algo in ("kmeans", "minibatch_kmeans"):
        return kmeans(points, params.k, params)
    if algo == "gmm":
        return gaussian_mixture(points, params.k, params)
    return dbscan_sweep(points, params.k, params.min_points)


# -------------------------------------------------------- cluster -> type

def map_clusters_to_types(assign: ClusterAssignment, gold=None,
                          mapping_file=None) -> Dict[int, TalentType]:
    """Name each cluster with a talent type.

    With gold labels, every injective cluster-to-type assignment is scored by
    the number of agreeing points (noise excluded) and the best one wins;
    ties go to the first assignment in lexicographic order.
    """
    labels = assign.labels
    clusters = sorted(int(c) for c in np.unique(labels) if c >= 0)
    if len(clusters) > N_TYPES:
        raise DomainError(f"{len(clusters)} clusters cannot map onto {N_TYPES} talent types")
    if gold is None:
        if mapping_file is None:
            raise ConfigError("no gold labels and no mapping file supplied")
        mapping = read_mapping(mapping_file)
        missing = [c for c in clusters if c not in mapping]
        if missing:
            raise ConfigError(f"mapping file does not cover clusters {missing}")
        return mapping
    gold_idx = np.array([TalentType.parse(g).slot for g in gold])
    keep = labels >= 0
    table = np.zeros((len(clusters), N_TYPES), dtype=np.int64)
    pos = {c: i for i, c in enumerate(clusters)}
    for c, g in zip(labels[keep].tolist(), gold_idx[keep].tolist()):
        table[pos[c], g] += 1
    best, best_score = None, -1
    rows = np.arange(len(clusters))
    for perm in itertools.permutations(range(N_TYPES), len(clusters)):
        score = int(table[rows, list(perm)].sum())
        if score > best_score:
            best, best_score = perm, score
    return {c: TALENT_TYPES[t] for c, t in zip(clusters, best)}


def mapping_agreement(assign: ClusterAssignment, gold, mapping: Dict[int, TalentType]) -> float:
    keep = assign.labels >= 0
    if not keep.any():
        return 0.0
    hits = [mapping[int(c)] == TalentType.parse(g)
            for c, g, k in zip(assign.labels, gold, keep) if k]
    return float(np.mean(hits))


def read_mapping(path) -> Dict[int, TalentType]:
    mapping = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ConfigError(f"mapping line {n}: expected cluster_id<TAB>talent_type")
        try:
            mapping[int(parts[0])] = TalentType.parse(parts[1])
        except ValueError as exc:
            raise ConfigError(f"mapping line {n}: {exc}") from None
    return mapping


def write_mapping(path, mapping: Dict[int, TalentType]) -> None:
    lines = [f"{c}\t{t.value}" for c, t in sorted(mapping.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
