"""
Clustering app services

DBSCAN over per-worker runtime windows, the fast/slow/outlier split the
controller hands to the scheduler, and the cluster-quality statistics used
by the cluster report.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.cluster import DBSCAN
from sklearn.metrics import adjusted_rand_score

from stats.services import MixtureModel, fit_mixture

logger = logging.getLogger(__name__)

NOISE = -1
DEFAULT_WIDENING_RETRIES = 3


class ClusteringError(Exception):
    """Domain-specific exception for clustering failures."""


class ClusteringDomainError(ClusteringError):
    """Input outside the domain of a clustering operation."""


class ClusteringDegenerateError(ClusteringError):
    """DBSCAN did not produce two usable clusters."""


class Role(str, Enum):
    FAST = 'fast'
    SLOW = 'slow'
    OUTLIER = 'outlier'


def _as_matrix(points) -> np.ndarray:
    matrix = np.asarray(points, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise ClusteringDomainError("Points must be scalars or equal-length feature vectors")
    return matrix


@dataclass(frozen=True)
class TraceWindow:
    """Per-worker runtime vectors over a run of consecutive iterations."""

    worker_ids: Tuple[str, ...]
    points: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self) -> None:
        matrix = _as_matrix(self.points)
        ids = tuple(str(worker_id) for worker_id in self.worker_ids)
        if len(set(ids)) != len(ids):
            raise ClusteringDomainError("Worker ids in a trace window must be unique")
        if matrix.shape[0] != len(ids):
            raise ClusteringDomainError(
                f"Window has {len(ids)} workers but {matrix.shape[0]} feature vectors"
            )
        if matrix.shape[1] < 1:
            raise ClusteringDomainError("Feature vectors need at least one runtime")
        object.__setattr__(self, 'worker_ids', ids)
        object.__setattr__(self, 'points', matrix)

    @property
    def dimension(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return len(self.worker_ids)


@dataclass(frozen=True)
class Clustering:
    labels: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, 'labels', tuple(int(label) for label in self.labels))

    @property
    def num_clusters(self) -> int:
        return len(self.cluster_ids)

    @property
    def cluster_ids(self) -> List[int]:
        return sorted({label for label in self.labels if label != NOISE})

    def indices(self, label: int) -> List[int]:
        return [index for index, value in enumerate(self.labels) if value == label]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class ClusterModel:
    """A labeled worker cluster with its fitted execution-time law."""

    cluster_id: int
    members: Tuple[str, ...]
    model: MixtureModel
    role: Role

    def __post_init__(self) -> None:
        if not self.members:
            raise ClusteringDomainError("A cluster needs at least one member")

    @property
    def size(self) -> int:
        return len(self.members)

    def to_dict(self) -> Dict[str, object]:
        return {
            'cluster_id': self.cluster_id,
            'role': self.role.value,
            'size': self.size,
            'members': list(self.members),
            'model': self.model.to_dict(),
        }


@dataclass(frozen=True)
class TwoClusterResult:
    fast: ClusterModel
    slow: ClusterModel
    outliers: Tuple[str, ...]
    clustering: Clustering
    eps: float
    min_pts: int

    def role_of(self, worker_id: str) -> Role:
        if worker_id in self.fast.members:
            return Role.FAST
        if worker_id in self.slow.members:
            return Role.SLOW
        return Role.OUTLIER


@dataclass(frozen=True)
class ClusterDistances:
    intra: float
    inter: float
    inter_defined: bool


# --------------------------------------------------------------------------- #
# DBSCAN and scores                                                           #
# --------------------------------------------------------------------------- #


def dbscan(points, eps: float, min_pts: int) -> Clustering:
    """
    Euclidean DBSCAN. A point's neighbourhood includes itself; border points
    go to the first cluster that reaches them when scanning points in index
    order, and cluster ids follow that scan.
    """
    matrix = _as_matrix(points)
    if matrix.shape[0] == 0:
        raise ClusteringDomainError("DBSCAN needs at least one point")
    if not eps > 0:
        raise ClusteringDomainError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ClusteringDomainError(f"min_pts must be >= 1, got {min_pts}")
    model = DBSCAN(eps=eps, min_samples=int(min_pts), metric='euclidean', algorithm='brute')
    model.fit(matrix)
    return Clustering(tuple(model.labels_))


def _labels(value) -> Tuple[int, ...]:
    return value.labels if isinstance(value, Clustering) else tuple(int(v) for v in value)


def adjusted_rand_index(a, b) -> float:
    """ARI over two labelings; noise is scored as its own label."""
    left, right = _labels(a), _labels(b)
    if len(left) != len(right):
        raise ClusteringDomainError(f"Labelings differ in length: {len(left)} vs {len(right)}")
    return float(adjusted_rand_score(left, right))


def all_to_all_ari(clusterings: Sequence[Clustering]) -> Optional[float]:
    pairs = list(itertools.combinations(clusterings, 2))
    if not pairs:
        return None
    return float(np.mean([adjusted_rand_index(a, b) for a, b in pairs]))


def consecutive_ari(clusterings: Sequence[Clustering]) -> Optional[float]:
    pairs = list(zip(clusterings, clusterings[1:]))
    if not pairs:
        return None
    return float(np.mean([adjusted_rand_index(a, b) for a, b in pairs]))


def cluster_distances(points, clustering: Clustering) -> ClusterDistances:
    """Mean intra-cluster diameter and mean centroid distance; noise excluded."""
    matrix = _as_matrix(points)
    if matrix.shape[0] != len(clustering):
        raise ClusteringDomainError("Clustering and points differ in length")
    ids = clustering.cluster_ids
    if not ids:
        raise ClusteringDomainError("Clustering has no non-noise cluster")

    diameters = []
    centroids = []
    for label in ids:
        members = matrix[clustering.indices(label)]
        diameters.append(float(pdist(members).max()) if len(members) > 1 else 0.0)
        centroids.append(members.mean(axis=0))

    if len(centroids) < 2:
        return ClusterDistances(intra=float(np.mean(diameters)), inter=0.0, inter_defined=False)
    inter = float(pdist(np.vstack(centroids)).mean())
    return ClusterDistances(intra=float(np.mean(diameters)), inter=inter, inter_defined=True)


# --------------------------------------------------------------------------- #
# Fast/slow split                                                             #
# --------------------------------------------------------------------------- #


def default_dbscan_params(window: TraceWindow) -> Tuple[float, int]:
    pooled_std = float(np.std(window.points))
    eps = 0.5 * pooled_std * math.sqrt(window.dimension)
    min_pts = max(2, math.ceil(0.05 * len(window)))
    return eps, min_pts


def _fit_cluster(
    label: int,
    indices: List[int],
    window: TraceWindow,
    role: Role,
    local_samples: Optional[Mapping[str, Sequence[float]]],
) -> ClusterModel:
    members = tuple(window.worker_ids[index] for index in indices)
    model = fit_mixture(window.points[indices].ravel())
    if local_samples:
        local_values = [value for member in members for value in local_samples.get(member, ())]
        if local_values:
            model = model.with_local(fit_mixture(local_values))
    return ClusterModel(cluster_id=label, members=members, model=model.monotone(), role=role)


def form_two_clusters(
    window: TraceWindow,
    eps: Optional[float] = None,
    min_pts: Optional[int] = None,
    local_samples: Optional[Mapping[str, Sequence[float]]] = None,
) -> TwoClusterResult:
    """
    Split workers into the fast and slow clusters of the sync game.

    The two largest DBSCAN clusters play (ties go to the lower mean runtime);
    noise and every other cluster become outliers. ``local_samples`` maps a
    worker id to observed local-task durations and, when given, adds the
    local components to each fitted model.
    """
    if len(window) < 2:
        raise ClusteringDomainError("Need at least two workers to form clusters")
    default_eps, default_min_pts = default_dbscan_params(window)
    eps = default_eps if eps is None else eps
    min_pts = default_min_pts if min_pts is None else min_pts
    if not eps > 0:
        raise ClusteringDegenerateError("Runtimes carry no spread; eps collapsed to 0")

    clustering = dbscan(window.points, eps, min_pts)
    if clustering.num_clusters < 2:
        raise ClusteringDegenerateError(
            f"DBSCAN formed {clustering.num_clusters} cluster(s) with eps={eps:.4f}, min_pts={min_pts}"
        )

    summaries = []
    for label in clustering.cluster_ids:
        indices = clustering.indices(label)
        summaries.append((label, indices, float(window.points[indices].mean())))

    kept = sorted(summaries, key=lambda item: (-len(item[1]), item[2], item[0]))[:2]
    fast_stat, slow_stat = sorted(kept, key=lambda item: (item[2], item[0]))
    kept_labels = {fast_stat[0], slow_stat[0]}
    outliers = tuple(
        worker_id
        for worker_id, label in zip(window.worker_ids, clustering.labels)
        if label not in kept_labels
    )

    fast = _fit_cluster(fast_stat[0], fast_stat[1], window, Role.FAST, local_samples)
    slow = _fit_cluster(slow_stat[0], slow_stat[1], window, Role.SLOW, local_samples)
    logger.debug(
        "Formed clusters fast=%d slow=%d outliers=%d (eps=%.4f, min_pts=%d)",
        fast.size,
        slow.size,
        len(outliers),
        eps,
        min_pts,
    )
    return TwoClusterResult(
        fast=fast,
        slow=slow,
        outliers=outliers,
        clustering=clustering,
        eps=eps,
        min_pts=min_pts,
    )


def form_two_clusters_widening(
    window: TraceWindow,
    eps: Optional[float] = None,
    min_pts: Optional[int] = None,
    local_samples: Optional[Mapping[str, Sequence[float]]] = None,
    retries: int = DEFAULT_WIDENING_RETRIES,
) -> TwoClusterResult:
    """``form_two_clusters`` that doubles eps up to ``retries`` times."""
    current = default_dbscan_params(window)[0] if eps is None else eps
    attempt = 0
    while True:
        try:
            return form_two_clusters(window, current, min_pts, local_samples)
        except ClusteringDegenerateError as exc:
            if attempt >= retries:
                raise
            attempt += 1
            logger.warning("Clustering degenerate (%s); widening eps to %.4f", exc, current * 2)
            current *= 2


# --------------------------------------------------------------------------- #
# Cluster-quality report                                                      #
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ClusterQuality:
    k: int
    windows: int
    ari_all_to_all: Optional[float]
    ari_consecutive: Optional[float]
    intra: Optional[float]
    inter: Optional[float]


def cluster_with_k(window: TraceWindow, k: int, min_pts: Optional[int] = None) -> Optional[Clustering]:
    """Scan eps from tight to loose and return the first clustering with exactly k clusters."""
    base = float(np.std(window.points)) * math.sqrt(window.dimension)
    if base == 0:
        return None
    min_pts = default_dbscan_params(window)[1] if min_pts is None else min_pts
    for multiplier in np.geomspace(0.02, 2.0, 60):
        clustering = dbscan(window.points, base * float(multiplier), min_pts)
        if clustering.num_clusters == k:
            return clustering
    return None


def sliding_windows(worker_ids: Sequence[str], runtimes: np.ndarray, size: int, overlap: int) -> List[TraceWindow]:
    if size < 1 or not 0 <= overlap < size:
        raise ClusteringDomainError(f"Invalid window size {size} / overlap {overlap}")
    step = size - overlap
    length = runtimes.shape[1]
    return [
        TraceWindow(tuple(worker_ids), runtimes[:, start:start + size])
        for start in range(0, length - size + 1, step)
    ]


def cluster_quality_report(
    worker_ids: Sequence[str],
    runtimes: np.ndarray,
    window: int,
    overlap: int,
    ks: Sequence[int] = (2, 3, 4),
) -> List[ClusterQuality]:
    """Per-k ARI stability and intra/inter distances across sliding windows."""
    windows = sliding_windows(worker_ids, np.asarray(runtimes, dtype=float), window, overlap)
    rows = []
    for k in ks:
        found = []
        distances = []
        for trace_window in windows:
            clustering = cluster_with_k(trace_window, k)
            if clustering is None:
                continue
            found.append(clustering)
            distances.append(cluster_distances(trace_window.points, clustering))
        rows.append(
            ClusterQuality(
                k=k,
                windows=len(found),
                ari_all_to_all=all_to_all_ari(found),
                ari_consecutive=consecutive_ari(found),
                intra=float(np.mean([d.intra for d in distances])) if distances else None,
                inter=float(np.mean([d.inter for d in distances])) if distances else None,
            )
        )
        logger.info("k=%d clustered %d/%d windows", k, len(found), len(windows))
    return rows
