"""Client similarity from partial model weights, and clustering on top of it.

The server builds a K x K similarity matrix from each client's first/last
layer weights after one local epoch, picks the least similar pair of clients
as anchors, places every client at (similarity to anchor alpha, similarity to
anchor beta) and runs K-means on those points. The result is computed once per
run.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateVectorError, InvalidConfigError, ShapeError

METRICS = ("cosine", "dot")
CLUSTER_SPACES = ("embedding", "rows")


@dataclass(frozen=True)
class SimilarityMatrix:
    scores: np.ndarray
    row_sums: np.ndarray
    metric: str

    @property
    def size(self) -> int:
        return self.scores.shape[0]

    def off_diagonal(self) -> np.ndarray:
        return self.scores[~np.eye(self.size, dtype=bool)]


@dataclass(frozen=True)
class ClusterModel:
    labels: np.ndarray
    centroids: np.ndarray
    majority_cluster: int
    anchor_pair: tuple[int, int] | None = None
    points: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)


def build_similarity_matrix(vectors: Sequence[np.ndarray], metric: str = "cosine") -> SimilarityMatrix:
    if metric not in METRICS:
        raise InvalidConfigError(f"metric must be one of {METRICS}, got {metric!r}")
    if len(vectors) < 2:
        raise ShapeError(f"need at least 2 client vectors, got {len(vectors)}")
    lengths = {np.asarray(v).shape for v in vectors}
    if len(lengths) != 1 or len(next(iter(lengths))) != 1:
        raise ShapeError(f"client vectors must be 1-D and of equal length, got shapes {sorted(lengths)}")
    stacked = np.vstack([np.asarray(v, dtype=np.float64) for v in vectors])
    if metric == "cosine":
        norms = np.linalg.norm(stacked, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DegenerateVectorError(
                f"client {zero[0]} has an all-zero weight vector; cosine similarity undefined",
                int(zero[0]),
            )
        stacked = stacked / norms[:, None]
    scores = stacked @ stacked.T
    scores = 0.5 * (scores + scores.T)
    if metric == "cosine":
        np.fill_diagonal(scores, 1.0)
        np.clip(scores, -1.0, 1.0, out=scores)
    return SimilarityMatrix(scores, scores.sum(axis=1), metric)


def lowest_pair(matrix: SimilarityMatrix) -> tuple[int, int]:
    """Least similar pair (alpha < beta); ties go to the lexicographically smallest."""
    k = matrix.size
    if k < 2:
        raise ShapeError("need at least 2 clients")
    iu, ju = np.triu_indices(k, 1)
    # np.argmin picks the first minimum and triu_indices is ordered by (i, j)
    best = int(np.argmin(matrix.scores[iu, ju]))
    return int(iu[best]), int(ju[best])


def embed_clients(matrix: SimilarityMatrix, alpha: int, beta: int) -> np.ndarray:
    return np.column_stack([matrix.scores[:, alpha], matrix.scores[:, beta]])


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen]).min(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        else:
            # every point coincides with a chosen centre
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rest[rng.integers(rest.size)])
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def _repair_empty(points, labels, centroids, k):
    for cluster in range(k):
        if np.any(labels == cluster):
            continue
        counts = np.bincount(labels, minlength=k)
        dist = np.einsum("ij,ij->i", points - centroids[labels], points - centroids[labels])
        dist[counts[labels] <= 1] = -1.0
        far = int(np.argmax(dist))
        labels[far] = cluster
        centroids[cluster] = points[far]
    return labels


def kmeans_objective(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    diff = points - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 300,
    tol: float = 1e-10,
    history: list | None = None,
) -> ClusterModel:
    """Lloyd's algorithm from k-means++ seeding.

    Stops at an assignment fixpoint, when no centroid moves more than ``tol``,
    or after ``max_iters``. An empty cluster takes the point farthest from its
    centroid. If ``history`` is given, the objective after each iteration is
    appended to it.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise InvalidConfigError(f"cluster count k={k} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)
    labels = np.argmin(_sq_dists(points, centroids), axis=1)
    for _ in range(max_iters):
        labels = _repair_empty(points, labels, centroids, k)
        new_centroids = np.vstack([points[labels == c].mean(axis=0) for c in range(k)])
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if history is not None:
            history.append(kmeans_objective(points, labels, centroids))
        new_labels = np.argmin(_sq_dists(points, centroids), axis=1)
        if np.array_equal(new_labels, labels) or shift < tol:
            break
        labels = new_labels
    return ClusterModel(labels.astype(np.int64), centroids, majority_cluster(labels))


def majority_cluster(labels) -> int:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidConfigError("no labels")
    return int(np.argmax(np.bincount(labels)))


def cluster_clients(
    matrix: SimilarityMatrix, k: int, seed: int, space: str = "embedding"
) -> ClusterModel:
    """Anchor-pair embedding (default) or full similarity rows, then K-means."""
    if space not in CLUSTER_SPACES:
        raise InvalidConfigError(f"cluster space must be one of {CLUSTER_SPACES}, got {space!r}")
    alpha, beta = lowest_pair(matrix)
    points = embed_clients(matrix, alpha, beta) if space == "embedding" else matrix.scores
    model = kmeans(points, k, seed)
    return ClusterModel(model.labels, model.centroids, model.majority_cluster, (alpha, beta), points)


def matrix_to_csv(matrix: SimilarityMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    ids = [str(i) for i in range(matrix.size)]
    writer.writerow(["client"] + ids)
    for i, row in enumerate(matrix.scores):
        writer.writerow([ids[i]] + [repr(float(v)) for v in row])
    return buf.getvalue()


def embedding_to_csv(clusters: ClusterModel) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    dims = clusters.points.shape[1]
    axes = ["x", "y"] if dims == 2 else [f"d{j}" for j in range(dims)]
    writer.writerow(["client", *axes, "cluster"])
    for i, (pt, lab) in enumerate(zip(clusters.points, clusters.labels)):
        writer.writerow([i, *(repr(float(v)) for v in pt), int(lab)])
    return buf.getvalue()


def matrix_from_csv(text: str, metric: str = "cosine") -> SimilarityMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    scores = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return SimilarityMatrix(scores, scores.sum(axis=1), metric)


def client_vectors(
    client_data,
    global_model,
    rngs,
    epochs: int = 1,
    lr: float = 0.05,
    batch_size: int = 10,
    partial: bool = True,
) -> list[np.ndarray]:
    """Train every client from ``global_model`` and flatten the result."""
    from . import nn
    from .training import local_train

    flat = nn.flatten_partial if partial else nn.flatten
    vectors = []
    for data, rng in zip(client_data, rngs, strict=True):
        model, _ = local_train(data, global_model, epochs, lr, batch_size, rng)
        vectors.append(flat(model))
    return vectors


def bootstrap_similarity(
    client_data,
    global_model,
    rngs,
    *,
    epochs: int = 1,
    lr: float = 0.05,
    batch_size: int = 10,
    metric: str = "cosine",
    k: int = 3,
    seed: int = 0,
    space: str = "embedding",
    partial: bool = True,
) -> tuple[SimilarityMatrix, ClusterModel]:
    """One local epoch per client, similarity matrix, then clusters.

    Pure: battery charges and the once-per-run guarantee belong to the caller.
    """
    vectors = client_vectors(client_data, global_model, rngs, epochs, lr, batch_size, partial)
    matrix = build_similarity_matrix(vectors, metric)
    return matrix, cluster_clients(matrix, k, seed, space)
