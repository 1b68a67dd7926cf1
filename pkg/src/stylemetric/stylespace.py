"""Style-space tooling: batch embedding, k-means, representatives, navigation.

The embedding matrix is produced by the same row-by-row projection used by
the distance functions, so squared Euclidean distances between its rows equal
the low-rank metric exactly.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .catalog import DataError, FeatureMatrix, MetricModel
from .metric import _rowwise_sqnorm, project_rows

_ASSIGN_BLOCK = 2048


@dataclass
class StyleEmbedding:
    """Per-item style vectors s_i = x_i Y, one row per item."""

    item_ids: list
    vectors: np.ndarray  # (N, K) float64

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.item_ids) != self.vectors.shape[0]:
            raise DataError("embedding requires one vector row per item id")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("non-finite style vector")
        self._index = {item: i for i, item in enumerate(self.item_ids)}

    @property
    def n_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise DataError(f"unknown item id: {item_id!r}") from None


@dataclass
class Clustering:
    k: int
    centroids: np.ndarray  # (k, K)
    assignment: np.ndarray  # (N,) int64
    objective: float
    objective_trace: list = field(default_factory=list)


def embed_all(model: MetricModel, features: FeatureMatrix) -> StyleEmbedding:
    """Project every item into style space under a low-rank model."""
    if model.kind == "weighted_nn":
        raise DataError("weighted_nn models have no style-space transform")
    X = features.normalized(model.feature_norm).values
    return StyleEmbedding(features.item_ids, project_rows(X, model.transform))


def _nearest(S, centroids):
    """(assignment, squared distance to own centroid), ties to the lowest index."""
    n = S.shape[0]
    assign = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, _ASSIGN_BLOCK):
        stop = min(start + _ASSIGN_BLOCK, n)
        block = S[start:stop]
        d2 = np.empty((stop - start, len(centroids)))
        for c in range(len(centroids)):
            d2[:, c] = _rowwise_sqnorm(block - centroids[c])
        assign[start:stop] = np.argmin(d2, axis=1)
        dist[start:stop] = d2[np.arange(stop - start), assign[start:stop]]
    return assign, dist


def _seed_centroids(S, k, rng, seeding):
    n = S.shape[0]
    if seeding == "random":
        return S[np.sort(rng.choice(n, size=k, replace=False))].copy()
    if seeding != "weighted":
        raise DataError(f"unknown seeding mode: {seeding!r}")
    # Squared-distance-weighted seeding: each new centroid is drawn with
    # probability proportional to the distance to the nearest one chosen so
    # far, which spreads the seeds without an exhaustive search.
    chosen = [int(rng.integers(0, n))]
    best = _rowwise_sqnorm(S - S[chosen[0]])
    while len(chosen) < k:
        total = float(np.sum(best))
        if total <= 0.0:
            for idx in range(n):
                if idx not in chosen:
                    chosen.append(idx)
                    break
            else:
                raise DataError("fewer distinct points than clusters")
        else:
            pick = int(rng.choice(n, p=best / total))
            chosen.append(pick)
        best = np.minimum(best, _rowwise_sqnorm(S - S[chosen[-1]]))
    return S[chosen].copy()


def kmeans(emb: StyleEmbedding, k: int, seed: int, max_iter: int = 100,
           seeding: str = "weighted") -> Clustering:
    """Lloyd's algorithm over style vectors.

    Terminates when the assignment stops changing or after max_iter rounds.
    Empty clusters are repaired by moving in the point currently farthest
    from its centroid, which cannot increase the objective. The recorded
    objective trace is non-increasing.
    """
    S = emb.vectors
    n = emb.n_items
    if k < 1:
        raise DataError("k must be >= 1")
    if k > n:
        raise DataError(f"k={k} exceeds the {n} available items")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(S, k, rng, seeding)
    assign = np.full(n, -1, dtype=np.int64)
    trace = []
    for _ in range(max(1, max_iter)):
        new_assign, dist = _nearest(S, centroids)
        moved = np.zeros(n, dtype=bool)
        for cluster in range(k):
            if np.any(new_assign == cluster):
                continue
            # Empty cluster: seize the point farthest from its centroid. Its
            # distance drops to zero and no other term changes, so the
            # objective cannot increase.
            avail = ~moved
            pool = np.flatnonzero(avail & (dist == dist[avail].max()))
            far = int(pool[0])
            new_assign[far] = cluster
            dist[far] = 0.0
            moved[far] = True
            centroids[cluster] = S[far]
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for cluster in range(k):
            members = np.flatnonzero(assign == cluster)
            centroids[cluster] = np.mean(S[members], axis=0)
        trace.append(float(np.sum(_rowwise_sqnorm(S - centroids[assign]))))
    objective = float(np.sum(_rowwise_sqnorm(S - centroids[assign])))
    return Clustering(k, centroids, assign, objective, trace)


def representatives(clustering: Clustering, emb: StyleEmbedding, m: int) -> dict:
    """Per cluster, the m member ids closest to the centroid.

    Ordered by ascending distance; ties break on item id.
    """
    if m < 1:
        raise DataError("m must be >= 1")
    out = {}
    for cluster in range(clustering.k):
        members = np.flatnonzero(clustering.assignment == cluster)
        d = _rowwise_sqnorm(emb.vectors[members] - clustering.centroids[cluster])
        ranked = sorted(zip(d, (emb.item_ids[i] for i in members)),
                        key=lambda pair: (pair[0], pair[1]))
        out[cluster] = [item for _, item in ranked[:m]]
    return out


def _knn_graph(S, knn_k):
    """Symmetric kNN adjacency: lists of (neighbor, squared distance)."""
    n = S.shape[0]
    k = min(knn_k, n - 1)
    adjacency = [dict() for _ in range(n)]
    for i in range(n):
        d2 = _rowwise_sqnorm(S - S[i])
        d2[i] = np.inf
        order = np.argsort(d2, kind="stable")[:k]
        for j in order:
            w = float(d2[j])
            adjacency[i][int(j)] = w
            adjacency[int(j)][i] = w
    return adjacency


def navigate(emb: StyleEmbedding, source: str, target: str, knn_k: int = 10,
             item_filter=None):
    """Minimum-cost path between two items on the symmetric kNN style graph.

    Edge weights are squared style distances; the search is Dijkstra with a
    (distance, node) heap so ties resolve by node index. item_filter, when
    given, restricts the graph to that subset of item ids (source and target
    included). Returns (path item ids, total cost, per-hop costs).
    """
    if source == target:
        raise DataError("source and target must differ")
    if knn_k < 1:
        raise DataError("knn_k must be >= 1")
    if item_filter is not None:
        keep = sorted(set(item_filter) | {source, target})
        rows = [emb.index_of(i) for i in keep]
        emb = StyleEmbedding(keep, emb.vectors[rows])
    src, dst = emb.index_of(source), emb.index_of(target)
    adjacency = _knn_graph(emb.vectors, knn_k)
    dist = np.full(emb.n_items, np.inf)
    prev = np.full(emb.n_items, -1, dtype=np.int64)
    dist[src] = 0.0
    heap = [(0.0, src)]
    done = np.zeros(emb.n_items, dtype=bool)
    while heap:
        d, node = heapq.heappop(heap)
        if done[node]:
            continue
        done[node] = True
        if node == dst:
            break
        for nbr, w in sorted(adjacency[node].items()):
            nd = d + w
            if nd < dist[nbr]:
                dist[nbr] = nd
                prev[nbr] = node
                heapq.heappush(heap, (nd, nbr))
    if not done[dst]:
        raise DataError(
            f"no path from {source!r} to {target!r} in the {knn_k}-nearest-neighbor "
            "graph; a larger knn_k may connect it"
        )
    path_idx = [dst]
    while path_idx[-1] != src:
        path_idx.append(int(prev[path_idx[-1]]))
    path_idx.reverse()
    hops = [adjacency[a][b] for a, b in zip(path_idx, path_idx[1:])]
    return [emb.item_ids[i] for i in path_idx], float(dist[dst]), hops


def save_embedding(emb: StyleEmbedding, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#style {emb.n_items} {emb.rank}\n")
        for item, row in zip(emb.item_ids, emb.vectors):
            f.write(item + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def load_embedding(path) -> StyleEmbedding:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 3 or header[0] != "#style":
            raise DataError(f"{path}:1: expected '#style <N> <K>' header")
        n, k = int(header[1]), int(header[2])
        item_ids = []
        rows = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) - 1 != k:
                raise DataError(f"{path}:{lineno}: expected {k} coordinates")
            item_ids.append(fields[0])
            rows.append([float(v) for v in fields[1:]])
    if len(item_ids) != n:
        raise DataError(f"{path}: header says {n} items, file has {len(item_ids)}")
    return StyleEmbedding(item_ids, np.array(rows, dtype=np.float64).reshape(n, k))


def save_clustering(clustering: Clustering, emb: StyleEmbedding, path):
    with open(path, "w", encoding="utf-8") as f:
        for item, cluster in zip(emb.item_ids, clustering.assignment):
            f.write(f"{item}\t{int(cluster)}\n")
        for idx, row in enumerate(clustering.centroids):
            f.write(f"#centroid\t{idx}\t" + "\t".join(repr(float(v)) for v in row) + "\n")
        f.write(f"#objective\t{repr(float(clustering.objective))}\n")


def save_path(path_items, total_cost, hops, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#total\t{repr(float(total_cost))}\n")
        f.write(f"{path_items[0]}\t0.0\n")
        for item, hop in zip(path_items[1:], hops):
            f.write(f"{item}\t{repr(float(hop))}\n")
