"""Cosine-distance kernels and density-based clustering.

Everything here is a pure function of its inputs. The clustering entry point
used by the rest of the pipeline is :func:`cluster_with_fallback`, which runs
hierarchical density clustering and falls back to plain density clustering
when the hierarchy labels everything as noise (the single-identity failure
mode) or when there are too few points for a hierarchy at all.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, TooFewPoints, ZeroVector

INFTY = float("inf")


# --- distance kernels --------------------------------------------------------

def cosine_distance(a, b) -> float:
    """1 - cos(angle between a and b); range [0, 2].

    Identical vectors give exactly 0.0, not a rounding residue; downstream
    clustering relies on duplicate points being at distance zero.
    """
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatch(va.shape[0], vb.shape[0])
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine distance undefined for zero vectors")
    if np.array_equal(va, vb):
        return 0.0
    sim = float(np.dot(va, vb) / (na * nb))
    return 1.0 - max(-1.0, min(1.0, sim))


@dataclass
class CondensedDistanceMatrix:
    """Upper-triangular pairwise distances in row-major order.

    ``entries[k]`` holds d(i, j) for i < j with
    k = n*i - i*(i+1)/2 + (j - i - 1).
    """

    n: int
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        expected = self.n * (self.n - 1) // 2
        if self.entries.shape != (expected,):
            raise ValueError(f"expected {expected} condensed entries, got {self.entries.shape}")

    def index(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.n * i - i * (i + 1) // 2 + (j - i - 1)

    def get(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        return float(self.entries[self.index(i, j)])

    def to_square(self) -> np.ndarray:
        square = np.zeros((self.n, self.n), dtype=np.float64)
        k = 0
        for i in range(self.n - 1):
            count = self.n - i - 1
            square[i, i + 1 :] = self.entries[k : k + count]
            k += count
        return square + square.T


def distance_matrix(points, workers: int = 1) -> CondensedDistanceMatrix:
    """Pairwise cosine distances over a point set.

    Rows are computed one matrix-vector product at a time so the result is
    bit-identical no matter how the rows are partitioned across workers.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch("uniform", "ragged", "distance_matrix input")
    n = arr.shape[0]
    if n < 2:
        raise TooFewPoints(n, 2)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("distance_matrix input contains a zero vector")
    unit = arr / norms[:, None]

    entries = np.empty(n * (n - 1) // 2, dtype=np.float64)
    offsets = np.concatenate(([0], np.cumsum(np.arange(n - 1, 0, -1))))

    def fill_rows(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            sims = unit[i + 1 :] @ unit[i]
            np.clip(sims, -1.0, 1.0, out=sims)
            entries[offsets[i] : offsets[i] + (n - i - 1)] = 1.0 - sims

    if workers <= 1 or n < 4:
        fill_rows(0, n - 1)
    else:
        bounds = np.linspace(0, n - 1, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(fill_rows, int(bounds[w]), int(bounds[w + 1]))
                for w in range(workers)
            ]
            for future in futures:
                future.result()

    # bitwise-identical points sit at distance exactly 0, not a rounding
    # residue; duplicate groups then stay atomic under single linkage
    matrix = CondensedDistanceMatrix(n, entries)
    groups: dict[bytes, list[int]] = {}
    for i in range(n):
        groups.setdefault(unit[i].tobytes(), []).append(i)
    for members in groups.values():
        for a_idx, i in enumerate(members):
            for j in members[a_idx + 1 :]:
                entries[matrix.index(i, j)] = 0.0
    return matrix


# --- labels ------------------------------------------------------------------

@dataclass
class ClusterLabels:
    """One label per point; -1 is noise, clusters are numbered 0..k-1."""

    labels: np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size and self.labels.max() >= 0 else 0

    @property
    def n_noise(self) -> int:
        return int(np.sum(self.labels == -1))

    def all_noise(self) -> bool:
        return bool(np.all(self.labels == -1))

    def to_csv(self, path, point_ids=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("point_id,label\n")
            for idx, label in enumerate(self.labels):
                point_id = point_ids[idx] if point_ids is not None else idx
                fh.write(f"{point_id},{int(label)}\n")


def labels_from_csv(path) -> tuple[list[str], ClusterLabels]:
    ids: list[str] = []
    values: list[int] = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            line = line.strip()
            if not line:
                continue
            point_id, label = line.rsplit(",", 1)
            ids.append(point_id)
            values.append(int(label))
    return ids, ClusterLabels(np.asarray(values, dtype=np.int64))


@dataclass(frozen=True)
class HdbscanParams:
    min_cluster_size: int = 2
    min_samples: int | None = None

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be >= 2")
        if self.min_samples is not None and self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")

    @property
    def effective_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_cluster_size


@dataclass(frozen=True)
class DbscanConfig:
    # eps=None selects the k-distance heuristic at clustering time
    eps: float | None = None
    min_pts: int = 2


# --- hierarchical density clustering ------------------------------------------

def _core_distances(m: CondensedDistanceMatrix, min_samples: int) -> np.ndarray:
    """Distance from each point to its min_samples-th neighbor, self counted."""
    square = m.to_square()
    k = min(min_samples, m.n)
    # row includes the zero self-distance, so index k-1 is the k-th neighbor
    return np.sort(square, axis=1)[:, k - 1]


def _mutual_reachability(m: CondensedDistanceMatrix, core: np.ndarray) -> np.ndarray:
    n = m.n
    mr = np.empty_like(m.entries)
    k = 0
    for i in range(n - 1):
        count = n - i - 1
        block = m.entries[k : k + count]
        mr[k : k + count] = np.maximum(np.maximum(core[i], core[i + 1 :]), block)
        k += count
    return mr


def _prim_mst(n: int, weights: CondensedDistanceMatrix | np.ndarray):
    """Exact MST on the dense weight matrix.

    Returns (n-1) edges as (i, j, w) with i < j. On equal weights the edge
    with the smaller (i, j) pair wins, which pins down the tree (and hence
    the whole hierarchy) for inputs with duplicate distances.
    """
    if isinstance(weights, CondensedDistanceMatrix):
        square = weights.to_square()
    else:
        square = weights
    in_tree = np.zeros(n, dtype=bool)
    best_w = np.full(n, INFTY)
    best_parent = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    best_w[1:] = square[0, 1:]
    best_parent[1:] = 0

    edges = []
    for _ in range(n - 1):
        masked = np.where(in_tree, INFTY, best_w)
        w_min = masked.min()
        candidates = np.flatnonzero(masked == w_min)
        # lexicographic tie-break on the (i, j) pair the edge would add
        best_v = candidates[0]
        best_pair = (
            min(best_parent[best_v], best_v),
            max(best_parent[best_v], best_v),
        )
        for v in candidates[1:]:
            pair = (min(best_parent[v], v), max(best_parent[v], v))
            if pair < best_pair:
                best_pair, best_v = pair, v
        v = int(best_v)
        in_tree[v] = True
        edges.append((int(best_pair[0]), int(best_pair[1]), float(best_w[v])))

        row = square[v]
        update = (~in_tree) & (row < best_w)
        best_w[update] = row[update]
        best_parent[update] = v
        # on exact weight ties prefer the lexicographically smaller pair
        tie = (~in_tree) & (row == best_w) & (best_parent != v)
        for u in np.flatnonzero(tie):
            old = (min(best_parent[u], u), max(best_parent[u], u))
            new = (min(v, u), max(v, u))
            if new < old:
                best_parent[u] = v
    return edges


def _single_linkage(n: int, edges) -> list[tuple[int, int, float, int]]:
    """Union MST edges in (weight, i, j) order into a dendrogram.

    Node ids: points are 0..n-1, merge k creates node n+k. Each entry is
    (left_node, right_node, merge_distance, merged_size).
    """
    order = sorted(range(len(edges)), key=lambda k: (edges[k][2], edges[k][0], edges[k][1]))
    parent = list(range(2 * n - 1))
    node_of = list(range(n))
    size = [1] * n

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    merges: list[tuple[int, int, float, int]] = []
    for k in order:
        i, j, w = edges[k]
        ri, rj = find(i), find(j)
        left, right = node_of[ri], node_of[rj]
        if left > right:
            left, right = right, left
        new_id = n + len(merges)
        merged_size = size[ri] + size[rj]
        merges.append((left, right, w, merged_size))
        parent[rj] = ri
        node_of[ri] = new_id
        size[ri] = merged_size
    return merges


def _condense_tree(n: int, merges, min_cluster_size: int):
    """Collapse the dendrogram into clusters of at least min_cluster_size.

    Walking top-down, a node where both sides are big enough is a true split
    and creates two child clusters; otherwise the small side's points fall out
    of the current cluster at that level's lambda (= 1/distance) and the
    cluster continues down the big side.

    Returns (point_rows, cluster_children, birth_lambda) where point_rows maps
    cluster -> list of (point, lambda) fall-outs and cluster_children maps
    cluster -> list of (child_cluster, lambda, size). Cluster 0 is the root.
    """

    def node_size(node: int) -> int:
        return 1 if node < n else merges[node - n][3]

    def leaves(node: int):
        stack = [node]
        while stack:
            cur = stack.pop()
            if cur < n:
                yield cur
            else:
                left, right, _, _ = merges[cur - n]
                stack.append(right)
                stack.append(left)

    point_rows: dict[int, list[tuple[int, float]]] = {0: []}
    cluster_children: dict[int, list[tuple[int, float, int]]] = {0: []}
    birth_lambda: dict[int, float] = {0: 0.0}
    next_cluster = 1

    root = n + len(merges) - 1 if merges else 0
    stack = [(root, 0)]
    while stack:
        node, cluster = stack.pop()
        while True:
            if node < n:
                # a cluster reduced to one point: it leaves when its last
                # merge would have, recorded by the caller below
                point_rows[cluster].append((node, INFTY))
                break
            left, right, dist, _ = merges[node - n]
            lam = 1.0 / dist if dist > 0.0 else INFTY
            left_size, right_size = node_size(left), node_size(right)
            big_left = left_size >= min_cluster_size
            big_right = right_size >= min_cluster_size
            if big_left and big_right:
                for child in (left, right):
                    child_id = next_cluster
                    next_cluster += 1
                    point_rows[child_id] = []
                    cluster_children[child_id] = []
                    birth_lambda[child_id] = lam
                    cluster_children[cluster].append((child_id, lam, node_size(child)))
                    stack.append((child, child_id))
                break
            if not big_left and not big_right:
                for point in leaves(node):
                    point_rows[cluster].append((point, lam))
                break
            small, node = (left, right) if not big_left else (right, left)
            for point in leaves(small):
                point_rows[cluster].append((point, lam))
    return point_rows, cluster_children, birth_lambda


def _stability(point_rows, cluster_children, birth_lambda) -> dict[int, float]:
    stability: dict[int, float] = {}
    for cluster, birth in birth_lambda.items():
        total = 0.0
        for _, lam in point_rows[cluster]:
            total += lam - birth
        for _, lam, size in cluster_children[cluster]:
            total += (lam - birth) * size
        stability[cluster] = total
    return stability


def _excess_of_mass(stability, cluster_children) -> set[int]:
    """Pick the most stable antichain of clusters; the root is never eligible."""
    selected: dict[int, bool] = {}
    propagated: dict[int, float] = {}
    for cluster in sorted(stability.keys(), reverse=True):
        if cluster == 0:
            continue
        children = cluster_children[cluster]
        if not children:
            selected[cluster] = True
            propagated[cluster] = stability[cluster]
            continue
        child_sum = sum(propagated[c] for c, _, _ in children)
        if child_sum > stability[cluster]:
            selected[cluster] = False
            propagated[cluster] = child_sum
        else:
            selected[cluster] = True
            propagated[cluster] = stability[cluster]

    final: set[int] = set()
    stack = [c for c, _, _ in cluster_children[0]]
    while stack:
        cluster = stack.pop()
        if selected[cluster]:
            final.add(cluster)
        else:
            stack.extend(c for c, _, _ in cluster_children[cluster])
    return final


def hdbscan(m: CondensedDistanceMatrix, params: HdbscanParams) -> ClusterLabels:
    """Hierarchical density-based clustering over a precomputed matrix.

    Pipeline: core distances (k = min_samples, counting the point itself),
    mutual reachability max(core_i, core_j, d_ij), exact Prim MST with
    lexicographic tie-breaks, single-linkage hierarchy, condensation by
    min_cluster_size, and excess-of-mass cluster extraction. The root of the
    condensed tree is not a candidate cluster, so single-class inputs come
    back as all noise; the one exception is a set of exactly identical points,
    which is defined to be a single cluster.
    """
    n = m.n
    if n < params.min_cluster_size:
        raise TooFewPoints(n, params.min_cluster_size)
    if np.all(m.entries == 0.0):
        return ClusterLabels(np.zeros(n, dtype=np.int64))

    core = _core_distances(m, params.effective_min_samples)
    mr = CondensedDistanceMatrix(n, _mutual_reachability(m, core))
    edges = _prim_mst(n, mr)
    merges = _single_linkage(n, edges)
    point_rows, cluster_children, birth_lambda = _condense_tree(
        n, merges, params.min_cluster_size
    )
    stability = _stability(point_rows, cluster_children, birth_lambda)
    chosen = _excess_of_mass(stability, cluster_children)

    parent_of: dict[int, int] = {}
    for cluster, children in cluster_children.items():
        for child, _, _ in children:
            parent_of[child] = cluster

    labels = np.full(n, -1, dtype=np.int64)
    for cluster, rows in point_rows.items():
        node = cluster
        owner = -1
        while node != 0:
            if node in chosen:
                owner = node
                break
            node = parent_of[node]
        if owner == -1:
            continue
        for point, _ in rows:
            labels[point] = owner

    # renumber to 0..k-1 by smallest member point
    order = sorted(
        set(labels[labels >= 0].tolist()),
        key=lambda c: int(np.flatnonzero(labels == c)[0]),
    )
    remap = {c: i for i, c in enumerate(order)}
    labels = np.asarray([remap.get(int(l), -1) for l in labels], dtype=np.int64)
    return ClusterLabels(labels)


# --- flat density clustering ---------------------------------------------------

def dbscan(m: CondensedDistanceMatrix, eps: float, min_pts: int) -> ClusterLabels:
    """Classic density-reachability clustering.

    A point is core when at least min_pts points (itself included) lie within
    eps, boundary inclusive. Seeds are visited in ascending index order and
    expansion is breadth-first over ascending neighbor indices, so border
    points always join the first cluster that discovers them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = m.n
    square = m.to_square()
    neighbors = [np.flatnonzero((square[i] <= eps)) for i in range(n)]
    # flatnonzero output is ascending; self always qualifies at distance zero
    core = np.asarray([len(nb) >= min_pts for nb in neighbors])

    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue = [seed]
        head = 0
        while head < len(queue):
            v = queue[head]
            head += 1
            for u in neighbors[v]:
                if labels[u] == -1:
                    labels[u] = cluster
                    if core[u]:
                        queue.append(int(u))
        cluster += 1
    return ClusterLabels(labels)


def k_distance_eps(m: CondensedDistanceMatrix, k: int = 4, percentile: float = 90.0) -> float:
    """Heuristic eps: the given percentile of the k-th nearest neighbor distances."""
    n = m.n
    k_eff = min(k, n - 1)
    if k_eff < 1:
        return 1.0
    square = m.to_square()
    knn = np.sort(square, axis=1)[:, k_eff]  # column 0 is the self distance
    return float(np.percentile(knn, percentile))


def cluster_with_fallback(
    m: CondensedDistanceMatrix,
    params: HdbscanParams,
    fallback: DbscanConfig | None = None,
) -> tuple[ClusterLabels, bool]:
    """Hierarchical clustering with a flat-density escape hatch.

    Falls back to dbscan when the hierarchy finds only noise, and also when
    there are fewer points than min_cluster_size (a hierarchy cannot exist);
    min_pts is clamped to the point count so a lone point still gets a label
    decision instead of an error.
    """
    config = fallback if fallback is not None else DbscanConfig()
    try:
        labels = hdbscan(m, params)
    except TooFewPoints:
        labels = None
    if labels is not None and not labels.all_noise():
        return labels, False
    eps = config.eps if config.eps is not None else k_distance_eps(m)
    min_pts = min(config.min_pts, m.n)
    return dbscan(m, eps, min_pts), True
