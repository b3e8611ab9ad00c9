"""Embedding-space evaluation: cosine top-k retrieval against labeled pairs,
a bag-of-words baseline, k-means clustering with elbow-based k selection,
and 2-D projection via power-iteration PCA.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Column

STORE_MAGIC = b"EMB1"


class EmbeddingStore:
    """Map from column id to a fixed-dimension embedding vector."""

    def __init__(self, dim: int, provenance: dict | None = None):
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.dim = dim
        self.provenance = provenance or {}
        self._vectors: dict[str, np.ndarray] = {}

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, column_id):
        return column_id in self._vectors

    def add(self, column_id: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise ValueError(f"expected vector of dim {self.dim}, got shape {vector.shape}")
        if not np.isfinite(vector).all():
            raise ValueError(f"non-finite embedding for {column_id}")
        if column_id in self._vectors:
            raise ValueError(f"duplicate column id: {column_id}")
        self._vectors[column_id] = vector

    def get(self, column_id: str) -> np.ndarray:
        if column_id not in self._vectors:
            raise KeyError(f"unknown column id: {column_id}")
        return self._vectors[column_id]

    def ids(self) -> list[str]:
        return sorted(self._vectors)

    def as_matrix(self) -> tuple[list[str], np.ndarray]:
        ids = self.ids()
        return ids, np.stack([self._vectors[i] for i in ids])

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(STORE_MAGIC)
            fh.write(struct.pack("<I", self.dim))
            for cid in self.ids():
                idb = cid.encode("utf-8")
                fh.write(struct.pack("<I", len(idb)))
                fh.write(idb)
                fh.write(np.ascontiguousarray(self._vectors[cid], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        data = Path(path).read_bytes()
        if data[:4] != STORE_MAGIC:
            raise ValueError(f"not an {STORE_MAGIC.decode()} embedding store: {path}")
        (dim,) = struct.unpack_from("<I", data, 4)
        store = cls(dim)
        pos = 8
        while pos < len(data):
            try:
                (id_len,) = struct.unpack_from("<I", data, pos)
                pos += 4
                cid = data[pos : pos + id_len].decode("utf-8")
                pos += id_len
                vec = np.frombuffer(data[pos : pos + dim * 4], dtype="<f4")
                if vec.size != dim:
                    raise struct.error("short record")
                pos += dim * 4
            except (struct.error, IndexError) as exc:
                raise ValueError(f"truncated embedding store: {path}") from exc
            store.add(cid, vec.copy())
        return store


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between a and b, in [-1, 1].

    A zero-norm input is degenerate: the similarity is defined as 0 and a
    warning is emitted.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero-norm vector in cosine similarity; returning 0", stacklevel=2)
        return 0.0
    return float(a @ b / (na * nb))


def _similarity_row(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine similarities of one query against every row; zero rows map to 0."""
    matrix = matrix.astype(np.float64)
    query = query.astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    qn = np.linalg.norm(query)
    sims = np.zeros(matrix.shape[0])
    if qn == 0.0:
        return sims
    nonzero = norms > 0.0
    sims[nonzero] = (matrix[nonzero] @ query) / (norms[nonzero] * qn)
    return sims


def topk_query(store: EmbeddingStore, query_id: str, k: int) -> list[tuple[str, float]]:
    """The k most cosine-similar non-query columns, best first.

    Ties break by ascending column id so rankings are reproducible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = store.get(query_id)
    ids, matrix = store.as_matrix()
    sims = _similarity_row(matrix, query)
    ranked = sorted(
        ((cid, float(s)) for cid, s in zip(ids, sims) if cid != query_id),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:k]


def pair_rank(store: EmbeddingStore, query_id: str, target_id: str) -> int:
    """1-based rank of the target in the query's full similarity ordering."""
    full = topk_query(store, query_id, k=max(1, len(store) - 1))
    for pos, (cid, _) in enumerate(full, start=1):
        if cid == target_id:
            return pos
    raise KeyError(f"target {target_id} not in store")


def topk_accuracy(store: EmbeddingStore, pairs: list[tuple[str, str]], k: int) -> float:
    """Fraction of (query, target) pairs whose target lands in the query's top k."""
    if not pairs:
        raise ValueError("no ground-truth pairs given")
    validate_pairs(store, pairs)
    hits = 0
    for query_id, target_id in pairs:
        results = topk_query(store, query_id, k)
        if any(cid == target_id for cid, _ in results):
            hits += 1
    return hits / len(pairs)


def validate_pairs(store: EmbeddingStore, pairs: list[tuple[str, str]]) -> None:
    for q, t in pairs:
        if q == t:
            raise ValueError(f"self-pair not allowed: {q}")
        if q not in store:
            raise KeyError(f"query id missing from store: {q}")
        if t not in store:
            raise KeyError(f"target id missing from store: {t}")


def load_ground_truth(path: str | Path) -> list[tuple[str, str]]:
    """Read (query_id, target_id) pairs from a two-column CSV with header."""
    pairs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"query_id", "target_id"} - set(reader.fieldnames):
            raise ValueError(f"ground truth needs query_id,target_id columns: {path}")
        for row in reader:
            pairs.append((row["query_id"], row["target_id"]))
    if not pairs:
        raise ValueError(f"no pairs in ground truth file: {path}")
    return pairs


def save_ground_truth(pairs: list[tuple[str, str]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "target_id"])
        writer.writerows(pairs)


# -- bag-of-words baseline ---------------------------------------------------

def column_tokens(column: Column) -> list[str]:
    """Whitespace tokens of the column's concatenated cell texts."""
    return " ".join(column.entries).split()


def build_bow_dictionary(columns: list[Column]) -> dict[str, int]:
    """Token -> index map over the given (training-split) columns.

    Indices are assigned in sorted token order, forming a bijection onto
    [0, V).
    """
    vocab = set()
    for column in columns:
        vocab.update(column_tokens(column))
    return {token: i for i, token in enumerate(sorted(vocab))}


def bow_encode(column: Column, dictionary: dict[str, int]) -> np.ndarray:
    """Term-frequency vector over the dictionary; unknown tokens are ignored."""
    vec = np.zeros(len(dictionary), dtype=np.float32)
    for token in column_tokens(column):
        idx = dictionary.get(token)
        if idx is not None:
            vec[idx] += 1.0
    return vec


def bow_store(columns: list[Column], dictionary: dict[str, int]) -> EmbeddingStore:
    store = EmbeddingStore(dim=max(1, len(dictionary)), provenance={"kind": "bow"})
    for column in columns:
        vec = bow_encode(column, dictionary) if dictionary else np.zeros(1, dtype=np.float32)
        store.add(column.column_id, vec)
    return store


# -- k-means and elbow selection ----------------------------------------------

@dataclass
class ClusterResult:
    k: int
    assignment: dict[str, int]
    centroids: np.ndarray
    wcss: float
    wcss_history: list[float] = field(default_factory=list)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding: spread initial centroids proportionally to distance."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0.0:
            centroids[i] = points[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[i] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iters: int):
    """Lloyd iterations from given centroids until the assignment fixes."""
    labels = None
    wcss_history = []
    for _ in range(max_iters):
        d2 = _squared_distances(points, centroids)
        new_labels = d2.argmin(axis=1)
        for c in range(centroids.shape[0]):
            members = new_labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point worst served by its centroid
                worst = d2[np.arange(len(points)), new_labels].argmax()
                centroids[c] = points[worst]
                new_labels[worst] = c
        wcss_history.append(float(_squared_distances(points, centroids)[np.arange(len(points)), new_labels].sum()))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
    return labels, centroids, wcss_history


def kmeans(store: EmbeddingStore, k: int, seed: int = 0, max_iters: int = 100,
           init_centroids: np.ndarray | None = None) -> ClusterResult:
    """Seeded k-means++ plus Lloyd's algorithm over the store's embeddings."""
    if len(store) == 0:
        raise ValueError("empty embedding store")
    if not 1 <= k <= len(store):
        raise ValueError(f"k must be in [1, {len(store)}], got {k}")
    ids, matrix = store.as_matrix()
    points = matrix.astype(np.float64)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng) if init_centroids is None else init_centroids.copy()
    labels, centroids, wcss_history = _lloyd(points, centroids, max_iters)
    assignment = {cid: int(lbl) for cid, lbl in zip(ids, labels)}
    return ClusterResult(
        k=k,
        assignment=assignment,
        centroids=centroids,
        wcss=wcss_history[-1],
        wcss_history=wcss_history,
    )


def elbow_scan(store: EmbeddingStore, k_values, seed: int = 0, restarts: int = 5,
               max_iters: int = 100) -> tuple[list[tuple[int, float]], int]:
    """WCSS per candidate k (best of several restarts) and the elbow choice.

    The elbow is the interior k maximizing the discrete second difference of
    the WCSS curve. Alongside the random restarts, each k also tries a warm
    start grown from the previous k's best centroids, which keeps the curve
    non-increasing.
    """
    k_values = sorted(set(int(k) for k in k_values))
    if len(k_values) < 3:
        raise ValueError("elbow selection needs at least 3 candidate k values")
    if k_values[0] < 1 or k_values[-1] > len(store):
        raise ValueError(f"k range must lie within [1, {len(store)}]")

    _, matrix = store.as_matrix()
    points = matrix.astype(np.float64)
    curve: list[tuple[int, float]] = []
    best_prev: ClusterResult | None = None
    for k in k_values:
        candidates = [
            kmeans(store, k, seed=_derive_seed(seed, k, r), max_iters=max_iters)
            for r in range(restarts)
        ]
        if best_prev is not None and best_prev.k < k:
            grown = _grow_centroids(points, best_prev.centroids, k)
            candidates.append(kmeans(store, k, max_iters=max_iters, init_centroids=grown))
        best = min(candidates, key=lambda res: res.wcss)
        curve.append((k, best.wcss))
        best_prev = best

    wcss = [w for _, w in curve]
    second_diff = [wcss[i - 1] - 2 * wcss[i] + wcss[i + 1] for i in range(1, len(wcss) - 1)]
    chosen = k_values[1 + int(np.argmax(second_diff))]
    return curve, chosen


def _derive_seed(master: int, k: int, restart: int) -> list[int]:
    return [master, k, restart]


def _grow_centroids(points: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    grown = centroids.copy()
    while grown.shape[0] < k:
        d2 = _squared_distances(points, grown).min(axis=1)
        grown = np.vstack([grown, points[d2.argmax()]])
    return grown


# -- PCA via power iteration ---------------------------------------------------

def pca_project(store: EmbeddingStore, dims: int = 2, seed: int = 0,
                max_iters: int = 1000, tol: float = 1e-12):
    """Project embeddings onto their top principal components.

    Components come from iterated power method with deflation on the
    covariance matrix; they are unit-norm, mutually orthogonal, and ordered
    by explained variance. If the data has rank below `dims`, fewer
    components are returned with a warning.

    Returns (points, components, explained_variance) where points is a list
    of (column_id, coordinate array) and components has one row per kept
    component.
    """
    ids, matrix = store.as_matrix()
    n = matrix.shape[0]
    if dims < 1 or dims > store.dim:
        raise ValueError(f"dims must be in [1, {store.dim}]")
    if n < dims:
        raise ValueError(f"need at least {dims} points, have {n}")

    x = matrix.astype(np.float64)
    x -= x.mean(axis=0)
    denom = max(n - 1, 1)
    cov = (x.T @ x) / denom

    rng = np.random.default_rng(seed)
    components = []
    variances = []
    scale = float(np.trace(cov))
    for _ in range(dims):
        vec, value = _power_iteration(cov, rng, max_iters, tol)
        if value <= max(scale, 1.0) * 1e-12:
            warnings.warn(
                f"data rank below requested dims; returning {len(components)} components",
                stacklevel=2,
            )
            break
        # fix sign so the largest-magnitude coordinate is positive
        pivot = np.argmax(np.abs(vec))
        if vec[pivot] < 0:
            vec = -vec
        components.append(vec)
        variances.append(value)
        cov = cov - value * np.outer(vec, vec)

    comp = np.array(components)
    coords = x @ comp.T if len(components) else np.zeros((n, 0))
    points = [(cid, coords[i]) for i, cid in enumerate(ids)]
    return points, comp, variances


def _power_iteration(matrix: np.ndarray, rng, max_iters: int, tol: float):
    v = rng.standard_normal(matrix.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(max_iters):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return v, float(v @ matrix @ v)
