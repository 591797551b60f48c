"""The mixed distance between flow vectors.

    d(a, b) = (n_num / n_tot) * euclidean(a_num, b_num)
            + (n_cat / n_tot) * cosine_distance(a_cat, b_cat)

where n_num and n_cat count enabled *features* (24 numeric, and 11 + 9 + 24
for the client/server/certificate categories), not expanded one-hot columns.
Cosine distance is 1 - cosine similarity. Two empty categorical blocks are
at distance 0 from each other; an empty block against a non-empty one is at
distance 1. Exact duplicate vectors snap to distance 0 so the metric axioms
hold despite floating-point normalization.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .vectorizer import FeatureVector, VectorSet

# Distances smaller than this get an exact-equality check and snap to 0.0
# when the rows really are identical.
_SNAP = 1e-9


def _weights(n_numeric: int, n_categorical: int) -> tuple[float, float]:
    total = n_numeric + n_categorical
    if total == 0:
        raise ValueError("feature configuration enables no features")
    return n_numeric / total, n_categorical / total


def _cat_dense(vec: FeatureVector, width: int) -> np.ndarray:
    out = np.zeros(width, dtype=np.float64)
    out[vec.cat_indices] = vec.cat_values
    return out


def mixed_distance(a: FeatureVector, b: FeatureVector) -> float:
    """Distance between two vectors from the same vectorizer."""
    if a.config_name != b.config_name:
        raise ValueError(
            f"vectors come from different configurations: "
            f"{a.config_name!r} vs {b.config_name!r}"
        )
    w_num, w_cat = _weights(a.n_numeric_features, a.n_categorical_features)

    d = 0.0
    if w_num:
        d += w_num * float(np.linalg.norm(a.numeric - b.numeric))
    if w_cat:
        na = float(np.linalg.norm(a.cat_values))
        nb = float(np.linalg.norm(b.cat_values))
        if na == 0.0 and nb == 0.0:
            cosd = 0.0
        elif na == 0.0 or nb == 0.0:
            cosd = 1.0
        elif np.array_equal(a.cat_indices, b.cat_indices) and np.array_equal(
            a.cat_values, b.cat_values
        ):
            cosd = 0.0
        else:
            width = int(max(a.cat_indices.max(), b.cat_indices.max())) + 1
            dot = float(_cat_dense(a, width) @ _cat_dense(b, width))
            sim = min(max(dot / (na * nb), 0.0), 1.0)
            cosd = 1.0 - sim
        d += w_cat * cosd
    if d < _SNAP and _vectors_equal(a, b):
        return 0.0
    return d


def _vectors_equal(a: FeatureVector, b: FeatureVector) -> bool:
    return (
        np.array_equal(a.numeric, b.numeric)
        and np.array_equal(a.cat_indices, b.cat_indices)
        and np.array_equal(a.cat_values, b.cat_values)
    )


def _normalized_rows(cat: sparse.csr_matrix) -> tuple[sparse.csr_matrix, np.ndarray]:
    """L2-normalize CSR rows; zero rows stay zero. Returns (rows, nonzero mask)."""
    norms = np.sqrt(np.asarray(cat.multiply(cat).sum(axis=1)).ravel())
    nonzero = norms > 0.0
    inv = np.where(nonzero, 1.0 / np.where(nonzero, norms, 1.0), 0.0)
    scaled = sparse.diags(inv) @ cat
    return scaled.tocsr(), nonzero


def _snap_exact_pairs(
    dist: np.ndarray,
    a: VectorSet,
    b: VectorSet,
    row_map: np.ndarray | None = None,
) -> None:
    """Set distance exactly 0.0 for bit-identical row pairs.

    ``dist[k, j]`` covers row ``row_map[k]`` of ``a`` (or row ``k`` when no
    map is given) against row ``j`` of ``b``.
    """
    close = np.argwhere((dist > 0.0) & (dist < _SNAP))
    for k, j in close:
        i = int(row_map[k]) if row_map is not None else int(k)
        ra, rb = a.cat.getrow(i), b.cat.getrow(int(j))
        if (
            np.array_equal(a.numeric[i], b.numeric[int(j)])
            and np.array_equal(ra.indices, rb.indices)
            and np.array_equal(ra.data, rb.data)
        ):
            dist[k, j] = 0.0


def cross_distances(a: VectorSet, b: VectorSet) -> np.ndarray:
    """Dense (len(a), len(b)) mixed-distance block."""
    if a.config != b.config:
        raise ValueError("vector sets come from different configurations")
    w_num, w_cat = _weights(a.config.n_numeric, a.config.n_categorical)
    same = a is b
    dist = np.zeros((len(a), len(b)), dtype=np.float64)
    if w_num:
        dist += w_num * cdist(a.numeric, b.numeric)
    if w_cat:
        ra, nza = _normalized_rows(a.cat)
        rb, nzb = (ra, nza) if same else _normalized_rows(b.cat)
        sim = np.asarray((ra @ rb.T).todense())
        np.clip(sim, 0.0, 1.0, out=sim)
        cat_dist = 1.0 - sim
        both_zero = np.outer(~nza, ~nzb)
        cat_dist[both_zero] = 0.0
        dist += w_cat * cat_dist
    if same:
        np.fill_diagonal(dist, 0.0)
    _snap_exact_pairs(dist, a, b)
    return dist


def pairwise_distances(vs: VectorSet) -> np.ndarray:
    return cross_distances(vs, vs)


class RowDistances:
    """Row-at-a-time mixed distances over one vector set.

    Used by the clustering stage so the full n-by-n matrix never has to be
    materialized for large corpora.
    """

    def __init__(self, vs: VectorSet):
        self.vs = vs
        self.w_num, self.w_cat = _weights(vs.config.n_numeric, vs.config.n_categorical)
        if self.w_cat:
            self._rows, self._nonzero = _normalized_rows(vs.cat)
        else:
            self._rows, self._nonzero = None, None

    def __len__(self) -> int:
        return len(self.vs)

    def block(self, idx: np.ndarray) -> np.ndarray:
        """Distances from the given rows to every row, shape (len(idx), n)."""
        out = np.zeros((len(idx), len(self.vs)), dtype=np.float64)
        if self.w_num:
            out += self.w_num * cdist(self.vs.numeric[idx], self.vs.numeric)
        if self.w_cat:
            sim = np.asarray((self._rows[idx] @ self._rows.T).todense())
            np.clip(sim, 0.0, 1.0, out=sim)
            cat_dist = 1.0 - sim
            zero_here = ~self._nonzero[idx]
            both_zero = np.outer(zero_here, ~self._nonzero)
            cat_dist[both_zero] = 0.0
            out += self.w_cat * cat_dist
        for k, i in enumerate(idx):
            out[k, i] = 0.0
        _snap_exact_pairs(out, self.vs, self.vs, row_map=np.asarray(idx))
        return out

    def row(self, i: int) -> np.ndarray:
        return self.block(np.asarray([i]))[0]
