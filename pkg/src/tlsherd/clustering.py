"""Density clustering of flow vectors (exact HDBSCAN).

The pipeline is the textbook one: core distances at ``mpts``, the
mutual-reachability transform, a minimum spanning tree, a condensed cluster
tree at ``mcs``, excess-of-mass ("stability") cluster selection. Neighbor
computation is exact; distances are computed in row blocks so the full
matrix never needs to exist at once.

Determinism conventions, shared verbatim with the brute-force reference in
the test suite (this is the fine print that makes two implementations agree
bit for bit):

* ``mpts`` counts the point itself: the core distance at mpts=2 is the
  distance to the single nearest neighbor.
* Edges are ordered by (weight, lower endpoint, higher endpoint). Merges at
  equal weight collapse into one multi-way node of the merge tree, which is
  what makes the output partition invariant under input permutation.
* Densities are lambda = 1/weight, with 1/0 = infinity.
* The root cluster is born at the level where the full component forms
  (1 / max merge weight), not at lambda = 0.
* A cluster's stability is the sum of (lambda_leave - lambda_birth) over its
  members, where inf - inf counts as 0. Terms accumulate in ascending
  (lambda, row kind, smallest member id) order so ties compare identically
  everywhere.
* Excess-of-mass selection may keep the root; an exact stability tie keeps
  the ancestor.
* A point belongs to a selected cluster if it departed strictly after the
  cluster's birth, or at the cluster's death level (the final departure).
  Everything else is noise.

``m``, the classic approximation knob, is accepted in :class:`ClusterParams`
for configuration compatibility and recorded, but the exact implementation
has nothing to approximate and ignores it.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .distance import RowDistances
from .vectorizer import VectorRef, VectorSet

_BLOCK = 256


@dataclass(frozen=True)
class ClusterParams:
    mpts: int = 2
    mcs: int = 2
    m: int = 10

    def __post_init__(self):
        if self.mpts < 2 or self.mcs < 2:
            raise ValueError("mpts and mcs must both be >= 2")


@dataclass
class Partition:
    """Cluster assignment plus the points nothing claimed."""

    assignment: dict[Hashable, int] = field(default_factory=dict)
    noise: set[Hashable] = field(default_factory=set)

    def elements(self) -> set[Hashable]:
        return set(self.assignment) | self.noise

    def clusters(self) -> dict[int, set[Hashable]]:
        out: dict[int, set[Hashable]] = {}
        for element, cid in self.assignment.items():
            out.setdefault(cid, set()).add(element)
        return out

    def as_sets(self) -> set[frozenset]:
        """Cluster contents with noise as singletons; ids erased."""
        groups = [frozenset(members) for members in self.clusters().values()]
        groups.extend(frozenset([e]) for e in self.noise)
        return set(groups)

    def relabeled(self, mapping: dict[Hashable, Hashable]) -> "Partition":
        return Partition(
            assignment={mapping[e]: c for e, c in self.assignment.items()},
            noise={mapping[e] for e in self.noise},
        )


# ---------------------------------------------------------------------------
# stage 1-2: core distances and the MST over mutual reachability


def _core_distances(rd: RowDistances, mpts: int) -> np.ndarray:
    n = len(rd)
    k = min(mpts, n)
    core = np.empty(n, dtype=np.float64)
    for start in range(0, n, _BLOCK):
        idx = np.arange(start, min(start + _BLOCK, n))
        block = rd.block(idx)
        core[idx] = np.partition(block, k - 1, axis=1)[:, k - 1]
    return core


def _mst_edges(rd: RowDistances, core: np.ndarray) -> list[tuple[float, int, int]]:
    """Prim's algorithm over the implicit mutual-reachability graph.

    Ties go to the lowest vertex id (argmin returns the first minimum).
    Which of several equal-weight spanning trees comes out does not matter
    downstream: the merge tree built from it is tie-invariant because equal
    weights collapse into multi-way nodes.
    """
    n = len(rd)
    in_tree = np.zeros(n, dtype=bool)
    key = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    key[0] = 0.0
    edges: list[tuple[float, int, int]] = []
    for _ in range(n):
        u = int(np.argmin(np.where(in_tree, np.inf, key)))
        in_tree[u] = True
        if parent[u] >= 0:
            edges.append((float(key[u]), int(parent[u]), u))
        mr = np.maximum(rd.row(u), np.maximum(core, core[u]))
        better = (~in_tree) & (mr < key)
        key[better] = mr[better]
        parent[better] = u
    return edges


# ---------------------------------------------------------------------------
# stage 3: merge tree with multi-way nodes at tied weights


class _MergeTree:
    def __init__(self, n: int):
        self.n = n
        self.children: dict[int, list[int]] = {}
        self.weight: dict[int, float] = {}
        self.size: dict[int, int] = {i: 1 for i in range(n)}
        self.min_elem: dict[int, int] = {i: i for i in range(n)}
        self.root = -1


def _build_merge_tree(edges: list[tuple[float, int, int]], n: int) -> _MergeTree:
    tree = _MergeTree(n)
    if n == 1:
        tree.root = 0
        return tree
    edges = sorted(edges, key=lambda e: (e[0], min(e[1], e[2]), max(e[1], e[2])))

    parent_uf = list(range(n))

    def find(x: int) -> int:
        while parent_uf[x] != x:
            parent_uf[x] = parent_uf[parent_uf[x]]
            x = parent_uf[x]
        return x

    node_of = {i: i for i in range(n)}
    next_id = n
    i = 0
    while i < len(edges):
        w = edges[i][0]
        j = i
        while j < len(edges) and edges[j][0] == w:
            j += 1
        for _, u, v in edges[i:j]:
            ru, rv = find(u), find(v)
            na, nb = node_of.pop(ru), node_of.pop(rv)
            kids: list[int] = []
            for nd in (na, nb):
                # a node formed earlier in this same weight group folds in
                if tree.weight.get(nd) == w:
                    kids.extend(tree.children.pop(nd))
                else:
                    kids.append(nd)
            node = next_id
            next_id += 1
            tree.children[node] = kids
            tree.weight[node] = w
            tree.size[node] = sum(tree.size[k] for k in kids)
            tree.min_elem[node] = min(tree.min_elem[k] for k in kids)
            parent_uf[ru] = rv
            node_of[find(rv)] = node
        i = j
    tree.root = node_of[find(0)]
    return tree


def _leaves_under(tree: _MergeTree, node: int) -> list[int]:
    out: list[int] = []
    stack = [node]
    while stack:
        nd = stack.pop()
        if nd < tree.n:
            out.append(nd)
        else:
            stack.extend(tree.children[nd])
    return out


# ---------------------------------------------------------------------------
# stage 4-5: condensed tree, stability, excess-of-mass extraction


def _lam(weight: float) -> float:
    return math.inf if weight == 0.0 else 1.0 / weight


@dataclass
class _Condensed:
    birth: dict[int, float] = field(default_factory=dict)
    death: dict[int, float] = field(default_factory=dict)
    point_rows: dict[int, list[tuple[int, float]]] = field(default_factory=dict)
    child_rows: dict[int, list[tuple[int, int, float]]] = field(default_factory=dict)
    children: dict[int, list[int]] = field(default_factory=dict)
    min_elem: dict[int, int] = field(default_factory=dict)
    count: int = 0


def _condense(tree: _MergeTree, mcs: int) -> _Condensed:
    cond = _Condensed()
    cond.birth[0] = _lam(tree.weight[tree.root])
    cond.point_rows[0] = []
    cond.child_rows[0] = []
    cond.children[0] = []
    cond.min_elem[0] = tree.min_elem[tree.root]
    cond.count = 1

    stack = [(tree.root, 0)]
    while stack:
        node, c = stack.pop()
        level = _lam(tree.weight[node])
        kids = tree.children[node]
        big = [k for k in kids if tree.size[k] >= mcs]
        for k in kids:
            if tree.size[k] < mcs:
                for p in _leaves_under(tree, k):
                    cond.point_rows[c].append((p, level))
        if not big:
            cond.death[c] = level
        elif len(big) == 1:
            stack.append((big[0], c))
        else:
            cond.death[c] = level
            for k in big:
                cid = cond.count
                cond.count += 1
                cond.birth[cid] = level
                cond.point_rows[cid] = []
                cond.child_rows[cid] = []
                cond.children[cid] = []
                cond.min_elem[cid] = tree.min_elem[k]
                cond.child_rows[c].append((cid, tree.size[k], level))
                cond.children[c].append(cid)
                stack.append((k, cid))
    return cond


def _stability(cond: _Condensed, c: int) -> float:
    birth = cond.birth[c]
    rows: list[tuple[float, int, int, int]] = []
    for p, level in cond.point_rows[c]:
        rows.append((level, 0, p, 1))
    for cid, size, level in cond.child_rows[c]:
        rows.append((level, 1, cond.min_elem[cid], size))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    total = 0.0
    for level, _, _, size in rows:
        if level == birth:
            continue
        term = math.inf if level == math.inf else level - birth
        total += term * size
    return total


def _extract(cond: _Condensed) -> tuple[list[int], dict[int, list[int]]]:
    """Excess-of-mass selection; returns chosen cluster ids and memberships."""
    stability = {c: _stability(cond, c) for c in range(cond.count)}
    eff: dict[int, float] = {}
    selected: dict[int, bool] = {}
    for c in reversed(range(cond.count)):
        kids = sorted(cond.children[c], key=lambda k: cond.min_elem[k])
        kid_sum = 0.0
        for k in kids:
            kid_sum += eff[k]
        if kids and stability[c] < kid_sum:
            eff[c] = kid_sum
            selected[c] = False
        else:
            eff[c] = stability[c]
            selected[c] = True

    chosen: list[int] = []
    stack = [0]
    while stack:
        c = stack.pop()
        if selected[c]:
            chosen.append(c)
        else:
            stack.extend(cond.children[c])

    def subtree_points(c: int) -> list[int]:
        out: list[int] = []
        todo = [c]
        while todo:
            x = todo.pop()
            out.extend(p for p, _ in cond.point_rows[x])
            todo.extend(cond.children[x])
        return out

    members: dict[int, list[int]] = {}
    for c in chosen:
        mine = [
            p
            for p, level in cond.point_rows[c]
            if level > cond.birth[c] or level == cond.death[c]
        ]
        for k in cond.children[c]:
            mine.extend(subtree_points(k))
        members[c] = mine
    return chosen, members


def cluster(vectors: VectorSet, params: ClusterParams | None = None) -> Partition:
    """Cluster a vector set; elements of the result are row indices.

    Fewer than two vectors cannot form a cluster, so they come back as noise.
    """
    params = params or ClusterParams()
    n = len(vectors)
    if n == 0:
        return Partition()
    if n == 1:
        return Partition(noise={0})

    rd = RowDistances(vectors)
    core = _core_distances(rd, params.mpts)
    edges = _mst_edges(rd, core)
    tree = _build_merge_tree(edges, n)
    cond = _condense(tree, params.mcs)
    chosen, members = _extract(cond)

    assignment: dict[Hashable, int] = {}
    # stable public ids: clusters ordered by their smallest member
    order = sorted(chosen, key=lambda c: min(members[c]) if members[c] else n)
    label = 0
    for c in order:
        if not members[c]:
            continue
        for p in members[c]:
            assignment[p] = label
        label += 1
    noise = {p for p in range(n) if p not in assignment}
    return Partition(assignment=assignment, noise=noise)


# ---------------------------------------------------------------------------
# final cluster bookkeeping


@dataclass
class ClusterMeta:
    cluster_id: int
    size: int
    sample_ids: list[str]
    sni_domains: list[str]
    leaf_cert_hashes: list[str]
    family_label: str | None = None
    label_suffix: int | None = None

    @property
    def display_label(self) -> str:
        if self.family_label is not None:
            return f"{self.family_label}-{self.label_suffix}"
        return f"cluster-{self.cluster_id}"


def finalize_clusters(
    partition: Partition,
    refs: list[VectorRef | None],
    sample_labels: dict[str, str] | None = None,
) -> tuple[Partition, list[ClusterMeta]]:
    """Materialize noise as singleton clusters and attach metadata.

    ``sample_labels`` maps sample id to a family name (the external labeling,
    usually majority-vote input). A cluster gets a family label when a strict
    majority of its labeled member samples agree; ties and empty label sets
    leave it unlabeled. ``label_suffix`` numbers clusters within a family by
    ascending cluster id so two clusters of one family stay distinguishable.
    """
    sample_labels = sample_labels or {}
    assignment = dict(partition.assignment)
    next_id = max(assignment.values(), default=-1) + 1
    for element in sorted(partition.noise):
        assignment[element] = next_id
        next_id += 1
    full = Partition(assignment=assignment, noise=set())

    metas: list[ClusterMeta] = []
    for cid, members in sorted(full.clusters().items()):
        samples: set[str] = set()
        snis: set[str] = set()
        hashes: set[str] = set()
        for element in members:
            ref = refs[element] if isinstance(element, int) else None
            if ref is None:
                continue
            if ref.sample_id:
                samples.add(ref.sample_id)
            if ref.sni:
                snis.add(ref.sni)
            if ref.leaf_hash:
                hashes.add(ref.leaf_hash)
        family = _majority_family(samples, sample_labels)
        metas.append(
            ClusterMeta(
                cluster_id=cid,
                size=len(members),
                sample_ids=sorted(samples),
                sni_domains=sorted(snis),
                leaf_cert_hashes=sorted(hashes),
                family_label=family,
            )
        )

    by_family: dict[str, list[ClusterMeta]] = {}
    for meta in metas:
        if meta.family_label is not None:
            by_family.setdefault(meta.family_label, []).append(meta)
    for family, group in by_family.items():
        for i, meta in enumerate(sorted(group, key=lambda m: m.cluster_id), start=1):
            meta.label_suffix = i
    return full, metas


def clustering_metrics(
    produced: Partition, reference: Partition
) -> tuple[float, float, float]:
    """Partition-comparison precision, recall and F1.

    Precision credits each produced cluster with its largest overlap against
    any reference cluster, summed and divided by the element count; recall is
    the same with the roles swapped; F1 is their harmonic mean. Noise points
    count as singleton clusters on both sides. Two empty partitions compare
    as perfect.
    """
    elements = produced.elements()
    if elements != reference.elements():
        raise ValueError("partitions cover different element sets")
    n = len(elements)
    if n == 0:
        return 1.0, 1.0, 1.0

    pid = _cluster_keys(produced)
    rid = _cluster_keys(reference)
    overlap = Counter((pid[e], rid[e]) for e in elements)
    best_produced: dict = {}
    best_reference: dict = {}
    for (p, r), count in overlap.items():
        if count > best_produced.get(p, 0):
            best_produced[p] = count
        if count > best_reference.get(r, 0):
            best_reference[r] = count
    precision = sum(best_produced.values()) / n
    recall = sum(best_reference.values()) / n
    f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def _cluster_keys(partition: Partition) -> dict:
    """Element -> cluster key, with every noise point in its own cluster."""
    keys: dict = {e: ("c", c) for e, c in partition.assignment.items()}
    for e in partition.noise:
        keys[e] = ("n", e)
    return keys


def _majority_family(samples: set[str], labels: dict[str, str]) -> str | None:
    tally: dict[str, int] = {}
    labeled = 0
    for sample in samples:
        family = labels.get(sample)
        if family is None:
            continue
        labeled += 1
        tally[family] = tally.get(family, 0) + 1
    if not tally:
        return None
    best = max(tally.values())
    winners = [f for f, count in tally.items() if count == best]
    if len(winners) > 1 or best * 2 <= labeled:
        return None
    return winners[0]
