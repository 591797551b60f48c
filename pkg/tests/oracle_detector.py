"""Literal nearest-node detector reference: exhaustive loops, no arrays."""

from __future__ import annotations

from oracle_hdbscan import mixed_distance_ref


def reference_thresholds(points, members, w_num, w_cat) -> dict[int, float]:
    """Per-cluster max of member-to-closest-intra-neighbor distances."""
    out: dict[int, float] = {}
    for cid, rows in members.items():
        if len(rows) < 2:
            out[cid] = 0.0
            continue
        worst = 0.0
        for r in rows:
            closest = min(
                mixed_distance_ref(points[r], points[s], w_num, w_cat)
                for s in rows
                if s != r
            )
            worst = max(worst, closest)
        out[cid] = worst
    return out


def reference_verdict(
    probe,
    points,
    ids,
    thresholds,
    w_num,
    w_cat,
    fixed: float | None = None,
):
    """(is_alarm, cluster_id_or_None, nearest_distance) for one probe."""
    best = None
    best_cid = None
    for point, cid in zip(points, ids):
        d = mixed_distance_ref(probe, point, w_num, w_cat)
        if best is None or d < best or (d == best and cid < best_cid):
            best, best_cid = d, cid
    limit = fixed if fixed is not None else thresholds[best_cid]
    if best <= limit:
        return True, best_cid, best
    return False, None, best
