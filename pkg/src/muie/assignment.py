"""Optimal bipartite matching between gold and predicted grounding sets.

Sets of unequal size are padded with null slots so the matching is a
permutation; the Hungarian solve is O(P^3) with a deterministic tie-break
(the lexicographically smallest optimal assignment by row, then column).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import (
    DEFAULT_BCE_EPSILON,
    DenseMask,
    bce_loss,
    dice_loss,
    span_iou_1d,
    tracklet_iou_profile,
)
from .model import AudioSegment, ModelError, Tracklet

# Cost of any pair touching a null pad: strictly above the largest possible
# real-real cost (~= -ln(eps) + 1), so padding only absorbs set-size surplus.
NULL_COST = 1e6


@dataclass(frozen=True)
class CostMatrix:
    """Square pairwise-cost matrix; rows are gold slots, columns prediction slots.

    Row/column labels are original set indices, with None marking a pad slot.
    """

    rows: tuple[int | None, ...]
    cols: tuple[int | None, ...]
    values: tuple[tuple[float, ...], ...]

    def __init__(self, values, rows=None, cols=None):
        vals = tuple(tuple(float(x) for x in row) for row in values)
        n = len(vals)
        if any(len(row) != n for row in vals):
            raise ModelError("NOT_SQUARE", "cost matrix must be square")
        if any(not math.isfinite(x) for row in vals for x in row):
            raise ModelError("NON_FINITE_COST", "cost matrix entries must be finite")
        rows = tuple(range(n)) if rows is None else tuple(rows)
        cols = tuple(range(n)) if cols is None else tuple(cols)
        if len(rows) != n or len(cols) != n:
            raise ModelError("BAD_LABELS", "row/col labels must match matrix size")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def size(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class MatchedPair:
    gold: int | None
    pred: int | None
    cost: float


@dataclass(frozen=True)
class Matching:
    """Pairs over original set indices (None = matched to a pad).

    total_cost counts real-real pairs only; pad pairs carry no information.
    """

    pairs: tuple[MatchedPair, ...]
    total_cost: float

    def real_pairs(self) -> list[MatchedPair]:
        return [p for p in self.pairs if p.gold is not None and p.pred is not None]


def _solve_min_cost(values: list[list[float]]) -> tuple[list[int], list[float], list[float]]:
    """Shortest-augmenting-path assignment solve; returns (row→col, duals u, v)."""
    n = len(values)
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = row (1-based) matched to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = values[i0 - 1]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    assign = [0] * n
    for j in range(1, n + 1):
        assign[p[j] - 1] = j - 1
    return assign, u[1:], v[1:]


def _lexicographic_refine(
    values: list[list[float]], u: list[float], v: list[float], initial: list[int]
) -> list[int]:
    """Pick the lexicographically smallest optimum among tight-edge matchings.

    By complementary slackness every minimum-cost assignment is a perfect
    matching in the subgraph of edges with zero reduced cost. Starting from
    the solver's matching, each row in turn grabs its smallest tight column,
    rerouting the displaced row via an augmenting path when possible.
    """
    n = len(values)
    scale = max(1.0, max(abs(x) for row in values for x in row))
    tol = 1e-9 * scale
    tight = [[j for j in range(n) if values[i][j] - u[i] - v[j] <= tol] for i in range(n)]
    match_row = list(initial)
    match_col = {j: i for i, j in enumerate(initial)}

    def reroute(row: int, reserved: int, fixed_below: int, seen: set[int]) -> bool:
        for c in tight[row]:
            if c == reserved or c in seen:
                continue
            seen.add(c)
            holder = match_col.get(c)
            if holder is None or (holder > fixed_below and reroute(holder, reserved, fixed_below, seen)):
                match_col[c] = row
                match_row[row] = c
                return True
        return False

    for i in range(n):
        for j in tight[i]:
            cur = match_row[i]
            if j == cur:
                break
            holder = match_col.get(j)
            if holder is None or holder < i:
                continue
            del match_col[cur]  # i abandons its column; the reroute chain ends there
            if reroute(holder, j, i, set()):
                match_row[i] = j
                match_col[j] = i
                break
            match_col[cur] = i
    return match_row


def hungarian(costs: CostMatrix) -> Matching:
    """Minimum-cost perfect assignment with a deterministic lexicographic tie-break."""
    n = costs.size
    if n == 0:
        return Matching(pairs=(), total_cost=0.0)
    values = [list(row) for row in costs.values]
    initial, u, v = _solve_min_cost(values)
    assign = _lexicographic_refine(values, u, v, initial)
    pairs = []
    total = 0.0
    for i, j in enumerate(assign):
        gold, pred = costs.rows[i], costs.cols[j]
        cost = values[i][j]
        pairs.append(MatchedPair(gold=gold, pred=pred, cost=cost))
        if gold is not None and pred is not None:
            total += cost
    return Matching(pairs=tuple(pairs), total_cost=total)


def _match_padded(n_gold: int, n_pred: int, pair_cost) -> Matching:
    """Pad both sets to P = max(G, K) and solve; pad pairs cost NULL_COST."""
    p = max(n_gold, n_pred)
    if p == 0:
        return Matching(pairs=(), total_cost=0.0)
    rows = tuple(list(range(n_gold)) + [None] * (p - n_gold))
    cols = tuple(list(range(n_pred)) + [None] * (p - n_pred))
    values = [
        [pair_cost(g, k) if rows[g_i] is not None and cols[k_i] is not None else NULL_COST
         for k_i, k in enumerate(range(p))]
        for g_i, g in enumerate(range(p))
    ]
    return hungarian(CostMatrix(values, rows=rows, cols=cols))


def match_mask_sets(
    gold: list[DenseMask],
    pred: list[DenseMask],
    epsilon: float = DEFAULT_BCE_EPSILON,
) -> Matching:
    """Match mask sets under the BCE+Dice pairwise cost."""
    all_masks = list(gold) + list(pred)
    if all_masks:
        dims = (all_masks[0].width, all_masks[0].height)
        for m in all_masks:
            if (m.width, m.height) != dims:
                raise ModelError("DIMENSION_MISMATCH", "all masks must share dimensions")

    def cost(g: int, k: int) -> float:
        return bce_loss(pred[k], gold[g], epsilon) + dice_loss(pred[k], gold[g])

    return _match_padded(len(gold), len(pred), cost)


def match_span_sets(gold: list[AudioSegment], pred: list[AudioSegment]) -> Matching:
    """Match 1D segment sets; pairwise cost is 1 - span IoU."""
    return _match_padded(len(gold), len(pred), lambda g, k: 1.0 - span_iou_1d(gold[g], pred[k]))


def match_tracklet_sets(gold: list[Tracklet], pred: list[Tracklet]) -> Matching:
    """Match tracklet sets; pairwise cost is 1 - frame-averaged IoU."""
    return _match_padded(
        len(gold), len(pred), lambda g, k: 1.0 - tracklet_iou_profile(gold[g], pred[k]).mean
    )
