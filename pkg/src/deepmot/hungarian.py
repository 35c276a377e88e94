"""Exact minimum-cost bipartite assignment.

The solver is the shortest-augmenting-path form of the Hungarian method
(O(n^2 m), inner loop vectorised with numpy).  Among equal-cost optima it
returns the assignment whose per-row column sequence is lexicographically
smallest, an unmatched row counting as a column past the last one.  Costs of
candidate assignments are compared as exact rational sums of the stored
floats, and a final exact pass removes improvements smaller than the
rounding error of the floating-point duals.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

__all__ = ["solve", "solve_thresholded", "assignment_cost", "check_assignment"]


def _lsa(cost: np.ndarray):
    """Square-or-wide assignment (rows <= cols).

    Returns ``(col_of_row, u, v)`` with row potentials ``u`` and column
    potentials ``v`` satisfying ``cost - u[:, None] - v[None, :] >= 0``
    (up to rounding), with equality on the chosen entries.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lsa_small(cost: np.ndarray):
    """Pure-Python form of :func:`_lsa`, faster for small matrices."""
    n, m = cost.shape
    rows = cost.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = rows[i0 - 1]
            ui = u[i0]
            delta, j1 = inf, 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(m + 1):
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
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, np.array(u[1:]), np.array(v[1:])


class _Problem:
    """Padded square instance with exact cost bookkeeping.

    Entries flagged ``prohibited`` count before any real cost: the exact key
    of an assignment orders first by the number of prohibited pairs used,
    then by the exact sum of the remaining costs.
    """

    def __init__(self, D: np.ndarray, prohibited: np.ndarray | None):
        N, M = D.shape
        self.N, self.M = N, M
        self.D = D
        self.prohibited = np.zeros_like(D, dtype=bool) if prohibited is None else prohibited
        feasible = D[~self.prohibited]
        span = float(np.max(np.abs(feasible))) if feasible.size else 0.0
        big = N * M * span + 1.0
        work = np.where(self.prohibited, big, D)
        pad = max(span, big) + 1.0  # strictly above every entry used so far
        n = max(N, M)
        self.C = np.full((n, n), pad)
        self.C[:N, :M] = work
        self.n = n
        # dual rounding grows with the largest (padding) cost
        self.tol = 1e-9 * (1.0 + span) + 1e-13 * pad
        self._span = span
        self._scale = None
        self._ints = {}
        self._table = None

    def effective(self, i: int, j: int) -> int:
        """Column of row ``i`` for tie-breaking; M when the pair does not count."""
        if i >= self.N or j >= self.M or self.prohibited[i, j]:
            return self.M
        return j

    def exact(self, i: int, j: int) -> int:
        """Exact cost of entry (i, j) as a scaled integer; padding costs nothing."""
        if i >= self.N or j >= self.M:
            return 0
        if self._scale is None:
            # every float is a dyadic rational, so a common power of two turns
            # all entries into integers; a prohibited pair weighs more than
            # any difference of feasible totals
            nz = self.D[self.D != 0]
            self._scale = int(53 - np.frexp(nz)[1].min()) if nz.size else 0
            self._big = (2 * self.n * (math.ceil(self._span) + 1)) << self._scale
        if self.prohibited[i, j]:
            return self._big
        val = self._ints.get((i, j))
        if val is None:
            m, e = math.frexp(float(self.D[i, j]))
            val = int(m * 2.0**53) << (self._scale - 53 + e) if m else 0
            self._ints[i, j] = val
        return val

    def exact_table(self) -> list:
        """All exact costs of the padded square as nested lists."""
        if self._table is None:
            self.exact(0, 0)   # fixes the scale
            m, e = np.frexp(self.D)
            mant = (m * 2.0**53).astype(np.int64).tolist()
            shift = (self._scale - 53 + e).tolist()
            bad = self.prohibited.tolist()
            table = [[0] * self.n for _ in range(self.n)]
            for i in range(self.N):
                row, mi, si, bi = table[i], mant[i], shift[i], bad[i]
                for j in range(self.M):
                    row[j] = self._big if bi[j] else (mi[j] << si[j] if mi[j] else 0)
            self._table = table
        return self._table

    def key(self, cols) -> int:
        return sum(self.exact(i, j) for i, j in enumerate(cols[:self.N]))


def _rotate(prob: _Problem, cols: list, tight: list, i: int, j: int):
    """Reassign row ``i`` to column ``j`` along an alternating cycle of tight entries.

    Rows before ``i`` keep their effective column: only a row whose pair
    does not count (prohibited or padding) may move, and only onto another
    such pair.  Returns the new column list, or None if no cycle exists.
    """
    M = prob.M

    def may_take(r, c):
        if r > i:
            return True
        return r < i and prob.effective(r, cols[r]) == M and prob.effective(r, c) == M

    owner = {c: r for r, c in enumerate(cols)}
    start = owner[j]
    target = cols[i]
    if start == i:
        return None
    # BFS over rows that must give up their column
    parent = {start: None}
    queue = deque([start])
    while queue:
        r = queue.popleft()
        for c in tight[r]:
            if c == cols[r] or not may_take(r, c):
                continue
            if c == target:
                new = list(cols)
                new[i] = j
                take, row = c, r
                while row is not None:
                    prev_col = new[row]
                    new[row] = take
                    take = prev_col
                    row = parent[row]
                return new
            nxt = owner[c]
            if nxt == i or nxt in parent:
                continue
            parent[nxt] = r
            queue.append(nxt)
    return None


def _row_graph(prob: _Problem, cols: list, tight: list):
    """Shortest paths in the exchange graph of the current assignment.

    Row ``a`` has an edge to the row ``b`` owning a tight column ``j``
    (``j`` not ``a``'s own), weighted ``cost(a, j) - cost(b, j)``: going
    round a cycle moves every row onto the next row's column and changes
    the total by the cycle weight.  Weights are exact.  Returns ``(dist,
    cycle)`` where ``cycle`` lists the rows of a negative cycle (each row
    takes the column of the row after it) or is None, in which case
    ``dist`` are valid potentials.
    """
    n = prob.n
    E = prob.exact_table()
    owner = {c: r for r, c in enumerate(cols)}
    edges = []
    for a in range(n):
        for j in tight[a]:
            if j != cols[a]:
                b = owner[j]
                edges.append((a, b, E[a][j] - E[b][j]))
    dist = [0] * n
    pred = [-1] * n
    for _ in range(n):
        last = -1
        for a, b, w in edges:
            cand = dist[a] + w
            if cand < dist[b]:
                dist[b], pred[b], last = cand, a, b
        if last < 0:
            return dist, None
    for _ in range(n):
        last = pred[last]
    cycle, r = [last], pred[last]
    while r != last:
        cycle.append(r)
        r = pred[r]
    return dist, cycle[::-1]


def _exact_tight(prob: _Problem, cols: list, tight: list) -> list:
    """Make ``cols`` exactly optimal and return the exactly tight entries.

    Floating-point duals cannot resolve cost differences below rounding, so
    cheaper alternatives may hide among the numerically tight entries;
    negative exchange cycles are applied until none is left.  The final
    potentials then single out the entries that lie on some exact optimum.
    """
    if sum(len(t) for t in tight) == prob.n:
        return cols, tight
    while True:
        dist, cycle = _row_graph(prob, cols, tight)
        if cycle is None:
            break
        new = list(cols)
        for a, b in zip(cycle, cycle[1:] + cycle[:1]):
            new[a] = cols[b]
        cols = new
    E = prob.exact_table()
    owner = {c: r for r, c in enumerate(cols)}
    level = [E[owner[j]][j] + dist[owner[j]] for j in range(prob.n)]
    exact_tight = [[j for j in tight[a] if E[a][j] + dist[a] == level[j]] for a in range(prob.n)]
    return cols, exact_tight


def _solve(D: np.ndarray, prohibited: np.ndarray | None = None) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.size == 0:
        raise ValueError(f"cannot solve an empty or non-2D matrix of shape {D.shape}")
    if not np.isfinite(D).all():
        raise ValueError("distance matrix contains non-finite entries")
    prob = _Problem(D, prohibited)
    cols, u, v = (_lsa_small if prob.n <= 64 else _lsa)(prob.C)
    cols = [int(c) for c in cols]
    is_tight = (prob.C - u[:, None] - v[None, :]) <= prob.tol
    tight = [[j for j, t in enumerate(row) if t] for row in is_tight.tolist()]
    M = prob.M
    if not any(j != cols[i] and (j < M or cols[i] < M) for i in range(prob.N) for j in tight[i]):
        return _to_matrix(prob, cols)   # no real row has an alternative: unique optimum
    cols, tight = _exact_tight(prob, cols, tight)
    best = prob.key(cols)
    # Lexicographic repair: every exact optimum is a perfect matching of the
    # exactly tight entries, so alternatives are alternating cycles there.
    for i in range(prob.N):
        cur = prob.effective(i, cols[i])
        for j in tight[i]:
            if prob.effective(i, j) >= cur:
                continue
            trial = _rotate(prob, cols, tight, i, j)
            if trial is not None and prob.key(trial) == best:
                cols = trial
                break
    return _to_matrix(prob, cols)


def _to_matrix(prob: _Problem, cols: list) -> np.ndarray:
    A = np.zeros((prob.N, prob.M), dtype=np.int8)
    for i, j in enumerate(cols[:prob.N]):
        if j < prob.M:
            A[i, j] = 1
    return A


def solve(D) -> np.ndarray:
    """Minimum-cost assignment with exactly min(N, M) matches.

    Returns an int8 0/1 matrix of the same shape as ``D``.
    """
    return _solve(D)


def solve_thresholded(D, tau: float) -> np.ndarray:
    """Assignment where pairs with ``D > tau`` may not be matched.

    The number of feasible matches is maximised first, then the total cost
    among such matchings.  Rows and columns left unmatched are all zero.
    """
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.size == 0:
        raise ValueError(f"cannot solve an empty or non-2D matrix of shape {D.shape}")
    bad = D > tau
    A = _solve(D, bad)
    A[bad] = 0
    return A


def assignment_cost(D, A) -> float:
    """Exact (fsum) total cost of the matched entries."""
    D = np.asarray(D, dtype=np.float64)
    return math.fsum(D[np.asarray(A) == 1].tolist())


def check_assignment(A, complete: bool = False) -> bool:
    """True if every row and column has at most one 1 (exactly min(N, M) ones if ``complete``)."""
    A = np.asarray(A)
    if not np.isin(A, (0, 1)).all():
        return False
    if (A.sum(axis=1) > 1).any() or (A.sum(axis=0) > 1).any():
        return False
    return not complete or int(A.sum()) == min(A.shape)
