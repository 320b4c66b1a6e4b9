"""Slow, obviously-correct reference implementations used only by the tests."""
from __future__ import annotations

import itertools

INF = float("inf")


def empty_cells(grid):
    return [(x, y) for y, row in enumerate(grid) for x, v in enumerate(row) if v == 0]


def neighbours(grid, x, y):
    h, w = len(grid), len(grid[0])
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nx, ny = x + dx, y + dy
        if 0 <= nx < w and 0 <= ny < h and grid[ny][nx] == 0:
            yield nx, ny


def flood_fill_regions(grid) -> int:
    seen = set()
    regions = 0
    for cell in empty_cells(grid):
        if cell in seen:
            continue
        regions += 1
        stack = [cell]
        seen.add(cell)
        while stack:
            x, y = stack.pop()
            for nb in neighbours(grid, x, y):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
    return regions


def floyd_warshall_longest(grid) -> int:
    cells = empty_cells(grid)
    index = {c: i for i, c in enumerate(cells)}
    n = len(cells)
    dist = [[0 if i == j else INF for j in range(n)] for i in range(n)]
    for (x, y), i in index.items():
        for nb in neighbours(grid, x, y):
            dist[i][index[nb]] = 1
    for k in range(n):
        dk = dist[k]
        for i in range(n):
            dik = dist[i][k]
            if dik == INF:
                continue
            di = dist[i]
            for j in range(n):
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    best = 0
    for i, j in itertools.product(range(n), repeat=2):
        if dist[i][j] != INF and dist[i][j] > best:
            best = dist[i][j]
    return int(best)


def brute_force_matched(a, b) -> int:
    """Ratcliff-Obershelp matched-token count by exhaustive block search.

    Picks the longest common block; ties go to the smallest start in ``a``,
    then the smallest start in ``b``. Recurses on the left and right flanks.
    """
    if not a or not b:
        return 0
    best = (0, 0, 0)
    for i in range(len(a)):
        for j in range(len(b)):
            k = 0
            while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                k += 1
            if k > best[2]:
                best = (i, j, k)
    i, j, k = best
    if k == 0:
        return 0
    return k + brute_force_matched(a[:i], b[:j]) + brute_force_matched(a[i + k :], b[j + k :])


def brute_force_similarity(a, b) -> float:
    if not a and not b:
        return 1.0
    return 2.0 * brute_force_matched(list(a), list(b)) / (len(a) + len(b))
