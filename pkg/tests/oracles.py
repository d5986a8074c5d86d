"""Slow, independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np


def brute_force_assignment(cost):
    """All minimum-cost assignments of the smaller side, by enumeration.

    Returns ``(best_cost, [assignments])`` where each assignment is a sorted
    list of (row, col) pairs.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0, [[]]
    results = []
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            pairs = list(zip(range(n), cols))
            results.append((sum(cost[i, j] for i, j in pairs), pairs))
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = sorted(zip(rows, range(m)))
            results.append((sum(cost[i, j] for i, j in pairs), pairs))
    best = min(c for c, _ in results)
    tol = 1e-9 * max(1.0, abs(best))
    return best, [p for c, p in results if c <= best + tol]


def box_iou(a, b):
    w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = w * h
    if inter == 0:
        return 0.0
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def brute_force_isotonic(x, y, w):
    """Weighted monotone least squares by enumerating contiguous partitions.

    The optimum is constant on contiguous blocks of the x-sorted points at
    the blocks' weighted means, so checking every partition whose block
    means are nondecreasing finds it. Returns (objective, fitted values in
    input order). Assumes distinct x.
    """
    order = np.argsort(x)
    ys, ws = np.asarray(y, float)[order], np.asarray(w, float)[order]
    n = len(ys)
    best, best_fit = math.inf, None
    for cuts in itertools.product((False, True), repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            means.append(np.dot(ws[lo:hi], ys[lo:hi]) / ws[lo:hi].sum())
        if any(b < a for a, b in zip(means, means[1:])):
            continue
        fit = np.concatenate([[m] * (hi - lo) for m, lo, hi
                              in zip(means, bounds[:-1], bounds[1:])])
        obj = float(np.dot(ws, (fit - ys) ** 2))
        if obj < best:
            best, best_fit = obj, fit
    out = np.empty(n)
    out[order] = best_fit
    return best, out


def normal_quantile_bisection(p):
    """Standard normal quantile by bisection on the erfc-based CDF."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def krippendorff_nominal_pairs(units):
    """Nominal alpha from explicit value pairs; ``units`` is a list of value lists."""
    units = [u for u in units if len(u) >= 2]
    values = [v for u in units for v in u]
    n = len(values)
    d_o = 0.0
    for u in units:
        m = len(u)
        d_o += sum(u[i] != u[j] for i in range(m) for j in range(m) if i != j) / (m - 1)
    d_o /= n
    d_e = sum(values[i] != values[j] for i in range(n) for j in range(n) if i != j)
    d_e /= n * (n - 1)
    if d_e == 0:
        return 1.0
    return 1.0 - d_o / d_e


def finite_difference(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g
