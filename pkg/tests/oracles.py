"""Independent reference implementations used only by the tests.

Each one takes the slow, obvious route (enumeration, textbook formulas,
plain sorting) and shares no code with the package.
"""

import math
from fractions import Fraction


def pearson_textbook(x, y):
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    sxy = sum(a * b for a, b in zip(x, y))
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


def kendall_pairs(x, y):
    """Concordant / discordant counts by enumerating every pair of time points."""
    nc = nd = 0
    for a in range(len(x)):
        for b in range(a + 1, len(x)):
            s = (x[b] - x[a]) * (y[b] - y[a])
            if s > 0:
                nc += 1
            elif s < 0:
                nd += 1
    return nc, nd


def kendall_tau_a(x, y):
    nc, nd = kendall_pairs(x, y)
    t = len(x)
    return (nc - nd) / (t * (t - 1) / 2)


def lagged_corr_loops(x, y, lag):
    """Overlap-window cross-correlation with full-series means, written as loops."""
    t = len(x)
    mx, my = sum(x) / t, sum(y) / t
    num = sxx = syy = 0.0
    for i in range(t):
        j = i + lag
        if 0 <= j < t:
            a, b = x[i] - mx, y[j] - my
            num += a * b
            sxx += a * a
            syy += b * b
    return num / math.sqrt(sxx * syy)


def top_k_abs_mask(z, alpha):
    """Keep the ceil(alpha% * T) largest |z|, plus anything tied with the last kept."""
    t = len(z)
    k = math.ceil(Fraction(alpha) * t / 100)
    cut = sorted((abs(v) for v in z), reverse=True)[k - 1]
    return [abs(v) >= cut for v in z]


def naive_average_ranks(values, descending=False):
    """1-based average ranks by sorting and grouping equal runs."""
    order = sorted(range(len(values)), key=lambda i: values[i], reverse=descending)
    ranks = [0.0] * len(values)
    pos = 0
    while pos < len(order):
        end = pos
        while end + 1 < len(order) and values[order[end + 1]] == values[order[pos]]:
            end += 1
        for k in range(pos, end + 1):
            ranks[order[k]] = (pos + 1 + end + 1) / 2
        pos = end + 1
    return ranks


def top_positive_edges(matrix, fraction):
    """Sort-based sparsification oracle: list of (i, j) for the kept entries."""
    n = len(matrix)
    entries = sorted(
        ((matrix[i][j], i, j) for i in range(n) for j in range(i + 1, n) if matrix[i][j] > 0),
        reverse=True,
    )
    k = math.floor(Fraction(fraction).limit_denominator(10**6) * n * (n - 1) / 2)
    if k == 0:
        return []
    if len(entries) <= k:
        return sorted((i, j) for _, i, j in entries)
    cut = entries[k - 1][0]
    return sorted((i, j) for v, i, j in entries if v >= cut)
