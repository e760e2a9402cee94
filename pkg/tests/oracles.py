"""Slow, obviously-correct reference implementations used as test oracles.

None of these import the package code they check.
"""

import math
import random


def episodes_bruteforce(stays, start, days, gap=30):
    """Walk the window day by day, counting runs separated by >= gap empty days."""
    inside = sorted(d for d in set(int(s) for s in stays) if start <= d < start + days)
    episodes = 0
    prev = None
    for d in inside:
        if prev is None or d - prev >= gap:
            episodes += 1
        prev = d
    return episodes


def features_bruteforce(stays, t_o, t_b, gap=30):
    first = min(stays)
    width = t_o // t_b
    bins = [0] * t_b
    for d in stays:
        off = d - first
        if off < t_o:
            bins[min(off // width, t_b - 1)] += 1
    total = sum(1 for d in stays if d - first < t_o)
    return bins + [total, episodes_bruteforce(stays, first, t_o, gap)]


def weighted_mean_oracle(values, weights, rng=None):
    """Weighted mean of equal-length float lists, summed exactly in shuffled order."""
    rng = rng or random.Random(0)
    order = list(range(len(values)))
    rng.shuffle(order)
    total_w = math.fsum(weights[i] for i in order)
    n = len(values[0])
    return [math.fsum(weights[i] * values[i][j] for i in order) / total_w for j in range(n)]


def nearest_of_three(point, centres):
    """Index of the nearest centre; ties go to the lowest index."""
    best, best_d = 0, None
    for i, c in enumerate(centres):
        d = (point[0] - c[0]) ** 2 + (point[1] - c[1]) ** 2
        if best_d is None or d < best_d:
            best, best_d = i, d
    return best


def prf_oracle(cm):
    """Per-class (precision, recall, f1) from a nested-list confusion matrix."""
    k = len(cm)
    out = []
    for c in range(k):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(k)) - tp
        fn = sum(cm[c]) - tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out.append((p, r, f))
    return out
