"""Independent reference computations the tests compare the package against.

Each one is written from the defining rule, not from the package code.
"""

from __future__ import annotations

import heapq
import math
from itertools import groupby


def reorder_flags(arrivals):
    """A packet is reordered when some earlier arrival carried a larger sequence number."""
    flags = []
    for k, s in enumerate(arrivals):
        flags.append(any(arrivals[j] > s for j in range(k)))
    return flags


def run_length_density(flags):
    total = 0
    for is_set, grp in groupby(flags):
        if is_set:
            k = len(list(grp))
            total += 1 if k == 1 else k * k
    return total


def two_neuron_q(w_plus, w_minus, lam):
    """Closed-form steady state of a 2-neuron network (positive root of a quadratic).

    q0 = (L0 + a q1) / (r0 + b q1),  q1 = (L1 + c q0) / (r1 + d q0)
    with a = w+[1][0], b = w-[1][0], c = w+[0][1], d = w-[0][1].
    """
    a, b = w_plus[1][0], w_minus[1][0]
    c, d = w_plus[0][1], w_minus[0][1]
    r0 = w_plus[0][1] + w_minus[0][1]
    r1 = w_plus[1][0] + w_minus[1][0]
    l0, l1 = lam
    A = r0 * d + b * c
    B = r0 * r1 + b * l1 - l0 * d - a * c
    C = -(l0 * r1 + a * l1)
    if A == 0:
        q0 = -C / B
    else:
        q0 = (-B + math.sqrt(B * B - 4 * A * C)) / (2 * A)
    q1 = (l1 + c * q0) / (r1 + d * q0)
    return [q0, q1]


def ewma(rewards, factor=0.8, start=0.0):
    t = start
    for r in rewards:
        t = factor * t + (1 - factor) * r
    return t


def smoothed_jitter_trace(delays):
    """Scalar replay: no IPDV for the first delay, the second seeds J, then halve-and-add."""
    out, prev, j = [], None, None
    for d in delays:
        if prev is not None:
            x = abs(d - prev)
            j = x if j is None else 0.5 * j + 0.5 * x
        prev = d
        out.append(0.0 if j is None else j)
    return out


def pearson_two_pass(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))
    return num / den


def spearman(x, y):
    def ranks(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for k in range(i, j + 1):
                r[order[k]] = (i + j) / 2 + 1
            i = j + 1
        return r
    return pearson_two_pass(ranks(x), ranks(y))


def lindley_departures(arrivals):
    """FIFO single server: ``arrivals`` is a list of (t_ns, service_ns) in queue order."""
    out, free = [], 0
    for t, s in arrivals:
        start = max(t, free)
        free = start + s
        out.append(free)
    return out


def sorted_playout(records):
    """Ideal resequencer: everything played, in sequence order."""
    return [seq for seq, _, _ in sorted(records)]


def merge_in_time(*streams):
    return list(heapq.merge(*streams))
