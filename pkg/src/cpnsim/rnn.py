"""Random neural network routing state and its reinforcement-learning update.

One :class:`RnnState` exists per (node, QoS goal, destination); neuron ``i``
stands for the node's ``i``-th outgoing link.
"""

from __future__ import annotations

import csv
import math
import random
from operator import mul
from dataclasses import dataclass, field

Q_CEILING = 1.0 - 1e-12
TOLERANCE = 1e-8
MAX_ITERATIONS = 10_000


class NonConvergence(RuntimeError):
    pass


class DegenerateFanout(ValueError):
    pass


@dataclass
class RnnState:
    w_plus: list
    w_minus: list
    lambda_ext: list
    threshold: float = 0.0
    decisions: int = 0
    smoothing: float = 0.8
    # lower bound on every firing rate, so an all-zero row stays solvable
    rate_floor: float = 0.0
    _q: list | None = field(default=None, repr=False)
    _rates: list | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, n: int, weight: float = 0.5, lam: float = 1.0,
                smoothing: float = 0.8) -> "RnnState":
        if n < 1:
            raise DegenerateFanout(f"an RNN needs at least one neuron, got {n}")
        w = [[0.0 if i == j else weight for j in range(n)] for i in range(n)]
        return cls([row[:] for row in w], [row[:] for row in w], [lam] * n,
                    smoothing=smoothing)

    @property
    def n(self) -> int:
        return len(self.lambda_ext)

    def firing_rates(self) -> list:
        f = self.rate_floor
        return [max(f, sum(p) + sum(m)) for p, m in zip(self.w_plus, self.w_minus)]

    @property
    def rates(self) -> list:
        """Firing rates, cached: rl_update keeps them fixed by construction.

        Call :meth:`invalidate` after editing the weights by hand.
        """
        if self._rates is None:
            self._rates = self.firing_rates()
        return self._rates

    def invalidate(self) -> None:
        self._rates = None
        self._q = None

    @property
    def q(self) -> list:
        # Solved lazily: rl_update invalidates, the next read re-solves.
        if self._q is None:
            solve_steady_state(self)
        return self._q

    @property
    def solved(self) -> bool:
        return self._q is not None


def _step(state: RnnState, q: list, rates: list, cols=None) -> list:
    if cols is None:
        cols = (list(zip(*state.w_plus)), list(zip(*state.w_minus)))
    cp, cm = cols
    out = []
    for lam, rate, colp, colm in zip(state.lambda_ext, rates, cp, cm):
        v = (lam + sum(map(mul, q, colp))) / (rate + sum(map(mul, q, colm)))
        out.append(0.0 if v < 0.0 else (Q_CEILING if v > Q_CEILING else v))
    return out


def solve_steady_state(state: RnnState, tol: float = TOLERANCE,
                       max_iter: int = MAX_ITERATIONS) -> list:
    """Fixed-point iteration for the neuron potentials, starting from zero.

    Stops once no component moves by ``tol`` or more, stores the result in
    ``state`` and returns it.
    """
    rates = state.rates
    if min(rates) <= 0:
        raise NonConvergence(f"non-positive firing rate in {rates}")
    q = [0.0] * state.n
    cols = (list(zip(*state.w_plus)), list(zip(*state.w_minus)))
    for _ in range(max_iter):
        nxt = _step(state, q, rates, cols)
        delta = max(abs(a - b) for a, b in zip(nxt, q))
        q = nxt
        if delta < tol:
            state._q = q
            return q
    raise NonConvergence(f"no fixed point after {max_iter} iterations")


def residual(state: RnnState, q: list) -> float:
    """Largest component of ``|F(q) - q|``."""
    nxt = _step(state, q, state.firing_rates())
    return max(abs(a - b) for a, b in zip(nxt, q))


def argmax(values, allowed=None) -> int:
    best = None
    for i, v in enumerate(values):
        if allowed is not None and i not in allowed:
            continue
        if best is None or v > values[best]:
            best = i
    if best is None:
        raise DegenerateFanout("no eligible neuron")
    return best


def select_output(state: RnnState, rng: random.Random, explore_prob: float = 0.05,
                  allowed=None) -> int:
    """Pick the most excited neuron, or with ``explore_prob`` any other one.

    ``allowed`` optionally restricts the choice to a subset of indices.
    Ties go to the lowest index. Exploration draws uniformly among the
    eligible indices other than the winner.
    """
    q = state.q
    best = argmax(q, allowed)
    if explore_prob <= 0.0:
        return best
    if explore_prob < 1.0 and rng.random() >= explore_prob:
        return best
    pool = [i for i in (range(state.n) if allowed is None else sorted(allowed)) if i != best]
    if not pool:
        return best
    return pool[rng.randrange(len(pool))]


def rl_update(state: RnnState, chosen: int, reward: float) -> RnnState:
    """Reward or punish neuron ``chosen`` against the smoothed-reward threshold.

    Rows are rescaled afterwards so every neuron keeps its firing rate.
    Mutates and returns ``state``.
    """
    n = len(state.lambda_ext)
    if n < 2:
        raise DegenerateFanout(f"rl_update needs n >= 2, got {n}")
    if not 0 <= chosen < n:
        raise IndexError(f"neuron {chosen} out of range for n={n}")
    if not reward > 0 or math.isinf(reward):
        raise ValueError(f"reward must be finite and positive, got {reward}")

    before = state.rates
    prev = state.threshold
    spread = reward / (n - 2) if n > 2 else 0.0
    # reward: excite the chosen link, inhibit the rest; punish: the reverse
    if reward >= prev:
        boost, spread_to = state.w_plus, state.w_minus
    else:
        boost, spread_to = state.w_minus, state.w_plus
    wp, wm = state.w_plus, state.w_minus
    for i in range(n):
        if i == chosen:
            continue
        boost[i][chosen] += reward
        if spread:
            row = spread_to[i]
            for j in range(n):
                if j != i and j != chosen:
                    row[j] += spread
        p, m = wp[i], wm[i]
        scale = before[i] / (sum(p) + sum(m))
        wp[i] = [w * scale for w in p]
        wm[i] = [w * scale for w in m]

    a = state.smoothing
    state.threshold = a * prev + (1.0 - a) * reward
    state.decisions += 1
    state._q = None
    return state


DUMP_HEADER = ["node", "goal", "destination", "decisions", "threshold", "q",
               "w_plus", "w_minus"]


def dump_row(node, goal, destination, state: RnnState) -> list:
    def flat(m):
        return ";".join(f"{w:.9g}" for row in m for w in row)
    return [node, getattr(goal, "value", goal), destination, state.decisions,
            f"{state.threshold:.9g}", ";".join(f"{v:.9g}" for v in state.q),
            flat(state.w_plus), flat(state.w_minus)]


def write_dump(path, rows) -> None:
    """Write ``dump_row`` output as CSV with a header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DUMP_HEADER)
        w.writerows(rows)
