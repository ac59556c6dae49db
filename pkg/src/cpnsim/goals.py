"""QoS goal measurements: forward delay, IPDV, smoothed jitter, reward, mailbox."""

from __future__ import annotations

from dataclasses import dataclass

from .core import QosGoal

DEFAULT_EPSILON_S = 1e-3


class NegativeInterval(ValueError):
    pass


def forward_delay_estimate(ack_arrival_s: float, dp_stamp_at_node_s: float) -> float:
    """Half the time between a packet passing a node and its ack returning there."""
    if ack_arrival_s < dp_stamp_at_node_s:
        raise NegativeInterval(
            f"ack at {ack_arrival_s} precedes packet stamp {dp_stamp_at_node_s}")
    return (ack_arrival_s - dp_stamp_at_node_s) / 2


def ipdv(delay_s: float, prev_delay_s: float) -> float:
    return abs(delay_s - prev_delay_s)


def smooth_jitter(prev_smoothed_s: float, ipdv_s: float) -> float:
    return prev_smoothed_s / 2 + ipdv_s / 2


def reward_from_goal(goal: QosGoal, measured_s: float,
                     epsilon_s: float = DEFAULT_EPSILON_S) -> float:
    """``1 / (measured + epsilon)``.

    ``measured_s`` is the smoothed jitter for the Jitter goal and the
    forward delay for the Delay goal.
    """
    if epsilon_s <= 0:
        raise ValueError("epsilon must be positive")
    if measured_s < 0:
        raise ValueError(f"measurement must be non-negative, got {measured_s}")
    return 1.0 / (measured_s + epsilon_s)


@dataclass
class MailboxEntry:
    key: tuple
    last_delay_s: float
    smoothed_jitter_s: float
    last_reward: float
    updated_at: int
    samples: int = 1

    def measurement(self, goal: QosGoal) -> float:
        return self.smoothed_jitter_s if goal is QosGoal.JITTER else self.last_delay_s


class Mailbox:
    """Per-node store of the latest goal measurements.

    IPDV state is kept per ``(goal, destination, flow)`` when
    ``per_flow`` is true, otherwise per ``(goal, destination)``. The latest
    reward for each ``(goal, destination)`` pair is always available
    through :meth:`class_reward`.

    The first deposit has no predecessor; it stores the delay and a zero
    jitter. The second deposit's IPDV then seeds the smoothed jitter
    directly, and later ones are folded in with :func:`smooth_jitter`.
    """

    def __init__(self, epsilon_s: float = DEFAULT_EPSILON_S, per_flow: bool = True):
        self.epsilon_s = epsilon_s
        self.per_flow = per_flow
        self._entries: dict = {}
        self._class_reward: dict = {}

    def key_for(self, goal: QosGoal, destination: int, flow=None) -> tuple:
        return (goal, destination, flow if self.per_flow else None)

    def deposit(self, goal: QosGoal, destination: int, flow, delay_s: float,
                now_ns: int) -> MailboxEntry:
        key = self.key_for(goal, destination, flow)
        entry = self._entries.get(key)
        if entry is None:
            entry = MailboxEntry(key, delay_s, 0.0, 0.0, now_ns, samples=1)
            self._entries[key] = entry
        else:
            sample = ipdv(delay_s, entry.last_delay_s)
            if entry.samples == 1:
                entry.smoothed_jitter_s = sample
            else:
                entry.smoothed_jitter_s = smooth_jitter(entry.smoothed_jitter_s, sample)
            entry.last_delay_s = delay_s
            entry.updated_at = now_ns
            entry.samples += 1
        entry.last_reward = reward_from_goal(goal, entry.measurement(goal), self.epsilon_s)
        self._class_reward[(goal, destination)] = entry.last_reward
        return entry

    def read(self, goal: QosGoal, destination: int, flow=None) -> MailboxEntry | None:
        return self._entries.get(self.key_for(goal, destination, flow))

    def class_reward(self, goal: QosGoal, destination: int) -> float:
        """Latest reward for the pair, or the zero-measurement reward if none yet."""
        r = self._class_reward.get((goal, destination))
        if r is None:
            return reward_from_goal(goal, 0.0, self.epsilon_s)
        return r

    def __len__(self) -> int:
        return len(self._entries)
