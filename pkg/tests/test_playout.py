import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from cpnsim.core import to_ns
from cpnsim.metrics import run_lengths
from cpnsim.playout import Action, JitterBuffer, replay
from oracles import reorder_flags, sorted_playout

MS = 1_000_000


def stream(order, gap_ms=20, net_ms=10):
    """``order`` lists seqs in arrival order; sends are every ``gap_ms``; arrivals follow."""
    out = []
    for k, seq in enumerate(order):
        out.append((seq, seq * gap_ms * MS, max(seq * gap_ms * MS, k * gap_ms * MS) + net_ms * MS))
    return out


def test_ideal_buffer_plays_in_order():
    buf = replay(stream(range(50)), capacity=None, hold_timeout_s=math.inf)
    assert [p.seq for p in buf.played] == list(range(50))
    assert buf.discards_late == buf.discards_overflow == 0


def test_in_order_packets_play_at_send_plus_offset():
    buf = replay(stream(range(20)), capacity=20, playout_offset_s=0.080)
    assert all(p.play_ns == p.send_ns + 80 * MS for p in buf.played)


def test_capacity_one_overflows_on_the_earlier_seq():
    buf = JitterBuffer(capacity=1, hold_timeout_s=math.inf, playout_offset_s=1.0, first_seq=1)
    assert buf.insert(2, 0, 10) is Action.BUFFERED
    assert buf.insert(1, 0, 20) is Action.DISCARD_OVERFLOW
    assert buf.overflow_seqs == [1]


def test_drop_head_option_discards_the_queued_packet():
    buf = JitterBuffer(capacity=1, hold_timeout_s=math.inf, playout_offset_s=1.0,
                       drop_head_on_overflow=True)
    buf.insert(1, 0, 10)
    assert buf.insert(2, 0, 20) is Action.BUFFERED
    assert buf.overflow_seqs == [1]
    assert buf.next_play_seq == 2


def test_gap_timeout_trace():
    # seq 1 and 3 arrive, 2 is missing; hold 50 ms
    buf = JitterBuffer(capacity=10, hold_timeout_s=0.050, playout_offset_s=0.0, first_seq=1)
    buf.insert(1, 0, 5 * MS)
    assert [p.seq for p in buf.played] == [1]
    buf.insert(3, 40 * MS, 45 * MS)
    assert buf.release(94 * MS) == []
    played = buf.release(95 * MS)
    assert [p.seq for p in played] == [3] and played[0].play_ns == 95 * MS
    assert buf.insert(2, 20 * MS, 100 * MS) is Action.DISCARD_LATE
    # scripted oracle of the same three steps
    expected = {1: 5 * MS, 3: 45 * MS + 50 * MS}
    assert {p.seq: p.play_ns for p in buf.played} == expected


def test_zero_hold_turns_reordering_into_loss():
    buf = replay(stream([0, 1, 3, 2, 4]), capacity=None, hold_timeout_s=0.0)
    assert buf.late_seqs == [2]


def test_duplicates_are_counted_separately():
    buf = JitterBuffer(capacity=5)
    buf.insert(0, 0, 1)
    assert buf.insert(0, 0, 2) is Action.DUPLICATE
    assert buf.duplicates == 1 and buf.inserted == 1


def test_invalid_parameters():
    with pytest.raises(ValueError):
        JitterBuffer(capacity=0)
    with pytest.raises(ValueError):
        JitterBuffer(hold_timeout_s=-1)


permuted = st.lists(st.integers(0, 39), unique=True, min_size=1, max_size=40)


def arrivals_for(order, rng_seed=0):
    rng = random.Random(rng_seed)
    t = 0
    out = []
    for seq in order:
        t += rng.randrange(0, 30 * MS)
        out.append((seq, seq * 20 * MS, max(t, seq * 20 * MS)))
    return out


@settings(max_examples=100, deadline=None)
@given(permuted, st.sampled_from([None, 1, 3, 20]), st.sampled_from([0.0, 0.03, math.inf]),
       st.booleans())
def test_buffer_invariants(order, capacity, hold, drop_head):
    buf = replay(arrivals_for(order), capacity=capacity, hold_timeout_s=hold,
                 drop_head_on_overflow=drop_head, flush=False)
    seqs = [p.seq for p in buf.played]
    assert seqs == sorted(set(seqs))
    assert buf.max_queue <= (capacity or len(order))
    assert len(buf.played) + buf.discards_late + buf.discards_overflow + len(buf) == buf.inserted
    assert not set(seqs) & set(buf.late_seqs + buf.overflow_seqs)
    for p in buf.played:
        assert p.play_ns >= p.send_ns + buf.offset_ns


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(40))))
def test_ideal_buffer_is_a_sorter(order):
    recs = arrivals_for(order, 1)
    buf = replay(recs, capacity=None, hold_timeout_s=math.inf)
    assert [p.seq for p in buf.played] == sorted_playout(recs)
    assert buf.discards_late == buf.discards_overflow == 0


def _overtaken(n, starts, run_len):
    """Arrival order where, at each start, the next ``run_len`` packets are overtaken
    by the ``run_len`` after them, as after a switch to a faster path."""
    order = list(range(n))
    for i in starts:
        slow, fast = order[i:i + run_len], order[i + run_len:i + 2 * run_len]
        order[i:i + 2 * run_len] = fast + slow
    return order


def test_bursty_reordering_overflows_more_than_isolated():
    n = 600
    bursty = _overtaken(n, range(0, 600, 100), 8)
    isolated = _overtaken(n, range(0, 576, 12), 1)
    overflow = {}
    for label, order in (("bursty", bursty), ("isolated", isolated)):
        flags = reorder_flags(order)
        assert sum(flags) == 48
        assert max(run_lengths(flags)) == (8 if label == "bursty" else 1)
        # arrivals every 20 ms, 200 ms after the earliest possible send
        recs = [(seq, seq * 20 * MS, k * 20 * MS + 200 * MS) for k, seq in enumerate(order)]
        buf = replay(recs, capacity=3, hold_timeout_s=0.200, playout_offset_s=0.0)
        overflow[label] = buf.discards_overflow
    assert overflow["isolated"] == 0
    assert overflow["bursty"] > overflow["isolated"]


def test_offsets_in_ns():
    assert JitterBuffer(playout_offset_s=0.08).offset_ns == to_ns(0.08)
