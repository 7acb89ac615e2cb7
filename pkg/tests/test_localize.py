import numpy as np
import pytest
from hypothesis import given, strategies as st

from imuvie.core import ActivityClass
from imuvie.errors import InvalidTimeline, NotAPickup
from imuvie.localize import LocalizedEvent, duration_filter, measure_top, segment_events


def rle_oracle(classes):
    """Plain loop over the timeline; yields (s, e) in ms for each pickup run."""
    out, start = [], None
    for i, c in enumerate(classes):
        if c == 1 and start is None:
            start = i
        if c != 1 and start is not None:
            out.append((start * 10, (i - 1) * 10))
            start = None
    if start is not None:
        out.append((start * 10, (len(classes) - 1) * 10))
    return out


def _timeline(classes):
    return [(10 * i, ActivityClass(int(c))) for i, c in enumerate(classes)]


def test_hundred_frames_is_one_second():
    events = segment_events(_timeline([0] * 5 + [1] * 100 + [0] * 5))
    assert len(events) == 1 and events[0].top_ms == 1000
    assert (events[0].s_ms, events[0].e_ms) == (50, 1040)


def test_empty_and_isolated():
    assert segment_events([]) == []
    assert segment_events(_timeline([0, 0, 0])) == []
    ev = segment_events(_timeline([0, 1, 0]))
    assert ev == [LocalizedEvent(10, 10)] and ev[0].top_ms == 10


def test_unsorted_rejected():
    with pytest.raises(InvalidTimeline):
        segment_events([(10, ActivityClass.PICKUP), (0, ActivityClass.PICKUP)])
    with pytest.raises(InvalidTimeline):
        segment_events([(0, ActivityClass.PICKUP), (20, ActivityClass.PICKUP)])


def test_array_input_matches_tuples(rng):
    c = rng.integers(0, 2, 500)
    assert segment_events((np.arange(500) * 10, c)) == segment_events(_timeline(c))


def test_segment_oracle_random(rng):
    for _ in range(2000):
        c = (rng.random(int(rng.integers(0, 120))) < rng.random()).astype(int)
        got = [(e.s_ms, e.e_ms) for e in segment_events(_timeline(c))]
        assert got == rle_oracle(c)
        # ToP totals count pickup timestamps
        assert sum(measure_top(e) for e in segment_events(_timeline(c))) == 10 * int(c.sum())


def test_segment_with_offset_timeline():
    tl = [(5000 + 10 * i, ActivityClass(c)) for i, c in enumerate([1, 1, 0, 1])]
    assert [(e.s_ms, e.e_ms) for e in segment_events(tl)] == [(5000, 5010), (5030, 5030)]


def test_duration_filter_examples():
    short, long_ = LocalizedEvent(0, 0), LocalizedEvent(100, 1090)
    assert duration_filter([short, long_], 300) == [long_]
    assert duration_filter([short, long_], 0) == [short, long_]


@given(st.lists(st.tuples(st.integers(0, 500), st.integers(0, 200)), max_size=30),
       st.integers(0, 3000), st.integers(0, 3000))
def test_duration_filter_properties(spans, t1, t2):
    events = [LocalizedEvent(10 * a, 10 * (a + b)) for a, b in spans]
    once = duration_filter(events, t1)
    assert once == [e for e in events if e.top_ms >= t1]
    assert duration_filter(once, t1) == once
    lo, hi = sorted((t1, t2))
    assert set(duration_filter(events, hi)) <= set(duration_filter(events, lo))


def test_measure_top():
    assert measure_top(LocalizedEvent(1000, 1990)) == 1000
    assert measure_top(LocalizedEvent(500, 500)) == 10
    with pytest.raises(NotAPickup):
        measure_top(LocalizedEvent(0, 10, ActivityClass.BACKGROUND))


def test_event_validation():
    with pytest.raises(ValueError):
        LocalizedEvent(20, 10)
    with pytest.raises(ValueError):
        LocalizedEvent(5, 10)
    e = LocalizedEvent(100, 200)
    assert e.contains(100) and e.contains(209) and not e.contains(210)
    assert e.to_dict() == {"s_ms": 100, "e_ms": 200, "a": "pickup", "top_ms": 110}


def test_round_trip_single_event():
    tl = [(10 * i, ActivityClass.PICKUP) for i in range(30, 80)]
    assert segment_events(tl) == [LocalizedEvent(300, 790)]
