import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rhythmseg.errors import DataError
from rhythmseg.postprocess import (
    Event,
    coalesce,
    events_to_labels,
    extract_events,
    merge_short,
    postprocess_labels,
    read_events_csv,
    write_events_csv,
)

AFIB, SBR, VT, X = 1, 2, 3, 7


@st.composite
def event_lists(draw, max_events=12, max_len=600, classes=4):
    lengths = draw(st.lists(st.integers(1, max_len), min_size=1, max_size=max_events))
    labels = draw(st.lists(st.integers(0, classes - 1), min_size=len(lengths), max_size=len(lengths)))
    events, pos = [], 0
    for n, c in zip(lengths, labels):
        events.append(Event(pos, pos + n, c))
        pos += n
    return events


def check_invariants(events, out, min_len):
    assert out[0].onset == events[0].onset and out[-1].offset == events[-1].offset
    for a, b in zip(out, out[1:]):
        assert a.offset == b.onset
        assert a.class_id != b.class_id
    if len(out) > 1:
        assert all(ev.duration >= min_len for ev in out)


class TestWorkedExamples:
    def test_same_class_neighbours_merge(self):
        out = merge_short([Event(0, 1800, AFIB), Event(1800, 1900, X), Event(1900, 2560, AFIB)], 256)
        assert out == [Event(0, 2560, AFIB)]

    def test_longer_neighbour_absorbs(self):
        out = merge_short([Event(0, 1792, SBR), Event(1792, 1996, AFIB), Event(1996, 2560, VT)], 256)
        assert out == [Event(0, 1996, SBR), Event(1996, 2560, VT)]


class TestRules:
    def test_right_neighbour_when_longer(self):
        out = merge_short([Event(0, 300, 0), Event(300, 400, 1), Event(400, 1000, 2)], 256)
        assert out == [Event(0, 300, 0), Event(300, 1000, 2)]

    def test_tie_goes_left(self):
        out = merge_short([Event(0, 300, 0), Event(300, 400, 1), Event(400, 700, 2)], 256)
        assert out[0] == Event(0, 400, 0)

    def test_window_edges(self):
        assert merge_short([Event(0, 100, 1), Event(100, 2560, 0)], 256) == [Event(0, 2560, 0)]
        assert merge_short([Event(0, 2400, 0), Event(2400, 2560, 1)], 256) == [Event(0, 2560, 0)]

    def test_single_short_event_kept(self):
        assert merge_short([Event(0, 100, 3)], 256) == [Event(0, 100, 3)]

    def test_cascade_of_short_events(self):
        evs = [Event(0, 50, 0), Event(50, 100, 1), Event(100, 150, 2), Event(150, 1000, 3)]
        assert merge_short(evs, 256) == [Event(0, 1000, 3)]

    def test_min_len_one_is_noop(self):
        evs = [Event(0, 1, 0), Event(1, 3, 1), Event(3, 4, 0)]
        assert merge_short(evs, 1) == evs

    def test_coalesce(self):
        assert coalesce([(0, 5, 1), (5, 9, 1), (9, 10, 2)]) == [Event(0, 9, 1), Event(9, 10, 2)]


class TestLabels:
    def test_extract_roundtrip(self):
        labels = np.array([0, 0, 2, 2, 2, 1, 0])
        evs = extract_events(labels)
        assert evs == [Event(0, 2, 0), Event(2, 5, 2), Event(5, 6, 1), Event(6, 7, 0)]
        assert np.array_equal(events_to_labels(evs), labels)

    def test_empty(self):
        with pytest.raises(DataError):
            extract_events([])

    def test_postprocess_labels(self):
        labels = np.repeat([0, 1, 0], [300, 20, 300])
        assert np.array_equal(postprocess_labels(labels, 256), np.zeros(620, int))

    def test_csv_roundtrip(self, tmp_path):
        evs = [Event(0, 1996, SBR), Event(1996, 2560, VT)]
        write_events_csv(evs, tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text().splitlines()[0] == "onset,offset,class_id"
        assert read_events_csv(tmp_path / "e.csv") == evs


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(event_lists(), st.integers(1, 400))
    def test_coverage_and_min_length(self, events, min_len):
        check_invariants(events, merge_short(events, min_len), min_len)

    @settings(max_examples=300, deadline=None)
    @given(event_lists(), st.integers(1, 400))
    def test_idempotent(self, events, min_len):
        once = merge_short(events, min_len)
        assert merge_short(once, min_len) == once

    @settings(max_examples=200, deadline=None)
    @given(event_lists(), st.integers(1, 400))
    def test_long_events_survive_in_place(self, events, min_len):
        # a long event is only ever extended, never relabelled or dropped
        out = events_to_labels(merge_short(events, min_len))
        for ev in coalesce(events):
            if ev.duration >= min_len:
                assert np.all(out[ev.onset:ev.offset] == ev.class_id)
