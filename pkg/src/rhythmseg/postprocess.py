"""Per-sample labels -> events, and the short-event correction rules."""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError


class Event(NamedTuple):
    onset: int
    offset: int
    class_id: int

    @property
    def duration(self) -> int:
        return self.offset - self.onset


def extract_events(labels) -> list[Event]:
    """Run-length encode a label stream into maximal same-class events."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("cannot extract events from an empty label stream")
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [labels.size]])
    return [Event(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]


def events_to_labels(events, n: int | None = None) -> np.ndarray:
    if n is None:
        n = events[-1].offset
    out = np.full(n, -1, dtype=np.int64)
    for ev in events:
        out[ev.onset:ev.offset] = ev.class_id
    return out


def coalesce(events) -> list[Event]:
    out: list[Event] = []
    for ev in events:
        ev = Event(*ev)
        if out and out[-1].class_id == ev.class_id and out[-1].offset == ev.onset:
            out[-1] = Event(out[-1].onset, ev.offset, ev.class_id)
        else:
            out.append(ev)
    return out


def merge_short(events, min_len: int = 256) -> list[Event]:
    """Absorb events shorter than ``min_len`` into their neighbours.

    Leftmost short event first, repeated to a fixpoint:

    * both neighbours share a class: the three become one event of that class;
    * neighbours differ: the short event joins the longer neighbour (the left
      one on a tie);
    * only one neighbour (window edge): it joins that neighbour.

    A single event covering the window is always kept.
    """
    evs = coalesce(events)
    while len(evs) > 1:
        i = next((k for k, ev in enumerate(evs) if ev.duration < min_len), None)
        if i is None:
            break
        ev = evs[i]
        left = evs[i - 1] if i > 0 else None
        right = evs[i + 1] if i + 1 < len(evs) else None
        if left is not None and right is not None and left.class_id == right.class_id:
            evs[i - 1:i + 2] = [Event(left.onset, right.offset, left.class_id)]
        elif right is None or (left is not None and left.duration >= right.duration):
            evs[i - 1:i + 1] = [Event(left.onset, ev.offset, left.class_id)]
        else:
            evs[i:i + 2] = [Event(ev.onset, right.offset, right.class_id)]
        evs = coalesce(evs)
    return evs


def postprocess_labels(labels, min_len: int = 256) -> np.ndarray:
    labels = np.asarray(labels)
    return events_to_labels(merge_short(extract_events(labels), min_len), labels.size)


def write_events_csv(events, path):
    with Path(path).open("w") as fh:
        fh.write("onset,offset,class_id\n")
        for ev in events:
            fh.write(f"{ev[0]},{ev[1]},{ev[2]}\n")


def read_events_csv(path) -> list[Event]:
    from .signals import read_interval_csv

    return [Event(*row) for row in read_interval_csv(path)]
