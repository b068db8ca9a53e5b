"""Episode (IoU-matched) and duration (sample-overlap) precision / recall / F1.

Counts are summed across windows before ratios are taken::

    counts = {}
    for pred, truth in windows:
        merge_counts(counts, count(pred, truth))
    rep = report_from_counts(counts)
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError, DataError
from .postprocess import Event

REGIMES = ("episode", "duration")


def iou(a, b) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    return inter / (max(a[1], b[1]) - min(a[0], b[0]))


def match_episodes(pred, truth, thresh: float = 0.7) -> dict[int, tuple[int, int, int]]:
    """Per-class ``(TP, FP, FN)`` from greedy one-to-one matching by descending IoU.

    A pair counts only if the classes agree and IoU >= ``thresh``.
    """
    out = {}
    for c in sorted({e[2] for e in pred} | {e[2] for e in truth}):
        pc = [e for e in pred if e[2] == c]
        tc = [e for e in truth if e[2] == c]
        pairs = []
        for i, p in enumerate(pc):
            for j, t in enumerate(tc):
                score = iou(p, t)
                if score >= thresh:
                    pairs.append((-score, i, j))
        pairs.sort()
        used_p, used_t = set(), set()
        for _, i, j in pairs:
            if i not in used_p and j not in used_t:
                used_p.add(i)
                used_t.add(j)
        tp = len(used_p)
        out[c] = (tp, len(pc) - tp, len(tc) - tp)
    return out


def duration_counts(pred, truth) -> dict[int, tuple[int, int, int]]:
    """Per-class sample counts ``(TP_dur, FP_dur, FN_dur)`` by interval overlap."""
    out = {}
    for c in sorted({e[2] for e in pred} | {e[2] for e in truth}):
        pc = [e for e in pred if e[2] == c]
        tc = [e for e in truth if e[2] == c]
        tp = sum(max(0, min(p[1], t[1]) - max(p[0], t[0])) for p in pc for t in tc)
        out[c] = (tp, sum(p[1] - p[0] for p in pc) - tp, sum(t[1] - t[0] for t in tc) - tp)
    return out


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tp_dur: int = 0
    fp_dur: int = 0
    fn_dur: int = 0

    def __iadd__(self, other):
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tp_dur += other.tp_dur
        self.fp_dur += other.fp_dur
        self.fn_dur += other.fn_dur
        return self

    def regime(self, name: str) -> tuple[int, int, int]:
        if name == "episode":
            return self.tp, self.fp, self.fn
        return self.tp_dur, self.fp_dur, self.fn_dur


def count(pred, truth, thresh: float = 0.7) -> dict[int, ClassCounts]:
    epi = match_episodes(pred, truth, thresh)
    dur = duration_counts(pred, truth)
    return {c: ClassCounts(*epi[c], *dur[c]) for c in epi}


def merge_counts(total: dict[int, ClassCounts], part: dict[int, ClassCounts]) -> dict[int, ClassCounts]:
    for c, cc in part.items():
        total.setdefault(c, ClassCounts())
        total[c] += cc
    return total


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


@dataclass
class ClassReport:
    episode: tuple[float, float, float]
    duration: tuple[float, float, float]
    counts: ClassCounts


@dataclass
class MetricsReport:
    per_class: dict[int, ClassReport]
    macro: dict[str, tuple[float, float, float]]
    average: str = "macro"
    class_names: dict[int, str] = field(default_factory=dict)

    def f1(self, regime: str = "duration") -> float:
        return self.macro[regime][2]

    def rows(self):
        for c in sorted(self.per_class):
            cr = self.per_class[c]
            for regime in REGIMES:
                yield (str(c), regime, *getattr(cr, regime), *cr.counts.regime(regime))
        for regime in REGIMES:
            tot = [0, 0, 0]
            for c in self.per_class:
                if self._included(c):
                    tot = [a + b for a, b in zip(tot, self.per_class[c].counts.regime(regime))]
            yield (self.average, regime, *self.macro[regime], *tot)

    def _included(self, c: int) -> bool:
        cc = self.per_class[c].counts
        return cc.tp + cc.fn > 0 or cc.tp_dur + cc.fn_dur > 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "regime", "precision", "recall", "f1", "tp", "fp", "fn"])
        for row in self.rows():
            w.writerow([row[0], row[1], *(f"{v:.6f}" for v in row[2:5]), *row[5:]])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv())

    def table(self) -> str:
        lines = [f"{'class':>8} {'regime':>9} {'P':>7} {'R':>7} {'F1':>7} {'TP':>8} {'FP':>8} {'FN':>8}"]
        for row in self.rows():
            name = self.class_names.get(int(row[0]), row[0]) if row[0].isdigit() else row[0]
            lines.append(f"{name:>8} {row[1]:>9} {row[2]:7.4f} {row[3]:7.4f} {row[4]:7.4f} "
                         f"{row[5]:8d} {row[6]:8d} {row[7]:8d}")
        return "\n".join(lines)


def report_from_counts(counts: dict[int, ClassCounts], average: str = "macro") -> MetricsReport:
    """Ratios per class, then the macro mean over classes present in the truth
    (or ``average="micro"``: ratios of counts pooled over those classes)."""
    if average not in ("macro", "micro"):
        raise ConfigurationError(f"average must be 'macro' or 'micro', got {average!r}")
    per_class = {c: ClassReport(prf(*cc.regime("episode")), prf(*cc.regime("duration")), cc)
                 for c, cc in sorted(counts.items())}
    rep = MetricsReport(per_class, {}, average)
    present = [c for c in per_class if rep._included(c)]
    for regime in REGIMES:
        if not present:
            rep.macro[regime] = (0.0, 0.0, 0.0)
        elif average == "macro":
            vals = [getattr(per_class[c], regime) for c in present]
            rep.macro[regime] = tuple(sum(v[k] for v in vals) / len(vals) for k in range(3))
        else:
            tot = [sum(per_class[c].counts.regime(regime)[k] for c in present) for k in range(3)]
            rep.macro[regime] = prf(*tot)
    return rep


def report(pred, truth, thresh: float = 0.7, average: str = "macro") -> MetricsReport:
    return report_from_counts(count(pred, truth, thresh), average)


def read_report_csv(path) -> MetricsReport:
    """Rebuild a report from its CSV; ratios are recomputed from the counts."""
    counts: dict[int, ClassCounts] = {}
    average = "macro"
    try:
        rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for row in rows:
        if not row["class"].isdigit():
            average = row["class"]
            continue
        cc = counts.setdefault(int(row["class"]), ClassCounts())
        tp, fp, fn = int(row["tp"]), int(row["fp"]), int(row["fn"])
        if row["regime"] == "episode":
            cc.tp, cc.fp, cc.fn = tp, fp, fn
        else:
            cc.tp_dur, cc.fp_dur, cc.fn_dur = tp, fp, fn
    return report_from_counts(counts, average)


def window_counts(pred_labels, truth_labels, thresh: float = 0.7, min_len: int | None = None):
    """Score one window from per-sample label streams (optionally postprocessed)."""
    from .postprocess import extract_events, merge_short

    pred = extract_events(pred_labels)
    if min_len:
        pred = merge_short(pred, min_len)
    return count(pred, [Event(*e) for e in extract_events(truth_labels)], thresh)
