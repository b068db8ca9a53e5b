"""Signal preprocessing, windowing, fold planning and a synthetic rhythm generator.

The preprocessing order is fixed: resample -> baseline high-pass -> window ->
per-window z-score.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import ConfigurationError, DataError

log = logging.getLogger(__name__)


@dataclass
class SignalRecord:
    samples: np.ndarray
    fs: float
    labels: np.ndarray | None = None
    record_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.samples.shape:
                raise DataError(f"{self.record_id}: {len(self.labels)} labels for {len(self.samples)} samples")
        if not self.fs > 0:
            raise DataError(f"{self.record_id}: sampling rate must be positive, got {self.fs}")

    def __len__(self):
        return len(self.samples)


@dataclass
class WindowedExample:
    x: np.ndarray
    labels: np.ndarray
    num_classes: int
    source: tuple[str, int] = ("", 0)

    @property
    def y(self) -> np.ndarray:
        return np.eye(self.num_classes)[self.labels]


@dataclass
class FoldPlan:
    K: int
    assignments: np.ndarray
    seed: int

    def val_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


# --------------------------------------------------------------------------
# preprocessing


def resample(rec: SignalRecord, target_fs: float) -> SignalRecord:
    """Linear-interpolation resampling; labels follow the nearest source sample."""
    if not target_fs > 0:
        raise ConfigurationError(f"target_fs must be positive, got {target_fs}")
    if len(rec) == 0:
        raise DataError(f"{rec.record_id}: empty record")
    if target_fs == rec.fs:
        return rec
    n_out = int(round(len(rec) * target_fs / rec.fs))
    t_out = np.arange(n_out) / target_fs
    t_in = np.arange(len(rec)) / rec.fs
    samples = np.interp(t_out, t_in, rec.samples)
    labels = None
    if rec.labels is not None:
        idx = np.clip(np.rint(t_out * rec.fs).astype(np.int64), 0, len(rec) - 1)
        labels = rec.labels[idx]
    return SignalRecord(samples, target_fs, labels, rec.record_id, dict(rec.meta))


def baseline_filter(rec: SignalRecord, cutoff: float = 0.5, order: int = 3) -> SignalRecord:
    """Zero-phase Butterworth high-pass that removes baseline wander.

    Records shorter than 3 s are filtered anyway but flagged with
    ``meta["short_for_filter"]``.
    """
    meta = dict(rec.meta)
    if len(rec) < 3 * rec.fs:
        meta["short_for_filter"] = True
        log.warning("%s: %.2f s is shorter than the 3 s filter warm-up", rec.record_id, len(rec) / rec.fs)
    sos = sps.butter(order, cutoff, btype="highpass", fs=rec.fs, output="sos")
    padlen = min(3 * (2 * len(sos) + 1), len(rec) - 1)
    samples = sps.sosfiltfilt(sos, rec.samples, padlen=max(padlen, 0))
    return SignalRecord(samples, rec.fs, rec.labels, rec.record_id, meta)


def zscore(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def window(rec: SignalRecord, length: int = 2560, stride: int | None = None, num_classes: int = 10,
           normalize: bool = True) -> list[WindowedExample]:
    """Cut a preprocessed record into windows; the trailing partial window is dropped."""
    stride = length if stride is None else stride
    if length < 1 or stride < 1:
        raise ConfigurationError("window length and stride must be >= 1")
    if rec.labels is None:
        raise DataError(f"{rec.record_id}: windowing for training needs labels")
    if len(rec) < length:
        log.warning("%s: %d samples is shorter than one %d-sample window", rec.record_id, len(rec), length)
        return []
    out = []
    for start in range(0, len(rec) - length + 1, stride):
        seg = rec.samples[start:start + length]
        out.append(WindowedExample(zscore(seg) if normalize else seg.copy(),
                                   rec.labels[start:start + length].copy(), num_classes, (rec.record_id, start)))
    return out


def preprocess(rec: SignalRecord, target_fs: float = 256.0, cutoff: float = 0.5, order: int = 3) -> SignalRecord:
    return baseline_filter(resample(rec, target_fs), cutoff, order)


def build_windows(records, length: int, num_classes: int, stride: int | None = None, target_fs: float = 256.0,
                  cutoff: float = 0.5, order: int = 3) -> list[WindowedExample]:
    examples = []
    for rec in records:
        examples.extend(window(preprocess(rec, target_fs, cutoff, order), length, stride, num_classes))
    return examples


def kfold(n_examples: int, K: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then round-robin fold assignment."""
    if K < 2:
        raise ConfigurationError(f"K must be >= 2, got {K}")
    if n_examples < K:
        raise ConfigurationError(f"need at least K={K} examples, got {n_examples}")
    order = np.random.default_rng(seed).permutation(n_examples)
    assignments = np.empty(n_examples, dtype=np.int64)
    assignments[order] = np.arange(n_examples) % K
    return FoldPlan(K, assignments, seed)


# --------------------------------------------------------------------------
# synthetic rhythms


def _waveform(cls: int, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """One event of class ``cls``: four waveform families, faster variants for cls >= 4."""
    kind, variant = cls % 4, cls // 4
    speed = 1.0 + 0.35 * variant
    t = np.arange(n) / fs
    if kind == 0:
        # regular narrow monophasic beats
        rate = 4.0 * speed
        period = fs / rate
        phase = rng.uniform(0, period)
        beats = np.arange(-phase, n + period, period)
        out = np.zeros(n)
        sig = 0.006 * fs
        for b in beats:
            out += np.exp(-0.5 * ((np.arange(n) - b) / sig) ** 2)
        return out
    if kind == 1:
        # fast biphasic spikes
        rate = 10.0 * speed
        period = fs / rate
        phase = rng.uniform(0, period)
        u = ((np.arange(n) + phase) % period) / period
        return np.where(u < 0.15, np.sin(2 * np.pi * u / 0.15), 0.0)
    if kind == 2:
        # irregular oscillation: random mixture of tones
        out = np.zeros(n)
        for _ in range(5):
            f = rng.uniform(6.0, 14.0) * speed
            out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        return 0.4 * out
    # sawtooth flutter
    f = 6.0 * speed
    return sps.sawtooth(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))


def synth_generate(num_classes: int = 4, n_records: int = 8, fs: float = 256.0, seconds: float = 10.0,
                   seed: int = 0, class_mix=None, min_event: int = 256, max_event: int = 1024,
                   short_fraction: float = 0.0, short_range: tuple[int, int] = (32, 200),
                   noise: float = 0.05, wander: float = 0.3) -> list[SignalRecord]:
    """Piecewise synthetic records with per-sample labels.

    Event lengths are drawn in ``[min_event, max_event]`` samples; with
    probability ``short_fraction`` an event is instead drawn from
    ``short_range`` (for exercising postprocessing).  The next class is the
    one (different from the current) furthest below its target share, so the
    label histogram tracks ``class_mix`` closely.  Since neighbours always
    differ, no class can take much more than half of the samples.
    """
    if num_classes < 2:
        raise ConfigurationError("need at least two classes")
    mix = np.full(num_classes, 1.0 / num_classes) if class_mix is None else np.asarray(class_mix, float)
    if mix.shape != (num_classes,) or np.any(mix < 0) or mix.sum() <= 0:
        raise ConfigurationError(f"class_mix must be {num_classes} non-negative weights")
    mix = mix / mix.sum()
    rng = np.random.default_rng(seed)
    n = int(round(seconds * fs))
    counts = np.zeros(num_classes)
    records = []
    for r in range(n_records):
        samples = np.zeros(n)
        labels = np.zeros(n, dtype=np.int64)
        pos, prev = 0, -1
        while pos < n:
            if rng.random() < short_fraction:
                length = int(rng.integers(short_range[0], short_range[1] + 1))
            else:
                length = int(rng.integers(min_event, max_event + 1))
            if n - pos - length < min_event:
                length = n - pos
            total = counts.sum() + length
            deficit = mix * total - counts
            deficit[mix == 0] = -np.inf
            if prev >= 0 and np.isfinite(deficit).sum() > 1:
                deficit[prev] = -np.inf
            best = np.flatnonzero(deficit == deficit.max())
            cls = int(best[rng.integers(len(best))])
            samples[pos:pos + length] = _waveform(cls, length, fs, rng)
            labels[pos:pos + length] = cls
            counts[cls] += length
            pos += length
            prev = cls
        t = np.arange(n) / fs
        samples += wander * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 2 * np.pi))
        samples += noise * rng.standard_normal(n)
        records.append(SignalRecord(samples, fs, labels, f"synth{r:03d}"))
    return records


# --------------------------------------------------------------------------
# file formats


def write_signal_csv(rec: SignalRecord, path):
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# fs={float(rec.fs)!r} id={rec.record_id}\n")
        for v in rec.samples:
            fh.write(f"{float(v)!r}\n")


def read_signal_csv(path) -> SignalRecord:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{path}: missing '# fs=<Hz> id=<string>' header")
    fields = dict(tok.split("=", 1) for tok in lines[0][1:].split() if "=" in tok)
    if "fs" not in fields:
        raise DataError(f"{path}: header lacks fs=")
    try:
        fs = float(fields["fs"])
        samples = np.array([float(v) for v in lines[1:] if v.strip() and not v.startswith("#")])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return SignalRecord(samples, fs, None, fields.get("id", path.stem))


def labels_to_intervals(labels) -> list[tuple[int, int, int]]:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return []
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [len(labels)]])
    return [(int(s), int(e), int(labels[s])) for s, e in zip(starts, ends)]


def intervals_to_labels(intervals, n: int) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    for onset, offset, cls in intervals:
        labels[onset:offset] = cls
    if np.any(labels < 0):
        raise DataError("annotation intervals do not cover the whole record")
    return labels


def write_interval_csv(intervals, path, header: str = "onset_sample,offset_sample,class_id"):
    with Path(path).open("w") as fh:
        fh.write(header + "\n")
        for onset, offset, cls in intervals:
            fh.write(f"{int(onset)},{int(offset)},{int(cls)}\n")


def read_interval_csv(path) -> list[tuple[int, int, int]]:
    """Read ``onset,offset,class_id`` rows; a header line and ``#`` comments are skipped."""
    out = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if lineno == 1 and not parts[0].strip().lstrip("-").isdigit():
            continue
        try:
            onset, offset, cls = (int(p) for p in parts)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: expected onset,offset,class_id") from exc
        if offset <= onset:
            raise DataError(f"{path}:{lineno}: offset must exceed onset")
        if out and onset < out[-1][1]:
            raise DataError(f"{path}:{lineno}: intervals must be sorted and non-overlapping")
        out.append((onset, offset, cls))
    return out


def load_annotated_record(signal_path, annotation_path) -> SignalRecord:
    rec = read_signal_csv(signal_path)
    rec.labels = intervals_to_labels(read_interval_csv(annotation_path), len(rec))
    return rec
