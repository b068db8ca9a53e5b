import logging

import numpy as np
import pytest

from rhythmseg.errors import ConfigurationError, DataError
from rhythmseg.signals import (
    SignalRecord,
    baseline_filter,
    build_windows,
    intervals_to_labels,
    kfold,
    labels_to_intervals,
    load_annotated_record,
    read_interval_csv,
    read_signal_csv,
    resample,
    synth_generate,
    window,
    write_interval_csv,
    write_signal_csv,
    zscore,
)


@pytest.fixture
def record(rng):
    labels = np.repeat([0, 2, 1], [300, 500, 200])
    return SignalRecord(rng.standard_normal(1000), 360.0, labels, "r1")


class TestResample:
    def test_length_and_rate(self, record):
        out = resample(record, 256.0)
        assert out.fs == 256.0
        assert len(out) == round(1000 * 256 / 360)

    def test_linear_signal_is_exact(self):
        rec = SignalRecord(np.arange(360) * 0.5, 360.0)
        out = resample(rec, 256.0)
        t = np.arange(len(out)) / 256.0
        inside = t <= 359 / 360
        np.testing.assert_allclose(out.samples[inside], t[inside] * 360 * 0.5, atol=1e-9)

    def test_labels_follow_nearest(self, record):
        out = resample(record, 256.0)
        src = np.clip(np.rint(np.arange(len(out)) / 256.0 * 360).astype(int), 0, 999)
        assert np.array_equal(out.labels, record.labels[src])

    def test_same_rate_passthrough(self, record):
        assert resample(record, 360.0) is record

    def test_bad_rate(self, record):
        with pytest.raises(ConfigurationError):
            resample(record, 0)


class TestFilter:
    def test_removes_wander_keeps_qrs_band(self):
        fs = 256.0
        t = np.arange(int(20 * fs)) / fs
        wander = np.sin(2 * np.pi * 0.1 * t)
        beat = 0.5 * np.sin(2 * np.pi * 10 * t)
        out = baseline_filter(SignalRecord(wander + beat, fs)).samples
        core = slice(512, -512)
        assert np.abs(out[core] - beat[core]).max() < 0.05

    def test_zero_phase(self):
        fs = 256.0
        t = np.arange(int(20 * fs)) / fs
        x = np.sin(2 * np.pi * 5 * t)
        out = baseline_filter(SignalRecord(x, fs)).samples
        lag = np.argmax(np.correlate(out[1000:3000], x[1000:3000], "full")) - 1999
        assert lag == 0

    def test_short_record_flagged(self, caplog):
        with caplog.at_level(logging.WARNING):
            out = baseline_filter(SignalRecord(np.ones(300), 256.0, record_id="tiny"))
        assert out.meta["short_for_filter"] is True
        assert "tiny" in caplog.text


class TestWindows:
    def test_zscore(self, rng):
        z = zscore(rng.standard_normal(500) * 4 + 7)
        assert abs(z.mean()) < 1e-12 and abs(z.std() - 1) < 1e-12
        assert np.array_equal(zscore(np.full(10, 3.0)), np.zeros(10))

    def test_window_drops_partial(self, record):
        ws = window(record, 256, num_classes=3)
        assert len(ws) == 3
        assert [w.source for w in ws] == [("r1", 0), ("r1", 256), ("r1", 512)]
        assert np.array_equal(ws[1].labels, record.labels[256:512])
        assert ws[0].y.shape == (256, 3)

    def test_overlapping_stride(self, record):
        assert len(window(record, 256, 128, 3)) == 6

    def test_short_record_gives_nothing(self, rng):
        rec = SignalRecord(rng.standard_normal(100), 256.0, np.zeros(100, int))
        assert window(rec, 256) == []

    def test_needs_labels(self, rng):
        with pytest.raises(DataError):
            window(SignalRecord(rng.standard_normal(600), 256.0), 256)

    def test_label_length_checked(self):
        with pytest.raises(DataError):
            SignalRecord(np.zeros(10), 256.0, np.zeros(9, int))

    def test_build_windows(self, record):
        ws = build_windows([record], 256, 3)
        assert len(ws) == 2  # 1000 samples at 360 Hz -> 711 at 256 Hz
        assert all(abs(w.x.std() - 1) < 1e-9 for w in ws)


class TestFolds:
    def test_partition(self):
        plan = kfold(23, 5, seed=3)
        seen = np.concatenate([plan.val_indices(f) for f in range(5)])
        assert sorted(seen.tolist()) == list(range(23))
        sizes = [len(plan.val_indices(f)) for f in range(5)]
        assert max(sizes) - min(sizes) <= 1
        for f in range(5):
            assert set(plan.train_indices(f)).isdisjoint(plan.val_indices(f))

    def test_seeded(self):
        assert np.array_equal(kfold(30, 5, 1).assignments, kfold(30, 5, 1).assignments)
        assert not np.array_equal(kfold(30, 5, 1).assignments, kfold(30, 5, 2).assignments)

    @pytest.mark.parametrize("n,K", [(10, 1), (3, 5)])
    def test_invalid(self, n, K):
        with pytest.raises(ConfigurationError):
            kfold(n, K)


class TestSynth:
    def test_shapes_and_determinism(self):
        a = synth_generate(4, 3, 256.0, 10.0, seed=5)
        b = synth_generate(4, 3, 256.0, 10.0, seed=5)
        assert len(a) == 3 and len(a[0]) == 2560
        assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))

    def test_balanced_mix_and_min_event(self):
        recs = synth_generate(4, 8, 256.0, 10.0, seed=1)
        counts = np.bincount(np.concatenate([r.labels for r in recs]), minlength=4)
        assert counts.min() / counts.max() > 0.9
        for r in recs:
            for on, off, _ in labels_to_intervals(r.labels):
                assert off - on >= 256

    def test_class_mix(self):
        recs = synth_generate(3, 6, 256.0, 30.0, seed=2, class_mix=[0.4, 0.4, 0.2])
        frac = np.bincount(np.concatenate([r.labels for r in recs]), minlength=3) / (6 * 7680)
        np.testing.assert_allclose(frac, [0.4, 0.4, 0.2], atol=0.05)

    def test_neighbours_differ(self):
        for r in synth_generate(10, 4, 256.0, 30.0, seed=0):
            iv = labels_to_intervals(r.labels)
            assert all(a[2] != b[2] for a, b in zip(iv, iv[1:]))

    def test_bad_mix(self):
        with pytest.raises(ConfigurationError):
            synth_generate(3, class_mix=[1, 1])


class TestFiles:
    def test_signal_roundtrip(self, record, tmp_path):
        write_signal_csv(record, tmp_path / "s.csv")
        back = read_signal_csv(tmp_path / "s.csv")
        assert back.fs == 360.0 and back.record_id == "r1"
        assert np.array_equal(back.samples, record.samples)

    def test_interval_roundtrip(self, record, tmp_path):
        iv = labels_to_intervals(record.labels)
        assert iv == [(0, 300, 0), (300, 800, 2), (800, 1000, 1)]
        write_interval_csv(iv, tmp_path / "a.csv")
        assert read_interval_csv(tmp_path / "a.csv") == iv
        assert np.array_equal(intervals_to_labels(iv, 1000), record.labels)

    def test_annotated_record(self, record, tmp_path):
        write_signal_csv(record, tmp_path / "s.csv")
        write_interval_csv(labels_to_intervals(record.labels), tmp_path / "a.csv")
        rec = load_annotated_record(tmp_path / "s.csv", tmp_path / "a.csv")
        assert np.array_equal(rec.labels, record.labels)

    def test_gap_in_annotation(self):
        with pytest.raises(DataError):
            intervals_to_labels([(0, 5, 1), (6, 10, 0)], 10)

    def test_overlapping_rows(self, tmp_path):
        (tmp_path / "a.csv").write_text("0,5,1\n4,9,0\n")
        with pytest.raises(DataError):
            read_interval_csv(tmp_path / "a.csv")

    def test_missing_header(self, tmp_path):
        (tmp_path / "s.csv").write_text("1.0\n2.0\n")
        with pytest.raises(DataError):
            read_signal_csv(tmp_path / "s.csv")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_signal_csv(tmp_path / "nope.csv")
