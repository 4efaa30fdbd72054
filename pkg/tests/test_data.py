"""Tests for CSV persistence and the synthetic benchmark generator.

The CSV oracle is exactness: float64 survives the 17-significant-digit
format bit for bit, so write/read cycles are checked with array_equal, and
repeated writes with byte comparison. The generator is checked against its
own labels: every event must visibly disturb its features relative to the
surrounding rows (in level for spikes and shifts, in roughness for
correlation breaks).
"""

import numpy as np
import pytest
from scipy.signal import medfilt

from gatad.data import (
    Event,
    SynthData,
    read_alarms_csv,
    read_events_csv,
    read_labels_csv,
    read_scores_csv,
    read_values_csv,
    synth,
    write_alarms_csv,
    write_curve_csv,
    write_diagnosis_csv,
    write_eval_csv,
    write_events_csv,
    write_labels_csv,
    write_scores_csv,
    write_values_csv,
)
from gatad.errors import ConfigError, DataError


def awkward_floats(rng, shape):
    """Doubles that stress the formatter: tiny, huge, negative, irrational."""
    values = rng.normal(size=shape)
    flat = values.reshape(-1)
    specials = [0.1 + 0.2, np.pi, 1e300, 5e-324, -1e-300, 0.0, -7.25e-12]
    flat[:len(specials)] = specials
    return values


class TestValuesCsv:

    def test_roundtrip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(60)
        values = awkward_floats(rng, (40, 3))
        path = tmp_path / "values.csv"
        write_values_csv(path, values, ["a", "b", "c"], start=17)
        back, names, start = read_values_csv(path)
        assert np.array_equal(back, values)
        assert names == ["a", "b", "c"]
        assert start == 17

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(61)
        values = rng.normal(size=(20, 2))
        p1, p2 = tmp_path / "one.csv", tmp_path / "two.csv"
        write_values_csv(p1, values, ["x", "y"])
        write_values_csv(p2, values, ["x", "y"])
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_broken_files(self, tmp_path):
        path = tmp_path / "bad.csv"
        with pytest.raises(DataError):
            read_values_csv(tmp_path / "missing.csv")
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            read_values_csv(path)
        path.write_text("time,a\n0,1.0\n")
        with pytest.raises(DataError, match="timestamp"):
            read_values_csv(path)
        path.write_text("timestamp,a\n")
        with pytest.raises(DataError, match="no data"):
            read_values_csv(path)
        path.write_text("timestamp,a\n0,1.0\n1,1.0,2.0\n")
        with pytest.raises(DataError, match="line 3"):
            read_values_csv(path)
        path.write_text("timestamp,a\n0,1.0\n1,oops\n")
        with pytest.raises(DataError, match="oops"):
            read_values_csv(path)
        path.write_text("timestamp,a\n0,1.0\n2,2.0\n")
        with pytest.raises(DataError, match="increase by one"):
            read_values_csv(path)

    def test_rejects_bad_names(self, tmp_path):
        with pytest.raises(ConfigError):
            write_values_csv(tmp_path / "x.csv", np.zeros((2, 2)), ["a", "a"])
        with pytest.raises(ConfigError):
            write_values_csv(tmp_path / "x.csv", np.zeros((2, 1)), ["a,b"])
        with pytest.raises(DataError):
            write_values_csv(tmp_path / "x.csv", np.zeros((2, 2)), ["a"])


class TestLabelsCsv:

    def test_roundtrip(self, tmp_path):
        labels = np.array([0, 1, 1, 0, 1], dtype=bool)
        path = tmp_path / "labels.csv"
        write_labels_csv(path, labels)
        assert np.array_equal(read_labels_csv(path), labels)

    def test_rejects_non_binary(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("label\n1\n2\n")
        with pytest.raises(DataError, match="0 or 1"):
            read_labels_csv(path)


class TestEventsCsv:

    def test_roundtrip_resolves_names(self, tmp_path):
        names = ["cpu", "mem", "disk", "net"]
        events = [Event(10, 20, (0,)), Event(50, 55, (2, 3))]
        path = tmp_path / "events.csv"
        write_events_csv(path, events, names)
        assert read_events_csv(path, names) == events
        # multi-feature cells are comma-joined inside one quoted cell
        assert '"disk,net"' in path.read_text()

    def test_zero_events_is_valid(self, tmp_path):
        path = tmp_path / "events.csv"
        write_events_csv(path, [], ["a", "b"])
        assert read_events_csv(path, ["a", "b"]) == []

    def test_unknown_feature_name_rejected(self, tmp_path):
        path = tmp_path / "events.csv"
        write_events_csv(path, [Event(1, 4, (1,))], ["a", "b"])
        with pytest.raises(DataError, match="'b'"):
            read_events_csv(path, ["a", "c"])

    def test_event_validation(self):
        with pytest.raises(DataError):
            Event(5, 5, (0,))
        with pytest.raises(DataError):
            Event(5, 6, ())
        with pytest.raises(DataError):
            write_events_csv("/dev/null", [Event(1, 2, (5,))], ["a", "b"])


class TestScoresCsv:

    def test_roundtrip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(62)
        scores = np.abs(awkward_floats(rng, (30, 4)))
        total = scores.sum(axis=1)
        offsets = np.arange(100, 130)
        path = tmp_path / "scores.csv"
        write_scores_csv(path, offsets, total, scores, list("wxyz"))
        off, tot, sc, names = read_scores_csv(path)
        assert np.array_equal(off, offsets)
        assert np.array_equal(tot, total)
        assert np.array_equal(sc, scores)
        assert names == ["w", "x", "y", "z"]

    def test_rejects_misaligned(self, tmp_path):
        with pytest.raises(DataError):
            write_scores_csv(tmp_path / "s.csv", np.arange(3), np.zeros(2),
                             np.zeros((3, 2)), ["a", "b"])


class TestAlarmsCsv:

    def test_roundtrip(self, tmp_path):
        offsets = np.arange(5, 12)
        flags = np.array([0, 1, 0, 0, 1, 1, 0], dtype=bool)
        path = tmp_path / "alarms.csv"
        write_alarms_csv(path, offsets, flags)
        off, back = read_alarms_csv(path)
        assert np.array_equal(off, offsets)
        assert np.array_equal(back, flags)


class TestCurveCsv:

    def test_exact_text(self, tmp_path):
        path = tmp_path / "curve.csv"
        write_curve_csv(path, [1.0, 0.5], [0.9])
        assert path.read_text() == (
            "epoch,train_loss,val_loss\n"
            "0,1,0.90000000000000002\n"
            "1,0.5,\n")


class TestEvalCsv:

    def test_exact_text(self, tmp_path):
        path = tmp_path / "report.csv"
        write_eval_csv(path, {
            "protocol": "point-adjust", "precision": 0.5, "recall": 1.0,
            "f1": 2 / 3, "tp": 4, "fp": 4, "fn": 0,
            "alarmed_timestamps": 4, "labeled_timestamps": 6})
        assert path.read_text() == (
            "protocol,delay,precision,recall,f1,tp,fp,fn,"
            "alarmed_timestamps,labeled_timestamps\n"
            "point-adjust,,0.5,1,0.66666666666666663,4,4,0,4,6\n")

    def test_delay_column_filled_when_present(self, tmp_path):
        path = tmp_path / "report.csv"
        write_eval_csv(path, {
            "protocol": "delay", "delay": 7, "precision": 1.0, "recall": 1.0,
            "f1": 1.0, "tp": 3, "fp": 0, "fn": 0,
            "alarmed_timestamps": 3, "labeled_timestamps": 3})
        assert path.read_text().splitlines()[1] == "delay,7,1,1,1,3,0,0,3,3"


class TestDiagnosisCsv:

    def test_exact_text(self, tmp_path):
        path = tmp_path / "diagnosis.csv"
        write_diagnosis_csv(path, [
            (266, 1, "pressure", 1.5),
            (266, 2, "flow", 0.25),
            (394, 1, "flow", 0.75),
        ])
        assert path.read_text() == (
            "event,rank,feature,score\n"
            "266,1,pressure,1.5\n"
            "266,2,flow,0.25\n"
            "394,1,flow,0.75\n")


class TestSynth:

    def test_deterministic_per_seed(self):
        a = synth(t_total=1200, k=3, n_events=3, seed=5)
        b = synth(t_total=1200, k=3, n_events=3, seed=5)
        c = synth(t_total=1200, k=3, n_events=3, seed=6)
        assert np.array_equal(a.train, b.train)
        assert np.array_equal(a.test, b.test)
        assert np.array_equal(a.labels, b.labels)
        assert a.events == b.events
        assert not np.array_equal(a.test, c.test)

    def test_shapes_and_split(self):
        data = synth(t_total=2000, k=4, n_events=4, seed=1, train_frac=0.5)
        assert data.train.shape == (1000, 4)
        assert data.test.shape == (1000, 4)
        assert data.labels.shape == (1000,)
        assert data.feature_names == ["f0", "f1", "f2", "f3"]
        assert np.all(np.isfinite(data.train))
        assert np.all(np.isfinite(data.test))

    def test_labels_match_events_exactly(self):
        data = synth(t_total=3000, k=4, n_events=6, seed=2)
        rebuilt = np.zeros_like(data.labels)
        for event in data.events:
            rebuilt[event.start:event.stop] = True
        assert np.array_equal(data.labels, rebuilt)

    def test_events_are_ordered_and_separated(self):
        data = synth(t_total=3000, k=4, n_events=6, seed=3, min_start=110)
        assert data.events[0].start >= 110
        for prev, cur in zip(data.events, data.events[1:]):
            assert cur.start - prev.stop >= 50
        assert data.events[-1].stop <= len(data.test)
        for event in data.events:
            assert all(0 <= f < 4 for f in event.features)

    def test_every_event_disturbs_its_features(self):
        # level anomalies move the local mean; correlation breaks speed the
        # series up, which multiplies the first-difference spread
        data = synth(t_total=4000, k=4, n_events=6, seed=4)
        for event in data.events:
            f = event.features[0]
            seg = data.test[event.start:event.stop, f]
            ctx = data.test[max(0, event.start - 80):event.start, f]
            level_jump = abs(seg.mean() - ctx.mean())
            roughness = np.std(np.diff(seg)) / max(np.std(np.diff(ctx)), 1e-9)
            assert level_jump > 0.1 or roughness > 2.0, \
                f"event at {event.start} left feature {f} undisturbed"

    def test_training_half_has_small_spikes(self):
        data = synth(t_total=3000, k=3, n_events=3, seed=7)
        spiky = 0
        for f in range(3):
            residual = data.train[:, f] - medfilt(data.train[:, f], 7)
            spiky += int(np.sum(np.abs(residual) > 0.25))
        assert spiky >= 2

    def test_zero_events_means_clean_labels(self):
        data = synth(t_total=1200, k=3, n_events=0, seed=9)
        assert data.events == []
        assert not data.labels.any()

    def test_rejects_bad_requests(self):
        with pytest.raises(ConfigError):
            synth(t_total=300)
        with pytest.raises(ConfigError):
            synth(k=1)
        with pytest.raises(ConfigError):
            synth(n_events=-1)
        with pytest.raises(ConfigError):
            synth(train_frac=0.95)
        with pytest.raises(ConfigError):
            synth(t_total=600, n_events=10, seed=0)
        with pytest.raises(ConfigError):
            synth(min_start=0)

    def test_is_plain_dataclass(self):
        data = synth(t_total=1200, k=2, n_events=2, seed=8)
        assert isinstance(data, SynthData)
