"""CSV persistence and a synthetic labeled benchmark generator.

All CSV writers format floats with 17 significant digits, which is enough
for a float64 to survive a write/read cycle bit for bit, and they write
nothing time- or environment-dependent, so rewriting the same data yields
byte-identical files.

Formats (all with a header row):
* values:  timestamp,<feature names...>         one row per timestep
* labels:  label                                one 0/1 row per values row
* events:  start,end,features                   end exclusive; features is
                                                a comma-joined (quoted)
                                                list of feature names
* scores:  timestamp,total,<feature names...>   per-feature scores
* alarms:  timestamp,alarm                      alarm is 0 or 1

The generator builds features as mixtures of shared sinusoid drivers plus
noise, so features are cross-correlated by construction. The training half
stays unlabeled and receives a few small spikes (fodder for the cleaning
stage); the test half receives labeled events cycling through three kinds:
short spikes, level shifts, and correlation breaks where one feature swaps
its driver for an alien frequency while keeping its amplitude, so only the
relationship between features changes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

Array = np.ndarray


def _fmt(x: float) -> str:
    return "%.17g" % x


def _write_rows(path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _read_rows(path, expected_left: list[str], allow_empty: bool = False
               ) -> tuple[list[str], list[list[str]]]:
    """Read a CSV, checking the fixed leading header columns."""
    try:
        with open(path, newline="", encoding="ascii") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    except UnicodeDecodeError as err:
        raise DataError(f"{path} is not an ASCII CSV: {err}") from err
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if header[:len(expected_left)] != expected_left:
        raise DataError(
            f"{path} must start with columns {expected_left}, got "
            f"{header[:len(expected_left)]}")
    width = len(header)
    for i, row in enumerate(body, start=2):
        if len(row) != width:
            raise DataError(f"{path} line {i} has {len(row)} cells, "
                            f"header has {width}")
    if not body and not allow_empty:
        raise DataError(f"{path} has a header but no data rows")
    return header, body


def _parse_float(cell: str, path, line: int) -> float:
    try:
        return float(cell)
    except ValueError as err:
        raise DataError(f"{path} line {line}: {cell!r} is not a number") from err


def _parse_int(cell: str, path, line: int) -> int:
    try:
        return int(cell)
    except ValueError as err:
        raise DataError(f"{path} line {line}: {cell!r} is not an integer") from err


def _check_contiguous(stamps: list[int], path) -> int:
    start = stamps[0]
    for i, got in enumerate(stamps):
        if got != start + i:
            raise DataError(
                f"{path}: timestamps must increase by one; expected "
                f"{start + i}, got {got}")
    return start


def _check_feature_names(names: list[str]) -> list[str]:
    if not names:
        raise ConfigError("at least one feature name is required")
    if len(set(names)) != len(names):
        raise ConfigError(f"feature names must be unique, got {names}")
    for name in names:
        if not name or "," in name or "\n" in name:
            raise ConfigError(f"feature name {name!r} will not survive CSV")
    return list(names)


def write_values_csv(path, values: Array, feature_names: list[str],
                     start: int = 0) -> None:
    values = np.asarray(values, dtype=np.float64)
    names = _check_feature_names(feature_names)
    if values.ndim != 2 or values.shape[1] != len(names):
        raise DataError(
            f"values shape {values.shape} does not match "
            f"{len(names)} feature names")
    rows = ([str(start + i)] + [_fmt(v) for v in row]
            for i, row in enumerate(values))
    _write_rows(path, ["timestamp"] + names, rows)


def read_values_csv(path) -> tuple[Array, list[str], int]:
    """Returns (values (T, k), feature names, first timestamp)."""
    header, body = _read_rows(path, ["timestamp"])
    names = _check_feature_names(header[1:])
    stamps = [_parse_int(r[0], path, i) for i, r in enumerate(body, start=2)]
    start = _check_contiguous(stamps, path)
    values = np.array([[_parse_float(c, path, i) for c in r[1:]]
                       for i, r in enumerate(body, start=2)])
    return values, names, start


def write_labels_csv(path, labels: Array) -> None:
    """One 0/1 row per values row, aligned by position."""
    labels = np.asarray(labels, dtype=bool)
    if labels.ndim != 1:
        raise DataError(f"labels must be a vector, got shape {labels.shape}")
    rows = ([str(int(v))] for v in labels)
    _write_rows(path, ["label"], rows)


def read_labels_csv(path) -> Array:
    _, body = _read_rows(path, ["label"])
    flags = []
    for i, row in enumerate(body, start=2):
        value = _parse_int(row[0], path, i)
        if value not in (0, 1):
            raise DataError(f"{path} line {i}: label must be 0 or 1, "
                            f"got {value}")
        flags.append(bool(value))
    return np.array(flags, dtype=bool)


@dataclass(frozen=True)
class Event:
    """One labeled anomaly: rows [start, stop) and the features behind it."""

    start: int
    stop: int
    features: tuple[int, ...]

    def __post_init__(self):
        if self.stop <= self.start:
            raise DataError(f"event [{self.start}, {self.stop}) is empty")
        if not self.features:
            raise DataError("an event needs at least one causal feature")


def write_events_csv(path, events: list[Event],
                     feature_names: list[str]) -> None:
    """Root-cause file: start, exclusive end, comma-joined feature names."""
    names = _check_feature_names(feature_names)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["start", "end", "features"])
        for e in events:
            if any(not (0 <= f < len(names)) for f in e.features):
                raise DataError(
                    f"event at {e.start} references feature index outside "
                    f"0..{len(names) - 1}")
            writer.writerow([str(e.start), str(e.stop),
                             ",".join(names[f] for f in e.features)])


def read_events_csv(path, feature_names: list[str]) -> list[Event]:
    """Read a root-cause file, resolving feature names to column indices."""
    names = _check_feature_names(feature_names)
    index = {name: i for i, name in enumerate(names)}
    _, body = _read_rows(path, ["start", "end", "features"], allow_empty=True)
    events = []
    for i, row in enumerate(body, start=2):
        features = []
        for name in row[2].split(","):
            if name not in index:
                raise DataError(
                    f"{path} line {i}: feature {name!r} is not in the "
                    f"values header {names}")
            features.append(index[name])
        events.append(Event(start=_parse_int(row[0], path, i),
                            stop=_parse_int(row[1], path, i),
                            features=tuple(features)))
    return events


def write_scores_csv(path, offsets: Array, total: Array, scores: Array,
                     feature_names: list[str]) -> None:
    names = _check_feature_names(feature_names)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != len(names) \
            or not (len(offsets) == len(total) == len(scores)):
        raise DataError("offsets, total, and scores must align")
    rows = ([str(int(offsets[i])), _fmt(total[i])] + [_fmt(v) for v in scores[i]]
            for i in range(len(scores)))
    _write_rows(path, ["timestamp", "total"] + names, rows)


def read_scores_csv(path) -> tuple[Array, Array, Array, list[str]]:
    """Returns (offsets, total, scores (T', k), feature names)."""
    header, body = _read_rows(path, ["timestamp", "total"])
    names = _check_feature_names(header[2:])
    offsets = np.array([_parse_int(r[0], path, i)
                        for i, r in enumerate(body, start=2)])
    total = np.array([_parse_float(r[1], path, i)
                      for i, r in enumerate(body, start=2)])
    scores = np.array([[_parse_float(c, path, i) for c in r[2:]]
                       for i, r in enumerate(body, start=2)])
    return offsets, total, scores, names


def write_alarms_csv(path, offsets: Array, flags: Array) -> None:
    if len(offsets) != len(flags):
        raise DataError("offsets and flags must align")
    rows = ([str(int(offsets[i])), str(int(bool(flags[i])))]
            for i in range(len(flags)))
    _write_rows(path, ["timestamp", "alarm"], rows)


def read_alarms_csv(path) -> tuple[Array, Array]:
    _, body = _read_rows(path, ["timestamp", "alarm"])
    offsets = np.array([_parse_int(r[0], path, i)
                        for i, r in enumerate(body, start=2)])
    flags = np.array([bool(_parse_int(r[1], path, i))
                      for i, r in enumerate(body, start=2)])
    return offsets, flags


def write_curve_csv(path, train_losses: list[float],
                    val_losses: list[float]) -> None:
    """Loss per epoch; the validation column is empty when there is none."""
    rows = []
    for i, loss in enumerate(train_losses):
        val = _fmt(val_losses[i]) if i < len(val_losses) else ""
        rows.append([str(i), _fmt(loss), val])
    _write_rows(path, ["epoch", "train_loss", "val_loss"], rows)


def write_eval_csv(path, report: dict) -> None:
    """The evaluation summary as one machine-mergeable CSV row."""
    delay = report.get("delay")
    row = [report["protocol"], "" if delay is None else str(delay),
           _fmt(report["precision"]), _fmt(report["recall"]),
           _fmt(report["f1"]),
           str(report["tp"]), str(report["fp"]), str(report["fn"]),
           str(report["alarmed_timestamps"]),
           str(report["labeled_timestamps"])]
    _write_rows(path, ["protocol", "delay", "precision", "recall", "f1",
                       "tp", "fp", "fn",
                       "alarmed_timestamps", "labeled_timestamps"], [row])


def write_diagnosis_csv(path, rows) -> None:
    """Per-event rankings: rows of (event start, rank, feature, score)."""
    body = ([str(int(event)), str(int(rank)), str(name), _fmt(score)]
            for event, rank, name, score in rows)
    _write_rows(path, ["event", "rank", "feature", "score"], body)


def write_matrix_csv(path, matrix: Array, row_labels: list[str],
                     col_labels: list[str], corner: str = "row") -> None:
    """A labeled square of floats, e.g. one attention matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (len(row_labels), len(col_labels)):
        raise DataError(
            f"matrix shape {matrix.shape} does not match "
            f"{len(row_labels)} x {len(col_labels)} labels")
    rows = ([row_labels[i]] + [_fmt(v) for v in matrix[i]]
            for i in range(len(row_labels)))
    _write_rows(path, [corner] + list(col_labels), rows)


@dataclass
class SynthData:
    """A generated benchmark: clean-ish training half, labeled test half."""

    train: Array
    test: Array
    labels: Array
    events: list[Event]
    feature_names: list[str]


def synth(t_total: int = 5000, k: int = 4, n_events: int = 8, seed: int = 0,
          train_frac: float = 0.5, min_start: int = 110) -> SynthData:
    """Generate a correlated multivariate series with labeled anomalies.

    Features mix two shared sinusoid drivers with feature-specific phases
    and weights plus mild noise. Anomalies live only in the test half and
    cycle through spike, level shift, and correlation break; each event
    records which features it touched. min_start keeps the first event far
    enough into the test half that a scoring window fits before it.
    """
    if t_total < 400:
        raise ConfigError(f"t_total must be at least 400, got {t_total}")
    if k < 2:
        raise ConfigError(f"synthetic data needs k >= 2, got {k}")
    if n_events < 0:
        raise ConfigError(f"n_events must be non-negative, got {n_events}")
    if not (0.1 <= train_frac <= 0.9):
        raise ConfigError(f"train_frac must be in [0.1, 0.9], got {train_frac}")
    if min_start < 1:
        raise ConfigError(f"min_start must be positive, got {min_start}")
    rng = np.random.default_rng(np.random.SeedSequence([987, seed]))
    t_train = int(t_total * train_frac)
    t_test = t_total - t_train

    steps = np.arange(t_total)[:, None]
    periods = rng.uniform(40, 60), rng.uniform(90, 140)
    phases = rng.uniform(0, 2 * np.pi, size=(2, k))
    weights = rng.uniform(0.08, 0.18, size=(2, k))
    values = 0.5 \
        + weights[0] * np.sin(2 * np.pi * steps / periods[0] + phases[0]) \
        + weights[1] * np.sin(2 * np.pi * steps / periods[1] + phases[1]) \
        + rng.normal(0, 0.015, size=(t_total, k))

    train = values[:t_train].copy()
    test = values[t_train:].copy()

    # small unlabeled spikes in the training half, cleaning fodder
    n_train_spikes = max(2, t_train // 600)
    spike_rows = rng.choice(np.arange(50, t_train - 50), size=n_train_spikes,
                            replace=False)
    for row in spike_rows:
        feature = int(rng.integers(k))
        train[row, feature] += rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 0.7)

    # labeled events in the test half
    kinds = ["spike", "shift", "break"]
    lengths = {"spike": (4, 9), "shift": (20, 45), "break": (30, 60)}
    max_len = max(hi for _, hi in lengths.values())
    gap = 60
    space = t_test - min_start - n_events * (max_len + gap)
    if space < 0:
        raise ConfigError(
            f"cannot place {n_events} events in a test half of {t_test} rows; "
            f"generate a longer series or fewer events")
    cursor = min_start + int(rng.integers(0, max(1, space // (n_events + 1))))
    labels = np.zeros(t_test, dtype=bool)
    events: list[Event] = []
    for i in range(n_events):
        kind = kinds[i % len(kinds)]
        lo, hi = lengths[kind]
        length = int(rng.integers(lo, hi + 1))
        start, stop = cursor, cursor + length
        if kind == "break":
            features = (int(rng.integers(k)),)
            alien_period = rng.uniform(8, 14)
            alien_phase = rng.uniform(0, 2 * np.pi)
            local = np.arange(start, stop)
            test[start:stop, features[0]] = 0.5 + 0.22 * np.sin(
                2 * np.pi * local / alien_period + alien_phase) \
                + rng.normal(0, 0.015, size=length)
        else:
            n_feat = int(rng.integers(1, 3))
            features = tuple(sorted(
                int(f) for f in rng.choice(k, size=n_feat, replace=False)))
            amp = rng.uniform(0.45, 0.8) if kind == "spike" \
                else rng.uniform(0.3, 0.5)
            sign = rng.choice([-1.0, 1.0])
            for f in features:
                test[start:stop, f] += sign * amp
        labels[start:stop] = True
        events.append(Event(start=start, stop=stop, features=features))
        cursor = stop + gap + int(rng.integers(0, max(
            1, space // (n_events + 1))))

    names = [f"f{i}" for i in range(k)]
    return SynthData(train=train, test=test, labels=labels, events=events,
                     feature_names=names)
