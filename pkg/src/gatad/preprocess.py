"""Input preparation: min-max normalization and saliency-based cleaning.

Training data is normalized per feature to the [0, 1] span of the training
split, then obvious outliers are located on a spectral saliency map and
replaced with a local median, so the downstream model never fits to glitches.
Test data is normalized with the training stats and never cleaned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

Array = np.ndarray

_AMP_FLOOR = 1e-4  # relative amplitude floor; see sr_saliency


@dataclass(frozen=True)
class NormStats:
    """Per-feature extremes of the training split."""

    vmin: Array
    vmax: Array

    @property
    def num_features(self) -> int:
        return self.vmin.shape[0]


@dataclass(frozen=True)
class SrConfig:
    """Knobs for saliency detection and outlier replacement.

    score_threshold: a point is an outlier when its saliency exceeds the
        trailing local mean by this factor, i.e. (S - m) / m > threshold.
    spectrum_window: moving-average width on the log amplitude spectrum.
    local_window: number of preceding saliency points in the local mean.
    replacement_window: how many unflagged neighbours vote in the median
        that replaces a flagged value.
    """

    score_threshold: float = 3.0
    spectrum_window: int = 3
    local_window: int = 21
    replacement_window: int = 5


def fit_norm(train: Array) -> NormStats:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise DataError(f"training matrix must be non-empty 2-D, got {train.shape}")
    return NormStats(vmin=train.min(axis=0), vmax=train.max(axis=0))


def normalize(x: Array, stats: NormStats) -> Array:
    """(x - min) / (max - min) per feature, against training extremes.

    Values outside the training range land outside [0, 1]; nothing is
    clipped. A feature that was constant in training maps to all zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != stats.num_features:
        raise DataError(
            f"matrix shape {x.shape} does not match {stats.num_features} features")
    span = stats.vmax - stats.vmin
    out = np.zeros_like(x)
    live = span != 0.0
    out[:, live] = (x[:, live] - stats.vmin[live]) / span[live]
    return out


def sr_saliency(series: Array, cfg: SrConfig = SrConfig()) -> Array:
    """Spectral-residual saliency of a univariate series.

    The series is zero padded to the next power of two, transformed, and the
    log amplitude spectrum is compared against its own moving average; the
    residual spectrum is transformed back with the original phases and its
    magnitude, truncated to the original length, is the saliency map.

    Amplitudes are floored at a small fraction of the spectrum's maximum:
    padding can null out individual bins exactly, and an unbounded log there
    would punch huge residuals into neighbouring bins.

    A constant series is the zero-signal limit and gets an identically zero
    map; running the spectral chain on it would only measure the artificial
    edges of the zero padding.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise DataError(f"saliency expects a 1-D series, got shape {series.shape}")
    t = series.shape[0]
    if t < cfg.spectrum_window:
        raise DataError(
            f"series length {t} is shorter than the spectrum window "
            f"{cfg.spectrum_window}")
    if series.max() == series.min():
        return np.zeros(t)
    padded = 1 << (t - 1).bit_length()
    spectrum = np.fft.fft(series, n=padded)
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    floor = max(amplitude.max() * _AMP_FLOOR, 1e-300)
    log_amp = np.log(np.maximum(amplitude, floor))
    kernel = np.full(cfg.spectrum_window, 1.0 / cfg.spectrum_window)
    residual = log_amp - np.convolve(log_amp, kernel, mode="same")
    saliency = np.abs(np.fft.ifft(np.exp(residual + 1j * phase)))
    return saliency[:t]


def sr_detect(series: Array, cfg: SrConfig = SrConfig()) -> Array:
    """Boolean outlier flags for a univariate series.

    A point is flagged when its saliency exceeds (1 + threshold) times the
    mean saliency of the up-to-local_window preceding points. The first
    point has no history and is never flagged. Evaluated multiplicatively,
    which is the same predicate as (S - m) / m > threshold for m >= 0,
    including the degenerate m = 0 limit.
    """
    s = sr_saliency(series, cfg)
    t = s.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(s)])
    idx = np.arange(t)
    lo = np.maximum(0, idx - cfg.local_window)
    count = idx - lo
    local_sum = csum[idx] - csum[lo]
    flags = np.zeros(t, dtype=bool)
    has_history = count > 0
    mean = np.zeros(t)
    mean[has_history] = local_sum[has_history] / count[has_history]
    flags[has_history] = s[has_history] > (1.0 + cfg.score_threshold) * mean[has_history]
    return flags


def _replace_flagged(series: Array, flags: Array, window: int) -> Array:
    """Median-replace flagged points from the nearest unflagged neighbours.

    The search radius grows symmetrically; at the radius where the count
    reaches the window, everything collected so far (both sides of the final
    tie included) votes in the median. Donor values are always read from the
    original series, never from earlier replacements.
    """
    out = series.copy()
    t = series.shape[0]
    for i in np.flatnonzero(flags):
        donors: list[float] = []
        radius = 1
        while len(donors) < window and radius < t:
            for j in (i - radius, i + radius):
                if 0 <= j < t and not flags[j]:
                    donors.append(series[j])
            radius += 1
        out[i] = float(np.median(donors))
    return out


def clean(x: Array, cfg: SrConfig = SrConfig(),
          feature_names: list[str] | None = None,
          flags: Array | None = None) -> Array:
    """Detect and median-replace outliers independently per feature.

    flags, when given, is a precomputed boolean mask of x's shape and
    replaces saliency detection; cleaning is idempotent under a fixed mask.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"clean expects a 2-D matrix, got shape {x.shape}")
    if flags is not None and flags.shape != x.shape:
        raise DataError(f"flag mask shape {flags.shape} does not match {x.shape}")
    out = x.copy()
    for j in range(x.shape[1]):
        col_flags = sr_detect(x[:, j], cfg) if flags is None else flags[:, j]
        if col_flags.all():
            name = feature_names[j] if feature_names else f"column {j}"
            raise DataError(
                f"feature {name!r} is entirely flagged as anomalous; "
                "nothing left to interpolate from")
        if col_flags.any():
            out[:, j] = _replace_flagged(x[:, j], col_flags, cfg.replacement_window)
    return out
