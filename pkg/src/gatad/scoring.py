"""Anomaly scores for a series and the tail fit that thresholds them.

Scoring slides the training window over the series (stride one). For the
row after each window, the forecast head contributes its squared error per
feature, and the reconstruction head contributes the probability that the
window's last row matches the decoded distribution, averaged over several
latent samples. Both are blended into

    score = (err^2 + gamma * (1 - p)) / (1 + gamma)

per feature; a row's total score is the sum over features. A disabled head
contributes its neutral element (zero error, probability one), leaving the
blend's scale unchanged across ablations.

Latent noise during scoring is drawn per window from a stream keyed by
(seed, window index), so results do not depend on the batch size used.

The detection threshold extrapolates the score tail: excesses over an
empirical quantile are fitted with a generalized Pareto distribution by
maximum likelihood (profile-likelihood root search plus the exponential
limit as a candidate), and the threshold is the level exceeded with a
chosen small probability q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, DataError
from .network import ModelConfig, ModelParams, forward, reconstruction_probability
from .tensor import Tensor
from .trainer import make_windows

Array = np.ndarray


@dataclass
class ScoreSeries:
    """Per-timestamp scores for rows n .. T-1 of a series.

    offsets[i] is the scored row index; scores[i] are its per-feature
    values and total[i] their sum. err2 and p keep the raw head outputs
    (neutral values when a head is disabled) for inspection and export.
    """

    offsets: Array
    scores: Array
    total: Array
    err2: Array
    p: Array

    def __post_init__(self):
        if not np.allclose(self.total, self.scores.sum(axis=1), atol=1e-12):
            raise ConfigError("total must be the per-feature row sum")


def combine_scores(err2: Array, p: Array, gamma: float) -> Array:
    """Blend squared forecast error with reconstruction evidence."""
    if gamma < 0:
        raise ConfigError(f"gamma must be non-negative, got {gamma}")
    err2 = np.asarray(err2, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if err2.shape != p.shape:
        raise ConfigError(f"score shapes differ: {err2.shape} vs {p.shape}")
    return (err2 + gamma * (1.0 - p)) / (1.0 + gamma)


def score_stream(values: Array, params: ModelParams, cfg: ModelConfig,
                 seed: int = 0, batch_size: int = 64) -> ScoreSeries:
    """Score every row of a (T, k) series that has a full window before it.

    The noise for window i comes from a dedicated stream seeded by
    (seed, i), so any batch size gives bit-identical scores.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != cfg.k:
        raise ConfigError(
            f"series shape {values.shape} does not match the model's "
            f"k={cfg.k} features")
    if not np.all(np.isfinite(values)):
        raise DataError("series contains non-finite values")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    windows, targets, offsets = make_windows(values, cfg.n, stride=1)
    count = windows.shape[0]
    err2 = np.zeros((count, cfg.k))
    p = np.ones((count, cfg.k))
    for start in range(0, count, batch_size):
        stop = min(start + batch_size, count)
        eps = None
        if cfg.use_reconstruction:
            eps = np.stack([
                np.random.default_rng(np.random.SeedSequence([seed, i]))
                .standard_normal((cfg.vae_samples_infer, cfg.d3))
                for i in range(start, stop)])
        out = forward(Tensor(windows[start:stop]), params, cfg, eps=eps)
        if cfg.use_forecast:
            err2[start:stop] = (out.forecast.data - targets[start:stop]) ** 2
        if cfg.use_reconstruction:
            p[start:stop] = reconstruction_probability(
                windows[start:stop], out, cfg)
    scores = combine_scores(err2, p, cfg.gamma)
    return ScoreSeries(offsets=offsets, scores=scores,
                       total=scores.sum(axis=1), err2=err2, p=p)


@dataclass(frozen=True)
class PotResult:
    """A fitted score threshold and the tail model behind it."""

    threshold: float
    tail_start: float
    xi: float
    sigma: float
    n_excess: int
    n_total: int


def _gpd_profile_terms(theta: float, y: Array) -> tuple[float, float]:
    """u = mean(1 / (1 + theta y)), v = mean(log(1 + theta y))."""
    w = 1.0 + theta * y
    return float(np.mean(1.0 / w)), float(np.mean(np.log(w)))


def _profile_log_likelihood(theta: float, y: Array) -> float:
    """GPD log-likelihood at the profile estimates implied by theta."""
    n = y.size
    _, v = _gpd_profile_terms(theta, y)
    xi = v
    if xi == 0.0 or xi / theta <= 0.0:
        return -np.inf
    return -n * np.log(xi / theta) - n * (xi + 1.0)


def pot_fit(scores: Array, q: float = 1e-3, init_quantile: float = 0.98,
            min_excesses: int = 20) -> PotResult:
    """Fit the score tail and return the level exceeded with probability q.

    Excesses over the empirical init_quantile are modeled as generalized
    Pareto. The shape/scale maximizing the likelihood is found by solving
    the profile root equation u(theta) (1 + v(theta)) = 1 with a bracketed
    root search, always keeping the exponential (shape-zero) fit as a
    candidate; the best candidate by likelihood wins. The threshold then
    extrapolates to exceedance probability q.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise DataError(f"scores must be a non-empty vector, got {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise DataError("scores contain non-finite values")
    if not (0.0 < q < 1.0):
        raise ConfigError(f"q must be in (0, 1), got {q}")
    if not (0.0 < init_quantile < 1.0):
        raise ConfigError(
            f"init_quantile must be in (0, 1), got {init_quantile}")
    n_total = scores.size
    t = float(np.quantile(scores, init_quantile))
    y = scores[scores > t] - t
    n_excess = int(y.size)
    if n_excess < min_excesses:
        raise DataError(
            f"only {n_excess} scores exceed the initial threshold; need at "
            f"least {min_excesses}. Lower init_quantile or score more data.")
    if q * n_total >= n_excess:
        raise ConfigError(
            f"q={q} asks for {q * n_total:.1f} expected exceedances but only "
            f"{n_excess} scores sit above the initial threshold; the "
            f"extrapolation must reach beyond it. Use a smaller q.")

    y_mean = float(np.mean(y))
    y_max = float(np.max(y))
    # candidates: the exponential limit, plus every root of the profile
    # equation u(theta) (1 + v(theta)) = 1 found by bracketed search over
    # theta > -1/max(y)
    best_ll = -n_excess * np.log(y_mean) - n_excess
    xi, sigma = 0.0, y_mean

    def root_fn(theta: float) -> float:
        u, v = _gpd_profile_terms(theta, y)
        return u * (1.0 + v) - 1.0

    # the equation is defined for theta > -1/max(y), theta != 0; cover that
    # range with points packed toward both singular ends and zero
    lo = -1.0 / y_max
    tiny = 1e-9 / y_mean
    near_lo = lo + abs(lo) * np.geomspace(1e-9, 0.999, 100)
    near_zero_neg = -np.geomspace(tiny, 0.999 * abs(lo), 100)
    positive = np.geomspace(tiny, 1e4 / y_mean, 120)
    grid = np.unique(np.concatenate([near_lo, near_zero_neg, positive]))
    vals = np.array([root_fn(th) for th in grid])
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if not (np.isfinite(a) and np.isfinite(b)) or a * b > 0:
            continue
        theta = float(brentq(root_fn, grid[i], grid[i + 1], xtol=1e-14))
        if theta == 0.0:
            continue
        ll = _profile_log_likelihood(theta, y)
        if ll > best_ll:
            _, v = _gpd_profile_terms(theta, y)
            best_ll, xi, sigma = ll, v, v / theta

    ratio = q * n_total / n_excess
    if abs(xi) < 1e-8:
        threshold = t + sigma * np.log(1.0 / ratio)
    else:
        threshold = t + (sigma / xi) * (ratio ** -xi - 1.0)
    return PotResult(threshold=float(threshold), tail_start=t, xi=float(xi),
                     sigma=float(sigma), n_excess=n_excess, n_total=n_total)


def detect(total: Array, threshold: float) -> Array:
    """Flag rows whose total score strictly exceeds the threshold."""
    total = np.asarray(total, dtype=np.float64)
    return total > threshold
