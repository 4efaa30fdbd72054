"""The detector network and its training losses.

A window of n timesteps by k features is embedded by a width-7 temporal
convolution, mixed by feature-oriented and time-oriented attention, and the
three n-by-k blocks are fused side by side into n rows of width 3k. A GRU
scans the fused rows; its final hidden state feeds two heads:

* a three-layer forecaster predicting the row after the window, trained on
  the Euclidean norm of its error;
* a variational reconstructor (linear encoder to latent mean/log-sigma,
  one hidden decoder layer back to the flattened window) trained on
  Gaussian negative log-likelihood plus the standard-normal KL term.

Either attention block and either head can be switched off for ablations;
a disabled attention block is replaced by the convolution output so the
fused width never changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .gat import GatParams, feature_gat, time_gat
from .tensor import (
    Tape,
    Tensor,
    add_bias,
    clamp_min,
    concat,
    conv1d,
    exp,
    log,
    matmul,
    mean_all,
    repeat_new_axis,
    reshape,
    select_axis,
    sigmoid,
    sqrt,
    sum_all,
    sum_axis,
    tanh,
    transpose_last,
)

CONV_WIDTH = 7

Array = np.ndarray
ModelParams = dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and scoring knobs.

    k is the feature count of the dataset; everything else has a default.
    d1 sizes the GRU hidden state, d2 the fully-connected hidden layers of
    both heads, d3 the latent space. gamma balances forecast error against
    reconstruction evidence in the anomaly score.
    """

    k: int
    n: int = 100
    d1: int = 300
    d2: int = 300
    d3: int = 300
    gamma: float = 0.8
    use_feature_gat: bool = True
    use_time_gat: bool = True
    use_forecast: bool = True
    use_reconstruction: bool = True
    vae_samples_train: int = 1
    vae_samples_infer: int = 16
    recon_sigma_floor: float = 1e-3

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.n < 2:
            raise ConfigError(f"window length must be at least 2, got {self.n}")
        for name in ("d1", "d2", "d3"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if not (self.use_forecast or self.use_reconstruction):
            raise ConfigError("at least one head must stay enabled")
        if self.vae_samples_train < 1 or self.vae_samples_infer < 1:
            raise ConfigError("sample counts must be positive")
        if self.recon_sigma_floor <= 0:
            raise ConfigError("recon_sigma_floor must be positive")

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every trainable tensor, in a fixed order.

    fan_in is the input dimension feeding the parameter's layer and sets
    the uniform init range.
    """
    k, n = cfg.k, cfg.n
    d1, d2, d3 = cfg.d1, cfg.d2, cfg.d3
    flat = n * k
    gru_in = 3 * k
    specs: list[tuple[str, tuple[int, ...], int]] = [
        ("conv_kernel", (CONV_WIDTH, k, k), CONV_WIDTH * k),
        ("conv_bias", (k,), CONV_WIDTH * k),
        ("feat_attn_w", (2 * n,), 2 * n),
        ("time_attn_w", (2 * k,), 2 * k),
    ]
    for gate in ("z", "r", "c"):
        specs += [
            (f"gru_w{gate}", (gru_in, d1), gru_in),
            (f"gru_u{gate}", (d1, d1), d1),
            (f"gru_b{gate}", (d1,), d1),
        ]
    specs += [
        ("fore_w1", (d1, d2), d1), ("fore_b1", (d2,), d1),
        ("fore_w2", (d2, d2), d2), ("fore_b2", (d2,), d2),
        ("fore_w3", (d2, k), d2), ("fore_b3", (k,), d2),
        ("enc_mu_w", (d1, d3), d1), ("enc_mu_b", (d3,), d1),
        ("enc_logsig_w", (d1, d3), d1), ("enc_logsig_b", (d3,), d1),
        ("dec_hid_w", (d3, d2), d3), ("dec_hid_b", (d2,), d3),
        ("dec_mu_w", (d2, flat), d2), ("dec_mu_b", (flat,), d2),
        ("dec_logsig_w", (d2, flat), d2), ("dec_logsig_b", (flat,), d2),
    ]
    return specs


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per tensor."""
    params: ModelParams = {}
    for name, shape, fan_in in param_specs(cfg):
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape),
                              requires_grad=True)
    return params


def validate_params(params: ModelParams, cfg: ModelConfig) -> None:
    expected = {name: shape for name, shape, _ in param_specs(cfg)}
    got = {name: t.shape for name, t in params.items()}
    if got != expected:
        missing = expected.keys() - got.keys()
        extra = got.keys() - expected.keys()
        bad = {n for n in expected.keys() & got.keys() if expected[n] != got[n]}
        raise ConfigError(
            f"parameters do not fit the config: missing {sorted(missing)}, "
            f"unexpected {sorted(extra)}, wrong shapes {sorted(bad)}")


@dataclass
class ForwardOutput:
    """Everything one pass produces. Heads that are switched off are None.

    Decoder stats carry a sample axis: mu_x and sigma_x are (samples, n*k),
    batched (batch, samples, n*k). sigma_x is already floored.
    """

    forecast: Tensor | None
    mu_x: Tensor | None
    sigma_x: Tensor | None
    mu_z: Tensor | None
    log_sigma_z: Tensor | None
    sigma_z: Tensor | None
    alpha_feature: Tensor | None
    alpha_time: Tensor | None


def gru_cell(x: Tensor, h: Tensor, params: ModelParams) -> Tensor:
    """One GRU step: gates from the input row and the carried state.

    update z = sigmoid(x Wz + h Uz + bz)
    reset  r = sigmoid(x Wr + h Ur + br)
    cand   c = tanh(x Wc + (r * h) Uc + bc)
    h'       = (1 - z) * h + z * c
    """
    z = sigmoid(add_bias(matmul(x, params["gru_wz"]) + matmul(h, params["gru_uz"]),
                         params["gru_bz"]))
    r = sigmoid(add_bias(matmul(x, params["gru_wr"]) + matmul(h, params["gru_ur"]),
                         params["gru_br"]))
    cand = tanh(add_bias(matmul(x, params["gru_wc"]) + matmul(r * h, params["gru_uc"]),
                         params["gru_bc"]))
    return (1.0 - z) * h + z * cand


def fuse_blocks(conv_out: Tensor, feat_block: Tensor | None,
                time_block: Tensor | None) -> Tensor:
    """Column-concatenate the three n-by-k blocks into n-by-3k.

    A disabled attention block is replaced by the convolution output, so the
    fused width is 3k under every flag combination.
    """
    return concat([conv_out,
                   feat_block if feat_block is not None else conv_out,
                   time_block if time_block is not None else conv_out], axis=-1)


def forward(window: Tensor, params: ModelParams, cfg: ModelConfig,
            eps: Array | None = None, samples: int = 1) -> ForwardOutput:
    """Run the network on one window (n, k) or a batch (B, n, k).

    eps supplies the latent noise, shaped (samples, d3) for a single window
    or (B, samples, d3) for a batch; None means zero noise (the
    deterministic mean pass), with the sample axis sized by `samples`.
    Two calls with the same window and the same eps agree exactly.
    """
    single = window.ndim == 2
    x = reshape(window, (1,) + window.shape) if single else window
    if x.ndim != 3 or x.shape[1] != cfg.n or x.shape[2] != cfg.k:
        raise DimensionError(
            f"window shape {window.shape} does not match n={cfg.n}, k={cfg.k}")
    batch = x.shape[0]

    c = conv1d(x, params["conv_kernel"], params["conv_bias"])

    feat_block = alpha_feature = None
    if cfg.use_feature_gat:
        fout = feature_gat(c, GatParams(params["feat_attn_w"]))
        feat_block = transpose_last(fout.h)
        alpha_feature = fout.alpha
    time_block = alpha_time = None
    if cfg.use_time_gat:
        tout = time_gat(c, GatParams(params["time_attn_w"]))
        time_block = tout.h
        alpha_time = tout.alpha

    fused = fuse_blocks(c, feat_block, time_block)

    h = Tensor(np.zeros((batch, cfg.d1)))
    for t in range(cfg.n):
        h = gru_cell(select_axis(fused, 1, t), h, params)

    forecast = None
    if cfg.use_forecast:
        f1 = tanh(add_bias(matmul(h, params["fore_w1"]), params["fore_b1"]))
        f2 = tanh(add_bias(matmul(f1, params["fore_w2"]), params["fore_b2"]))
        forecast = add_bias(matmul(f2, params["fore_w3"]), params["fore_b3"])

    mu_x = sigma_x = mu_z = log_sigma_z = sigma_z = None
    if cfg.use_reconstruction:
        mu_z = add_bias(matmul(h, params["enc_mu_w"]), params["enc_mu_b"])
        log_sigma_z = add_bias(matmul(h, params["enc_logsig_w"]),
                               params["enc_logsig_b"])
        sigma_z = exp(log_sigma_z)
        if eps is None:
            eps_arr = np.zeros((batch, samples, cfg.d3))
        else:
            eps_arr = np.asarray(eps, dtype=np.float64)
            if single and eps_arr.ndim == 2:
                eps_arr = eps_arr[None]
            if eps_arr.shape[0] != batch or eps_arr.ndim != 3 \
                    or eps_arr.shape[2] != cfg.d3:
                raise DimensionError(
                    f"eps shape {eps_arr.shape} does not fit batch {batch}, "
                    f"d3 {cfg.d3}")
        n_samp = eps_arr.shape[1]
        z = repeat_new_axis(mu_z, 1, n_samp) \
            + repeat_new_axis(sigma_z, 1, n_samp) * Tensor(eps_arr)
        hid = tanh(add_bias(matmul(z, params["dec_hid_w"]), params["dec_hid_b"]))
        mu_x = add_bias(matmul(hid, params["dec_mu_w"]), params["dec_mu_b"])
        log_sigma_x = add_bias(matmul(hid, params["dec_logsig_w"]),
                               params["dec_logsig_b"])
        sigma_x = clamp_min(exp(log_sigma_x), cfg.recon_sigma_floor)

    def squeeze(t: Tensor | None) -> Tensor | None:
        if t is None or not single:
            return t
        return reshape(t, t.shape[1:])

    return ForwardOutput(
        forecast=squeeze(forecast),
        mu_x=squeeze(mu_x), sigma_x=squeeze(sigma_x),
        mu_z=squeeze(mu_z), log_sigma_z=squeeze(log_sigma_z),
        sigma_z=squeeze(sigma_z),
        alpha_feature=squeeze(alpha_feature), alpha_time=squeeze(alpha_time),
    )


def loss_forecast(pred: Tensor, target: Tensor) -> Tensor:
    """Euclidean norm of the forecast error.

    Vector inputs give one window's loss; matrix inputs (B, k) give the mean
    of per-window norms. Note this is the root of the error-sum, not of the
    mean, so a (3, 4) error vector costs exactly 5.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"forecast shapes {pred.shape} vs {target.shape}")
    diff = pred - target
    sq = sum_axis(diff * diff, -1) if pred.ndim == 2 else sum_all(diff * diff)
    norm = sqrt(sq)
    return mean_all(norm) if pred.ndim == 2 else norm


def kl_standard_normal(mu_z: Tensor, log_sigma_z: Tensor, sigma_z: Tensor) -> Tensor:
    """KL(q || N(0, I)) per window: 0.5 * sum(mu^2 + sigma^2 - 1 - 2 log sigma).

    Vector inputs give a scalar; matrix inputs (B, d3) give the batch mean.
    """
    per = mu_z * mu_z + sigma_z * sigma_z - 1.0 - 2.0 * log_sigma_z
    total = sum_axis(per, -1) if per.ndim == 2 else sum_all(per)
    total = total * 0.5
    return mean_all(total) if per.ndim == 2 else total


def loss_reconstruction(window: Tensor, out: ForwardOutput, cfg: ModelConfig) -> Tensor:
    """Gaussian negative log-likelihood of the window plus the latent KL.

    Uses the single training sample; decoder stats must carry exactly one
    sample. Batched inputs are averaged over the batch.
    """
    if out.mu_x is None:
        raise ConfigError("reconstruction head is disabled")
    single = window.ndim == 2
    sample_axis_len = out.mu_x.shape[0 if single else 1]
    if sample_axis_len != 1:
        raise ContractError(
            f"training reconstruction expects one decoder sample, got "
            f"{sample_axis_len}")
    flat_shape = (1, cfg.n * cfg.k) if single else (window.shape[0], 1, cfg.n * cfg.k)
    x_flat = reshape(window, flat_shape)
    mu = reshape(out.mu_x, flat_shape)
    sigma = reshape(out.sigma_x, flat_shape)
    diff = x_flat - mu
    point = log(sigma) + diff * diff / (2.0 * sigma * sigma)
    nll_sum = sum_axis(sum_axis(point, -1), -1)  # over n*k and the sample axis
    nll = nll_sum + 0.5 * math.log(2.0 * math.pi) * (cfg.n * cfg.k)
    nll = mean_all(nll) if not single else reshape(nll, ())
    return nll + kl_standard_normal(out.mu_z, out.log_sigma_z, out.sigma_z)


def loss_joint(window: Tensor, target: Tensor, out: ForwardOutput,
               cfg: ModelConfig) -> Tensor:
    """Sum of the enabled head losses, batch-averaged for batched inputs."""
    if not (cfg.use_forecast or cfg.use_reconstruction):
        raise ConfigError("both heads disabled; nothing to train")
    total: Tensor | None = None
    if cfg.use_forecast:
        total = loss_forecast(out.forecast, target)
    if cfg.use_reconstruction:
        rec = loss_reconstruction(window, out, cfg)
        total = rec if total is None else total + rec
    return total


def reconstruction_probability(window: Tensor | Array, out: ForwardOutput,
                               cfg: ModelConfig) -> Array:
    """Per-feature evidence that the window's last row is reconstructed well.

    For each decoder sample, the last row's observed value is scored with a
    unit-height Gaussian kernel exp(-(x - mu)^2 / (2 sigma^2)) at the
    matching decoder position; samples are averaged. Returns (k,) for one
    window, (B, k) for a batch, values in (0, 1].
    """
    if out.mu_x is None:
        raise ConfigError("reconstruction head is disabled")
    x = window.data if isinstance(window, Tensor) else np.asarray(window)
    single = x.ndim == 2
    if single:
        x = x[None]
    mu = out.mu_x.data
    sigma = out.sigma_x.data
    if single:
        mu, sigma = mu[None], sigma[None]
    last = x[:, -1, :]                                # (B, k)
    tail = slice((cfg.n - 1) * cfg.k, cfg.n * cfg.k)  # last row of the flat window
    mu_last = mu[:, :, tail]
    sigma_last = sigma[:, :, tail]
    kernel = np.exp(-((last[:, None, :] - mu_last) ** 2) / (2.0 * sigma_last ** 2))
    p = kernel.mean(axis=1)
    return p[0] if single else p
