"""Window extraction, Adam, the training loop, and checkpoints.

Training slides a length-n window over the series with a configurable
stride; each window's target is the row immediately after it. Windows are
shuffled every epoch and batched, the joint loss is backpropagated through
the tape, and Adam applies bias-corrected moment updates. A tail fraction
of the window list is held out for validation and scored with zero latent
noise, so the validation curve is deterministic given the parameters.

All randomness (init, shuffling, latent noise) derives from one seed
through independent child streams, so a run is reproducible bit for bit.

Checkpoints are a single binary file: a magic line with a format version,
an ASCII byte count, a sorted-key JSON header (config, normalization
stats, feature names, training metadata, tensor manifest), then the raw
little-endian float64 tensor blobs in manifest order. Nothing
time-dependent is stored, so saving the same state twice produces
byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointVersionError,
    ConfigError,
    CorruptCheckpointError,
    DataError,
    DomainError,
    NumericError,
)
from .network import (
    ModelConfig,
    ModelParams,
    forward,
    init_params,
    loss_joint,
    param_specs,
    validate_params,
)
from .preprocess import NormStats
from .tensor import Tape, Tensor

Array = np.ndarray

CHECKPOINT_MAGIC = b"GATADCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    stride: int = 1
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError(
                f"val_fraction must be in [0, 1), got {self.val_fraction}")


def make_windows(values: Array, n: int, stride: int = 1
                 ) -> tuple[Array, Array, Array]:
    """Slice a (T, k) series into forecast examples.

    Window i covers rows [i*stride, i*stride + n) and its target is the row
    right after, so the series must be at least n + 1 rows long. Returns
    (windows (W, n, k), targets (W, k), offsets (W,)) where offsets[i] is
    the row index each window predicts.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"series must be 2-D, got shape {values.shape}")
    t = values.shape[0]
    if t <= n:
        raise DataError(
            f"series has {t} rows but windows need n + 1 = {n + 1}")
    count = (t - n - 1) // stride + 1
    starts = np.arange(count) * stride
    windows = np.stack([values[s:s + n] for s in starts])
    offsets = starts + n
    targets = values[offsets]
    return windows, targets, offsets


class Adam:
    """Adam with bias-corrected first and second moments.

    step() consumes each parameter's accumulated gradient and clears it;
    parameters whose gradient is None (e.g. heads disabled this run) are
    left untouched.
    """

    def __init__(self, params: ModelParams, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None


@dataclass
class TrainResult:
    params: ModelParams
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)


def _batched_loss(windows: Array, targets: Array, params: ModelParams,
                  cfg: ModelConfig, eps: Array | None) -> Tensor:
    wb = Tensor(windows)
    tb = Tensor(targets)
    out = forward(wb, params, cfg, eps=eps)
    return loss_joint(wb, tb, out, cfg)


def train(values: Array, model_cfg: ModelConfig, train_cfg: TrainConfig,
          progress=None) -> TrainResult:
    """Fit the network to a (T, k) training series.

    The window list's tail (val_fraction of it) is held out; the rest is
    shuffled each epoch. Reported losses are per-window means. A non-finite
    loss or gradient anywhere surfaces as NumericError naming the epoch and
    batch where training diverged. progress, when given, is called after
    each epoch with (epoch, train_loss, val_loss or None).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != model_cfg.k:
        raise DataError(
            f"training series shape {values.shape} does not provide "
            f"k={model_cfg.k} features")
    if not np.all(np.isfinite(values)):
        raise DataError("training series contains non-finite values")
    windows, targets, _ = make_windows(values, model_cfg.n, train_cfg.stride)
    total = windows.shape[0]
    n_val = int(total * train_cfg.val_fraction)
    n_train = total - n_val
    if n_train < 1:
        raise DataError("no training windows left after the validation split")

    init_ss, shuffle_ss, eps_ss = np.random.SeedSequence(train_cfg.seed).spawn(3)
    params = init_params(model_cfg, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    eps_rng = np.random.default_rng(eps_ss)
    adam = Adam(params, lr=train_cfg.lr)
    result = TrainResult(params=params)
    n_samp = model_cfg.vae_samples_train

    for epoch in range(train_cfg.epochs):
        order = shuffle_rng.permutation(n_train)
        loss_sum = 0.0
        for start in range(0, n_train, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            eps = None
            if model_cfg.use_reconstruction:
                eps = eps_rng.standard_normal((len(idx), n_samp, model_cfg.d3))
            try:
                with Tape() as tape:
                    loss = _batched_loss(windows[idx], targets[idx],
                                         params, model_cfg, eps)
                    tape.backward(loss)
            except DomainError as err:
                raise NumericError(
                    f"training diverged at epoch {epoch}, "
                    f"batch {start // train_cfg.batch_size}: {err}") from err
            adam.step()
            loss_sum += float(loss.data) * len(idx)
        result.train_losses.append(loss_sum / n_train)

        if n_val:
            val_sum = 0.0
            for start in range(n_train, total, train_cfg.batch_size):
                sl = slice(start, min(start + train_cfg.batch_size, total))
                eps = None
                if model_cfg.use_reconstruction:
                    eps = np.zeros((sl.stop - sl.start, n_samp, model_cfg.d3))
                loss = _batched_loss(windows[sl], targets[sl],
                                     params, model_cfg, eps)
                val_sum += float(loss.data) * (sl.stop - sl.start)
            result.val_losses.append(val_sum / n_val)
        if progress is not None:
            progress(epoch, result.train_losses[-1],
                     result.val_losses[-1] if n_val else None)
    return result


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    norm: NormStats | None
    feature_names: list[str] | None
    train_meta: dict


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    norm: NormStats | None = None,
                    feature_names: list[str] | None = None,
                    train_meta: dict | None = None) -> None:
    """Write parameters plus everything needed to score new data.

    The file layout is: a magic/version line, an ASCII header byte count,
    a canonical (sorted-key, no-whitespace) JSON header, then raw
    little-endian float64 blobs in manifest order. The content is a pure
    function of the arguments, so identical state saves identical bytes.
    """
    validate_params(params, config)
    if feature_names is not None and len(feature_names) != config.k:
        raise ConfigError(
            f"{len(feature_names)} feature names for k={config.k}")
    manifest = []
    blobs = []
    offset = 0
    for name, shape, _ in param_specs(config):
        blob = np.ascontiguousarray(params[name].data, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(shape),
                         "offset": offset, "size": len(blob)})
        offset += len(blob)
        blobs.append(blob)
    header = {
        "config": asdict(config),
        "norm": None if norm is None else
            {"vmin": norm.vmin.tolist(), "vmax": norm.vmax.tolist()},
        "feature_names": None if feature_names is None else list(feature_names),
        "train_meta": train_meta or {},
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        fh.write(b"%d\n" % len(head))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    magic_end = raw.find(b"\n")
    if magic_end < 0 or not raw.startswith(CHECKPOINT_MAGIC + b" "):
        raise CorruptCheckpointError(f"{path} is not a checkpoint file")
    try:
        version = int(raw[len(CHECKPOINT_MAGIC) + 1:magic_end])
    except ValueError as err:
        raise CorruptCheckpointError(f"{path}: unreadable version") from err
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path} is format version {version}, "
            f"this build reads version {CHECKPOINT_VERSION}")
    len_end = raw.find(b"\n", magic_end + 1)
    if len_end < 0:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        head_len = int(raw[magic_end + 1:len_end])
        header = json.loads(raw[len_end + 1:len_end + 1 + head_len])
        config = ModelConfig(**header["config"])
        manifest = header["tensors"]
    except (ValueError, TypeError, KeyError) as err:
        raise CorruptCheckpointError(f"{path}: broken header: {err}") from err
    body = raw[len_end + 1 + head_len:]
    expected = sum(entry["size"] for entry in manifest)
    if len(body) != expected:
        raise CorruptCheckpointError(
            f"{path}: tensor payload is {len(body)} bytes, header promises "
            f"{expected}")
    params: ModelParams = {}
    try:
        for entry in manifest:
            chunk = body[entry["offset"]:entry["offset"] + entry["size"]]
            arr = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"]).copy()
            params[entry["name"]] = Tensor(arr, requires_grad=True)
    except (ValueError, TypeError, KeyError, DomainError) as err:
        raise CorruptCheckpointError(f"{path}: broken tensor data: {err}") from err
    validate_params(params, config)
    norm = None
    if header.get("norm") is not None:
        norm = NormStats(vmin=np.asarray(header["norm"]["vmin"], dtype=float),
                         vmax=np.asarray(header["norm"]["vmax"], dtype=float))
    return Checkpoint(params=params, config=config, norm=norm,
                      feature_names=header.get("feature_names"),
                      train_meta=header.get("train_meta") or {})
