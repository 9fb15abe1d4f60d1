"""The cascaded CNN + BiGRU classifier, its training loop and checkpoints.

Wiring::

    embedding(27 x E) -> conv K=3 | conv K=7 | conv K=11 -> concat -> batchnorm
      -> BiGRU -> concat(local, global) -> masked mean pool
      -> dense + ReLU -> dropout -> dense + sigmoid
"""

from __future__ import annotations

import copy
import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import NAMESPACES, container
from .annotations import Dataset
from .autodiff import (
    Adam,
    GRUWeights,
    Parameter,
    RunningStats,
    Tensor,
    batchnorm,
    bce_loss,
    bigru,
    concat,
    conv1d_same,
    dense,
    dropout,
    embedding,
    masked_mean_pool,
)
from .encoding import DEFAULT_ALPHABET, Alphabet
from .errors import CheckpointError, ConfigError, DatasetError, NumericalError, ShapeError
from .metrics import score_predictions
from .ontology import TermDictionary
from .rng import make_rng

log = logging.getLogger(__name__)

DOMAIN_OUTPUT_DIM = {"biological_process": 33, "cellular_component": 22, "molecular_function": 16}
DOMAIN_EPOCHS = {"biological_process": 48, "cellular_component": 128, "molecular_function": 155}


@dataclass
class ModelConfig:
    embed_dim: int = 50
    kernel_sizes: tuple[int, ...] = (3, 7, 11)
    conv_filters: int = 64
    gru_hidden: int = 300
    dense_hidden: int = 256
    output_dim: int = 33
    dropout_rate: float = 0.5
    max_len: int = 1000
    alphabet_hash: str = DEFAULT_ALPHABET.hash
    vocab_size: int = 27
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for name in ("embed_dim", "conv_filters", "gru_hidden", "dense_hidden", "output_dim",
                     "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 100
    epochs: int = 48
    validation_fraction: float = 0.10
    lr_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    seed: int = 0
    restore_best: bool = True

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")

    @classmethod
    def from_dict(cls, obj: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


def domain_config(namespace: str, **overrides) -> tuple[ModelConfig, TrainConfig]:
    """Model and training configs for one GO namespace; only width and epochs differ."""
    if namespace not in NAMESPACES:
        raise ConfigError(f"unknown namespace {namespace!r}")
    model_keys = {f.name for f in fields(ModelConfig)}
    mcfg = {"output_dim": DOMAIN_OUTPUT_DIM[namespace],
            **{k: v for k, v in overrides.items() if k in model_keys}}
    tcfg = {"epochs": DOMAIN_EPOCHS[namespace],
            **{k: v for k, v in overrides.items() if k not in model_keys}}
    return ModelConfig(**mcfg), TrainConfig.from_dict(tcfg)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable parameter, in initialisation order."""
    E, F, H = cfg.embed_dim, cfg.conv_filters, cfg.gru_hidden
    local = F * len(cfg.kernel_sizes)
    shapes: dict[str, tuple[int, ...]] = {"embedding.weight": (cfg.vocab_size, E)}
    for k in cfg.kernel_sizes:
        shapes[f"conv{k}.weight"] = (k, E, F)
        shapes[f"conv{k}.bias"] = (F,)
    shapes["bn.gamma"] = (local,)
    shapes["bn.beta"] = (local,)
    for d in ("fwd", "bwd"):
        shapes[f"bigru.{d}.W"] = (local, 3 * H)
        shapes[f"bigru.{d}.U"] = (H, 3 * H)
        shapes[f"bigru.{d}.b"] = (3 * H,)
    shapes["dense.weight"] = (local + 2 * H, cfg.dense_hidden)
    shapes["dense.bias"] = (cfg.dense_hidden,)
    shapes["out.weight"] = (cfg.dense_hidden, cfg.output_dim)
    shapes["out.bias"] = (cfg.output_dim,)
    return shapes


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _init_value(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(("bias", ".b", "beta")):
        return np.zeros(shape)
    if name == "bn.gamma":
        return np.ones(shape)
    if name.startswith("conv"):
        k, cin, cout = shape
        return _glorot(rng, shape, k * cin, k * cout)
    if name.endswith(".U"):
        h = shape[0]
        return np.concatenate([_orthogonal(rng, h) for _ in range(3)], axis=1)
    return _glorot(rng, shape, shape[0], shape[1])


class Model:
    def __init__(self, config: ModelConfig, params: dict[str, Parameter],
                 bn_stats: RunningStats):
        self.config = config
        self.params = params
        self.bn_stats = bn_stats

    @property
    def dtype(self):
        return self.params["embedding.weight"].dtype

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _gru(self, direction: str) -> GRUWeights:
        p = self.params
        return GRUWeights(p[f"bigru.{direction}.W"], p[f"bigru.{direction}.U"],
                          p[f"bigru.{direction}.b"])

    def forward(self, indices: np.ndarray, mask: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None) -> Tensor:
        """Probabilities B x output_dim. Train mode uses batch stats and dropout."""
        indices = np.asarray(indices)
        mask = np.asarray(mask)
        if indices.ndim != 2 or mask.shape != indices.shape:
            raise ShapeError(f"expected B x L indices and mask, got {indices.shape} / {mask.shape}")
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown mode {mode!r}")
        p, cfg = self.params, self.config
        m = mask.astype(self.dtype)
        # zero the padded embeddings so convolutions near the sequence end
        # see the same zeros regardless of how much padding follows
        x = embedding(indices, p["embedding.weight"]) * m[:, :, None]
        local = concat([conv1d_same(x, p[f"conv{k}.weight"], p[f"conv{k}.bias"])
                        for k in cfg.kernel_sizes])
        local = batchnorm(local, p["bn.gamma"], p["bn.beta"], self.bn_stats, mode)
        glob = bigru(local, mask, self._gru("fwd"), self._gru("bwd"))
        pooled = masked_mean_pool(concat([local, glob]), mask)
        h = dense(pooled, p["dense.weight"], p["dense.bias"], "relu")
        h = dropout(h, cfg.dropout_rate, mode, rng)
        return dense(h, p["out.weight"], p["out.bias"], "sigmoid")

    __call__ = forward

    def predict_proba(self, indices: np.ndarray, mask: np.ndarray,
                      batch_size: int = 128) -> np.ndarray:
        out = [self.forward(indices[i:i + batch_size], mask[i:i + batch_size], "eval").data
               for i in range(0, len(indices), batch_size)]
        if not out:
            return np.zeros((0, self.config.output_dim), dtype=self.dtype)
        return np.concatenate(out)

    def check_dataset(self, dataset: Dataset) -> None:
        if dataset.labels.shape[1] != self.config.output_dim:
            raise DatasetError(
                f"dataset has {dataset.labels.shape[1]} labels, model outputs "
                f"{self.config.output_dim}")
        if dataset.alphabet_hash != self.config.alphabet_hash:
            raise DatasetError("dataset and model were built with different alphabets")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.params.items()}
        state["bn.running_mean"] = self.bn_stats.mean.copy()
        state["bn.running_var"] = self.bn_stats.var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], bn_count: int | None = None) -> None:
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise CheckpointError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]
        self.bn_stats.mean = state["bn.running_mean"].astype(self.dtype, copy=True)
        self.bn_stats.var = state["bn.running_var"].astype(self.dtype, copy=True)
        if bn_count is not None:
            self.bn_stats.count = bn_count


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    rng = make_rng(seed, "init")
    params = {name: Parameter(_init_value(name, shape, rng).astype(dtype), name)
              for name, shape in parameter_shapes(cfg).items()}
    local = cfg.conv_filters * len(cfg.kernel_sizes)
    return Model(cfg, params, RunningStats.zeros(local, dtype, cfg.bn_momentum))


@dataclass
class Checkpoint:
    model_config: ModelConfig
    dictionary: TermDictionary
    state: dict[str, np.ndarray]
    bn_count: int = 0
    train_log: list[dict] = field(default_factory=list)
    train_config: dict | None = None
    best_epoch: int | None = None

    def __post_init__(self):
        if self.dictionary.size != self.model_config.output_dim:
            raise CheckpointError(
                f"dictionary size {self.dictionary.size} != output_dim "
                f"{self.model_config.output_dim}")

    @classmethod
    def from_model(cls, model: Model, dictionary: TermDictionary, **kw) -> Checkpoint:
        return cls(copy.deepcopy(model.config), dictionary, model.state_dict(),
                   model.bn_stats.count, **kw)

    def to_model(self) -> Model:
        dtype = self.state["embedding.weight"].dtype
        model = build_model(self.model_config, 0, dtype)
        model.load_state_dict(self.state, self.bn_count)
        return model


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    header = {
        "kind": "checkpoint",
        "model_config": ckpt.model_config.to_dict(),
        "alphabet_hash": ckpt.model_config.alphabet_hash,
        "dictionary": ckpt.dictionary.to_json(),
        "bn_count": ckpt.bn_count,
        "train_log": ckpt.train_log,
        "train_config": ckpt.train_config,
        "best_epoch": ckpt.best_epoch,
    }
    container.write(path, header, ckpt.state)


def load_checkpoint(path: str | Path, dictionary: TermDictionary | None = None,
                    alphabet: Alphabet | None = None) -> Checkpoint:
    """Read and validate a checkpoint; optionally refuse a mismatched dictionary or alphabet."""
    header, arrays = container.read(path, kind="checkpoint")
    cfg = ModelConfig.from_dict(header["model_config"])
    if header.get("alphabet_hash") != cfg.alphabet_hash:
        raise CheckpointError("alphabet hash in header disagrees with model config")
    if alphabet is not None and alphabet.hash != cfg.alphabet_hash:
        raise CheckpointError(
            f"checkpoint alphabet {cfg.alphabet_hash} does not match requested "
            f"alphabet {alphabet.hash}; re-encode or retrain")
    ckpt_dict = TermDictionary.from_json(header["dictionary"])
    if dictionary is not None and dictionary.size != cfg.output_dim:
        raise CheckpointError(
            f"checkpoint predicts {cfg.output_dim} terms but the dictionary has "
            f"{dictionary.size} ({dictionary.namespace})")
    expected = dict(parameter_shapes(cfg))
    local = cfg.conv_filters * len(cfg.kernel_sizes)
    expected["bn.running_mean"] = (local,)
    expected["bn.running_var"] = (local,)
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        if tuple(arrays[name].shape) != shape:
            raise CheckpointError(f"{name} has shape {arrays[name].shape}, expected {shape}")
    return Checkpoint(cfg, ckpt_dict, arrays, int(header["bn_count"]),
                      list(header.get("train_log") or []), header.get("train_config"),
                      header.get("best_epoch"))


def _bce_numpy(probs: np.ndarray, target: np.ndarray, eps: float = 1e-7) -> float:
    p = np.clip(probs.astype(np.float64), eps, 1 - eps)
    y = target.astype(np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).sum() / len(p))


def split_indices(n: int, validation_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first ~10% become validation rows."""
    order = make_rng(seed, "split").permutation(n)
    n_val = int(round(n * validation_fraction))
    n_val = min(max(n_val, 1), n - 1) if n >= 2 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(model: Model, dataset: Dataset, tcfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Adam on the batch-averaged BCE with halve-on-plateau LR decay.

    The returned checkpoint (and ``model`` on return) holds the parameters
    from the epoch with the lowest validation loss, or from the last epoch
    when ``restore_best`` is off.
    """
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    model.check_dataset(dataset)
    train_rows, val_rows = split_indices(len(dataset), tcfg.validation_fraction, tcfg.seed)
    if len(val_rows) == 0:
        log.warning("dataset too small for a validation split; validating on training rows")
        val_rows = train_rows
    shuffle_rng = make_rng(tcfg.seed, "shuffle")
    dropout_rng = make_rng(tcfg.seed, "dropout")
    opt = Adam(model.parameters(), tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    labels = dataset.labels

    history: list[dict] = []
    best_loss, best_state, best_epoch, bad_epochs = math.inf, None, None, 0
    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(train_rows)
        total = 0.0
        for b, start in enumerate(range(0, len(order), tcfg.batch_size)):
            rows = order[start:start + tcfg.batch_size]
            model.zero_grad()
            probs = model.forward(dataset.indices[rows], dataset.mask[rows], "train", dropout_rng)
            loss = bce_loss(probs, labels[rows])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step()
            total += value * len(rows)
        train_loss = total / len(order)

        val_probs = model.predict_proba(dataset.indices[val_rows], dataset.mask[val_rows])
        val_loss = _bce_numpy(val_probs, labels[val_rows])
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        report = score_predictions(val_probs, labels[val_rows], tcfg.threshold)
        entry = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                 "val_f1": report.f1, "val_mcc": report.mcc, "lr": opt.lr}
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)

        if val_loss < best_loss:
            best_loss, best_epoch, bad_epochs = val_loss, epoch, 0
            best_state = (model.state_dict(), model.bn_stats.count)
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.lr_patience:
                if opt.lr > tcfg.min_lr:
                    opt.lr = max(opt.lr * tcfg.lr_factor, tcfg.min_lr)
                bad_epochs = 0

    if tcfg.restore_best and best_state is not None:
        model.load_state_dict(*best_state)
    elif not tcfg.restore_best:
        best_epoch = tcfg.epochs or None
    return Checkpoint.from_model(model, dataset.dictionary, train_log=history,
                                 train_config=tcfg.to_dict(), best_epoch=best_epoch)
