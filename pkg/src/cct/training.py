"""Loss, AdamW, the epoch loop and the binary checkpoint format."""

from __future__ import annotations

import csv
import io
import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import data as D
from .config import cct_config_from_text, cct_config_to_text
from .model import CctConfig, ModelParams, check_params, forward, init_params, param_shapes, predict_logits
from .nn import DropState
from .tensor import NonFiniteError, ShapeError, Tensor, _make

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# loss


def label_smoothed_ce(logits: Tensor, onehot, eps: float = 0.1) -> Tensor:
    """Mean cross-entropy against ``onehot * (1 - eps) + eps / K``."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {eps}")
    y = np.asarray(onehot.data if isinstance(onehot, Tensor) else onehot, dtype=logits.data.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"targets {y.shape} do not match logits {logits.shape}")
    B, K = logits.shape
    target = y * (1.0 - eps) + eps / K
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = np.asarray(-(target * logp).sum() / B, dtype=logits.data.dtype)

    def bw(g):
        return (g * (np.exp(logp) - target) / B,)

    return _make(loss, (logits,), bw, "label_smoothed_ce")


def ce_numpy(logits: np.ndarray, labels: np.ndarray, eps: float) -> float:
    """Same loss on plain arrays (validation)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    K = logits.shape[1]
    target = D.one_hot(labels, K).astype(np.float64) * (1.0 - eps) + eps / K
    return float(-(target * logp).sum() / len(labels))


# ---------------------------------------------------------------------------
# optimiser


class AdamW:
    """Adam with decoupled weight decay.

    ``theta <- theta * (1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps)``
    """

    def __init__(self, params: ModelParams, lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        shrink = 1.0 - self.lr * self.weight_decay
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.shape:
                raise ShapeError(f"{k}: gradient {g.shape} does not match parameter {p.shape}")
            dt = p.data.dtype
            m = self.m[k]
            v = self.v[k]
            m *= dt.type(b1)
            m += dt.type(1.0 - b1) * g
            v *= dt.type(b2)
            v += dt.type(1.0 - b2) * (g * g)
            update = (m / dt.type(c1)) / (np.sqrt(v / dt.type(c2)) + dt.type(self.eps))
            p.data = p.data * dt.type(shrink) - dt.type(self.lr) * update


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"CCTCKPT1"
VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def fnv1a64(buf: bytes) -> int:
    h = _FNV_OFFSET
    for byte in buf:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@dataclass
class Checkpoint:
    config: CctConfig
    params: dict[str, np.ndarray]
    best_val_accuracy: float = 0.0
    epoch: int = 0

    def to_model(self, config: CctConfig | None = None) -> ModelParams:
        """Parameter tensors, after checking they fit ``config`` (default: own config)."""
        config = config or self.config
        ensure_compatible(self, config)
        return {k: Tensor(v, name=k, dtype=np.float32) for k, v in self.params.items()}


def ensure_compatible(ck: Checkpoint, config: CctConfig) -> None:
    if ck.config.architecture_fingerprint() != config.architecture_fingerprint():
        raise ConfigMismatchError(
            f"checkpoint architecture {ck.config.architecture_fingerprint()} does not match "
            f"model config {config.architecture_fingerprint()}"
        )
    expected = param_shapes(config)
    if list(ck.params) != list(expected):
        raise ConfigMismatchError("checkpoint parameter names do not match the model config")
    for k, shape in expected.items():
        if ck.params[k].shape != shape:
            raise ConfigMismatchError(f"{k}: checkpoint shape {ck.params[k].shape} vs config {shape}")


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    cfg = cct_config_to_text(ck.config).encode("utf-8")
    out.write(struct.pack("<I", len(cfg)))
    out.write(cfg)
    out.write(struct.pack("<I", len(ck.params)))
    for name, arr in ck.params.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out.write(struct.pack("<H", len(nb)))
        out.write(nb)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.tobytes())
    out.write(struct.pack("<f", ck.best_val_accuracy))
    out.write(struct.pack("<I", ck.epoch))
    body = out.getvalue()
    return body + struct.pack("<Q", fnv1a64(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < len(MAGIC) and MAGIC.startswith(buf):
        raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(buf)}")
    if buf[:len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic: not a CCT checkpoint")
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    # structural pass first; nothing is decoded until the checksum holds
    (clen,) = r.unpack("<I")
    cfg_raw = r.take(clen)
    (count,) = r.unpack("<I")
    raw_params = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name_raw = r.take(nlen)
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        raw_params.append((name_raw, dims, r.take(4 * n)))
    (best,) = r.unpack("<f")
    (epoch,) = r.unpack("<I")
    body_end = r.pos
    (checksum,) = r.unpack("<Q")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checksum")
    if fnv1a64(buf[:body_end]) != checksum:
        raise ChecksumMismatchError("checksum mismatch: checkpoint corrupted")
    try:
        config = cct_config_from_text(cfg_raw.decode("utf-8"))
        params = {name.decode("utf-8"): np.frombuffer(blob, dtype="<f4").reshape(dims).astype(np.float32)
                  for name, dims, blob in raw_params}
    except (UnicodeDecodeError, ValueError) as exc:
        raise ConfigMismatchError(f"embedded config unreadable: {exc}") from exc
    ck = Checkpoint(config, params, float(best), int(epoch))
    ensure_compatible(ck, config)
    return ck


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# training loop

LOG_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "wall_seconds")


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_seconds: float


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in self.rows:
            w.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.train_acc:.6f}", f"{r.val_loss:.6f}",
                        f"{r.val_acc:.6f}", f"{r.wall_seconds if timing else 0.0:.3f}"])
        return buf.getvalue()

    def write(self, path, timing: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv(timing))

    @classmethod
    def read(cls, path) -> TrainLog:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != LOG_FIELDS:
                raise ValueError(f"{path}: header {reader.fieldnames} is not {','.join(LOG_FIELDS)}")
            rows = [EpochRow(int(r["epoch"]), *(float(r[k]) for k in LOG_FIELDS[1:])) for r in reader]
        return cls(rows)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}{': ' + detail if detail else ''}")


def fit_val_splits(config: CctConfig, bundle: D.DatasetBundle) -> tuple[D.Split, D.Split]:
    """Holdout from the official train split; ``val_fraction == 0`` validates on the fit set."""
    if len(bundle.train) == 0:
        raise D.DataError("training split is empty")
    if config.val_fraction == 0:
        return bundle.train, bundle.train
    return D.holdout_split(bundle.train, config.val_fraction, config.seed)


def evaluate_split(params: ModelParams, config: CctConfig, split: D.Split) -> tuple[float, float]:
    logits = predict_logits(split.images, params, config)
    acc = float((logits.argmax(axis=1) == split.labels).mean())
    return ce_numpy(logits, split.labels, config.label_smoothing), acc


def train_step(params: ModelParams, opt: AdamW, config: CctConfig, images, onehot, drop: DropState):
    for p in params.values():
        p.grad = None
    logits = forward(images, params, config, drop)
    loss = label_smoothed_ce(logits, onehot, config.label_smoothing)
    loss.backward()
    opt.step()
    return float(loss.data), logits.data


def train(
    config: CctConfig,
    bundle: D.DatasetBundle,
    on_epoch: Callable[[EpochRow], None] | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Run ``config.epochs`` epochs and return the best-validation checkpoint and the log.

    Ties in validation accuracy keep the earlier epoch.
    """
    config.validate()
    fit, val = fit_val_splits(config, bundle)
    params = init_params(config, config.seed)
    check_params(params, config)
    opt = AdamW(params, config.lr, config.weight_decay)
    trainlog = TrainLog()
    best: Checkpoint | None = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        correct = 0
        seen = 0
        batch_iter = D.batches(fit, config.batch_size, config.seed, config.augment, epoch)
        for b, (images, onehot) in enumerate(batch_iter):
            drop = DropState(seed=[config.seed, epoch, b], training=True)
            try:
                loss, logits = train_step(params, opt, config, images, onehot, drop)
            except NonFiniteError as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from exc
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b)
            n = len(images)
            loss_sum += loss * n
            correct += int((logits.argmax(axis=1) == onehot.argmax(axis=1)).sum())
            seen += n
        val_loss, val_acc = evaluate_split(params, config, val)
        row = EpochRow(epoch, loss_sum / seen, correct / seen, val_loss, val_acc, time.perf_counter() - t0)
        trainlog.rows.append(row)
        log.info("epoch %d: train_loss=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f",
                 epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc)
        if on_epoch is not None:
            on_epoch(row)
        if best is None or val_acc > best.best_val_accuracy:
            best = Checkpoint(config, {k: p.data.copy() for k, p in params.items()}, val_acc, epoch)
    if best is None:
        best = Checkpoint(config, {k: p.data.copy() for k, p in params.items()}, 0.0, 0)
    return best, trainlog
