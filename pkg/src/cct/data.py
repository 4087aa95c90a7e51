"""MedMNIST-style NPZ loading, holdout split, augmentation and batching."""

from __future__ import annotations

import ast
import zipfile
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

CLASS_NAMES = (
    "neutrophils",
    "eosinophils",
    "basophils",
    "lymphocytes",
    "monocytes",
    "immature granulocytes",
    "erythroblasts",
    "platelets",
)
NUM_CLASSES = len(CLASS_NAMES)
SPLITS = ("train", "val", "test")
NPY_MAGIC = b"\x93NUMPY"


class DataError(ValueError):
    """Base class for archive problems; messages name the offending member."""


class MissingMemberError(DataError):
    pass


class UnsupportedDtypeError(DataError):
    pass


class FortranOrderError(DataError):
    pass


class NpyFormatError(DataError):
    pass


class DataShapeError(DataError):
    pass


# ---------------------------------------------------------------------------
# NPY / NPZ

_DTYPES = {"|u1": np.uint8, "<u1": np.uint8, "|i1": np.int8, "<i8": np.int64, "<i4": np.int32,
           "<f4": np.float32, "<f8": np.float64}


def parse_npy(raw: bytes, member: str = "<array>") -> np.ndarray:
    if raw[:6] != NPY_MAGIC:
        raise NpyFormatError(f"{member}: not an NPY file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise NpyFormatError(f"{member}: NPY version {major}.{minor} not supported (only 1.0)")
    hlen = int.from_bytes(raw[8:10], "little")
    try:
        header = ast.literal_eval(raw[10:10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise NpyFormatError(f"{member}: unreadable header") from exc
    if not isinstance(header, dict) or not {"descr", "fortran_order", "shape"} <= header.keys():
        raise NpyFormatError(f"{member}: header lacks descr/fortran_order/shape")
    if header["fortran_order"]:
        raise FortranOrderError(f"{member}: fortran_order=True is not supported")
    dtype = _DTYPES.get(header["descr"])
    if dtype is None:
        raise UnsupportedDtypeError(f"{member}: unsupported dtype {header['descr']!r}")
    shape = tuple(header["shape"])
    payload = raw[10 + hlen:]
    count = int(np.prod(shape)) if shape else 1
    need = count * np.dtype(dtype).itemsize
    if len(payload) < need:
        raise NpyFormatError(f"{member}: payload truncated ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload[:need], dtype=dtype).reshape(shape).copy()


def format_npy(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    descr = np.lib.format.dtype_to_descr(arr.dtype)
    header = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (descr, tuple(arr.shape))
    # pad so the data starts on a 64-byte boundary, header ends in newline
    total = 10 + len(header) + 1
    header += " " * ((-total) % 64) + "\n"
    return NPY_MAGIC + bytes([1, 0]) + len(header).to_bytes(2, "little") + header.encode("latin1") + arr.tobytes()


def write_npz(path, arrays: dict[str, np.ndarray], compress: bool = True) -> None:
    mode = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    with zipfile.ZipFile(path, "w", compression=mode) as zf:
        for name, arr in arrays.items():
            zf.writestr(f"{name}.npy", format_npy(arr))


def read_npz(path, members) -> dict[str, np.ndarray]:
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise DataError(f"{path}: not a ZIP archive") from exc
    out = {}
    with zf:
        names = set(zf.namelist())
        for m in members:
            fname = f"{m}.npy"
            if fname not in names:
                raise MissingMemberError(f"{path}: missing member {fname}")
            info = zf.getinfo(fname)
            if info.compress_type not in (zipfile.ZIP_STORED, zipfile.ZIP_DEFLATED):
                raise DataError(f"{fname}: unsupported ZIP compression {info.compress_type}")
            out[m] = parse_npy(zf.read(fname), fname)
    return out


# ---------------------------------------------------------------------------
# splits


@dataclass
class Split:
    images: np.ndarray  # float32 [N, H, W, C] in [0, 1]
    labels: np.ndarray  # int64 [N]
    num_classes: int = NUM_CLASSES

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def onehot(self) -> np.ndarray:
        return one_hot(self.labels, self.num_classes)

    def subset(self, idx) -> Split:
        return Split(self.images[idx], self.labels[idx], self.num_classes)


@dataclass
class DatasetBundle:
    train: Split
    test: Split
    val: Split | None = None
    class_names: tuple[str, ...] = field(default=CLASS_NAMES)

    def split(self, name: str) -> Split:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        s = getattr(self, name)
        if s is None:
            raise DataError(f"split {name!r} not loaded")
        return s


def normalize(images: np.ndarray) -> np.ndarray:
    if images.dtype != np.uint8:
        raise UnsupportedDtypeError(f"normalize expects uint8 images, got {images.dtype}")
    return images.astype(np.float32) / np.float32(255.0)


def one_hot(labels, num_classes: int = NUM_CLASSES) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.size, num_classes), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def _split_from_arrays(name: str, images: np.ndarray, labels: np.ndarray, hw: int, channels: int) -> Split:
    if images.dtype != np.uint8:
        raise UnsupportedDtypeError(f"{name}_images.npy: expected uint8, got {images.dtype}")
    if images.ndim == 3 and channels == 1:
        images = images[..., None]
    if images.ndim != 4 or images.shape[1:] != (hw, hw, channels):
        raise DataShapeError(f"{name}_images.npy: shape {images.shape}, expected [N, {hw}, {hw}, {channels}]")
    if labels.ndim == 2 and labels.shape[1] == 1:
        labels = labels[:, 0]
    if labels.ndim != 1 or len(labels) != len(images):
        raise DataShapeError(f"{name}_labels.npy: shape {labels.shape} does not match {len(images)} images")
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise DataShapeError(f"{name}_labels.npy: labels outside [0, {NUM_CLASSES})")
    return Split(normalize(images), labels.astype(np.int64))


def load_npz(path, hw: int = 28, channels: int = 3) -> DatasetBundle:
    """Read train/val/test images and labels from a MedMNIST archive."""
    members = [f"{s}_{kind}" for s in SPLITS for kind in ("images", "labels")]
    arrays = read_npz(path, members)
    splits = {s: _split_from_arrays(s, arrays[f"{s}_images"], arrays[f"{s}_labels"], hw, channels) for s in SPLITS}
    return DatasetBundle(train=splits["train"], test=splits["test"], val=splits["val"])


def write_medmnist_npz(path, splits: dict[str, tuple[np.ndarray, np.ndarray]], compress: bool = True) -> None:
    """Write ``{split: (u8 images, labels)}`` in the MedMNIST member layout (labels as N x 1)."""
    arrays = {}
    for s in SPLITS:
        images, labels = splits[s]
        arrays[f"{s}_images"] = np.asarray(images, dtype=np.uint8)
        arrays[f"{s}_labels"] = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    write_npz(path, arrays, compress=compress)


def holdout_split(split: Split, fraction: float = 0.10, seed: int = 0) -> tuple[Split, Split]:
    """Seeded shuffle, then the last ``round(N * fraction)`` samples become validation."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"holdout fraction must be in (0, 1), got {fraction}")
    fit_idx, val_idx = holdout_indices(len(split), fraction, seed)
    return split.subset(fit_idx), split.subset(val_idx)


def holdout_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * fraction))
    return order[: n - n_val], order[n - n_val:]


# ---------------------------------------------------------------------------
# augmentation and batching

CROP_PAD = 2


def crop_flip(image: np.ndarray, dy: int, dx: int, flip: bool, pad: int = CROP_PAD) -> np.ndarray:
    """Zero-pad by ``pad``, take the window at offset (dy, dx), optionally mirror left-right."""
    h, w = image.shape[:2]
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    out = padded[dy:dy + h, dx:dx + w]
    return out[:, ::-1] if flip else out


def augment(batch: np.ndarray, seed, pad: int = CROP_PAD) -> np.ndarray:
    """Random pad-and-crop plus horizontal flip (p=0.5), drawn per image."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, h, w, _ = batch.shape
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    padded = np.pad(batch, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.empty_like(batch)
    for i in range(n):
        dy, dx = offsets[i]
        crop = padded[i, dy:dy + h, dx:dx + w]
        out[i] = crop[:, ::-1] if flips[i] else crop
    return out


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(
    split: Split,
    batch_size: int = 64,
    seed: int = 0,
    augment_images: bool = False,
    epoch: int = 0,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, onehot)`` over a fresh seeded permutation for ``epoch``."""
    if len(split) == 0:
        raise DataError("cannot batch an empty split")
    order = epoch_order(len(split), seed, epoch)
    aug_rng = np.random.default_rng([seed, epoch, 1])
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        images = split.images[idx]
        if augment_images:
            images = augment(images, aug_rng)
        yield images, one_hot(split.labels[idx], split.num_classes)


def synthetic_images(n: int, seed: int = 0, num_classes: int = NUM_CLASSES, hw: int = 28,
                     noise: float = 40.0, style_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-structured uint8 stand-in images.

    Each class gets a tinted disc at its own position on a noisy purple
    background, so a small model can learn it in a few epochs. ``seed``
    draws the samples; the class look comes from ``style_seed`` so splits
    drawn with different seeds share it.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, n)
    yy, xx = np.mgrid[:hw, :hw]
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centers = np.stack([hw / 2 + hw / 4 * np.sin(angles), hw / 2 + hw / 4 * np.cos(angles)], axis=1)
    tints = np.random.default_rng([style_seed, 1]).uniform(60, 200, size=(num_classes, 3))
    images = np.empty((n, hw, hw, 3), dtype=np.float64)
    images[:] = (180.0, 140.0, 200.0)
    for i, c in enumerate(labels):
        cy, cx = centers[c] + rng.normal(0, 1.0, 2)
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= (hw / 7) ** 2
        images[i][disc] = tints[c]
    images += rng.normal(0, noise, images.shape)
    return np.clip(images, 0, 255).astype(np.uint8), labels.astype(np.uint8)


def write_synthetic_archive(path, sizes=(512, 64, 128), seed: int = 0) -> None:
    """MedMNIST-layout archive of :func:`synthetic_images` with the given split sizes."""
    splits = {s: synthetic_images(n, seed + k, style_seed=seed) for k, (s, n) in enumerate(zip(SPLITS, sizes))}
    write_medmnist_npz(path, splits)
