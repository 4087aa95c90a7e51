import io
import zipfile
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cct import data as D


def _splits(rng, sizes=(2, 1, 2)):
    return {s: (rng.integers(0, 256, (n, 28, 28, 3), dtype=np.uint8), rng.integers(0, 8, n))
            for s, n in zip(D.SPLITS, sizes)}


@pytest.mark.parametrize("compress", [True, False])
def test_npz_round_trip_own_writer(tmp_path, rng, compress):
    splits = _splits(rng)
    path = tmp_path / "tiny.npz"
    D.write_medmnist_npz(path, splits, compress=compress)
    bundle = D.load_npz(path)
    for s in D.SPLITS:
        img, lab = splits[s]
        got = bundle.split(s)
        np.testing.assert_array_equal(got.images, img.astype(np.float32) / 255)
        np.testing.assert_array_equal(got.labels, lab)


def test_own_writer_readable_by_numpy(tmp_path, rng):
    splits = _splits(rng)
    path = tmp_path / "tiny.npz"
    D.write_medmnist_npz(path, splits)
    with np.load(path) as z:
        np.testing.assert_array_equal(z["train_images"], splits["train"][0])
        assert z["test_labels"].shape == (2, 1)


def test_reads_numpy_savez(tmp_path, rng):
    splits = _splits(rng, (3, 2, 1))
    path = tmp_path / "np.npz"
    arrays = {}
    for s, (img, lab) in splits.items():
        arrays[f"{s}_images"] = img
        arrays[f"{s}_labels"] = lab.astype(np.uint8).reshape(-1, 1)
    np.savez_compressed(path, **arrays)
    bundle = D.load_npz(path)
    assert (len(bundle.train), len(bundle.val), len(bundle.test)) == (3, 2, 1)
    np.testing.assert_array_equal(bundle.val.labels, splits["val"][1])


def _archive_with(tmp_path, members):
    path = tmp_path / "x.npz"
    with zipfile.ZipFile(path, "w") as zf:
        for name, raw in members.items():
            zf.writestr(name, raw)
    return path


def _valid_members(rng):
    out = {}
    for s, (img, lab) in _splits(rng).items():
        out[f"{s}_images.npy"] = D.format_npy(img)
        out[f"{s}_labels.npy"] = D.format_npy(lab.astype(np.uint8).reshape(-1, 1))
    return out


def test_missing_member(tmp_path, rng):
    members = _valid_members(rng)
    del members["test_labels.npy"]
    with pytest.raises(D.MissingMemberError, match="test_labels.npy"):
        D.load_npz(_archive_with(tmp_path, members))


def test_fortran_order_rejected(tmp_path, rng):
    members = _valid_members(rng)
    buf = io.BytesIO()
    np.save(buf, np.asfortranarray(rng.integers(0, 255, (2, 28, 28, 3), dtype=np.uint8)))
    members["train_images.npy"] = buf.getvalue()
    with pytest.raises(D.FortranOrderError, match="train_images.npy"):
        D.load_npz(_archive_with(tmp_path, members))


def test_unsupported_dtype(tmp_path, rng):
    members = _valid_members(rng)
    members["val_images.npy"] = D.format_npy(np.zeros((1, 28, 28, 3), dtype=np.complex64))
    with pytest.raises(D.UnsupportedDtypeError, match="val_images.npy"):
        D.load_npz(_archive_with(tmp_path, members))


def test_float_images_rejected(tmp_path, rng):
    members = _valid_members(rng)
    members["val_images.npy"] = D.format_npy(np.zeros((1, 28, 28, 3), dtype=np.float32))
    with pytest.raises(D.UnsupportedDtypeError, match="val_images"):
        D.load_npz(_archive_with(tmp_path, members))


def test_shape_mismatch(tmp_path, rng):
    members = _valid_members(rng)
    members["test_images.npy"] = D.format_npy(np.zeros((2, 32, 32, 3), dtype=np.uint8))
    with pytest.raises(D.DataShapeError, match="test_images.npy"):
        D.load_npz(_archive_with(tmp_path, members))


def test_npy_v2_rejected(rng):
    raw = bytearray(D.format_npy(np.zeros(3, dtype=np.uint8)))
    raw[6] = 2
    with pytest.raises(D.NpyFormatError, match="version"):
        D.parse_npy(bytes(raw), "a.npy")


def test_label_length_mismatch(tmp_path, rng):
    members = _valid_members(rng)
    members["train_labels.npy"] = D.format_npy(np.zeros((5, 1), dtype=np.uint8))
    with pytest.raises(D.DataShapeError, match="train_labels"):
        D.load_npz(_archive_with(tmp_path, members))


# -- normalize / one-hot --------------------------------------------------------


def test_normalize_endpoints():
    out = D.normalize(np.array([0, 128, 255], dtype=np.uint8))
    assert out.dtype == np.float32
    assert out[0] == 0.0 and out[2] == 1.0
    assert out[1] == np.float32(128) / np.float32(255)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 255), min_size=2, max_size=50))
def test_normalize_monotone(values):
    arr = np.array(values, dtype=np.uint8)
    out = D.normalize(arr)
    order = np.argsort(arr, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)
    assert np.all((out >= 0) & (out <= 1))


def test_one_hot():
    np.testing.assert_array_equal(D.one_hot([3])[0], [0, 0, 0, 1, 0, 0, 0, 0])
    labels = np.arange(8)
    oh = D.one_hot(labels)
    np.testing.assert_array_equal(oh.sum(axis=1), 1.0)
    np.testing.assert_array_equal(oh.argmax(axis=1), labels)
    with pytest.raises(ValueError):
        D.one_hot([8])


# -- augmentation ------------------------------------------------------------


def test_flip_involution(rng):
    img = rng.random((28, 28, 3)).astype(np.float32)
    once = D.crop_flip(img, 2, 2, True)
    np.testing.assert_array_equal(D.crop_flip(once, 2, 2, True), img)


def test_center_crop_is_identity(rng):
    img = rng.random((28, 28, 3)).astype(np.float32)
    np.testing.assert_array_equal(D.crop_flip(img, 2, 2, False), img)


def test_augment_reproducible_bytes(rng):
    batch = rng.random((16, 28, 28, 3)).astype(np.float32)
    a = D.augment(batch, 42)
    b = D.augment(batch, 42)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != D.augment(batch, 43).tobytes()


def test_augment_matches_crop_flip_draws(rng):
    batch = rng.random((6, 28, 28, 3)).astype(np.float32)
    out = D.augment(batch, 7)
    draw = np.random.default_rng(7)
    offsets = draw.integers(0, 5, size=(6, 2))
    flips = draw.random(6) < 0.5
    for i in range(6):
        np.testing.assert_array_equal(out[i], D.crop_flip(batch[i], *offsets[i], flips[i]))


def test_augment_preserves_shape_and_range(rng):
    batch = rng.random((32, 28, 28, 3)).astype(np.float32)
    out = D.augment(batch, 1)
    assert out.shape == batch.shape and out.dtype == batch.dtype
    assert out.min() >= 0.0 and out.max() <= 1.0


# -- holdout and batching -------------------------------------------------------------


def test_holdout_sizes_for_bloodmnist_train():
    fit, val = D.holdout_indices(11_959, 0.10, 0)
    assert (len(fit), len(val)) == (10_763, 1_196)
    assert set(fit) | set(val) == set(range(11_959))
    assert not set(fit) & set(val)


def test_holdout_same_seed_same_partition(rng):
    split = D.Split(rng.random((50, 28, 28, 3)).astype(np.float32), rng.integers(0, 8, 50))
    (f1, v1), (f2, v2) = D.holdout_split(split, 0.2, 3), D.holdout_split(split, 0.2, 3)
    np.testing.assert_array_equal(v1.labels, v2.labels)
    np.testing.assert_array_equal(f1.images, f2.images)
    with pytest.raises(ValueError):
        D.holdout_split(split, 0.0, 0)


def _split(rng, n):
    return D.Split(rng.random((n, 28, 28, 3)).astype(np.float32), rng.integers(0, 8, n))


def test_batch_sizes(rng):
    sizes = [len(x) for x, _ in D.batches(_split(rng, 130), 64, seed=0)]
    assert sizes == [64, 64, 2]


def test_batches_cover_labels(rng):
    split = _split(rng, 130)
    seen = Counter()
    for _, oh in D.batches(split, 64, seed=1, augment_images=True):
        seen.update(oh.argmax(axis=1).tolist())
    assert seen == Counter(split.labels.tolist())


def test_epochs_are_permutations_with_different_orders():
    n = 200
    a, b = D.epoch_order(n, 5, 1), D.epoch_order(n, 5, 2)
    assert sorted(a) == list(range(n)) and sorted(b) == list(range(n))
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, D.epoch_order(n, 5, 1))


def test_batches_keep_image_label_pairing(rng):
    n = 40
    images = np.zeros((n, 28, 28, 3), dtype=np.float32)
    labels = rng.integers(0, 8, n)
    images[:, 0, 0, 0] = labels / 10.0  # stamp the label into a pixel
    split = D.Split(images, labels)
    for x, oh in D.batches(split, 16, seed=2):
        np.testing.assert_allclose(x[:, 0, 0, 0] * 10, oh.argmax(axis=1), atol=1e-6)


def test_empty_split_rejected():
    with pytest.raises(D.DataError):
        next(D.batches(D.Split(np.zeros((0, 28, 28, 3), np.float32), np.zeros(0, np.int64)), 8))


def test_synthetic_archive_loads(synthetic_npz):
    bundle = D.load_npz(synthetic_npz)
    assert (len(bundle.train), len(bundle.val), len(bundle.test)) == (256, 32, 96)
    assert bundle.class_names == D.CLASS_NAMES


def test_synthetic_splits_share_class_look(tmp_path):
    path = tmp_path / "s.npz"
    D.write_synthetic_archive(path, sizes=(400, 8, 200), seed=2)
    b = D.load_npz(path)
    tr, te = b.train.images.reshape(400, -1), b.test.images.reshape(200, -1)
    centroids = np.stack([tr[b.train.labels == k].mean(0) for k in range(8)])
    pred = ((te[:, None, :] - centroids[None]) ** 2).sum(-1).argmin(1)
    assert (pred == b.test.labels).mean() > 0.95
