import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractalgen.data import (
    Dataset,
    TransformConfig,
    batches,
    cifar10_record_bytes,
    hflip,
    load_cifar10,
    norm_flip,
    parse_cifar10_records,
    synthetic_dataset,
    write_cifar10_file,
)
from fractalgen.errors import FormatError


@settings(max_examples=20, deadline=None)
@given(n=st.integers(0, 4), seed=st.integers(0, 1000))
def test_cifar_bytes_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 256, (n, 3073), dtype=np.uint8)
    raw[:, 0] %= 10
    data = raw.tobytes()
    ds = parse_cifar10_records(data)
    assert len(ds) == n
    assert cifar10_record_bytes(ds) == data


def test_cifar_bad_sizes():
    with pytest.raises(FormatError):
        parse_cifar10_records(b"\x00" * 3072)
    with pytest.raises(FormatError):
        parse_cifar10_records(bytes([11]) + b"\x00" * 3072)


def test_load_cifar_directory(tmp_path):
    rng = np.random.default_rng(0)
    sub = tmp_path / "cifar-10-batches-bin"
    sub.mkdir()
    for name, n in [(f"data_batch_{i}.bin", 2) for i in range(1, 6)] + [("test_batch.bin", 3)]:
        imgs = rng.integers(0, 256, (n, 3, 32, 32)).astype(np.float32) / 255
        write_cifar10_file(sub / name, Dataset(imgs, rng.integers(0, 10, n)))
    train, val = load_cifar10(tmp_path)
    assert (len(train), len(val)) == (10, 3)
    assert val.split == "val"
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path / "nowhere")


def test_flip_zero_is_pure_normalization(rng):
    ds = synthetic_dataset("striped_textures", 40, 4, 0, (3, 8, 8))
    cfg = TransformConfig.fit(ds, flip_p=0.0)
    out = norm_flip(ds.images, cfg, rng, "train")
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1, atol=1e-4)
    assert np.array_equal(out, norm_flip(ds.images, cfg, None, "eval"))


def test_flip_always(rng):
    ds = synthetic_dataset("striped_textures", 4, 2, 0, (3, 8, 8))
    cfg = TransformConfig((0, 0, 0), (1, 1, 1), flip_p=1.0)
    assert np.array_equal(norm_flip(ds.images, cfg, rng, "train"), ds.images[..., ::-1])


@given(seed=st.integers(0, 100))
def test_double_flip_is_identity(seed):
    x = np.random.default_rng(seed).random((2, 3, 4, 5), dtype=np.float32)
    assert np.array_equal(hflip(hflip(x)), x)


def test_batches_sizes():
    ds = synthetic_dataset("separable_blobs", 50, 2, 0, (3, 4, 4))
    sizes = [len(y) for _, y in batches(ds, 16, np.random.default_rng(0))]
    assert sizes == [16, 16, 16, 2]


def test_batches_order():
    ds = synthetic_dataset("separable_blobs", 30, 3, 0, (3, 4, 4))
    a = np.concatenate([y for _, y in batches(ds, 7, np.random.default_rng(3))])
    b = np.concatenate([y for _, y in batches(ds, 7, np.random.default_rng(3))])
    assert np.array_equal(a, b)
    plain = np.concatenate([y for _, y in batches(ds, 7, None, shuffle=False)])
    assert np.array_equal(plain, ds.labels)


def test_blobs_linearly_separable():
    ds = synthetic_dataset("separable_blobs", 200, 2, 0, (3, 8, 8), noise=0.0)
    feats = ds.images.mean(axis=(2, 3))
    w, *_ = np.linalg.lstsq(np.c_[feats, np.ones(len(feats))], 2.0 * ds.labels - 1, rcond=None)
    pred = (np.c_[feats, np.ones(len(feats))] @ w > 0).astype(int)
    assert (pred == ds.labels).all()


@pytest.mark.parametrize("kind", ["separable_blobs", "striped_textures"])
def test_synthetic_deterministic_and_balanced(kind):
    a = synthetic_dataset(kind, 60, 3, 11, (3, 8, 8))
    b = synthetic_dataset(kind, 60, 3, 11, (3, 8, 8))
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [20, 20, 20]
    assert a.images.dtype == np.float32 and a.images.min() >= 0 and a.images.max() <= 1
    with pytest.raises(ValueError):
        synthetic_dataset("noise", 10, 2, 0)
