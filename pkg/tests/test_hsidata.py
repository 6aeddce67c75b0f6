import numpy as np
import pytest

from msdiff.hsidata import (
    CubeFormatError,
    HsiCube,
    SplitSpec,
    extract_patch,
    extract_patches,
    normalize,
    read_cube,
    split_pixels,
    synth_cube,
    write_cube,
)


def _f32_cube(rng, shape=(5, 7, 3), labels=True):
    values = rng.random(shape).astype(np.float32).astype(np.float64)
    lab = rng.integers(0, 4, size=shape[:2]) if labels else None
    return HsiCube(values, lab)


@pytest.mark.parametrize("shape", [(5, 7, 3), (1, 1, 1), (2, 9, 16)])
@pytest.mark.parametrize("labels", [True, False])
def test_cube_roundtrip(tmp_path, shape, labels):
    cube = _f32_cube(np.random.default_rng(0), shape, labels)
    path = tmp_path / "c.hsc"
    write_cube(cube, path)
    back = read_cube(path)
    assert back.values.tobytes() == cube.values.tobytes()
    if labels:
        np.testing.assert_array_equal(back.labels, cube.labels)
    else:
        assert back.labels is None


def test_write_rounds_to_f32(tmp_path):
    cube = HsiCube(np.random.default_rng(1).random((3, 3, 2)))
    write_cube(cube, tmp_path / "a.hsc")
    once = read_cube(tmp_path / "a.hsc")
    np.testing.assert_array_equal(once.values, cube.values.astype(np.float32))
    write_cube(once, tmp_path / "b.hsc")
    assert (tmp_path / "a.hsc").read_bytes() == (tmp_path / "b.hsc").read_bytes()


def test_truncated_cube_names_lengths(tmp_path):
    cube = _f32_cube(np.random.default_rng(2))
    path = tmp_path / "c.hsc"
    write_cube(cube, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:40])
    with pytest.raises(CubeFormatError, match=r"expected at least 437 bytes.*got 40"):
        read_cube(path)
    path.write_bytes(raw[:-1])
    with pytest.raises(CubeFormatError, match="label block"):
        read_cube(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CubeFormatError, match="magic"):
        read_cube(path)


def test_normalize_examples():
    values = np.zeros((1, 2, 2))
    values[0, :, 0] = [2.0, 4.0]
    values[0, :, 1] = [7.0, 7.0]
    out = normalize(HsiCube(values))
    np.testing.assert_array_equal(out.values[0, :, 0], [0.0, 1.0])
    np.testing.assert_array_equal(out.values[0, :, 1], [0.0, 0.0])
    np.testing.assert_array_equal(out.band_range, [[2.0, 4.0], [7.0, 7.0]])


def test_normalize_idempotent_and_argmax_preserving():
    values = np.random.default_rng(3).normal(size=(6, 5, 4)) * 10 + 3
    once = normalize(HsiCube(values))
    twice = normalize(once)
    np.testing.assert_array_equal(once.values, twice.values)
    assert once.values.min() >= 0 and once.values.max() <= 1
    flat_v, flat_o = values.reshape(-1, 4), once.values.reshape(-1, 4)
    np.testing.assert_array_equal(flat_v.argmax(axis=0), flat_o.argmax(axis=0))


def test_normalize_rejects_nan():
    values = np.ones((2, 2, 1))
    values[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        normalize(HsiCube(values))


def test_extract_patch_interior_corner_and_single():
    values = np.arange(5 * 6 * 2, dtype=np.float64).reshape(5, 6, 2)
    np.testing.assert_array_equal(extract_patch(values, 2, 3, 3), values[1:4, 2:5])
    corner = extract_patch(values, 0, 0, 3)
    np.testing.assert_array_equal(corner[0, 0], values[1, 1])
    np.testing.assert_array_equal(corner[1:, 1:], values[:2, :2])
    np.testing.assert_array_equal(extract_patch(values, 4, 5, 1)[0, 0], values[4, 5])
    with pytest.raises(ValueError):
        extract_patch(values, 0, 0, 4)


def test_batched_patches_match_single():
    cube = synth_cube(12, 10, 4, 2, seed=1)
    coords = np.argwhere(cube.labels > 0)
    batch = extract_patches(cube, coords, 5)
    assert batch.shape == (len(coords), 5, 5, 4)
    assert np.all(np.isfinite(batch))
    for i in range(0, len(coords), 7):
        np.testing.assert_array_equal(batch[i], extract_patch(cube, *coords[i], 5))


def test_split_counts_from_fractions():
    labels = np.zeros((10, 12), dtype=int)
    labels[:, :10] = 1
    train, val, test = split_pixels(labels, SplitSpec(0.1, 0.1, 0.8, seed=3))
    assert (len(train), len(val), len(test)) == (10, 10, 80)


def test_split_partition_and_determinism():
    cube = synth_cube(30, 30, 4, 3, seed=2)
    spec = SplitSpec(seed=11)
    a = split_pixels(cube.labels, spec)
    b = split_pixels(cube.labels, spec)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    keys = [set(map(tuple, part)) for part in a]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    assert keys[0] | keys[1] | keys[2] == set(map(tuple, np.argwhere(cube.labels > 0)))
    for cls in range(1, 4):
        n = int((cube.labels == cls).sum())
        n_train = sum(cube.labels[r, c] == cls for r, c in a[0])
        assert n_train == int(0.1 * n + 1e-9)


def test_split_rejects_tiny_class():
    labels = np.array([[1, 1, 1, 2, 2]])
    with pytest.raises(ValueError, match="class 2"):
        split_pixels(labels, SplitSpec())


def test_synth_cube_properties():
    cube = synth_cube(40, 40, 16, 4, seed=0)
    assert cube.values.shape == (40, 40, 16)
    assert set(np.unique(cube.labels)) == {1, 2, 3, 4}
    assert cube.values.min() >= 0 and cube.values.max() <= 1

    flat, lab = cube.values.reshape(-1, 16), cube.labels.reshape(-1)
    rng = np.random.default_rng(0)
    idx = rng.choice(len(flat), 600, replace=False)
    x, y = flat[idx], lab[idx]
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    same = y[:, None] == y[None]
    off_diag = ~np.eye(len(x), dtype=bool)
    assert d[~same].mean() > d[same & off_diag].mean()


def test_synth_cube_zero_jitter_identical_spectra():
    cube = synth_cube(20, 20, 8, 3, seed=4, jitter=0.0)
    for cls in range(1, 4):
        spectra = cube.values[cube.labels == cls]
        np.testing.assert_array_equal(spectra, np.broadcast_to(spectra[0], spectra.shape))
