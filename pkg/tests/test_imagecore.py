import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filtrank import imagecore as IC
from filtrank.imagecore import Image


def random_image(rng, h, w):
    return Image.from_array(rng.random((h, w, 3)).astype(np.float32))


def test_load_white_png(tmp_path):
    IC.save_image(Image.from_array(np.ones((2, 2, 3))), tmp_path / "w.png")
    img = IC.load_image(tmp_path / "w.png")
    assert img.width == 2 and img.height == 2
    assert np.array_equal(img.pixels, np.ones((2, 2, 3), np.float32))


def test_load_black_1x1(tmp_path):
    IC.save_image(Image.from_array(np.zeros((1, 1, 3))), tmp_path / "b.png")
    img = IC.load_image(tmp_path / "b.png")
    assert np.array_equal(img.pixels, np.zeros((1, 1, 3), np.float32))


def test_load_missing_file(tmp_path):
    with pytest.raises(IC.MissingFile):
        IC.load_image(tmp_path / "nope.png")


def test_load_rejects_non_png(tmp_path):
    p = tmp_path / "fake.png"
    p.write_bytes(b"not a png at all")
    with pytest.raises(IC.DecodeError):
        IC.load_image(p)


def test_load_rejects_non_rgb(tmp_path):
    from PIL import Image as PILImage
    p = tmp_path / "gray.png"
    PILImage.new("L", (4, 4)).save(p)
    with pytest.raises(IC.DecodeError):
        IC.load_image(p)


def test_save_load_round_trip_bytes(tmp_path):
    # save(load(x)) must reproduce x byte for byte on our own encodings
    rng = np.random.default_rng(0)
    for i in range(10):
        img = random_image(rng, int(rng.integers(1, 40)), int(rng.integers(1, 40)))
        p1 = tmp_path / f"a{i}.png"
        p2 = tmp_path / f"b{i}.png"
        IC.save_image(img, p1)
        IC.save_image(IC.load_image(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_resize_identity():
    rng = np.random.default_rng(1)
    img = random_image(rng, 13, 9)
    out = IC.resize(img, 9, 13)
    assert np.array_equal(out.pixels, img.pixels)


def test_resize_constant_field():
    img = Image.from_array(np.full((8, 8, 3), 0.42, np.float32))
    out = IC.resize(img, 256, 256)
    assert out.width == 256 and out.height == 256
    assert np.allclose(out.pixels, 0.42, atol=1e-6)


def test_resize_bilinear_oracle_2x1_to_4x1():
    # half-pixel-centre weights computed by hand: [0, 0.25, 0.75, 1]
    img = Image.from_array(np.array([[[0, 0, 0], [1, 1, 1]]], np.float32))
    out = IC.resize(img, 4, 1)
    expected = np.array([0.0, 0.25, 0.75, 1.0], np.float32)
    assert np.allclose(out.pixels[0, :, 0], expected)
    row = out.pixels[0, :, 0]
    assert np.all(np.diff(row) >= 0)


def test_resize_zero_dimension():
    img = Image.from_array(np.zeros((4, 4, 3)))
    with pytest.raises(IC.ZeroDimension):
        IC.resize(img, 0, 4)


def test_random_crop_full_size_is_identity():
    rng = np.random.default_rng(2)
    img = random_image(rng, 7, 5)
    out = IC.random_crop(img, 5, 7, IC.make_rng(0))
    assert np.array_equal(out.pixels, img.pixels)


def test_random_crop_offsets_within_range():
    rng = np.random.default_rng(3)
    img = random_image(rng, 256, 256)
    seen_tops = set()
    for seed in range(50):
        out = IC.random_crop(img, 227, 227, IC.make_rng(seed))
        assert out.width == 227 and out.height == 227
        # recover the offset by matching the first row against the source
        for top in range(30):
            for left in range(30):
                if np.array_equal(img.pixels[top:top + 1, left:left + 227],
                                  out.pixels[:1]):
                    seen_tops.add((top, left))
                    break
    assert all(0 <= t <= 29 and 0 <= l <= 29 for t, l in seen_tops)


def test_random_crop_deterministic_per_seed():
    rng = np.random.default_rng(4)
    img = random_image(rng, 64, 64)
    a = IC.random_crop(img, 32, 32, IC.make_rng(99))
    b = IC.random_crop(img, 32, 32, IC.make_rng(99))
    assert np.array_equal(a.pixels, b.pixels)


def test_random_crop_too_large():
    img = Image.from_array(np.zeros((4, 4, 3)))
    with pytest.raises(IC.CropLargerThanImage):
        IC.random_crop(img, 5, 4, IC.make_rng(0))


def test_hflip_involution():
    rng = np.random.default_rng(5)
    img = random_image(rng, 11, 6)
    assert np.array_equal(IC.hflip(IC.hflip(img)).pixels, img.pixels)


def test_hflip_black_white():
    img = Image.from_array(np.array([[[0, 0, 0], [1, 1, 1]]], np.float32))
    out = IC.hflip(img)
    assert np.array_equal(out.pixels[0, 0], np.ones(3, np.float32))
    assert np.array_equal(out.pixels[0, 1], np.zeros(3, np.float32))


def test_hflip_column_sums_reversed():
    rng = np.random.default_rng(6)
    img = random_image(rng, 9, 14)
    sums = img.pixels.sum(axis=(0, 2))
    flipped = IC.hflip(img).pixels.sum(axis=(0, 2))
    assert np.allclose(flipped, sums[::-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 24), st.integers(1, 24),
       st.integers(0, 2**31 - 1))
def test_ops_preserve_range_and_channels(h, w, rh, rw, seed):
    rng = np.random.default_rng(seed)
    img = Image.from_array(rng.random((h, w, 3)) * 2 - 0.5)  # clamped on entry
    for out in (IC.resize(img, rw, rh), IC.hflip(img)):
        assert out.pixels.shape[2] == 3
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


def test_center_crop_is_deterministic_and_centered():
    rng = np.random.default_rng(7)
    img = random_image(rng, 10, 10)
    out = IC.center_crop(img, 6, 6)
    assert np.array_equal(out.pixels, img.pixels[2:8, 2:8])
