import numpy as np
import pytest

from filtrank import filters as F
from filtrank import imagecore as IC
from filtrank.imagecore import Image

LUMA = np.array([0.299, 0.587, 0.114])


@pytest.fixture(scope="module")
def chart():
    return F.test_chart(64)


@pytest.fixture(scope="module")
def outputs(chart):
    return {f.name: F.apply_filter(chart, f) for f in F.filter_bank()}


def warmth(img):
    return float(np.mean(img.pixels[..., 0] - img.pixels[..., 2]))


def rms_contrast(img):
    return float(np.std(img.pixels @ LUMA))


def test_bank_has_22_unique_names():
    bank = F.filter_bank()
    assert len(bank) == 22
    assert len({f.name for f in bank}) == 22
    assert [f.index for f in bank] == list(range(22))


def test_bank_order_stable():
    assert F.filter_by_name("Inkwell").index == F.FILTER_NAMES.index("Inkwell")
    assert [f.name for f in F.filter_bank()] == list(F.FILTER_NAMES)


def test_unknown_filter():
    with pytest.raises(F.UnknownFilter):
        F.filter_by_name("Clarendon")
    with pytest.raises(F.UnknownFilter):
        F.apply_filter(F.test_chart(8), "Nope")


def test_every_filter_changes_the_chart(chart, outputs):
    for name, out in outputs.items():
        assert out.pixels.shape == chart.pixels.shape
        diff = np.abs(out.pixels - chart.pixels).max()
        assert diff > 1 / 255, f"{name} is an identity on the chart"


def test_all_231_pairs_distinct_on_chart(outputs):
    names = list(outputs)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            diff = np.abs(outputs[names[i]].pixels - outputs[names[j]].pixels).max()
            assert diff > 1 / 255, f"{names[i]} vs {names[j]}: {diff}"


def test_filters_preserve_range(outputs):
    for name, out in outputs.items():
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0, name


def test_apply_filter_deterministic(chart):
    a = F.apply_filter(chart, "Hefe")
    b = F.apply_filter(chart, "Hefe")
    assert np.array_equal(a.pixels, b.pixels)


def test_monochrome_recipes_project_to_gray(outputs):
    for name in ("Inkwell", "Willow"):
        px = outputs[name].pixels
        assert np.allclose(px[..., 0], px[..., 1], atol=1e-6), name
        assert np.allclose(px[..., 1], px[..., 2], atol=1e-6), name


def test_mid_gray_is_saturation_fixed_point():
    gray = Image.from_array(np.full((8, 8, 3), 0.5, np.float32))
    out = F.Saturation(1.7).apply(gray.pixels)
    assert np.allclose(out, gray.pixels, atol=1e-6)


def test_warm_character(chart, outputs):
    # warm looks must raise mean R-B on the chart
    base = warmth(chart)
    for name in ("Earlybird", "XProII", "Gotham"):
        assert warmth(outputs[name]) > base + 0.02, name


def test_contrast_character(chart):
    # contrast enhancers must expand a low-contrast input
    low = Image.from_array(0.35 + 0.3 * chart.pixels)
    base = rms_contrast(low)
    for name in ("Hefe", "Mayfair", "XProII", "Gotham"):
        out = F.apply_filter(low, name)
        assert rms_contrast(out) > base, name


def test_tone_curve_requires_increasing_points():
    with pytest.raises(F.CatalogError):
        F.ToneCurve("rgb", ((0.0, 0.0), (0.0, 0.5)))
    with pytest.raises(F.CatalogError):
        F.ToneCurve("x", ((0.0, 0.0), (1.0, 1.0)))


def test_vignette_darkens_corners_not_center():
    img = Image.from_array(np.full((33, 33, 3), 0.8, np.float32))
    out = F.Vignette(0.5).apply(img.pixels)
    assert out[16, 16, 0] == pytest.approx(0.8, abs=1e-3)
    assert out[0, 0, 0] < 0.5


def test_catalog_round_trip(tmp_path):
    cat = F.default_catalog()
    path = tmp_path / "catalog.jsonl"
    F.write_catalog(cat, path)
    again = F.load_catalog(path)
    chart = F.test_chart(16)
    for f in F.filter_bank():
        a = F.apply_filter(chart, f, cat)
        b = F.apply_filter(chart, f, again)
        assert np.array_equal(a.pixels, b.pixels), f.name


def test_catalog_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"schema": "something-else", "version": 1}\n')
    with pytest.raises(F.CatalogError):
        F.load_catalog(p)


def test_catalog_rejects_missing_filters(tmp_path):
    p = tmp_path / "partial.jsonl"
    p.write_text(
        '{"schema": "filtrank-filter-catalog", "version": 1}\n'
        '{"name": "Hefe", "steps": [{"op": "grayscale"}]}\n'
    )
    with pytest.raises(F.CatalogError):
        F.load_catalog(p)


def test_cli_apply_round_trip(tmp_path):
    from filtrank.cli import main
    src = tmp_path / "in.png"
    dst = tmp_path / "out.png"
    IC.save_image(F.test_chart(16), src)
    assert main(["apply", "--filter", "Inkwell", "--in", str(src), "--out", str(dst)]) == 0
    out = IC.load_image(dst)
    assert np.allclose(out.pixels[..., 0], out.pixels[..., 1], atol=1 / 255)
