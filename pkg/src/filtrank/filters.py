"""The 22-filter bank: deterministic recipes over a small set of pixel
transforms (tone curve, saturation, brightness/contrast, tint, vignette,
grayscale).

Recipes are data, not code: they ship in a schema-versioned line-delimited
catalog (``data/filter_catalog.jsonl``) and can be replaced without touching
the evaluation engine. The shipped recipes are hand-tuned approximations of
the social-media looks they are named after, not pixel-exact replicas.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .imagecore import Image

CATALOG_SCHEMA = "filtrank-filter-catalog"
CATALOG_VERSION = 1

# Canonical bank: names and their stable indices.
FILTER_NAMES: tuple[str, ...] = (
    "1977", "Amaro", "Apollo", "Brannan", "Earlybird", "Gotham", "Hefe",
    "Hudson", "Inkwell", "Lofi", "LordKevin", "Mayfair", "Nashville",
    "Poprocket", "Rise", "Sierra", "Sutro", "Toaster", "Valencia", "Walden",
    "Willow", "XProII",
)

# Rec. 601 luma weights, used by both saturation and grayscale.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


class FilterError(Exception):
    pass


class UnknownFilter(FilterError):
    pass


class CatalogError(FilterError):
    pass


@dataclass(frozen=True)
class FilterId:
    name: str
    index: int


def filter_bank() -> list[FilterId]:
    """All 22 filters in stable index order."""
    return [FilterId(name, i) for i, name in enumerate(FILTER_NAMES)]


def filter_by_name(name: str) -> FilterId:
    try:
        return FilterId(name, FILTER_NAMES.index(name))
    except ValueError:
        raise UnknownFilter(name) from None


def _clip(px: np.ndarray) -> np.ndarray:
    return np.clip(px, 0.0, 1.0)


def _luma(px: np.ndarray) -> np.ndarray:
    return px @ _LUMA


@dataclass(frozen=True)
class ToneCurve:
    """Monotone control-point curve applied to one channel or to all three."""

    channel: str  # "r" | "g" | "b" | "rgb"
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        xs = [p[0] for p in self.points]
        if len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
            raise CatalogError(
                f"tone curve control points must be strictly increasing in x: {xs}"
            )
        if self.channel not in ("r", "g", "b", "rgb"):
            raise CatalogError(f"bad tone curve channel {self.channel!r}")

    def apply(self, px: np.ndarray) -> np.ndarray:
        xs = np.array([p[0] for p in self.points], dtype=np.float32)
        ys = np.array([p[1] for p in self.points], dtype=np.float32)
        out = px.copy()
        if self.channel == "rgb":
            out = np.interp(px, xs, ys).astype(np.float32)
        else:
            c = "rgb".index(self.channel)
            out[..., c] = np.interp(px[..., c], xs, ys).astype(np.float32)
        return _clip(out)


@dataclass(frozen=True)
class Saturation:
    """Scale chroma about the per-pixel luma; gray pixels are fixed points."""

    factor: float

    def __post_init__(self):
        if self.factor < 0:
            raise CatalogError("saturation factor must be >= 0")

    def apply(self, px: np.ndarray) -> np.ndarray:
        luma = _luma(px)[..., None]
        return _clip(luma + self.factor * (px - luma))


@dataclass(frozen=True)
class BrightnessContrast:
    """Gain about mid-gray, then additive offset."""

    offset: float
    gain: float

    def apply(self, px: np.ndarray) -> np.ndarray:
        return _clip((px - 0.5) * self.gain + 0.5 + self.offset)


@dataclass(frozen=True)
class Tint:
    """Per-channel multipliers."""

    r: float
    g: float
    b: float

    def apply(self, px: np.ndarray) -> np.ndarray:
        return _clip(px * np.array([self.r, self.g, self.b], dtype=np.float32))


@dataclass(frozen=True)
class Vignette:
    """Cosine-squared radial gain falloff: full gain at the centre,
    (1 - strength) at the corners."""

    strength: float

    def apply(self, px: np.ndarray) -> np.ndarray:
        h, w = px.shape[0], px.shape[1]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        yy, xx = np.mgrid[0:h, 0:w]
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        rmax = np.sqrt(cy**2 + cx**2)
        if rmax == 0:  # 1x1 image
            return px.copy()
        t = np.clip(r / rmax, 0.0, 1.0)
        gain = 1.0 - self.strength * (1.0 - np.cos(np.pi / 2.0 * t) ** 2)
        return _clip(px * gain[..., None].astype(np.float32))


@dataclass(frozen=True)
class Grayscale:
    """Project onto luma, replicated across the three channels."""

    def apply(self, px: np.ndarray) -> np.ndarray:
        luma = _luma(px)
        return _clip(np.repeat(luma[..., None], 3, axis=2))


_PRIMITIVES = {
    "tone_curve": ToneCurve,
    "saturation": Saturation,
    "brightness_contrast": BrightnessContrast,
    "tint": Tint,
    "vignette": Vignette,
    "grayscale": Grayscale,
}


def _primitive_from_dict(d: dict):
    kind = d.get("op")
    if kind == "tone_curve":
        return ToneCurve(d["channel"], tuple((float(x), float(y)) for x, y in d["points"]))
    if kind == "saturation":
        return Saturation(float(d["factor"]))
    if kind == "brightness_contrast":
        return BrightnessContrast(float(d["offset"]), float(d["gain"]))
    if kind == "tint":
        return Tint(float(d["r"]), float(d["g"]), float(d["b"]))
    if kind == "vignette":
        return Vignette(float(d["strength"]))
    if kind == "grayscale":
        return Grayscale()
    raise CatalogError(f"unknown primitive {kind!r}")


def _primitive_to_dict(p) -> dict:
    if isinstance(p, ToneCurve):
        return {"op": "tone_curve", "channel": p.channel,
                "points": [[x, y] for x, y in p.points]}
    if isinstance(p, Saturation):
        return {"op": "saturation", "factor": p.factor}
    if isinstance(p, BrightnessContrast):
        return {"op": "brightness_contrast", "offset": p.offset, "gain": p.gain}
    if isinstance(p, Tint):
        return {"op": "tint", "r": p.r, "g": p.g, "b": p.b}
    if isinstance(p, Vignette):
        return {"op": "vignette", "strength": p.strength}
    if isinstance(p, Grayscale):
        return {"op": "grayscale"}
    raise CatalogError(f"cannot serialize {type(p).__name__}")


@dataclass(frozen=True)
class FilterRecipe:
    """Ordered primitive list evaluated left to right, clamping after each step."""

    name: str
    steps: tuple
    note: str = ""

    def apply(self, img: Image) -> Image:
        px = img.pixels
        for step in self.steps:
            px = step.apply(px)
        return Image(px.astype(np.float32))


class Catalog:
    """Named recipe set covering exactly the 22 canonical filters."""

    def __init__(self, recipes: dict[str, FilterRecipe]):
        missing = set(FILTER_NAMES) - set(recipes)
        extra = set(recipes) - set(FILTER_NAMES)
        if missing or extra:
            raise CatalogError(
                f"catalog must define exactly the 22 bank filters "
                f"(missing={sorted(missing)}, extra={sorted(extra)})"
            )
        self._recipes = recipes

    def recipe(self, name: str) -> FilterRecipe:
        try:
            return self._recipes[name]
        except KeyError:
            raise UnknownFilter(name) from None

    def recipes(self) -> list[FilterRecipe]:
        return [self._recipes[name] for name in FILTER_NAMES]


def load_catalog(path: str | Path) -> Catalog:
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_catalog(fh.read(), str(path))


def _parse_catalog(text: str, origin: str) -> Catalog:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CatalogError(f"{origin}: empty catalog")
    header = json.loads(lines[0])
    if header.get("schema") != CATALOG_SCHEMA:
        raise CatalogError(f"{origin}: bad schema header {header!r}")
    if header.get("version") != CATALOG_VERSION:
        raise CatalogError(f"{origin}: unsupported version {header.get('version')!r}")
    recipes = {}
    for ln in lines[1:]:
        rec = json.loads(ln)
        steps = tuple(_primitive_from_dict(s) for s in rec["steps"])
        recipes[rec["name"]] = FilterRecipe(rec["name"], steps, rec.get("note", ""))
    return Catalog(recipes)


def write_catalog(catalog: Catalog, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": CATALOG_SCHEMA, "version": CATALOG_VERSION}) + "\n")
        for recipe in catalog.recipes():
            fh.write(json.dumps({
                "name": recipe.name,
                "steps": [_primitive_to_dict(s) for s in recipe.steps],
                "note": recipe.note,
            }) + "\n")


_DEFAULT: Catalog | None = None


def default_catalog() -> Catalog:
    """The catalog shipped with the package (parsed once, cached)."""
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("filtrank").joinpath("data/filter_catalog.jsonl").read_text("utf-8")
        _DEFAULT = _parse_catalog(text, "packaged filter_catalog.jsonl")
    return _DEFAULT


def apply_filter(img: Image, f: FilterId | str, catalog: Catalog | None = None) -> Image:
    """Run one filter recipe over an image; dimensions are preserved."""
    name = f.name if isinstance(f, FilterId) else f
    if name not in FILTER_NAMES:
        raise UnknownFilter(name)
    cat = catalog or default_catalog()
    return cat.recipe(name).apply(img)


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    table = np.stack([
        np.stack([v, t, p], axis=-1),
        np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1),
        np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1),
        np.stack([v, p, q], axis=-1),
    ])
    out = np.take_along_axis(table, i[None, ..., None], axis=0)[0]
    return out.astype(np.float32)


def test_chart(side: int = 64) -> Image:
    """Deterministic chart sweeping hue, saturation and value, used by the
    distinctness and character tests for the filter bank."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / (side - 1)
    h = xx
    s = np.clip(1.25 - yy * 1.5, 0.0, 1.0)
    v = np.clip(0.2 + 0.8 * yy, 0.0, 1.0)
    return Image(_hsv_to_rgb(h, s, v))
