"""Semi-synthetic image generation by pasting sensor foregrounds onto backgrounds.

Every composite is described by a :class:`CompositeRecipe` holding all of its
random choices, so rendering is a pure function of (background, recipe,
assets).  Placement is restricted to the top band of the background, the
foreground brightness is adapted to the local background, and the alpha mask
is feathered with a Gaussian before alpha compositing.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .annotations import GroundTruth, Origin, PixelBox, from_pixel, iou
from .errors import RecipeError, UnplaceableError
from .seeding import derive_seed

log = logging.getLogger(__name__)

REAL_CUTOUT = "real-cutout"
RENDER = "render"
ASSET_KINDS = (REAL_CUTOUT, RENDER)

# Rec.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114])
GAIN_CLAMP = (0.4, 2.5)
MAX_PAIR_ATTEMPTS = 100


@dataclass
class ForegroundAsset:
    id: str
    kind: str
    image: np.ndarray  # HxWx3 uint8
    mask: np.ndarray  # HxW float in [0, 1]

    def __post_init__(self):
        if self.kind not in ASSET_KINDS:
            raise ValueError(f"asset {self.id}: unknown kind {self.kind!r}")
        self.image = np.ascontiguousarray(self.image, dtype=np.uint8)
        self.mask = np.clip(np.asarray(self.mask, dtype=np.float64), 0.0, 1.0)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"asset {self.id}: expected HxWx3 image, got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(f"asset {self.id}: mask shape {self.mask.shape} != image {self.image.shape[:2]}")
        if not (self.mask > 0.5).any():
            raise ValueError(f"asset {self.id}: mask has no opaque pixel")

    @property
    def size(self) -> Tuple[int, int]:
        h, w = self.mask.shape
        return w, h

    def cropped(self) -> "ForegroundAsset":
        """Crop to the bounding box of the non-transparent mask."""
        ys, xs = np.nonzero(self.mask > 0)
        y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
        return ForegroundAsset(self.id, self.kind, self.image[y0:y1, x0:x1], self.mask[y0:y1, x0:x1])


@dataclass
class Background:
    id: str
    image: np.ndarray  # HxWx3 uint8

    def __post_init__(self):
        self.image = np.ascontiguousarray(self.image, dtype=np.uint8)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"background {self.id}: expected HxWx3 image, got {self.image.shape}")

    @property
    def size(self) -> Tuple[int, int]:
        h, w = self.image.shape[:2]
        return w, h


@dataclass(frozen=True)
class CompositeParams:
    top_band_fraction: float = 0.4
    dual_insert_prob: float = 0.02
    scale_range: Tuple[float, float] = (0.03, 0.12)
    blur_sigma_range: Tuple[float, float] = (0.5, 1.5)
    brightness_blend: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.top_band_fraction <= 1.0):
            raise ValueError(f"top_band_fraction {self.top_band_fraction} not in (0, 1]")
        for name in ("dual_insert_prob", "brightness_blend"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} {v} not in [0, 1]")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"scale_range {self.scale_range} must satisfy 0 < min <= max <= 1")
        lo, hi = self.blur_sigma_range
        if not (0.0 <= lo <= hi):
            raise ValueError(f"blur_sigma_range {self.blur_sigma_range} must satisfy 0 <= min <= max")


@dataclass(frozen=True)
class Placement:
    asset_id: str
    rect: PixelBox
    blur_sigma: float
    gain: float


@dataclass(frozen=True)
class CompositeRecipe:
    seed: int
    background_id: str
    placements: Tuple[Placement, ...]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "background": self.background_id,
            "placements": [
                {
                    "asset": p.asset_id,
                    "rect": [int(v) for v in p.rect.as_tuple()],
                    "blur_sigma": p.blur_sigma,
                    "gain": p.gain,
                }
                for p in self.placements
            ],
        }


@dataclass
class CompositeResult:
    image: np.ndarray
    ground_truth: List[GroundTruth]
    recipe: CompositeRecipe
    origin: Origin = Origin.GEN_REAL


def luminance(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64)[..., :3] @ LUMA


def feather_radius(sigma: float) -> int:
    """Support radius of the feathering kernel; never exceeds 4 sigma."""
    return int(math.floor(4.0 * sigma)) if sigma > 0 else 0


def adapt_brightness(asset_pixels, mask, background_region, brightness_blend: float = 1.0) -> float:
    """Gain that maps the masked asset's mean luminance onto the background region's.

    The raw ratio is clamped to ``GAIN_CLAMP`` and then pulled toward 1 by
    ``brightness_blend`` (0 disables adaptation).
    """
    mask = np.asarray(mask) > 0.5
    if not mask.any():
        raise ValueError("empty asset mask")
    region = np.asarray(background_region)
    if region.size == 0:
        raise ValueError("empty background region")
    asset_lum = luminance(np.asarray(asset_pixels)[mask]).mean()
    bg_lum = luminance(region.reshape(-1, region.shape[-1])).mean()
    if asset_lum <= 0:
        log.warning("asset mean luminance is zero; brightness left unchanged")
        return 1.0
    gain = min(max(bg_lum / asset_lum, GAIN_CLAMP[0]), GAIN_CLAMP[1])
    return float(1.0 + brightness_blend * (gain - 1.0))


def _fit_size(asset: ForegroundAsset, bg_w: int, scale: float) -> Tuple[int, int]:
    aw, ah = asset.size
    tw = max(1, int(round(scale * bg_w)))
    th = max(1, int(round(tw * ah / aw)))
    return tw, th


def _max_fitting_scale(asset: ForegroundAsset, bg_w: int, band_h: int, lo: float, hi: float) -> float:
    """Largest scale in [lo, hi] whose rect fits the band (lo itself must fit)."""
    if _fits(asset, bg_w, band_h, hi):
        return hi
    a, b = lo, hi
    for _ in range(60):
        mid = (a + b) / 2
        if _fits(asset, bg_w, band_h, mid):
            a = mid
        else:
            b = mid
    return a


def _fits(asset, bg_w, band_h, scale) -> bool:
    tw, th = _fit_size(asset, bg_w, scale)
    return tw <= bg_w and th <= band_h


def _sample_placement(rng, background: Background, assets, params: CompositeParams) -> Placement:
    bg_w, bg_h = background.size
    band_h = int(math.floor(params.top_band_fraction * bg_h))
    asset = assets[int(rng.integers(len(assets)))]
    lo, hi = params.scale_range
    if not _fits(asset, bg_w, band_h, lo):
        raise UnplaceableError(
            f"asset {asset.id!r} does not fit the top {params.top_band_fraction:g} band of "
            f"background {background.id!r} ({bg_w}x{bg_h}) at minimum scale {lo:g}"
        )
    hi = _max_fitting_scale(asset, bg_w, band_h, lo, hi)
    scale = rng.uniform(lo, hi) if hi > lo else lo
    tw, th = _fit_size(asset, bg_w, scale)
    x0 = int(rng.integers(0, bg_w - tw + 1))
    y0 = int(rng.integers(0, band_h - th + 1))
    rect = PixelBox(x0, y0, x0 + tw, y0 + th)
    s_lo, s_hi = params.blur_sigma_range
    sigma = float(rng.uniform(s_lo, s_hi)) if s_hi > s_lo else float(s_lo)
    resized_img, resized_mask = _resize_asset(asset, tw, th)
    region = background.image[y0:y0 + th, x0:x0 + tw]
    gain = adapt_brightness(resized_img, resized_mask, region, params.brightness_blend)
    return Placement(asset.id, rect, sigma, gain)


def sample_recipe(rng, background: Background, assets: Sequence[ForegroundAsset],
                  params: CompositeParams = CompositeParams(), seed: int = 0) -> CompositeRecipe:
    """Draw one composite recipe.

    ``rng`` may be a ``numpy.random.Generator`` or an integer seed; with an
    integer the seed is also recorded in the recipe.
    """
    if not assets:
        raise ValueError("at least one foreground asset is required")
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    dual = rng.random() < params.dual_insert_prob
    first = _sample_placement(rng, background, assets, params)
    placements = [first]
    if dual:
        for _ in range(MAX_PAIR_ATTEMPTS):
            second = _sample_placement(rng, background, assets, params)
            if iou(first.rect, second.rect) == 0.0:
                placements.append(second)
                break
        else:
            log.debug("no non-overlapping second placement on %s; keeping one", background.id)
    return CompositeRecipe(seed, background.id, tuple(placements))


def _resize_asset(asset: ForegroundAsset, tw: int, th: int) -> Tuple[np.ndarray, np.ndarray]:
    img = np.stack(
        [
            np.asarray(Image.fromarray(asset.image[..., c].astype(np.float32)).resize((tw, th), Image.BILINEAR))
            for c in range(3)
        ],
        axis=-1,
    ).astype(np.float64)
    mask = np.asarray(
        Image.fromarray(asset.mask.astype(np.float32)).resize((tw, th), Image.BILINEAR)
    ).astype(np.float64)
    return np.clip(img, 0.0, 255.0), np.clip(mask, 0.0, 1.0)


@dataclass
class PlacementLayer:
    """Feathered mask and foreground over the window ``[y0:y1, x0:x1]`` of the background."""

    window: Tuple[int, int, int, int]  # x0, y0, x1, y1
    mask: np.ndarray
    foreground: np.ndarray


def render_placement(placement: Placement, asset: ForegroundAsset, bg_size: Tuple[int, int]) -> PlacementLayer:
    bg_w, bg_h = bg_size
    rect = placement.rect
    if not rect.inside(bg_w, bg_h):
        raise RecipeError(f"placement rect {rect.as_tuple()} outside background ({bg_w}x{bg_h})")
    x0, y0, x1, y1 = (int(v) for v in rect.as_tuple())
    fg, mask = _resize_asset(asset, x1 - x0, y1 - y0)
    fg = np.clip(fg * placement.gain, 0.0, 255.0)
    r = feather_radius(placement.blur_sigma)
    wx0, wy0 = max(0, x0 - r), max(0, y0 - r)
    wx1, wy1 = min(bg_w, x1 + r), min(bg_h, y1 + r)
    pad = ((y0 - wy0, wy1 - y1), (x0 - wx0, wx1 - x1))
    m = np.pad(mask, pad, mode="constant")
    if r > 0:
        m = ndimage.gaussian_filter(m, placement.blur_sigma, mode="constant", cval=0.0, radius=r)
        m[m < 1e-12] = 0.0
    # outside the rect the foreground is only seen through the feathered fringe
    f = np.pad(fg, pad + ((0, 0),), mode="edge")
    return PlacementLayer((wx0, wy0, wx1, wy1), m, f)


def blend(background: Background, recipe: CompositeRecipe, assets) -> CompositeResult:
    """Render ``recipe`` onto ``background``.

    Pixels whose feathered mask weight is exactly zero keep their background
    value, so everything farther than ``feather_radius(sigma)`` from every
    placement rect is untouched.
    """
    by_id: Dict[str, ForegroundAsset] = assets if isinstance(assets, dict) else {a.id: a for a in assets}
    bg_w, bg_h = background.size
    out = background.image.astype(np.float64)
    gts = []
    for p in recipe.placements:
        try:
            layer = render_placement(p, by_id[p.asset_id], background.size)
        except RecipeError as exc:
            raise RecipeError(f"background {background.id!r}: {exc}") from None
        wx0, wy0, wx1, wy1 = layer.window
        win = out[wy0:wy1, wx0:wx1]
        m3 = layer.mask[..., None]
        out[wy0:wy1, wx0:wx1] = np.where(m3 > 0, m3 * layer.foreground + (1.0 - m3) * win, win)
        gts.append(GroundTruth(0, from_pixel(p.rect, bg_w, bg_h)))
    image = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return CompositeResult(image, gts, recipe, _origin_for(recipe, by_id))


def _origin_for(recipe: CompositeRecipe, by_id) -> Origin:
    kinds = {by_id[p.asset_id].kind for p in recipe.placements}
    return Origin.GEN_RENDER if kinds == {RENDER} else Origin.GEN_REAL


@dataclass
class GeneratedDataset:
    results: List[CompositeResult]
    manifest: List[dict] = field(default_factory=list)


def iter_dataset(backgrounds: Sequence[Background], assets: Sequence[ForegroundAsset], n_images: int,
                 params: CompositeParams = CompositeParams(), master_seed: int = 0,
                 jobs: int = 1) -> Iterator[Tuple[dict, CompositeResult]]:
    """Yield ``(manifest_entry, result)`` for images ``0 .. n_images-1`` in order.

    Image ``i`` depends only on (inputs, master_seed, i).  Unplaceable draws
    are retried with a fresh sub-seed; the run gives up once the attempts
    exceed ``10 * n_images``.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if not backgrounds or not assets:
        raise ValueError("backgrounds and assets must be non-empty")
    by_id = {a.id: a for a in assets}
    if len(by_id) != len(assets):
        raise ValueError("asset ids must be unique")
    budget = 10 * n_images

    def attempt(index: int, attempt_no: int):
        seed = derive_seed(master_seed, index, attempt_no)
        rng = np.random.default_rng(seed)
        bg = backgrounds[int(rng.integers(len(backgrounds)))]
        try:
            recipe = sample_recipe(rng, bg, assets, params, seed=seed)
        except UnplaceableError as exc:
            log.warning("image %d attempt %d: %s", index, attempt_no, exc)
            return None
        return blend(bg, recipe, by_id)

    def render(index: int, limit: int):
        for attempt_no in range(limit):
            result = attempt(index, attempt_no)
            if result is not None:
                return result, attempt_no + 1
        return None, limit

    def entry(index, result):
        return {"index": index, "origin": result.origin.value, **result.recipe.to_dict()}

    used = 0
    if jobs <= 1:
        for i in range(n_images):
            # keep at least one attempt for every later image
            result, n = render(i, budget - used - (n_images - i - 1))
            used += n
            if result is None:
                raise UnplaceableError(f"could not place assets within {budget} attempts")
            yield entry(i, result), result
        return
    # Bounded chunks keep memory flat; each index owns its attempt sequence,
    # so the output matches the serial path.
    chunk = 4 * jobs
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for lo in range(0, n_images, chunk):
            idx = range(lo, min(lo + chunk, n_images))
            outcomes = list(pool.map(lambda i: render(i, budget), idx))
            used += sum(n for _, n in outcomes)
            if used + (n_images - idx.stop) > budget or any(r is None for r, _ in outcomes):
                raise UnplaceableError(f"could not place assets within {budget} attempts")
            for i, (result, _) in zip(idx, outcomes):
                yield entry(i, result), result


def generate_dataset(backgrounds: Sequence[Background], assets: Sequence[ForegroundAsset], n_images: int,
                     params: CompositeParams = CompositeParams(), master_seed: int = 0,
                     jobs: int = 1) -> GeneratedDataset:
    """Materialize :func:`iter_dataset` in memory."""
    ds = GeneratedDataset([])
    for entry, result in iter_dataset(backgrounds, assets, n_images, params, master_seed, jobs):
        ds.manifest.append(entry)
        ds.results.append(result)
    return ds


# --- file IO -------------------------------------------------------------

def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_background(path) -> Background:
    path = Path(path)
    return Background(path.stem, load_rgb(path))


def load_asset(path, kind: str) -> ForegroundAsset:
    """Load an asset PNG; alpha from the PNG or a sibling ``<name>.mask.png``."""
    path = Path(path)
    mask_path = path.with_name(path.stem + ".mask.png")
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"))
        if mask_path.exists():
            with Image.open(mask_path) as mim:
                mask = np.asarray(mim.convert("L"), dtype=np.float64) / 255.0
        elif "A" in im.getbands():
            mask = np.asarray(im.getchannel("A"), dtype=np.float64) / 255.0
        else:
            raise ValueError(f"asset {path} has neither an alpha channel nor {mask_path.name}")
    return ForegroundAsset(path.stem, kind, rgb, mask).cropped()


def load_asset_dir(root) -> List[ForegroundAsset]:
    """Assets from ``root/real-cutout/*.png`` and ``root/render/*.png``."""
    root = Path(root)
    assets = []
    for kind in ASSET_KINDS:
        for p in sorted((root / kind).glob("*.png")):
            if p.name.endswith(".mask.png"):
                continue
            asset = load_asset(p, kind)
            asset.id = f"{kind}/{asset.id}"
            assets.append(asset)
    return assets


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(image).save(path, format="PNG", optimize=False)
