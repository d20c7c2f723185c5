"""Distortion augmentations simulating in-flight image degradation.

Six kernels (autocontrast, illumination, motion blur, defocus, chromatic
aberration, ISO noise) operate on HxWx3 uint8 images.  None of them moves
image content globally, so annotation boxes pass through unchanged.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import KernelParameterError
from .seeding import rng_for

KERNELS = ("autocontrast", "illumination", "motion-blur", "defocus", "chromatic-aberration", "iso-noise")
DEFAULT_PROBABILITY = 0.2

# name -> (kind, default); "range" params are drawn uniformly in [lo, hi],
# "choice" params uniformly from a finite set.
PARAM_SCHEMA: Dict[str, Dict[str, Tuple[str, tuple]]] = {
    "autocontrast": {"cutoff": ("range", (0.0, 0.02))},
    "illumination": {"strength": ("range", (0.1, 0.3)), "angle": ("range", (0.0, 360.0))},
    "motion-blur": {"length": ("choice", (5, 7, 9)), "angle": ("range", (0.0, 180.0))},
    "defocus": {"radius": ("choice", (2, 3))},
    "chromatic-aberration": {"shift": ("range", (1.0, 3.0))},
    "iso-noise": {"color_shift": ("range", (0.01, 0.05)), "intensity": ("range", (0.01, 0.05))},
}


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _check_rgb(image) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise KernelParameterError(f"expected HxWx3 uint8 image, got {image.dtype} {image.shape}")
    return image


def autocontrast(image, cutoff: float = 0.0) -> np.ndarray:
    image = _check_rgb(image)
    if not (0.0 <= cutoff < 0.5):
        raise KernelParameterError(f"cutoff {cutoff} not in [0, 0.5)")
    out = image.copy()
    for c in range(3):
        chan = image[..., c]
        low = np.quantile(chan, cutoff, method="lower")
        high = np.quantile(chan, 1.0 - cutoff, method="higher")
        if high <= low:
            continue
        scaled = (chan.astype(np.float64) - low) * 255.0 / (float(high) - float(low))
        out[..., c] = _to_u8(scaled)
    return out


def illumination(image, angle: float = 0.0, strength: float = 0.2) -> np.ndarray:
    """Multiply brightness by a linear ramp from 1-strength to 1+strength.

    ``angle`` is in degrees; 0 ramps left to right, 90 top to bottom.
    """
    image = _check_rgb(image)
    if not (0.0 <= strength <= 1.0):
        raise KernelParameterError(f"strength {strength} not in [0, 1]")
    if strength == 0:
        return image.copy()
    h, w = image.shape[:2]
    theta = math.radians(angle)
    ys, xs = np.mgrid[0:h, 0:w]
    proj = xs * math.cos(theta) + ys * math.sin(theta)
    span = proj.max() - proj.min()
    t = (proj - proj.min()) / span if span > 1e-12 else np.full(proj.shape, 0.5)
    gain = (1.0 - strength) + 2.0 * strength * t
    return _to_u8(image * gain[..., None])


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    if int(length) != length or length < 3 or length % 2 == 0:
        raise KernelParameterError(f"motion blur length must be an odd integer >= 3, got {length}")
    length = int(length)
    k = np.zeros((length, length))
    c = length // 2
    theta = math.radians(angle)
    # dense sampling of the centered segment, snapped to pixel centers
    for t in np.linspace(-c, c, 8 * length + 1):
        k[int(round(c - t * math.sin(theta))), int(round(c + t * math.cos(theta)))] = 1.0
    return k / k.sum()


def disk_kernel(radius: float) -> np.ndarray:
    if radius < 1:
        raise KernelParameterError(f"defocus radius must be >= 1, got {radius}")
    r = int(math.floor(radius))
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    k = (xs * xs + ys * ys <= radius * radius).astype(np.float64)
    return k / k.sum()


def _convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    src = image.astype(np.float64)
    out = np.empty_like(src)
    for c in range(3):
        ndimage.convolve(src[..., c], kernel, output=out[..., c], mode="reflect")
    return _to_u8(out)


def motion_blur(image, length: int = 5, angle: float = 0.0) -> np.ndarray:
    image = _check_rgb(image)
    return _convolve(image, motion_blur_kernel(length, angle))


def defocus(image, radius: float = 2) -> np.ndarray:
    image = _check_rgb(image)
    return _convolve(image, disk_kernel(radius))


def chromatic_aberration(image, shift: float = 1.0) -> np.ndarray:
    """Magnify red and shrink blue about the image center by ``shift/max(w, h)``."""
    image = _check_rgb(image)
    if shift < 0:
        raise KernelParameterError(f"shift must be >= 0, got {shift}")
    if shift == 0:
        return image.copy()
    h, w = image.shape[:2]
    s = shift / max(w, h)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = image.copy()
    for c, factor in ((0, 1.0 + s), (2, 1.0 - s)):
        coords = [cy + (ys - cy) / factor, cx + (xs - cx) / factor]
        out[..., c] = _to_u8(ndimage.map_coordinates(image[..., c].astype(np.float64), coords, order=1, mode="nearest"))
    return out


def iso_noise(image, color_shift: float = 0.03, intensity: float = 0.03, rng=None) -> np.ndarray:
    """Gaussian luminance noise shared by all channels plus independent color noise."""
    image = _check_rgb(image)
    if color_shift < 0 or intensity < 0:
        raise KernelParameterError("noise levels must be >= 0")
    if color_shift == 0 and intensity == 0:
        return image.copy()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    h, w = image.shape[:2]
    lum = rng.normal(0.0, intensity * 255.0, size=(h, w, 1))
    col = rng.normal(0.0, color_shift * 255.0, size=(h, w, 3))
    return _to_u8(image + lum + col)


@dataclass
class KernelConfig:
    kernel: str
    probability: float = DEFAULT_PROBABILITY
    params: Dict[str, tuple] = field(default_factory=dict)
    enabled: bool = True

    def __post_init__(self):
        if self.kernel not in PARAM_SCHEMA:
            raise KernelParameterError(f"unknown kernel {self.kernel!r}")
        if not (0.0 <= self.probability <= 1.0):
            raise KernelParameterError(f"{self.kernel}: probability {self.probability} not in [0, 1]")
        schema = PARAM_SCHEMA[self.kernel]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise KernelParameterError(f"{self.kernel}: unknown parameters {sorted(unknown)}")
        merged = {}
        for name, (kind, default) in schema.items():
            value = tuple(self.params.get(name, default))
            if kind == "range":
                if len(value) != 2 or value[0] > value[1]:
                    raise KernelParameterError(f"{self.kernel}.{name}: range must be (min, max), got {value}")
            elif not value:
                raise KernelParameterError(f"{self.kernel}.{name}: empty choice set")
            merged[name] = value
        self.params = merged

    def draw(self, rng: np.random.Generator) -> Dict[str, float]:
        drawn = {}
        for name, (kind, _) in PARAM_SCHEMA[self.kernel].items():
            value = self.params[name]
            if kind == "range":
                drawn[name] = float(rng.uniform(value[0], value[1])) if value[1] > value[0] else float(value[0])
            else:
                drawn[name] = value[int(rng.integers(len(value)))]
        return drawn


@dataclass
class AugmentationSpec:
    kernels: List[KernelConfig]

    def __post_init__(self):
        names = [k.kernel for k in self.kernels]
        if len(set(names)) != len(names):
            raise KernelParameterError(f"duplicate kernels in spec: {names}")

    @classmethod
    def default(cls, probability: float = DEFAULT_PROBABILITY) -> "AugmentationSpec":
        return cls([KernelConfig(k, probability) for k in KERNELS])

    def to_config(self) -> str:
        cp = configparser.ConfigParser()
        for k in self.kernels:
            section = {"enabled": str(k.enabled).lower(), "probability": repr(k.probability)}
            for name, value in k.params.items():
                section[name] = ", ".join(repr(v) for v in value)
            cp[k.kernel] = section
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_config(cls, text: str) -> "AugmentationSpec":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        kernels = []
        for name in cp.sections():
            sec = cp[name]
            if name not in PARAM_SCHEMA:
                raise KernelParameterError(f"unknown kernel section [{name}]")
            params = {}
            for key, raw in sec.items():
                if key in ("enabled", "probability"):
                    continue
                kind = PARAM_SCHEMA[name].get(key, ("range",))[0]
                conv = int if kind == "choice" else float
                try:
                    params[key] = tuple(conv(v) for v in raw.replace(",", " ").split())
                except ValueError:
                    raise KernelParameterError(f"[{name}] {key}: cannot parse {raw!r}") from None
            kernels.append(
                KernelConfig(name, sec.getfloat("probability", DEFAULT_PROBABILITY), params, sec.getboolean("enabled", True))
            )
        return cls(kernels)


def _run_kernel(image: np.ndarray, kernel: str, params: Dict[str, float], rng) -> np.ndarray:
    if kernel == "autocontrast":
        return autocontrast(image, params["cutoff"])
    if kernel == "illumination":
        return illumination(image, params["angle"], params["strength"])
    if kernel == "motion-blur":
        return motion_blur(image, params["length"], params["angle"])
    if kernel == "defocus":
        return defocus(image, params["radius"])
    if kernel == "chromatic-aberration":
        return chromatic_aberration(image, params["shift"])
    if kernel == "iso-noise":
        return iso_noise(image, params["color_shift"], params["intensity"], rng)
    raise KernelParameterError(f"unknown kernel {kernel!r}")


def apply_spec(image, spec: AugmentationSpec, seed: int):
    """Apply each enabled kernel with its probability.

    Kernel ``i`` draws from a generator keyed by ``(seed, i)``, so disabling
    one kernel leaves the others' decisions intact.  Returns
    the image and a list of ``(kernel, params)`` for kernels actually applied.
    """
    out = _check_rgb(image)
    applied = []
    for index, cfg in enumerate(spec.kernels):
        if not cfg.enabled:
            continue
        rng = rng_for(seed, index)
        if not rng.random() < cfg.probability:
            continue
        params = cfg.draw(rng)
        out = _run_kernel(out, cfg.kernel, params, rng)
        applied.append((cfg.kernel, params))
    if not applied:
        out = out.copy()
    return out, applied
