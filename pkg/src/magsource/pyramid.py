"""Complex steerable pyramid built in the frequency domain.

Radial windows are raised-cosine splits on a log2 radius axis (``H**2 + L**2 = 1``);
angular windows are one-sided ``cos**(O-1)`` lobes scaled so that the complex
bands form a tight frame for real images. All transforms use orthonormal FFTs, so
coefficient energies add up to the image energy exactly:

    ||x||^2 = ||highpass||^2 + sum_bands ||band||^2 + ||lowpass||^2

Reconstruction takes the real part of the synthesized image, which is what makes
phase edits of individual analytic bands meaningful.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import ConfigError, DataError

MIN_BAND = 8


@dataclass(frozen=True)
class PyramidConfig:
    levels: int = 4
    orientations: int = 4
    twidth: float = 1.0  # radial transition width, octaves

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ConfigError(f"pyramid levels must be >= 1, got {self.levels}")
        if self.orientations < 2:
            raise ConfigError(f"pyramid orientations must be >= 2, got {self.orientations}")
        if not 0.0 < self.twidth <= 1.0:
            raise ConfigError(f"twidth must be in (0, 1], got {self.twidth}")


@dataclass
class PyramidDecomposition:
    highpass: np.ndarray
    bands: list[list[np.ndarray]]  # [level][orientation], complex
    lowpass: np.ndarray
    config: PyramidConfig = field(default_factory=PyramidConfig)

    @property
    def shape(self) -> tuple[int, int]:
        return self.highpass.shape

    def band_list(self) -> list[np.ndarray]:
        return [b for level in self.bands for b in level]

    def energies(self) -> dict[str, float]:
        out = {"highpass": float(np.sum(self.highpass**2))}
        for lv, level in enumerate(self.bands):
            for o, b in enumerate(level):
                out[f"band_{lv}_{o}"] = float(np.sum(np.abs(b) ** 2))
        out["lowpass"] = float(np.sum(self.lowpass**2))
        return out

    def map(self, fn_real, fn_band=None) -> "PyramidDecomposition":
        fn_band = fn_band or fn_real
        return PyramidDecomposition(
            fn_real(self.highpass),
            [[fn_band(b) for b in level] for level in self.bands],
            fn_real(self.lowpass),
            self.config,
        )

    def _check(self, other: "PyramidDecomposition") -> None:
        if other.config != self.config or other.shape != self.shape:
            raise ConfigError("pyramid decompositions are incompatible")

    def __add__(self, other: "PyramidDecomposition") -> "PyramidDecomposition":
        self._check(other)
        return PyramidDecomposition(
            self.highpass + other.highpass,
            [[a + b for a, b in zip(la, lb)] for la, lb in zip(self.bands, other.bands)],
            self.lowpass + other.lowpass,
            self.config,
        )

    def __mul__(self, scalar: float) -> "PyramidDecomposition":
        return self.map(lambda a: a * scalar)

    __rmul__ = __mul__


def _log_radius(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Radius (1 = Nyquist), log2 radius and angle on an unshifted FFT grid."""
    fy = np.fft.fftfreq(shape[0]) * 2.0
    fx = np.fft.fftfreq(shape[1]) * 2.0
    gy, gx = np.meshgrid(fy, fx, indexing="ij")
    rad = np.hypot(gx, gy)
    with np.errstate(divide="ignore"):
        lograd = np.where(rad > 0, np.log2(np.where(rad > 0, rad, 1.0)), -np.inf)
    return rad, lograd, np.arctan2(gy, gx)


def _rcos(lograd: np.ndarray, start: float, width: float) -> tuple[np.ndarray, np.ndarray]:
    """(high, low) raised-cosine pair rising from ``start`` to ``start + width`` in log2 radius."""
    u = np.clip((lograd - start) / width, 0.0, 1.0)
    return np.sin(0.5 * np.pi * u), np.cos(0.5 * np.pi * u)


def angular_windows(angle: np.ndarray, orientations: int) -> list[np.ndarray]:
    """One-sided ``cos**(O-1)`` lobes centred at ``pi*b/O``, tight: sum_b (A_b(t)^2 + A_b(t+pi)^2)/2 = 1."""
    n = orientations - 1
    beta = np.sqrt(2.0 ** (2 * n) / (orientations * comb(2 * n, n)))
    out = []
    for b in range(orientations):
        d = np.mod(angle - np.pi * b / orientations + np.pi, 2 * np.pi) - np.pi
        c = np.cos(d)
        out.append(np.where(np.abs(d) < np.pi / 2, np.sqrt(2.0) * beta * np.abs(c) ** n, 0.0))
    return out


def _crop_slices(n: int) -> slice:
    m = n // 2
    return slice(n // 2 - m // 2, n // 2 - m // 2 + m)


def _downsample_spectrum(spec: np.ndarray) -> np.ndarray:
    s = np.fft.fftshift(spec)
    sy, sx = _crop_slices(spec.shape[0]), _crop_slices(spec.shape[1])
    return np.fft.ifftshift(s[sy, sx])


def _upsample_spectrum(spec: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    big = np.zeros(shape, dtype=np.complex128)
    sy, sx = _crop_slices(shape[0]), _crop_slices(shape[1])
    big[sy, sx] = np.fft.fftshift(spec)
    return np.fft.ifftshift(big)


class SteerablePyramid:
    """Filters for one image shape and config; reusable across frames."""

    def __init__(self, shape: tuple[int, int], config: PyramidConfig = PyramidConfig()):
        self.shape = tuple(int(s) for s in shape)
        self.config = config
        h, w = self.shape
        div = 2**config.levels
        if h % div or w % div:
            raise DataError(f"image {h}x{w} must be divisible by 2**levels = {div}")
        if min(h, w) // 2 ** (config.levels - 1) < MIN_BAND:
            raise DataError(
                f"image {h}x{w} too small for {config.levels} levels (coarsest band must be >= {MIN_BAND})"
            )
        tw = config.twidth
        _, lograd, _ = _log_radius(self.shape)
        self.hi0, self.lo0 = _rcos(lograd, -tw, tw)
        self.level_shapes: list[tuple[int, int]] = []
        self.band_filters: list[list[np.ndarray]] = []
        self.lo_filters: list[np.ndarray] = []
        shp = self.shape
        for _ in range(config.levels):
            _, lograd, angle = _log_radius(shp)
            hi, lo = _rcos(lograd, -1.0 - tw, tw)
            self.level_shapes.append(shp)
            self.band_filters.append([hi * a for a in angular_windows(angle, config.orientations)])
            self.lo_filters.append(lo)
            shp = (shp[0] // 2, shp[1] // 2)
        self.low_shape = shp

    def build(self, image: np.ndarray) -> PyramidDecomposition:
        img = np.asarray(image, dtype=np.float64)
        if img.shape != self.shape:
            raise DataError(f"expected a {self.shape} image, got {img.shape}")
        if not np.all(np.isfinite(img)):
            raise DataError("image contains non-finite pixels")
        spec = np.fft.fft2(img, norm="ortho")
        highpass = np.fft.ifft2(spec * self.hi0, norm="ortho").real
        lo = spec * self.lo0
        bands = []
        for filters, lofilt in zip(self.band_filters, self.lo_filters):
            bands.append([np.fft.ifft2(lo * f, norm="ortho") for f in filters])
            lo = _downsample_spectrum(lo * lofilt)
        lowpass = np.fft.ifft2(lo, norm="ortho").real
        return PyramidDecomposition(highpass, bands, lowpass, self.config)

    def reconstruct(self, pyr: PyramidDecomposition) -> np.ndarray:
        if pyr.config != self.config or pyr.shape != self.shape:
            raise ConfigError("pyramid decomposition does not match this pyramid's shape/config")
        spec = np.fft.fft2(pyr.lowpass, norm="ortho")
        for lv in reversed(range(self.config.levels)):
            spec = _upsample_spectrum(spec, self.level_shapes[lv]) * self.lo_filters[lv]
            for band, f in zip(pyr.bands[lv], self.band_filters[lv]):
                spec = spec + np.fft.fft2(band, norm="ortho") * f
        spec = spec * self.lo0 + np.fft.fft2(pyr.highpass, norm="ortho") * self.hi0
        return np.fft.ifft2(spec, norm="ortho").real


@functools.lru_cache(maxsize=16)
def get_pyramid(shape: tuple[int, int], config: PyramidConfig = PyramidConfig()) -> SteerablePyramid:
    return SteerablePyramid(shape, config)


def build(image: np.ndarray, config: PyramidConfig = PyramidConfig()) -> PyramidDecomposition:
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError(f"pyramid input must be single-channel 2-D, got shape {image.shape}")
    return get_pyramid(image.shape, config).build(image)


def reconstruct(pyr: PyramidDecomposition, config: PyramidConfig | None = None) -> np.ndarray:
    if config is not None and config != pyr.config:
        raise ConfigError(f"decomposition built with {pyr.config}, asked to reconstruct with {config}")
    return get_pyramid(pyr.shape, pyr.config).reconstruct(pyr)


def amplitude_of(band: np.ndarray) -> np.ndarray:
    return np.abs(band)


def phase_of(band: np.ndarray) -> np.ndarray:
    """Element-wise argument; ``angle(0) == 0``."""
    return np.angle(band)


def band_energies_csv(pyr: PyramidDecomposition) -> str:
    """Debug dump: one ``name,energy`` line per band."""
    lines = ["band,energy"]
    lines += [f"{k},{v:.12g}" for k, v in pyr.energies().items()]
    return "\n".join(lines) + "\n"
