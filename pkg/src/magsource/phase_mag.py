"""Sliding-window phase-based motion magnification on aligned face windows.

Each output frame is the centre frame ``c = t // 2`` of a ``t``-frame window with
its local phases pushed further along their temporal deviation:

    phi'_c = phi_c + alpha_p * smooth(deviation)

where ``smooth`` is amplitude-weighted Gaussian blurring of the deviation field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, DataError, NumericError
from .pyramid import PyramidConfig, PyramidDecomposition, get_pyramid

FILTERS = ("reference", "mean", "bandpass")
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PhaseConfig:
    """Phase-path settings.

    ``filter`` picks how the centre frame's phase deviation is measured:
    ``reference`` (against the first frame of the window), ``mean`` (against the
    window mean), or ``bandpass`` (FIR over the window, band ``f_lo..f_hi`` Hz at
    ``fps``). The three legacy filter constants are carried verbatim.
    """

    t: int = 5
    alpha_p: float = 10.0
    filter: str = "reference"
    f_lo: float = 0.5
    f_hi: float = 3.0
    fps: float = 30.0
    sigma: float = 2.0
    legacy_bp_fps: float = 600.0
    legacy_lp_fps: float = 72.0
    legacy_hp_fps: float = 92.0

    def __post_init__(self) -> None:
        if self.t < 2:
            raise ConfigError(f"t must be >= 2, got {self.t}")
        if self.alpha_p < 0:
            raise ConfigError(f"alpha_p must be >= 0, got {self.alpha_p}")
        if self.filter not in FILTERS:
            raise ConfigError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.filter == "bandpass" and not (0.0 <= self.f_lo < self.f_hi <= self.fps / 2):
            raise ConfigError(
                f"band {self.f_lo}:{self.f_hi} Hz is infeasible at {self.fps} fps (need 0 <= lo < hi <= fps/2)"
            )

    @property
    def center(self) -> int:
        return self.t // 2


def luminance(frames: np.ndarray) -> np.ndarray:
    """``(..., 3)`` RGB -> ``(...)`` luma; single-channel input passes through."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] == 1:
        return frames[..., 0]
    if frames.shape[-1] != 3:
        raise DataError(f"expected 1 or 3 channels, got {frames.shape[-1]}")
    return frames @ LUMA


def bandpass_taps(config: PhaseConfig) -> np.ndarray:
    """Zero-DC windowed-sinc bandpass taps centred on the output frame."""
    n = np.arange(config.t) - config.center
    lo, hi = config.f_lo / config.fps, config.f_hi / config.fps
    taps = 2 * hi * np.sinc(2 * hi * n) - 2 * lo * np.sinc(2 * lo * n)
    if config.t > 2:
        taps = taps * np.hamming(config.t)
    return taps - taps.mean()


def unwrap_time(phase: np.ndarray) -> np.ndarray:
    """Unwrap along axis 0 so successive differences lie in (-pi, pi]."""
    d = np.diff(phase, axis=0)
    d = np.pi - np.mod(np.pi - d, 2 * np.pi)
    return np.concatenate([phase[:1], phase[:1] + np.cumsum(d, axis=0)], axis=0)


def phase_deviation(phases: np.ndarray, config: PhaseConfig) -> np.ndarray:
    """Deviation of each window's centre phase. ``phases``: unwrapped ``(T, h, w)``; returns ``(T-t+1, h, w)``."""
    t, c = config.t, config.center
    n_out = phases.shape[0] - t + 1
    centre = phases[c:c + n_out]
    if config.filter == "reference":
        return centre - phases[:n_out]
    if config.filter == "mean":
        csum = np.concatenate([np.zeros_like(phases[:1]), np.cumsum(phases, axis=0)])
        return centre - (csum[t:t + n_out] - csum[:n_out]) / t
    taps = bandpass_taps(config)
    out = np.zeros_like(centre)
    for j, w in enumerate(taps):
        out += w * phases[j:j + n_out]
    return out


def _smooth(dev: np.ndarray, amp: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return dev
    s = (0, sigma, sigma)
    num = gaussian_filter(amp * dev, s, mode="wrap")
    den = gaussian_filter(amp, s, mode="wrap")
    return num / (den + 1e-12)


def _magnify_luma(luma: np.ndarray, config: PhaseConfig, pyr_config: PyramidConfig) -> np.ndarray:
    pyr = get_pyramid(luma.shape[1:], pyr_config)
    decs = [pyr.build(f) for f in luma]
    n_out = luma.shape[0] - config.t + 1
    c = config.center
    new_bands: list[list[np.ndarray]] = []
    for lv in range(pyr_config.levels):
        row = []
        for o in range(pyr_config.orientations):
            coeffs = np.stack([d.bands[lv][o] for d in decs])
            centre = coeffs[c:c + n_out]
            if config.alpha_p == 0:
                row.append(centre)
                continue
            dev = phase_deviation(unwrap_time(np.angle(coeffs)), config)
            dev = _smooth(dev, np.abs(centre), config.sigma)
            row.append(centre * np.exp(1j * config.alpha_p * dev))
        new_bands.append(row)
    out = []
    for j in range(n_out):
        src = decs[j + c]
        mod = PyramidDecomposition(src.highpass, [[b[j] for b in row] for row in new_bands], src.lowpass, pyr_config)
        out.append(pyr.reconstruct(mod))
    return np.stack(out)


def magnify_window(frames: np.ndarray, config: PhaseConfig = PhaseConfig(), pyr_config: PyramidConfig = PyramidConfig()) -> np.ndarray:
    """Magnify the centre of exactly ``t`` frames (luma or RGB) -> one luma frame (unclamped)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 4:
        frames = luminance(frames)
    if frames.ndim != 3 or frames.shape[0] != config.t:
        raise DataError(f"magnify_window needs exactly t={config.t} frames, got shape {frames.shape}")
    return _magnify_luma(frames, config, pyr_config)[0]


def magnify_clip(window, config: PhaseConfig = PhaseConfig(), pyr_config: PyramidConfig = PyramidConfig()) -> np.ndarray:
    """Phase stream of a sample window: ``(omega - t + 1, H, W, 1)`` clamped to [0, 1].

    ``window`` is a :class:`~magsource.sampler.SampleWindow` or a frame array.
    """
    frames = np.asarray(getattr(window, "frames", window), dtype=np.float64)
    luma = luminance(frames) if frames.ndim == 4 else frames
    if luma.shape[0] < config.t:
        raise DataError(f"window has {luma.shape[0]} frames, fewer than t={config.t}")
    out = _magnify_luma(luma, config, pyr_config)
    if not np.all(np.isfinite(out)):
        raise NumericError("phase magnification produced non-finite values")
    return np.clip(out, 0.0, 1.0)[..., None]
