"""Waveforms, framing, STFT and the log-magnitude spectrogram pipeline.

Conventions used throughout the package:

* binaural signals are ``(2, n)`` float64 arrays (row 0 = left ear);
* STFTs use a periodic Hann window and the framing rule
  ``frames = (len - window) // hop + 1`` (no padding unless ``center``);
* complex STFT output is laid out ``[freq_bins, frames]`` for a mono signal
  and ``[freq_bins, frames, channels]`` for a multichannel one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_SAMPLE_RATE = 8000


class SizingError(ValueError):
    """Raised when a signal is too short for the requested framing."""


@dataclass(eq=False)
class Waveform:
    """Mono signal at a given sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if samples.size == 0:
            raise ValueError("waveform must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        samples.setflags(write=False)
        self.samples = samples

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    """Framing and compression settings for the observation spectrogram."""

    window: int = 64
    hop: int = 16
    downsample: int = 4
    log: bool = True
    center: bool = False

    def __post_init__(self):
        if self.window < 2 or self.hop < 1 or self.downsample < 1:
            raise ValueError(f"invalid spectrogram config {self}")

    @property
    def freq_bins(self) -> int:
        return self.window // 2 + 1

    def frames(self, n_samples: int) -> int:
        return n_frames(n_samples, self.window, self.hop, self.center)

    def output_shape(self, n_samples: int, channels: int = 2) -> tuple[int, int, int]:
        f = _ceil_div(self.freq_bins, self.downsample)
        t = _ceil_div(self.frames(n_samples), self.downsample)
        return (f, t, channels)


@dataclass(eq=False)
class Spectrogram:
    """Pooled (optionally log-compressed) magnitudes ``[freq, frames, channels]``."""

    magnitudes: np.ndarray
    config: SpectrogramConfig = field(default_factory=SpectrogramConfig)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.magnitudes.shape


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def as_samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.asarray(w, dtype=np.float64)


def hann_window(window: int) -> np.ndarray:
    """Periodic Hann window of length ``window``."""
    n = np.arange(window)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window)


def n_frames(n_samples: int, window: int, hop: int, center: bool = False) -> int:
    if center:
        n_samples = n_samples + 2 * (window // 2)
    if n_samples < window:
        raise SizingError(f"signal of {n_samples} samples is shorter than window {window}")
    return (n_samples - window) // hop + 1


def stft(w, window: int, hop: int, center: bool = False) -> np.ndarray:
    """Short-time Fourier transform with a periodic Hann window.

    Parameters
    ----------
    w : Waveform or array_like
        Mono signal ``(n,)`` or multichannel ``(channels, n)``.
    window, hop : int
        Frame length and frame advance in samples.
    center : bool
        Zero-pad ``window // 2`` samples on both ends before framing.

    Returns
    -------
    numpy.ndarray
        Complex array ``(window // 2 + 1, frames)`` for mono input, or
        ``(window // 2 + 1, frames, channels)`` for multichannel input.
    """
    x = as_samples(w)
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if x.ndim not in (1, 2):
        raise ValueError(f"expected 1-D or 2-D signal, got shape {x.shape}")
    if center:
        pad = [(0, 0)] * (x.ndim - 1) + [(window // 2, window // 2)]
        x = np.pad(x, pad)
    n_frames(x.shape[-1], window, hop)  # raises SizingError when too short
    frames = sliding_window_view(x, window, axis=-1)[..., ::hop, :]
    spec = np.fft.rfft(frames * hann_window(window), axis=-1)
    # (..., frames, bins) -> (bins, frames[, channels])
    if x.ndim == 1:
        return spec.T
    return np.moveaxis(spec, (0, 1, 2), (2, 1, 0))


def mean_pool(x: np.ndarray, factor: int, axes=(0, 1)) -> np.ndarray:
    """Mean-pool ``x`` by ``factor`` along ``axes``; a trailing partial block
    is averaged over the samples it actually contains."""
    out = x
    for axis in axes:
        n = out.shape[axis]
        starts = np.arange(0, n, factor)
        counts = np.minimum(starts + factor, n) - starts
        summed = np.add.reduceat(out, starts, axis=axis)
        shape = [1] * out.ndim
        shape[axis] = counts.size
        out = summed / counts.reshape(shape)
    return out


def magnitude_features(spec: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Magnitude -> pooled -> log(1 + x) for a complex STFT array."""
    mag = np.abs(spec)
    if cfg.downsample > 1:
        mag = mean_pool(mag, cfg.downsample, axes=(0, 1))
    if cfg.log:
        mag = np.log1p(mag)
    return mag


def spectrogram_pipeline(binaural, cfg: SpectrogramConfig | None = None) -> Spectrogram:
    """Binaural waveform to stacked per-channel log-magnitude spectrogram."""
    cfg = cfg or SpectrogramConfig()
    if isinstance(binaural, (list, tuple)):
        chans = [as_samples(c) for c in binaural]
        if len({c.shape for c in chans}) != 1:
            raise ValueError("binaural channels must have equal length")
        x = np.stack(chans)
    else:
        x = np.asarray(binaural, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (channels, n) input, got shape {x.shape}")
    spec = stft(x, cfg.window, cfg.hop, cfg.center)
    return Spectrogram(magnitude_features(spec, cfg), cfg)


def convolve(s, h) -> np.ndarray:
    """Full linear convolution, ``len(out) == len(s) + len(h) - 1``.

    Sparse filters (few nonzero taps, the common case for synthesized
    impulse responses) take a shift-and-add path; everything else goes
    through :func:`numpy.convolve`.
    """
    s = as_samples(s)
    h = np.asarray(h, dtype=np.float64)
    if s.ndim != 1 or h.ndim != 1:
        raise ValueError("convolve expects 1-D operands")
    if s.size == 0 or h.size == 0:
        raise ValueError("convolve operands must be nonempty")
    taps = np.flatnonzero(h)
    if taps.size <= 8:
        out = np.zeros(s.size + h.size - 1)
        for k in taps:
            out[k:k + s.size] += h[k] * s
        return out
    return np.convolve(s, h)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Truncate or zero-pad the last axis of ``x`` to ``n`` samples."""
    m = x.shape[-1]
    if m >= n:
        return x[..., :n]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, n - m)]
    return np.pad(x, pad)


def mix_attack(target_render, attacker_render, alpha: float) -> np.ndarray:
    """Per-channel ``target + alpha * attacker``; the shorter input is zero-padded."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    t = np.asarray(target_render, dtype=np.float64)
    a = np.asarray(attacker_render, dtype=np.float64)
    if t.ndim != a.ndim:
        raise ValueError("target and attacker renders must have the same channel layout")
    n = max(t.shape[-1], a.shape[-1])
    return fit_length(t, n) + alpha * fit_length(a, n)


def dft_energy(x) -> float:
    """Squared 2-norm of the (unnormalized, full) DFT of ``x``."""
    return float(np.sum(np.abs(np.fft.fft(as_samples(x))) ** 2))


def stft_energy(spec: np.ndarray) -> float:
    return float(np.sum(np.abs(spec) ** 2))


def window_overlap_gain(window: int, hop: int) -> float:
    """``max_n sum_m w[n - m*hop]^2`` for the periodic Hann window.

    Bounds the STFT energy: ``||STFT(x)||^2 <= window * gain * ||x||^2``.
    """
    w2 = hann_window(window) ** 2
    acc = np.zeros(hop)
    for k in range(window):
        acc[k % hop] += w2[k]
    return float(acc.max())


def stft_energy_cap(e: float, n_samples: int, window: int, hop: int, channels: int = 2) -> float:
    """Discrete counterpart of the energy cap ``e`` in the STFT domain.

    A signal of length ``n_samples`` whose full-DFT energy is at most ``e``
    has per-channel one-sided STFT energy at most
    ``window * overlap_gain / n_samples * e`` (Parseval: ``E_dft = n ||x||^2``).
    The cap sums over ``channels``.
    """
    return channels * window * window_overlap_gain(window, hop) / n_samples * e


def observation_distance(obs_a, obs_b) -> float:
    """Intervention distance between two observations.

    ``||visual_a - visual_b||^2 + ||stft_a - stft_b||^2``, where ``stft`` is
    the pre-log complex binaural STFT carried by each observation. Channels
    contribute additively.
    """
    va, vb = np.asarray(obs_a.visual), np.asarray(obs_b.visual)
    sa, sb = obs_a.stft, obs_b.stft
    if sa is None or sb is None:
        raise ValueError("observations must carry their complex STFT")
    if va.shape != vb.shape or sa.shape != sb.shape:
        raise ValueError(
            f"observation shapes differ: visual {va.shape} vs {vb.shape}, audio {sa.shape} vs {sb.shape}"
        )
    return float(np.sum((va - vb) ** 2) + np.sum(np.abs(sa - sb) ** 2))
