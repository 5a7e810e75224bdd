"""Procedural sound bank with an exact DFT-energy cap, plus its binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from savn.audio.signal import DEFAULT_SAMPLE_RATE, Waveform, dft_energy

BANK_MAGIC = b"SAVNBANK"
BANK_VERSION = 1
_HEADER = struct.Struct("<8sIIId")  # magic, version, sample_rate, K, e
_ENTRY = struct.Struct("<IQ")  # category id, n samples

FAMILIES = ("tone", "chirp", "noise", "square")


@dataclass(eq=False)
class SoundBank:
    entries: list[tuple[int, Waveform]]
    energy_cap: float
    sample_rate: int = DEFAULT_SAMPLE_RATE
    _by_cat: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.energy_cap <= 0:
            raise ValueError("energy cap must be positive")
        cats = [c for c, _ in self.entries]
        if sorted(cats) != list(range(len(cats))):
            raise ValueError("category ids must be dense in [0, K)")
        self._by_cat = {c: w for c, w in self.entries}

    @property
    def n_categories(self) -> int:
        return len(self.entries)

    def __getitem__(self, category: int) -> Waveform:
        try:
            return self._by_cat[int(category)]
        except KeyError:
            raise KeyError(f"no sound for category {category}") from None

    def energies(self) -> np.ndarray:
        return np.array([dft_energy(w) for _, w in self.entries])

    def split(self, n_seen: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Seen/unseen category ids: the first ``n_seen`` ids and the rest."""
        if not 1 <= n_seen <= self.n_categories:
            raise ValueError(f"n_seen must lie in [1, {self.n_categories}]")
        ids = tuple(range(self.n_categories))
        return ids[:n_seen], ids[n_seen:]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BANK_MAGIC, BANK_VERSION, self.sample_rate, self.n_categories, self.energy_cap))
            for cat, w in self.entries:
                fh.write(_ENTRY.pack(cat, len(w)))
                fh.write(np.asarray(w.samples, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "SoundBank":
        data = Path(path).read_bytes()
        magic, version, sample_rate, k, e = _HEADER.unpack_from(data, 0)
        if magic != BANK_MAGIC:
            raise ValueError(f"{path}: not a sound bank (magic {magic!r})")
        if version != BANK_VERSION:
            raise ValueError(f"{path}: unsupported bank format version {version}")
        offset = _HEADER.size
        entries = []
        for _ in range(k):
            cat, n = _ENTRY.unpack_from(data, offset)
            offset += _ENTRY.size
            samples = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            entries.append((cat, Waveform(samples.astype(np.float64), sample_rate)))
        if offset != len(data):
            raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
        return cls(entries, e, sample_rate)


def _raw_signal(family: str, freq: float, t: np.ndarray, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    if family == "tone":
        return np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    if family == "chirp":
        f0, f1 = 0.7 * freq, 1.4 * freq
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * t[-1]))
        return np.sin(phase)
    if family == "noise":
        spec = np.fft.rfft(rng.standard_normal(t.size))
        f = np.fft.rfftfreq(t.size, 1.0 / sample_rate)
        spec[(f < 0.75 * freq) | (f > 1.33 * freq)] = 0.0
        return np.fft.irfft(spec, n=t.size)
    if family == "square":
        return np.sign(np.sin(2 * np.pi * freq * t)) + 0.0
    raise ValueError(f"unknown family {family!r}")


def build_sound_bank(
    seed: int,
    n_categories: int,
    e: float,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    n_samples: int = 4000,
) -> SoundBank:
    """Deterministic bank of tones, chirps, band-limited noise and square waves.

    Category ``k`` uses family ``k % 4`` with a centre frequency from a
    log-spaced grid between 200 Hz and 0.4 * sample_rate (jittered by
    ``seed``). Every entry is scaled to DFT energy exactly ``e``.
    """
    if n_categories < 2:
        raise ValueError("a sound bank needs at least two categories")
    rng = np.random.default_rng(seed)
    grid = np.geomspace(200.0, 0.4 * sample_rate, n_categories)
    order = rng.permutation(n_categories)
    t = np.arange(n_samples) / sample_rate
    entries = []
    for k in range(n_categories):
        freq = grid[order[k]] * rng.uniform(0.97, 1.03)
        x = _raw_signal(FAMILIES[k % len(FAMILIES)], freq, t, sample_rate, rng)
        x = x * np.sqrt(e / dft_energy(x))
        entries.append((k, Waveform(x, sample_rate)))
    return SoundBank(entries, float(e), sample_rate)
