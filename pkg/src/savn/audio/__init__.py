"""Signal-processing kernel: waveforms, impulse responses, STFT, mixing."""

from savn.audio.bank import SoundBank, build_sound_bank
from savn.audio.rir import ImpulseResponse, RirConfig, synth_rir
from savn.audio.signal import (
    SizingError,
    Spectrogram,
    SpectrogramConfig,
    Waveform,
    convolve,
    dft_energy,
    mix_attack,
    observation_distance,
    spectrogram_pipeline,
    stft,
    stft_energy,
    stft_energy_cap,
)

__all__ = [
    "ImpulseResponse",
    "RirConfig",
    "SizingError",
    "SoundBank",
    "Spectrogram",
    "SpectrogramConfig",
    "Waveform",
    "build_sound_bank",
    "convolve",
    "dft_energy",
    "mix_attack",
    "observation_distance",
    "spectrogram_pipeline",
    "stft",
    "stft_energy",
    "stft_energy_cap",
    "synth_rir",
]
