"""Numerical checks of the bounded-intervention result and the Fourier facts it uses.

The intervention distance between the clean observation ``O`` and the attacked
observation ``O'`` of the same state is

    delta = ||I - I'||^2 + ||STFT(mixed) - STFT(clean)||^2.

The visual term vanishes because the attacker is invisible, and the audio term
equals ``alpha^2 ||STFT(psi_v * s_v)||^2`` by linearity. With a unit-impulse
response and a sound bank capped at DFT energy ``e`` this is at most
``alpha^2 * e_disc <= alpha * e_disc`` for alpha in [0, 1], where ``e_disc`` is
:func:`savn.audio.signal.stft_energy_cap`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from savn.audio.bank import SoundBank
from savn.audio.signal import (
    convolve,
    dft_energy,
    fit_length,
    observation_distance,
    stft,
    stft_energy,
    stft_energy_cap,
    window_overlap_gain,
)
from savn.sensors import AudioConfig, VisualConfig, make_observation, render_sources
from savn.world import VOLUME_LEVELS, EpisodeState, Heading, Pose, Scene


@dataclass
class BoundTrial:
    rir_mode: str
    alpha: float
    visual_term: float
    audio_term: float
    bound: float
    passed: bool

    @property
    def delta(self) -> float:
        return self.visual_term + self.audio_term

    @property
    def ratio(self) -> float:
        return self.delta / self.bound if self.bound > 0 else 0.0


@dataclass
class TheoremReport:
    e: float
    e_disc: float
    tol: float
    trials: list[BoundTrial] = field(default_factory=list)
    proof_chain: dict[str, float] = field(default_factory=dict)
    proof_tol: float = 1e-9

    def max_ratio(self, rir_mode: str) -> float:
        ratios = [t.ratio for t in self.trials if t.rir_mode == rir_mode]
        return max(ratios) if ratios else float("nan")

    def failures(self, rir_mode: str | None = None) -> list[BoundTrial]:
        return [t for t in self.trials if not t.passed and (rir_mode is None or t.rir_mode == rir_mode)]

    @property
    def proof_ok(self) -> bool:
        return all(v <= self.proof_tol for v in self.proof_chain.values())

    @property
    def passed(self) -> bool:
        return not self.failures("unit") and self.proof_ok

    def summary(self) -> str:
        n_unit = sum(t.rir_mode == "unit" for t in self.trials)
        n_geo = len(self.trials) - n_unit
        lines = [
            f"energy cap e = {self.e:g}, discrete STFT cap e_disc = {self.e_disc:.6g}",
            f"unit-impulse trials: {n_unit}, failures: {len(self.failures('unit'))}, "
            f"max delta/(alpha*e_disc) = {self.max_ratio('unit'):.6f}",
        ]
        if n_geo:
            lines.append(
                f"geometric trials: {n_geo}, over bound: {len(self.failures('geometric'))}, "
                f"max delta/(alpha*e_disc) = {self.max_ratio('geometric'):.6f}"
            )
        for name, err in self.proof_chain.items():
            lines.append(f"  step {name}: error {err:.3e} {'ok' if err <= self.proof_tol else 'FAIL'}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def sample_config(scene: Scene, bank: SoundBank, rng: np.random.Generator) -> EpisodeState:
    """A random joint state with an active attacker (alpha drawn from the volume set)."""
    nodes = scene.nodes
    vol = int(rng.integers(len(VOLUME_LEVELS)))
    return EpisodeState(
        agent=Pose(nodes[rng.integers(len(nodes))], Heading(int(rng.integers(4)))),
        attacker=Pose(nodes[rng.integers(len(nodes))], Heading(int(rng.integers(4)))),
        alpha=VOLUME_LEVELS[vol],
        vol_index=vol,
        attacker_cat=int(rng.integers(bank.n_categories)),
        target_cat=int(rng.integers(bank.n_categories)),
    )


def _clean_twin(state: EpisodeState) -> EpisodeState:
    return replace(state, alpha=0.0, vol_index=0, attacker_present=False)


def _trial(scene, state, bank, vcfg, acfg, e_disc, tol, mode) -> BoundTrial:
    clean = make_observation(scene, _clean_twin(state), bank, vcfg, acfg, keep_stft=True)
    attacked = make_observation(scene, state, bank, vcfg, acfg, keep_stft=True)
    visual = float(np.sum((clean.visual - attacked.visual) ** 2))
    total = observation_distance(clean, attacked)
    bound = state.alpha * e_disc
    return BoundTrial(mode, state.alpha, visual, total - visual, bound, total <= bound + tol)


def proof_chain(scene: Scene, state: EpisodeState, bank: SoundBank, acfg: AudioConfig, vcfg: VisualConfig | None = None) -> dict[str, float]:
    """Recompute each step of the bound for one configuration.

    Returns the absolute error of every intermediate equality (inequalities
    report their violation, 0 when they hold). ``acfg`` should use unit
    impulse responses.
    """
    vcfg = vcfg or VisualConfig()
    sc = acfg.spectrogram
    alpha = state.alpha
    clean = make_observation(scene, _clean_twin(state), bank, vcfg, acfg, keep_stft=True)
    attacked = make_observation(scene, state, bank, vcfg, acfg, keep_stft=True)
    target, attacker = render_sources(scene, state, bank, acfg)
    x_att = stft(attacker, sc.window, sc.hop, sc.center)

    steps = {}
    # the attacker is invisible: identical visual vectors
    steps["visual_term_vanishes"] = float(np.max(np.abs(clean.visual - attacked.visual)))
    # linearity: STFT(target + a*attacker) - STFT(target) = a * STFT(attacker)
    diff = attacked.stft - clean.stft
    steps["stft_linearity"] = float(np.max(np.abs(diff - alpha * x_att)))
    # homogeneity of the squared norm
    audio_term = stft_energy(diff)
    steps["squared_norm_homogeneity"] = abs(audio_term - alpha**2 * stft_energy(x_att)) / max(1.0, audio_term)
    # convolution theorem on the attacker path (zero-padded DFT product vs direct)
    dry = bank[state.attacker_cat].samples
    h = np.ones(1)
    n = dry.size + h.size - 1
    via_dft = np.fft.ifft(np.fft.fft(dry, n) * np.fft.fft(h, n)).real
    steps["convolution_theorem"] = float(np.max(np.abs(via_dft - convolve(dry, h))))
    # the unit impulse transforms to the all-ones spectrum
    steps["impulse_spectrum"] = float(np.max(np.abs(np.fft.fft(np.eye(1, 64, 0)[0]) - 1.0)))
    # the rendered attacker is the (truncated) dry waveform on both channels
    steps["impulse_render"] = float(np.max(np.abs(attacker - fit_length(np.stack([dry, dry]), acfg.chunk_samples))))
    # per-channel STFT energy bound via the window overlap gain
    gain = window_overlap_gain(sc.window, sc.hop)
    per_channel = [stft_energy(x_att[..., c]) for c in range(x_att.shape[-1])]
    cap_each = sc.window * gain * float(np.sum(attacker[0] ** 2))
    steps["stft_energy_bound"] = max(0.0, max(per_channel) - cap_each)
    # energy cap of the bank, via Parseval
    e_disc = stft_energy_cap(bank.energy_cap, acfg.chunk_samples, sc.window, sc.hop, channels=2)
    steps["bank_energy_cap"] = max(0.0, dft_energy(dry) - bank.energy_cap) / bank.energy_cap
    steps["quadratic_bound"] = max(0.0, audio_term - alpha**2 * e_disc)
    steps["linear_bound"] = max(0.0, alpha**2 * e_disc - alpha * e_disc)
    return steps


def verify_theorem_bound(
    scene: Scene,
    bank: SoundBank,
    n_trials: int = 1000,
    seed: int = 0,
    acfg: AudioConfig | None = None,
    vcfg: VisualConfig | None = None,
    tol: float = 1e-9,
    geometric: bool = True,
    configs=None,
) -> TheoremReport:
    """Check ``delta(O, O') <= alpha * e_disc + tol`` on sampled configurations.

    Every configuration is evaluated with unit-impulse responses (where the
    bound must hold) and, if ``geometric``, with the synthesized responses
    (reported only). ``configs`` may supply explicit :class:`EpisodeState`
    objects instead of random samples.
    """
    acfg = acfg or AudioConfig()
    vcfg = vcfg or VisualConfig()
    sc = acfg.spectrogram
    e_disc = stft_energy_cap(bank.energy_cap, acfg.chunk_samples, sc.window, sc.hop, channels=2)
    report = TheoremReport(bank.energy_cap, e_disc, tol)
    rng = np.random.default_rng(seed)
    if configs is None:
        configs = [sample_config(scene, bank, rng) for _ in range(n_trials)]
    unit_cfg = replace(acfg, unit_impulse=True)
    geo_cfg = replace(acfg, unit_impulse=False)
    for state in configs:
        report.trials.append(_trial(scene, state, bank, vcfg, unit_cfg, e_disc, tol, "unit"))
        if geometric:
            report.trials.append(_trial(scene, state, bank, vcfg, geo_cfg, e_disc, tol, "geometric"))
    chain_state = replace(configs[0], alpha=1.0, vol_index=10) if configs else sample_config(scene, bank, rng)
    report.proof_chain = proof_chain(scene, chain_state, bank, unit_cfg, vcfg)
    return report


@dataclass
class FourierReport:
    trials: int
    tol: float
    max_errors: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(v < self.tol for v in self.max_errors.values())

    def summary(self) -> str:
        lines = [f"{name}: max relative error {err:.3e}" for name, err in self.max_errors.items()]
        lines.append(f"{self.trials} trials, tolerance {self.tol:g}: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _rel(a, b) -> float:
    scale = max(float(np.linalg.norm(b)), float(np.linalg.norm(a)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / scale


def circular_convolution(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct ``O(N^2)`` circular convolution."""
    n = a.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return b[idx] @ a


def verify_fourier_properties(rng: np.random.Generator, trials: int = 200, n: int = 256, window: int = 64, hop: int = 16, tol: float = 1e-6) -> FourierReport:
    """Linearity, circular convolution, Parseval and the impulse spectrum on random signals."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    errs = {k: 0.0 for k in ("dft_additivity", "dft_homogeneity", "stft_additivity", "stft_homogeneity",
                             "circular_convolution", "parseval", "impulse_spectrum")}

    def check(name, value):
        errs[name] = max(errs[name], value)

    for _ in range(trials):
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        c = float(rng.normal())
        fa, fb = np.fft.fft(a), np.fft.fft(b)
        check("dft_additivity", _rel(np.fft.fft(a + b), fa + fb))
        check("dft_homogeneity", _rel(np.fft.fft(c * a), c * fa))
        sa, sb = stft(a, window, hop), stft(b, window, hop)
        check("stft_additivity", _rel(stft(a + b, window, hop), sa + sb))
        check("stft_homogeneity", _rel(stft(c * a, window, hop), c * sa))
        check("circular_convolution", _rel(np.fft.fft(circular_convolution(a, b)), fa * fb))
        check("parseval", abs(np.sum(a**2) - np.sum(np.abs(fa) ** 2) / n) / np.sum(a**2))
        k = int(rng.integers(n))
        impulse = np.zeros(n)
        impulse[k] = 1.0
        # a delayed impulse has a unit-magnitude spectrum; the one at 0 is all ones
        check("impulse_spectrum", float(np.max(np.abs(np.abs(np.fft.fft(impulse)) - 1.0))))
    check("impulse_spectrum", float(np.max(np.abs(np.fft.fft(np.eye(1, n, 0)[0]) - 1.0))))
    return FourierReport(trials, tol, errs)
