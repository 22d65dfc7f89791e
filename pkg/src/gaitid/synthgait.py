"""Synthetic bimodal gait recordings with known walker identities.

A walk is modeled as an impulse train at jittered footfall times convolved
with a per-walker footstep pulse (the latent impact-velocity waveform); each
sensor then observes that waveform through its own impulse response plus
additive white noise.  The floor/geophone path is lowpass by construction,
the air/microphone path wideband, and both modalities of one walk derive
from the same impact-velocity realization, so their envelopes are correlated
by construction.

Impulse responses drift slowly within a recording (linear interpolation
between the nominal FIR and a randomly perturbed one), which keeps the
channels only locally stationary, as a moving walker would.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .signal_io import Signal, load_wav, resample, save_wav

_DB_PER_OCTAVE = 20.0 * np.log10(2.0)  # ~6.02 dB amplitude doubling


@dataclass(frozen=True)
class WalkerSignature:
    """Per-walker gait parameters.

    Parameters
    ----------
    gait_period : float
        Footfall-to-same-foot interval in seconds.
    footstep_pulse : np.ndarray
        Impact-velocity waveform of a single step, sampled at ``pulse_rate``.
    period_jitter, amplitude_jitter : float
        Relative standard deviations of step timing and step amplitude,
        both in [0, 0.5).
    spectral_tilt : float
        dB/octave shaping applied to the pulse spectrum (0 = none).
    pulse_rate : float
        Sampling rate of ``footstep_pulse`` in Hz.
    two_feet : bool
        When True, a second impulse train offset by half a period models the
        other foot; default is the single train.
    """

    gait_period: float
    footstep_pulse: np.ndarray
    period_jitter: float = 0.02
    amplitude_jitter: float = 0.1
    spectral_tilt: float = 0.0
    pulse_rate: float = 4000.0
    two_feet: bool = False

    def __post_init__(self):
        pulse = np.asarray(self.footstep_pulse, dtype=np.float64)
        object.__setattr__(self, "footstep_pulse", pulse)
        if self.gait_period <= 0:
            raise ValueError("gait_period must be > 0")
        if not np.all(np.isfinite(pulse)):
            raise ValueError("footstep_pulse must be finite")
        for name in ("period_jitter", "amplitude_jitter"):
            v = getattr(self, name)
            if not (0 <= v < 0.5):
                raise ValueError(f"{name} must lie in [0, 0.5), got {v}")


@dataclass(frozen=True)
class SynthGaitParams:
    """Corpus-level rendering parameters.

    ``h_aud`` and ``h_geo`` are composite sensor-path FIRs (air path and
    microphone transfer folded into one, floor path and geophone sensitivity
    into the other), interpreted as zero-phase (centered) kernels.
    ``drift_rate`` is the fractional impulse-response variation per second.
    """

    h_aud: np.ndarray
    h_geo: np.ndarray
    drift_rate: float = 0.02
    noise_aud: float = 1e-3
    noise_geo: float = 1e-3
    duration: float = 4.0
    audio_rate: float = 4000.0
    geo_rate: float = 1000.0
    day_variation: float = 0.03

    def __post_init__(self):
        for name in ("h_aud", "h_geo"):
            h = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, h)
            if h.size == 0 or not np.any(h):
                raise ValueError(f"{name} must be a nonzero FIR")
        if self.drift_rate < 0:
            raise ValueError("drift_rate must be >= 0")


@dataclass
class Walk:
    """One recording: a bimodal Signal pair with identity metadata."""

    walk_id: str
    walker_id: str
    day: int
    shoes: str
    audio: Signal
    geo: Signal


@dataclass
class Corpus:
    walks: list[Walk]

    @property
    def walker_ids(self) -> list[str]:
        return sorted({w.walker_id for w in self.walks})

    def by_walker(self, walker_id: str) -> list[Walk]:
        return [w for w in self.walks if w.walker_id == walker_id]


def _tilt_pulse(pulse: np.ndarray, rate: float, tilt_db_per_octave: float) -> np.ndarray:
    """Shape the pulse spectrum by a constant dB/octave slope (anchor 200 Hz)."""
    if tilt_db_per_octave == 0.0 or len(pulse) < 4:
        return pulse.copy()
    spec = np.fft.rfft(pulse)
    f = np.fft.rfftfreq(len(pulse), 1.0 / rate)
    f_eff = np.maximum(f, 20.0)
    gain = (f_eff / 200.0) ** (tilt_db_per_octave / _DB_PER_OCTAVE)
    return np.fft.irfft(spec * gain, len(pulse))


def generate_impact_velocity(sig: WalkerSignature, duration: float, rate: float, seed: int) -> Signal:
    """Impact-velocity waveform: jittered footfall train * footstep pulse.

    Footfalls start at t=0 and recur every ``gait_period`` seconds up to the
    timing jitter; output is deterministic for a given seed.

    Raises
    ------
    ValueError
        If ``duration`` is shorter than one gait period.
    """
    if duration < sig.gait_period:
        raise ValueError(
            f"duration {duration}s is shorter than gait period {sig.gait_period}s"
        )
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    out = np.zeros(n)

    pulse = sig.footstep_pulse
    if sig.pulse_rate != rate and len(pulse) > 1:
        pulse = resample(Signal(pulse, sig.pulse_rate), rate).samples
    pulse = _tilt_pulse(pulse, rate, sig.spectral_tilt)

    trains = 2 if sig.two_feet else 1
    for train in range(trains):
        t = train * sig.gait_period / 2.0
        while t < duration:
            idx = int(round(t * rate))
            if idx < n:
                amp = max(0.1, 1.0 + sig.amplitude_jitter * rng.standard_normal())
                end = min(n, idx + len(pulse))
                out[idx:end] += amp * pulse[: end - idx]
            step = sig.gait_period * max(
                0.1, 1.0 + sig.period_jitter * rng.standard_normal()
            )
            t += step
    return Signal(out, rate, "audio")


def render_modality(
    v: Signal,
    h: np.ndarray,
    drift_rate: float = 0.0,
    noise_std: float = 0.0,
    seed: int = 0,
    modality: str = "audio",
) -> Signal:
    """Sensor observation of the impact velocity through a drifting channel.

    The channel starts at ``h`` and drifts linearly toward a randomly
    perturbed copy whose relative distance is ``drift_rate * duration``;
    convolution is zero-phase ('same' alignment), so modalities rendered from
    the same velocity share footfall times.  With drift_rate=0 and
    noise_std=0 the output is the exact linear convolution truncated to the
    input length.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.size == 0:
        raise ValueError("impulse response must be nonempty")
    rng = np.random.default_rng(seed)
    x = v.samples
    n = len(x)
    y0 = sps.fftconvolve(x, h, mode="same")
    if drift_rate > 0:
        delta = rng.standard_normal(len(h))
        delta *= drift_rate * v.duration * np.linalg.norm(h) / max(np.linalg.norm(delta), 1e-30)
        y1 = sps.fftconvolve(x, h + delta, mode="same")
        beta = np.linspace(0.0, 1.0, n, endpoint=False)
        y = (1.0 - beta) * y0 + beta * y1
    else:
        y = y0
    if noise_std > 0:
        y = y + noise_std * rng.standard_normal(n)
    return Signal(y, v.sample_rate, modality)


def default_synth_params(
    audio_rate: float = 4000.0, geo_rate: float = 1000.0, seed: int = 0, **overrides
) -> SynthGaitParams:
    """Sensible sensor paths: mildly reverberant wideband air path, lowpass
    floor path with energy above 120 Hz suppressed by construction."""
    rng = np.random.default_rng(seed)
    # air path: direct spike plus a short exponentially decaying random tail
    tail_len = int(round(0.02 * audio_rate))
    tail = rng.standard_normal(tail_len) * np.exp(-np.arange(tail_len) / (0.004 * audio_rate))
    h_aud = np.concatenate([[1.0], 0.25 * tail])
    # floor path: sharp lowpass at 90 Hz (zero-phase when rendered)
    taps = int(round(0.075 * audio_rate)) | 1
    h_geo = sps.firwin(taps, 90.0, fs=audio_rate, window=("kaiser", 9.0))
    return SynthGaitParams(
        h_aud=h_aud, h_geo=h_geo, audio_rate=audio_rate, geo_rate=geo_rate, **overrides
    )


def _damped_tone(freq: float, decay: float, rate: float, length: int) -> np.ndarray:
    t = np.arange(length) / rate
    return np.sin(2 * np.pi * freq * t) * np.exp(-t / decay)


def default_walkers(n: int, seed: int = 0, pulse_rate: float = 4000.0) -> list[WalkerSignature]:
    """Distinct walker signatures for testing.

    Each footstep pulse is a low-frequency floor thump (geophone-visible)
    plus a higher-frequency transient (audio-visible).  Thump frequencies are
    drawn from a narrow shared range so the vibration channel alone is only
    moderately discriminative, while the audio-band transients are spread out
    per walker.
    """
    rng = np.random.default_rng(seed)
    length = int(round(0.12 * pulse_rate))
    walkers = []
    for i in range(n):
        f_low = rng.uniform(35.0, 90.0)
        f_high = rng.uniform(350.0, 1500.0)
        d_low = rng.uniform(0.035, 0.07)
        d_high = rng.uniform(0.006, 0.02)
        a_high = rng.uniform(1.8, 2.8)
        pulse = _damped_tone(f_low, d_low, pulse_rate, length)
        pulse += a_high * _damped_tone(f_high, d_high, pulse_rate, length)
        pulse *= 0.3 / max(np.abs(pulse).max(), 1e-30)
        walkers.append(
            WalkerSignature(
                gait_period=rng.uniform(1.0, 1.4),
                footstep_pulse=pulse,
                period_jitter=rng.uniform(0.01, 0.03),
                amplitude_jitter=rng.uniform(0.05, 0.15),
                spectral_tilt=rng.uniform(-1.5, 1.5),
                pulse_rate=pulse_rate,
            )
        )
    return walkers


_DAY_SHOES = {1: "shoes_a", 2: "shoes_b", 3: "shoes_a"}


def _day_signature(sig: WalkerSignature, rng: np.random.Generator, variation: float) -> WalkerSignature:
    """Session-to-session variation: mild multiplicative pulse perturbation."""
    if variation <= 0:
        return sig
    smooth = rng.standard_normal(8)
    env = np.interp(
        np.linspace(0, 7, len(sig.footstep_pulse)), np.arange(8), smooth
    )
    pulse = sig.footstep_pulse * (1.0 + variation * env)
    period = sig.gait_period * (1.0 + 0.3 * variation * rng.standard_normal())
    return replace(sig, footstep_pulse=pulse, gait_period=max(0.5, period))


def generate_dataset(
    walkers: list[WalkerSignature],
    params: SynthGaitParams,
    walks_per_walker: int = 10,
    seed: int = 0,
) -> Corpus:
    """Labeled corpus of bimodal walks.

    Walks cycle through days 1..3 (days 1 and 2 carry different shoe tags and
    form the training sessions, day 3 the test session).  Every walk gets a
    fresh jitter/noise/drift realization; both modalities of a walk derive
    from the same impact-velocity realization.  Deterministic for a given
    seed and independent of generation order.
    """
    if len(walkers) < 2:
        raise ValueError("need at least 2 walkers")
    walks = []
    for wi, sig in enumerate(walkers):
        wid = f"w{wi:02d}"
        for j in range(walks_per_walker):
            day = 1 + j % 3
            ss = np.random.SeedSequence([seed, wi, j])
            s_day, s_v, s_aud, s_geo, s_noise = ss.spawn(5)
            day_rng = np.random.default_rng(np.random.SeedSequence([seed, wi, day, 977]))
            sig_day = _day_signature(sig, day_rng, params.day_variation)
            v = generate_impact_velocity(
                sig_day, params.duration, params.audio_rate,
                seed=s_v.generate_state(1)[0],
            )
            audio = render_modality(
                v, params.h_aud, params.drift_rate, params.noise_aud,
                seed=s_aud.generate_state(1)[0], modality="audio",
            )
            geo_full = render_modality(
                v, params.h_geo, params.drift_rate, 0.0,
                seed=s_geo.generate_state(1)[0], modality="geophone",
            )
            geo = resample(geo_full, params.geo_rate)
            if params.noise_geo > 0:
                noise_rng = np.random.default_rng(s_noise.generate_state(1)[0])
                geo = Signal(
                    geo.samples + params.noise_geo * noise_rng.standard_normal(len(geo)),
                    geo.sample_rate, "geophone",
                )
            walks.append(
                Walk(
                    walk_id=f"{wid}_d{day}_r{j:02d}",
                    walker_id=wid,
                    day=day,
                    shoes=_DAY_SHOES[day],
                    audio=audio,
                    geo=geo,
                )
            )
    return Corpus(walks=walks)


# ---------------------------------------------------------------------------
# Corpus persistence: WAV pairs plus a key-value manifest
# ---------------------------------------------------------------------------


def write_corpus(corpus: Corpus, out_dir) -> str:
    """Write all walks as WAV pairs plus a manifest; returns manifest path.

    Manifest lines are space-separated key=value pairs:
    ``walk_id=... walker=... day=... shoes=... audio=... geo=...``
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w") as mf:
        for w in corpus.walks:
            audio_rel = f"{w.walk_id}_audio.wav"
            geo_rel = f"{w.walk_id}_geo.wav"
            save_wav(os.path.join(out_dir, audio_rel), w.audio, bits="float32")
            save_wav(os.path.join(out_dir, geo_rel), w.geo, bits="float32")
            mf.write(
                f"walk_id={w.walk_id} walker={w.walker_id} day={w.day} "
                f"shoes={w.shoes} audio={audio_rel} geo={geo_rel}\n"
            )
    return manifest_path


def read_corpus(manifest_path) -> Corpus:
    base = os.path.dirname(os.path.abspath(manifest_path))
    walks = []
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            kv = dict(item.split("=", 1) for item in line.split())
            walks.append(
                Walk(
                    walk_id=kv["walk_id"],
                    walker_id=kv["walker"],
                    day=int(kv["day"]),
                    shoes=kv.get("shoes", ""),
                    audio=load_wav(os.path.join(base, kv["audio"]), "audio"),
                    geo=load_wav(os.path.join(base, kv["geo"]), "geophone"),
                )
            )
    return Corpus(walks=walks)
