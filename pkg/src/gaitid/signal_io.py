"""Loading, resampling and segmentation of raw sensor recordings.

All operations are pure functions: they never mutate inputs and are safe to
call concurrently on shared data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

MODALITIES = ("audio", "geophone")

# Default sampling rates of the two sensor types (Hz).  Both are
# configurable everywhere; these only seed defaults.
DEFAULT_AUDIO_RATE = 44100.0
DEFAULT_GEO_RATE = 1000.0


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled 1-D time series with a modality tag.

    Parameters
    ----------
    samples : np.ndarray
        Real-valued amplitude sequence (dimensionless, float64).
    sample_rate : float
        Sampling rate in Hz, > 0.
    modality : str
        Either ``"audio"`` or ``"geophone"``.
    """

    samples: np.ndarray
    sample_rate: float
    modality: str = "audio"

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")

    @property
    def duration(self) -> float:
        """Duration in seconds."""
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class SegmentConfig:
    """Analysis-window geometry: window length ``tau`` and hop ``step`` (s)."""

    tau: float = 1.5
    step: float = 0.25

    def __post_init__(self):
        if not (0 < self.step <= self.tau):
            raise ValueError(f"require 0 < step <= tau, got step={self.step}, tau={self.tau}")


@dataclass(frozen=True)
class Segment:
    """A fixed-length analysis window cut from a parent signal."""

    samples: np.ndarray
    start_time: float
    parent_id: str
    sample_rate: float

    def __len__(self) -> int:
        return len(self.samples)


def load_wav(path, modality: str = "audio") -> Signal:
    """Read a PCM WAV file into a Signal scaled to [-1, 1].

    Supports 8/16/24/32-bit integer and 32/64-bit float encodings.
    Multi-channel files are reduced to channel 0 with a warning.

    Parameters
    ----------
    path : str or Path
        WAV file location.
    modality : str
        Modality tag for the returned Signal.

    Raises
    ------
    FileNotFoundError, ValueError
        Missing file, non-PCM encoding, or empty payload.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as e:
        raise ValueError(f"cannot read {path}: {e}") from e
    if data.size == 0:
        raise ValueError(f"{path}: zero-length payload")
    if data.ndim > 1:
        warnings.warn(f"{path}: {data.shape[1]} channels, taking channel 0", stacklevel=2)
        data = data[:, 0]
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # 24-bit PCM also lands here (scipy left-justifies into int32)
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return Signal(samples=samples, sample_rate=float(rate), modality=modality)


def save_wav(path, signal: Signal, bits: int | str = 16) -> None:
    """Write a Signal as WAV.

    ``bits`` selects the encoding: 8, 16, 24 (integer PCM) or the string
    ``"float32"``.  Integer encodings quantize with scale 2**(bits-1) and
    symmetric clipping, so a write/read round trip is exact to within one
    quantization step.
    """
    x = np.clip(signal.samples, -1.0, 1.0)
    rate = int(round(signal.sample_rate))
    if bits == "float32":
        wavfile.write(path, rate, x.astype(np.float32))
        return
    if bits == 8:
        q = np.clip(np.round(x * 128.0), -128, 127).astype(np.int64)
        wavfile.write(path, rate, (q + 128).astype(np.uint8))
    elif bits == 16:
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, rate, q)
    elif bits == 24:
        q = np.clip(np.round(x * 8388608.0), -8388608, 8388607).astype(np.int32)
        _write_wav24(path, rate, q)
    else:
        raise ValueError(f"unsupported bit depth {bits!r}")


def _write_wav24(path, rate: int, q: np.ndarray) -> None:
    """Write 24-bit little-endian PCM (scipy's writer stops at 16/32)."""
    n = len(q)
    data = np.zeros((n, 3), dtype=np.uint8)
    u = q.astype(np.int64) & 0xFFFFFF
    data[:, 0] = u & 0xFF
    data[:, 1] = (u >> 8) & 0xFF
    data[:, 2] = (u >> 16) & 0xFF
    payload = data.tobytes()
    byte_rate = rate * 3
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write((36 + len(payload)).to_bytes(4, "little"))
        f.write(b"WAVEfmt ")
        f.write((16).to_bytes(4, "little"))
        f.write((1).to_bytes(2, "little"))        # PCM
        f.write((1).to_bytes(2, "little"))        # mono
        f.write(rate.to_bytes(4, "little"))
        f.write(byte_rate.to_bytes(4, "little"))
        f.write((3).to_bytes(2, "little"))        # block align
        f.write((24).to_bytes(2, "little"))
        f.write(b"data")
        f.write(len(payload).to_bytes(4, "little"))
        f.write(payload)


def load_geophone_csv(path, sample_rate: float) -> Signal:
    """Read a one-sample-per-line CSV into a geophone Signal.

    A non-numeric first line is treated as a header and skipped; the sample
    rate is not stored in the file and must be supplied.
    """
    if sample_rate <= 0:
        raise ValueError("sample_rate must be > 0")
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    start = 0
    try:
        float(lines[0].split(",")[0])
    except ValueError:
        start = 1
    vals = [float(ln.split(",")[0]) for ln in lines[start:]]
    if not vals:
        raise ValueError(f"{path}: no samples")
    return Signal(np.asarray(vals), float(sample_rate), "geophone")


def _sinc_kernel(up: int, down: int, half_width: int) -> np.ndarray:
    """Windowed-sinc interpolation kernel on the up-rate grid.

    Cutoff sits at the lower of the two Nyquist frequencies; ``half_width``
    counts taps per side at the slower of the two rates.  resample_poly
    multiplies by ``up`` internally, hence the 1/up normalization here.
    """
    rho = min(1.0, up / down)
    m = int(round(half_width * up / rho))
    n = np.arange(-m, m + 1)
    fc2 = rho / up
    return fc2 * np.sinc(fc2 * n) * np.kaiser(2 * m + 1, 8.6)


def resample(signal: Signal, target_rate: float, half_width: int = 64) -> Signal:
    """Band-limited resampling by windowed-sinc polyphase interpolation.

    The output has ``round(len(signal) * target_rate / sample_rate)`` samples.
    ``half_width`` is the sinc half-width in taps per side at the slower of
    the two rates; larger values are more accurate but slower (the default 64
    keeps in-band error below ~1e-4 while staying cheap).
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be > 0, got {target_rate}")
    if target_rate == signal.sample_rate:
        return Signal(signal.samples.copy(), signal.sample_rate, signal.modality)
    ratio = Fraction(target_rate).limit_denominator(10**6) / Fraction(
        signal.sample_rate
    ).limit_denominator(10**6)
    up, down = ratio.numerator, ratio.denominator
    kern = _sinc_kernel(up, down, half_width)
    y = sps.resample_poly(signal.samples, up, down, window=kern)
    n_out = int(round(len(signal.samples) * target_rate / signal.sample_rate))
    if len(y) >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - len(y)))
    return Signal(y, float(target_rate), signal.modality)


def segment_signal(signal: Signal, cfg: SegmentConfig, parent_id: str = "") -> list[Segment]:
    """Cut a signal into overlapping fixed-length windows.

    Window k starts at ``k * step`` seconds; a trailing partial window is
    discarded rather than zero-padded.  The number of windows equals
    ``floor((duration - tau) / step) + 1``.
    """
    fs = signal.sample_rate
    length = int(round(cfg.tau * fs))
    hop = int(round(cfg.step * fs))
    n = len(signal.samples)
    if n < length:
        raise ValueError(
            f"signal of {n / fs:.3f}s is shorter than tau={cfg.tau}s"
        )
    count = (n - length) // hop + 1
    out = []
    for k in range(count):
        start = k * hop
        out.append(
            Segment(
                samples=signal.samples[start : start + length].copy(),
                start_time=start / fs,
                parent_id=parent_id,
                sample_rate=fs,
            )
        )
    return out
