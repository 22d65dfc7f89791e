"""Order-1 scattering transform with a calibrated analytic Morlet filterbank.

The transform convolves the input with a bank of complex analytic Morlet
wavelets, takes the modulus, and averages with a Gaussian lowpass whose -3 dB
cutoff is 2*pi/T rad/s.  First-order rows can then be normalized frame-wise
by the lowpass-smoothed signal magnitude, which cancels slowly varying
convolutional channel effects up to the filters' bandwidth.

Filterbank geometry
-------------------
Wavelet center frequencies descend geometrically from Nyquist with ratio
2**(1/Q) until they drop below pi/T rad/s.  Bandwidths follow a constant-Q
rule, floored by the lowpass bandwidth (so no filter outlasts the lowpass in
time) and capped at lambda/2.8 (so every filter stays analytic: the
negative-frequency energy of a Gaussian bump 2.8 sigma away from DC is below
1e-3 of its total).  Per-filter gains are calibrated so that the aggregate
squared response |phi|^2 + sum |psi|^2 is close to 1 across the band, then
everything is rescaled so its maximum is exactly 1.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .signal_io import Segment, Signal

# Envelope half-width, in Gaussian standard deviations, at which time-domain
# kernels are truncated (exp(-4.5^2/2) ~ 4e-5).
_SUPPORT_SIGMAS = 4.5
# Analyticity cap: sigma <= lambda / _ANALYTIC_MARGIN.
_ANALYTIC_MARGIN = 2.8


@dataclass(frozen=True)
class ScatteringConfig:
    """Knobs of the order-1 scattering transform.

    Parameters
    ----------
    T : float
        Targeted extent of time invariance in seconds; the lowpass filter has
        its -3 dB point at 2*pi/T rad/s and wavelets cover [pi/T, Nyquist].
    Q : int
        Wavelets per octave.
    epsilon : float
        Relative normalization guard: the effective guard added to the
        normalizer is ``epsilon * max|x| * sum(phi)``, which preserves exact
        scale invariance of the normalized coefficients.  Set 0 to disable.
    frame_hop : int or None
        Samples between output frames; None means round(T/2 * sample_rate).
    """

    T: float = 0.093
    Q: int = 8
    epsilon: float = 1e-6
    frame_hop: int | None = None

    ORDER: int = field(default=1, init=False, repr=False)

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("T must be > 0")
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def default_config(modality: str, T: float = 0.093) -> ScatteringConfig:
    """Per-modality default: Q=8 for wideband audio, Q=2 for the narrow
    geophone band when it is scattered at its own rate."""
    return ScatteringConfig(T=T, Q=8 if modality == "audio" else 2)


@dataclass
class Filterbank:
    """Lowpass plus analytic Morlet wavelets, discretized for one grid.

    ``lowpass`` is a real centered FIR; ``wavelets`` are complex centered
    FIRs, all truncated where their Gaussian envelope falls below ~4e-5 of
    peak.  ``center_freqs`` are in rad/s.  Frequency responses at the build
    grid are cached for the FFT convolution path.
    """

    lowpass: np.ndarray
    wavelets: list[np.ndarray]
    center_freqs: np.ndarray
    bandwidths: np.ndarray
    sample_rate: float
    T: float
    Q: int
    n_samples: int
    pad: int
    n_fft: int
    _lowpass_sum: float = 0.0
    _wavelet_ffts: np.ndarray | None = None

    def __post_init__(self):
        self._lowpass_sum = float(self.lowpass.sum())

    @property
    def n_wavelets(self) -> int:
        return len(self.wavelets)

    def frequency_grid(self) -> np.ndarray:
        """Positive-frequency grid of the build FFT length, rad/s."""
        return 2 * np.pi * np.fft.rfftfreq(self.n_fft, 1.0 / self.sample_rate)

    def frequency_responses(self) -> tuple[np.ndarray, np.ndarray]:
        """(lowpass_response, wavelet_responses) over `frequency_grid()`.

        Wavelet responses are complex magnitudes of the analytic filters at
        nonnegative frequencies; the lowpass response is real.
        """
        nb = self.n_fft // 2 + 1
        low = np.abs(np.fft.fft(self.lowpass, self.n_fft))[:nb]
        wav = np.abs(self._ffts()[:, :nb])
        return low, wav

    def littlewood_paley(self) -> np.ndarray:
        """|phi_hat|^2 + sum_k |psi_hat_k|^2 on the positive-frequency grid."""
        low, wav = self.frequency_responses()
        return low**2 + (wav**2).sum(axis=0)

    def _ffts(self) -> np.ndarray:
        """Frequency responses of all wavelets at n_fft, kernels centered at
        index 0 so FFT convolution needs no output shift."""
        if self._wavelet_ffts is None:
            mat = np.zeros((self.n_wavelets, self.n_fft), dtype=np.complex128)
            for i, k in enumerate(self.wavelets):
                m = (len(k) - 1) // 2
                mat[i, : m + 1] = k[m:]
                if m:
                    mat[i, -m:] = k[:m]
            self._wavelet_ffts = sfft.fft(mat, axis=1)
        return self._wavelet_ffts


@dataclass
class ScatteringMatrix:
    """Order-0 and order-1 scattering coefficients at frame instants.

    ``order0`` has one row per input channel of zeroth-order averaging (a
    single row here), ``order1`` one row per wavelet, columns are frames.
    ``envelopes`` retains the first-order modulus envelopes sampled at the
    frame instants (no lowpass), useful for diagnostics.
    """

    order0: np.ndarray
    order1: np.ndarray
    frame_times: np.ndarray
    center_freqs: np.ndarray
    T: float
    Q: int
    epsilon: float
    modality: str
    normalized: bool = False
    envelopes: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.order1.shape[1]

    @property
    def n_paths(self) -> int:
        return self.order1.shape[0]


def _wavelet_kernel(lam: float, sig: float, fs: float, m: int) -> np.ndarray:
    """Sampled analytic Morlet: Gaussian bump at +lambda with the DC-killing
    correction, unit peak frequency response before gain."""
    t = np.arange(0, m + 1) / fs
    env = (sig / np.sqrt(2 * np.pi)) * np.exp(-0.5 * (sig * t) ** 2)
    kappa = np.exp(-0.5 * (lam / sig) ** 2)
    right = env * (np.exp(1j * lam * t) - kappa)
    return np.concatenate([np.conj(right[:0:-1]), right]) / fs


def _lowpass_kernel(sig_phi: float, fs: float, m: int) -> np.ndarray:
    t = np.arange(-m, m + 1) / fs
    return (sig_phi / np.sqrt(2 * np.pi)) * np.exp(-0.5 * (sig_phi * t) ** 2) / fs


def build_filterbank(cfg: ScatteringConfig, sample_rate: float, n_samples: int) -> Filterbank:
    """Construct the discretized filterbank for signals of ``n_samples``.

    Parameters
    ----------
    cfg : ScatteringConfig
    sample_rate : float
        Hz.
    n_samples : int
        Length of the signals the bank will analyze; fixes the FFT grid and
        the reflection padding.

    Raises
    ------
    ValueError
        If the band [pi/T, Nyquist] is empty or narrower than one octave.
    """
    fs = float(sample_rate)
    nyq = np.pi * fs                      # rad/s
    lam_min = np.pi / cfg.T
    if nyq < 2 * lam_min:
        raise ValueError(
            f"T={cfg.T}s leaves no octave below Nyquist at {fs} Hz "
            f"(need sample_rate >= {2 / cfg.T:.1f} Hz)"
        )

    wc = 2 * np.pi / cfg.T
    sig_phi = wc / np.sqrt(np.log(2.0))   # -3 dB amplitude at wc

    n_wav = int(np.floor(cfg.Q * np.log2(nyq / lam_min))) + 1
    lam = nyq * 2.0 ** (-np.arange(n_wav) / cfg.Q)
    factor = 2.0 ** (-1.0 / cfg.Q)
    r_sig = (1 - factor) / (1 + factor) / np.sqrt(2 * np.log(np.sqrt(2.0)))
    sig = np.maximum(r_sig * lam, np.minimum(sig_phi, lam / _ANALYTIC_MARGIN))

    sig_min = min(float(sig.min()), sig_phi)
    pad = int(np.ceil(_SUPPORT_SIGMAS * fs / sig_min))
    pad = min(pad, n_samples - 1)
    n_p = n_samples + 2 * pad
    n_fft = sfft.next_fast_len(n_p + 2 * pad + 1)

    # Calibrate per-filter gains so the aggregate squared response tracks
    # 1 - |phi_hat|^2 at the wavelet centers, then rescale the whole bank so
    # the Littlewood-Paley maximum is exactly 1.
    w = 2 * np.pi * np.fft.rfftfreq(n_fft, 1.0 / fs)
    phi_hat = np.exp(-0.5 * (w / sig_phi) ** 2)
    resp = np.empty((n_wav, w.size))
    for i in range(n_wav):
        resp[i] = np.exp(-0.5 * ((w - lam[i]) / sig[i]) ** 2) - np.exp(
            -0.5 * (lam[i] / sig[i]) ** 2
        ) * np.exp(-0.5 * (w / sig[i]) ** 2)
    target = np.clip(1.0 - phi_hat**2, 0.01, None)
    centers = np.argmin(np.abs(w[None, :] - lam[:, None]), axis=1)
    gains = np.ones(n_wav)
    for _ in range(2):
        current = ((gains[:, None] * resp) ** 2).sum(axis=0)
        gains *= np.sqrt(target[centers] / np.maximum(current[centers], 1e-30))
    lp = phi_hat**2 + ((gains[:, None] * resp) ** 2).sum(axis=0)
    scale = 1.0 / np.sqrt(lp.max())
    gains *= scale

    m_phi = min(int(np.ceil(_SUPPORT_SIGMAS * fs / sig_phi)), pad)
    lowpass = scale * _lowpass_kernel(sig_phi, fs, m_phi)
    wavelets = []
    for i in range(n_wav):
        m = min(int(np.ceil(_SUPPORT_SIGMAS * fs / sig[i])), pad)
        wavelets.append(gains[i] * _wavelet_kernel(lam[i], sig[i], fs, m))

    fb = Filterbank(
        lowpass=lowpass,
        wavelets=wavelets,
        center_freqs=lam,
        bandwidths=sig,
        sample_rate=fs,
        T=cfg.T,
        Q=cfg.Q,
        n_samples=n_samples,
        pad=pad,
        n_fft=n_fft,
    )
    # Kernel truncation perturbs the responses by ~1e-5; rescale once more
    # from the actual kernels so the Littlewood-Paley maximum is exactly <= 1.
    lp_max = float(fb.littlewood_paley().max())
    if lp_max > 0:
        adjust = 1.0 / np.sqrt(lp_max)
        fb.lowpass = fb.lowpass * adjust
        fb.wavelets = [k * adjust for k in fb.wavelets]
        fb._lowpass_sum = float(fb.lowpass.sum())
        fb._wavelet_ffts = None
    return fb


def _as_samples(x) -> np.ndarray:
    if isinstance(x, (Signal, Segment)):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def _frame_positions(n: int, hop: int) -> np.ndarray:
    return np.arange(0, n, hop)


def _resolve_hop(cfg: ScatteringConfig, fs: float) -> int:
    if cfg.frame_hop is not None:
        return int(cfg.frame_hop)
    return max(1, int(round(cfg.T / 2 * fs)))


def _lowpass_at_frames(x: np.ndarray, kernel: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Evaluate (kernel * x) at the given sample positions only.

    ``kernel`` must be symmetric; positions must leave its half-width of
    margin inside ``x``.  Rows of 2-D ``x`` are processed independently.
    """
    m = (len(kernel) - 1) // 2
    x2 = np.atleast_2d(x)
    windows = np.lib.stride_tricks.sliding_window_view(x2, len(kernel), axis=1)
    out = windows[:, positions - m, :] @ kernel[::-1]
    return out if x.ndim == 2 else out[0]


def scatter_order1(x, fb: Filterbank, cfg: ScatteringConfig) -> ScatteringMatrix:
    """Unnormalized order-0/order-1 scattering of one signal or segment.

    The input is reflect-padded by half the largest filter support, convolved
    with every filter by FFT (exact linear convolution), and the lowpassed
    moduli are sampled every ``frame_hop`` samples.

    Raises
    ------
    ValueError
        If the input is shorter than the lowpass support.
    """
    samples = _as_samples(x)
    modality = getattr(x, "modality", "audio")
    fs = fb.sample_rate
    n = len(samples)
    if n < len(fb.lowpass):
        raise ValueError(
            f"segment of {n} samples is shorter than the lowpass support "
            f"({len(fb.lowpass)} samples)"
        )
    hop = _resolve_hop(cfg, fs)
    pad = min(fb.pad, n - 1)
    xp = np.pad(samples, pad, mode="reflect")
    n_p = len(xp)
    if n == fb.n_samples:
        n_fft = fb.n_fft
    else:
        longest = max(len(k) for k in fb.wavelets)
        n_fft = sfft.next_fast_len(n_p + longest)

    if n == fb.n_samples:
        wav_ffts = fb._ffts()
    else:
        mat = np.zeros((fb.n_wavelets, n_fft), dtype=np.complex128)
        for i, k in enumerate(fb.wavelets):
            m = (len(k) - 1) // 2
            mat[i, : m + 1] = k[m:]
            if m:
                mat[i, -m:] = k[:m]
        wav_ffts = sfft.fft(mat, axis=1)

    spectrum = sfft.fft(xp, n_fft)
    u = sfft.ifft(spectrum[None, :] * wav_ffts, axis=1)[:, :n_p]
    abs_u = np.abs(u)

    positions = pad + _frame_positions(n, hop)
    order0 = _lowpass_at_frames(xp, fb.lowpass, positions)[None, :]
    order1 = _lowpass_at_frames(abs_u, fb.lowpass, positions)
    envelopes = abs_u[:, positions]
    frame_times = _frame_positions(n, hop) / fs

    return ScatteringMatrix(
        order0=order0,
        order1=order1,
        frame_times=frame_times,
        center_freqs=fb.center_freqs.copy(),
        T=cfg.T,
        Q=cfg.Q,
        epsilon=cfg.epsilon,
        modality=modality,
        normalized=False,
        envelopes=envelopes,
    )


def normalize_scattering(s: ScatteringMatrix, x, fb: Filterbank, cfg: ScatteringConfig) -> ScatteringMatrix:
    """Divide order-1 rows frame-wise by the lowpassed signal magnitude.

    Each order-1 row is divided by ``phi * |x| + eps`` evaluated at the same
    frame instants; order-0 rows pass through unchanged.  ``eps`` is the
    relative guard from the config (see ScatteringConfig.epsilon); frames
    where the normalizer is exactly zero (an all-zero signal) map to zero.
    """
    samples = _as_samples(x)
    fs = fb.sample_rate
    n = len(samples)
    hop = _resolve_hop(cfg, fs)
    expected = len(_frame_positions(n, hop))
    if s.order1.shape[1] != expected:
        raise ValueError(
            f"scattering matrix has {s.order1.shape[1]} frames but the signal "
            f"yields {expected}"
        )
    pad = min(fb.pad, n - 1)
    xp = np.pad(np.abs(samples), pad, mode="reflect")
    positions = pad + _frame_positions(n, hop)
    norm_row = _lowpass_at_frames(xp, fb.lowpass, positions)
    eps = cfg.epsilon * float(np.max(np.abs(samples), initial=0.0)) * fb._lowpass_sum
    den = norm_row + eps
    order1 = np.where(den > 0, s.order1 / np.where(den > 0, den, 1.0), 0.0)
    return ScatteringMatrix(
        order0=s.order0.copy(),
        order1=order1,
        frame_times=s.frame_times.copy(),
        center_freqs=s.center_freqs.copy(),
        T=s.T,
        Q=s.Q,
        epsilon=cfg.epsilon,
        modality=s.modality,
        normalized=True,
        envelopes=None if s.envelopes is None else s.envelopes.copy(),
    )


# ---------------------------------------------------------------------------
# Serialization: bit-exact binary and human-readable CSV
# ---------------------------------------------------------------------------

_MAGIC = b"GSM1"
_VERSION = 1


def save_matrix_bin(path, s: ScatteringMatrix) -> None:
    """Write a ScatteringMatrix as a flat binary blob (bit-exact round trip)."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    mod = s.modality.encode()
    buf.write(struct.pack("<IdIdB I", _VERSION, s.T, s.Q, s.epsilon,
                          1 if s.normalized else 0, len(mod)))
    buf.write(mod)
    n0, nf = s.order0.shape
    n1 = s.order1.shape[0]
    buf.write(struct.pack("<III", n0, n1, nf))
    for arr in (s.frame_times, s.center_freqs, s.order0, s.order1):
        buf.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_matrix_bin(path) -> ScatteringMatrix:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    off = 4
    version, T, Q, eps, normalized, mlen = struct.unpack_from("<IdIdB I", raw, off)
    off += struct.calcsize("<IdIdB I")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    modality = raw[off : off + mlen].decode()
    off += mlen
    n0, n1, nf = struct.unpack_from("<III", raw, off)
    off += struct.calcsize("<III")

    def take(count):
        nonlocal off
        out = np.frombuffer(raw, dtype=np.float64, count=count, offset=off).copy()
        off += count * 8
        return out

    frame_times = take(nf)
    center_freqs = take(n1)
    order0 = take(n0 * nf).reshape(n0, nf)
    order1 = take(n1 * nf).reshape(n1, nf)
    return ScatteringMatrix(
        order0=order0, order1=order1, frame_times=frame_times,
        center_freqs=center_freqs, T=T, Q=Q, epsilon=eps,
        modality=modality, normalized=bool(normalized),
    )


def save_matrix_csv(path, s: ScatteringMatrix) -> None:
    """CSV form: header row names the frame times, rows carry path labels."""
    with open(path, "w") as f:
        f.write("path,center_freq_rad_s," + ",".join(repr(float(t)) for t in s.frame_times) + "\n")
        for i in range(s.order0.shape[0]):
            row = ",".join(repr(float(v)) for v in s.order0[i])
            f.write(f"S0_{i},0.0,{row}\n")
        for i in range(s.order1.shape[0]):
            row = ",".join(repr(float(v)) for v in s.order1[i])
            f.write(f"S1_{i},{repr(float(s.center_freqs[i]))},{row}\n")
