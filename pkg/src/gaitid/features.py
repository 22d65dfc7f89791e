"""Bimodal feature fusion and postprocessing.

Fusion averages the normalized first-order scattering rows of the two
modalities after rescaling each so its largest coefficient is 1, which
compensates the magnitude disparity between sensors; zero-order rows are
concatenated unweighted.  Postprocessing removes global temporal offset by a
row-wise Fourier modulus, then applies log, per-dimension standardization
(training statistics only) and a DCT or PCA reduction.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .scattering import ScatteringMatrix

LOG_GUARD = 1e-10
STD_FLOOR = 1e-12


@dataclass
class FusedMatrix:
    """Weighted-average order-1 rows plus concatenated order-0 rows.

    ``order0`` stacks the audio row(s) first, then the geophone row(s);
    the applied weights are kept for audit.
    """

    order0: np.ndarray
    order1: np.ndarray
    alpha_audio: float
    alpha_geo: float
    frame_times: np.ndarray
    center_freqs: np.ndarray

    def combined(self) -> np.ndarray:
        """Full path-by-frame matrix: order-0 rows on top, fused order-1 below."""
        return np.vstack([self.order0, self.order1])


@dataclass(frozen=True)
class PostprocessConfig:
    """Reduction settings: how many coefficients to keep and by which basis."""

    n_coeffs: int = 100
    reduction: str = "dct"

    def __post_init__(self):
        if self.n_coeffs < 1:
            raise ValueError("n_coeffs must be >= 1")
        if self.reduction not in ("dct", "pca"):
            raise ValueError(f"reduction must be 'dct' or 'pca', got {self.reduction!r}")


def _modality_alpha(order1: np.ndarray) -> float:
    """1 / max coefficient, or 0 for an all-zero modality (sensor dropout)."""
    peak = float(order1.max()) if order1.size else 0.0
    return 1.0 / peak if peak > 0 else 0.0


def fuse(sa: ScatteringMatrix, sg: ScatteringMatrix) -> FusedMatrix:
    """Fuse normalized audio and geophone scattering matrices.

    Both matrices must come from the same filterbank (identical row indexing)
    and have equal frame counts; upsample the geophone signal to the audio
    rate before scattering to satisfy this.

    Raises
    ------
    ValueError
        On shape mismatch or when both modalities are all-zero.
    """
    if sa.order1.shape != sg.order1.shape or not np.array_equal(
        sa.center_freqs, sg.center_freqs
    ):
        raise ValueError("modalities disagree in shape or row indexing")
    a_aud = _modality_alpha(sa.order1)
    a_geo = _modality_alpha(sg.order1)
    if a_aud == 0.0 and a_geo == 0.0:
        raise ValueError("both modalities are all-zero")
    fused = a_aud * sa.order1 + a_geo * sg.order1
    return FusedMatrix(
        order0=np.vstack([sa.order0, sg.order0]),
        order1=fused,
        alpha_audio=a_aud,
        alpha_geo=a_geo,
        frame_times=sa.frame_times.copy(),
        center_freqs=sa.center_freqs.copy(),
    )


def temporal_fourier_modulus(m: np.ndarray) -> np.ndarray:
    """Magnitude of the DFT of each row across frames.

    Keeps the ``F//2 + 1`` nonredundant bins of the real-input spectrum; the
    result is exactly invariant to circular shifts of the columns.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ValueError("need a nonempty 2-D matrix")
    return np.abs(np.fft.rfft(m, axis=1))


def flatten_path_major(m: np.ndarray) -> np.ndarray:
    """Fix the flattening order: path-major, spectrum-bin-minor."""
    return np.asarray(m).reshape(-1)


@dataclass
class Standardizer:
    """Per-dimension centering and unit-variance scaling statistics."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)


def log_standardize(x: np.ndarray, stats: Standardizer | None = None) -> tuple[np.ndarray, Standardizer]:
    """Elementwise log(x + guard), then standardize per dimension.

    ``x`` is (n_samples, dim) of nonnegative entries.  When ``stats`` is None
    the statistics are fitted on ``x`` itself (training data); otherwise the
    given training statistics are applied.  Standard deviations are floored
    so constant dimensions map to 0 rather than NaN.

    Returns
    -------
    (standardized array, statistics used)
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if np.any(x < 0):
        raise ValueError("entries must be nonnegative")
    logged = np.log(x + LOG_GUARD)
    if stats is None:
        mean = logged.mean(axis=0)
        std = np.maximum(logged.std(axis=0), STD_FLOOR)
        stats = Standardizer(mean=mean, std=std)
    elif stats.dim != logged.shape[1]:
        raise ValueError(
            f"statistics were fitted for dim {stats.dim}, data has {logged.shape[1]}"
        )
    return (logged - stats.mean) / stats.std, stats


def dct_reduce(v: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` coefficients of the orthonormal DCT-II of ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        if not (1 <= n <= v.size):
            raise ValueError(f"n={n} out of range for dimension {v.size}")
        return sfft.dct(v, type=2, norm="ortho")[:n]
    if not (1 <= n <= v.shape[1]):
        raise ValueError(f"n={n} out of range for dimension {v.shape[1]}")
    return sfft.dct(v, type=2, norm="ortho", axis=1)[:, :n]


@dataclass
class PcaBasis:
    """Centered principal-component projection basis."""

    mean: np.ndarray
    components: np.ndarray       # (rank, dim), rows = descending variance
    explained_variance: np.ndarray


def pca_fit(x: np.ndarray, n_components: int | None = None) -> PcaBasis:
    """Top eigenvectors of the training covariance, rank-truncated.

    Eigenvector signs are fixed (largest-magnitude entry positive) so the
    basis is deterministic.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n_samples, dim = x.shape
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / max(n_samples - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    rank = int(np.sum(evals > max(evals[0], 0) * 1e-12)) if evals.size else 0
    rank = max(rank, 1)
    if n_components is not None:
        if n_components > n_samples:
            raise ValueError("need at least n_components training vectors")
        rank = min(rank, n_components)
    comp = evecs[:, :rank].T
    for i in range(rank):
        j = np.argmax(np.abs(comp[i]))
        if comp[i, j] < 0:
            comp[i] = -comp[i]
    return PcaBasis(mean=mean, components=comp, explained_variance=np.maximum(evals[:rank], 0.0))


def pca_reduce(v: np.ndarray, basis: PcaBasis, n: int) -> np.ndarray:
    """Project onto the first ``n`` principal components."""
    if not (1 <= n <= basis.components.shape[0]):
        raise ValueError(
            f"n={n} exceeds available rank {basis.components.shape[0]}"
        )
    v = np.asarray(v, dtype=np.float64)
    return (v - basis.mean) @ basis.components[:n].T


def postprocess_matrix(
    m: np.ndarray,
    stats: Standardizer,
    cfg: PostprocessConfig,
    pca: PcaBasis | None = None,
) -> np.ndarray:
    """Full postprocessing of one path-by-frame matrix into a FeatureVector.

    Fourier modulus across frames, path-major flattening, log, training-set
    standardization, then DCT (default) or PCA reduction to ``cfg.n_coeffs``.
    """
    spec = temporal_fourier_modulus(m)
    v = flatten_path_major(spec)
    vs, _ = log_standardize(v[None, :], stats)
    if cfg.reduction == "pca":
        if pca is None:
            raise ValueError("PCA reduction requires a fitted basis")
        return pca_reduce(vs[0], pca, cfg.n_coeffs)
    return dct_reduce(vs[0], cfg.n_coeffs)


# ---------------------------------------------------------------------------
# Persistence: feature CSV and standardizer/PCA stats blob
# ---------------------------------------------------------------------------

_MAGIC = b"GFS1"
_VERSION = 1


def save_stats(path, stats: Standardizer, pca: PcaBasis | None = None) -> None:
    """Versioned binary blob holding standardizer and optional PCA stats."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<IIB", _VERSION, stats.dim, 1 if pca is not None else 0))
    buf.write(stats.mean.astype(np.float64).tobytes())
    buf.write(stats.std.astype(np.float64).tobytes())
    if pca is not None:
        rank, dim = pca.components.shape
        buf.write(struct.pack("<II", rank, dim))
        buf.write(pca.mean.astype(np.float64).tobytes())
        buf.write(pca.components.astype(np.float64).tobytes())
        buf.write(pca.explained_variance.astype(np.float64).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_stats(path) -> tuple[Standardizer, PcaBasis | None]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    off = 4
    version, dim, has_pca = struct.unpack_from("<IIB", raw, off)
    off += struct.calcsize("<IIB")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")

    def take(count):
        nonlocal off
        out = np.frombuffer(raw, dtype=np.float64, count=count, offset=off).copy()
        off += count * 8
        return out

    stats = Standardizer(mean=take(dim), std=take(dim))
    pca = None
    if has_pca:
        rank, pdim = struct.unpack_from("<II", raw, off)
        off += struct.calcsize("<II")
        pca = PcaBasis(
            mean=take(pdim),
            components=take(rank * pdim).reshape(rank, pdim),
            explained_variance=take(rank),
        )
    return stats, pca


def write_features_csv(path, vectors: np.ndarray, labels, walk_ids, segment_idx) -> None:
    """Feature vectors with identity metadata, one row per segment."""
    vectors = np.atleast_2d(vectors)
    with open(path, "w") as f:
        dim = vectors.shape[1]
        f.write("label,walk_id,segment," + ",".join(f"c{i}" for i in range(dim)) + "\n")
        for lab, wid, seg, vec in zip(labels, walk_ids, segment_idx, vectors):
            f.write(f"{lab},{wid},{seg}," + ",".join(repr(float(c)) for c in vec) + "\n")


def read_features_csv(path):
    """Returns (vectors, labels, walk_ids, segment_idx)."""
    labels, walk_ids, segs, rows = [], [], [], []
    with open(path) as f:
        header = f.readline()
        if not header.startswith("label,"):
            raise ValueError(f"{path}: unexpected header")
        for line in f:
            parts = line.rstrip("\n").split(",")
            labels.append(parts[0])
            walk_ids.append(parts[1])
            segs.append(int(parts[2]))
            rows.append([float(p) for p in parts[3:]])
    return np.asarray(rows), labels, walk_ids, segs
