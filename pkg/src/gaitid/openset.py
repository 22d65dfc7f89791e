"""Open-set identification: GMM-UBM training, adaptation, scoring, EER.

A diagonal-covariance Gaussian mixture trained on a background population
(the UBM) represents the "anyone" hypothesis; enrolled walkers are obtained
by relevance-weighted MAP adaptation of the UBM component means.  Trials are
scored by the average per-segment log-likelihood ratio against the UBM, and
systems are compared by their Equal Error Rate.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-6


@dataclass
class GmmModel:
    """Diagonal-covariance Gaussian mixture.

    ``weights`` lie on the simplex; ``means`` and ``variances`` are (K, d);
    variances are floored at 1e-6 (features are standardized upstream).
    ``history`` records the per-iteration training log-likelihood when the
    model came out of ``em_fit``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    history: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ValueError("weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if np.any(self.variances < VAR_FLOOR * (1 - 1e-12)):
            raise ValueError(f"variances must be >= {VAR_FLOOR}")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class ScoreSet:
    """Genuine and impostor trial scores: lists of (trial_id, score)."""

    genuine: list
    impostor: list

    def genuine_values(self) -> np.ndarray:
        return np.asarray([s for _, s in self.genuine], dtype=np.float64)

    def impostor_values(self) -> np.ndarray:
        return np.asarray([s for _, s in self.impostor], dtype=np.float64)


def _component_log_densities(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """log w_k + log N(x_i; mu_k, diag sigma2_k) for all (i, k)."""
    x = np.atleast_2d(x)
    if x.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model {model.dim}, data {x.shape[1]}")
    inv = 1.0 / model.variances                             # (K, d)
    const = -0.5 * (
        model.dim * np.log(2 * np.pi) + np.log(model.variances).sum(axis=1)
    )                                                        # (K,)
    quad = (
        (x**2) @ inv.T
        - 2.0 * (x @ (model.means * inv).T)
        + (model.means**2 * inv).sum(axis=1)
    )                                                        # (n, K)
    return np.log(model.weights) + const - 0.5 * quad


def log_likelihood(model: GmmModel, v: np.ndarray) -> float | np.ndarray:
    """log p(v | model) with log-sum-exp stability.

    Accepts one vector or a (n, d) batch; returns a scalar or an array.
    """
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    ll = logsumexp(_component_log_densities(model, v), axis=1)
    return float(ll[0]) if single else ll


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ center selection."""
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = x[rng.integers(n)]
            continue
        probs = d2 / total
        centers[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def em_fit(
    features: np.ndarray,
    k: int,
    iters: int = 100,
    seed: int = 0,
    tol: float = 1e-6,
) -> GmmModel:
    """Diagonal-covariance EM from k-means++ initialization.

    Stops after ``iters`` iterations or when the relative log-likelihood
    improvement drops below ``tol``.  A component that loses all posterior
    mass is reinitialized at the point farthest from the current means (and
    logged).  Deterministic for a given seed; the fitted model carries the
    per-iteration log-likelihood trace in ``history``.

    Raises
    ------
    ValueError
        If there are fewer feature vectors than components.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n, d = x.shape
    if k > n:
        raise ValueError(f"K={k} exceeds the {n} available feature vectors")
    rng = np.random.default_rng(seed)

    means = _kmeanspp(x, k, rng)
    global_var = np.maximum(x.var(axis=0), VAR_FLOOR)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    history = []
    prev_ll = -np.inf
    for _ in range(iters):
        model = GmmModel(weights=weights, means=means, variances=variances)
        log_dens = _component_log_densities(model, x)            # (n, K)
        per_point = logsumexp(log_dens, axis=1)
        ll = float(per_point.sum())
        history.append(ll)
        resp = np.exp(log_dens - per_point[:, None])             # (n, K)

        nk = resp.sum(axis=0)
        empty = nk < 1e-10
        if np.any(empty):
            dist = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
            far = int(np.argmax(dist.min(axis=1)))
            for j in np.flatnonzero(empty):
                logger.warning("component %d went empty; reinitializing at the farthest point", j)
                means[j] = x[far]
                variances[j] = global_var
                resp[:, j] = 1.0 / n
            resp /= resp.sum(axis=1, keepdims=True)
            nk = resp.sum(axis=0)

        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        second = (resp.T @ (x**2)) / nk[:, None]
        variances = np.maximum(second - means**2, VAR_FLOOR)

        if np.isfinite(prev_ll) and abs(ll - prev_ll) < tol * abs(prev_ll):
            break
        prev_ll = ll

    model = GmmModel(weights=weights, means=means, variances=variances,
                     history=np.asarray(history))
    return model


def map_adapt(ubm: GmmModel, features: np.ndarray, relevance: float = 16.0) -> GmmModel:
    """Means-only MAP adaptation of the UBM toward enrollment data.

    Each component mean moves to ``alpha_k * E_k + (1 - alpha_k) * mu_k``
    with ``alpha_k = n_k / (n_k + relevance)``, where ``n_k`` are soft counts
    and ``E_k`` the posterior-weighted enrollment means; weights and
    variances are copied from the UBM.  Components with zero posterior mass
    keep the UBM mean exactly.

    Raises
    ------
    ValueError
        On an empty enrollment set.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.size == 0:
        raise ValueError("enrollment set is empty")
    if relevance <= 0:
        raise ValueError("relevance must be positive")
    log_dens = _component_log_densities(ubm, x)
    resp = np.exp(log_dens - logsumexp(log_dens, axis=1)[:, None])
    nk = resp.sum(axis=0)
    ek = np.where(nk[:, None] > 0, (resp.T @ x) / np.where(nk[:, None] > 0, nk[:, None], 1.0),
                  ubm.means)
    alpha = (nk / (nk + relevance))[:, None]
    means = alpha * ek + (1.0 - alpha) * ubm.means
    return GmmModel(
        weights=ubm.weights.copy(), means=means, variances=ubm.variances.copy()
    )


def score_llr(trial_features: np.ndarray, walker: GmmModel, ubm: GmmModel) -> float:
    """Average per-segment log-likelihood ratio of a trial.

    Raises
    ------
    ValueError
        On an empty trial.
    """
    x = np.atleast_2d(np.asarray(trial_features, dtype=np.float64))
    if x.size == 0:
        raise ValueError("trial holds no feature vectors")
    return float(np.mean(log_likelihood(walker, x) - log_likelihood(ubm, x)))


def compute_eer(scores: ScoreSet) -> float:
    """Equal Error Rate of a genuine/impostor score set.

    Thresholds sweep all distinct scores; FAR(t) is the impostor fraction
    >= t and FRR(t) the genuine fraction < t.  When no threshold ties the two
    rates exactly, the crossing is linearly interpolated between the adjacent
    thresholds.
    """
    gen = scores.genuine_values()
    imp = scores.impostor_values()
    if gen.size == 0 or imp.size == 0:
        raise ValueError("both genuine and impostor scores are required")
    return _eer_from_arrays(gen, imp)


def _eer_from_arrays(gen: np.ndarray, imp: np.ndarray) -> float:
    thresholds = np.unique(np.concatenate([gen, imp]))
    gen_sorted = np.sort(gen)
    imp_sorted = np.sort(imp)
    # FRR: genuine strictly below t; FAR: impostor at or above t.
    frr = np.searchsorted(gen_sorted, thresholds, side="left") / gen.size
    far = (imp.size - np.searchsorted(imp_sorted, thresholds, side="left")) / imp.size
    diff = far - frr          # non-increasing in t
    ties = np.flatnonzero(np.isclose(diff, 0.0, atol=1e-15))
    if ties.size:
        return float(far[ties[0]])
    flip = np.flatnonzero((diff[:-1] > 0) & (diff[1:] < 0))
    if flip.size == 0:
        # no crossing inside the sweep: rates meet at an extreme
        return float(min(max(far[0], frr[0]), max(far[-1], frr[-1])))
    i = int(flip[0])
    theta = diff[i] / (diff[i] - diff[i + 1])
    return float(far[i] + theta * (far[i + 1] - far[i]))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_MAGIC = b"GGM1"
_VERSION = 1


def save_model(path, model: GmmModel) -> None:
    """Versioned binary blob: magic, K, d, weights, means, variances."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<III", _VERSION, model.n_components, model.dim))
    for arr in (model.weights, model.means, model.variances):
        buf.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_model(path) -> GmmModel:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    version, k, d = struct.unpack_from("<III", raw, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 4 + struct.calcsize("<III")

    def take(count):
        nonlocal off
        out = np.frombuffer(raw, dtype=np.float64, count=count, offset=off).copy()
        off += count * 8
        return out

    return GmmModel(weights=take(k), means=take(k * d).reshape(k, d),
                    variances=take(k * d).reshape(k, d))


def write_scores_csv(path, rows) -> None:
    """rows: iterable of (trial_id, claimed_id, true_id, score, genuine)."""
    with open(path, "w") as f:
        f.write("trial_id,claimed_id,true_id,score,genuine\n")
        for trial_id, claimed, true, score, genuine in rows:
            f.write(f"{trial_id},{claimed},{true},{repr(float(score))},{int(genuine)}\n")


def read_scores_csv(path) -> ScoreSet:
    genuine, impostor = [], []
    with open(path) as f:
        header = f.readline()
        if not header.startswith("trial_id,"):
            raise ValueError(f"{path}: unexpected header")
        for line in f:
            trial_id, claimed, true, score, flag = line.rstrip("\n").split(",")
            target = genuine if int(flag) else impostor
            target.append((f"{trial_id}:{claimed}", float(score)))
    return ScoreSet(genuine=genuine, impostor=impostor)
