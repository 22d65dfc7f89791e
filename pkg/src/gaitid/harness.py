"""Experiment harness: partitioning, end-to-end runs, hyperparameter sweep.

The protocol: walks from days 1 and 2 (different shoe tags) form the
training material, day 3 is held out for testing.  Per repeat, a random
disjoint split assigns walkers to UBM training, enrollment, and unknown
roles; test trials come only from test-day walks of the enrollment and
unknown walkers, every trial is scored against every enrolled model, and the
cell statistic is the EER.  Standardization (and optional PCA) statistics
are fitted on UBM-training features only, so no test-day recording ever
touches model fitting.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import features as feat
from . import openset, scattering, signal_io, synthgait
from .features import PostprocessConfig, Standardizer
from .openset import GmmModel, ScoreSet
from .scattering import Filterbank, ScatteringConfig, ScatteringMatrix
from .signal_io import SegmentConfig
from .synthgait import Corpus

TRAIN_DAYS = (1, 2)
TEST_DAY = 3
FEATURE_TYPES = ("audio", "geophone", "fused")


@dataclass(frozen=True)
class PartitionSpec:
    """Walker-role counts and the repeated-split protocol parameters."""

    ubm_count: int = 6
    enroll_count: int = 3
    unknown_count: int = 3
    repeats: int = 100
    base_seed: int = 0


@dataclass(frozen=True)
class SweepSpec:
    """Hyperparameter grid of the sweep."""

    T_values: tuple = (0.046, 0.093, 0.186, 0.371)
    N_values: tuple = (30, 50, 100, 150)
    feature_types: tuple = FEATURE_TYPES

    def __post_init__(self):
        if not (self.T_values and self.N_values and self.feature_types):
            raise ValueError("sweep grids must be nonempty")


@dataclass(frozen=True)
class Partition:
    ubm: tuple
    enroll: tuple
    unknown: tuple


@dataclass
class HarnessConfig:
    """All defaults of the synthetic corpus and the recognition pipeline."""

    # synthetic corpus
    n_walkers: int = 12
    walks_per_walker: int = 10
    duration: float = 4.0
    audio_rate: float = 4000.0
    geo_rate: float = 1000.0
    corpus_seed: int = 0
    drift_rate: float = 0.02
    noise_aud: float = 1e-3
    noise_geo: float = 1e-3
    day_variation: float = 0.03
    # segmentation / scattering
    tau: float = 1.5
    step: float = 0.25
    T: float = 0.093
    Q: int = 8
    epsilon: float = 1e-6
    # postprocessing
    N: int = 100
    reduction: str = "dct"
    # GMM-UBM
    n_components: int = 32
    relevance: float = 16.0
    em_iters: int = 100
    em_tol: float = 1e-6
    # protocol
    ubm_count: int = 6
    enroll_count: int = 3
    unknown_count: int = 3
    repeats: int = 10
    base_seed: int = 0
    # sweep grid
    T_values: tuple = (0.046, 0.093, 0.186, 0.371)
    N_values: tuple = (30, 50, 100, 150)
    feature_types: tuple = FEATURE_TYPES

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(
            ubm_count=self.ubm_count,
            enroll_count=self.enroll_count,
            unknown_count=self.unknown_count,
            repeats=self.repeats,
            base_seed=self.base_seed,
        )

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(
            T_values=tuple(self.T_values),
            N_values=tuple(self.N_values),
            feature_types=tuple(self.feature_types),
        )


def parse_config(path, base: HarnessConfig | None = None) -> HarnessConfig:
    """Read ``key = value`` lines into a HarnessConfig.

    Values are coerced to the type of the corresponding default; tuples are
    given as comma-separated lists.  '#' starts a comment.
    """
    cfg = base or HarnessConfig()
    defaults = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    overrides = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in defaults:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            overrides[key] = _coerce(value, defaults[key], f"{path}:{lineno}")
    return replace(cfg, **overrides)


def _coerce(value: str, default, where: str):
    if isinstance(default, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{where}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        items = [v.strip() for v in value.split(",") if v.strip()]
        elem = default[0] if default else ""
        if isinstance(elem, float):
            return tuple(float(v) for v in items)
        if isinstance(elem, int):
            return tuple(int(v) for v in items)
        return tuple(items)
    return value


def default_corpus(cfg: HarnessConfig) -> Corpus:
    """The seeded synthetic corpus all defaults refer to."""
    walkers = synthgait.default_walkers(
        cfg.n_walkers, seed=cfg.corpus_seed, pulse_rate=cfg.audio_rate
    )
    params = synthgait.default_synth_params(
        audio_rate=cfg.audio_rate,
        geo_rate=cfg.geo_rate,
        seed=cfg.corpus_seed,
        drift_rate=cfg.drift_rate,
        noise_aud=cfg.noise_aud,
        noise_geo=cfg.noise_geo,
        duration=cfg.duration,
        day_variation=cfg.day_variation,
    )
    return synthgait.generate_dataset(
        walkers, params, walks_per_walker=cfg.walks_per_walker, seed=cfg.corpus_seed
    )


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


def partition(corpus: Corpus, spec: PartitionSpec, repeat_index: int) -> Partition:
    """Disjoint UBM / enrollment / unknown walker split for one repeat.

    Deterministic for a given (base_seed, repeat_index).

    Raises
    ------
    ValueError
        If there are too few walkers or any walker lacks train- or
        test-day recordings.
    """
    walkers = corpus.walker_ids
    need = spec.ubm_count + spec.enroll_count + spec.unknown_count
    if len(walkers) < need:
        raise ValueError(f"need >= {need} walkers, corpus has {len(walkers)}")
    days = {w: {walk.day for walk in corpus.by_walker(w)} for w in walkers}
    missing = [w for w in walkers if TEST_DAY not in days[w] or not (set(TRAIN_DAYS) & days[w])]
    if missing:
        raise ValueError(f"walkers missing train- or test-day recordings: {missing}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.base_seed, repeat_index, 52981]))
    perm = list(rng.permutation(walkers))
    ubm = tuple(sorted(perm[: spec.ubm_count]))
    enroll = tuple(sorted(perm[spec.ubm_count : spec.ubm_count + spec.enroll_count]))
    unknown = tuple(
        sorted(perm[spec.ubm_count + spec.enroll_count : need])
    )
    return Partition(ubm=ubm, enroll=enroll, unknown=unknown)


# ---------------------------------------------------------------------------
# Feature extraction (cached per T)
# ---------------------------------------------------------------------------


@dataclass
class WalkFeatures:
    walk_id: str
    walker_id: str
    day: int
    raw: dict  # feature type -> (n_segments, raw_dim) nonnegative array


@dataclass
class FeatureCache:
    """Raw (pre-log, pre-standardization) segment vectors for one T."""

    T: float
    walks: list[WalkFeatures]

    def of(self, ftype: str, walker_ids, days) -> np.ndarray:
        days = set(days)
        chunks = [
            w.raw[ftype]
            for w in self.walks
            if w.walker_id in walker_ids and w.day in days
        ]
        return np.concatenate(chunks, axis=0)


def _window_matrix(sm: ScatteringMatrix, sl: slice) -> ScatteringMatrix:
    return ScatteringMatrix(
        order0=sm.order0[:, sl],
        order1=sm.order1[:, sl],
        frame_times=sm.frame_times[sl],
        center_freqs=sm.center_freqs,
        T=sm.T, Q=sm.Q, epsilon=sm.epsilon,
        modality=sm.modality, normalized=sm.normalized,
    )


def extract_features(
    corpus: Corpus,
    T: float,
    cfg: HarnessConfig,
    feature_types=FEATURE_TYPES,
) -> FeatureCache:
    """Scatter every walk at one invariance scale and window into segments.

    The geophone signal is upsampled to the audio rate and scattered with the
    same filterbank as the audio, so the per-modality matrices are
    row-aligned for fusion.  Whole walks are scattered once and the frame
    sequence is windowed into the overlapping analysis segments, which is
    equivalent to per-segment scattering away from segment borders and about
    6x cheaper at the default hop.
    """
    scat_cfg = ScatteringConfig(T=T, Q=cfg.Q, epsilon=cfg.epsilon)
    fs = cfg.audio_rate
    n_walk = int(round(cfg.duration * fs))
    fb = scattering.build_filterbank(scat_cfg, fs, n_walk)
    hop = max(1, int(round(T / 2 * fs)))
    seg_len = int(round(cfg.tau * fs))
    seg_hop = int(round(cfg.step * fs))
    frames_per_seg = seg_len // hop
    if frames_per_seg < 2:
        raise ValueError(f"tau={cfg.tau}s holds fewer than 2 frames at T={T}s")

    walks = []
    for walk in corpus.walks:
        if len(walk.audio) != n_walk:
            raise ValueError(
                f"walk {walk.walk_id}: expected {n_walk} audio samples, got {len(walk.audio)}"
            )
        geo_up = signal_io.resample(walk.geo, fs)
        if len(geo_up) != n_walk:
            geo_up = signal_io.Signal(
                np.resize(geo_up.samples, n_walk), fs, "geophone"
            )
        sa = scattering.scatter_order1(walk.audio, fb, scat_cfg)
        sa = scattering.normalize_scattering(sa, walk.audio, fb, scat_cfg)
        sg = scattering.scatter_order1(geo_up, fb, scat_cfg)
        sg = scattering.normalize_scattering(sg, geo_up, fb, scat_cfg)

        n_segments = (n_walk - seg_len) // seg_hop + 1
        raw = {ftype: [] for ftype in feature_types}
        for k in range(n_segments):
            f0 = -(-(k * seg_hop) // hop)          # ceil division
            sl = slice(f0, f0 + frames_per_seg)
            wa, wg = _window_matrix(sa, sl), _window_matrix(sg, sl)
            for ftype in feature_types:
                if ftype == "audio":
                    m = np.vstack([wa.order0, wa.order1])
                elif ftype == "geophone":
                    m = np.vstack([wg.order0, wg.order1])
                else:
                    m = feat.fuse(wa, wg).combined()
                vec = feat.flatten_path_major(feat.temporal_fourier_modulus(m))
                raw[ftype].append(vec)
        walks.append(
            WalkFeatures(
                walk_id=walk.walk_id,
                walker_id=walk.walker_id,
                day=walk.day,
                raw={ftype: np.asarray(v) for ftype, v in raw.items()},
            )
        )
    return FeatureCache(T=T, walks=walks)


# ---------------------------------------------------------------------------
# Single-cell experiment
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    eer: float
    scores: ScoreSet
    ubm: GmmModel
    standardizer: Standardizer
    enrolled: dict
    trial_rows: list          # (trial_id, claimed_id, true_id, score, genuine)
    fitted_on: dict           # role -> tuple of walk ids used for fitting


def _cell_seed(base_seed: int, t_idx: int, n_idx: int, f_idx: int, repeat: int) -> int:
    ss = np.random.SeedSequence([base_seed, t_idx, n_idx, f_idx, repeat, 7919])
    return int(ss.generate_state(1)[0])


def run_cell(
    cache: FeatureCache,
    ftype: str,
    n_coeffs: int,
    part: Partition,
    cfg: HarnessConfig,
    em_seed: int = 0,
    shuffle_labels: bool = False,
    shuffle_seed: int = 0,
) -> ExperimentResult:
    """One (feature type, T, N) cell on one partition."""
    stage = "standardizer fit"
    try:
        train_w = [w for w in cache.walks if w.day in TRAIN_DAYS]
        test_w = [w for w in cache.walks if w.day == TEST_DAY]
        ubm_walks = [w for w in train_w if w.walker_id in part.ubm]
        ubm_raw = np.concatenate([w.raw[ftype] for w in ubm_walks], axis=0)
        ubm_std, stats = feat.log_standardize(ubm_raw)

        stage = "reduction"
        PostprocessConfig(n_coeffs=n_coeffs, reduction=cfg.reduction)  # validates
        pca = None
        if cfg.reduction == "pca":
            pca = feat.pca_fit(ubm_std)
            reduce = lambda x: feat.pca_reduce(x, pca, n_coeffs)
        else:
            reduce = lambda x: feat.dct_reduce(x, n_coeffs)
        ubm_x = reduce(ubm_std)

        stage = "UBM training"
        ubm = openset.em_fit(
            ubm_x, cfg.n_components, iters=cfg.em_iters, seed=em_seed, tol=cfg.em_tol
        )

        stage = "enrollment"
        enrolled = {}
        enroll_walks = {}
        for walker in part.enroll:
            walks = [w for w in train_w if w.walker_id == walker]
            raw = np.concatenate([w.raw[ftype] for w in walks], axis=0)
            x = reduce(feat.log_standardize(raw, stats)[0])
            enrolled[walker] = openset.map_adapt(ubm, x, relevance=cfg.relevance)
            enroll_walks[walker] = tuple(w.walk_id for w in walks)

        stage = "scoring"
        eval_walkers = set(part.enroll) | set(part.unknown)
        trials = [w for w in test_w if w.walker_id in eval_walkers]
        true_ids = [w.walker_id for w in trials]
        if shuffle_labels:
            rng = np.random.default_rng(
                np.random.SeedSequence([shuffle_seed, 3121]))
            true_ids = [true_ids[i] for i in rng.permutation(len(true_ids))]
        rows = []
        genuine, impostor = [], []
        for w, true_id in zip(trials, true_ids):
            x = reduce(feat.log_standardize(w.raw[ftype], stats)[0])
            for claimed, model in enrolled.items():
                s = openset.score_llr(x, model, ubm)
                is_genuine = claimed == true_id
                rows.append((w.walk_id, claimed, true_id, s, is_genuine))
                (genuine if is_genuine else impostor).append((f"{w.walk_id}:{claimed}", s))

        stage = "EER"
        scores = ScoreSet(genuine=genuine, impostor=impostor)
        eer = openset.compute_eer(scores)
    except Exception as e:
        raise RuntimeError(f"stage '{stage}' failed for ftype={ftype}, N={n_coeffs}: {e}") from e

    return ExperimentResult(
        eer=eer,
        scores=scores,
        ubm=ubm,
        standardizer=stats,
        enrolled=enrolled,
        trial_rows=rows,
        fitted_on={
            "ubm": tuple(w.walk_id for w in ubm_walks),
            "standardizer": tuple(w.walk_id for w in ubm_walks),
            "enroll": enroll_walks,
        },
    )


def run_experiment(
    corpus: Corpus,
    feature_type: str,
    T: float,
    n_coeffs: int,
    part: Partition,
    cfg: HarnessConfig | None = None,
    em_seed: int = 0,
    cache: FeatureCache | None = None,
    shuffle_labels: bool = False,
    shuffle_seed: int = 0,
) -> ExperimentResult:
    """End-to-end single cell: extract, postprocess, fit, enroll, score, EER."""
    cfg = cfg or HarnessConfig()
    if cache is None:
        cache = extract_features(corpus, T, cfg, feature_types=(feature_type,))
    return run_cell(
        cache, feature_type, n_coeffs, part, cfg,
        em_seed=em_seed, shuffle_labels=shuffle_labels, shuffle_seed=shuffle_seed,
    )


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


@dataclass
class ResultsTable:
    """Per-cell EER lists over repeats, plus failure notes."""

    spec: SweepSpec
    repeats: int
    cells: dict = field(default_factory=dict)     # (ftype, T, N) -> list[float]
    errors: dict = field(default_factory=dict)    # (ftype, T, N, repeat) -> str

    def median(self, key) -> float:
        return float(np.median(self.cells[key]))

    def quartiles(self, key):
        vals = np.asarray(self.cells[key], dtype=np.float64)
        return tuple(
            float(np.percentile(vals, p)) for p in (0, 25, 50, 75, 100)
        )

    def best_cell(self, ftype: str):
        """(T, N) with the smallest median EER for one feature type."""
        best, best_key = np.inf, None
        for T in self.spec.T_values:
            for n in self.spec.N_values:
                key = (ftype, T, n)
                if key in self.cells and self.cells[key]:
                    med = self.median(key)
                    if med < best:
                        best, best_key = med, key
        return best_key, best


def sweep(
    corpus: Corpus,
    sweep_spec: SweepSpec | None = None,
    part_spec: PartitionSpec | None = None,
    cfg: HarnessConfig | None = None,
    progress=None,
) -> ResultsTable:
    """Full grid x repeats; cell failures are recorded and the sweep continues."""
    cfg = cfg or HarnessConfig()
    sweep_spec = sweep_spec or cfg.sweep_spec()
    part_spec = part_spec or cfg.partition_spec()
    table = ResultsTable(spec=sweep_spec, repeats=part_spec.repeats)
    parts = [partition(corpus, part_spec, r) for r in range(part_spec.repeats)]
    for t_idx, T in enumerate(sweep_spec.T_values):
        cache = extract_features(corpus, T, cfg, feature_types=sweep_spec.feature_types)
        for f_idx, ftype in enumerate(sweep_spec.feature_types):
            for n_idx, n in enumerate(sweep_spec.N_values):
                key = (ftype, T, n)
                table.cells[key] = []
                for repeat, part in enumerate(parts):
                    seed = _cell_seed(part_spec.base_seed, t_idx, n_idx, f_idx, repeat)
                    try:
                        res = run_cell(cache, ftype, n, part, cfg, em_seed=seed)
                        table.cells[key].append(res.eer)
                    except Exception as e:  # record and continue
                        table.errors[(ftype, T, n, repeat)] = str(e)
                        table.cells[key].append(float("nan"))
                if progress is not None:
                    progress(key, table.cells[key])
    return table


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_results_csv(table: ResultsTable, path) -> None:
    with open(path, "w") as f:
        f.write("feature_type,T,N,repeat,eer\n")
        for ftype in table.spec.feature_types:
            for T in table.spec.T_values:
                for n in table.spec.N_values:
                    key = (ftype, T, n)
                    if key not in table.cells:
                        continue
                    for repeat, eer in enumerate(table.cells[key]):
                        f.write(f"{ftype},{T!r},{n},{repeat},{repr(float(eer))}\n")


def write_table_md(table: ResultsTable, path) -> None:
    """Median EER per cell, one block per feature type (rows T, columns N)."""
    with open(path, "w") as f:
        f.write("# Median EER by feature type\n")
        for ftype in table.spec.feature_types:
            f.write(f"\n## {ftype}\n\n")
            f.write("| T \\ N | " + " | ".join(str(n) for n in table.spec.N_values) + " |\n")
            f.write("|---" * (len(table.spec.N_values) + 1) + "|\n")
            for T in table.spec.T_values:
                row = [f"| {T}s "]
                for n in table.spec.N_values:
                    key = (ftype, T, n)
                    if key in table.cells and table.cells[key]:
                        med = table.median(key)
                        row.append(f"| {'ERR' if np.isnan(med) else f'{med * 100:.2f}%'} ")
                    else:
                        row.append("| - ")
                f.write("".join(row) + "|\n")


def write_boxstats_csv(table: ResultsTable, path) -> None:
    with open(path, "w") as f:
        f.write("feature_type,T,N,min,q1,median,q3,max\n")
        for ftype in table.spec.feature_types:
            for T in table.spec.T_values:
                for n in table.spec.N_values:
                    key = (ftype, T, n)
                    if key not in table.cells or not table.cells[key]:
                        continue
                    lo, q1, med, q3, hi = table.quartiles(key)
                    f.write(
                        f"{ftype},{T!r},{n},{lo!r},{q1!r},{med!r},{q3!r},{hi!r}\n"
                    )
