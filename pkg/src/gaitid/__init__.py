"""Gait-based person identification from acoustic and floor-vibration signals.

Pipeline: synthetic (or recorded) bimodal walks -> order-1 normalized
scattering -> feature fusion and postprocessing -> GMM-UBM open-set
recognition evaluated by Equal Error Rate.
"""

from .features import (
    FusedMatrix,
    PcaBasis,
    PostprocessConfig,
    Standardizer,
    dct_reduce,
    fuse,
    log_standardize,
    pca_fit,
    pca_reduce,
    postprocess_matrix,
    temporal_fourier_modulus,
)
from .harness import (
    HarnessConfig,
    Partition,
    PartitionSpec,
    ResultsTable,
    SweepSpec,
    default_corpus,
    extract_features,
    partition,
    run_experiment,
    sweep,
)
from .openset import (
    GmmModel,
    ScoreSet,
    compute_eer,
    em_fit,
    log_likelihood,
    map_adapt,
    score_llr,
)
from .scattering import (
    Filterbank,
    ScatteringConfig,
    ScatteringMatrix,
    build_filterbank,
    normalize_scattering,
    scatter_order1,
)
from .signal_io import (
    Segment,
    SegmentConfig,
    Signal,
    load_geophone_csv,
    load_wav,
    resample,
    save_wav,
    segment_signal,
)
from .synthgait import (
    Corpus,
    SynthGaitParams,
    Walk,
    WalkerSignature,
    default_synth_params,
    default_walkers,
    generate_dataset,
    generate_impact_velocity,
    read_corpus,
    render_modality,
    write_corpus,
)

__version__ = "0.1.0"
