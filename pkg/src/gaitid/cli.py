"""Batch command-line interface.

Subcommands mirror the pipeline stages: ``synth`` generates a corpus,
``extract`` computes feature vectors, ``train-ubm``/``enroll``/``score``
run the recognizer stage by stage, ``evaluate`` runs one grid cell end to
end, and ``sweep`` runs the full hyperparameter grid.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import features as feat
from . import harness, openset, synthgait
from .harness import FEATURE_TYPES, HarnessConfig, parse_config

_MODALITY_ALIASES = {"audio": "audio", "geo": "geophone", "geophone": "geophone", "fused": "fused"}


def _load_config(args) -> HarnessConfig:
    cfg = HarnessConfig()
    if getattr(args, "config", None):
        cfg = parse_config(args.config, cfg)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
        overrides["corpus_seed"] = args.seed
    if getattr(args, "T", None) is not None:
        overrides["T"] = args.T
    if getattr(args, "N", None) is not None:
        overrides["N"] = args.N
    if getattr(args, "repeats", None) is not None:
        overrides["repeats"] = args.repeats
    return replace(cfg, **overrides) if overrides else cfg


def _modality(args) -> str:
    return _MODALITY_ALIASES[args.modality]


def _corpus(args, cfg: HarnessConfig):
    if getattr(args, "corpus", None):
        manifest = args.corpus
        if os.path.isdir(manifest):
            manifest = os.path.join(manifest, "manifest.txt")
        return synthgait.read_corpus(manifest)
    return harness.default_corpus(cfg)


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    corpus = harness.default_corpus(cfg)
    manifest = synthgait.write_corpus(corpus, out)
    print(f"wrote {len(corpus.walks)} walks ({len(corpus.walker_ids)} walkers) -> {manifest}")
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    ftype = _modality(args)
    corpus = _corpus(args, cfg)
    out = _out_dir(args)
    cache = harness.extract_features(corpus, cfg.T, cfg, feature_types=(ftype,))
    vectors, labels, walk_ids, segs = [], [], [], []
    for w in cache.walks:
        raw = np.log(w.raw[ftype] + feat.LOG_GUARD)
        for i, vec in enumerate(raw):
            vectors.append(vec)
            labels.append(w.walker_id)
            walk_ids.append(w.walk_id)
            segs.append(i)
    path = os.path.join(out, f"features_{ftype}_T{cfg.T}.csv")
    feat.write_features_csv(path, np.asarray(vectors), labels, walk_ids, segs)
    print(f"wrote {len(vectors)} segment vectors -> {path}")
    return 0


def _standardize_from_csv(path, stats=None):
    vectors, labels, walk_ids, segs = feat.read_features_csv(path)
    if stats is None:
        mean = vectors.mean(axis=0)
        std = np.maximum(vectors.std(axis=0), feat.STD_FLOOR)
        stats = feat.Standardizer(mean=mean, std=std)
    return (vectors - stats.mean) / stats.std, labels, walk_ids, stats


def cmd_train_ubm(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    x, _, _, stats = _standardize_from_csv(args.features)
    x = feat.dct_reduce(x, cfg.N)
    model = openset.em_fit(x, cfg.n_components, iters=cfg.em_iters,
                           seed=cfg.base_seed, tol=cfg.em_tol)
    openset.save_model(os.path.join(out, "ubm.gmm"), model)
    feat.save_stats(os.path.join(out, "stats.bin"), stats)
    print(f"UBM: K={model.n_components}, d={model.dim} -> {out}/ubm.gmm (+ stats.bin)")
    return 0


def cmd_enroll(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    ubm = openset.load_model(args.ubm)
    stats, _ = feat.load_stats(args.stats)
    x, labels, _, _ = _standardize_from_csv(args.features, stats)
    x = feat.dct_reduce(x, ubm.dim)
    for walker in sorted(set(labels)):
        rows = x[[i for i, lab in enumerate(labels) if lab == walker]]
        model = openset.map_adapt(ubm, rows, relevance=cfg.relevance)
        openset.save_model(os.path.join(out, f"walker_{walker}.gmm"), model)
        print(f"enrolled {walker} on {len(rows)} segments")
    return 0


def cmd_score(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    ubm = openset.load_model(args.ubm)
    stats, _ = feat.load_stats(args.stats)
    x, labels, walk_ids, _ = _standardize_from_csv(args.features, stats)
    x = feat.dct_reduce(x, ubm.dim)
    models = {}
    for path in args.models:
        name = os.path.basename(path)
        walker = name[len("walker_"):-len(".gmm")] if name.startswith("walker_") else name
        models[walker] = openset.load_model(path)
    rows = []
    for walk_id in sorted(set(walk_ids)):
        idx = [i for i, w in enumerate(walk_ids) if w == walk_id]
        true_id = labels[idx[0]]
        trial = x[idx]
        for claimed, model in sorted(models.items()):
            s = openset.score_llr(trial, model, ubm)
            rows.append((walk_id, claimed, true_id, s, claimed == true_id))
    path = os.path.join(out, "scores.csv")
    openset.write_scores_csv(path, rows)
    scores = openset.read_scores_csv(path)
    if scores.genuine and scores.impostor:
        print(f"EER: {openset.compute_eer(scores):.4f} over {len(rows)} trials -> {path}")
    else:
        print(f"wrote {len(rows)} trial scores -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ftype = _modality(args)
    corpus = _corpus(args, cfg)
    out = _out_dir(args)
    spec = harness.SweepSpec(T_values=(cfg.T,), N_values=(cfg.N,), feature_types=(ftype,))
    table = harness.sweep(corpus, spec, cfg.partition_spec(), cfg)
    key = (ftype, cfg.T, cfg.N)
    eers = table.cells[key]
    harness.write_results_csv(table, os.path.join(out, "results.csv"))
    print(f"{ftype} T={cfg.T} N={cfg.N}: median EER {np.median(eers):.4f} "
          f"over {len(eers)} repeats -> {out}/results.csv")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    corpus = _corpus(args, cfg)
    out = _out_dir(args)

    def progress(key, eers):
        ftype, T, n = key
        print(f"  {ftype:9s} T={T:<6} N={n:<4} median EER {np.nanmedian(eers):.4f}", flush=True)

    table = harness.sweep(corpus, cfg.sweep_spec(), cfg.partition_spec(), cfg,
                          progress=progress if args.verbose else None)
    harness.write_results_csv(table, os.path.join(out, "results.csv"))
    harness.write_table_md(table, os.path.join(out, "table.md"))
    harness.write_boxstats_csv(table, os.path.join(out, "boxstats.csv"))
    for ftype in cfg.feature_types:
        key, med = table.best_cell(ftype)
        print(f"best {ftype}: T={key[1]} N={key[2]} median EER {med:.4f}")
    print(f"wrote results.csv, table.md, boxstats.csv -> {out}")
    return 0


def _add_common(p, corpus_flag=True):
    p.add_argument("--config", help="key=value config file overriding defaults")
    p.add_argument("--seed", type=int, default=None, help="base seed")
    p.add_argument("--out", default=".", help="output directory")
    if corpus_flag:
        p.add_argument("--corpus", help="manifest file or corpus directory "
                       "(default: regenerate the seeded synthetic corpus)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitid",
        description="Gait identification from acoustic + floor-vibration signals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p, corpus_flag=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="compute per-segment feature vectors")
    _add_common(p)
    p.add_argument("--modality", choices=sorted(_MODALITY_ALIASES), default="fused")
    p.add_argument("--T", type=float, default=None, help="time-invariance scale (s)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-ubm", help="fit the universal background model")
    _add_common(p, corpus_flag=False)
    p.add_argument("--features", required=True, help="training feature CSV")
    p.add_argument("--N", type=int, default=None, help="retained DCT coefficients")
    p.set_defaults(func=cmd_train_ubm)

    p = sub.add_parser("enroll", help="MAP-adapt walker models from the UBM")
    _add_common(p, corpus_flag=False)
    p.add_argument("--features", required=True, help="enrollment feature CSV")
    p.add_argument("--ubm", required=True)
    p.add_argument("--stats", required=True, help="standardizer blob from train-ubm")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("score", help="score trials against enrolled models")
    _add_common(p, corpus_flag=False)
    p.add_argument("--features", required=True, help="test feature CSV")
    p.add_argument("--ubm", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--models", nargs="+", required=True, help="walker model blobs")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="run one (modality, T, N) cell")
    _add_common(p)
    p.add_argument("--modality", choices=sorted(_MODALITY_ALIASES), default="fused")
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="full hyperparameter grid")
    _add_common(p)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
