"""Command line front end.

Every verb takes ``--config FILE.json`` whose keys are the verb's option
names (dashes or underscores); explicit flags override the file. Errors are
reported on stderr as ``error[Code]: message`` with exit status 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .corpus import build_corpus, cache_path, compute_corpus_descriptors, descriptor_for, \
    labelled_pairs, read_mask, synth_corpus
from .descriptors import load_descriptor, required_modes, save_descriptor
from .errors import ConfigError, MissingFile, SpectralSiameseError
from .intrinsic_dim import estimate_intrinsic_dimension
from .laplace import load_spectrum, mesh_spectrum, save_spectrum
from .matching import build_report, classification_metrics, embed_field, export_match_obj, \
    filter_by_geodesic, match_nearest, sample_vertices
from .mesh import load_mesh
from .siamese import TrainConfig, load_model, save_model, train

log = logging.getLogger("spectral_siamese")

KIND_CHOICES = ("gps", "hks", "wks")


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"{p} not found")
    return p


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _spectrum_cached(mesh, mesh_path: Path, modes: int, use_cache: bool):
    """Eigenpairs for ``mesh``, reusing ``<stem>.lbs`` when it is fresh and large enough."""
    lbs = mesh_path.with_suffix(".lbs")
    if use_cache and lbs.exists() and lbs.stat().st_mtime >= mesh_path.stat().st_mtime:
        try:
            spec = load_spectrum(lbs)
        except SpectralSiameseError:
            spec = None
        if spec is not None and spec.n_vertices == mesh.n_vertices and spec.n_modes >= modes:
            log.info("reusing spectrum %s", lbs)
            return spec.truncated(modes)
    spec = mesh_spectrum(mesh, modes)
    if use_cache:
        save_spectrum(spec, lbs)
    return spec


def _wks_kwargs(kind: str, args) -> dict:
    if kind.upper() != "WKS":
        return {}
    return {"sigma_factor": args.sigma_factor, "normalize": not args.no_normalize}


def _field_for(mesh_path: Path, kind: str, n, k_modes, desc_path=None, use_cache=True, **kw):
    """Descriptor for a mesh: an explicit DSC1 file, else the cache next to the mesh."""
    if desc_path is not None:
        return load_descriptor(_existing(desc_path))
    mesh = load_mesh(_existing(mesh_path))
    cf = cache_path(mesh_path, kind) if use_cache else None
    return descriptor_for(mesh, kind.upper(), n, k_modes, cf, **kw)


# ---------------------------------------------------------------------------
# verbs

def cmd_spectrum(args) -> int:
    mesh_path = _existing(args.mesh)
    spec = mesh_spectrum(load_mesh(mesh_path), args.modes, method=args.method)
    out = Path(args.output) if args.output else mesh_path.with_suffix(".lbs")
    save_spectrum(spec, out)
    log.info("wrote %s (%d modes, orthonormality error %.2e)", out, spec.n_modes,
             spec.orthonormality_error())
    return 0


def cmd_descriptors(args) -> int:
    kind = args.kind.upper()
    kw = _wks_kwargs(kind, args)
    modes = required_modes(kind, args.n, args.k_modes)
    for name in args.meshes:
        mesh_path = _existing(name)
        mesh = load_mesh(mesh_path)
        spec = _spectrum_cached(mesh, mesh_path, modes, not args.no_cache)
        out = cache_path(mesh_path, kind)
        if args.out_dir:
            out = Path(args.out_dir) / out.name
            out.parent.mkdir(parents=True, exist_ok=True)
        desc = descriptor_for(mesh, kind, args.n, args.k_modes, None, spectrum=spec, **kw)
        save_descriptor(desc, out)
        log.info("wrote %s (%d x %d)", out, desc.n_vertices, desc.dim)
    return 0


def _load_corpus(args):
    manifest = Path(args.manifest)
    root = Path(args.root) if args.root else manifest.parent
    return build_corpus(root, manifest, getattr(args, "rigid_mask", None))


def cmd_intrinsic_dim(args) -> int:
    kind = args.kind.upper()
    if args.descriptors:
        fields = [load_descriptor(_existing(p)).values for p in args.descriptors]
    elif args.manifest:
        c = _load_corpus(args)
        compute_corpus_descriptors(c, kind, args.n, args.k_modes, **_wks_kwargs(kind, args))
        fields = [m.descriptors[kind].values for m in c.models]
    else:
        raise ConfigError("give --manifest or one or more --descriptors files")
    pool = np.vstack(fields)
    rng = np.random.default_rng(args.seed)
    if args.samples and args.samples < len(pool):
        pool = pool[np.sort(rng.choice(len(pool), args.samples, replace=False))]
    rep = estimate_intrinsic_dimension(pool, args.k_neighbors, args.threshold, args.trials, rng)
    if args.csv:
        rep.write_csv(args.csv)
    values, counts = np.unique(rep.dimensions, return_counts=True)
    _write_json({"summary": rep.summary, "modal": rep.modal, "k_neighbors": rep.k_neighbors,
                 "trials": rep.trials, "samples": len(pool),
                 "histogram": {str(int(v)): int(c) for v, c in zip(values, counts)},
                 "mean_residual": [float(r) for r in rep.mean_residual_curve()]}, args.report)
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(margin=args.margin, batch_size=args.batch_size, iterations=args.iterations,
                       lr0=args.lr0, lr_decay=args.lr_decay, beta1=args.beta1, beta2=args.beta2,
                       eps=args.eps, soft_label_max=args.soft_label_max,
                       hidden=tuple(args.hidden) if args.hidden else None,
                       standardize=not args.no_standardize, eval_every=args.eval_every,
                       eval_pairs=args.eval_pairs,
                       threshold_on_distance=args.threshold_on_distance, seed=args.seed)


def cmd_train(args) -> int:
    kind = args.kind.upper()
    cfg = _train_config(args)
    c = _load_corpus(args)
    compute_corpus_descriptors(c, kind, args.n, args.k_modes, **_wks_kwargs(kind, args))
    validation = None
    if args.validation:
        vpath = Path(args.validation)
        vc = build_corpus(Path(args.root) if args.root else vpath.parent, vpath)
        compute_corpus_descriptors(vc, kind, args.n, args.k_modes, **_wks_kwargs(kind, args))
        validation = labelled_pairs(vc, kind, cfg.eval_pairs, cfg.seed)
    log.info("training %s on %d models for %d iterations", kind, len(c), cfg.iterations)
    params, history = train(c, kind, cfg, validation=validation)
    save_model(params, args.output)
    if args.history:
        history.write_csv(args.history)
    if history.metrics:
        log.info("held-out ERR %.4f -> %.4f", history.metrics[0]["ERR"], history.metrics[-1]["ERR"])
    return 0


def cmd_embed(args) -> int:
    params = load_model(_existing(args.model))
    for name in args.descriptors:
        path = _existing(name)
        emb = embed_field(params, load_descriptor(path))
        stem = path.name.split(".")[0]
        out_dir = Path(args.out_dir) if args.out_dir else path.parent
        out_dir.mkdir(parents=True, exist_ok=True)
        save_descriptor(emb, out_dir / f"{stem}.embedded.dsc")
    return 0


def cmd_match(args) -> int:
    if args.raw == bool(args.model):
        raise ConfigError("give exactly one of --model or --raw")
    src_path, tgt_path = _existing(args.source), _existing(args.target)
    src_mesh, tgt_mesh = load_mesh(src_path), load_mesh(tgt_path)
    params = None if args.raw else load_model(_existing(args.model))
    kind = args.kind.upper() if args.raw else params.kind
    kw = _wks_kwargs(kind, args)
    f = _field_for(src_path, kind, args.n, args.k_modes, args.source_desc, not args.no_cache, **kw)
    g = _field_for(tgt_path, kind, args.n, args.k_modes, args.target_desc, not args.no_cache, **kw)
    if params is not None:
        f, g = embed_field(params, f), embed_field(params, g)
    gt = np.loadtxt(_existing(args.ground_truth), dtype=np.int64, ndmin=1) if args.ground_truth else None
    if args.sample_fraction:
        mask = read_mask(_existing(args.rigid_mask), src_mesh.n_vertices) if args.rigid_mask else None
        src = sample_vertices(src_mesh.n_vertices, args.sample_fraction, mask, args.seed)
    else:
        src = None
    m = match_nearest(f, g, args.threshold, args.threshold_on_distance, sources=src)
    keep = filter_by_geodesic(m, tgt_mesh, gt, args.tolerance)
    report = build_report(m, keep)
    if args.report:
        report.to_json(args.report)
    if args.export_vis:
        export_match_obj(src_mesh, tgt_mesh, report.correct, args.export_vis)
    print(json.dumps({**report.counts, "matching_accuracy": report.matching_accuracy}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    if args.raw == bool(args.model):
        raise ConfigError("give exactly one of --model or --raw")
    params = None if args.raw else load_model(_existing(args.model))
    kind = args.kind.upper() if args.raw else params.kind
    c = _load_corpus(args)
    compute_corpus_descriptors(c, kind, args.n, args.k_modes, **_wks_kwargs(kind, args))
    pairs = labelled_pairs(c, kind, args.pairs, args.seed)
    metrics = classification_metrics(params, pairs, args.margin, args.threshold_on_distance)
    row = {"pairs": len(pairs), **metrics}
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(row))
            w.writerow([repr(v) for v in row.values()])
    print(json.dumps(row, sort_keys=True))
    return 0


def cmd_synth_corpus(args) -> int:
    records = synth_corpus(args.out_dir, args.subjects, args.poses, args.seed, args.strong_subjects,
                           args.subdivisions, args.log_range, args.strong_extent)
    log.info("wrote %d meshes to %s", len(records), args.out_dir)
    return 0


# ---------------------------------------------------------------------------
# parser

def _descriptor_opts(p, kind_required=True):
    if kind_required:
        p.add_argument("--kind", choices=KIND_CHOICES, type=str.lower, default="hks")
    p.add_argument("--n", type=int, default=None, help="descriptor dimension (25 GPS, 100 HKS/WKS)")
    p.add_argument("--k-modes", type=int, default=300, help="eigenpairs used by HKS/WKS")
    p.add_argument("--sigma-factor", type=float, default=7.0, help="WKS width in energy spacings")
    p.add_argument("--no-normalize", action="store_true", help="literal unnormalized WKS bands")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults; flags win")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="spectral-siamese",
                                     description="Spectral descriptors and Siamese embeddings "
                                                 "for non-rigid shape matching.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    parser.verbs = sub.choices

    p = sub.add_parser("spectrum", parents=[common], help="Laplace-Beltrami eigenpairs to LBS1")
    p.add_argument("mesh")
    p.add_argument("--modes", type=int, default=300)
    p.add_argument("--method", choices=("auto", "dense", "sparse"), default="auto")
    p.add_argument("-o", "--output", help="output file (default <mesh>.lbs)")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("descriptors", parents=[common], help="GPS/HKS/WKS fields to DSC1")
    p.add_argument("meshes", nargs="+")
    _descriptor_opts(p)
    p.add_argument("--out-dir", help="write <stem>.<kind>.dsc here instead of next to the mesh")
    p.add_argument("--no-cache", action="store_true", help="do not read or write <stem>.lbs")
    p.set_defaults(func=cmd_descriptors)

    p = sub.add_parser("intrinsic-dim", parents=[common], help="local-PCA dimension analysis")
    p.add_argument("--manifest")
    p.add_argument("--root")
    p.add_argument("--descriptors", nargs="+", help="DSC1 files to pool instead of a manifest")
    _descriptor_opts(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--k-neighbors", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--csv", help="residual-variance curves (trial, component, residual)")
    p.add_argument("--report", help="JSON summary (default stdout)")
    p.set_defaults(func=cmd_intrinsic_dim)

    d = TrainConfig()
    p = sub.add_parser("train", parents=[common], help="train a Siamese branch")
    p.add_argument("manifest")
    p.add_argument("--root")
    _descriptor_opts(p)
    p.add_argument("-o", "--output", default="model.smn")
    p.add_argument("--history", help="CSV of loss and held-out metrics")
    p.add_argument("--validation", help="manifest of held-out models for periodic metrics")
    p.add_argument("--margin", type=float, default=d.margin)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--lr0", type=float, default=d.lr0)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay)
    p.add_argument("--beta1", type=float, default=d.beta1)
    p.add_argument("--beta2", type=float, default=d.beta2)
    p.add_argument("--eps", type=float, default=d.eps)
    p.add_argument("--soft-label-max", type=float, default=d.soft_label_max)
    p.add_argument("--hidden", type=int, nargs=2, metavar=("H1", "H2"))
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--eval-every", type=int, default=d.eval_every)
    p.add_argument("--eval-pairs", type=int, default=d.eval_pairs)
    p.add_argument("--threshold-on-distance", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", parents=[common], help="embed DSC1 fields with a trained model")
    p.add_argument("model")
    p.add_argument("descriptors", nargs="+")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("match", parents=[common], help="nearest-neighbour matching of two meshes")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--model")
    p.add_argument("--raw", action="store_true", help="match raw descriptors (no embedding)")
    _descriptor_opts(p)
    p.add_argument("--source-desc")
    p.add_argument("--target-desc")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--ground-truth", help="text file: true target vertex per source vertex")
    p.add_argument("--threshold", type=float, default=2.5)
    p.add_argument("--threshold-on-distance", action="store_true")
    p.add_argument("--tolerance", type=float, default=0.05, help="fraction of shape diameter")
    p.add_argument("--sample-fraction", type=float, default=None,
                   help="match only this fraction of source vertices (accuracy mode)")
    p.add_argument("--rigid-mask")
    p.add_argument("--report", help="JSON match report")
    p.add_argument("--export-vis", help="OBJ with line elements for the correct matches")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", parents=[common], help="LSS/TNR/FPR/ERR on sampled labelled pairs")
    p.add_argument("manifest")
    p.add_argument("--root")
    p.add_argument("--model")
    p.add_argument("--raw", action="store_true")
    _descriptor_opts(p)
    p.add_argument("--pairs", type=int, default=2048)
    p.add_argument("--margin", type=float, default=5.0)
    p.add_argument("--threshold-on-distance", action="store_true")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth-corpus", parents=[common], help="write a synthetic registered corpus")
    p.add_argument("out_dir")
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--poses", type=int, default=5)
    p.add_argument("--strong-subjects", type=int, default=0)
    p.add_argument("--subdivisions", type=int, default=4)
    p.add_argument("--log-range", type=float, default=0.4)
    p.add_argument("--strong-extent", type=float, default=0.6)
    p.set_defaults(func=cmd_synth_corpus)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv``; when ``--config`` is given, its keys become defaults."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(_existing(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{args.config}: expected a JSON object")
    sub = parser.verbs[args.command]
    known = {a.dest for a in sub._actions} - {"help", "config"}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) for '{args.command}': {', '.join(unknown)}")
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(message)s", stream=sys.stderr)
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except SpectralSiameseError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        code = "MissingFile" if isinstance(exc, FileNotFoundError) else type(exc).__name__
        print(f"error[{code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
