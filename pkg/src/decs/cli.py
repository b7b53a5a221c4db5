"""Command line entry point: ``decs {synth,pretrain,cluster,eval,gradcheck}``.

Exit codes: 0 success, 1 verification or training failure, 2 usage or I/O error.
Any flag can also come from ``--config FILE`` (``key = value`` lines, keys
spelled like the flags); the command line wins.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, data, gradients
from .autoencoder import AugmentSpec, Autoencoder, PretrainConfig, TrainingDivergedError, pretrain
from .metrics import evaluation_report
from .trainer import TrainConfig, train

logger = logging.getLogger("decs")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing

def _int_tuple(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.replace("x", ",").split(","))


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_data_args(p):
    p.add_argument("--data", help="CSV dataset (rows = samples)")
    p.add_argument("--has-labels", action="store_true",
                   help="last CSV column holds integer truth labels")
    p.add_argument("--idx-images", action="append", default=None,
                   help="IDX image file; repeat to merge splits")
    p.add_argument("--idx-labels", action="append", default=None,
                   help="IDX label file matching each --idx-images")
    p.add_argument("--image-shape", type=_int_tuple, default=None,
                   help="HxW for image augmentation of CSV data")


def _add_augment_args(p):
    p.add_argument("--augment", choices=("none", "vector", "image"), default="none")
    p.add_argument("--max-shift-px", type=int, default=2)
    p.add_argument("--max-rotate-deg", type=float, default=10.0)
    p.add_argument("--noise-sigma", type=float, default=0.01)


def build_parser():
    parser = argparse.ArgumentParser(prog="decs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"decs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file of defaults for any flag")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", parents=[common], help="write a Gaussian-blob dataset as CSV")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--per-cluster", type=int, default=500)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--center-box", type=float, nargs=2, default=(-5.0, 5.0), metavar=("LO", "HI"))
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="pretrain the autoencoder")
    _add_data_args(p)
    _add_augment_args(p)
    p.add_argument("--hidden-dims", type=_int_tuple, default=(500, 500, 2000))
    p.add_argument("--latent-dim", type=int, default=10)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("cluster", parents=[common], help="run the stability-driven clustering stage")
    _add_data_args(p)
    _add_augment_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, required=False)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.8)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--sgd-lr", type=float, default=0.01)
    p.add_argument("--sgd-momentum", type=float, default=0.9)
    p.add_argument("--label-change-tol", type=float, default=0.001)
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--include-reconstruction-in-clustering", type=_bool, nargs="?",
                   const=True, default=False)
    p.add_argument("--augment-in-clustering", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--freeze-encoder", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--kmeans-n-init", type=int, default=10)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", parents=[common], help="score predicted labels against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred-column", type=int, default=-1)
    p.add_argument("--truth-column", type=int, default=-1)
    p.add_argument("--out", help="CSV report path; a .txt twin is written alongside")

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of the analytic gradients")
    p.add_argument("--configs", type=int, default=20, help="random configurations per check")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", help="write the report here as well as to stdout")
    return parser


def read_config_file(path):
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = read_config_file(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    sub = _subparser(parser, args.command)
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = "lam" if key == "lambda" else key
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = _bool(raw)
        elif action.nargs in ("+", "*", 2) or isinstance(action, argparse._AppendAction):
            conv = action.type or str
            defaults[dest] = [conv(v) for v in raw.split()]
        else:
            defaults[dest] = (action.type or str)(raw)
    sub.set_defaults(**defaults)
    # required flags satisfied by the config file
    for action in sub._actions:
        if action.required and action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers

def load_dataset(args):
    if args.data and args.idx_images:
        raise UsageError("give either --data or --idx-images, not both")
    if args.data:
        if not os.path.isfile(args.data):
            raise UsageError(f"data file not found: {args.data}")
        ds = data.load_csv(args.data, has_label_column=args.has_labels)
        if args.image_shape:
            ds = data.Dataset(ds.features, ds.truth, tuple(args.image_shape), ds.name)
        return ds
    if args.idx_images:
        labels = args.idx_labels or [None] * len(args.idx_images)
        if len(labels) != len(args.idx_images):
            raise UsageError("--idx-labels must be given once per --idx-images")
        for path in [*args.idx_images, *[l for l in labels if l]]:
            if not os.path.isfile(path):
                raise UsageError(f"data file not found: {path}")
        parts = [data.load_idx(i, l) for i, l in zip(args.idx_images, labels)]
        return parts[0] if len(parts) == 1 else data.merge_datasets(*parts)
    raise UsageError("no input data: pass --data or --idx-images")


def augment_spec(args, ds):
    shape = None
    if ds.image_shape is not None:
        shape = tuple(ds.image_shape[:2])
    if args.augment == "image" and shape is None:
        raise UsageError("image augmentation needs IDX input or --image-shape")
    return AugmentSpec(mode=args.augment, max_shift_px=args.max_shift_px,
                       max_rotate_deg=args.max_rotate_deg, noise_sigma=args.noise_sigma,
                       seed=args.seed, image_shape=shape)


def _resolved(args):
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in ("config", "verbose"):
            continue
        if isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def _format_conf_value(value):
    if isinstance(value, (list, tuple)):
        if value and all(isinstance(v, int) for v in value):
            return ",".join(str(v) for v in value)
        return " ".join(str(v) for v in value)
    return str(value)


def write_manifest(out_dir, args, started, extra=None):
    """Write ``manifest.json`` and a replayable ``run.conf``."""
    resolved = _resolved(args)
    manifest = {
        "tool": "decs",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "config": resolved,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    skip = {"command", "idx_images", "idx_labels"}
    with open(out_dir / "run.conf", "w") as f:
        for key, value in resolved.items():
            if key in skip or value is None:
                continue
            f.write(f"{key} = {_format_conf_value(value)}\n")
        for key in ("idx_images", "idx_labels"):
            if resolved.get(key):
                f.write(f"{key} = {' '.join(resolved[key])}\n")


def _write_rows(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    spec = data.BlobSpec(k=args.k, per_cluster=args.per_cluster, dim=args.dim,
                         center_box=tuple(args.center_box), sigma=args.sigma, seed=args.seed)
    ds = data.gen_blobs(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    data.write_csv(args.out, ds.features, ds.truth)
    print(f"wrote {ds.features.shape[0]} samples x {ds.features.shape[1]} features to {args.out}")
    return EXIT_OK


def cmd_pretrain(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    ds = load_dataset(args)
    aug = augment_spec(args, ds)
    out_dir = Path(args.out_dir)
    ae = Autoencoder.build(ds.features.shape[1], tuple(args.hidden_dims), args.latent_dim, args.seed)
    cfg = PretrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                         seed=args.seed, augment=aug)
    ae, losses = pretrain(ds.features, ae, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out_dir / "checkpoint.decs", ae.to_arrays())
    _write_rows(out_dir / "pretrain_loss.csv", ["epoch", "loss"],
                [(i, float(v)) for i, v in enumerate(losses)])
    write_manifest(out_dir, args, started)
    final = f"{losses[-1]:.6f}" if losses else "n/a"
    print(f"pretrained {args.epochs} epochs, final loss {final}; checkpoint in {out_dir}")
    return EXIT_OK


def _write_embedding_csv(path, z, labels):
    data.write_csv(path, z, labels)


def cmd_cluster(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    if args.k is None:
        raise UsageError("--k is required")
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    arrays = checkpoint.load(args.checkpoint)
    ds = load_dataset(args)
    if args.k > ds.n_samples:
        raise UsageError(f"k={args.k} exceeds the number of samples ({ds.n_samples})")
    ae = Autoencoder.from_arrays(arrays)
    if ae.input_dim != ds.features.shape[1]:
        raise UsageError(f"checkpoint expects {ae.input_dim} features, data has "
                         f"{ds.features.shape[1]}")
    centroids = arrays.get("centroids")
    aug = augment_spec(args, ds)
    cfg = TrainConfig(k=args.k, alpha=args.alpha, lam=args.lam, batch_size=args.batch_size,
                      max_iter=args.max_iter, sgd_lr=args.sgd_lr, sgd_momentum=args.sgd_momentum,
                      label_change_tol=args.label_change_tol, seed=args.seed,
                      snapshot_every=args.snapshot_every,
                      include_reconstruction_in_clustering=args.include_reconstruction_in_clustering,
                      augment_in_clustering=args.augment_in_clustering,
                      freeze_encoder=args.freeze_encoder, kmeans_n_init=args.kmeans_n_init)
    out_dir = Path(args.out_dir)
    try:
        result = train(ds.features, ae, cfg, centroids=centroids, aug_spec=aug)
    except TrainingDivergedError as exc:
        out_dir.mkdir(parents=True, exist_ok=True)
        state = getattr(exc, "state", None)
        if state:
            checkpoint.save(out_dir / "diverged.decs", state)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL

    hist = result.history
    out_dir.mkdir(parents=True, exist_ok=True)
    data.write_labels(out_dir / "labels.csv", result.labels)
    if ds.truth is not None:
        data.write_labels(out_dir / "truth.csv", ds.truth)
    data.write_csv(out_dir / "centroids.csv", result.centroids)
    _write_rows(out_dir / "history.csv",
                ["iter", "L_c", "t", "grad_norm", "bound_M", "mean_stability",
                 "label_change", "bound_violations"],
                [(e.iteration, e.loss, e.t, e.grad_norm, e.bound_m, e.mean_stability,
                  e.label_change, e.bound_violations) for e in hist.epochs])
    _write_rows(out_dir / "iterations.csv", ["iter", "L_c"],
                [(i + 1, float(v)) for i, v in enumerate(hist.iter_loss)])
    if hist.snapshots:
        snap_dir = out_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for s in hist.snapshots:
            _write_embedding_csv(snap_dir / f"embeddings_{s.iteration:06d}.csv", s.embeddings, s.labels)
            data.write_csv(snap_dir / f"centroids_{s.iteration:06d}.csv", s.centroids)
    checkpoint.save(out_dir / "checkpoint.decs",
                    {**result.autoencoder.to_arrays(), "centroids": result.centroids})
    write_manifest(out_dir, args, started, {
        "iterations": hist.n_iter,
        "stopped_early": hist.stopped_early,
        "final_t": hist.final_t,
        "final_loss": hist.final_loss,
        "final_mean_stability": hist.final_mean_stability,
    })
    msg = (f"clustered {ds.n_samples} samples into {args.k} clusters in {hist.n_iter} iterations; "
           f"L_c {hist.final_loss:.4f}, mean stability {hist.final_mean_stability:.4f}")
    if ds.truth is not None:
        rep = evaluation_report(result.labels, ds.truth)
        msg += f"; ACC {rep['acc']:.4f} NMI {rep['nmi']:.4f}"
    print(msg)
    return EXIT_OK


def cmd_eval(args):
    for path in (args.pred, args.truth):
        if not os.path.isfile(path):
            raise UsageError(f"file not found: {path}")
    pred = data.read_label_column(args.pred, args.pred_column)
    truth = data.read_label_column(args.truth, args.truth_column)
    if pred.size != truth.size:
        raise UsageError(f"length mismatch: {pred.size} predictions vs {truth.size} labels")
    rep = evaluation_report(pred, truth)
    text = f"n={rep['n']} k={rep['k']} ACC={rep['acc']:.6f} NMI={rep['nmi']:.6f}"
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_rows(out, ["n", "k", "acc", "nmi"], [(rep["n"], rep["k"], rep["acc"], rep["nmi"])])
        out.with_suffix(".txt").write_text(text + "\n")
    return EXIT_OK


def run_gradcheck(seed, n_configs, tolerance):
    """Seeded sweep over the clustering chain and the autoencoder; returns (text, passed)."""
    reports = []
    rng = np.random.default_rng(seed)
    ts = (0.2, 0.5, 0.8)
    for i in range(n_configs):
        cfg_seed = int(rng.integers(2**31))
        reports.append(gradients.finite_difference_check(
            seed=cfg_seed, t=ts[i % len(ts)], tolerance=tolerance))
    for i in range(max(1, n_configs // 4)):
        cfg_seed = int(rng.integers(2**31))
        reports.append(gradients.autoencoder_gradcheck(seed=cfg_seed, tolerance=tolerance))

    lines = [f"decs gradcheck seed={seed} configs={n_configs} tolerance={tolerance:.1e}"]
    worst = None
    for rep in reports:
        lines.append(rep.to_text().rstrip("\n"))
        w = rep.worst()
        if w is not None and (worst is None or w[1] > worst[1]):
            worst = w
    passed = all(r.passed for r in reports)
    if worst is not None:
        lines.append(f"worst offender: {worst[0]} rel_err {worst[1]:.3e}")
    lines.append(f"RESULT {'PASS' if passed else 'FAIL'} "
                 f"({sum(r.passed for r in reports)}/{len(reports)} checks passed)")
    return "\n".join(lines) + "\n", passed


def cmd_gradcheck(args):
    if args.tolerance <= 0:
        raise UsageError("--tolerance must be > 0")
    text, passed = run_gradcheck(args.seed, args.configs, args.tolerance)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "cluster": cmd_cluster,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, data.DataFormatError, checkpoint.CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
