"""Command-line interface.

Every subcommand writes into a run directory holding its artifacts and a
``manifest.json`` (parameters, seeds, artifact hashes). The directory is
``--out-dir`` if given, otherwise ``$INFOLEAK_OUTPUT_DIR/<subcommand>``
(``runs/<subcommand>`` when the variable is unset). Randomness derives
from ``crc32(subcommand) XOR --seed``.

Exit codes: 0 success, 1 a verified property failed, 2 usage error,
3 numeric failure, 4 I/O or data error, 5 shape mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import warnings
import zlib
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import (
    DataFormatError,
    InvalidParameterError,
    NumericalError,
    ShapeMismatchError,
    TrainingError,
)

log = logging.getLogger("infoleak")

EXIT_OK, EXIT_PROPERTY, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO, EXIT_SHAPE = 0, 1, 2, 3, 4, 5
OUTPUT_ENV = "INFOLEAK_OUTPUT_DIR"
LOCK_NAME = ".infoleak.lock"


class UsageError(Exception):
    """Flag values that parse but are out of range."""


def derive_seed(subcommand: str, seed: int) -> int:
    return (zlib.crc32(subcommand.encode("utf-8")) ^ int(seed)) & 0xFFFFFFFF


# -- argument helpers ----------------------------------------------------------

def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _eps(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"eps must be a number or inf, got {text!r}") from None
    if math.isnan(v) or v < 0:
        raise argparse.ArgumentTypeError("eps must be >= 0")
    return v


def _require(cond: bool, message: str):
    if not cond:
        raise UsageError(message)


# -- run directory ---------------------------------------------------------------

class Run:
    """Run directory with a lock and an artifact list for the manifest."""

    def __init__(self, path: str, subcommand: str, args: argparse.Namespace, argv: Sequence[str]):
        self.path = path
        self.subcommand = subcommand
        self.args = args
        self.argv = _strip_out_dir(argv)
        self.seed = derive_seed(subcommand, args.seed)
        self.artifacts = []

    def file(self, name: str) -> str:
        self.artifacts.append(name)
        return os.path.join(self.path, name)

    def write_text(self, name: str, text: str) -> str:
        path = self.file(name)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        return path

    def write_manifest(self) -> None:
        with open(os.path.join(self.path, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(self.manifest(), f, indent=1, sort_keys=True)
            f.write("\n")

    def manifest(self) -> dict:
        hashes = {}
        for name in sorted(set(self.artifacts)):
            full = os.path.join(self.path, name)
            if os.path.isdir(full):
                for root, _, files in os.walk(full):
                    for fn in sorted(files):
                        p = os.path.join(root, fn)
                        hashes[os.path.relpath(p, self.path)] = _sha256(p)
            elif os.path.exists(full):
                hashes[name] = _sha256(full)
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "out_dir", "verbose")}
        return {
            "tool": "infoleak",
            "version": __version__,
            "subcommand": self.subcommand,
            "argv": self.argv,
            "params": _jsonable(params),
            "seed": self.args.seed,
            "derived_seed": self.seed,
            "artifacts": hashes,
        }


def _strip_out_dir(argv):
    argv = list(argv)
    for k, a in enumerate(argv):
        if a == "--out-dir":
            return argv[:k] + argv[k + 2:]
        if a.startswith("--out-dir="):
            return argv[:k] + argv[k + 1:]
    return argv


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


@contextmanager
def _run_dir(subcommand: str, args, argv):
    path = args.out_dir or os.path.join(os.environ.get(OUTPUT_ENV) or "runs", subcommand)
    os.makedirs(path, exist_ok=True)
    lock = os.path.join(path, LOCK_NAME)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataFormatError(f"{path} is locked by another run (remove {LOCK_NAME} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    run = Run(path, subcommand, args, argv)
    try:
        yield run
    finally:
        os.remove(lock)


# -- subcommands -------------------------------------------------------------------

def cmd_gen_synthetic(args, run: Run) -> int:
    from .divergence import GaussianFeatureModel
    from .pipelines.tabular import write_csv_dataset

    try:
        model = GaussianFeatureModel(args.d, args.rho)
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from None
    _require(args.n >= 2, "--n must be >= 2")
    s, x = model.sample(args.n, np.random.default_rng(run.seed))
    write_csv_dataset(run.file("data.csv"), s, x)
    print(f"wrote {args.n} rows (d={args.d}, rho={args.rho}) to {os.path.join(run.path, 'data.csv')}")
    print(f"true mutual information {model.mutual_information:.6f} nats")
    return EXIT_OK


def _train_config(args, seed, base=None):
    from .estimators import TrainConfig

    fields = dict(base.__dict__) if base is not None else {}
    fields.update(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=seed,
                  weight_decay=args.weight_decay)
    try:
        return TrainConfig(**fields)
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from None


def cmd_bench_synthetic(args, run: Run) -> int:
    from .pipelines.synthetic import ESTIMATORS, SyntheticSpec, synthetic_bench

    ests = [e.strip() for e in args.estimators.split(",") if e.strip()]
    _require(ests and all(e in ESTIMATORS for e in ests), f"--estimators must be drawn from {ESTIMATORS}")
    _require(args.bins >= 2, "--bins must be >= 2")
    try:
        specs = [SyntheticSpec(d, rho, args.n, args.train_fraction, args.M, args.repeats, run.seed)
                 for d in args.d for rho in args.rho]
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from None
    result = synthetic_bench(specs, ests, hidden=args.hidden, train_config=_train_config(args, run.seed),
                             bins=args.bins)
    run.write_text("wmae.csv", result.to_csv())
    run.write_text("summary.csv", result.summary_csv())
    print(f"mean WMAE over {args.repeats} repeats (M={args.M}, n={args.n})")
    print(result.format_table(), end="")
    return EXIT_OK


def cmd_train(args, run: Run) -> int:
    from .estimators import final_objective, tide_train
    from .pipelines.tabular import load_csv_dataset

    cols = args.attribute_columns.split(",") if args.attribute_columns else None
    s, x, names = load_csv_dataset(args.data, cols)
    nf = args.n_features or (x.shape[1] if args.prefix else 1)
    if x.shape[1] % nf:
        raise ShapeMismatchError(f"{x.shape[1]} feature columns do not split into {nf} features")
    model = tide_train(s, x, args.hidden, args.M, _train_config(args, run.seed), n_features=nf,
                       prefix=args.prefix, standardize=args.standardize)
    model.metadata.update({"feature_columns": names, "source": os.path.basename(args.data), "seed": run.seed})
    run.write_text("model.json", model.to_json())
    obj = final_objective(model, s, x, seed=run.seed)
    print(f"final DV objective {obj:.6f} nats ({obj / math.log(2):.6f} bits) on {len(x)} rows")
    return EXIT_OK


def cmd_calibrate(args, run: Run) -> int:
    from .mechanism import calibrate_lambda, leakage_bound

    _require(math.isfinite(args.eps), "--eps must be finite for calibration")
    _require(args.m >= 1 and args.K > 0 and args.delta > 0, "need --m >= 1, --K > 0 and --delta > 0")
    if args.delta / args.m >= 1:
        print(f"warning: delta/m = {args.delta / args.m:g} >= 1 makes the guarantee vacuous; "
              "any lambda > 0 satisfies it", file=sys.stderr)
        return EXIT_USAGE
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lam = calibrate_lambda(args.eps, args.delta, args.m, args.K)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    cert = leakage_bound(args.eps, lam, args.K, args.m)
    run.write_text("certificate.json", cert.to_json() + "\n")
    print(f"lambda = {lam:.9g}")
    print(cert.format_block())
    return EXIT_OK


def cmd_gen_faces(args, run: Run) -> int:
    from .pipelines.images import save_image_dir, synthetic_face_gen

    _require(args.n >= 100, "--n must be >= 100")
    images, labels = synthetic_face_gen(args.n, run.seed)
    run.artifacts.append("faces")
    save_image_dir(os.path.join(run.path, "faces"), images, labels)
    print(f"wrote {args.n} faces ({int(labels.sum())} with s=1) to {os.path.join(run.path, 'faces')}")
    return EXIT_OK


def cmd_train_images(args, run: Run) -> int:
    from .pipelines.images import IMAGE_TRAIN, PatchSpec, load_image_dir, train_image_tide

    images, labels = load_image_dir(args.images)
    spec = PatchSpec(args.patch)
    try:
        spec.grid(*images.shape[1:3])
    except InvalidParameterError as exc:
        raise ShapeMismatchError(str(exc)) from None
    cfg = _train_config(args, run.seed, IMAGE_TRAIN)
    model = train_image_tide(images, labels, spec, args.M, args.hidden, cfg)
    run.write_text("model.json", model.to_json())
    print(f"trained on {len(images)} images, {model.n_features} patches of {model.feature_dim} pixels")
    print(f"empirical patch radius K = {model.metadata['K_empirical']:.4f}")
    return EXIT_OK


def _load_model(path):
    from .estimators import TideModel

    try:
        with open(path, encoding="utf-8") as f:
            return TideModel.from_json(f.read())
    except (OSError, ValueError, KeyError) as exc:
        raise DataFormatError(f"cannot load model {path}: {exc}") from exc


def cmd_obfuscate_image(args, run: Run) -> int:
    from .mechanism import MechanismConfig, calibrate_lambda, leakage_bound
    from .pipelines.images import PatchSpec, RasterImage, obfuscate_image, read_pnm, write_pnm

    model = _load_model(args.model)
    img = read_pnm(args.image)
    p = args.patch or model.metadata.get("patch_size")
    _require(p is not None, "--patch is required when the model does not record a patch size")
    spec = PatchSpec(int(p))
    try:
        spec.grid(img.height, img.width)
    except InvalidParameterError as exc:
        raise ShapeMismatchError(str(exc)) from None
    if args.K == "empirical":
        K = float(model.metadata.get("K_empirical", math.sqrt(model.feature_dim)))
    elif args.K == "unit":
        K = 1.0
    else:
        K = float(args.K)
    m = model.n_features
    if math.isfinite(args.eps) and args.eps >= 2 * model.M:
        print(f"warning: eps >= 2M = {2 * model.M:g}; no estimate can exceed it, nothing will be flagged",
              file=sys.stderr)
    if args.lam is not None:
        lam = args.lam
    elif math.isfinite(args.eps):
        lam = calibrate_lambda(args.eps, args.delta, m, K)
    else:
        lam = 1.0
    cfg = MechanismConfig(args.eps, args.delta, m, K, lam, model.M, args.clamp)
    raw, display, heat, report = obfuscate_image(img, model, cfg, spec, run.seed,
                                                 model.metadata.get("s_alphabet", [0, 1]))
    write_pnm(run.file("obfuscated.pgm" if img.channels == 1 else "obfuscated.ppm"), display)
    np.save(run.file("obfuscated_raw.npy"), raw)
    write_pnm(run.file("heatmap.pgm"), heat)
    run.write_text("report.json", report.to_json() + "\n")
    cert = leakage_bound(args.eps, lam, K, m)
    cert.notes = {"K (unit convention)": 1.0,
                  "K (empirical)": float(model.metadata.get("K_empirical", float("nan")))}
    run.write_text("certificate.json", cert.to_json() + "\n")
    print(f"flagged patches: {report.leaking if report.leaking else 'none'}")
    print(cert.format_block())
    return EXIT_OK


def cmd_gen_corpus(args, run: Run) -> int:
    from .pipelines.text import planted_corpus, write_labeled_text

    _require(args.n >= 10, "--n must be >= 10")
    labels, docs = planted_corpus(args.n, run.seed, plant=args.plant)
    write_labeled_text(run.file("corpus.txt"), labels, docs)
    print(f"wrote {args.n} documents with planted term {args.plant!r}")
    return EXIT_OK


def cmd_score_terms(args, run: Run) -> int:
    from .pipelines.text import TEXT_TRAIN, read_labeled_text, score_terms, term_scores_csv, tokenize_bow, \
        train_text_tide

    labels, docs = read_labeled_text(args.corpus)
    _require(args.vocab_size >= 1, "--vocab-size must be >= 1")
    _require(0 < args.train_fraction < 1, "--train-fraction must lie in (0, 1)")
    corpus = tokenize_bow(docs, args.vocab_size, labels)
    n_train = int(round(len(docs) * args.train_fraction))
    held_out = np.arange(n_train, len(docs))
    if args.model:
        model = _load_model(args.model)
    else:
        cfg = _train_config(args, run.seed, TEXT_TRAIN)
        model = train_text_tide(corpus, args.M, args.hidden, cfg, rows=np.arange(n_train))
        run.write_text("model.json", model.to_json())
    scores = score_terms(model, corpus, rows=held_out)
    run.write_text("term_scores.csv", term_scores_csv(scores))
    print("rank\tterm\tscore\ts*")
    for r, t in enumerate(scores[:args.top], start=1):
        print(f"{r}\t{t.term}\t{t.score:.4f}\t{t.s_star}")
    return EXIT_OK


def cmd_verify(args, run: Run) -> int:
    from .verification import run_suites

    results = run_suites(args.suite, run.seed)
    lines = [r.line() for r in results]
    run.write_text("verify.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties hold")
    return EXIT_PROPERTY if failed else EXIT_OK


# -- parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out-dir", default=None, help=f"run directory (default ${OUTPUT_ENV}/<subcommand>)")


def _training(p: argparse.ArgumentParser, hidden, d):
    p.add_argument("--hidden", type=_int_list, default=list(hidden), help="hidden widths, e.g. 64,64")
    p.add_argument("--M", type=float, default=5.0, help="trim bound")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)


def build_parser() -> argparse.ArgumentParser:
    from .pipelines.synthetic import DEFAULT_HIDDEN, DEFAULT_TRAIN
    from .pipelines.images import IMAGE_HIDDEN, IMAGE_TRAIN
    from .pipelines.text import PLANTED_TERM, TEXT_HIDDEN, TEXT_TRAIN

    parser = argparse.ArgumentParser(prog="infoleak", description="Information leakage detection and obfuscation.")
    parser.add_argument("--version", action="version", version=f"infoleak {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-synthetic", help="dump correlated Gaussian pairs to CSV")
    _common(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--n", type=int, default=3000)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("bench-synthetic", help="WMAE of TIDE, KDE and plug-in on Gaussian data")
    _common(p)
    p.add_argument("--d", type=_int_list, required=True, help="dimension(s), comma-separated")
    p.add_argument("--rho", type=_float_list, default=[0.0, 0.1, 0.2, 0.5], help="correlation(s)")
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--estimators", default="tide,kde,plugin")
    p.add_argument("--bins", type=int, default=30)
    _training(p, DEFAULT_HIDDEN, DEFAULT_TRAIN)
    p.set_defaults(func=cmd_bench_synthetic)

    p = sub.add_parser("train", help="train a TIDE on a CSV dataset")
    _common(p)
    p.add_argument("--data", required=True, help="CSV with attribute columns s/s0../label and features")
    p.add_argument("--attribute-columns", default=None, help="comma-separated attribute column names")
    p.add_argument("--prefix", action="store_true", help="train with prefix masking")
    p.add_argument("--n-features", type=int, default=None, help="feature count m for prefix masking")
    p.add_argument("--standardize", action="store_true", help="z-score input columns")
    _training(p, DEFAULT_HIDDEN, DEFAULT_TRAIN)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="smallest noise scale meeting the per-feature bound")
    _common(p)
    p.add_argument("--eps", type=_eps, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--K", type=float, required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gen-faces", help="write synthetic faces with a planted attribute")
    _common(p)
    p.add_argument("--n", type=int, default=1500)
    p.set_defaults(func=cmd_gen_faces)

    p = sub.add_parser("train-images", help="train a patch-prefix TIDE on a face directory")
    _common(p)
    p.add_argument("--images", required=True, help="directory with labels.csv and PGM files")
    p.add_argument("--patch", type=int, default=16)
    _training(p, IMAGE_HIDDEN, IMAGE_TRAIN)
    p.set_defaults(func=cmd_train_images)

    p = sub.add_parser("obfuscate-image", help="flag leaking patches and add calibrated noise")
    _common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--eps", type=_eps, required=True, help="threshold; inf disables obfuscation")
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, default=None, help="override calibrated lambda")
    p.add_argument("--K", default="empirical",
                   help="empirical (largest training patch norm), unit (=1) or a number")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--clamp", action="store_true", help="clamp noised pixels to [0, 1]")
    p.set_defaults(func=cmd_obfuscate_image)

    p = sub.add_parser("gen-corpus", help="write a labelled corpus with one planted term")
    _common(p)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--plant", default=PLANTED_TERM)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("score-terms", help="rank vocabulary terms by conditional information density")
    _common(p)
    p.add_argument("--corpus", required=True, help="UTF-8 file, one 'label<TAB>text' per line")
    p.add_argument("--model", default=None, help="pre-trained model; trained here when omitted")
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--top", type=int, default=10)
    _training(p, TEXT_HIDDEN, TEXT_TRAIN)
    p.set_defaults(func=cmd_score_terms)

    from .verification import SUITES

    p = sub.add_parser("verify", help="run randomized property suites")
    _common(p)
    p.add_argument("--suite", nargs="+", choices=[*SUITES, "all"], default=["all"])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=None)
    return parser


def _validate_common(args):
    for name in ("n", "repeats", "epochs", "batch_size"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    for name in ("lr", "M"):
        v = getattr(args, name, None)
        if v is not None and not v > 0:
            raise UsageError(f"--{name} must be positive")
    if getattr(args, "weight_decay", 0) < 0:
        raise UsageError("--weight-decay must be >= 0")
    if getattr(args, "hidden", None) is not None and (not args.hidden or min(args.hidden) < 1):
        raise UsageError("--hidden needs positive widths")


def _replay(args, parser) -> int:
    try:
        with open(args.manifest, encoding="utf-8") as f:
            manifest = json.load(f)
        argv = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    argv = _strip_out_dir(argv)
    if args.out_dir:
        argv += ["--out-dir", args.out_dir]
    return main(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.subcommand == "replay":
        return _replay(args, parser)
    try:
        _validate_common(args)
        with _run_dir(args.subcommand, args, argv) as run:
            code = args.func(args, run)
            if code in (EXIT_OK, EXIT_PROPERTY):
                run.write_manifest()
            return code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NumericalError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ShapeMismatchError as exc:
        print(f"shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (DataFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
