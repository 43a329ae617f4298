"""Command-line entry point: ``bilinear-decomp <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors;
failures print a single ``error: ...`` line on stderr.
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import container
from .dataset import load_idx_split, synthetic_quadrant_dataset
from .decompose import class_spectrum, decompile
from .errors import BilinearError
from .model import init_model
from .ngram import mlp_diagonal_bigrams, residual_bigrams, skip_trigram_scores
from .render import RenderSpec, render_feature
from .spectral import accuracy_sweep, fix_sign, model_similarity
from .train import TrainConfig, accuracy, train

DEFAULT_WEIGHT_DECAY = {"mnist": 0.5, "fmnist": 1.0, "synthetic": 0.5}


class UsageError(Exception):
    pass


def _synthetic_splits(meta):
    n, d, classes, seed = meta["n"], meta["d"], meta["classes"], meta["seed"]
    noise = meta.get("noise", 0.1)
    train_set = synthetic_quadrant_dataset(n, d, classes, seed, noise)
    val_set = synthetic_quadrant_dataset(n, d, classes, seed + 1, noise)
    return train_set, val_set


def _validation_set(args, model):
    data_dir = getattr(args, "data_dir", None)
    if data_dir:
        return load_idx_split(data_dir, "test")
    meta = model.meta.get("dataset", {})
    if meta.get("name") == "synthetic":
        return _synthetic_splits(meta)[1]
    raise UsageError("--data-dir is required for models not trained on the synthetic dataset")


def cmd_train(args):
    if args.dataset == "synthetic":
        meta = {"name": "synthetic", "n": args.synthetic_n, "d": args.synthetic_d,
                "classes": args.synthetic_classes, "seed": args.seed}
        train_set, val_set = _synthetic_splits(meta)
    else:
        if not args.data_dir:
            raise UsageError(f"--data-dir is required for --dataset {args.dataset}")
        meta = {"name": args.dataset}
        train_set = load_idx_split(args.data_dir, "train")
        val_set = load_idx_split(args.data_dir, "test")
    wd = DEFAULT_WEIGHT_DECAY[args.dataset] if args.weight_decay is None else args.weight_decay
    config = TrainConfig(args.epochs, args.batch, args.lr, wd, args.latent_noise, args.lr_decay, args.seed)
    model = init_model(train_set.dim, args.d_model, train_set.n_classes, args.layers, seed=args.seed)
    model.meta["dataset"] = meta
    model.meta["image_shape"] = list(train_set.shape)
    report = train(model, train_set, config, validation=val_set,
                   progress=lambda line: print(line, flush=True))
    container.save_model(args.out, report.model, config.to_dict())


def cmd_eval(args):
    model, _ = container.load_model(args.model)
    print(f"val_acc={accuracy(model, _validation_set(args, model)):.6f}")


def cmd_decompose(args):
    model, _ = container.load_model(args.model)
    if not 0 <= args.class_index < model.n_classes:
        raise UsageError(f"--class must lie in [0, {model.n_classes})")
    layer = len(model.layers) - 1 if args.layer is None else args.layer
    spectrum = class_spectrum(model, args.class_index, layer)
    if args.data_dir and spectrum.input_features is not None:
        spectrum = fix_sign(spectrum, load_idx_split(args.data_dir, "train").images)
    container.save_spectrum(args.out, spectrum, model.meta.get("image_shape"))


def _parse_ks(text):
    ks = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            ks.extend(range(int(lo), int(hi) + 1))
        elif part:
            ks.append(int(part))
    if not ks or min(ks) < 0:
        raise UsageError("--ks must list non-negative integers")
    return ks


def cmd_truncate_sweep(args):
    model, _ = container.load_model(args.model)
    rows = accuracy_sweep(model, _validation_set(args, model), _parse_ks(args.ks))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "accuracy"])
        for k, acc in rows:
            writer.writerow([k, repr(acc)])


def cmd_decompile(args):
    model, _ = container.load_model(args.model)
    if args.branch > model.d_model:
        raise UsageError(f"--branch cannot exceed d_model={model.d_model}")
    container.save_trees(args.out, decompile(model, args.branch))


def cmd_render(args):
    spectrum, shape = container.load_spectrum(args.spectrum)
    if spectrum.input_features is None:
        raise UsageError("spectrum has no input features (not a first-layer spectrum)")
    lam = spectrum.eigenvalues
    if args.sign == "pos":
        candidates = np.flatnonzero(lam > 0)
    else:
        candidates = np.flatnonzero(lam < 0)[::-1]
    if args.rank >= len(candidates):
        raise BilinearError(f"spectrum has only {len(candidates)} {args.sign} eigenvalues")
    vector = spectrum.input_features[:, candidates[args.rank]]
    height, width = shape if shape else (28, 28)
    spec = RenderSpec(args.width or width, args.height or height)
    render_feature(vector, spec, args.out)


def cmd_similarity(args):
    model_a, _ = container.load_model(args.model_a)
    model_b, _ = container.load_model(args.model_b)
    report = model_similarity(model_a, model_b)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "rank", "similarity", "match_index"])
        for c, r, sim, idx in report.rows(args.top):
            writer.writerow([c, r, repr(sim), idx])
    print(f"mean_similarity={report.mean_top(args.top):.6f}")


def cmd_ngram(args):
    tw = container.load_token_weights(args.weights)
    if args.mode == "skip-trigram":
        if args.class_index is None:
            raise UsageError("--class is required for --mode skip-trigram")
        if args.ov:
            ov = container.load_matrix(args.ov, "ov")
        elif tw.ov is not None:
            ov = tw.ov
        else:
            raise UsageError("--ov is required for --mode skip-trigram")
        table = skip_trigram_scores(tw, ov, args.class_index, args.top)
        header = ["rank", "virtual", "direct", "score"]
    else:
        if args.ov:
            raise UsageError("--ov only applies to --mode skip-trigram")
        if args.mode == "residual":
            table = residual_bigrams(tw, args.top)
        else:
            table = mlp_diagonal_bigrams(tw, args.top, combined=args.mode == "combined")
        header = ["rank", "context", "output", "score"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r, ctx, out, score in table.rows():
            writer.writerow([r, ctx, out, repr(score)])


def build_parser():
    parser = argparse.ArgumentParser(prog="bilinear-decomp", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a bilinear MLP classifier")
    p.add_argument("--dataset", choices=["mnist", "fmnist", "synthetic"], default="mnist")
    p.add_argument("--data-dir")
    p.add_argument("--d-model", type=int, default=300)
    p.add_argument("--layers", type=int, choices=[1, 2], default=1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=None,
                   help="default 0.5 (mnist, synthetic) or 1.0 (fmnist)")
    p.add_argument("--latent-noise", type=float, default=0.33)
    p.add_argument("--lr-decay", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic-n", type=int, default=400)
    p.add_argument("--synthetic-d", type=int, default=8)
    p.add_argument("--synthetic-classes", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="validation accuracy of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decompose", help="eigendecompose one class's interaction matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--layer", type=int, default=None, help="0-based layer (default: last)")
    p.add_argument("--data-dir", help="training data used to fix display signs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("truncate-sweep", help="accuracy of top-k spectral models")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--ks", default="0-20")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_truncate_sweep)

    p = sub.add_parser("decompile", help="decompile a model into eigenvector trees")
    p.add_argument("--model", required=True)
    p.add_argument("--branch", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompile)

    p = sub.add_parser("render", help="render an eigenvector's input feature as PPM")
    p.add_argument("--spectrum", required=True)
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--sign", choices=["pos", "neg"], default="pos")
    p.add_argument("--width", type=int, help="default: stored image shape, else 28")
    p.add_argument("--height", type=int, help="default: stored image shape, else 28")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("similarity", help="best-match eigenvector similarity of two models")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("ngram", help="bigram / skip-trigram tables from token weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--mode", choices=["residual", "mlp-diag", "combined", "skip-trigram"], required=True)
    p.add_argument("--ov")
    p.add_argument("--class", dest="class_index", type=int)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ngram)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with threadpool_limits(limits=max(args.threads, 1)):
            args.func(args)
    except UsageError as exc:
        parser.exit(2, f"error: {exc}\n")
    except (BilinearError, OSError, ValueError, KeyError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
