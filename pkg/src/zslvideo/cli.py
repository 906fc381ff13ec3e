"""Command-line entry point: ``zslvideo <command> [options]``.

Exit codes: 0 success, 2 data or validation error, 64 usage error.

Options may also come from a ``--config`` file with one section per command
(``[train]``, ``[eval]``, ...) and ``key = value`` lines; a ``[run]`` section
may set ``seed``. Command-line flags override file values, which override
the built-in defaults.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .curation import DEFAULT_TAU, ClassSet, filter_training_classes, nearest_test_class_report, read_class_list, union
from .encoder import TrainConfig, load_checkpoint, save_checkpoint, train
from .evaluate import (EvalReport, confusion_matrix, dumps, evaluate_full, evaluate_protocol1, format_table,
                       generalization_curve, render_report)
from .experiments import diversity_experiment, subsample_experiment
from .features import load_feature_store
from .kenburns import build_pretraining_dataset, dump_clips, write_manifest
from .seeds import derive_seed
from .wordvec import ClassName, OutOfVocabularyError, embed_class, load_substitutions, load_word_vectors, resolve_tokens

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 2, 64

log = logging.getLogger("zslvideo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).replace(" ", "").split(",") if x)


# option name -> (type, default)
TRAIN_OPTS = {
    "epochs": (int, 150), "batch_size": (int, 22), "base_lr": (float, 1e-3),
    "lr_decay_epochs": (_int_list, (60, 120)), "lr_decay_factor": (float, 10.0),
    "beta1": (float, 0.9), "beta2": (float, 0.999), "epsilon": (float, 1e-8),
    "use_bias": (_as_bool, False), "seed": (int, None),
}
EVAL_OPTS = {"protocol": (int, 2), "t_eval": (int, 25), "repeats": (int, 10), "k_nn": (int, 10)}
FILTER_OPTS = {"tau": (float, DEFAULT_TAU), "top": (int, 20)}
KB_OPTS = {"clips": (int, 1), "min_scale": (float, 0.5), "max_scale": (float, 1.0)}
EXP_OPTS = {"variant": (str, None), "fraction": (float, None), "n_classes": (int, None),
            "k_clusters": (int, 1), "n_select": (int, 50), "repeats": (int, 10), "t_eval": (int, 25),
            "restarts": (int, 8)}


def _load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            cfg.read_file(fh)
    return cfg


def _resolve(args, cfg: configparser.ConfigParser, section: str, opts: dict) -> dict:
    out = {}
    file_vals = {k.replace("-", "_"): v for k, v in cfg.items(section)} if cfg.has_section(section) else {}
    unknown = set(file_vals) - set(opts) - set(cfg.defaults())
    if unknown:
        raise UsageError(f"unknown option(s) in [{section}]: {', '.join(sorted(unknown))}")
    for name, (conv, default) in opts.items():
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            out[name] = conv(cli_val)
        elif name in file_vals:
            out[name] = conv(file_vals[name])
        else:
            out[name] = default
    return out


def _master_seed(args, cfg) -> int:
    if args.seed is not None:
        return int(args.seed)
    if cfg.has_option("run", "seed"):
        return int(cfg.get("run", "seed"))
    return 0


def _train_config(args, cfg, master: int) -> TrainConfig:
    opts = _resolve(args, cfg, "train", TRAIN_OPTS)
    if opts["seed"] is None:
        opts["seed"] = derive_seed(master, "train")
    return TrainConfig(**opts)


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def read_embedding_file(path) -> dict[str, np.ndarray]:
    """Parse ``<class>\\t<floats>`` lines as written by ``embed``."""
    out: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            name, sep, rest = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected '<class>\\t<values>'")
            vec = np.array([float(x) for x in rest.split()])
            if dim is None:
                dim = len(vec)
            if len(vec) != dim or dim == 0:
                raise ValueError(f"{path}:{lineno}: expected {dim} values")
            if name in out:
                raise ValueError(f"{path}:{lineno}: duplicate class {name!r}")
            out[name] = vec
    if not out:
        raise ValueError(f"{path}: no embeddings")
    return out


def format_embeddings(names, vectors) -> str:
    return "".join(f"{n}\t{' '.join(repr(float(x)) for x in v)}\n" for n, v in zip(names, vectors))


def _embed_names(names, table, subs, reduce="mean"):
    """Embed every name; collect all OOV tokens before failing."""
    missing: set[str] = set()
    vecs = []
    for n in names:
        tokens = resolve_tokens(ClassName(n), subs)
        bad = [t for t in tokens if t not in table]
        if bad:
            missing.update(bad)
            continue
        vecs.append(embed_class(ClassName(n), table, subs, reduce=reduce))
    if missing:
        raise OutOfVocabularyError(missing)
    return vecs


def _vocab_for(names_lists, subs):
    vocab = set()
    for names in names_lists:
        for n in names:
            vocab.update(resolve_tokens(ClassName(n), subs))
    return vocab


def cmd_embed(args, cfg) -> int:
    names = read_class_list(args.classes)
    subs = load_substitutions(args.subs) if args.subs else {}
    table = load_word_vectors(args.vectors, restrict_vocab=_vocab_for([names], subs))
    vecs = _embed_names(names, table, subs, args.reduce)
    _write(args.out, format_embeddings(names, vecs))
    return EXIT_OK


def cmd_filter(args, cfg) -> int:
    opts = _resolve(args, cfg, "filter", FILTER_OPTS)
    subs = load_substitutions(args.subs) if args.subs else {}
    train_names = read_class_list(args.train)
    test_lists = [read_class_list(p) for p in args.test]
    table = load_word_vectors(args.vectors, restrict_vocab=_vocab_for([train_names, *test_lists], subs))
    missing = {t for t in _vocab_for([train_names, *test_lists], subs) if t not in table}
    if missing:
        raise OutOfVocabularyError(missing)
    train_set = ClassSet(Path(args.train).stem, train_names, np.vstack(_embed_names(train_names, table, subs)))
    tests = [ClassSet(Path(p).stem, names, np.vstack(_embed_names(names, table, subs)))
             for p, names in zip(args.test, test_lists)]
    test_union = union(*tests, name="+".join(t.name for t in tests))
    result = filter_training_classes(train_set, test_union, opts["tau"])
    report = result.to_dict()
    report["nearest_report"] = [
        {"train_class": r.train_class, "nearest_test_class": r.nearest_test_class, "distance": r.distance}
        for r in nearest_test_class_report(train_set, test_union, opts["top"])
    ]
    report["config"] = {"train": str(args.train), "test": [str(p) for p in args.test], "vectors": str(args.vectors),
                        "subs": args.subs and str(args.subs), **opts}
    if args.kept:
        _write(args.kept, "".join(c + "\n" for c in result.kept.classes))
    if args.out:
        _write(args.out, dumps(report))
    sys.stdout.write(f"kept {len(result.kept)} of {len(train_set)} classes (tau={opts['tau']})\n")
    sys.stdout.write(format_table(["train class", "nearest test class", "distance"],
                                  [[r["train_class"], r["nearest_test_class"], r["distance"]]
                                   for r in report["nearest_report"]]))
    return EXIT_OK


def _load_dataset(features, labels, embeddings, use_embedding_order: bool):
    emb = read_embedding_file(embeddings)
    ds = load_feature_store(features, labels, classes=list(emb) if use_embedding_order else None)
    try:
        return ds.with_embeddings(emb)
    except KeyError as exc:
        raise ValueError(exc.args[0]) from None


def cmd_train(args, cfg) -> int:
    master = _master_seed(args, cfg)
    config = _train_config(args, cfg, master)
    ds = _load_dataset(args.features, args.labels, args.embeddings, use_embedding_order=False)
    enc, history = train(ds, None, config)
    save_checkpoint(args.out, enc, config)
    if args.history:
        doc = history.to_dict()
        doc["config"] = {**config.to_dict(), "master_seed": master, "features": str(args.features),
                         "labels": str(args.labels), "embeddings": str(args.embeddings)}
        _write(args.history, dumps(doc))
    sys.stdout.write(f"trained {enc.d_in}x{enc.d_out} encoder for {config.epochs} epochs, "
                     f"final loss {history.loss[-1]:.6g}\n")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    opts = _resolve(args, cfg, "eval", EVAL_OPTS)
    master = _master_seed(args, cfg)
    if opts["protocol"] not in (1, 2):
        raise UsageError("--protocol must be 1 or 2")
    enc, _ = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.features, args.labels, args.embeddings, use_embedding_order=True)
    if ds.feature_dim != enc.d_in or ds.require_embeddings().shape[1] != enc.d_out:
        raise ValueError(f"checkpoint is {enc.d_in}x{enc.d_out}, data is "
                         f"{ds.feature_dim}x{ds.require_embeddings().shape[1]}")
    if opts["protocol"] == 1:
        p1_seed = derive_seed(master, "eval", "protocol1")
        report = evaluate_protocol1(ds, enc, opts["t_eval"], opts["repeats"], p1_seed)
    else:
        p1_seed = None
        report = evaluate_full(ds, enc, opts["t_eval"])
    if args.curve:
        tr = read_embedding_file(args.curve)
        train_set = ClassSet(Path(args.curve).stem, list(tr), np.vstack(list(tr.values())))
        report.curve = generalization_curve(train_set, ds, enc, opts["t_eval"], opts["k_nn"])
    if args.confusion:
        cm = confusion_matrix(ds, enc, opts["t_eval"])
        _write(args.confusion, dumps({**cm.to_dict(), "config": {"t_eval": opts["t_eval"],
                                                                 "checkpoint": str(args.checkpoint)}}))
    report.config = {**opts, "master_seed": master, "protocol1_seed": p1_seed, "checkpoint": str(args.checkpoint),
                     "features": str(args.features), "labels": str(args.labels),
                     "embeddings": str(args.embeddings), "curve": args.curve and str(args.curve)}
    if args.out:
        _write(args.out, report.to_json())
    sys.stdout.write(render_report(report))
    return EXIT_OK


def cmd_kenburns(args, cfg) -> int:
    opts = _resolve(args, cfg, "kenburns", KB_OPTS)
    master = _master_seed(args, cfg)
    classes = read_class_list(args.classes) if args.classes else None
    manifest = build_pretraining_dataset(args.images, classes, opts["clips"], derive_seed(master, "kenburns"),
                                         opts["min_scale"], opts["max_scale"])
    write_manifest(args.out, manifest)
    if args.dump:
        dump_clips(args.dump, manifest, args.images)
    sys.stdout.write(f"{len(manifest.entries)} clips planned, {len(manifest.skipped)} classes skipped\n")
    return EXIT_OK


def cmd_experiment(args, cfg) -> int:
    opts = _resolve(args, cfg, "experiment", EXP_OPTS)
    master = _master_seed(args, cfg)
    config = _train_config(args, cfg, master)
    ds = _load_dataset(args.features, args.labels, args.embeddings, use_embedding_order=False)
    ev = _load_dataset(args.eval_features, args.eval_labels, args.eval_embeddings, use_embedding_order=True)
    seed = derive_seed(master, "experiment")
    variant = opts["variant"]
    if variant == "by_videos":
        if opts["fraction"] is None:
            raise UsageError("by_videos needs --fraction")
        res = subsample_experiment(ds, variant, opts["fraction"], opts["repeats"], config, ev, seed, opts["t_eval"])
    elif variant == "by_classes":
        if opts["n_classes"] is None:
            raise UsageError("by_classes needs --n-classes")
        res = subsample_experiment(ds, variant, opts["n_classes"], opts["repeats"], config, ev, seed, opts["t_eval"])
    elif variant == "diversity":
        res = diversity_experiment(ds, opts["k_clusters"], opts["n_select"], opts["repeats"], config, ev, seed,
                                   opts["t_eval"], opts["restarts"])
    else:
        raise UsageError("--variant must be by_videos, by_classes or diversity")
    doc = res.to_dict()
    doc["config"] = {**opts, "master_seed": master, "experiment_seed": seed, "train": config.to_dict()}
    if args.out:
        _write(args.out, dumps(doc))
    sys.stdout.write(render_experiment(doc))
    return EXIT_OK


def render_experiment(doc: dict) -> str:
    rows = [[i, len(cl), s, a] for i, (cl, s, a) in enumerate(zip(doc["class_lists"], doc["seeds"], doc["accuracies"]))]
    out = format_table(["repeat", "classes", "seed", "top1"], rows)
    return out + f"mean error {doc['mean_error']:.4f}  std {doc['std_error']:.4f}\n"


def _report_rows(doc: dict) -> tuple[str, list[str], list[list]]:
    """Pick the main table of a JSON report by its shape."""
    if "counts" in doc:
        return "confusion", ["true \\ predicted", *doc["classes"]], [[c, *row] for c, row in
                                                                    zip(doc["classes"], doc["counts"])]
    if "removed" in doc and "kept" in doc:
        return "curation", ["train class", "nearest test class", "distance"], [
            [r["train_class"], r["nearest_test_class"], r["distance"]] for r in doc["removed"]]
    if "class_lists" in doc:
        return "experiment", ["repeat", "seed", "top1", "top5", "error"], [
            [i, s, a, t, e] for i, (s, a, t, e) in enumerate(zip(doc["seeds"], doc["accuracies"], doc["top5"],
                                                                 doc["errors"]))]
    if "learning_rate" in doc:
        return "history", ["epoch", "learning_rate", "loss"], [
            [i, lr, loss] for i, (lr, loss) in enumerate(zip(doc["learning_rate"], doc["loss"]))]
    if "protocol" in doc:
        return "eval", ["class", "top1"], sorted([c, a] for c, a in doc["per_class_accuracy"].items())
    raise ValueError("unrecognized report document")


def cmd_report(args, cfg) -> int:
    import json

    with open(args.input, encoding="utf-8") as fh:
        doc = json.load(fh)
    kind, headers, rows = _report_rows(doc)
    if args.format == "tsv":
        text = "\t".join(headers) + "\n" + "".join("\t".join("" if c is None else str(c) for c in row) + "\n"
                                                    for row in rows)
    elif kind == "eval":
        report = EvalReport(doc["protocol"], doc["top1"], doc["top5"], doc["n_videos"], doc["n_classes"],
                            doc["top5_k"], doc["per_class_accuracy"], flags=doc.get("flags", []))
        text = render_report(report) + "\n" + format_table(headers, rows)
    else:
        text = format_table(headers, rows)
    _write(args.out, text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zslvideo", description="Zero-shot video classification harness on precomputed features.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value config file with per-command sections")
        sp.add_argument("--seed", type=int, help="master seed (default 0)")

    sp = sub.add_parser("embed", help="embed class names with word vectors")
    common(sp)
    sp.add_argument("--classes", required=True)
    sp.add_argument("--vectors", required=True)
    sp.add_argument("--subs")
    sp.add_argument("--reduce", choices=["mean", "sum"], default="mean")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("filter", help="remove training classes too close to test classes")
    common(sp)
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True, action="append")
    sp.add_argument("--vectors", required=True)
    sp.add_argument("--subs")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--top", type=int, help="rows in the nearest-class table")
    sp.add_argument("--out", help="JSON curation report")
    sp.add_argument("--kept", help="write kept class names, one per line")
    sp.set_defaults(func=cmd_filter)

    def train_opts(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int, dest="batch_size")
        sp.add_argument("--lr", type=float, dest="base_lr")
        sp.add_argument("--decay-epochs", dest="lr_decay_epochs")
        sp.add_argument("--decay-factor", type=float, dest="lr_decay_factor")
        sp.add_argument("--bias", action="store_const", const=True, dest="use_bias")

    sp = sub.add_parser("train", help="train the linear semantic encoder")
    common(sp)
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--embeddings", required=True)
    train_opts(sp)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--history", help="JSON training history")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="zero-shot evaluation (protocol 1 or 2)")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--protocol", type=int)
    sp.add_argument("--t-eval", type=int, dest="t_eval")
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--curve", help="training-class embedding file; adds the generalization curve")
    sp.add_argument("--k-nn", type=int, dest="k_nn")
    sp.add_argument("--confusion", help="write the confusion matrix JSON here")
    sp.add_argument("--out", help="JSON report")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("kenburns", help="plan synthetic clips from PPM images")
    common(sp)
    sp.add_argument("--images", required=True, help="directory with one sub-directory per class")
    sp.add_argument("--classes", help="class list (default: all sub-directories)")
    sp.add_argument("--clips", type=int)
    sp.add_argument("--min-scale", type=float, dest="min_scale")
    sp.add_argument("--max-scale", type=float, dest="max_scale")
    sp.add_argument("--out", required=True, help="manifest TSV")
    sp.add_argument("--dump", help="also render clips into a clip-dump store")
    sp.set_defaults(func=cmd_kenburns)

    sp = sub.add_parser("experiment", help="subsampling and class-diversity studies")
    common(sp)
    sp.add_argument("--variant", choices=["by_videos", "by_classes", "diversity"])
    sp.add_argument("--fraction", type=float)
    sp.add_argument("--n-classes", type=int, dest="n_classes")
    sp.add_argument("--k-clusters", type=int, dest="k_clusters")
    sp.add_argument("--n-select", type=int, dest="n_select")
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--restarts", type=int)
    sp.add_argument("--t-eval", type=int, dest="t_eval")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--eval-features", required=True)
    sp.add_argument("--eval-labels", required=True)
    sp.add_argument("--eval-embeddings", required=True)
    train_opts(sp)
    sp.add_argument("--out", help="JSON results")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("report", help="render a JSON report as a table")
    sp.add_argument("input")
    sp.add_argument("--format", choices=["text", "tsv"], default="text")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_report, config=None, seed=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        sys.stderr.write(f"zslvideo {args.command}: usage error: {exc}\n")
        return EXIT_USAGE
    except configparser.Error as exc:
        sys.stderr.write(f"zslvideo {args.command}: bad config: {exc}\n")
        return EXIT_USAGE
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"zslvideo {args.command}: error: {msg}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
