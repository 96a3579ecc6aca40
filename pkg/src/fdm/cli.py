"""Command-line entry point.

Subcommands: preprocess | cooc | train | eval-ll | match | anchors | gen |
pipeline. Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure. Every run writes exactly one JSON manifest next to its
outputs recording the resolved configuration and artifact checksums.

Option precedence is CLI flag > config file (flat key=value lines, given
with --config) > built-in default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .corpus import (
    PreprocessConfig,
    corpus_from_lines,
    load_corpus,
    load_stopwords,
    save_corpus,
    split_holdout,
)
from .cooccurrence import corpus_cooc, export_cooc_text, load_cooc, save_cooc
from .errors import FdmError, NonFiniteLoss
from .evaluation import TopicSet, anchor_check, holdout_loglik, matching_error
from .model import (
    export_top_tokens,
    load_prob_matrix,
    realize,
    save_prob_matrix,
)
from .synthetic import DirichletPrior, GroundTruth, gen_corpus, interval_topics
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    outputs: dict
    seed: int | None
    wall_seconds: float
    version: str


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest_path_for(out: str) -> str:
    if os.path.isdir(out):
        return os.path.join(out, "manifest.json")
    return out + ".manifest.json"


def write_manifest(manifest: RunManifest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def verify_manifest(path: str) -> bool:
    """Recompute output checksums recorded in a manifest."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return all(file_sha256(p) == digest for p, digest in data["outputs"].items())


def _parse_config_file(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FdmError(f"{path}: bad config line {line!r}")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Layer CLI values over config-file values over defaults."""
    file_cfg = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, default in defaults.items():
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            resolved[key] = cli_val
        elif key in file_cfg:
            resolved[key] = _coerce(file_cfg[key], default if default is not None else "")
        else:
            resolved[key] = default
    return resolved


# defaults per subcommand; argparse options all default to None so that
# "not given on the command line" is distinguishable from the default
_PREPROCESS_DEFAULTS = {
    "min_count": 1,
    "min_doc_len": 2,
    "min_token_len": 3,
    "stopwords": None,
    "stem": False,
    "keep_digits": False,
    "drop_top_k": 0,
    "holdout_frac": 0.0,
    "seed": 0,
}
_TRAIN_DEFAULTS = {
    "topics": None,
    "batch": 1024,
    "lr": 1e-3,
    "max_steps": 200_000,
    "conv_tol": 1e-4,
    "conv_window": 20,
    "check_every": 500,
    "init_scale": 0.1,
    "seed": 0,
    "checkpoint_every": 0,
    "top_k": 10,
}
_GEN_DEFAULTS = {"prior": "sym:auto", "docs": 1000, "doc_len": 30, "seed": 0}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdm", description="Co-occurrence based topic modeling"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--threads", type=int)
        p.add_argument(
            "--sequential",
            action="store_true",
            help="single-threaded bit-reproducible mode",
        )

    p = sub.add_parser("preprocess", help="raw text (one doc per line) -> corpus file")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", dest="test_out")
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--min-doc-len", dest="min_doc_len", type=int)
    p.add_argument("--min-token-len", dest="min_token_len", type=int)
    p.add_argument("--stopwords")
    p.add_argument("--stem", action=argparse.BooleanOptionalAction)
    p.add_argument("--keep-digits", dest="keep_digits", action=argparse.BooleanOptionalAction)
    p.add_argument("--drop-top-k", dest="drop_top_k", type=int)
    p.add_argument("--holdout-frac", dest="holdout_frac", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("cooc", help="corpus file -> co-occurrence matrix")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--text-out", dest="text_out")

    p = sub.add_parser("train", help="co-occurrence matrix -> topics")
    common(p)
    p.add_argument("--cooc", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--topics", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--conv-tol", dest="conv_tol", type=float)
    p.add_argument("--conv-window", dest="conv_window", type=int)
    p.add_argument("--check-every", dest="check_every", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--resume", help="checkpoint file to continue from")
    p.add_argument("--corpus", help="corpus file for the top-token export")
    p.add_argument("--top-k", dest="top_k", type=int)

    p = sub.add_parser("eval-ll", help="holdout log-likelihood of topics on a corpus")
    common(p)
    p.add_argument("--topics", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--out", help="per-document CSV path")

    p = sub.add_parser("match", help="optimal-assignment L1 distance between topic files")
    common(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--learned", required=True)
    p.add_argument("--out", help="per-topic distance CSV path")

    p = sub.add_parser("anchors", help="per-topic anchor tokens")
    common(p)
    p.add_argument("--topics", required=True)
    p.add_argument("--eps", type=float)
    p.add_argument("--pmin", type=float)
    p.add_argument("--corpus", help="corpus file to resolve token names")
    p.add_argument("--out")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--topics", help="topics file for ground truth")
    p.add_argument("--intervals", help='e.g. "1-40,30-70,60-100"')
    p.add_argument("--n-tokens", dest="n_tokens", type=int)
    p.add_argument("--prior", help="sym:CONC or vec:a,b,c (default sym:1/T)")
    p.add_argument("--docs", type=int)
    p.add_argument("--doc-len", dest="doc_len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="preprocess + cooc + train + eval in one run")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--topics", type=int, required=True)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--min-doc-len", dest="min_doc_len", type=int)
    p.add_argument("--min-token-len", dest="min_token_len", type=int)
    p.add_argument("--stopwords")
    p.add_argument("--stem", action=argparse.BooleanOptionalAction)
    p.add_argument("--keep-digits", dest="keep_digits", action=argparse.BooleanOptionalAction)
    p.add_argument("--drop-top-k", dest="drop_top_k", type=int)
    p.add_argument("--holdout-frac", dest="holdout_frac", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--conv-tol", dest="conv_tol", type=float)
    p.add_argument("--conv-window", dest="conv_window", type=int)
    p.add_argument("--check-every", dest="check_every", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--top-k", dest="top_k", type=int)
    return parser


def _threads(cfg_args: argparse.Namespace) -> int:
    if getattr(cfg_args, "sequential", False):
        return 1
    return getattr(cfg_args, "threads", None) or 1


def _preprocess_config(cfg: dict) -> PreprocessConfig:
    stopwords = load_stopwords(cfg["stopwords"]) if cfg["stopwords"] else frozenset()
    return PreprocessConfig(
        min_token_len=cfg["min_token_len"],
        stopwords=stopwords,
        stem=cfg["stem"],
        keep_digits=cfg["keep_digits"],
    )


def cmd_preprocess(args):
    cfg = resolve_config(args, _PREPROCESS_DEFAULTS)
    with open(args.input, "r", encoding="utf-8") as fh:
        corpus = corpus_from_lines(
            fh,
            config=_preprocess_config(cfg),
            min_token_count=cfg["min_count"],
            min_doc_len=cfg["min_doc_len"],
            drop_top_k=cfg["drop_top_k"],
        )
    outputs = {}
    if cfg["holdout_frac"] > 0:
        train_c, test_c = split_holdout(corpus, cfg["holdout_frac"], cfg["seed"])
        test_path = args.test_out or args.out + ".test"
        save_corpus(args.out, train_c)
        save_corpus(test_path, test_c)
        outputs = {args.out: None, test_path: None}
    else:
        save_corpus(args.out, corpus)
        outputs = {args.out: None}
    return cfg, {"input": args.input}, outputs, cfg["seed"], args.out


def cmd_cooc(args):
    cfg = {"threads": _threads(args)}
    corpus = load_corpus(args.corpus)
    cooc = corpus_cooc(corpus, threads=_threads(args))
    save_cooc(args.out, cooc)
    outputs = {args.out: None}
    if args.text_out:
        export_cooc_text(args.text_out, cooc)
        outputs[args.text_out] = None
    return cfg, {"corpus": args.corpus}, outputs, None, args.out


def _run_training(cooc, cfg: dict, out_dir: str, resume=None, vocab_tokens=None):
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    config = TrainConfig(
        n_topics=cfg["topics"],
        batch_size=cfg["batch"],
        learning_rate=cfg["lr"],
        max_steps=cfg["max_steps"],
        conv_window=cfg["conv_window"],
        conv_tol=cfg["conv_tol"],
        check_every=cfg["check_every"],
        init_scale=cfg["init_scale"],
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
        checkpoint_path=ckpt_path if cfg["checkpoint_every"] > 0 else None,
    )
    params, trace = train(cooc, config, resume=resume)
    dist = realize(params)
    outputs = {}

    topics_path = os.path.join(out_dir, "topics.txt")
    alpha_path = os.path.join(out_dir, "alpha.txt")
    trace_path = os.path.join(out_dir, "trace.csv")
    save_prob_matrix(topics_path, dist.mu)
    save_prob_matrix(alpha_path, dist.alpha)
    trace.to_csv(trace_path)
    outputs.update({topics_path: None, alpha_path: None, trace_path: None})
    if vocab_tokens is not None:
        top_path = os.path.join(out_dir, "top_tokens.txt")
        export_top_tokens(top_path, dist.mu, vocab_tokens, k=cfg["top_k"])
        outputs[top_path] = None
    return dist, trace, outputs


def cmd_train(args):
    cfg = resolve_config(args, _TRAIN_DEFAULTS)
    if cfg["topics"] is None:
        raise FdmError("--topics is required (CLI flag or config file)")
    cooc = load_cooc(args.cooc)
    vocab_tokens = load_corpus(args.corpus).vocab.tokens if args.corpus else None
    _, trace, outputs = _run_training(
        cooc, cfg, args.out, resume=args.resume, vocab_tokens=vocab_tokens
    )
    inputs = {"cooc": args.cooc}
    if args.corpus:
        inputs["corpus"] = args.corpus
    status = "converged" if trace.converged else "max-steps"
    print(f"train: {status} after {len(trace.ema_objective)} steps")
    return cfg, inputs, outputs, cfg["seed"], args.out


def cmd_eval_ll(args):
    topics = TopicSet(load_prob_matrix(args.topics))
    corpus = load_corpus(args.corpus)
    smoothing = args.smoothing if args.smoothing is not None else 1e-10
    report = holdout_loglik(corpus, topics, smoothing=smoothing, threads=_threads(args))
    outputs = {}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("doc_id,loglik\n")
            for i, v in enumerate(report.per_doc):
                fh.write(f"{i},{v:.17e}\n")
        outputs[args.out] = None
    print(
        f"eval-ll: mean={report.mean:.6f} docs={len(report.per_doc)} "
        f"excluded={report.n_excluded} smoothing={report.smoothing:g}"
    )
    target = args.out if args.out else args.topics
    cfg = {"smoothing": smoothing, "threads": _threads(args)}
    return cfg, {"topics": args.topics, "corpus": args.corpus}, outputs, None, target


def cmd_match(args):
    ref = TopicSet(load_prob_matrix(args.ref))
    learned = TopicSet(load_prob_matrix(args.learned))
    err, tau, per_topic = matching_error(ref, learned)
    outputs = {}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("ref_topic,learned_topic,l1_distance\n")
            for t, (m, d) in enumerate(zip(tau, per_topic)):
                fh.write(f"{t},{m},{d:.17e}\n")
        outputs[args.out] = None
    print(f"match: err={err:.6f} permutation={','.join(str(int(x)) for x in tau)}")
    target = args.out if args.out else args.learned
    return {}, {"ref": args.ref, "learned": args.learned}, outputs, None, target


def cmd_anchors(args):
    topics = TopicSet(load_prob_matrix(args.topics))
    eps = args.eps if args.eps is not None else 1e-4
    pmin = args.pmin if args.pmin is not None else 1e-3
    anchors = anchor_check(topics, eps=eps, pmin=pmin)
    tokens = load_corpus(args.corpus).vocab.tokens if args.corpus else None
    lines = []
    for t, ids in enumerate(anchors):
        names = [tokens[u] if tokens else str(u) for u in ids]
        lines.append(f"topic {t}: {' '.join(names)}")
    outputs = {}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        outputs[args.out] = None
    else:
        print("\n".join(lines))
    target = args.out if args.out else args.topics
    return {"eps": eps, "pmin": pmin}, {"topics": args.topics}, outputs, None, target


def _parse_intervals(spec: str):
    out = []
    for part in spec.split(","):
        a, sep, b = part.strip().partition("-")
        if not sep:
            raise FdmError(f"bad interval {part!r}; expected A-B")
        out.append((int(a), int(b)))
    return out


def _parse_prior(spec: str, t: int):
    kind, sep, rest = spec.partition(":")
    if kind == "sym":
        conc = 1.0 / t if rest in ("", "auto") else float(rest)
        return DirichletPrior.symmetric(conc, t)
    if kind == "vec":
        vec = np.array([float(x) for x in rest.split(",")])
        if len(vec) != t:
            raise FdmError(f"prior vector has {len(vec)} entries, expected {t}")
        return DirichletPrior(vec)
    raise FdmError(f"unknown prior {spec!r}; expected sym:CONC or vec:a,b,c")


def cmd_gen(args):
    cfg = resolve_config(args, _GEN_DEFAULTS)
    inputs = {}
    if args.topics:
        topics = TopicSet(load_prob_matrix(args.topics))
        inputs["topics"] = args.topics
    elif args.intervals:
        if not args.n_tokens:
            raise FdmError("--intervals requires --n-tokens")
        topics = interval_topics(args.n_tokens, _parse_intervals(args.intervals))
    else:
        raise FdmError("gen needs --topics or --intervals")
    prior = _parse_prior(cfg["prior"], topics.n_topics)
    gt = GroundTruth(
        topics=topics,
        prior=prior,
        tokens_per_doc=cfg["doc_len"],
        n_docs=cfg["docs"],
        seed=cfg["seed"],
    )
    save_corpus(args.out, gen_corpus(gt))
    return cfg, inputs, {args.out: None}, cfg["seed"], args.out


def cmd_pipeline(args):
    defaults = dict(_PREPROCESS_DEFAULTS)
    defaults.update(_TRAIN_DEFAULTS)
    defaults["holdout_frac"] = 0.2
    defaults["smoothing"] = 1e-10
    cfg = resolve_config(args, defaults)
    cfg["topics"] = args.topics
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    outputs = {}

    with open(args.input, "r", encoding="utf-8") as fh:
        corpus = corpus_from_lines(
            fh,
            config=_preprocess_config(cfg),
            min_token_count=cfg["min_count"],
            min_doc_len=cfg["min_doc_len"],
            drop_top_k=cfg["drop_top_k"],
        )
    train_path = os.path.join(out_dir, "train.corpus")
    test_path = os.path.join(out_dir, "test.corpus")
    if cfg["holdout_frac"] > 0:
        train_c, test_c = split_holdout(corpus, cfg["holdout_frac"], cfg["seed"])
    else:
        train_c, test_c = corpus, None
    save_corpus(train_path, train_c)
    outputs[train_path] = None
    if test_c is not None:
        save_corpus(test_path, test_c)
        outputs[test_path] = None

    cooc = corpus_cooc(train_c, threads=_threads(args))
    cooc_path = os.path.join(out_dir, "cooc.bin")
    save_cooc(cooc_path, cooc)
    outputs[cooc_path] = None

    dist, trace, train_outputs = _run_training(
        cooc, cfg, out_dir, vocab_tokens=train_c.vocab.tokens
    )
    outputs.update(train_outputs)

    if test_c is not None and test_c.n_docs > 0:
        report = holdout_loglik(
            test_c, TopicSet(dist.mu), smoothing=cfg["smoothing"], threads=_threads(args)
        )
        eval_path = os.path.join(out_dir, "eval.csv")
        with open(eval_path, "w", encoding="utf-8") as fh:
            fh.write("doc_id,loglik\n")
            for i, v in enumerate(report.per_doc):
                fh.write(f"{i},{v:.17e}\n")
        outputs[eval_path] = None
        print(
            f"pipeline: mean holdout loglik={report.mean:.6f} "
            f"docs={len(report.per_doc)} excluded={report.n_excluded}"
        )
    status = "converged" if trace.converged else "max-steps"
    print(f"pipeline: training {status} after {len(trace.ema_objective)} steps")
    return cfg, {"input": args.input}, outputs, cfg["seed"], out_dir


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "cooc": cmd_cooc,
    "train": cmd_train,
    "eval-ll": cmd_eval_ll,
    "match": cmd_match,
    "anchors": cmd_anchors,
    "gen": cmd_gen,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    t0 = time.perf_counter()
    try:
        cfg, inputs, outputs, seed, target = _COMMANDS[args.command](args)
    except NonFiniteLoss as exc:
        print(f"fdm: error: kind=NonFiniteLoss msg={exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FdmError, OSError, ValueError) as exc:
        print(f"fdm: error: kind={type(exc).__name__} msg={exc}", file=sys.stderr)
        return EXIT_DATA
    manifest = RunManifest(
        command=args.command,
        config=cfg,
        inputs={p: file_sha256(p) for p in inputs.values() if isinstance(p, str)},
        outputs={p: file_sha256(p) for p in outputs},
        seed=seed,
        wall_seconds=time.perf_counter() - t0,
        version=__version__,
    )
    write_manifest(manifest, manifest_path_for(target))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
