"""``drda`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import (
    EmbeddingMatrix,
    freq_drop,
    nearest_neighbors,
    read_embeddings,
    ssc_average,
    ssc_records,
    ssc_similarity,
    write_embeddings,
    write_freq_drop_csv,
)
from .augment import build_dataset, read_jsonl, write_jsonl
from .bpe import Vocabulary, load_model, save_model, train_bpe, vocab_at
from .corpus_io import CleaningPolicy, clean, load_parallel, perturb_corpus, read_lines, save_parallel, write_lines
from .errors import ConfigError, DataError, DrdaError
from .segmenter import segment_greedy, segment_multi

logger = logging.getLogger("drda")

COMMANDS = [
    "clean", "perturb", "train-bpe", "segment", "segment-multi", "augment",
    "train", "translate", "check-grad", "analyze", "export-emb",
]


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def parse_known_args(self, args=None, namespace=None):
        self._argv = list(sys.argv[1:] if args is None else args)
        return super().parse_known_args(args, namespace)

    def error(self, message):
        # an unknown flag is the likelier mistake than the missing ones it displaced
        if "required" in message:
            unknown = [a.split("=")[0] for a in getattr(self, "_argv", ())
                       if a.startswith("-") and a.split("=")[0] not in self._option_string_actions]
            if unknown:
                message = f"unrecognized arguments: {' '.join(unknown)}"
        if "invalid choice" in message:
            bad = message.split("invalid choice: ")[-1].split(" ")[0].strip("'")
            close = difflib.get_close_matches(bad, COMMANDS + ["freq-drop", "neighbors", "ssc"], n=1)
            if close:
                message += f"; did you mean '{close[0]}'?"
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("DRDA_SEED")
    return int(env) if env else None


# --------------------------------------------------------------------------- commands

def cmd_clean(args):
    corpus = load_parallel(args.src, args.tgt)
    if args.lowercase:
        corpus = [(s.lower(), t.lower()) for s, t in corpus]
    policy = CleaningPolicy(args.min, args.max, args.ratio)
    kept = clean(corpus, policy)
    save_parallel(kept, f"{args.out_prefix}.src", f"{args.out_prefix}.tgt")
    print(f"kept {len(kept)} of {len(corpus)} pairs", file=sys.stderr)


def cmd_perturb(args):
    seed = _seed(args.seed)
    if seed is None:
        raise ConfigError("perturb needs --seed or DRDA_SEED")
    lines = read_lines(args.input)
    noisy, count = perturb_corpus(lines, args.p, seed)
    write_lines(args.out, noisy)
    print(f"perturbed {count} characters", file=sys.stderr)


def cmd_train_bpe(args):
    corpora = [read_lines(p) for p in args.input.split(",") if p]
    model = train_bpe(corpora, args.merges, joint=args.joint, min_count=args.min_count)
    save_model(model, args.model)
    vocab_at(model, model.max_size).write(args.vocab or f"{args.model}.vocab")
    print(f"learned {len(model.merges)} merges; max vocabulary {model.max_size}", file=sys.stderr)


def cmd_segment(args):
    model = load_model(args.model)
    lines = read_lines(args.input)
    write_lines(args.out, (" ".join(segment_greedy(s, model, args.size).tokens) for s in lines))


def cmd_segment_multi(args):
    model = load_model(args.model)
    lines = read_lines(args.input)
    sizes = [args.prime, *args.augs]
    outs = [[] for _ in sizes]
    for s in lines:
        for buf, seq in zip(outs, segment_multi(s, model, args.prime, args.augs)):
            buf.append(" ".join(seq.tokens))
    names = ["pri"] + [f"aug{i + 1}" for i in range(len(args.augs))]
    for name, size, buf in zip(names, sizes, outs):
        write_lines(f"{args.out_prefix}.{name}.{size}", buf)


def cmd_augment(args):
    model = load_model(args.model)
    corpus = load_parallel(args.src, args.tgt)
    write_jsonl(build_dataset(corpus, model, args.prime, args.augs), args.out)


TRAIN_OVERRIDES = ("alpha", "smoothing", "seed", "lr", "max_steps", "batch_size", "max_tokens", "warmup",
                   "d_model", "n_heads", "n_layers", "ffn_dim", "dropout", "kl_mode")


def resolve_train_config(args, dataset, bpe) -> dict:
    """Precedence: CLI flag > config file > built-in default."""
    from .toy_nmt import ModelConfig

    cfg: dict = {}
    if args.config:
        try:
            cfg.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    for key in TRAIN_OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if "seed" not in cfg and os.environ.get("DRDA_SEED"):
        cfg["seed"] = int(os.environ["DRDA_SEED"])
    first = dataset[0]
    cfg["prime_size"] = first.src_prime.vocab_size
    cfg["aug_sizes"] = [a.vocab_size for a in first.src_augs]
    if not cfg["aug_sizes"] and "alpha" not in cfg:
        cfg["alpha"] = 0.0
    cfg.setdefault("embed_rows", max([cfg["prime_size"], *cfg["aug_sizes"]]))
    return ModelConfig.from_dict(cfg).to_dict()


def cmd_train(args):
    from .toy_nmt import ModelConfig, save_checkpoint, train

    bpe = load_model(args.bpe)
    dataset = read_jsonl(args.data)
    if not dataset:
        raise DataError(f"{args.data}: empty dataset")
    resolved = resolve_train_config(args, dataset, bpe)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print("resolved config: " + json.dumps(resolved, sort_keys=True), file=sys.stderr)
    result = train(dataset, ModelConfig.from_dict(resolved))
    save_checkpoint(result.model, out, {"bpe_digest": bpe.corpus_digest, "bpe_merges": len(bpe.merges)})
    with open(out / "loss_curve.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "total"])
        for i, v in enumerate(result.loss_curve):
            w.writerow([i, repr(v)])
    with open(out / "epochs.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "prime_nll", "aug_nll_mean", "agreement_mean", "total"])
        for i, b in enumerate(result.epochs):
            w.writerow([i, repr(b.prime_nll), repr(b.aug_nll_mean), repr(b.agreement_mean), repr(b.total)])


def _load_translation_model(model_dir, bpe_path):
    from .toy_nmt import attach_bpe, load_checkpoint

    bpe = load_model(bpe_path)
    model, meta = load_checkpoint(model_dir)
    digest = meta.get("bpe_digest")
    if digest and bpe.corpus_digest and digest != bpe.corpus_digest:
        raise DataError(f"{bpe_path} was trained on a different corpus than the model in {model_dir}")
    return attach_bpe(model, bpe), bpe


def cmd_translate(args):
    from .toy_nmt import decode, dynamic_select, oracle_select

    model, bpe = _load_translation_model(args.model, args.bpe)
    lines = read_lines(args.input)
    sizes = args.sizes or [model.config.prime_size]
    refs = None
    if args.select == "oracle":
        if not args.ref:
            raise ConfigError("--select oracle needs --ref")
        refs = read_lines(args.ref)
        if len(refs) != len(lines):
            raise DataError("reference and input line counts differ")
    out = []
    for i, s in enumerate(lines):
        if args.select == "prime":
            hyp = decode(model, segment_greedy(s, bpe, model.config.prime_size), args.beam, args.max_len)
        elif args.select == "dynamic":
            hyp = dynamic_select(model, s, bpe, sizes, args.beam, args.max_len)
        else:
            hyp = oracle_select(model, s, refs[i], bpe, sizes, args.beam, args.max_len)
        out.append(hyp.text())
    write_lines(args.out, out)


def cmd_check_grad(args):
    from .gradcheck import logits_gradcheck, model_gradcheck

    seed = _seed(args.seed) or 0
    e1 = logits_gradcheck(seed)
    e2 = model_gradcheck(seed)
    print(f"logits max relative error: {e1:.3e}")
    print(f"model  max relative error: {e2:.3e}")
    if max(e1, e2) >= args.tol:
        raise DataError(f"gradient check failed: {max(e1, e2):.3e} >= {args.tol:g}")


def cmd_export_emb(args):
    from .toy_nmt import embedding_array

    model, bpe = _load_translation_model(args.model, args.bpe)
    mat = embedding_array(model)
    tokens = bpe.all_tokens()[: len(mat)]
    write_embeddings(args.out, EmbeddingMatrix(mat), tokens)


def cmd_analyze(args):
    if args.analysis == "freq-drop":
        model = load_model(args.model)
        records = freq_drop(read_lines(args.corpus), model, args.small, args.large, args.min_freq)
        write_freq_drop_csv(records, args.out)
    elif args.analysis == "neighbors":
        emb, vocab = read_embeddings(args.emb)
        rows = nearest_neighbors(emb, args.token, vocab, args.n)
        _write_csv(args.out, ["rank", "token", "similarity"],
                   [[i + 1, t, repr(s)] for i, (t, s) in enumerate(rows)])
    else:
        emb, vocab = read_embeddings(args.emb)
        if args.vocab:
            vocab = Vocabulary.read(args.vocab)
        if args.pair:
            a, b = args.pair
            _write_csv(args.out, ["compound", "a", "b", "similarity"],
                       [[a + b, a, b, repr(ssc_similarity(emb, a, b, vocab))]])
        else:
            rows = [[r.compound, r.parts[0], r.parts[1], repr(r.similarity)] for r in ssc_records(emb, vocab)]
            avg = ssc_average(emb, vocab)
            rows.append(["<average>", "", "", "undefined" if avg is None else repr(avg)])
            _write_csv(args.out, ["compound", "a", "b", "similarity"], rows)


def _write_csv(path, header, rows):
    fh = open(path, "w", encoding="utf-8", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


# --------------------------------------------------------------------------- parser

def build_parser() -> Parser:
    p = Parser(prog="drda", description="Deterministic reversible data augmentation toolkit.")
    p.add_argument("--version", action="version", version=f"drda {__version__}")
    p.add_argument("--log-level", default="WARNING", help="logging level (default: WARNING)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    s = sub.add_parser("clean", help="length/ratio filter for a parallel corpus")
    s.add_argument("--src", required=True, help="source-side file, one sentence per line")
    s.add_argument("--tgt", required=True, help="target-side file, line-aligned with --src")
    s.add_argument("--min", type=int, default=1, help="minimum whitespace tokens per side (default 1)")
    s.add_argument("--max", type=int, default=175, help="maximum whitespace tokens per side (default 175)")
    s.add_argument("--ratio", type=float, default=1.5, help="maximum length ratio between sides (default 1.5)")
    s.add_argument("--lowercase", action="store_true", help="lowercase both sides before filtering")
    s.add_argument("--out-prefix", required=True, help="writes PREFIX.src and PREFIX.tgt")
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("perturb", help="synthetic character noise")
    s.add_argument("--in", dest="input", required=True, help="input file")
    s.add_argument("--p", type=float, default=0.01, help="per-character noise probability (default 0.01)")
    s.add_argument("--seed", type=int, help="random seed (falls back to DRDA_SEED)")
    s.add_argument("--out", required=True, help="output file")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("train-bpe", help="learn BPE merges")
    s.add_argument("--input", required=True, help="comma-separated training files")
    s.add_argument("--merges", type=int, required=True, help="maximum number of merges")
    s.add_argument("--joint", action=argparse.BooleanOptionalAction, default=True,
                   help="count all input files together (default); --no-joint uses the first file only")
    s.add_argument("--min-count", type=int, default=1, help="stop when the best pair is rarer than this (default 1)")
    s.add_argument("--model", required=True, help="output merges file")
    s.add_argument("--vocab", help="output vocabulary file (default MODEL.vocab)")
    s.set_defaults(func=cmd_train_bpe)

    s = sub.add_parser("segment", help="segment a file at one granularity")
    s.add_argument("--model", required=True, help="merges file")
    s.add_argument("--size", type=int, required=True, help="vocabulary size")
    s.add_argument("--in", dest="input", required=True, help="input file")
    s.add_argument("--out", required=True, help="output file, tokens space-joined per line")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("segment-multi", help="segment a file at prime and augmented granularities")
    s.add_argument("--model", required=True, help="merges file")
    s.add_argument("--prime", type=int, required=True, help="prime vocabulary size")
    s.add_argument("--augs", type=_int_list, default=[], help="comma-separated augmented sizes")
    s.add_argument("--in", dest="input", required=True, help="input file")
    s.add_argument("--out-prefix", required=True, help="writes PREFIX.pri.P and PREFIX.augI.Q")
    s.set_defaults(func=cmd_segment_multi)

    s = sub.add_parser("augment", help="build the multi-granularity JSONL dataset")
    s.add_argument("--model", required=True, help="merges file")
    s.add_argument("--prime", type=int, required=True, help="prime vocabulary size (also used for the target)")
    s.add_argument("--augs", type=_int_list, default=[], help="comma-separated augmented sizes")
    s.add_argument("--src", required=True, help="source-side file")
    s.add_argument("--tgt", required=True, help="target-side file")
    s.add_argument("--out", required=True, help="output .jsonl")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train the toy encoder-decoder")
    s.add_argument("--data", required=True, help="dataset .jsonl from 'drda augment'")
    s.add_argument("--bpe", required=True, help="merges file used to build the dataset")
    s.add_argument("--config", help="JSON file of model/training settings")
    s.add_argument("--out", required=True, help="output directory")
    for key, typ in [("alpha", float), ("smoothing", float), ("seed", int), ("lr", float), ("max_steps", int),
                     ("batch_size", int), ("max_tokens", int), ("warmup", int), ("d_model", int), ("n_heads", int),
                     ("n_layers", int), ("ffn_dim", int), ("dropout", float), ("kl_mode", str)]:
        s.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, help=f"override config '{key}'")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="decode with a trained model")
    s.add_argument("--model", required=True, help="checkpoint directory")
    s.add_argument("--bpe", required=True, help="merges file")
    s.add_argument("--sizes", type=_int_list, help="comma-separated candidate granularities (default: prime)")
    s.add_argument("--select", choices=["dynamic", "prime", "oracle"], default="dynamic",
                   help="granularity selection (default dynamic)")
    s.add_argument("--ref", help="reference file (oracle selection only)")
    s.add_argument("--beam", type=int, default=5, help="beam width (default 5)")
    s.add_argument("--max-len", type=int, default=64, help="maximum output tokens (default 64)")
    s.add_argument("--in", dest="input", required=True, help="input file")
    s.add_argument("--out", required=True, help="output file")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("check-grad", help="finite-difference check of the loss gradients")
    s.add_argument("--seed", type=int, help="random seed (falls back to DRDA_SEED, then 0)")
    s.add_argument("--tol", type=float, default=1e-4, help="maximum allowed relative error (default 1e-4)")
    s.set_defaults(func=cmd_check_grad)

    s = sub.add_parser("export-emb", help="write the embedding table of a checkpoint")
    s.add_argument("--model", required=True, help="checkpoint directory")
    s.add_argument("--bpe", required=True, help="merges file")
    s.add_argument("--out", required=True, help="output embedding file")
    s.set_defaults(func=cmd_export_emb)

    s = sub.add_parser("analyze", help="frequency drop, neighbours, semantic composition")
    asub = s.add_subparsers(dest="analysis", metavar="ANALYSIS", parser_class=Parser)
    asub.required = True
    a = asub.add_parser("freq-drop", help="per-token frequency drop between two sizes")
    a.add_argument("--model", required=True, help="merges file")
    a.add_argument("--small", type=int, required=True, help="smaller vocabulary size")
    a.add_argument("--large", type=int, required=True, help="larger vocabulary size")
    a.add_argument("--corpus", required=True, help="corpus file")
    a.add_argument("--min-freq", type=int, default=1, help="only tokens with at least this small-vocab count")
    a.add_argument("--out", required=True, help="output CSV")
    a = asub.add_parser("neighbors", help="cosine nearest neighbours of a token")
    a.add_argument("--emb", required=True, help="embedding file")
    a.add_argument("--token", required=True, help="query token")
    a.add_argument("--n", type=int, default=10, help="number of neighbours (default 10)")
    a.add_argument("--out", help="output CSV (default stdout)")
    a = asub.add_parser("ssc", help="subword semantic composition scores")
    a.add_argument("--emb", required=True, help="embedding file")
    a.add_argument("--vocab", help="vocabulary file restricting the token set")
    a.add_argument("--pair", nargs=2, metavar=("A", "B"), help="score a single split A+B")
    a.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_analyze)
    return p


def _make_output_dirs(args) -> None:
    outputs = ["out", "out_prefix"] + (["model", "vocab"] if args.command == "train-bpe" else [])
    for name in outputs:
        value = getattr(args, name, None)
        if value:
            Path(value).parent.mkdir(parents=True, exist_ok=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _make_output_dirs(args)
        args.func(args)
    except ConfigError as exc:
        print(f"drda {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DataError, DrdaError, OSError, ValueError) as exc:
        print(f"drda {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
