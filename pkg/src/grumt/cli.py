"""``grumt`` command-line entry point."""
import argparse
import os
import shutil
import sys

from . import __version__
from .corpus import Vocabulary, build_vocabulary, decode, encode, encode_pairs, load_batches, \
    make_batches, read_parallel, save_batches
from .embeddings import load_embeddings
from .gradcheck import gradcheck
from .training import FORMAT_VERSION, TrainingConfig, load_checkpoint, train
from .translator import beam_decode, greedy_decode, next_word_accuracy


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def _atomic_file(path):
    tmp = path + ".partial"
    return tmp, lambda: os.replace(tmp, path)


def _emb_seeds(seed):
    # source and target fill rows come from distinct streams
    return seed, seed + 1


def _load_tables(args, seed):
    src_vocab = Vocabulary.load(args.src_vocab)
    tgt_vocab = Vocabulary.load(args.tgt_vocab)
    s_seed, t_seed = _emb_seeds(seed)
    src_table = load_embeddings(args.src_emb, src_vocab, args.emb_dim, s_seed)
    tgt_table = load_embeddings(args.tgt_emb, tgt_vocab, args.emb_dim, t_seed)
    return src_vocab, tgt_vocab, src_table, tgt_table


def cmd_build_vocab(args):
    with open(args.input, encoding="utf-8") as fh:
        vocab = build_vocabulary(fh, args.size)
    tmp, commit = _atomic_file(args.out)
    vocab.save(tmp)
    commit()
    print(f"{len(vocab.tokens)} ranked tokens, {len(vocab)} ids -> {args.out}")


def cmd_make_batches(args):
    lines = read_parallel(args.src, args.tgt)
    pairs = encode_pairs(lines, Vocabulary.load(args.src_vocab), Vocabulary.load(args.tgt_vocab))
    batches = make_batches(pairs, args.batch_size, args.max_len)
    tmp = args.out + ".partial"
    shutil.rmtree(tmp, ignore_errors=True)
    save_batches(batches, tmp)
    if os.path.exists(args.out):
        shutil.rmtree(args.out)
    os.replace(tmp, args.out)
    kept = sum(len(b) for b in batches)
    print(f"{len(batches)} batches, {kept} of {len(pairs)} pairs kept -> {args.out}")


def cmd_train(args):
    config = TrainingConfig.load(args.config)
    if args.seed is not None:
        config.rng_seed = args.seed
    batches = load_batches(args.batches)
    if not batches:
        raise ValueError(f"no batches found in {args.batches}")
    _, _, src_table, tgt_table = _load_tables(args, config.rng_seed)
    resume = load_checkpoint(args.resume) if args.resume else None
    if os.path.exists(args.out):
        raise ValueError(f"output directory {args.out} already exists")
    tmp = args.out + ".partial"
    os.makedirs(tmp, exist_ok=True)
    with open(os.path.join(tmp, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config.to_text())
    train(config, batches, src_table, tgt_table, checkpoint_dir=tmp,
          log_path=os.path.join(tmp, "train_log.csv"), resume=resume,
          logger=lambda msg: print(msg, file=sys.stderr))
    os.replace(tmp, args.out)
    print(os.path.join(args.out, "final.grumt"))


def cmd_translate(args):
    ckpt = load_checkpoint(args.model)
    src_vocab, tgt_vocab, src_table, tgt_table = _load_tables(args, ckpt.seed)
    for line in sys.stdin:
        source = encode(line, src_vocab)
        if args.beam > 1:
            ids = list(beam_decode(source, ckpt.params, src_table, tgt_table,
                                   args.beam, args.max_len)[0].emitted_ids)
        else:
            ids, _ = greedy_decode(source, ckpt.params, src_table, tgt_table, args.max_len)
        print(" ".join(decode(ids, tgt_vocab)))


def cmd_eval(args):
    ckpt = load_checkpoint(args.model)
    src_vocab, tgt_vocab, src_table, tgt_table = _load_tables(args, ckpt.seed)
    pairs = encode_pairs(read_parallel(args.src, args.tgt), src_vocab, tgt_vocab)
    mode = args.mode.replace("-", "_")
    print(next_word_accuracy(pairs, ckpt.params, src_table, tgt_table, mode, args.average))


def cmd_gradcheck(args):
    report = gradcheck(args.seed, args.instances, args.threshold)
    print(report.summary())
    return 0 if report.passed else 1


def _model_flags(p):
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--emb-dim", type=int, default=None,
                   help="embedding dimension (default: read from the file)")


def build_parser():
    parser = Parser(prog="grumt", description="GRU next-word translation toolkit.")
    parser.add_argument("--version", action="version",
                        version=f"grumt {__version__} (checkpoint format {FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("build-vocab", help="rank tokens of a corpus file")
    p.add_argument("--input", required=True)
    p.add_argument("--size", type=int, default=80000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("make-batches", help="encode a parallel corpus into uniform-shape batches")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_batches)

    p = sub.add_parser("train", help="train a model on prepared batches")
    p.add_argument("--config", required=True)
    p.add_argument("--batches", required=True)
    _model_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides rng_seed in the config")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate stdin line by line")
    p.add_argument("--model", required=True)
    _model_flags(p)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=50)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="next-word accuracy on a parallel corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["correct", "self-fed"], required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    _model_flags(p)
    p.add_argument("--average", choices=["token", "sentence"], default="token")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the gradients")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    parser.epilog = "subcommands:\n" + "".join(
        "  " + sp.format_usage().replace("usage: ", "") for sp in sub.choices.values())
    parser.formatter_class = argparse.RawDescriptionHelpFormatter
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "out", None):
        # "run/" must become "run.partial", not "run/.partial"
        args.out = os.path.normpath(args.out)
    try:
        status = args.func(args)
    except OSError as exc:
        name = exc.filename or ""
        print(f"grumt: error: cannot access {name}: {exc.strerror}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"grumt: error: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
