"""Command line: ``apslda train | eval | topwords``.

Exit codes: 0 success, 1 configuration or input error, 2 transport failure.
Set ``APSLDA_LOG`` to error, info or debug for log output on stderr.
"""

import argparse
import logging
import os
import sys
import time

from .corpus import CorpusFormatError, load_libsvm, load_vocab
from .evaluation import export_csv, format_perplexity, load_csv, perplexity, read_meta, split, write_meta
from .psclient import BackoffPolicy, PSClient, TransportError
from .trainer import (TrainerConfig, TrainingAborted, Trainer, format_top_words, top_words,
                      top_words_from_counts)
from .transport import FaultPlan

EXIT_OK, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def conv(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return conv


def _prob(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {text}")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="libsvm-style bag-of-words file")
    common.add_argument("--test", help="separate held-out file (disables --split)")
    common.add_argument("--vocab", help="word labels, one per line, line i = word index i")
    common.add_argument("--vocab-size", type=_positive(int), help="reserve V vocabulary rows")
    common.add_argument("--topics", type=_positive(int), help="number of topics K (default 20)")
    common.add_argument("--alpha", type=_positive(float), help="document-topic prior (default 0.05)")
    common.add_argument("--beta", type=_positive(float), help="topic-word prior (default 0.01)")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--split", type=float, help="training share of a document-level split (default 0.9)")
    common.add_argument("--foldin-passes", type=_positive(int), help="held-out Gibbs sweeps (default 20)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--iterations", type=_positive(int), default=50)
    run.add_argument("--mh-steps", type=_positive(int), default=2)
    run.add_argument("--workers", type=_positive(int), default=1)
    run.add_argument("--shards", type=_positive(int), default=1)
    run.add_argument("--eval-every", type=int, default=10, help="0 disables evaluation")
    run.add_argument("--out", help="write the final model as CSV (+ .json metadata)")
    run.add_argument("--sim", action="store_true", help="simulated network (default)")
    run.add_argument("--drop", type=_prob, default=0.0, help="simulated drop probability")
    run.add_argument("--dup", type=_prob, default=0.0, help="simulated duplication probability")
    run.add_argument("--threads", type=_positive(int), help="real sockets with N worker threads")
    run.add_argument("--max-retries", type=_positive(int), default=24, help="attempts per request")
    run.add_argument("--role", choices=["server", "worker", "driver"])
    run.add_argument("--listen", help="host:port of this process (multi-process mode)")
    run.add_argument("--peers", help="comma-separated host:port list: shards, workers, driver")

    parser = _Parser(prog="apslda", description="Asynchronous parameter-server LDA")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common, run], help="train a topic model")
    ev = sub.add_parser("eval", parents=[common], help="held-out perplexity of an exported model")
    ev.add_argument("--model", required=True, help="CSV written by train --out")
    tw = sub.add_parser("topwords", parents=[common, run], help="watch the top words per topic")
    tw.add_argument("--n", type=int, default=10, help="words per topic")
    tw.add_argument("--interval", type=_positive(float), default=1.0, help="seconds between refreshes")
    tw.add_argument("--refreshes", type=int, default=0, help="stop polling after N refreshes (0: run length)")
    return parser


def _defaults(args, meta=None):
    meta = meta or {}
    pick = lambda name, key, default: getattr(args, name) if getattr(args, name) is not None else meta.get(key, default)
    args.topics = pick("topics", "topics", 20)
    args.alpha = pick("alpha", "alpha", 0.05)
    args.beta = pick("beta", "beta", 0.01)
    args.seed = pick("seed", "seed", 0)
    args.foldin_passes = pick("foldin_passes", "foldin_passes", 20)
    args.vocab_size = pick("vocab_size", "vocab_size", None)
    args.split = pick("split", "split", None)
    if args.split is None and args.command != "eval":
        args.split = 0.9
    if args.split is not None and not 0 < args.split < 1:
        raise UsageError("--split must be in (0, 1)")


def _load_data(args):
    if not args.dataset:
        raise UsageError("--dataset is required")
    corpus = load_libsvm(args.dataset, V=args.vocab_size)
    if args.test:
        test = load_libsvm(args.test, V=max(corpus.V, args.vocab_size or 0))
        V = max(corpus.V, test.V)
        corpus.V = test.V = V
        return corpus, test
    if args.split is None:
        return corpus, None
    return split(corpus, args.split, args.seed)


def _config(args):
    return TrainerConfig(
        K=args.topics, alpha=args.alpha, beta=args.beta, iterations=args.iterations,
        mh_steps=args.mh_steps, workers=args.threads or args.workers, shards=args.shards,
        seed=args.seed, eval_every=args.eval_every, foldin_passes=args.foldin_passes,
        fault=FaultPlan(drop_prob=args.drop, dup_prob=args.dup, seed=args.seed),
        backoff=BackoffPolicy(max_retries=args.max_retries), threads=bool(args.threads),
    )


def _progress(line):
    print(line, file=sys.stderr, flush=True)


def _train_distributed(args, cfg, train_corpus, test_corpus):
    from . import roles

    if not args.peers or not args.listen:
        raise UsageError("--role requires --listen and --peers")
    topo = roles.Topology(args.peers.split(","), cfg.shards, cfg.workers)
    node = topo.node_of(args.listen)
    if args.role == "server":
        return roles.run_server(topo, node, train_corpus.V, cfg.K), None
    if args.role == "worker":
        return roles.run_worker(topo, node, train_corpus, cfg), None
    return EXIT_OK, roles.run_driver(topo, node, train_corpus, test_corpus, cfg, _progress)


def _report(args, model, vocab):
    for it, p in model.perplexity:
        print(f"iter={it} perplexity={format_perplexity(p)}")
    if model.final_perplexity is not None:
        print(f"final_perplexity={format_perplexity(model.final_perplexity)}")
    if args.out:
        export_csv(model.n_wk, model.n_k, args.beta, vocab, args.out)
        write_meta(args.out, topics=args.topics, alpha=args.alpha, beta=args.beta,
                   vocab_size=int(model.n_wk.shape[0]), seed=args.seed,
                   foldin_passes=args.foldin_passes, split=args.split, iterations=args.iterations,
                   final_perplexity=model.final_perplexity)


def cmd_train(args):
    _defaults(args)
    train_corpus, test_corpus = _load_data(args)
    cfg = _config(args)
    vocab = load_vocab(args.vocab, train_corpus.V)
    if args.role:
        code, model = _train_distributed(args, cfg, train_corpus, test_corpus)
        if model is None:
            return code
    else:
        model = Trainer(cfg, train_corpus, test_corpus, progress=_progress).run()
    _report(args, model, vocab)
    return EXIT_OK


def eval_perplexity(args) -> float:
    """Held-out perplexity of ``--model`` at full precision (what ``eval`` prints, unrounded)."""
    meta = read_meta(args.model)
    _defaults(args, meta)
    if not args.dataset:
        raise UsageError("--dataset is required")
    corpus = load_libsvm(args.dataset, V=args.vocab_size)
    V = args.vocab_size or corpus.V
    if args.split is not None:
        _, corpus = split(corpus, args.split, args.seed)
    vocab = load_vocab(args.vocab, V)
    n_wk, n_k = load_csv(args.model, vocab, V, args.topics)
    return perplexity(n_wk, n_k, args.alpha, args.beta, corpus, args.foldin_passes, args.seed)


def cmd_eval(args):
    print(f"perplexity={format_perplexity(eval_perplexity(args))}")
    return EXIT_OK


def _print_top(ranked):
    for line in format_top_words(ranked):
        print(line)
    sys.stdout.flush()


def _watch_remote(args):
    from .paramserver import RowPartitioning
    from .roles import parse_addr
    from .transport import SocketTransport

    if not args.listen:
        raise UsageError("polling a remote run needs --listen")
    if not args.vocab_size:
        raise UsageError("polling a remote run needs --vocab-size")
    shards = [parse_addr(p) for p in args.peers.split(",")]
    me = 1 << 20
    t = SocketTransport(*parse_addr(args.listen)).start()
    for n, addr in enumerate(shards):
        t.set_address(n, addr)
    client = PSClient(me, t, RowPartitioning(args.vocab_size, len(shards)), range(len(shards)),
                      args.topics, backoff=BackoffPolicy(initial_timeout=200.0, max_retries=4))
    vocab = load_vocab(args.vocab, args.vocab_size)
    done = 0
    try:
        while True:
            try:
                ranked = top_words(client, args.vocab_size, vocab, args.n)
            except TransportError:
                if done == 0:
                    print("error: training run is unreachable", file=sys.stderr)
                    return EXIT_TRANSPORT
                return EXIT_OK  # the run ended
            _print_top(ranked)
            done += 1
            if args.refreshes and done >= args.refreshes:
                return EXIT_OK
            time.sleep(args.interval)
    finally:
        t.close()


def cmd_topwords(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    _defaults(args)
    if args.peers and not args.role:
        return _watch_remote(args)
    train_corpus, test_corpus = _load_data(args)
    cfg = _config(args)
    vocab = load_vocab(args.vocab, train_corpus.V)
    shown = [0]

    def show(n_wk):
        if args.refreshes and shown[0] >= args.refreshes:
            return
        shown[0] += 1
        _print_top(top_words_from_counts(n_wk, vocab, args.n))

    trainer = Trainer(cfg, train_corpus, test_corpus, progress=_progress,
                      watch=(args.interval * 1000.0, show))
    model = trainer.run()
    _print_top(top_words_from_counts(model.n_wk, vocab, args.n))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "topwords": cmd_topwords}


def main(argv=None):
    level = os.environ.get("APSLDA_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"apslda {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusFormatError, ValueError, OSError) as exc:
        print(f"apslda {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, TransportError) as exc:
        print(f"apslda {args.command}: transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
