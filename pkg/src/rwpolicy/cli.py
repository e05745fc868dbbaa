"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

from .corpus import (SyntheticLanguageSpec, Vocab, gen_synthetic, load_parallel, load_sources,
                     read_action_records, read_actions, write_actions, write_parallel)
from .errors import ConfigError, ContractError, CorpusError, RWPolicyError
from .harness import (DEFAULT_RHOS, PolicyRun, SweepSpec, baseline_runs, resolve_vocab, run_pipeline,
                      run_policy, run_sweep, write_trajectories)
from .metrics import corpus_bleu, latency_report, sentence_bleu
from .oracle import KEPT, OracleConfig, generate_corpus, record_rows
from .policy import PolicyParams, TrainConfig, train
from .translator import load_model

log = logging.getLogger("rwpolicy")

EXIT_CONFIG = 2
EXIT_STAGE = 3


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _pairs(text):
    """'2:2,3:1' -> [(2, 2), (3, 1)]"""
    out = []
    for item in text.split(","):
        try:
            a, b = item.split(":")
            out.append((int(a), int(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected s0:delta pairs, got {item!r}") from None
    return out


def _al_max(text):
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}") from None


def _model(args):
    try:
        return load_model(args.model)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    try:
        spec = SyntheticLanguageSpec(args.language, args.vocab_size, args.min_len, args.max_len,
                                     args.seed, tuple(args.weights))
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    pairs = gen_synthetic(spec, args.n, args.start_id)
    vocab = Vocab.synthetic(args.vocab_size)
    write_parallel(args.out_src, args.out_tgt, pairs, vocab)
    if args.vocab_out:
        vocab.save(args.vocab_out)
    log.info("wrote %d pairs", len(pairs))


def cmd_gen_oracle(args):
    model = _model(args)
    pairs = load_parallel(args.src, args.tgt, resolve_vocab(args.vocab, model))
    records, stats = generate_corpus(pairs, OracleConfig(args.rank, args.al_max), model, args.workers)
    write_actions(args.out, record_rows(records))
    if args.stats:
        _dump_json(stats, args.stats)
    for r in records:
        if r.error:
            log.warning("%s", r.error)
    print(json.dumps(stats, sort_keys=True))
    if stats["rejected"]["error"]:
        return EXIT_STAGE
    return 0


def cmd_train(args):
    model = _model(args)
    pairs = load_parallel(args.src, args.tgt, resolve_vocab(args.vocab, model))
    by_id = {p.pair_id: p for p in pairs}
    examples = []
    for rec in read_action_records(args.seqs):
        pair_id, actions = rec[0], rec[1]
        status = rec[2] if len(rec) > 2 else KEPT
        if status != KEPT or not actions:
            continue
        if pair_id not in by_id:
            raise ConfigError(f"{args.seqs}: pair {pair_id} not in the corpus")
        examples.append((by_id[pair_id], actions))
    if args.max_examples:
        examples = examples[:args.max_examples]
    if not examples:
        raise ConfigError(f"{args.seqs}: no kept sequences")
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                      hidden=args.hidden, fc=args.fc, heldout=args.heldout)
    result = train(examples, model, cfg)
    result.params.save(args.out)
    if args.history:
        _dump_json(result.history, args.history)
    if result.history:
        print(json.dumps(result.history[-1], sort_keys=True))


def _decode_files(args, run, params=None):
    model = _model(args)
    vocab = resolve_vocab(args.vocab, model)
    sources = load_sources(args.src, vocab)
    trajs = run_policy(run, sources, model, params, args.max_len, args.workers)
    write_trajectories(trajs, range(len(sources)), vocab, args.out, args.actions)
    failed = [(k, t.error) for k, t in enumerate(trajs) if t.error]
    for pair_id, err in failed:
        log.error("pair %d: %s", pair_id, err)
    return EXIT_STAGE if failed else 0


def cmd_decode(args):
    if not 0.0 <= args.rho <= 1.0:
        raise ConfigError("--rho must be in [0, 1]")
    params = PolicyParams.load(args.policy)
    return _decode_files(args, PolicyRun("sl", args.rho, args.greedy), params)


def cmd_baseline(args):
    if args.type == "waitk":
        if args.k is None:
            raise ConfigError("--type waitk needs --k")
        run = baseline_runs(wait_k=[args.k])[0]
    else:
        if args.s0 is None or args.delta is None:
            raise ConfigError(f"--type {args.type} needs --s0 and --delta")
        pairs = [(args.s0, args.delta)]
        run = baseline_runs(wiw=pairs)[0] if args.type == "wiw" else baseline_runs(wid=pairs)[0]
    return _decode_files(args, run)


def _read_tokens(path):
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def cmd_eval(args):
    for p in (args.hyp, args.ref, args.actions, args.src):
        if not os.path.exists(p):
            raise ConfigError(f"{p}: no such file")
    hyps, refs, srcs = _read_tokens(args.hyp), _read_tokens(args.ref), _read_tokens(args.src)
    acts = dict(read_actions(args.actions))
    n = len(refs)
    if len(hyps) != n or len(srcs) != n:
        raise CorpusError(f"line counts differ: hyp {len(hyps)}, ref {n}, src {len(srcs)}")
    if sorted(acts) != list(range(n)):
        raise CorpusError(f"{args.actions}: expected one action line per sentence 0..{n - 1}")
    rows = []
    for k in range(n):
        if not acts[k]:
            raise CorpusError(f"{args.actions}: pair {k} has no action sequence")
        # the source EOS is a readable word
        rep = latency_report(acts[k], len(srcs[k]) + 1)
        rows.append((k, rep, sentence_bleu(hyps[k], refs[k])))
    bleu = corpus_bleu(hyps, refs)
    out = {
        "bleu": bleu.bleu,
        "al": math.fsum(r.al for _, r, _ in rows) / n,
        "ap": math.fsum(r.ap for _, r, _ in rows) / n,
        "cw": math.fsum(r.cw for _, r, _ in rows) / n,
        "n": n,
    }
    print(json.dumps(out, sort_keys=True))
    if args.per_sentence:
        with open(args.per_sentence, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["pair_id", "al", "ap", "cw", "bleu", "truncated"])
            for k, r, b in rows:
                w.writerow([k, repr(r.al), repr(r.ap), repr(r.cw), repr(b), int(r.truncated)])


def cmd_sweep(args):
    baselines = tuple(baseline_runs(args.wait_k or (), args.wiw or (), args.wid or ()))
    spec = SweepSpec(args.src, args.tgt, args.model, args.policy, tuple(args.rhos), baselines,
                     args.vocab, args.seed, args.max_len, args.workers)
    points = run_sweep(spec, args.out, args.figure)
    if args.out is None:
        for p in points:
            print(",".join(p.row()))


def cmd_pipeline(args):
    manifest = run_pipeline(args.config, args.out, force=args.force)
    print(json.dumps({"status": manifest["status"], "stages": manifest["stages"]}, sort_keys=True))


def cmd_serve(args):
    from .adapter import PredictorServer
    model = _model(args)
    sources = None
    if args.src:
        sources = load_sources(args.src, resolve_vocab(args.vocab, model))
    server = PredictorServer(model, sources, topk=args.topk)
    if args.port is None:
        server.serve_stdio()
        return 0
    tcp = server.tcp_server(args.host, args.port)
    host, port = tcp.server_address[:2]
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        tcp.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        tcp.server_close()
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwpolicy", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def model_args(p, vocab=True):
        p.add_argument("--model", required=True,
                       help="toy:<language>[:noise=p:blur=b:...] or adapter:<host:port|stdio:cmd>")
        if vocab:
            p.add_argument("--vocab", help="vocabulary file (default: w2..w{V-1} for the model's V)")

    p = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    p.add_argument("--language", default="mix", choices=["copy", "swap2", "rotate1", "mix"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--vocab-size", type=int, default=32)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--weights", type=_floats, default=[1.0, 1.0, 1.0],
                   help="copy,swap2,rotate1 shares for mix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--vocab-out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-oracle", help="oracle READ/WRITE sequences for a parallel corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    model_args(p)
    p.add_argument("--rank", type=int, default=50)
    p.add_argument("--al-max", type=_al_max, default=3.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=cmd_gen_oracle)

    p = sub.add_parser("train", help="fit a policy to kept oracle sequences")
    p.add_argument("--seqs", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    model_args(p)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--fc", type=int, default=16)
    p.add_argument("--heldout", type=float, default=0.1)
    p.add_argument("--max-examples", type=int, default=0, help="use the first N kept sequences (0 = all)")
    p.add_argument("--history", help="write per-epoch loss/accuracy JSON here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    def decode_outputs(p):
        p.add_argument("--src", required=True)
        p.add_argument("--out", required=True, help="hypothesis file")
        p.add_argument("--actions", required=True, help="action TSV")
        p.add_argument("--max-len", type=int)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("decode", help="simultaneous decoding with a trained policy")
    p.add_argument("--policy", required=True)
    model_args(p)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--greedy", action="store_true", help="READ iff the READ logit is larger")
    decode_outputs(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("baseline", help="test-time wait-k, Wait-If-Worse or Wait-If-Diff")
    p.add_argument("--type", required=True, choices=["waitk", "wiw", "wid"])
    p.add_argument("--k", type=int)
    p.add_argument("--s0", type=int)
    p.add_argument("--delta", type=int)
    model_args(p)
    decode_outputs(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="BLEU and latency of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--actions", required=True)
    p.add_argument("--src", required=True, help="source file, for sentence lengths")
    p.add_argument("--per-sentence", help="write per-sentence CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="latency-quality curve over a rho grid and baselines")
    p.add_argument("--policy")
    model_args(p)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--rhos", type=_floats, default=list(DEFAULT_RHOS))
    p.add_argument("--wait-k", type=_ints)
    p.add_argument("--wiw", type=_pairs, help="s0:delta[,s0:delta...]")
    p.add_argument("--wid", type=_pairs, help="s0:delta[,s0:delta...]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="curves CSV (default: print rows)")
    p.add_argument("--figure", help="also render BLEU-vs-AL curves to this image")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline", help="run data, oracle, train, decode and report from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="experiment directory")
    p.add_argument("--force", action="store_true", help="write into an existing directory")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("serve", help="serve a predictor over the JSON line protocol")
    model_args(p)
    p.add_argument("--src", help="source file; request ids index into it")
    p.add_argument("--topk", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, help="TCP port (0 picks one); default is stdin/stdout")
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (ConfigError, CorpusError, ContractError, OSError) as exc:
        print(f"rwpolicy {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RWPolicyError as exc:
        print(f"rwpolicy {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
