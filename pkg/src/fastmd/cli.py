"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 format error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .decode import MODES, DecodeConfig, decode, fit_ngram
from .io import load_corpus, load_model, save_corpus, save_model
from .metrics import bench, corpus_bleu, wer
from .model import LossWeights, MDModel, MDModelConfig
from .nnet import ConfigError
from .sampling import SamplingConfig, ctc_sample
from .synthetic import gen_synthetic
from .verify import SUITES, run_suite
from .vocab import FormatError

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_pair(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    return lo, hi


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--b-asr", type=int, default=16)
    p.add_argument("--b-st", type=int, default=4)
    p.add_argument("--k-mask", type=int, default=1)
    p.add_argument("--p-thres", type=float, default=0.9)
    p.add_argument("--ctc-weight", type=float, default=0.0)
    p.add_argument("--lm-weight", type=float, default=0.0)
    p.add_argument("--lm-order", type=int, default=3, help="n-gram order of the LM fit on corpus transcripts")
    p.add_argument("--max-len-ratio", type=float, default=1.0)


def _decode_config(args, mode: str) -> DecodeConfig:
    return DecodeConfig(mode=mode, b_asr=args.b_asr, b_st=args.b_st, k_mask=args.k_mask,
                        p_thres=args.p_thres, ctc_weight=args.ctc_weight, lm_weight=args.lm_weight,
                        max_len_ratio=args.max_len_ratio)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fastmd", description="Multi-decoder speech translation toolkit")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--n-utts", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--len-range", type=_int_pair, default=(3, 8))
    p.add_argument("--feature-dim", type=int, default=20)
    p.add_argument("--min-frames", type=int, default=0)

    p = sub.add_parser("init-model", help="write a seeded random checkpoint")
    p.add_argument("--corpus", required=True, help="corpus directory (vocab sizes, feature dim)")
    p.add_argument("--out", required=True)
    defaults = MDModelConfig(5, 5)
    for name in ("asr_encoder_layers", "asr_decoder_layers", "st_encoder_layers", "st_decoder_layers",
                 "d_model", "d_ff", "heads", "conv_kernel"):
        p.add_argument("--" + name.replace("_", "-"), type=int, default=getattr(defaults, name))
    p.add_argument("--encoder-kind", choices=("transformer", "conformer"), default="transformer")
    p.add_argument("--decoder-kind", choices=("autoregressive", "cmlm"), default="autoregressive")
    p.add_argument("--interctc-layers", default="6", help="comma-separated encoder layers, or empty")

    p = sub.add_parser("decode", help="decode a corpus in one mode")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=MODES, default="slow")
    _add_decode_flags(p)

    p = sub.add_parser("bench", help="compare decoding modes")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--modes", default="slow,fast_parallel")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--table", help="also write a CSV table here")
    _add_decode_flags(p)

    p = sub.add_parser("loss", help="per-utterance loss breakdown")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--sample-ctc", action="store_true")
    p.add_argument("--theta-cer", type=float, default=0.4)
    p.add_argument("--lambda-asr", type=float, default=0.5)
    p.add_argument("--lambda-ctc", type=float, default=0.3)
    p.add_argument("--lambda-inter", type=float, default=0.3)

    p = sub.add_parser("verify", help="run built-in correctness checks")
    p.add_argument("--suite", choices=SUITES, default="all")
    return parser


def _cmd_gen(args, out) -> int:
    corpus = gen_synthetic(args.seed, args.n_utts, args.vocab_size, args.len_range,
                           args.feature_dim, args.min_frames)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.records)} utterances to {args.out}", file=out)
    return EXIT_OK


def _cmd_init_model(args, out) -> int:
    corpus = load_corpus(args.corpus)
    inter = tuple(int(v) for v in args.interctc_layers.split(",") if v.strip())
    config = MDModelConfig(
        asr_vocab_size=len(corpus.src_vocab), st_vocab_size=len(corpus.tgt_vocab),
        feat_dim=next(iter(corpus.features.values())).shape[1],
        asr_encoder_layers=args.asr_encoder_layers, asr_decoder_layers=args.asr_decoder_layers,
        st_encoder_layers=args.st_encoder_layers, st_decoder_layers=args.st_decoder_layers,
        d_model=args.d_model, d_ff=args.d_ff, heads=args.heads, conv_kernel=args.conv_kernel,
        encoder_kind=args.encoder_kind, decoder_kind=args.decoder_kind, interctc_layers=inter)
    save_model(MDModel.initialize(config, seed=args.seed), args.out)
    print(f"wrote {args.out}", file=out)
    return EXIT_OK


def _lm_for(args, corpus, model):
    if args.lm_weight <= 0:
        return None
    return fit_ngram([corpus.src_ids(r) for r in corpus.records], args.lm_order, model.config.asr_vocab_size)


def _cmd_decode(args, out) -> int:
    model, corpus = load_model(args.model), load_corpus(args.corpus)
    cfg = _decode_config(args, args.mode)
    lm = _lm_for(args, corpus, model)
    hyps, refs, words, word_refs = [], [], [], []
    for rec in corpus.records:
        res = decode(model, corpus.features[rec.feature_key], cfg, lm)
        transcript = corpus.src_vocab.detokenize(res.transcript)
        translation = corpus.tgt_vocab.detokenize(res.translation)
        c = res.counters
        print(f"{rec.id}\ttranscript={transcript}\ttranslation={translation}\t"
              f"asr_decoder_passes={c.asr_decoder_passes}\tst_decoder_passes={c.st_decoder_passes}", file=out)
        words.append(transcript)
        word_refs.append(corpus.src_vocab.detokenize(corpus.src_ids(rec)))
        hyps.append(translation)
        refs.append([corpus.tgt_vocab.detokenize(corpus.tgt_ids(rec))])
    mean_wer = float(np.mean([wer(h, r) for h, r in zip(words, word_refs)]))
    print(f"summary\tmode={args.mode}\twer={mean_wer:.4f}\tbleu={corpus_bleu(hyps, refs):.2f}", file=out)
    return EXIT_OK


def _cmd_bench(args, out) -> int:
    model, corpus = load_model(args.model), load_corpus(args.corpus)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    configs = [_decode_config(args, m) for m in modes]
    feats = [corpus.features[r.feature_key] for r in corpus.records]
    report = bench(model, feats, configs, runs=args.runs, baseline=modes[0])
    out.write(report.to_text())
    if args.table:
        Path(args.table).write_text(report.to_table())
    return EXIT_OK


def _cmd_loss(args, out) -> int:
    model, corpus = load_model(args.model), load_corpus(args.corpus)
    weights = LossWeights(args.lambda_asr, args.lambda_ctc, args.lambda_inter)
    rng = np.random.default_rng(args.seed)
    sampling = SamplingConfig(theta_cer=args.theta_cer, rng_seed=args.seed)
    for rec in corpus.records:
        x = corpus.features[rec.feature_key]
        y_src, y_tgt = corpus.src_ids(rec), corpus.tgt_ids(rec)
        conditioning, note = None, ""
        if args.sample_ctc:
            outcome = ctc_sample(model, x, y_src, corpus.src_vocab, sampling, rng)
            conditioning = outcome.tokens
            note = f"\tused_ctc={int(outcome.used_ctc)}\tcer={outcome.cer:.4f}"
        lb = model.compute_losses(x, y_src, y_tgt, weights, conditioning=conditioning, rng=rng)
        print(f"{rec.id}\tl_total={lb.l_total:.6f}\tl_st={lb.l_st:.6f}\tl_asr_trf={lb.l_asr_trf:.6f}\t"
              f"l_asr_ctc={lb.l_asr_ctc:.6f}\tl_inter_mean={lb.l_inter_mean:.6f}{note}", file=out)
    return EXIT_OK


def _cmd_verify(args, out) -> int:
    results = run_suite(args.suite, args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}", file=out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {
    "gen": _cmd_gen, "init-model": _cmd_init_model, "decode": _cmd_decode,
    "bench": _cmd_bench, "loss": _cmd_loss, "verify": _cmd_verify,
}


def run_cli(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except (FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_cli())
