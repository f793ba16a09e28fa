"""Command-line entry point: corpus generation, entropy analysis, mask
previews, training, generation, evaluation and run comparison.

Exit codes are stable: 0 success, 2 usage/input error, 3 failed
self-check, 4 integrity mismatch, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import corpus as corpus_mod
from .checkpoint import load_checkpoint
from .configfile import (
    ConfigError,
    load_config_file,
    mask_config_from,
    model_config_from,
    reject_unknown,
    train_config_from,
    train_config_to_flat,
)
from .evaluate import (
    EvalReport,
    compare_runs,
    exact_match_eval,
    reconstruction_eval,
    render_comparison,
)
from .manifest import (
    MANIFEST_NAME,
    IntegrityError,
    file_hash,
    read_manifest,
    write_manifest,
)
from .masking import MaskConfig, compose_mask_plan, plan_to_json
from .model import ModelConfig
from .rng import substream
from .sampler import DecodeConfig, generate
from .tokenizer import (
    TokenizeError,
    TokenizerConfig,
    build_vocab,
    detokenize,
    encode_prompt,
    load_vocab,
    save_vocab,
)
from .trainer import MODE_DSFT, MODE_SFT, TrainConfig, split_checkpoint_tensors, train

log = logging.getLogger("dsft")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_SELFCHECK = 3
EXIT_INTEGRITY = 4


class SelfCheckFailure(RuntimeError):
    pass


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _load_kv(path: str | None) -> dict[str, str]:
    return dict(load_config_file(path)) if path else {}


def _ensure_out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_records(path: str):
    records = corpus_mod.ingest_jsonl(path)
    if not records:
        raise ConfigError(f"corpus {path} contains no records")
    return records


def cmd_gen_corpus(args) -> int:
    spec = corpus_mod.GeneratorSpec(
        count=args.count,
        ops=tuple(args.ops),
        min_operand=args.min_operand,
        max_operand=args.max_operand,
        min_steps=args.min_steps,
        max_steps=args.max_steps,
    )
    records = corpus_mod.generate_corpus(spec, args.seed)
    verified = sum(corpus_mod.verify_record(r) for r in records)
    if verified != len(records):
        raise RuntimeError("generated corpus failed arithmetic re-check")

    out_dir = _ensure_out_dir(args.out)
    corpus_path = os.path.join(out_dir, "corpus.jsonl")
    corpus_mod.export_jsonl(records, corpus_path)
    stats = {
        "records": len(records),
        "verified_equations": verified,
        "seed": args.seed,
        "corpus_sha256": file_hash(corpus_path),
    }
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d records to %s", len(records), corpus_path)
    print(corpus_path)
    return EXIT_OK


def _vocab_for(args, records):
    if args.vocab:
        return load_vocab(args.vocab), args.vocab
    vocab = build_vocab(
        (r.prompt + " " + r.completion for r in records),
        TokenizerConfig(min_word_freq=args.min_word_freq),
    )
    return vocab, None


def cmd_analyze(args) -> int:
    records = _load_records(args.corpus)
    vocab, _ = _vocab_for(args, records)
    seqs = [corpus_mod.record_to_sequence(r, vocab) for r in records]
    report = corpus_mod.entropy_report(seqs, vocab)
    numeric, stopword, stopwords = corpus_mod.surprisal_comparison(seqs, vocab)

    payload = report.to_json_dict()
    payload["numeric_mean_surprisal_nats"] = numeric
    payload["stopword_mean_surprisal_nats"] = stopword
    payload["stopwords"] = stopwords
    payload["numeric_exceeds_stopwords"] = numeric > stopword

    print(report.render_table())
    print(f"numeric surprisal {numeric:.6f} vs top-10 word surprisal {stopword:.6f}")
    if args.out:
        out_dir = _ensure_out_dir(args.out)
        with open(os.path.join(out_dir, "entropy.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "entropy.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.render_table() + "\n")
        if args.save_vocab:
            save_vocab(vocab, os.path.join(out_dir, "vocab.txt"))
    if numeric <= stopword:
        raise SelfCheckFailure(
            f"numeric mean surprisal {numeric:.6f} does not exceed "
            f"stopword mean surprisal {stopword:.6f}"
        )
    return EXIT_OK


def _mask_config_for_mode(mode: str, kv: dict[str, str]) -> MaskConfig:
    mask = mask_config_from(kv)
    if mode == MODE_SFT:
        return MaskConfig.sft_baseline(epsilon=mask.epsilon)
    return mask


def cmd_mask_preview(args) -> int:
    records = _load_records(args.corpus)
    if args.limit:
        records = records[: args.limit]
    vocab, _ = _vocab_for(args, records)
    kv = _load_kv(args.config)
    mask_config = _mask_config_for_mode(args.mode, kv)
    model_config_from(kv, len(vocab))  # consume model keys if present
    reject_unknown({k: v for k, v in kv.items() if not k.startswith("train.")})

    lines = []
    for i, rec in enumerate(records):
        try:
            seq = corpus_mod.record_to_sequence(rec, vocab)
        except TokenizeError as exc:
            raise ConfigError(f"record {i}: {exc}") from exc
        plan = compose_mask_plan(
            seq, mask_config, args.step, substream(args.seed, "mask-preview", i)
        )
        lines.append(plan_to_json(seq, plan))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        log.info("wrote %d mask plans to %s", len(lines), args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _build_train_config(args, kv: dict[str, str], vocab_size: int) -> TrainConfig:
    mask = _mask_config_for_mode(args.mode, kv)
    model = model_config_from(kv, vocab_size)
    config = train_config_from(kv, model, mask, args.mode, args.seed)
    reject_unknown(kv)
    overrides = {}
    for flag, name in (
        ("steps", "steps"),
        ("batch_size", "batch_size"),
        ("learning_rate", "learning_rate"),
        ("w_num", "w_num"),
        ("workers", "workers"),
        ("checkpoint_every", "checkpoint_every"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    return config


def cmd_train(args) -> int:
    if args.from_manifest:
        manifest = read_manifest(args.from_manifest, verify=True)
        kv = dict(manifest["config"])
        args.seed = manifest["seed"]
        args.corpus = manifest["inputs"]["corpus"]["path"]
        args.vocab = manifest["inputs"]["vocab"]["path"]
        args.mode = kv.pop("mode", args.mode)

    records = _load_records(args.corpus)
    out_dir = _ensure_out_dir(args.out)
    if args.vocab:
        vocab = load_vocab(args.vocab)
        vocab_path = args.vocab
    else:
        vocab = build_vocab(
            (r.prompt + " " + r.completion for r in records),
            TokenizerConfig(min_word_freq=args.min_word_freq),
        )
        vocab_path = os.path.join(out_dir, "vocab.txt")
        save_vocab(vocab, vocab_path)

    kv = dict(manifest["config"]) if args.from_manifest else _load_kv(args.config)
    kv.pop("mode", None)
    config = _build_train_config(args, kv, len(vocab))

    start_params = start_opt = None
    start_step = 0
    if args.resume:
        tensors, ckpt_model, ckpt_step, _, meta = load_checkpoint(args.resume)
        if ckpt_model != config.model:
            raise IntegrityError("resume checkpoint has a different model config")
        if meta.get("vocab_hash") and meta["vocab_hash"] != file_hash(vocab_path):
            raise IntegrityError("resume checkpoint was trained with a different vocabulary")
        start_params, start_opt = split_checkpoint_tensors(tensors)
        if start_opt is not None:
            start_opt.t = int(meta.get("opt_t", ckpt_step))
        start_step = ckpt_step

    log_path = os.path.join(out_dir, "train_log.jsonl")
    log_fh = open(log_path, "a" if args.resume else "w", encoding="utf-8")

    def on_report(report):
        log_fh.write(json.dumps(report.to_json_dict(), sort_keys=True) + "\n")
        if report.step % 100 == 0:
            log.info("step %d loss %.4f", report.step, report.loss)

    try:
        train(
            config,
            records,
            vocab,
            out_dir=out_dir,
            on_report=on_report,
            start_params=start_params,
            start_opt=start_opt,
            start_step=start_step,
            ckpt_meta={"vocab_hash": file_hash(vocab_path), "mode": config.mode},
        )
    finally:
        log_fh.close()

    flat = train_config_to_flat(config)
    flat["mode"] = config.mode
    write_manifest(
        out_dir,
        "train",
        config.seed,
        flat,
        inputs={"corpus": args.corpus, "vocab": vocab_path},
        artifacts={"checkpoint": "ckpt_final.json", "log": "train_log.jsonl"},
    )
    print(os.path.join(out_dir, "ckpt_final.json"))
    return EXIT_OK


def _load_model(ckpt_path: str):
    tensors, model_config, step, seed, meta = load_checkpoint(ckpt_path)
    params, _ = split_checkpoint_tensors(tensors)
    return params, model_config, step, seed, meta


def cmd_generate(args) -> int:
    params, model_config, _, _, meta = _load_model(args.ckpt)
    vocab = load_vocab(args.vocab)
    if meta.get("vocab_hash") and meta["vocab_hash"] != file_hash(args.vocab):
        raise IntegrityError("vocabulary does not match the checkpoint's vocab hash")
    decode = DecodeConfig(
        steps=args.decode_steps,
        completion_len=args.completion_len,
        temperature=args.temperature,
    )
    rng = substream(args.seed, "decode") if args.temperature > 0 else None
    trace: list | None = [] if args.trace else None
    ids = encode_prompt(args.prompt, vocab)
    completion = generate(params, model_config, ids, decode, rng, trace)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for step in trace:
                fh.write(json.dumps(step.to_json_dict(), sort_keys=True) + "\n")
    print(detokenize(completion, vocab))
    return EXIT_OK


def cmd_eval(args) -> int:
    params, model_config, _, _, meta = _load_model(args.ckpt)
    vocab = load_vocab(args.vocab)
    if meta.get("vocab_hash") and meta["vocab_hash"] != file_hash(args.vocab):
        raise IntegrityError(
            "checkpoint vocab hash does not match the supplied vocabulary"
        )
    records = _load_records(args.corpus)

    exact = None
    exact_log = None
    if args.exact_match:
        decode = DecodeConfig(
            steps=args.decode_steps, completion_len=args.completion_len, temperature=0.0
        )
        exact, exact_log = exact_match_eval(
            params, model_config, records, vocab, decode
        )
    report = reconstruction_eval(
        params, model_config, records, vocab, args.seed, exact_match=exact
    )

    out_dir = _ensure_out_dir(args.out)
    with open(os.path.join(out_dir, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    if exact_log is not None:
        with open(os.path.join(out_dir, "exact_match_log.jsonl"), "w", encoding="utf-8") as fh:
            for entry in exact_log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    write_manifest(
        out_dir,
        "eval",
        args.seed,
        {"decode.steps": str(args.decode_steps), "decode.completion_len": str(args.completion_len)},
        inputs={"corpus": args.corpus, "vocab": args.vocab, "checkpoint": args.ckpt},
        artifacts={"report": "eval.json"},
    )
    print(json.dumps(report.to_json_dict(), sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    def load_report(run_dir: str) -> EvalReport:
        path = os.path.join(run_dir, "eval.json")
        with open(path, "r", encoding="utf-8") as fh:
            return EvalReport.from_json_dict(json.load(fh))

    a = load_report(args.run_a)
    b = load_report(args.run_b)
    if a.fingerprint != b.fingerprint or a.seed != b.seed:
        raise IntegrityError(
            "eval reports were produced on different corpora or eval seeds"
        )
    rows = compare_runs(a, b)
    print(render_comparison(rows))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsft",
        description="Desk-scale workbench for masked-denoising fine-tuning techniques",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-corpus", help="generate a synthetic arithmetic corpus")
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops", default="+-*/")
    p.add_argument("--min-operand", type=int, default=2)
    p.add_argument("--max-operand", type=int, default=99)
    p.add_argument("--min-steps", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("analyze", help="entropy and surprisal analysis of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab")
    p.add_argument("--min-word-freq", type=int, default=2)
    p.add_argument("--out")
    p.add_argument("--save-vocab", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mask-preview", help="dump mask plans for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab")
    p.add_argument("--min-word-freq", type=int, default=2)
    p.add_argument("--mode", choices=[MODE_SFT, MODE_DSFT], default=MODE_DSFT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mask_preview)

    p = sub.add_parser("train", help="train a denoiser")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--min-word-freq", type=int, default=2)
    p.add_argument("--mode", choices=[MODE_SFT, MODE_DSFT], default=MODE_DSFT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--from-manifest")
    p.add_argument("--resume")
    p.add_argument("--steps", type=_positive_int)
    p.add_argument("--batch-size", type=_positive_int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--w-num", type=float, dest="w_num")
    p.add_argument("--workers", type=_positive_int)
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a completion for a prompt")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--decode-steps", type=_positive_int, default=16, dest="decode_steps")
    p.add_argument("--completion-len", type=_positive_int, default=32, dest="completion_len")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact-match", action="store_true")
    p.add_argument("--decode-steps", type=_positive_int, default=16, dest="decode_steps")
    p.add_argument("--completion-len", type=_positive_int, default=32, dest="completion_len")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare two eval runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--json")
    p.set_defaults(func=cmd_compare)

    return parser


def _configure_logging() -> None:
    level = os.environ.get("DSFT_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.func(args)
    except SelfCheckFailure as exc:
        print(f"self-check failed: {exc}", file=sys.stderr)
        return EXIT_SELFCHECK
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, corpus_mod.CorpusFormatError, TokenizeError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # pragma: no cover - defensive
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
