"""Command line entry point: ``constrained-ec <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
Set ``CONSTRAINED_EC_LOG`` (DEBUG, INFO, ...) to change log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import __version__
from .alignment import MalformedExample, make_labels
from .corpus import (
    DEFAULT_PROFILE, ERROR_TYPES, CorpusFormatError, CorpusPair, ErrorProfile,
    generate_references, inject_errors, load_confusions, load_corpus, save_corpus,
)
from .model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from .tokenizer import ConfigurationError, Vocabulary, build_vocab, tokenize

logger = logging.getLogger("constrained_ec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

SYSTEM_FLAGS = {
    "constrained_lstm": "lstm_model",
    "constrained_trans": "trans_model",
    "baseline": "baseline_model",
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_lines(path) -> List[str]:
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    return path


def _load_vocab(path) -> Vocabulary:
    return Vocabulary.load(_require(path))


def _load_pairs(path, fmt=None) -> List[CorpusPair]:
    return load_corpus(_require(path), fmt)


def _read_config_file(path) -> dict:
    """``key=value`` lines, or a JSON object when the file ends in .json."""
    text = _require(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        return json.loads(text)
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(value, default):
    if isinstance(value, str) and "," in value:
        return tuple(float(v) for v in value.split(","))
    if isinstance(value, str):
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    return value


def _resolve(cls, file_values: dict, flag_values: dict, **fixed):
    """Build a dataclass: flags win over the config file, which wins over defaults."""
    kwargs = dict(fixed)
    for f in dataclasses.fields(cls):
        if f.name in fixed:
            continue
        if flag_values.get(f.name) is not None:
            kwargs[f.name] = flag_values[f.name]
        elif f.name in file_values:
            default = f.default if f.default is not dataclasses.MISSING else None
            kwargs[f.name] = _coerce(file_values[f.name], default)
    return cls(**kwargs)


def _write_manifest(target, args, config: Optional[dict] = None, outputs=(), started=None) -> None:
    manifest = {
        "subcommand": args.command,
        "argv": sys.argv[1:],
        "config": config or {},
        "seed": getattr(args, "seed", None),
        "inputs": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
        "outputs": [str(o) for o in outputs],
        "code_version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    Path(str(target) + ".manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def _parse_profile(spec: Optional[str]) -> ErrorProfile:
    if not spec:
        return DEFAULT_PROFILE
    rates = {}
    for item in spec.split(","):
        key, _, value = item.partition("=")
        if key not in ERROR_TYPES:
            raise UsageError(f"unknown error type {key!r}; choose from {', '.join(ERROR_TYPES)}")
        rates[key] = float(value)
    try:
        return ErrorProfile(**rates)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# subcommands

def cmd_build_vocab(args) -> int:
    lines: List[str] = []
    for path in args.corpus or []:
        for pair in _load_pairs(path):
            lines += [pair.asr_text, pair.ref_text]
    for path in args.text or []:
        lines += _read_lines(path)
    if not args.corpus and not args.text:
        raise UsageError("build-vocab needs --corpus or --text")
    vocab = build_vocab(lines, args.max_size, args.min_freq)
    vocab.save(args.out)
    _write_manifest(args.out, args, {"max_size": args.max_size, "min_freq": args.min_freq},
                    [args.out], args.started)
    print(f"wrote {len(vocab)} tokens to {args.out}")
    return EXIT_OK


def cmd_inject_errors(args) -> int:
    if args.refs:
        refs = [line for line in _read_lines(args.refs) if line.strip()]
    elif args.generate:
        refs = generate_references(args.generate, args.seed)
    else:
        raise UsageError("inject-errors needs --refs or --generate")
    confusions = load_confusions(_require(args.confusions)) if args.confusions else None
    profile = _parse_profile(args.profile)
    pairs = inject_errors(refs, profile, args.seed, confusions)
    save_corpus(pairs, args.out)
    _write_manifest(args.out, args, {"profile": profile.rates()}, [args.out], args.started)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return EXIT_OK


def cmd_make_labels(args) -> int:
    vocab = _load_vocab(args.vocab)
    if args.corpus:
        pairs = [(p.asr_text, p.ref_text) for p in _load_pairs(args.corpus)]
    elif args.asr and args.ref:
        asr, ref = _read_lines(args.asr), _read_lines(args.ref)
        if len(asr) != len(ref):
            raise DataError(f"{args.asr} has {len(asr)} lines but {args.ref} has {len(ref)}")
        pairs = list(zip(asr, ref))
    else:
        raise UsageError("make-labels needs --corpus or both --asr and --ref")
    with open(args.out, "w", encoding="utf-8") as fh:
        for lineno, (x, t) in enumerate(pairs, 1):
            labeled = make_labels(tokenize(x, vocab), tokenize(t, vocab))
            try:
                labeled.validate()
            except MalformedExample as exc:
                raise DataError(f"pair {lineno}: {exc}") from None
            fh.write(json.dumps(labeled.to_record()) + "\n")
    _write_manifest(args.out, args, {}, [args.out], args.started)
    print(f"wrote {len(pairs)} labeled examples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import TrainConfig, train, train_baseline

    vocab = _load_vocab(args.vocab)
    pairs = _load_pairs(args.corpus)
    valid = _load_pairs(args.valid) if args.valid else None
    file_values = _read_config_file(args.config) if args.config else {}
    flags = vars(args)
    decoder = args.decoder or file_values.get("decoder", "transformer")
    if decoder not in ("lstm", "transformer", "baseline"):
        raise UsageError(f"unknown decoder {decoder!r}")
    model_cfg = _resolve(
        ModelConfig, file_values, flags, vocab_size=len(vocab),
        decoder_kind="transformer" if decoder == "baseline" else decoder,
    )
    train_cfg = _resolve(TrainConfig, file_values, flags, checkpoint_path=args.out)
    fit = train_baseline if decoder == "baseline" else train
    result = fit(pairs, train_cfg, model_cfg, vocab, valid)
    save_checkpoint(args.out, result.model, vocab.digest(), {"best_epoch": result.best_epoch})
    _write_manifest(
        args.out, args,
        {"model": model_cfg.to_dict(), "train": dataclasses.asdict(train_cfg), "decoder": decoder},
        [args.out] + ([args.log_path] if args.log_path else []), args.started,
    )
    print(f"best epoch {result.best_epoch}; checkpoint written to {args.out}")
    return EXIT_OK


def _load_model(path, vocab: Vocabulary):
    model, _ = load_checkpoint(_require(path), vocab.digest())
    return model


def cmd_correct(args) -> int:
    from .inference import system

    vocab = _load_vocab(args.vocab)
    model = _load_model(args.model, vocab)
    run = system(model, vocab)
    lines = _read_lines(args.input)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for line in lines:
            result = run(line)
            if args.emit_tags:
                record = result.to_record(vocab)
                record["input"] = line
                out.write(json.dumps(record) + "\n")
            else:
                out.write(result.output_text + "\n")
    finally:
        if args.output:
            out.close()
    if args.output:
        _write_manifest(args.output, args, {}, [args.output], args.started)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import correction_ratio_by_type, format_table, wer
    from .inference import correct_batch

    vocab = _load_vocab(args.vocab)
    pairs = _load_pairs(args.corpus)
    if not pairs:
        raise DataError(f"{args.corpus} holds no pairs")
    asr = [p.asr_text for p in pairs]
    refs = [p.ref_text for p in pairs]
    report = {"wer": {"original": wer(asr, refs).to_dict()}, "correction_ratio": {}}
    for path in args.model:
        name = Path(path).stem
        outputs = [r.output_text for r in correct_batch(asr, _load_model(path, vocab), vocab)]
        report["wer"][name] = wer(outputs, refs).to_dict()
        if any(p.error_types for p in pairs):
            report["correction_ratio"][name] = correction_ratio_by_type(list(zip(pairs, outputs))).to_dict()
    rows = [(name, r["wer"] * 100, r["substitutions"], r["deletions"], r["insertions"], r["ref_words"])
            for name, r in report["wer"].items()]
    print(format_table(rows, ["system", "WER %", "S", "D", "I", "N"]))
    for name, r in report["correction_ratio"].items():
        print(f"\ncorrection ratio ({name})")
        print(format_table([(t, v) for t, v in r["ratios"].items()], ["error type", "ratio"]))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
        _write_manifest(args.out, args, {}, [args.out], args.started)
    return EXIT_OK


def cmd_bench(args) -> int:
    import torch

    from .evaluation import bench_latency, format_table
    from .inference import system

    torch.set_num_threads(1)
    vocab = _load_vocab(args.vocab)
    names = [s.strip() for s in args.systems.split(",") if s.strip()]
    systems = []
    for name in names:
        if name not in SYSTEM_FLAGS:
            raise UsageError(f"unknown system {name!r}; choose from {', '.join(SYSTEM_FLAGS)}")
        path = getattr(args, SYSTEM_FLAGS[name])
        if not path:
            raise UsageError(f"system {name} needs --{SYSTEM_FLAGS[name].replace('_', '-')}")
        systems.append((name, system(_load_model(path, vocab), vocab)))
    if args.corpus.endswith((".jsonl", ".tsv")):
        texts = [p.asr_text for p in _load_pairs(args.corpus)]
    else:
        texts = [line for line in _read_lines(args.corpus) if line.strip()]
    if not texts:
        raise DataError(f"{args.corpus} holds no utterances")
    report = bench_latency(systems, texts, args.warmup, args.reps)
    rows = [(n, s["median_ms"], s["mean_ms"], s["p95_ms"], s["decoder_steps"], s["change_density"])
            for n, s in report.to_dict()["systems"].items()]
    print(format_table(rows, ["system", "median ms", "mean ms", "p95 ms", "decoder steps", "C density"]))
    for key, value in report.to_dict()["speedups"].items():
        print(f"speedup {key}: {value:.2f}x")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        _write_manifest(args.out, args, {}, [args.out], args.started)
    return EXIT_OK


def cmd_demo(args) -> int:
    from .demo import end_to_end_demo, summary_text

    report = end_to_end_demo(args.seed, args.preset, args.out_dir)
    print(summary_text(report))
    if args.out_dir:
        _write_manifest(Path(args.out_dir) / "report.json", args, {"preset": args.preset},
                        [args.out_dir], args.started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="constrained-ec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="build a subword vocabulary")
    p.add_argument("--corpus", action="append", help="jsonl/tsv pair corpus (repeatable)")
    p.add_argument("--text", action="append", help="plain text file, one sentence per line (repeatable)")
    p.add_argument("--max-size", type=int, default=2000)
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("inject-errors", help="corrupt references into synthetic ASR pairs")
    p.add_argument("--refs", help="reference sentences, one per line")
    p.add_argument("--generate", type=int, help="synthesize this many references instead")
    p.add_argument("--profile", help="per-type rates, e.g. grammatical=0.05,delete=0.02")
    p.add_argument("--confusions", help="confusion table file (word<TAB>alternatives)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject_errors)

    p = sub.add_parser("make-labels", help="derive K/D/C labels and change spans")
    p.add_argument("--asr")
    p.add_argument("--ref")
    p.add_argument("--corpus")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_labels)

    p = sub.add_parser("train", help="train a constrained corrector or the baseline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--valid")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", help="key=value or JSON config file; flags win")
    p.add_argument("--decoder", choices=["lstm", "transformer", "baseline"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--valid-fraction", type=float)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--encoder-layers", type=int)
    p.add_argument("--encoder-heads", type=int)
    p.add_argument("--feedforward-dim", type=int)
    p.add_argument("--max-decode-len", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--log", dest="log_path", help="line-delimited training log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("correct", help="correct utterances, one per line")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", default="-", help="input file, or - for stdin")
    p.add_argument("--output", help="output file (default stdout)")
    p.add_argument("--emit-tags", action="store_true",
                   help="write JSON records with tags, spans, decoder_steps and timings")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("evaluate", help="WER and per-type correction ratios")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", action="append", default=[], help="checkpoint (repeatable)")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="single-threaded latency benchmark")
    p.add_argument("--corpus", required=True, help="jsonl/tsv pairs or plain utterances")
    p.add_argument("--vocab", required=True)
    p.add_argument("--systems", default="constrained_lstm,constrained_trans,baseline")
    p.add_argument("--lstm-model")
    p.add_argument("--trans-model")
    p.add_argument("--baseline-model")
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("demo", help="synthetic end-to-end experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=["full", "quick"], default="full")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_demo)
    return parser


def run(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CONSTRAINED_EC_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    args.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, CorpusFormatError, ConfigurationError,
            CheckpointError, MalformedExample, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
