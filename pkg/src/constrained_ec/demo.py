"""Synthetic end-to-end experiment: data, training, WER, latency, per-type ratios."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import torch

from .corpus import DEFAULT_PROFILE, ErrorProfile, generate_references, inject_errors, typed_test_set
from .evaluation import bench_latency, correction_ratio_by_type, format_table, wer
from .inference import correct_batch, system
from .model import ModelConfig, save_checkpoint
from .tokenizer import build_vocab
from .training import TrainConfig, train, train_baseline

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


@dataclass(frozen=True)
class DemoPreset:
    n_train: int
    n_test: int
    n_typed: int
    epochs: int
    baseline_epochs: int
    learning_rate: float = 1e-3
    profile: ErrorProfile = DEFAULT_PROFILE
    bench_warmup: int = 10
    bench_reps: int = 1


PRESETS = {
    "full": DemoPreset(n_train=5000, n_test=500, n_typed=500, epochs=15, baseline_epochs=15),
    "quick": DemoPreset(n_train=600, n_test=60, n_typed=50, epochs=8, baseline_epochs=4,
                        bench_warmup=2),
}


def _stage(name):
    def wrap(fn):
        def run(*args, **kwargs):
            logger.info("stage: %s", name)
            try:
                return fn(*args, **kwargs)
            except Exception as exc:
                raise StageError(f"stage {name!r} failed: {exc}") from exc
        return run
    return wrap


def end_to_end_demo(seed: int = 0, preset: str = "full", out_dir: Optional[str] = None,
                    model_overrides: Optional[dict] = None) -> dict:
    """Run the whole pipeline and return a report dict.

    The ``wer`` and ``decoder_steps`` sections depend only on the seed; wall
    times naturally vary between runs.
    """
    torch.set_num_threads(1)
    cfg = PRESETS[preset]
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    @_stage("data")
    def make_data():
        refs = generate_references(cfg.n_train + cfg.n_test, seed)
        pairs = inject_errors(refs, cfg.profile, seed + 1)
        typed = typed_test_set(generate_references(cfg.n_typed, seed + 2), seed + 3)
        return pairs[: cfg.n_train], pairs[cfg.n_train:], typed

    train_pairs, test_pairs, typed = make_data()

    vocab = _stage("vocab")(build_vocab)(
        [p.ref_text for p in train_pairs] + [p.asr_text for p in train_pairs], 2000, 2,
    )

    models = {}
    train_cfg = TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate, seed=seed)
    for name, kind in (("constrained_lstm", "lstm"), ("constrained_trans", "transformer")):
        model_cfg = ModelConfig(vocab_size=len(vocab), decoder_kind=kind, **(model_overrides or {}))
        models[name] = _stage(f"train {name}")(train)(train_pairs, train_cfg, model_cfg, vocab).model
    base_cfg = ModelConfig(vocab_size=len(vocab), **(model_overrides or {}))
    models["baseline"] = _stage("train baseline")(train_baseline)(
        train_pairs, replace(train_cfg, epochs=cfg.baseline_epochs), base_cfg, vocab,
    ).model

    asr = [p.asr_text for p in test_pairs]
    refs = [p.ref_text for p in test_pairs]

    @_stage("evaluate")
    def evaluate():
        reports = {"original": wer(asr, refs).to_dict()}
        outputs = {}
        for name, model in models.items():
            results = correct_batch(asr, model, vocab)
            outputs[name] = results
            reports[name] = wer([r.output_text for r in results], refs).to_dict()
        return reports, outputs

    wer_reports, outputs = evaluate()

    latency = _stage("bench")(bench_latency)(
        [(name, system(model, vocab)) for name, model in models.items()],
        asr, warmup=cfg.bench_warmup, reps=cfg.bench_reps,
    )

    @_stage("correction ratios")
    def ratios():
        typed_asr = [p.asr_text for p in typed]
        return {
            name: correction_ratio_by_type(
                list(zip(typed, [r.output_text for r in correct_batch(typed_asr, models[name], vocab)]))
            ).to_dict()
            for name in ("constrained_lstm", "constrained_trans")
        }

    ratio_reports = ratios()

    report = {
        "seed": seed,
        "preset": preset,
        "vocab_size": len(vocab),
        "wer": wer_reports,
        "decoder_steps": {name: [r.decoder_steps for r in res] for name, res in outputs.items()},
        "latency": latency.to_dict(),
        "correction_ratio": ratio_reports,
    }

    if out:
        vocab.save(out / "vocab.txt")
        for name, model in models.items():
            save_checkpoint(out / f"{name}.ckpt", model, vocab.digest())
        (out / "wer_report.json").write_text(json.dumps(wer_reports, indent=2, sort_keys=True))
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        (out / "summary.txt").write_text(summary_text(report))
    return report


def summary_text(report: dict) -> str:
    wer_rows = [(name, r["wer"] * 100, r["substitutions"], r["deletions"], r["insertions"])
                for name, r in report["wer"].items()]
    lat = report["latency"]["systems"]
    base = lat.get("baseline")
    lat_rows = []
    for name, s in lat.items():
        speed = base["median_ms"] / s["median_ms"] if base else float("nan")
        lat_rows.append((name, s["median_ms"], s["mean_ms"], s["decoder_steps"], speed))
    ratio_rows = []
    for name, r in report["correction_ratio"].items():
        for t, v in r["ratios"].items():
            ratio_rows.append((name, t, v, r["corrected"][t], r["totals"][t]))
    return "\n\n".join([
        format_table(wer_rows, ["system", "WER %", "S", "D", "I"]),
        format_table(lat_rows, ["system", "median ms", "mean ms", "decoder steps", "speedup"]),
        format_table(ratio_rows, ["system", "error type", "ratio", "corrected", "total"]),
    ]) + "\n"
