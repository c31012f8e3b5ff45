"""Command-line interface: ``paec {datagen,pretrain,train,eval,infer,plot}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Outputs are written under the output root (``--output-root`` or the
``PAEC_OUTPUT_ROOT`` environment variable, default the working directory).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import signal as sig
from .config import ExperimentConfig, load_config
from .errors import (
    ConditioningError,
    ConfigError,
    CorpusError,
    DurationError,
    ManifestParseError,
    PAECError,
    ParameterError,
    ProviderError,
    StrategyError,
)

log = logging.getLogger("paec")

USAGE_ERRORS = (ConfigError, CorpusError, StrategyError, ProviderError, ManifestParseError, ParameterError, ConditioningError, DurationError)


class UsageError(Exception):
    pass


def _norm_variant(name: str) -> str:
    from .net import VARIANTS

    key = name.upper().replace("-", "").replace("_", "")
    for v in VARIANTS:
        if v.replace("-", "") == key:
            return v
    raise UsageError(f"unknown variant {name!r}; valid: {', '.join(VARIANTS)}")


class Outputs:
    """Resolves output paths under the output root and refuses stray writes."""

    def __init__(self, root: str | None):
        self.explicit = root is not None
        self.root = Path(root).resolve() if root else Path.cwd().resolve()

    def __call__(self, path: str | Path) -> Path:
        p = Path(path)
        p = (p if p.is_absolute() else self.root / p).resolve()
        if self.explicit and not p.is_relative_to(self.root):
            raise UsageError(f"output {p} lies outside the output root {self.root}")
        return p


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()


def _provider(args, cfg: ExperimentConfig):
    from .speaker import make_provider

    kind = args.embedding_provider or cfg.embedding_provider
    path = args.embedding_file or cfg.embedding_file or None
    if kind == "file" and not path:
        raise UsageError("--embedding-provider file needs --embedding-file")
    return make_provider(kind, path)


def _dsp(cfg: ExperimentConfig) -> dict:
    from .frontend import NLMSConfig

    d = cfg.dsp
    return {"nlms": NLMSConfig(d.taps_per_bin, d.mu, d.epsilon), "search_ms": d.search_ms, "n_bands": d.n_bands}


def _pick(value, default):
    return default if value is None else value


# ---------------------------------------------------------------------------
# commands


def cmd_datagen(args, out: Outputs) -> int:
    from .corpus import Corpus
    from .datagen import format_summary, generate_dataset, summarize
    from .manifest import read_manifest

    cfg = _config(args)
    corpus_dir = args.corpus or cfg.paths.corpus
    if not corpus_dir:
        raise UsageError("--corpus is required")
    Corpus(corpus_dir)  # validates before anything is written
    hours = _pick(args.hours, cfg.sizes.hours)
    clip_seconds = _pick(args.clip_seconds, cfg.sizes.clip_seconds)
    if hours <= 0 or clip_seconds < 1:
        raise UsageError("--hours must be positive and --clip-seconds at least 1")
    dest = out(args.out or cfg.paths.data)
    manifests = generate_dataset(
        corpus_dir,
        dest,
        hours,
        _pick(args.seed, cfg.seed),
        args.noise or cfg.paths.noise or None,
        clip_seconds,
        n_rooms=_pick(args.rooms, cfg.sizes.n_rooms),
    )
    for split, path in manifests.items():
        print(format_summary(split, summarize(read_manifest(path))))
        print(f"  manifest: {path}")
    return 0


def _train_opts(args, cfg: ExperimentConfig, lr_default: float):
    from .losses import LossSpec
    from .training import TrainOptions

    return TrainOptions(
        steps=_pick(args.steps, cfg.sizes.steps),
        lr=_pick(args.lr, lr_default),
        batch_size=_pick(args.batch_size, cfg.sizes.batch_size),
        seed=_pick(args.seed, cfg.seed),
        checkpoint_every=_pick(args.checkpoint_every, cfg.sizes.checkpoint_every),
        loss=LossSpec(cfg.loss.p, cfg.loss.alpha),
    )


def _features(args, cfg: ExperimentConfig):
    from .training import load_features

    manifest = Path(args.data)
    if not manifest.is_file():
        raise UsageError(f"manifest not found: {manifest}")
    max_clips = _pick(args.max_clips, cfg.sizes.max_clips) or None
    return load_features(manifest, provider=_provider(args, cfg), max_clips=max_clips, **_dsp(cfg))


def cmd_pretrain(args, out: Outputs) -> int:
    from .training import PRETRAIN_TASKS, pretrain_stage

    cfg = _config(args)
    if args.task not in PRETRAIN_TASKS:
        raise UsageError(f"unknown task {args.task!r}; valid: {', '.join(PRETRAIN_TASKS)}")
    dest = out(args.out)
    opts = _train_opts(args, cfg, 1e-3)
    data = _features(args, cfg)
    _, res = pretrain_stage(args.task, data, opts, dest, resume=args.resume)
    _report_training(res, dest)
    return 0


def cmd_train(args, out: Outputs) -> int:
    from .net import variant_config
    from .training import TrainStrategy, fit, pretrain_stage, train

    cfg = _config(args)
    variant = _norm_variant(args.variant or cfg.variant)
    strategy = TrainStrategy(args.strategy or cfg.strategy, args.stage1, args.stage2)
    vcfg = variant_config(variant)
    if len(vcfg.stages) == 2:
        strategy.validate()
    elif args.stage1 or args.stage2:
        raise UsageError(f"{variant} is single-stage; --stage1/--stage2 do not apply")
    dest = out(args.out)
    lr_default = 3e-4 if strategy.strategy.startswith("finetune") and len(vcfg.stages) == 2 else 1e-3
    opts = _train_opts(args, cfg, lr_default)
    data = _features(args, cfg)
    if len(vcfg.stages) == 2:
        _, res = train(variant, strategy, data, opts, dest, resume=args.resume)
    else:
        from .net import build_model

        res = fit(build_model(vcfg, seed=opts.seed), data, opts, dest, {"strategy": "single"}, args.resume)
    _report_training(res, dest)
    return 0


def _report_training(res, dest: Path) -> None:
    hist = res["history"]
    if hist:
        print(f"steps: {res['steps']}  first loss: {hist[0]['total']:.5f}  last loss: {hist[-1]['total']:.5f}")
    print(f"checkpoint: {dest}")


def cmd_eval(args, out: Outputs) -> int:
    from .evaluation import evaluate
    from .metrics import PESQHook

    cfg = _config(args)
    if not Path(args.data).is_file():
        raise UsageError(f"manifest not found: {args.data}")
    pesq_cmd = args.pesq_cmd or cfg.pesq_cmd
    pesq = PESQHook(pesq_cmd) if pesq_cmd else None
    dest = out(args.out or cfg.paths.reports)
    max_clips = _pick(args.max_clips, cfg.sizes.max_clips) or None
    report = evaluate(args.checkpoint, args.data, provider=_provider(args, cfg), pesq=pesq, max_clips=max_clips, **_dsp(cfg))
    print(report.to_table())
    tsv, js = report.save(dest)
    print(f"report: {tsv} {js}")
    return 0


def cmd_infer(args, out: Outputs) -> int:
    from .evaluation import resolve_model
    from .frontend import linear_aec
    from .metrics import erle
    from .net import model_forward
    from .plotting import plot_panels, spectrogram_db_from_spec
    from .speaker import speaker_inputs

    cfg = _config(args)
    for p in (args.mic, args.ref):
        if not Path(p).is_file():
            raise UsageError(f"input not found: {p}")
    dest = out(args.out)
    dump = out(args.dump_stages) if args.dump_stages else None
    model = resolve_model(args.checkpoint)
    mic = sig.read_wav(args.mic)
    ref = sig.read_wav(args.ref)
    n = min(mic.size, ref.size)
    if mic.size != ref.size:
        log.warning("mic and reference lengths differ; using the first %d samples", n)
    mic, ref = mic[:n], ref[:n]
    dsp = _dsp(cfg)
    y_lin, e, est = linear_aec(mic, ref, dsp["nlms"], dsp["search_ms"], dsp["n_bands"])
    log.info("estimated echo delay %.1f ms (confidence %.2f)", est.delay_samples / 16, est.confidence)
    net = getattr(model, "model", None)
    if net is None:
        raise UsageError("infer needs a trained checkpoint, not a builtin stub")
    spk = None
    if net.needs_speaker:
        if not args.enroll:
            raise ConditioningError(f"{net.cfg.variant} needs --enroll")
        spk = speaker_inputs([sig.read_wav(args.enroll)], _provider(args, cfg), [args.speaker_id])
    wave, stages = model_forward(net, mic, e, y_lin, spk)
    dest.parent.mkdir(parents=True, exist_ok=True)
    sig.write_wav(dest, wave)
    print(f"output: {dest} ({wave.size} samples)")
    print(f"ERLE(mic, output): {erle(mic, wave):.2f} dB")
    if dump is not None:
        dump.mkdir(parents=True, exist_ok=True)
        specs = [sig.power_decompress(s[0].numpy()) for s in stages.stages]
        panels = [spectrogram_db_from_spec(s) for s in specs]
        vmax = max(float(p.max()) for p in panels)
        for i, (spec, panel) in enumerate(zip(specs, panels), 1):
            sig.write_wav(dump / f"stage{i}.wav", sig.istft(spec))
            plot_panels([panel], [f"stage {i} output ({net.cfg.variant})"], dump / f"stage{i}.png", vmax=vmax)
        print(f"stage outputs: {dump}")
    return 0


def cmd_plot(args, out: Outputs) -> int:
    from .plotting import plot_waves

    for p in args.inputs:
        if not Path(p).is_file():
            raise UsageError(f"input not found: {p}")
    dest = out(args.out)
    waves = [sig.read_wav(p) for p in args.inputs]
    titles = args.titles or [Path(p).name for p in args.inputs]
    if len(titles) != len(waves):
        raise UsageError("--titles must match the number of inputs")
    plot_waves(waves, titles, dest)
    print(f"image: {dest}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paec", description="Personalized acoustic echo cancellation toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--output-root", help="directory all outputs must live under (env PAEC_OUTPUT_ROOT)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON experiment config")
        if seed:
            p.add_argument("--seed", type=int)

    def provider(p):
        p.add_argument("--embedding-provider", choices=("stub", "file"))
        p.add_argument("--embedding-file")

    def training(p):
        p.add_argument("--data", required=True, help="training manifest (.jsonl)")
        p.add_argument("--out", required=True, help="checkpoint directory")
        p.add_argument("--steps", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--checkpoint-every", type=int)
        p.add_argument("--max-clips", type=int)
        p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
        provider(p)

    p = sub.add_parser("datagen", help="synthesize train/val/test mixtures")
    common(p)
    p.add_argument("--corpus", help="speech corpus root (one subdirectory per speaker)")
    p.add_argument("--noise", help="directory of noise recordings")
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--hours", type=float)
    p.add_argument("--clip-seconds", type=float)
    p.add_argument("--rooms", type=int)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("pretrain", help="pretrain a single stage on its own task")
    common(p)
    p.add_argument("--task", required=True, help="echo_map, aec_ns or pse")
    training(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train a model variant")
    common(p)
    p.add_argument("--variant", help="GFTNN-AEC, GFTNN-PSE, GFTNN-L, TDPF-1, TDPF-2 or TDPF-3")
    p.add_argument("--strategy", help="joint, joint_freeze, finetune or finetune_freeze")
    p.add_argument("--stage1", help="pretrained stage-1 checkpoint")
    p.add_argument("--stage2", help="pretrained stage-2 checkpoint")
    training(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on a test manifest")
    common(p, seed=False)
    p.add_argument("--checkpoint", nargs="+", required=True, help="checkpoint dirs or builtin:identity / builtin:oracle")
    p.add_argument("--data", required=True, help="test manifest (.jsonl)")
    p.add_argument("--out", help="report directory")
    p.add_argument("--pesq-cmd", help="scorer command template with {ref} and {deg}")
    p.add_argument("--max-clips", type=int)
    provider(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="enhance one recording")
    common(p, seed=False)
    p.add_argument("--mic", required=True)
    p.add_argument("--ref", required=True, help="far-end reference")
    p.add_argument("--enroll", help="enrollment utterance of the target speaker")
    p.add_argument("--speaker-id", help="speaker id for the file embedding provider")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--dump-stages", metavar="DIR", help="also write each stage's audio and spectrogram")
    provider(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("plot", help="spectrogram panels with a shared color scale")
    p.add_argument("inputs", nargs="+", help="WAV files, one panel each")
    p.add_argument("--out", required=True, help="PNG path")
    p.add_argument("--titles", nargs="*")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None:
        np.random.seed(args.seed)
    try:
        out = Outputs(args.output_root or os.environ.get("PAEC_OUTPUT_ROOT"))
        return args.func(args, out)
    except UsageError as exc:
        print(f"paec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as exc:
        print(f"paec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except PAECError as exc:
        print(f"paec {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"paec {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
