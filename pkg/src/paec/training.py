"""Feature preparation, stage pretraining and the four two-stage training strategies."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import signal as sig
from .errors import ConfigError, StrategyError
from .frontend import NLMSConfig, linear_aec
from .losses import LossSpec, compressed_spectra, variant_loss
from .manifest import ManifestEntry, load_clip, read_manifest
from .metrics import si_snr
from .net import (
    ModelVariantConfig,
    PAECModel,
    StageOutput,
    build_model,
    load_train_state,
    load_weights,
    read_checkpoint_meta,
    save_checkpoint,
    variant_config,
)
from .speaker import EmbeddingProvider, SpeakerInputs, StubProvider, speaker_inputs

log = logging.getLogger(__name__)

STRATEGIES = ("joint", "joint_freeze", "finetune", "finetune_freeze")
PRETRAIN_TASKS = {"echo_map": "ECHO-MAP", "aec_ns": "GFTNN-AEC", "pse": "GFTNN-PSE"}


@dataclass
class ClipFeatures:
    """Network inputs and compressed targets for one clip, shapes ``(T, F)``."""

    id: str
    scenario: str
    inputs: dict[str, torch.Tensor]
    targets: dict[str, torch.Tensor]
    speaker: SpeakerInputs
    waves: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.inputs["d"].shape[0]


def prepare_clip(
    clip,
    provider: EmbeddingProvider | None = None,
    nlms: NLMSConfig = NLMSConfig(),
    dtype=torch.float32,
    speaker_id: str | None = None,
    search_ms: float = 500.0,
    n_bands: int = 8,
) -> ClipFeatures:
    """Run the linear front-end on a :class:`ScenarioClip` and compute all spectra."""
    y_lin, e, _ = linear_aec(clip.d, clip.x, nlms, search_ms, n_bands)
    inputs = compressed_spectra({"d": clip.d, "e": e, "y_lin": y_lin}, dtype)
    targets = compressed_spectra({"s": clip.s, "y": clip.y, "z": clip.z, "s+z": clip.s + clip.z}, dtype)
    spk = speaker_inputs([clip.enrollment], provider or StubProvider(), [speaker_id or clip.spec.near_speaker or None], dtype)
    waves = {"d": clip.d, "e": e, "y_lin": y_lin, "s": clip.s, "y": clip.y, "z": clip.z}
    return ClipFeatures(clip.id, clip.spec.scenario, inputs, targets, spk, waves)


def load_features(
    manifest: str | Path,
    root: str | Path | None = None,
    provider: EmbeddingProvider | None = None,
    max_clips: int | None = None,
    dtype=torch.float32,
    nlms: NLMSConfig = NLMSConfig(),
    search_ms: float = 500.0,
    n_bands: int = 8,
) -> list[ClipFeatures]:
    manifest = Path(manifest)
    root = Path(root) if root is not None else manifest.parent
    entries: list[ManifestEntry] = read_manifest(manifest)[:max_clips]
    provider = provider or StubProvider()
    return [prepare_clip(load_clip(e, root), provider, nlms, dtype, e.near_speaker or None, search_ms, n_bands) for e in entries]


def collate(clips: list[ClipFeatures]):
    """Stack clips into a batch, cropping every signal to the shortest clip."""
    t = min(c.n_frames for c in clips)
    te = min(c.speaker.enroll_spec.shape[1] for c in clips)
    inputs = {k: torch.stack([c.inputs[k][:t] for c in clips]) for k in clips[0].inputs}
    targets = {k: torch.stack([c.targets[k][:t] for c in clips]) for k in clips[0].targets}
    spk = SpeakerInputs(
        torch.cat([c.speaker.fbank for c in clips]),
        torch.cat([c.speaker.embedding for c in clips]),
        torch.cat([c.speaker.enroll_spec[:, :te] for c in clips]),
    )
    return inputs, targets, spk


def forward_batch(model: PAECModel, inputs, spk) -> StageOutput:
    return model(inputs["d"], inputs["e"], inputs["y_lin"], spk if model.needs_speaker else None)


@dataclass
class TrainOptions:
    steps: int = 1000
    lr: float = 1e-3
    batch_size: int = 1
    grad_clip: float = 5.0
    seed: int = 0
    checkpoint_every: int = 200
    log_every: int = 1
    loss: LossSpec = field(default_factory=LossSpec)


@dataclass
class TrainStrategy:
    strategy: str = "finetune"
    stage1: str | Path | None = None
    stage2: str | Path | None = None

    @property
    def freeze_stage1(self) -> bool:
        return self.strategy.endswith("_freeze")

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise StrategyError(f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}")
        if self.strategy != "joint" and self.stage1 is None:
            raise StrategyError(f"{self.strategy} needs a pretrained stage-1 checkpoint")
        if self.strategy.startswith("finetune") and self.stage2 is None:
            raise StrategyError(f"{self.strategy} needs a pretrained stage-2 checkpoint")
        for p in (self.stage1, self.stage2):
            if p is not None and not Path(p).is_dir():
                raise StrategyError(f"checkpoint not found: {p}")


def task_clips(task: str, data: list[ClipFeatures]) -> list[ClipFeatures]:
    """Clips usable for a pretraining task: echo mapping needs echo, PSE needs echo-free clips."""
    if task not in PRETRAIN_TASKS:
        raise ConfigError(f"unknown pretraining task {task!r}; valid: {', '.join(PRETRAIN_TASKS)}")
    if task == "echo_map":
        keep = [c for c in data if c.scenario != "NEST"]
    elif task == "pse":
        keep = [c for c in data if c.scenario == "NEST"]
    else:
        keep = list(data)
    if not keep:
        raise ConfigError(f"dataset has no clips suitable for the {task} task")
    return keep


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[i : i + batch_size]


def dataset_loss(model: PAECModel, data: list[ClipFeatures], spec: LossSpec = LossSpec()) -> tuple[float, list[float | None]]:
    """Mean loss and mean per-stage terms over clips, without gradients."""
    totals, terms = [], []
    with torch.no_grad():
        for c in data:
            inputs, targets, spk = collate([c])
            total, t = variant_loss(model.cfg, targets, forward_batch(model, inputs, spk), spec)
            totals.append(float(total))
            terms.append([None if x is None else float(x) for x in t])
    mean_terms = [None if col[0] is None else float(np.mean(col)) for col in zip(*terms)]
    return float(np.mean(totals)), mean_terms


def stage_si_snr(model: PAECModel, data: list[ClipFeatures], stage: int, target: str) -> float:
    """Mean SI-SNR of one stage's waveform output against a clean component."""
    vals = []
    with torch.no_grad():
        for c in data:
            if not np.any(c.waves[target]):
                continue
            inputs, _, spk = collate([c])
            out = forward_batch(model, inputs, spk).stages[stage][0].numpy()
            wave = sig.istft(sig.power_decompress(out))
            vals.append(si_snr(wave, c.waves[target][: wave.size]))
    return float(np.mean(vals)) if vals else float("nan")


class _Logger:
    def __init__(self, path: Path | None):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)

    def truncate(self, step: int) -> None:
        """Drop records past ``step`` (left behind by an interrupted run)."""
        if self.path is None or not self.path.is_file():
            return
        keep = [ln for ln in self.path.read_text().splitlines() if ln.strip() and json.loads(ln)["step"] <= step]
        self.path.write_text("".join(ln + "\n" for ln in keep))

    def write(self, step: int, terms: list, total: float) -> None:
        if self.path is None:
            return
        rec = {"step": step, "total": total}
        for i, t in enumerate(terms, 1):
            rec[f"term{i}"] = t
        with open(self.path, "a") as f:
            f.write(json.dumps(rec) + "\n")


def fit(
    model: PAECModel,
    data: list[ClipFeatures],
    opts: TrainOptions,
    out_dir: str | Path | None = None,
    meta: dict | None = None,
    resume: bool = False,
    callback=None,
) -> dict:
    """Optimize the trainable parameters of ``model`` on ``data``.

    Parameters with ``requires_grad`` unset never enter the optimizer. With
    ``out_dir`` the model is checkpointed every ``checkpoint_every`` steps
    together with the optimizer state, and a line-delimited loss log is kept
    next to it. ``resume`` picks up from the saved step.
    """
    if not data:
        raise ConfigError("no training clips")
    out_dir = Path(out_dir) if out_dir is not None else None
    torch.manual_seed(opts.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=opts.lr)
    rng = np.random.default_rng(opts.seed)
    start = 0
    history: list[dict] = []
    if resume and out_dir is not None and out_dir.is_dir():
        state = load_train_state(out_dir)
        if state is not None:
            load_weights(model, out_dir)
            opt.load_state_dict(state["optimizer"])
            start = state["step"]
            history = state.get("history", [])
            log.info("resuming from step %d", start)
    logger = _Logger(out_dir.parent / f"{out_dir.name}.loss.jsonl" if out_dir is not None else None)
    logger.truncate(start)
    batches = _batches(len(data), min(opts.batch_size, len(data)), rng)
    if start:
        # the order is a pure function of the seed; replay it to the saved step
        for _ in range(start):
            next(batches)
    model.train()
    step = start
    t0 = time.time()
    for step in range(start + 1, opts.steps + 1):
        inputs, targets, spk = collate([data[i] for i in next(batches)])
        out = forward_batch(model, inputs, spk)
        total, terms = variant_loss(model.cfg, targets, out, opts.loss)
        opt.zero_grad(set_to_none=True)
        total.backward()
        if opts.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, opts.grad_clip)
        opt.step()
        rec = {"step": step, "total": total.item(), "terms": [None if t is None else t.item() for t in terms]}
        history.append(rec)
        if step % opts.log_every == 0:
            logger.write(step, rec["terms"], rec["total"])
        stop = callback(step, model, rec) if callback is not None else False
        if out_dir is not None and (step % opts.checkpoint_every == 0 or step == opts.steps or stop):
            _save(model, out_dir, meta, opt, step, history)
        if stop:
            break
    log.info("trained %d steps in %.1f s", step - start, time.time() - t0)
    return {"steps": step, "history": history}


def _save(model, out_dir, meta, opt, step, history):
    state = {"optimizer": opt.state_dict(), "step": step, "history": history}
    save_checkpoint(out_dir, model, {**(meta or {}), "step": step}, train_state=state)


def pretrain_stage(task: str, data: list[ClipFeatures], opts: TrainOptions, out_dir: str | Path | None = None, cfg: ModelVariantConfig | None = None, resume: bool = False, callback=None):
    """Train one stage on its own task; returns ``(model, result)``.

    ``echo_map`` maps the echo ``y`` (TDPF-2 stage 1), ``aec_ns`` masks to
    ``s + z`` (GFTNN-AEC, TDPF-3 stage 1) and ``pse`` masks to ``s``
    (GFTNN-PSE, any TDPF stage 2).
    """
    clips = task_clips(task, data)
    cfg = cfg or variant_config(PRETRAIN_TASKS[task])
    if cfg.variant != PRETRAIN_TASKS[task]:
        raise ConfigError(f"task {task} trains {PRETRAIN_TASKS[task]}, not {cfg.variant}")
    model = build_model(cfg, seed=opts.seed)
    res = fit(model, clips, opts, out_dir, {"task": task}, resume, callback)
    return model, res


def _stage_source(path: Path, which: int) -> tuple[str, ModelVariantConfig]:
    """Weight prefix and config for stage ``which`` (0 or 1) read from a checkpoint."""
    read_checkpoint_meta(path)
    cfg = ModelVariantConfig.from_dict(json.loads((path / "config.json").read_text()))
    idx = 0 if len(cfg.stages) == 1 else which
    return f"stages.{idx}.", cfg.stages[idx]


def init_model(variant: str | ModelVariantConfig, strategy: TrainStrategy, seed: int = 0) -> PAECModel:
    """Build a two-stage model and load pretrained stages per strategy."""
    strategy.validate()
    cfg = variant_config(variant) if isinstance(variant, str) else variant
    if len(cfg.stages) != 2:
        raise StrategyError(f"{cfg.variant} has one stage; train it with pretrain_stage")
    model = build_model(cfg, seed=seed)
    sources = [(0, strategy.stage1)]
    if strategy.strategy.startswith("finetune"):
        sources.append((1, strategy.stage2))
    for which, path in sources:
        if path is None:
            continue
        prefix, stage_cfg = _stage_source(Path(path), which)
        if stage_cfg != cfg.stages[which]:
            raise StrategyError(f"stage-{which + 1} checkpoint {path} has a different structure than {cfg.variant}")
        load_weights(model, path, prefix, f"stages.{which}.")
    if strategy.freeze_stage1:
        for p in model.stages[0].parameters():
            p.requires_grad_(False)
    return model


def train(variant: str | ModelVariantConfig, strategy: TrainStrategy, data: list[ClipFeatures], opts: TrainOptions, out_dir: str | Path | None = None, resume: bool = False, callback=None):
    """Two-stage training under one of the four strategies; returns ``(model, result)``."""
    model = init_model(variant, strategy, opts.seed)
    meta = {"strategy": strategy.strategy, "stage1": str(strategy.stage1 or ""), "stage2": str(strategy.stage2 or "")}
    res = fit(model, data, opts, out_dir, meta, resume, callback)
    return model, res
