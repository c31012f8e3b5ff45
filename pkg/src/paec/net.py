"""Post-filter stages and the six model variants.

Each stage is a gated convolutional encoder, a stack of F-T-LSTM blocks and a
gated transposed-convolutional decoder with 1x1 skip convolutions. Inputs are
real/imaginary channels of power-compressed spectra; outputs are compressed
complex spectra.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import signal as sig
from .errors import ConditioningError, ConfigError, ShapeError
from .layers import FTLSTM, GatedConv2d, GatedTransConv2d, decoder_output_padding, encoder_freq_sizes, n_trainable
from .speaker import EMBED_DIM, FBANK_DIM, ConcatFusion, LocalSpeakerRep, MCAFusion, SpeakerEncoder, SpeakerInputs

CHECKPOINT_VERSION = "paec-checkpoint/1"
VARIANTS = ("GFTNN-AEC", "GFTNN-PSE", "GFTNN-L", "TDPF-1", "TDPF-2", "TDPF-3")
# single-stage configs used only for pretraining the echo-mapping stage
STAGE_VARIANTS = ("ECHO-MAP",)
TOKEN_DIMS = {"fbank": FBANK_DIM, "provider": EMBED_DIM}

# Nominal widths; the block count is tuned so parameter totals land near the published budgets.
TDPF_WIDTH = 80
LARGE_WIDTH = 160
N_FTLSTM = 6


@dataclass(frozen=True)
class StageConfig:
    n_enc_layers: int = 5
    kernel: tuple[int, int] = (2, 3)
    stride: tuple[int, int] = (1, 2)
    channels: int = TDPF_WIDTH
    ftlstm_hidden: int = 128
    n_ftlstm: int = N_FTLSTM
    in_signals: int = 3
    output_mode: str = "mask"
    speaker_fusion: str | None = None
    speaker_tokens: tuple[str, ...] = ("fbank", "provider")
    local_speaker: bool = False
    local_hidden: int = 160
    local_max_frames: int | None = 16
    n_speaker_layers: int = 4
    mca_dim: int = 128
    mca_heads: int = 8
    n_bins: int = sig.N_BINS

    @property
    def speaker_conditioning(self) -> bool:
        return self.speaker_fusion is not None or self.local_speaker

    def validate(self) -> None:
        if self.output_mode not in ("map", "mask"):
            raise ConfigError(f"output_mode must be 'map' or 'mask', got {self.output_mode!r}")
        if self.speaker_fusion not in (None, "mca", "concat"):
            raise ConfigError(f"unknown speaker fusion {self.speaker_fusion!r}")
        if any(t not in TOKEN_DIMS for t in self.speaker_tokens):
            raise ConfigError(f"unknown speaker tokens {self.speaker_tokens}")
        if self.speaker_fusion and not self.speaker_tokens:
            raise ConfigError("speaker fusion needs at least one token")
        if self.n_speaker_layers >= self.n_enc_layers:
            raise ConfigError("speaker encoder must be shallower than the stage encoder")
        sizes = encoder_freq_sizes(self.n_bins, self.n_enc_layers, self.kernel[1], self.stride[1])
        if sizes[-1] < 1:
            raise ConfigError(f"{self.n_enc_layers} encoder layers collapse {self.n_bins} bins")
        if self.channels < 1 or self.ftlstm_hidden < 1 or self.n_ftlstm < 0:
            raise ConfigError("channel and hidden sizes must be positive")


@dataclass(frozen=True)
class ModelVariantConfig:
    variant: str
    stages: tuple[StageConfig, ...]
    # stage-1 loss target: "y" (echo), "s+z" (speech plus interferers) or None
    stage1_target: str | None = None
    final_target: str = "s"

    def validate(self) -> None:
        if self.variant not in VARIANTS + STAGE_VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if len(self.stages) not in (1, 2):
            raise ConfigError("a model has one or two stages")
        for st in self.stages:
            st.validate()
        if self.stage1_target not in (None, "y", "s+z"):
            raise ConfigError(f"unknown stage-1 target {self.stage1_target!r}")
        if self.final_target not in ("s", "s+z", "y"):
            raise ConfigError(f"unknown final target {self.final_target!r}")
        if len(self.stages) == 1 and self.stage1_target is not None:
            raise ConfigError("single-stage models carry only a final target")

    @property
    def needs_speaker(self) -> bool:
        return any(st.speaker_conditioning for st in self.stages)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelVariantConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        stage_keys = set(StageConfig.__dataclass_fields__)
        stages = []
        for s in d["stages"]:
            bad = set(s) - stage_keys
            if bad:
                raise ConfigError(f"unknown stage config keys {sorted(bad)}")
            s = dict(s)
            for k in ("kernel", "stride", "speaker_tokens"):
                if k in s:
                    s[k] = tuple(s[k])
            stages.append(StageConfig(**s))
        cfg = cls(
            variant=d["variant"],
            stages=tuple(stages),
            stage1_target=d.get("stage1_target"),
            final_target=d.get("final_target", "s"),
        )
        cfg.validate()
        return cfg


def _speech_stage(width: int, **kw) -> StageConfig:
    return StageConfig(channels=width, output_mode="mask", speaker_fusion="mca", local_speaker=True, **kw)


def variant_config(variant: str) -> ModelVariantConfig:
    """Default configuration for one of the six variants."""
    aec = StageConfig(channels=TDPF_WIDTH, output_mode="mask")
    echo = StageConfig(channels=TDPF_WIDTH, output_mode="map")
    pse = _speech_stage(TDPF_WIDTH)
    table = {
        "GFTNN-AEC": ModelVariantConfig("GFTNN-AEC", (aec,), None, "s+z"),
        "GFTNN-PSE": ModelVariantConfig("GFTNN-PSE", (pse,), None, "s"),
        "GFTNN-L": ModelVariantConfig("GFTNN-L", (_speech_stage(LARGE_WIDTH),), None, "s"),
        "TDPF-1": ModelVariantConfig("TDPF-1", (aec, pse), None, "s"),
        "TDPF-2": ModelVariantConfig("TDPF-2", (echo, pse), "y", "s"),
        "TDPF-3": ModelVariantConfig("TDPF-3", (aec, pse), "s+z", "s"),
        "ECHO-MAP": ModelVariantConfig("ECHO-MAP", (echo,), None, "y"),
    }
    if variant not in table:
        raise ConfigError(f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
    return table[variant]


def scaled_config(cfg: ModelVariantConfig, **overrides) -> ModelVariantConfig:
    """Copy of ``cfg`` with the same overrides applied to every stage (for small test models)."""
    return replace(cfg, stages=tuple(replace(s, **overrides) for s in cfg.stages))


def stack_inputs(*specs: torch.Tensor) -> torch.Tensor:
    """Compressed complex spectra ``(B, T, F)`` -> real channel stack ``(B, 2k, T, F)``."""
    chans = []
    for s in specs:
        chans += [s.real, s.imag]
    return torch.stack(chans, dim=1)


def bounded_mask(raw: torch.Tensor) -> torch.Tensor:
    """Complex mask with magnitude ``tanh(|raw|)`` and the phase of ``raw``."""
    mag = torch.sqrt(raw.real**2 + raw.imag**2 + 1e-24)
    return raw * (torch.tanh(mag) / mag)


class Stage(nn.Module):
    def __init__(self, cfg: StageConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c, k, s = cfg.channels, cfg.kernel, cfg.stride
        n = cfg.n_enc_layers
        in_ch = 2 * cfg.in_signals + (1 if cfg.local_speaker else 0)
        self.freq_sizes = encoder_freq_sizes(cfg.n_bins, n, k[1], s[1])
        self.encoder = nn.ModuleList(GatedConv2d(in_ch if i == 0 else c, c, k, s) for i in range(n))
        self.skips = nn.ModuleList(nn.Conv1d(c, c, 1) for _ in range(n))
        self.ftlstm = nn.Sequential(*(FTLSTM(c, cfg.ftlstm_hidden) for _ in range(cfg.n_ftlstm)))
        pads = decoder_output_padding(self.freq_sizes, k[1], s[1])
        self.decoder = nn.ModuleList(
            GatedTransConv2d(c, 2 if i == n - 1 else c, k, s, pads[i], activation=i < n - 1) for i in range(n)
        )
        bottleneck = c * self.freq_sizes[-1]
        tdims = tuple(TOKEN_DIMS[t] for t in cfg.speaker_tokens)
        self.fusion = None
        if cfg.speaker_fusion == "mca":
            self.fusion = MCAFusion(bottleneck, tdims, cfg.mca_dim, cfg.mca_heads)
        elif cfg.speaker_fusion == "concat":
            self.fusion = ConcatFusion(bottleneck, tdims)
        self.local = None
        if cfg.local_speaker:
            self.local = LocalSpeakerRep(cfg.local_hidden, cfg.local_max_frames)
            self.speaker_encoder = SpeakerEncoder(in_ch, c, cfg.n_speaker_layers, k, s)

    def _skip(self, i: int, h: torch.Tensor) -> torch.Tensor:
        b, c, t, f = h.shape
        return self.skips[i](h.reshape(b, c, t * f)).reshape(b, c, t, f)

    def local_features(self, x: torch.Tensor, speaker: SpeakerInputs):
        """Input with the broadcast local speaker channel appended, and the speaker-encoder maps."""
        vec = self.local(speaker.enroll_spec)
        b, _, t, f = x.shape
        if vec.shape != (b, f):
            raise ShapeError(f"local speaker vector {tuple(vec.shape)} does not match input ({b}, {f})")
        cat = torch.cat([x, vec[:, None, None, :].expand(b, 1, t, f)], dim=1)
        return cat, self.speaker_encoder(cat)

    def forward(self, x: torch.Tensor, err: torch.Tensor, speaker: SpeakerInputs | None = None, attn_out: list | None = None) -> torch.Tensor:
        """``x (B, C_in, T, F)`` real stack, ``err (B, T, F)`` compressed error spectrum."""
        cfg = self.cfg
        if x.shape[1] != 2 * cfg.in_signals or x.shape[3] != cfg.n_bins:
            raise ShapeError(f"stage expects (B, {2 * cfg.in_signals}, T, {cfg.n_bins}) input, got {tuple(x.shape)}")
        if cfg.speaker_conditioning and speaker is None:
            raise ConditioningError("this stage needs enrollment-derived speaker inputs")
        spk_maps = []
        if self.local is not None:
            x, spk_maps = self.local_features(x, speaker)
        skips = []
        h = x
        for i, layer in enumerate(self.encoder):
            h = layer(h)
            if i < len(spk_maps):
                h = h + spk_maps[i]
            skips.append(h)
        if self.fusion is not None:
            raw = [speaker.fbank if t == "fbank" else speaker.embedding for t in cfg.speaker_tokens]
            gain, w = self.fusion(h, raw)
            if attn_out is not None:
                attn_out.append(w)
            h = h * gain
        h = self.ftlstm(h)
        n = len(self.decoder)
        for j, layer in enumerate(self.decoder):
            h = layer(h + self._skip(n - 1 - j, skips[n - 1 - j]))
        out = torch.complex(h[:, 0], h[:, 1])
        if cfg.output_mode == "mask":
            return bounded_mask(out) * err
        return out


@dataclass
class StageOutput:
    """Compressed complex outputs of each stage, ``(B, T, F)``."""

    stages: list[torch.Tensor] = field(default_factory=list)

    @property
    def s1(self) -> torch.Tensor:
        return self.stages[0]

    @property
    def s2(self) -> torch.Tensor | None:
        return self.stages[1] if len(self.stages) > 1 else None

    @property
    def final(self) -> torch.Tensor:
        return self.stages[-1]


class PAECModel(nn.Module):
    """Stage wiring: stage 1 sees (d, e, y_lin); stage 2 sees (d, e, stage-1 output)."""

    def __init__(self, cfg: ModelVariantConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.stages = nn.ModuleList(Stage(s) for s in cfg.stages)

    @property
    def needs_speaker(self) -> bool:
        return self.cfg.needs_speaker

    def forward(self, d: torch.Tensor, e: torch.Tensor, y: torch.Tensor, speaker: SpeakerInputs | None = None) -> StageOutput:
        if self.needs_speaker and speaker is None:
            raise ConditioningError(f"{self.cfg.variant} needs an enrollment utterance")
        out = StageOutput()
        s1_cfg = self.stages[0].cfg
        out.stages.append(self.stages[0](stack_inputs(d, e, y), e, speaker if s1_cfg.speaker_conditioning else None))
        if len(self.stages) > 1:
            out.stages.append(self.stages[1](stack_inputs(d, e, out.s1), e, speaker))
        return out


def build_model(cfg: ModelVariantConfig | str, seed: int | None = None, dtype=torch.float32) -> PAECModel:
    if isinstance(cfg, str):
        cfg = variant_config(cfg)
    if seed is not None:
        torch.manual_seed(seed)
    return PAECModel(cfg).to(dtype)


def count_params(cfg: ModelVariantConfig | str) -> float:
    """Trainable parameters in millions."""
    return n_trainable(build_model(cfg, seed=0)) / 1e6


def to_tensor(spec: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    return torch.as_tensor(np.asarray(spec), dtype=cdtype)


def model_forward(
    model: PAECModel,
    d: np.ndarray,
    e: np.ndarray,
    y: np.ndarray,
    speaker: SpeakerInputs | None = None,
    return_spectra: bool = False,
):
    """Run the post-filter on waveforms; returns ``(s_hat, StageOutput)``.

    The output waveform spans the complete frames of the input, i.e. the
    input length minus any trailing partial frame.
    """
    dtype = next(model.parameters()).dtype
    if model.needs_speaker and speaker is None:
        raise ConditioningError(f"{model.cfg.variant} needs an enrollment utterance")
    specs = [to_tensor(sig.power_compress(sig.stft(w)), dtype)[None] for w in (d, e, y)]
    if speaker is not None:
        speaker = speaker.to(dtype)
    with torch.no_grad():
        out = model(*specs, speaker)
    final = out.final[0].cpu().numpy()
    wave = sig.istft(sig.power_decompress(final))
    return wave, out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: PAECModel, extra: dict | None = None, train_state: dict | None = None) -> Path:
    """Write a checkpoint directory atomically (temporary directory, then rename).

    Layout: ``checkpoint.json`` (version tag and metadata), ``config.json``
    (the full variant config) and ``weights.npz`` (tensors keyed by layer path).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        meta = {"version": CHECKPOINT_VERSION, "variant": model.cfg.variant, **(extra or {})}
        (tmp / "checkpoint.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        (tmp / "config.json").write_text(json.dumps(model.cfg.to_dict(), indent=2))
        weights = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
        np.savez(tmp / "weights.npz", **weights)
        if train_state is not None:
            torch.save(train_state, tmp / "train_state.pt")
        if path.exists():
            old = path.with_name(path.name + ".old")
            if old.exists():
                shutil.rmtree(old)
            os.replace(path, old)
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_checkpoint_meta(path: str | Path) -> dict:
    path = Path(path)
    meta_file = path / "checkpoint.json"
    if not meta_file.is_file():
        raise ConfigError(f"{path} is not a checkpoint directory")
    meta = json.loads(meta_file.read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
    return meta


def load_checkpoint(path: str | Path, dtype=torch.float32) -> PAECModel:
    path = Path(path)
    read_checkpoint_meta(path)
    cfg = ModelVariantConfig.from_dict(json.loads((path / "config.json").read_text()))
    model = build_model(cfg, dtype=dtype)
    load_weights(model, path)
    return model


def load_weights(module: nn.Module, path: str | Path, prefix: str = "", target_prefix: str = "") -> None:
    """Copy weights under ``prefix`` in a checkpoint into ``module`` under ``target_prefix``."""
    with np.load(Path(path) / "weights.npz") as z:
        stored = {k[len(prefix):]: z[k] for k in z.files if k.startswith(prefix)}
    state = module.state_dict()
    wanted = {k[len(target_prefix):]: k for k in state if k.startswith(target_prefix)}
    missing = set(wanted) - set(stored)
    if missing:
        raise ConfigError(f"checkpoint {path} lacks {len(missing)} tensors, e.g. {sorted(missing)[:3]}")
    new = {}
    for short, full in wanted.items():
        arr = stored[short]
        if tuple(arr.shape) != tuple(state[full].shape):
            raise ConfigError(f"shape mismatch for {full}: checkpoint {arr.shape} vs model {tuple(state[full].shape)}")
        new[full] = torch.as_tensor(arr, dtype=state[full].dtype)
    module.load_state_dict({**state, **new})


def load_train_state(path: str | Path) -> dict | None:
    f = Path(path) / "train_state.pt"
    return torch.load(f, weights_only=False) if f.is_file() else None
