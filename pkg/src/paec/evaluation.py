"""Per-scenario evaluation of post-filter checkpoints on a test manifest."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, PAECError
from .frontend import NLMSConfig, linear_aec
from .layers import n_trainable
from .manifest import load_clip, read_manifest
from .metrics import PESQHook, erle, si_snr
from .net import PAECModel, load_checkpoint, model_forward
from .speaker import EmbeddingProvider, StubProvider, speaker_inputs

log = logging.getLogger(__name__)

BUILTIN = ("builtin:identity", "builtin:oracle")


class IdentityModel:
    """Passes the microphone signal through untouched."""

    name = "identity"
    variant = "identity"
    n_params = 0

    def enhance(self, clip, e, y_lin, spk):
        return clip.d


class OracleModel:
    """Returns the clean near-end speech."""

    name = "oracle"
    variant = "oracle"
    n_params = 0

    def enhance(self, clip, e, y_lin, spk):
        return clip.s


class NetModel:
    def __init__(self, model: PAECModel, name: str):
        self.model = model.eval()
        self.name = name
        self.variant = model.cfg.variant
        self.n_params = n_trainable(model)

    def enhance(self, clip, e, y_lin, spk):
        return model_forward(self.model, clip.d, e, y_lin, spk if self.model.needs_speaker else None)[0]


def resolve_model(spec: str | Path | PAECModel):
    """Checkpoint path, ``builtin:identity``/``builtin:oracle`` or an in-memory model."""
    if isinstance(spec, PAECModel):
        return NetModel(spec, spec.cfg.variant)
    if str(spec) == "builtin:identity":
        return IdentityModel()
    if str(spec) == "builtin:oracle":
        return OracleModel()
    path = Path(spec)
    if not path.is_dir():
        raise ConfigError(f"checkpoint not found: {path} (builtin stubs: {', '.join(BUILTIN)})")
    return NetModel(load_checkpoint(path), path.name)


@dataclass
class MetricCell:
    values: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.values)) if self.values else None


COLUMNS = (("FEST", "erle"), ("DT", "pesq"), ("NEST", "pesq"), ("NEST", "si_snr"))


@dataclass
class EvalRow:
    name: str
    variant: str
    params_m: float
    cells: dict[tuple[str, str], MetricCell] = field(default_factory=lambda: {c: MetricCell() for c in COLUMNS})
    skipped: int = 0


@dataclass
class EvalReport:
    rows: list[EvalRow]
    scenario_counts: dict[str, int]
    pesq_available: bool

    def to_dict(self) -> dict:
        out = {"scenario_counts": self.scenario_counts, "pesq_available": self.pesq_available, "rows": []}
        for r in self.rows:
            metrics = {
                f"{sc}_{m}": {"scenario": sc, "mean": c.mean, "clips": c.n, "available": m != "pesq" or self.pesq_available}
                for (sc, m), c in r.cells.items()
            }
            out["rows"].append({"name": r.name, "variant": r.variant, "params_m": r.params_m, "skipped": r.skipped, "metrics": metrics})
        return out

    def to_table(self, sep: str = "\t") -> str:
        head = ["model", "variant", "params_M"] + [f"{sc}_{m}(n)" for sc, m in COLUMNS]
        lines = [sep.join(head)]
        for r in self.rows:
            vals = [r.name, r.variant, f"{r.params_m:.2f}"]
            for col in COLUMNS:
                c = r.cells[col]
                if col[1] == "pesq" and not self.pesq_available:
                    vals.append("n/a")
                else:
                    vals.append(f"{c.mean:.2f}({c.n})" if c.mean is not None else f"-({c.n})")
            lines.append(sep.join(vals))
        return "\n".join(lines)

    def save(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tsv, js = out_dir / "report.tsv", out_dir / "report.json"
        tsv.write_text(self.to_table() + "\n")
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return tsv, js


def evaluate(
    models: list,
    manifest: str | Path,
    root: str | Path | None = None,
    provider: EmbeddingProvider | None = None,
    pesq: PESQHook | None = None,
    nlms: NLMSConfig = NLMSConfig(),
    max_clips: int | None = None,
    search_ms: float = 500.0,
    n_bands: int = 8,
) -> EvalReport:
    """Run the front-end plus each model on every clip and aggregate metrics per scenario.

    ERLE is computed on FEST clips, SI-SNR on NEST clips, and the PESQ hook (if
    configured) on NEST and DT clips. Clips whose metric cannot be computed are
    skipped with a warning.
    """
    manifest = Path(manifest)
    root = Path(root) if root is not None else manifest.parent
    provider = provider or StubProvider()
    resolved = [resolve_model(m) for m in models]
    rows = [EvalRow(m.name, m.variant, m.n_params / 1e6) for m in resolved]
    entries = read_manifest(manifest)[:max_clips]
    counts = {sc: sum(e.scenario == sc for e in entries) for sc in ("DT", "FEST", "NEST")}
    for entry in entries:
        clip = load_clip(entry, root)
        y_lin, e, _ = linear_aec(clip.d, clip.x, nlms, search_ms, n_bands)
        spk = None
        if any(isinstance(m, NetModel) and m.model.needs_speaker for m in resolved):
            spk = speaker_inputs([clip.enrollment], provider, [entry.near_speaker or None])
        for model, row in zip(resolved, rows):
            try:
                with torch.no_grad():
                    out = model.enhance(clip, e, y_lin, spk)
                _score(entry, clip, out, row, pesq)
            except PAECError as exc:
                row.skipped += 1
                log.warning("skipping %s for %s: %s", entry.id, row.name, exc)
    return EvalReport(rows, counts, pesq is not None)


def _score(entry, clip, out, row: EvalRow, pesq: PESQHook | None) -> None:
    sc = entry.scenario
    if sc == "FEST":
        row.cells[("FEST", "erle")].values.append(erle(clip.d, out))
        return
    if "s" not in entry.paths:
        raise ConfigError("clean near-end component missing from manifest")
    if sc == "NEST":
        row.cells[("NEST", "si_snr")].values.append(si_snr(out, clip.s))
    if pesq is not None:
        score = pesq(clip.s, out)
        if score is not None:
            row.cells[(sc, "pesq")].values.append(score)
