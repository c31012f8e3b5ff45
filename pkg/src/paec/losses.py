"""Power-law compressed phase-aware loss and the per-variant loss bindings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import signal as sig
from .errors import ParameterError, ShapeError, TargetError

EPS = 1e-12


@dataclass(frozen=True)
class LossSpec:
    p: float = sig.COMPRESS_P
    alpha: float = 0.5

    def validate(self) -> None:
        if not 0.0 < self.p <= 1.0:
            raise ParameterError(f"compression exponent must be in (0, 1], got {self.p}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")


def compress(spec: torch.Tensor, p: float = sig.COMPRESS_P, eps: float = EPS) -> torch.Tensor:
    """Differentiable ``|X|^p e^{i angle X}``; ``eps`` keeps the gradient finite at zero."""
    mag2 = spec.real**2 + spec.imag**2 + eps
    return spec * mag2 ** ((p - 1) / 2)


def plcpa_compressed(target_c: torch.Tensor, estimate_c: torch.Tensor, alpha: float = 0.5, eps: float = EPS) -> torch.Tensor:
    """PLCPA on spectra that are already power-compressed."""
    if target_c.shape != estimate_c.shape:
        raise ShapeError(f"target {tuple(target_c.shape)} and estimate {tuple(estimate_c.shape)} differ")
    mt = torch.sqrt(target_c.real**2 + target_c.imag**2 + eps)
    me = torch.sqrt(estimate_c.real**2 + estimate_c.imag**2 + eps)
    diff = target_c - estimate_c
    mag_term = torch.mean((mt - me) ** 2)
    phase_term = torch.mean(diff.real**2 + diff.imag**2)
    return alpha * mag_term + (1 - alpha) * phase_term


def plcpa_loss(target: torch.Tensor, estimate: torch.Tensor, spec: LossSpec = LossSpec()) -> torch.Tensor:
    """``alpha mean((|T|^p - |E|^p)^2) + (1 - alpha) mean(|T_c - E_c|^2)`` on uncompressed complex spectra."""
    spec.validate()
    if target.shape != estimate.shape:
        raise ShapeError(f"target {tuple(target.shape)} and estimate {tuple(estimate.shape)} differ")
    return plcpa_compressed(compress(target, spec.p), compress(estimate, spec.p), spec.alpha)


def plcpa_numpy(target: np.ndarray, estimate: np.ndarray, spec: LossSpec = LossSpec()) -> float:
    """Plain numpy twin of :func:`plcpa_loss`, used as a finite-difference oracle."""
    def comp(x):
        m2 = np.abs(x) ** 2 + EPS
        return x * m2 ** ((spec.p - 1) / 2)

    tc, ec = comp(np.asarray(target)), comp(np.asarray(estimate))
    mt = np.sqrt(np.abs(tc) ** 2 + EPS)
    me = np.sqrt(np.abs(ec) ** 2 + EPS)
    return float(spec.alpha * np.mean((mt - me) ** 2) + (1 - spec.alpha) * np.mean(np.abs(tc - ec) ** 2))


def stage_targets(variant_cfg, targets: dict[str, torch.Tensor]) -> list[torch.Tensor | None]:
    """Compressed target spectra per stage; ``None`` for an unconstrained intermediate.

    ``targets`` maps ``s``, ``y`` and ``z`` to compressed complex spectra.
    """

    def need(*names):
        missing = [n for n in names if n not in targets or targets[n] is None]
        if missing:
            raise TargetError(f"{variant_cfg.variant} needs target components {missing}")

    def combined(expr):
        if expr == "s+z" and targets.get("s+z") is not None:
            return targets["s+z"]
        if expr == "s+z":
            need("s", "z")
            return _add_compressed(targets["s"], targets["z"])
        need(expr)
        return targets[expr]

    out: list[torch.Tensor | None] = [None] * len(variant_cfg.stages)
    if variant_cfg.stage1_target is not None:
        out[0] = combined(variant_cfg.stage1_target)
    out[-1] = combined(variant_cfg.final_target)
    return out


def _add_compressed(a: torch.Tensor, b: torch.Tensor, p: float = sig.COMPRESS_P) -> torch.Tensor:
    """Compressed spectrum of the sum of two signals given their compressed spectra."""
    def dec(x):
        return x * (x.real**2 + x.imag**2 + EPS) ** ((1 / p - 1) / 2)

    return compress(dec(a) + dec(b), p)


def variant_loss(variant_cfg, targets: dict[str, torch.Tensor], outputs, spec: LossSpec = LossSpec()):
    """Total loss and the per-stage terms (``None`` where a stage has no target)."""
    spec.validate()
    terms = []
    total = None
    for est, tgt in zip(outputs.stages, stage_targets(variant_cfg, targets)):
        if tgt is None:
            terms.append(None)
            continue
        t = plcpa_compressed(tgt, est, spec.alpha)
        terms.append(t)
        total = t if total is None else total + t
    return total, terms


def compressed_spectra(waves: dict[str, np.ndarray], dtype=torch.float32) -> dict[str, torch.Tensor]:
    """Shared-analysis compressed spectra for a dict of waveforms (one clip)."""
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    return {k: torch.as_tensor(sig.power_compress(sig.stft(v)), dtype=cdtype) for k, v in waves.items()}
