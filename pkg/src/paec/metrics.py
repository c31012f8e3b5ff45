"""Objective metrics: ERLE, SI-SNR and an external PESQ hook."""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from . import signal as sig
from .errors import DegenerateEnergyError, ParameterError

log = logging.getLogger(__name__)

DB_CAP = sig.DB_CAP


def _cap(x: float) -> float:
    return float(np.clip(x, -DB_CAP, DB_CAP))


def erle(d: np.ndarray, s_hat: np.ndarray) -> float:
    """``10 log10(sum d^2 / sum s_hat^2)`` in dB, capped at +-80 dB."""
    d = np.asarray(d, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    n = min(d.size, s_hat.size)
    ed = np.sum(d[:n] ** 2)
    if ed == 0:
        raise DegenerateEnergyError("ERLE undefined for a silent microphone signal")
    es = np.sum(s_hat[:n] ** 2)
    if es == 0:
        return DB_CAP
    return _cap(10 * np.log10(ed / es))


def si_snr(s_hat: np.ndarray, s: np.ndarray) -> float:
    """Scale-invariant SNR of ``s_hat`` against reference ``s`` (zero-mean), capped at +-80 dB."""
    s_hat = np.asarray(s_hat, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    n = min(s.size, s_hat.size)
    s_hat = s_hat[:n] - s_hat[:n].mean()
    s = s[:n] - s[:n].mean()
    es = np.dot(s, s)
    if es == 0 or np.dot(s_hat, s_hat) == 0:
        raise DegenerateEnergyError("SI-SNR undefined for zero-energy signals")
    target = np.dot(s_hat, s) / es * s
    resid = s_hat - target
    er = np.dot(resid, resid)
    et = np.dot(target, target)
    if er <= 1e-30 * et:
        return DB_CAP
    if et == 0:
        return -DB_CAP
    return _cap(10 * np.log10(et / er))


class PESQHook:
    """Shell-command scorer. The template receives ``{ref}`` and ``{deg}`` WAV paths
    and must print a single float on its last output line.
    """

    def __init__(self, template: str, timeout: float = 120.0):
        if "{ref}" not in template or "{deg}" not in template:
            raise ParameterError("PESQ command template needs {ref} and {deg} placeholders")
        self.template = template
        self.timeout = timeout
        self.calls = 0

    def __call__(self, ref: np.ndarray, deg: np.ndarray) -> float | None:
        self.calls += 1
        with tempfile.TemporaryDirectory() as tmp:
            rp, dp = Path(tmp) / "ref.wav", Path(tmp) / "deg.wav"
            n = min(ref.size, deg.size)
            sig.write_wav(rp, ref[:n], pcm16=True)
            sig.write_wav(dp, deg[:n], pcm16=True)
            cmd = self.template.format(ref=shlex.quote(str(rp)), deg=shlex.quote(str(dp)))
            try:
                res = subprocess.run(cmd, shell=True, capture_output=True, text=True, timeout=self.timeout)
                lines = res.stdout.strip().splitlines()
                if res.returncode != 0 or not lines:
                    log.warning("PESQ hook exited with %d: %s", res.returncode, res.stderr.strip()[:200])
                    return None
                return float(lines[-1].split()[-1])
            except (subprocess.TimeoutExpired, ValueError, IndexError) as exc:
                log.warning("PESQ hook failed: %s", exc)
                return None
