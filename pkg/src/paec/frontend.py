"""Linear echo cancellation: subband delay estimation and STFT-domain NLMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import signal as sig
from .errors import DurationError, ParameterError, ShapeError

MAX_DELAY_SAMPLES = 8000


@dataclass(frozen=True)
class DelayEstimate:
    delay_samples: int
    confidence: float

    def __post_init__(self):
        if not 0 <= self.delay_samples <= MAX_DELAY_SAMPLES:
            raise ParameterError(f"delay {self.delay_samples} outside [0, {MAX_DELAY_SAMPLES}]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ParameterError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class NLMSConfig:
    taps_per_bin: int = 10
    mu: float = 0.5
    epsilon: float = 1e-6
    # regularization floor as a multiple of the running mean reference power;
    # keeps the step bounded when near-end speech meets a silent reference
    power_floor: float = 1.0


def _band_edges(n_bins: int, n_bands: int) -> np.ndarray:
    return np.linspace(0, n_bins, n_bands + 1).round().astype(int)


def band_envelopes(wave: np.ndarray, n_bands: int = 8) -> np.ndarray:
    """Per-band magnitude envelopes, shape ``(bands, frames)``."""
    mag = np.abs(sig.stft(wave))
    edges = _band_edges(mag.shape[1], n_bands)
    return np.stack([mag[:, a:b].sum(axis=1) for a, b in zip(edges[:-1], edges[1:])])


def estimate_delay(
    mic: np.ndarray,
    ref: np.ndarray,
    search_ms: float = 500.0,
    n_bands: int = 8,
    silence_threshold: float = 1e-8,
) -> DelayEstimate:
    """Estimate how far ``ref`` must be delayed to line up with ``mic``.

    Normalized cross-correlations of zero-mean band envelopes are computed
    for every frame lag in the search range and averaged over bands. The
    best lag is returned in samples; the confidence is the averaged
    correlation at that lag, clipped to [0, 1].
    """
    mic = np.asarray(mic, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if min(mic.size, ref.size) < sig.SAMPLE_RATE:
        raise DurationError("delay estimation needs at least 1 s of audio")
    n = min(mic.size, ref.size)
    mic, ref = mic[:n], ref[:n]
    if sig.energy(ref) / n < silence_threshold or sig.energy(mic) == 0:
        return DelayEstimate(0, 0.0)

    em = band_envelopes(mic, n_bands)
    er = band_envelopes(ref, n_bands)
    frames = em.shape[1]
    max_lag = min(int(round(search_ms * sig.SAMPLE_RATE / 1000 / sig.HOP)), frames - 2)
    max_lag = min(max_lag, MAX_DELAY_SAMPLES // sig.HOP)
    score = np.full(max_lag + 1, -np.inf)
    for lag in range(max_lag + 1):
        a = em[:, lag:]
        b = er[:, : frames - lag]
        a = a - a.mean(axis=1, keepdims=True)
        b = b - b.mean(axis=1, keepdims=True)
        den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
        valid = den > 0
        if not valid.any():
            continue
        score[lag] = np.sum((a * b).sum(axis=1)[valid] / den[valid]) / n_bands
    best = int(np.argmax(score))
    conf = float(np.clip(score[best], 0.0, 1.0)) if np.isfinite(score[best]) else 0.0
    return DelayEstimate(best * sig.HOP, conf)


def align_reference(ref: np.ndarray, est: DelayEstimate) -> np.ndarray:
    """Delay ``ref`` by the estimate, zero-filling the head and keeping its length."""
    ref = np.asarray(ref, dtype=np.float64)
    k = min(est.delay_samples, ref.size)
    out = np.zeros_like(ref)
    out[k:] = ref[: ref.size - k]
    return out


def nlms_run(
    mic: np.ndarray, aligned_ref: np.ndarray, cfg: NLMSConfig = NLMSConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Subband NLMS echo canceller.

    Each frequency bin carries ``taps_per_bin`` complex taps over the most
    recent reference frames. Returns ``(y_lin, e)`` as time-domain signals of
    the input length, with ``e = mic - y_lin`` exactly. Samples past the last
    complete frame get no echo estimate.
    """
    mic = np.asarray(mic, dtype=np.float64)
    ref = np.asarray(aligned_ref, dtype=np.float64)
    if mic.shape != ref.shape or mic.ndim != 1:
        raise ShapeError(f"mic and reference must be equal-length 1-D signals, got {mic.shape} vs {ref.shape}")
    X = sig.stft(ref)
    D = sig.stft(mic)
    Y = nlms_filter_spectra(D, X, cfg)
    y_lin = np.zeros_like(mic)
    yl = sig.istft(Y)
    y_lin[: yl.size] = yl
    return y_lin, mic - y_lin


def nlms_filter_spectra(D: np.ndarray, X: np.ndarray, cfg: NLMSConfig = NLMSConfig()) -> np.ndarray:
    """Run the per-bin NLMS recursion; returns the echo-estimate spectrogram."""
    frames, bins = D.shape
    L = cfg.taps_per_bin
    w = np.zeros((bins, L), dtype=np.complex128)
    hist = np.zeros((bins, L), dtype=np.complex128)
    Y = np.zeros_like(D)
    mean_power = 0.0
    for t in range(frames):
        hist = np.roll(hist, 1, axis=1)
        hist[:, 0] = X[t]
        y = np.einsum("kl,kl->k", w, hist)
        e = D[t] - y
        Y[t] = y
        if cfg.mu:
            power = np.einsum("kl,kl->k", hist.real, hist.real) + np.einsum("kl,kl->k", hist.imag, hist.imag)
            mean_power += (power.mean() - mean_power) / (t + 1)
            reg = cfg.epsilon + cfg.power_floor * mean_power
            w += cfg.mu * (e / (reg + power))[:, None] * hist.conj()
    return Y


def linear_aec(mic: np.ndarray, ref: np.ndarray, cfg: NLMSConfig = NLMSConfig(), search_ms: float = 500.0, n_bands: int = 8):
    """Delay estimation, alignment and NLMS in one call.

    Returns ``(y_lin, e, DelayEstimate)``. Short signals skip delay
    estimation and assume zero delay.
    """
    mic = np.asarray(mic, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if ref.size != mic.size:
        r = np.zeros_like(mic)
        r[: min(ref.size, mic.size)] = ref[: mic.size]
        ref = r
    if mic.size >= sig.SAMPLE_RATE:
        est = estimate_delay(mic, ref, search_ms, n_bands)
    else:
        est = DelayEstimate(0, 0.0)
    y_lin, e = nlms_run(mic, align_reference(ref, est), cfg)
    return y_lin, e, est
