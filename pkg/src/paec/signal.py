"""Time-frequency analysis, power compression and energy-ratio arithmetic.

Waveforms are 1-D float arrays at 16 kHz. Spectrograms are complex arrays of
shape ``(frames, bins)`` with ``bins == fft_size // 2 + 1``.
"""

from __future__ import annotations

import logging
from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import DegenerateEnergyError, ParameterError, RateError

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FRAME_LEN = 320
HOP = 160
FFT_SIZE = 320
N_BINS = FFT_SIZE // 2 + 1
COMPRESS_P = 0.5

# reporting cap for energy ratios whose denominator vanishes
DB_CAP = 80.0


def sqrt_hann(n: int) -> np.ndarray:
    """Periodic square-root Hann window; its square sums to one at 50% overlap."""
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))


def _check_rate(sample_rate: int) -> None:
    if sample_rate != SAMPLE_RATE:
        raise RateError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")


def n_frames(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    """Number of complete frames; the trailing partial frame is dropped."""
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def synthesis_length(frames: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    return 0 if frames == 0 else (frames - 1) * hop + frame_len


def stft(
    wave: np.ndarray,
    frame_len: int = FRAME_LEN,
    hop: int = HOP,
    fft_size: int = FFT_SIZE,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Short-time Fourier transform with a square-root Hann window.

    Frame ``t`` covers samples ``[t*hop, t*hop + frame_len)``. No centering
    or padding is applied and a trailing partial frame is discarded.

    Returns a complex array of shape ``(frames, fft_size // 2 + 1)``.
    """
    _check_rate(sample_rate)
    if frame_len > fft_size or frame_len % hop:
        raise ParameterError("need frame_len <= fft_size and hop dividing frame_len")
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1 or wave.size == 0:
        raise ParameterError("stft expects a nonempty 1-D waveform")
    t = n_frames(wave.size, frame_len, hop)
    if t == 0:
        raise ParameterError(f"waveform shorter than one frame ({frame_len} samples)")
    frames = np.lib.stride_tricks.sliding_window_view(wave, frame_len)[::hop][:t]
    return np.fft.rfft(frames * sqrt_hann(frame_len), n=fft_size, axis=-1)


def istft(
    spec: np.ndarray,
    frame_len: int = FRAME_LEN,
    hop: int = HOP,
    fft_size: int = FFT_SIZE,
) -> np.ndarray:
    """Weighted overlap-add synthesis, the inverse of :func:`stft`.

    Output length is ``(frames - 1) * hop + frame_len``. Samples covered by
    fewer than two frames are normalized by the local squared-window sum, so
    ``stft(istft(X)) == X`` for any ``X`` produced by :func:`stft`.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != fft_size // 2 + 1:
        raise ParameterError(
            f"spectrogram must have shape (frames, {fft_size // 2 + 1}), got {spec.shape}"
        )
    if frame_len > fft_size or frame_len % hop:
        raise ParameterError("need frame_len <= fft_size and hop dividing frame_len")
    t = spec.shape[0]
    if t == 0:
        return np.zeros(0)
    win = sqrt_hann(frame_len)
    frames = np.fft.irfft(spec, n=fft_size, axis=-1)[:, :frame_len] * win
    # frame_len is a multiple of hop: accumulate hop-sized blocks
    k = frame_len // hop
    out = np.zeros((t + k - 1, hop))
    norm = np.zeros((t + k - 1, hop))
    w2 = (win**2).reshape(k, hop)
    for j in range(k):
        out[j : j + t] += frames[:, j * hop : (j + 1) * hop]
        norm[j : j + t] += w2[j]
    out, norm = out.ravel(), norm.ravel()
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    return out


def power_compress(spec: np.ndarray, p: float = COMPRESS_P) -> np.ndarray:
    """Raise magnitudes to ``p`` while keeping phase."""
    if not 0 < p <= 1:
        raise ParameterError(f"compression exponent must lie in (0, 1], got {p}")
    spec = np.asarray(spec)
    mag = np.abs(spec)
    out = np.zeros_like(spec, dtype=np.complex128)
    nz = mag > 0
    out[nz] = spec[nz] * mag[nz] ** (p - 1)
    return out


def power_decompress(spec: np.ndarray, p: float = COMPRESS_P) -> np.ndarray:
    """Inverse of :func:`power_compress`."""
    if not 0 < p <= 1:
        raise ParameterError(f"compression exponent must lie in (0, 1], got {p}")
    spec = np.asarray(spec)
    mag = np.abs(spec)
    out = np.zeros_like(spec, dtype=np.complex128)
    nz = mag > 0
    out[nz] = spec[nz] * mag[nz] ** (1 / p - 1)
    return out


def energy(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x, x))


def _ratio_gain(num: np.ndarray, den: np.ndarray, target_db: float, what: str) -> float:
    en, ed = energy(num), energy(den)
    if en <= 0 or ed <= 0:
        raise DegenerateEnergyError(f"{what}: both signals need nonzero energy")
    return float(np.sqrt(en / ed * 10 ** (-target_db / 10)))


def gain_for_ser(s: np.ndarray, y: np.ndarray, target_ser_db: float) -> float:
    """Gain ``g`` for the echo so that ``10 log10(sum s^2 / sum (g y)^2) == target``."""
    return _ratio_gain(s, y, target_ser_db, "gain_for_ser")


def gain_for_snr(s: np.ndarray, v: np.ndarray, target_snr_db: float) -> float:
    """Gain for the noise (or interference) ``v`` giving the requested SNR."""
    return _ratio_gain(s, v, target_snr_db, "gain_for_snr")


def energy_ratio_db(num: np.ndarray, den: np.ndarray) -> float:
    return 10 * np.log10(energy(num) / energy(den))


def compute_ser(s: np.ndarray, d: np.ndarray) -> float:
    """Signal-to-echo ratio in dB measured against the full microphone signal.

    The denominator is the microphone energy, not the echo energy. Mixing
    uses the echo-referenced ratio of :func:`gain_for_ser` instead.
    """
    ed = energy(d)
    if ed <= 0:
        raise DegenerateEnergyError("compute_ser: microphone signal has zero energy")
    es = energy(s)
    if es <= 0:
        return -DB_CAP
    return 10 * np.log10(es / ed)


def read_wav(path: str | Path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Load a mono WAV file as float64, resampling to ``sample_rate`` if needed.

    16-bit PCM is scaled to [-1, 1); float files are returned as stored.
    Multi-channel files are rejected.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ParameterError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2**31
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128) / 128.0
    else:
        x = data.astype(np.float64)
    if rate != sample_rate:
        log.warning("resampling %s from %d Hz to %d Hz", path, rate, sample_rate)
        g = gcd(rate, sample_rate)
        x = resample_poly(x, sample_rate // g, rate // g)
    if not np.all(np.isfinite(x)):
        raise ParameterError(f"{path}: non-finite samples")
    return x


def write_wav(path: str | Path, x: np.ndarray, sample_rate: int = SAMPLE_RATE, pcm16: bool = False) -> None:
    """Write mono audio. Float32 by default so component sums survive storage."""
    x = np.asarray(x, dtype=np.float64)
    if pcm16:
        data = np.clip(np.round(x * 32768), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(str(path), sample_rate, data)
