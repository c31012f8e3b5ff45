"""Speech corpus access and a synthetic speaker generator.

A corpus is a directory with one subdirectory per speaker, each holding WAV
utterances. :func:`make_synthetic_corpus` writes such a directory filled with
formant-synthesized pseudo-speech, which is enough to exercise the pipeline
when no real speech data is at hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import signal as sig
from .errors import CorpusError


class Corpus:
    """Lazy view of a per-speaker WAV directory tree.

    ``noise_dir`` optionally points at a flat directory of noise WAVs; when
    absent, noise is synthesized.
    """

    def __init__(self, root: str | Path, noise_dir: str | Path | None = None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise CorpusError(f"corpus directory {self.root} does not exist")
        self.utterances: dict[str, list[Path]] = {}
        for d in sorted(p for p in self.root.iterdir() if p.is_dir()):
            files = sorted(d.glob("*.wav"))
            if files:
                self.utterances[d.name] = files
        if not self.utterances:
            raise CorpusError(f"corpus directory {self.root} contains no speaker subdirectories with WAV files")
        self.noise_files = sorted(Path(noise_dir).glob("*.wav")) if noise_dir else []
        self._cache: dict[Path, np.ndarray] = {}

    @property
    def speakers(self) -> list[str]:
        return list(self.utterances)

    def load(self, path: Path) -> np.ndarray:
        if path not in self._cache:
            self._cache[path] = sig.read_wav(path)
        return self._cache[path]

    def utterance_paths(self, speaker: str) -> list[Path]:
        try:
            return self.utterances[speaker]
        except KeyError:
            raise CorpusError(f"speaker {speaker!r} not in corpus {self.root}") from None


# ---------------------------------------------------------------------------
# synthetic speakers

_VOWELS = np.array(
    [[730, 1090, 2440], [270, 2290, 3010], [300, 870, 2240], [530, 1840, 2480], [570, 840, 2410], [660, 1720, 2410]],
    dtype=float,
)


@dataclass(frozen=True)
class SyntheticSpeaker:
    f0: float
    tract_scale: float
    tilt: float
    bandwidth_scale: float
    breathiness: float


def random_speaker(rng: np.random.Generator) -> SyntheticSpeaker:
    return SyntheticSpeaker(
        f0=float(rng.uniform(85, 260)),
        tract_scale=float(rng.uniform(0.82, 1.25)),
        tilt=float(rng.uniform(0.85, 0.98)),
        bandwidth_scale=float(rng.uniform(0.7, 1.5)),
        breathiness=float(rng.uniform(0.01, 0.1)),
    )


def _resonator(x: np.ndarray, freq: float, bw: float, fs: int) -> np.ndarray:
    r = np.exp(-np.pi * bw / fs)
    a = [1.0, -2 * r * np.cos(2 * np.pi * freq / fs), r * r]
    return lfilter([1 - r], a, x)


def synth_utterance(spk: SyntheticSpeaker, seconds: float, rng: np.random.Generator, fs: int = sig.SAMPLE_RATE) -> np.ndarray:
    """Syllable-rate formant pseudo-speech for one speaker, peak-normalized to 0.5."""
    n = int(seconds * fs)
    out = np.zeros(n)
    pos = int(rng.uniform(0.05, 0.2) * fs)
    while pos < n:
        dur = int(rng.uniform(0.12, 0.35) * fs)
        seg_n = min(dur, n - pos)
        if seg_n < 64:
            break
        t = np.arange(seg_n) / fs
        f0 = spk.f0 * (1 + 0.08 * rng.standard_normal()) * (1 + 0.1 * np.sin(2 * np.pi * rng.uniform(1, 4) * t))
        phase = np.cumsum(f0) / fs
        pulses = (np.diff(np.floor(phase), prepend=0) > 0).astype(float)
        src = lfilter([1.0], [1.0, -spk.tilt], pulses) + spk.breathiness * rng.standard_normal(seg_n)
        formants = _VOWELS[rng.integers(len(_VOWELS))] / spk.tract_scale
        seg = np.zeros(seg_n)
        for k, f in enumerate(formants):
            seg += _resonator(src, f, (60 + 40 * k) * spk.bandwidth_scale, fs) / (k + 1)
        if rng.random() < 0.3:
            fric = rng.standard_normal(seg_n)
            fric = lfilter([1, -0.95], [1.0], fric)
            seg = np.where(t < t[-1] * 0.3, 0.3 * fric * seg.std() / (fric.std() + 1e-12), seg)
        seg *= np.hanning(seg_n) ** 0.5
        out[pos : pos + seg_n] += seg
        pos += seg_n + int(rng.exponential(0.08) * fs)
    peak = np.max(np.abs(out))
    return out * (0.5 / peak) if peak > 0 else out


def make_synthetic_corpus(
    out_dir: str | Path,
    n_speakers: int = 12,
    utts_per_speaker: int = 4,
    seconds: float = 4.0,
    seed: int = 0,
) -> Path:
    """Write a synthetic per-speaker corpus (16-bit PCM) and return its path."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    for i in range(n_speakers):
        spk = random_speaker(rng)
        d = out_dir / f"spk{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        for j in range(utts_per_speaker):
            x = synth_utterance(spk, seconds, rng)
            sig.write_wav(d / f"utt{j:02d}.wav", x, pcm16=True)
    return out_dir


def colored_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random stationary noise: white, pink, brown or band-limited hum, unit RMS."""
    kind = int(rng.integers(4))
    w = rng.standard_normal(n)
    if kind == 1:
        spec = np.fft.rfft(w)
        f = np.arange(spec.size)
        spec[1:] /= np.sqrt(f[1:])
        w = np.fft.irfft(spec, n)
    elif kind == 2:
        w = lfilter([1.0], [1.0, -0.98], w)
    elif kind == 3:
        t = np.arange(n) / sig.SAMPLE_RATE
        f = rng.uniform(50, 400)
        w = 0.3 * w + sum(np.sin(2 * np.pi * f * k * t + rng.uniform(0, 6.3)) / k for k in range(1, 5))
    w = w - w.mean()
    return w / (np.sqrt(np.mean(w * w)) + 1e-12)
