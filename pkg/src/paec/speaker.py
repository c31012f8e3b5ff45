"""Speaker representations for target-speaker conditioning.

Global side: FBank statistics (160) and a provider embedding (256) become two
attention tokens; per-frame bottleneck features query them through multi-head
cross-attention and the result scales the bottleneck multiplicatively.

Local side: a frequency-axis Bi-LSTM over the enrollment spectrogram, averaged
over time, gives one value per frequency bin. That vector is appended to
every input frame as an extra channel and fed to a parallel speaker encoder
whose layer outputs are added to the main encoder.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
from torch import nn

from . import signal as sig
from .errors import DurationError, ProviderError, ShapeError
from .layers import GatedConv2d, make_lstm

N_MELS = 80
FBANK_DIM = 2 * N_MELS
EMBED_DIM = 256
FBANK_FFT = 1024


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = FBANK_FFT, fs: int = sig.SAMPLE_RATE, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = fmax or fs / 2

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.linspace(0, fs / 2, n_fft // 2 + 1)
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (ctr - lo)
    down = (hi - freqs) / (hi - ctr)
    return np.maximum(0.0, np.minimum(up, down))


_MEL = mel_filterbank()


def log_fbank(wave: np.ndarray) -> np.ndarray:
    """80-band log-mel energies on the 20 ms / 10 ms grid, shape ``(frames, 80)``."""
    spec = sig.stft(wave, sig.FRAME_LEN, sig.HOP, FBANK_FFT)
    return np.log(np.abs(spec) ** 2 @ _MEL.T + 1e-10)


def compute_fbank_stats(enrollment: np.ndarray) -> np.ndarray:
    """Temporal mean then standard deviation of the log-mel energies (160 values)."""
    enrollment = np.asarray(enrollment, dtype=np.float64)
    if enrollment.size < sig.SAMPLE_RATE:
        raise DurationError(f"enrollment must be at least 1 s, got {enrollment.size / sig.SAMPLE_RATE:.2f} s")
    fb = log_fbank(enrollment)
    return np.concatenate([fb.mean(axis=0), fb.std(axis=0)])


class EmbeddingProvider(Protocol):
    def embed(self, enrollment: np.ndarray, speaker_id: str | None = None) -> np.ndarray: ...


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != EMBED_DIM:
        raise ProviderError(f"embedding must have {EMBED_DIM} values, got {v.size}")
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise ProviderError("embedding has zero or non-finite norm")
    return v / n


class StubProvider:
    """Deterministic stand-in for a speaker-verification network.

    A fixed seeded Gaussian projection of the FBank statistics, L2-normalized.
    """

    def __init__(self, seed: int = 1234):
        self.seed = seed
        self.projection = np.random.default_rng(seed).standard_normal((EMBED_DIM, FBANK_DIM)) / math.sqrt(FBANK_DIM)

    def embed(self, enrollment: np.ndarray, speaker_id: str | None = None) -> np.ndarray:
        return _unit(self.projection @ compute_fbank_stats(enrollment))


class FileProvider:
    """Precomputed embeddings from a text table: ``speaker_id v1 ... v256`` per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.table: dict[str, np.ndarray] = {}
        try:
            lines = self.path.read_text().splitlines()
        except OSError as exc:
            raise ProviderError(f"cannot read embedding file {self.path}: {exc}") from exc
        for i, line in enumerate(lines, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                self.table[parts[0]] = _unit(np.array([float(v) for v in parts[1:]]))
            except (ValueError, ProviderError) as exc:
                raise ProviderError(f"{self.path}:{i}: {exc}") from exc

    def embed(self, enrollment: np.ndarray, speaker_id: str | None = None) -> np.ndarray:
        if speaker_id is None or speaker_id not in self.table:
            raise ProviderError(f"no precomputed embedding for speaker {speaker_id!r} in {self.path}")
        return self.table[speaker_id]


def embed_speaker(enrollment: np.ndarray, provider: EmbeddingProvider, speaker_id: str | None = None) -> np.ndarray:
    """Provider embedding, re-normalized on ingestion."""
    try:
        v = provider.embed(enrollment, speaker_id)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"embedding provider failed: {exc}") from exc
    return _unit(v)


def make_provider(kind: str = "stub", path: str | Path | None = None) -> EmbeddingProvider:
    if kind == "stub":
        return StubProvider()
    if kind == "file":
        if path is None:
            raise ProviderError("file provider needs an embedding file")
        return FileProvider(path)
    raise ProviderError(f"unknown embedding provider {kind!r}")


@dataclass
class SpeakerInputs:
    """Enrollment-derived tensors for one batch.

    ``enroll_spec`` holds compressed complex spectra ``(batch, frames, bins)``.
    """

    fbank: torch.Tensor
    embedding: torch.Tensor
    enroll_spec: torch.Tensor

    def to(self, dtype) -> "SpeakerInputs":
        cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
        return SpeakerInputs(self.fbank.to(dtype), self.embedding.to(dtype), self.enroll_spec.to(cdtype))


def speaker_inputs(enrollments: list[np.ndarray], provider: EmbeddingProvider | None = None, speaker_ids=None, dtype=torch.float32) -> SpeakerInputs:
    """Build a :class:`SpeakerInputs` batch from raw enrollment waveforms.

    Enrollment spectrograms of unequal length are cropped to the shortest.
    """
    provider = provider or StubProvider()
    speaker_ids = speaker_ids or [None] * len(enrollments)
    fb = np.stack([compute_fbank_stats(e) for e in enrollments])
    emb = np.stack([embed_speaker(e, provider, sid) for e, sid in zip(enrollments, speaker_ids)])
    specs = [sig.power_compress(sig.stft(e)) for e in enrollments]
    t = min(s.shape[0] for s in specs)
    spec = np.stack([s[:t] for s in specs])
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    return SpeakerInputs(torch.as_tensor(fb, dtype=dtype), torch.as_tensor(emb, dtype=dtype), torch.as_tensor(spec, dtype=cdtype))


class MCAFusion(nn.Module):
    """Multi-head cross-attention from bottleneck frames to speaker tokens.

    Queries come from each frame's flattened bottleneck, keys and values from
    the projected tokens. Returns a gain grid shaped like the bottleneck.
    """

    def __init__(self, query_dim: int, token_dims=(FBANK_DIM, EMBED_DIM), dim: int = 128, heads: int = 8):
        super().__init__()
        if dim % heads:
            raise ShapeError("attention dim must be divisible by the number of heads")
        self.dim, self.heads = dim, heads
        self.token_norm = nn.ModuleList(nn.LayerNorm(d) for d in token_dims)
        self.token_proj = nn.ModuleList(nn.Linear(d, dim) for d in token_dims)
        self.q = nn.Linear(query_dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, query_dim)
        nn.init.normal_(self.out.weight, std=1e-3)
        nn.init.ones_(self.out.bias)

    def tokens(self, raw: list[torch.Tensor]) -> torch.Tensor:
        """Project raw speaker vectors to ``(batch, n_tokens, dim)``."""
        if len(raw) != len(self.token_proj):
            raise ShapeError(f"expected {len(self.token_proj)} speaker tokens, got {len(raw)}")
        return torch.stack([p(n(r)) for r, n, p in zip(raw, self.token_norm, self.token_proj)], dim=1)

    def attend(self, query: torch.Tensor, tokens: torch.Tensor):
        """``query (B, T, query_dim)``, ``tokens (B, N, dim)`` -> context ``(B, T, dim)``, weights ``(B, T, heads, N)``."""
        b, t, _ = query.shape
        n = tokens.shape[1]
        hd = self.dim // self.heads
        q = self.q(query).reshape(b, t, self.heads, hd)
        k = self.k(tokens).reshape(b, n, self.heads, hd)
        v = self.v(tokens).reshape(b, n, self.heads, hd)
        w = torch.softmax(torch.einsum("bthd,bnhd->bthn", q, k) / math.sqrt(hd), dim=-1)
        ctx = torch.einsum("bthn,bnhd->bthd", w, v).reshape(b, t, self.dim)
        return self.o(ctx), w

    def forward(self, bottleneck: torch.Tensor, raw_tokens: list[torch.Tensor]):
        b, c, t, f = bottleneck.shape
        query = bottleneck.permute(0, 2, 1, 3).reshape(b, t, c * f)
        if query.shape[-1] != self.q.in_features:
            raise ShapeError(f"bottleneck has {c * f} features per frame, expected {self.q.in_features}")
        ctx, w = self.attend(query, self.tokens(raw_tokens))
        gain = self.out(ctx).reshape(b, t, c, f).permute(0, 2, 1, 3)
        return gain, w


class ConcatFusion(nn.Module):
    """Baseline: one concatenated speaker vector mapped to a frame-constant gain grid."""

    def __init__(self, query_dim: int, token_dims=(FBANK_DIM, EMBED_DIM)):
        super().__init__()
        self.norm = nn.LayerNorm(sum(token_dims))
        self.out = nn.Linear(sum(token_dims), query_dim)
        nn.init.normal_(self.out.weight, std=1e-3)
        nn.init.ones_(self.out.bias)

    def forward(self, bottleneck: torch.Tensor, raw_tokens: list[torch.Tensor]):
        b, c, t, f = bottleneck.shape
        g = self.out(self.norm(torch.cat(raw_tokens, dim=-1))).reshape(b, c, 1, f)
        return g.expand(b, c, t, f), None


class LocalSpeakerRep(nn.Module):
    """Frequency Bi-LSTM over the enrollment, time average, then a per-bin linear map."""

    def __init__(self, hidden: int = 160, max_frames: int | None = 16):
        super().__init__()
        self.lstm = make_lstm(2, hidden, bidirectional=True)
        self.fc = nn.Linear(2 * hidden, 1)
        self.max_frames = max_frames

    def forward(self, enroll_spec: torch.Tensor) -> torch.Tensor:
        """``enroll_spec (B, T, F)`` complex -> ``(B, F)`` real conditioning vector."""
        b, t, f = enroll_spec.shape
        if t == 0:
            raise DurationError("empty enrollment spectrogram")
        if self.max_frames and t > self.max_frames:
            # evenly spaced subset keeps the time average affordable
            idx = torch.linspace(0, t - 1, self.max_frames).round().long()
            enroll_spec = enroll_spec[:, idx]
            t = self.max_frames
        x = torch.stack([enroll_spec.real, enroll_spec.imag], dim=-1).reshape(b * t, f, 2)
        h = self.lstm(x)[0].reshape(b, t, f, -1).mean(dim=1)
        return self.fc(h).squeeze(-1)


class SpeakerEncoder(nn.Module):
    """Parallel encoder mirroring the first layers of the stage encoder."""

    def __init__(self, in_ch: int, width: int, n_layers: int = 4, kernel=(2, 3), stride=(1, 2)):
        super().__init__()
        chans = [in_ch] + [width] * n_layers
        self.layers = nn.ModuleList(GatedConv2d(a, b, kernel, stride) for a, b in zip(chans[:-1], chans[1:]))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for layer in self.layers:
            x = layer(x)
            maps.append(x)
        return maps


def provider_fingerprint(provider: EmbeddingProvider) -> str:
    if isinstance(provider, StubProvider):
        return f"stub:{provider.seed}"
    if isinstance(provider, FileProvider):
        return "file:" + hashlib.sha1(provider.path.read_bytes()).hexdigest()[:12]
    return type(provider).__name__
