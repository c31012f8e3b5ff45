"""Shoebox image-source room impulse responses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import GeometryError, ParameterError

SPEED_OF_SOUND = 343.0

DIM_RANGE = ((3.0, 8.0), (3.0, 5.0), (3.0, 4.0))
RT60_RANGE = (0.2, 1.2)


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple[float, float, float]
    rt60: float
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]

    def validate(self, strict_ranges: bool = True) -> None:
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise GeometryError(f"bad room dimensions {self.dimensions}")
        for name, p in (("source", self.source_pos), ("mic", self.mic_pos)):
            p = np.asarray(p, dtype=float)
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
                raise GeometryError(f"{name} position {tuple(p)} not strictly inside room {tuple(dims)}")
        if self.rt60 < 0:
            raise ParameterError("rt60 must be non-negative")
        if strict_ranges:
            for v, (lo, hi) in zip(dims, DIM_RANGE):
                if not lo <= v <= hi:
                    raise GeometryError(f"dimension {v} outside [{lo}, {hi}]")
            if not RT60_RANGE[0] <= self.rt60 <= RT60_RANGE[1]:
                raise ParameterError(f"rt60 {self.rt60} outside {RT60_RANGE}")


def sample_room(rng: np.random.Generator, margin: float = 0.5) -> RoomSpec:
    """Draw a room uniformly from the supported size and RT60 ranges."""
    dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in DIM_RANGE)
    rt60 = float(rng.uniform(*RT60_RANGE))

    def pos():
        return tuple(float(rng.uniform(margin, d - margin)) for d in dims)

    src, mic = pos(), pos()
    while np.linalg.norm(np.subtract(src, mic)) < 0.3:
        mic = pos()
    return RoomSpec(dims, rt60, src, mic)


def reflection_coefficient(room: RoomSpec) -> float:
    """Uniform wall pressure reflection coefficient from the Eyring formula.

    Image-source energy decays by ``beta**2`` per reflection, which makes
    Eyring (rather than Sabine) the consistent inversion.
    """
    if room.rt60 <= 0:
        return 0.0
    lx, ly, lz = room.dimensions
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    return float(np.exp(-0.0805 * volume / (surface * room.rt60)))


def _images(room: RoomSpec, r_max: float, fs: int, n: int):
    """Arrival sample, reflection count and spreading amplitude of every image within ``r_max``."""
    L = np.asarray(room.dimensions, dtype=float)
    src = np.asarray(room.source_pos, dtype=float)
    mic = np.asarray(room.mic_pos, dtype=float)
    axes = []
    for a in range(3):
        qmax = int(np.ceil(r_max / (2 * L[a]))) + 1
        q = np.arange(-qmax, qmax + 1)
        coords = np.concatenate([src[a] + 2 * q * L[a] - mic[a], -src[a] + 2 * q * L[a] - mic[a]])
        refl = np.concatenate([2 * np.abs(q), np.abs(q - 1) + np.abs(q)])
        keep = np.abs(coords) <= r_max
        axes.append((coords[keep], refl[keep]))
    (cx, rx), (cy, ry), (cz, rz) = axes
    dyz2 = (cy[:, None] ** 2 + cz[None, :] ** 2).ravel()
    ryz = (ry[:, None] + rz[None, :]).ravel()
    idx_all, order_all, amp_all = [], [], []
    for xi, nx in zip(cx, rx):
        dist = np.sqrt(xi * xi + dyz2)
        idx = np.floor(dist / SPEED_OF_SOUND * fs).astype(np.int64)
        m = (dist <= r_max) & (idx < n)
        if not m.any():
            continue
        idx_all.append(idx[m])
        order_all.append((nx + ryz[m]).astype(np.int32))
        amp_all.append(1.0 / (4 * np.pi * np.maximum(dist[m], 1e-3)))
    return np.concatenate(idx_all), np.concatenate(order_all), np.concatenate(amp_all)


def _calibrate_beta(idx, order, amp, rt60: float, fs: int, n: int, beta0: float, iters: int = 30) -> float:
    """Bisect the reflection coefficient so the Schroeder decay of the response matches ``rt60``."""
    if 25.0 / 60.0 * rt60 * 1.2 > n / fs:
        return beta0

    def t60(beta):
        h = np.bincount(idx, weights=amp * np.power(beta, order), minlength=n)
        try:
            return schroeder_t60(h, fs)
        except ParameterError:
            return 0.0

    lo, hi = 1e-3, 0.99999
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if t60(mid) < rt60:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_rir(
    room: RoomSpec,
    fs: int = 16000,
    duration: float | None = None,
    strict_ranges: bool = False,
    calibrate: bool = True,
) -> np.ndarray:
    """Image-source RIR with integer-sample arrival times.

    All images whose path length fits in ``duration`` seconds are summed
    (default: the RT60, capped at 1 s). Amplitudes follow
    ``beta**n_reflections / (4 pi r)``. The uniform reflection coefficient
    starts from the Eyring value and, with ``calibrate``, is refined so the
    Schroeder decay time of the response equals ``room.rt60``. The result
    is deterministic in ``room``.
    """
    room.validate(strict_ranges=strict_ranges)
    beta = reflection_coefficient(room)
    src = np.asarray(room.source_pos, dtype=float)
    mic = np.asarray(room.mic_pos, dtype=float)
    if duration is None:
        duration = min(max(room.rt60, 0.05), 1.0)
    n = int(np.ceil(duration * fs)) + 1
    r_max = duration * SPEED_OF_SOUND
    if beta < 1e-6:
        r_max = float(np.linalg.norm(src - mic)) + 1e-9
        n = max(n, int(r_max / SPEED_OF_SOUND * fs) + 1)
    idx, order, amp = _images(room, r_max, fs, n)
    if calibrate and beta >= 1e-6:
        beta = _calibrate_beta(idx, order, amp, room.rt60, fs, n, beta)
    return np.bincount(idx, weights=amp * np.power(beta, order), minlength=n)


def schroeder_t60(h: np.ndarray, fs: int = 16000, lo_db: float = -5.0, hi_db: float = -25.0) -> float:
    """Reverberation time from a line fit to the Schroeder backward integral."""
    e = np.cumsum(h[::-1] ** 2)[::-1]
    edc = 10 * np.log10(e / e[0] + 1e-300)
    i0 = int(np.argmax(edc <= lo_db))
    i1 = int(np.argmax(edc <= hi_db))
    if i1 <= i0:
        raise ParameterError("decay curve does not span the fitting range")
    t = np.arange(i0, i1) / fs
    slope = np.polyfit(t, edc[i0:i1], 1)[0]
    return -60.0 / slope


class RIRProvider(Protocol):
    def __call__(self, rng: np.random.Generator) -> np.ndarray: ...


@dataclass
class ImageSourceProvider:
    """Pool of image-source RIRs drawn from random rooms.

    ``n_rooms * positions_per_room`` responses are generated lazily from
    ``seed``; callers pick one with their own generator.
    """

    n_rooms: int = 20
    positions_per_room: int = 4
    seed: int = 0
    duration: float = 0.5
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.n_rooms * self.positions_per_room

    def room(self, index: int) -> RoomSpec:
        r, p = divmod(index, self.positions_per_room)
        base = sample_room(np.random.default_rng([self.seed, r]))
        pos_rng = np.random.default_rng([self.seed, r, p])
        if p == 0:
            return base
        moved = sample_room(pos_rng)
        scale = np.asarray(base.dimensions) / np.asarray(moved.dimensions)
        src = tuple(np.asarray(moved.source_pos) * scale)
        mic = tuple(np.asarray(moved.mic_pos) * scale)
        return RoomSpec(base.dimensions, base.rt60, src, mic)

    def get(self, index: int) -> np.ndarray:
        if index not in self._cache:
            self._cache[index] = generate_rir(self.room(index), duration=min(self.duration, self.room(index).rt60))
        return self._cache[index]

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        return self.get(int(rng.integers(self.size)))
