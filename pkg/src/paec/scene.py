"""Scenario sampling, echo synthesis and mixture construction.

A mixture follows ``d = s + y + v + z``: near-end speech, echo, noise and
interfering speech. Three scenarios are generated: double talk (DT), far-end
single talk (FEST, no near-end talker) and near-end single talk (NEST, no
echo).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from . import signal as sig
from .corpus import Corpus, colored_noise
from .errors import CorpusError, DegenerateEnergyError, ParameterError
from .rir import ImageSourceProvider, RIRProvider

SCENARIOS = ("DT", "FEST", "NEST")
SCENARIO_PROBS = (0.8, 0.1, 0.1)
INTERFERER_PROBS = (0.2, 0.5, 0.3)
DISTORTIONS = ("none", "clip", "attenuate")
DISTORTION_RATE = 0.1
SER_RANGE = (-15.0, 15.0)
SNR_RANGE = (-5.0, 25.0)
DELAY_RANGE = (0.0, 0.5)
CLIP_FACTOR = 4.0
ATTENUATION_RANGE = (0.1, 0.5)
CLIP_SECONDS = 10.0
# RMS level of the level-setting component, dBFS
LEVEL_RANGE_DB = (-33.0, -21.0)


@dataclass(frozen=True)
class SceneSpec:
    scenario: str
    ser_db: float
    snr_db: float
    n_interferers: int
    echo_delay_s: float
    distortion: str
    near_speaker: str
    far_speaker: str
    interferers: tuple[str, ...]
    seed: int

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ParameterError(f"unknown scenario {self.scenario!r}")
        if not SER_RANGE[0] <= self.ser_db <= SER_RANGE[1]:
            raise ParameterError(f"ser_db {self.ser_db} outside {SER_RANGE}")
        if not SNR_RANGE[0] <= self.snr_db <= SNR_RANGE[1]:
            raise ParameterError(f"snr_db {self.snr_db} outside {SNR_RANGE}")
        if not DELAY_RANGE[0] <= self.echo_delay_s <= DELAY_RANGE[1]:
            raise ParameterError(f"echo delay {self.echo_delay_s} outside {DELAY_RANGE}")
        if self.distortion not in DISTORTIONS:
            raise ParameterError(f"unknown distortion {self.distortion!r}")
        if self.n_interferers not in (0, 1, 2) or len(self.interferers) != self.n_interferers:
            raise ParameterError("n_interferers must be 0, 1 or 2 and match the interferer list")
        if self.scenario == "FEST" and self.n_interferers:
            raise ParameterError("interferers only appear with a near-end talker")
        if self.far_speaker == self.near_speaker:
            raise ParameterError("far-end and near-end speakers must differ")
        if self.near_speaker in self.interferers or len(set(self.interferers)) != len(self.interferers):
            raise ParameterError("interferers must be distinct from each other and from the target")


@dataclass
class ScenarioClip:
    """All components of one mixture. ``x`` is the far-end reference signal."""

    id: str
    spec: SceneSpec
    d: np.ndarray
    s: np.ndarray
    y: np.ndarray
    v: np.ndarray
    z: np.ndarray
    x: np.ndarray
    enrollment: np.ndarray
    realized_ser_db: float | None
    realized_snr_db: float | None
    extra: dict = field(default_factory=dict)


def sample_specs(n: int, seed: int, speakers: list[str] | None = None) -> list[SceneSpec]:
    """Draw ``n`` scene specifications.

    Scenarios follow 8:1:1 (DT:FEST:NEST). With a near-end talker present,
    0/1/2 interferers are drawn with probabilities 0.2/0.5/0.3. One clip in
    ten gets echo distortion, split evenly between clipping and attenuation.
    """
    if n < 1:
        raise ParameterError("n must be at least 1")
    speakers = list(speakers) if speakers is not None else [f"spk{i:03d}" for i in range(10)]
    if len(speakers) < 3:
        raise ParameterError("need at least three speakers to keep roles disjoint")
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(n):
        scenario = SCENARIOS[rng.choice(3, p=SCENARIO_PROBS)]
        n_int = 0 if scenario == "FEST" else int(rng.choice(3, p=INTERFERER_PROBS))
        r = rng.random()
        distortion = "none" if r >= DISTORTION_RATE else ("clip" if r < DISTORTION_RATE / 2 else "attenuate")
        perm = rng.permutation(len(speakers))
        near = speakers[perm[0]]
        far = speakers[perm[1]]
        # interferers may coincide with the far-end talker, never with the target
        pool = [speakers[i] for i in perm[1:]]
        chosen = rng.choice(len(pool), size=n_int, replace=False) if n_int else []
        specs.append(
            SceneSpec(
                scenario=scenario,
                ser_db=float(rng.uniform(*SER_RANGE)),
                snr_db=float(rng.uniform(*SNR_RANGE)),
                n_interferers=n_int,
                echo_delay_s=float(rng.uniform(*DELAY_RANGE)),
                distortion=distortion,
                near_speaker=near,
                far_speaker=far,
                interferers=tuple(pool[i] for i in chosen),
                seed=int(rng.integers(2**31 - 1)),
            )
        )
    return specs


def synth_echo(
    farend: np.ndarray,
    rir: np.ndarray,
    delay_s: float,
    distortion: str = "none",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Convolve with the room response, delay by whole samples, then distort.

    ``clip`` hard-limits at four times the RMS of the convolved signal;
    ``attenuate`` applies a gain drawn uniformly from [0.1, 0.5].
    """
    farend = np.asarray(farend, dtype=np.float64)
    if farend.size == 0:
        raise ParameterError("empty far-end signal")
    n = farend.size
    conv = fftconvolve(farend, np.asarray(rir, dtype=np.float64))[:n]
    k = int(round(delay_s * sig.SAMPLE_RATE))
    echo = np.zeros(n)
    if k < n:
        echo[k:] = conv[: n - k]
    if distortion == "clip":
        limit = CLIP_FACTOR * np.sqrt(np.mean(conv**2))
        echo = np.clip(echo, -limit, limit)
    elif distortion == "attenuate":
        rng = rng if rng is not None else np.random.default_rng()
        echo = echo * rng.uniform(*ATTENUATION_RANGE)
    elif distortion != "none":
        raise ParameterError(f"unknown distortion {distortion!r}")
    return echo


def _fill(corpus: Corpus, paths, n: int, rng: np.random.Generator) -> np.ndarray:
    """Concatenate randomly ordered utterances until ``n`` samples, then crop at a random offset."""
    if not paths:
        raise CorpusError("no utterances available")
    parts, total = [], 0
    while total < n + sig.SAMPLE_RATE // 2:
        x = corpus.load(paths[int(rng.integers(len(paths)))])
        parts.append(x)
        total += x.size
    cat = np.concatenate(parts)
    start = int(rng.integers(0, cat.size - n + 1))
    return cat[start : start + n]


def _rms_scale(x: np.ndarray, level_db: float) -> np.ndarray:
    e = sig.energy(x)
    if e <= 0:
        raise DegenerateEnergyError("cannot level a silent signal")
    return x * (10 ** (level_db / 20) / np.sqrt(e / x.size))


def build_scene(
    spec: SceneSpec,
    corpus: Corpus,
    rir_provider: RIRProvider | None = None,
    seconds: float = CLIP_SECONDS,
    clip_id: str | None = None,
) -> ScenarioClip:
    """Synthesize one mixture from ``spec``; all randomness derives from ``spec.seed``.

    The SER is set against the echo energy and the SNR against the combined
    noise plus interfering speech. In FEST the SNR is taken against the echo.
    Near-end speech is kept dry. The mixture is scaled down as a whole if its
    peak would exceed 0.99, which leaves both ratios unchanged.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    rir_provider = rir_provider or ImageSourceProvider()
    n = int(seconds * sig.SAMPLE_RATE)
    zeros = np.zeros(n)

    near_paths = corpus.utterance_paths(spec.near_speaker)
    if len(near_paths) < 2:
        raise CorpusError(f"speaker {spec.near_speaker!r} needs two utterances (target and enrollment)")
    enroll_idx = int(rng.integers(len(near_paths)))
    enrollment = corpus.load(near_paths[enroll_idx])
    target_paths = [p for i, p in enumerate(near_paths) if i != enroll_idx]

    level = float(rng.uniform(*LEVEL_RANGE_DB))
    far_paths = corpus.utterance_paths(spec.far_speaker)
    x = zeros.copy()
    y = zeros.copy()
    s = zeros.copy()
    if spec.scenario in ("DT", "FEST"):
        x = _rms_scale(_fill(corpus, far_paths, n, rng), level + float(rng.uniform(-3, 3)))
        echo = synth_echo(x, rir_provider(rng), spec.echo_delay_s, spec.distortion, rng)
        if sig.energy(echo) <= 0:
            raise DegenerateEnergyError("synthesized echo is silent")
    if spec.scenario in ("DT", "NEST"):
        s = _rms_scale(_fill(corpus, target_paths, n, rng), level)
    if spec.scenario == "DT":
        y = echo * sig.gain_for_ser(s, echo, spec.ser_db)
    elif spec.scenario == "FEST":
        y = _rms_scale(echo, level)

    v_raw = colored_noise(n, rng)
    if corpus.noise_files:
        v_raw = _fill(corpus, corpus.noise_files, n, rng)
    v_raw = v_raw / np.sqrt(sig.energy(v_raw))
    z_raw = zeros.copy()
    for spk in spec.interferers:
        zi = _fill(corpus, corpus.utterance_paths(spk), n, rng)
        z_raw += zi / np.sqrt(sig.energy(zi)) * 10 ** (rng.uniform(-3, 3) / 20)
    anchor = y if spec.scenario == "FEST" else s
    g = sig.gain_for_snr(anchor, v_raw + z_raw, spec.snr_db)
    v, z = g * v_raw, g * z_raw

    d = s + y + v + z
    peak = np.max(np.abs(d))
    if peak > 0.99:
        k = 0.99 / peak
        d, s, y, v, z, x = d * k, s * k, y * k, v * k, z * k, x * k
        d = s + y + v + z

    realized_ser = sig.energy_ratio_db(s, y) if spec.scenario == "DT" else None
    realized_snr = sig.energy_ratio_db(y if spec.scenario == "FEST" else s, v + z)
    return ScenarioClip(
        id=clip_id or f"clip{spec.seed}",
        spec=spec,
        d=d,
        s=s,
        y=y,
        v=v,
        z=z,
        x=x,
        enrollment=enrollment,
        realized_ser_db=realized_ser,
        realized_snr_db=realized_snr,
    )
