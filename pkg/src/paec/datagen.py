"""Train/validation/test dataset generation with speaker-disjoint splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import CorpusError, PAECError
from .manifest import ManifestEntry, save_clip, write_manifest
from .rir import ImageSourceProvider
from .scene import CLIP_SECONDS, SCENARIOS, ScenarioClip, build_scene, sample_specs

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class GenerationError(PAECError):
    def __init__(self, clip_id: str, cause: Exception):
        super().__init__(f"failed to generate {clip_id}: {cause}")
        self.clip_id = clip_id


@dataclass(frozen=True)
class DatagenPlan:
    """Clip counts per split. The defaults scale 2 h / 10 min / 200 clips by ``hours / 2``."""

    train: int
    val: int
    test: int

    @classmethod
    def from_hours(cls, hours: float, clip_seconds: float = CLIP_SECONDS) -> "DatagenPlan":
        n_train = max(1, int(round(hours * 3600 / clip_seconds)))
        n_val = max(1, int(round(hours / 12 * 3600 / clip_seconds)))
        n_test = max(1, int(round(100 * hours)))
        return cls(n_train, n_val, n_test)


def split_speakers(speakers: list[str], seed: int, ratios=(0.8, 0.1, 0.1), min_per_split: int = 3) -> dict[str, list[str]]:
    """Partition speakers 8:1:1 so that no speaker appears in two splits."""
    if len(speakers) < min_per_split * len(SPLITS):
        raise CorpusError(f"need at least {min_per_split * len(SPLITS)} speakers for disjoint splits, found {len(speakers)}")
    order = [speakers[i] for i in np.random.default_rng(seed).permutation(len(speakers))]
    n = len(order)
    n_val = max(min_per_split, int(round(ratios[1] * n)))
    n_test = max(min_per_split, int(round(ratios[2] * n)))
    n_train = n - n_val - n_test
    if n_train < min_per_split:
        raise CorpusError("too few speakers left for the training split")
    return {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }


def generate_dataset(
    corpus_dir: str | Path,
    out_dir: str | Path,
    hours: float,
    seed: int,
    noise_dir: str | Path | None = None,
    clip_seconds: float = CLIP_SECONDS,
    plan: DatagenPlan | None = None,
    n_rooms: int = 20,
) -> dict[str, Path]:
    """Synthesize all three splits and write ``<split>.jsonl`` manifests.

    Audio goes to ``out_dir/<split>/`` with paths stored relative to
    ``out_dir``. Rooms are drawn from split-specific seeds, so no RIR is
    shared across splits either.
    """
    corpus = Corpus(corpus_dir, noise_dir)
    plan = plan or DatagenPlan.from_hours(hours, clip_seconds)
    groups = split_speakers(corpus.speakers, seed)
    noise_groups = {}
    if corpus.noise_files:
        perm = np.random.default_rng(seed + 1).permutation(len(corpus.noise_files))
        for k, split in enumerate(SPLITS):
            noise_groups[split] = [corpus.noise_files[i] for i in perm[k :: len(SPLITS)]]
    out_dir = Path(out_dir)
    manifests = {}
    for k, split in enumerate(SPLITS):
        count = getattr(plan, split)
        specs = sample_specs(count, seed * 10 + k, groups[split])
        provider = ImageSourceProvider(n_rooms=n_rooms, seed=seed * 10 + k)
        split_corpus = _SplitCorpus(corpus, noise_groups.get(split, corpus.noise_files))
        entries: list[ManifestEntry] = []
        for i, spec in enumerate(specs):
            clip_id = f"{split}_{i:05d}"
            try:
                clip = build_scene(spec, split_corpus, provider, clip_seconds, clip_id)
                entries.append(save_clip(clip, out_dir / split, relative_to=out_dir, split=split))
            except Exception as exc:
                raise GenerationError(clip_id, exc) from exc
        path = out_dir / f"{split}.jsonl"
        write_manifest(entries, path)
        manifests[split] = path
        log.info("%s: %d clips", split, len(entries))
    return manifests


def toy_clips(
    corpus: Corpus,
    counts: dict[str, int],
    seed: int = 0,
    seconds: float = 1.0,
    rir_provider=None,
) -> list[ScenarioClip]:
    """Small in-memory set with a fixed number of clips per scenario.

    Specs are drawn from the regular sampler and filtered by scenario, so
    every other field keeps its usual distribution.
    """
    provider = rir_provider or ImageSourceProvider(n_rooms=2, seed=seed, duration=0.3)
    want = dict(counts)
    specs = []
    k = 0
    while any(want.values()):
        for spec in sample_specs(200, seed * 1000 + k, corpus.speakers):
            if want.get(spec.scenario, 0) > 0:
                want[spec.scenario] -= 1
                specs.append(spec)
        k += 1
    return [build_scene(sp, corpus, provider, seconds, f"toy{i:03d}") for i, sp in enumerate(specs)]


class _SplitCorpus:
    """Corpus view restricting the noise pool to one split."""

    def __init__(self, corpus: Corpus, noise_files):
        self._corpus = corpus
        self.noise_files = list(noise_files)

    def __getattr__(self, name):
        return getattr(self._corpus, name)


def summarize(entries: list[ManifestEntry], bins: int = 6) -> dict:
    """Scenario fractions and histograms of realized SER and SNR."""
    n = len(entries)
    counts = {s: sum(e.scenario == s for e in entries) for s in SCENARIOS}
    with_talker = [e for e in entries if e.scenario != "FEST"]
    inter = {k: sum(e.n_interferers == k for e in with_talker) for k in (0, 1, 2)}
    sers = np.array([e.realized_ser_db for e in entries if e.realized_ser_db is not None])
    snrs = np.array([e.realized_snr_db for e in entries if e.realized_snr_db is not None])

    def hist(values, lo, hi):
        if values.size == 0:
            return []
        c, edges = np.histogram(values, bins=bins, range=(lo, hi))
        return [(float(a), float(b), int(k)) for a, b, k in zip(edges[:-1], edges[1:], c)]

    return {
        "clips": n,
        "scenario_counts": counts,
        "scenario_fractions": {s: (counts[s] / n if n else 0.0) for s in SCENARIOS},
        "interferer_fractions": {k: (v / len(with_talker) if with_talker else 0.0) for k, v in inter.items()},
        "ser_hist": hist(sers, -15, 15),
        "snr_hist": hist(snrs, -5, 25),
    }


def format_summary(name: str, summary: dict) -> str:
    lines = [f"[{name}] {summary['clips']} clips"]
    lines.append(
        "  scenarios: "
        + ", ".join(f"{s}={summary['scenario_counts'][s]} ({summary['scenario_fractions'][s]:.2f})" for s in SCENARIOS)
    )
    lines.append(
        "  interferers (DT+NEST): " + ", ".join(f"{k}: {v:.2f}" for k, v in summary["interferer_fractions"].items())
    )
    for key, label in (("ser_hist", "SER"), ("snr_hist", "SNR")):
        if summary[key]:
            lines.append(f"  realized {label} histogram (dB):")
            for a, b, c in summary[key]:
                lines.append(f"    [{a:6.1f}, {b:6.1f}) {c:5d} " + "#" * min(c, 60))
    return "\n".join(lines)
