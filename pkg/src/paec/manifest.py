"""Line-delimited JSON manifests referencing per-component WAV files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import signal as sig
from .errors import ManifestParseError
from .scene import ScenarioClip, SceneSpec

COMPONENTS = ("d", "s", "y", "v", "z", "x", "enroll")


@dataclass
class ManifestEntry:
    id: str
    scenario: str
    ser_db: float
    snr_db: float
    n_interferers: int
    delay_s: float
    distortion: str
    paths: dict[str, str]
    realized_ser_db: float | None
    realized_snr_db: float | None
    seed: int
    near_speaker: str = ""
    far_speaker: str = ""
    interferers: list[str] = field(default_factory=list)
    split: str = ""

    @property
    def spec(self) -> SceneSpec:
        return SceneSpec(
            scenario=self.scenario,
            ser_db=self.ser_db,
            snr_db=self.snr_db,
            n_interferers=self.n_interferers,
            echo_delay_s=self.delay_s,
            distortion=self.distortion,
            near_speaker=self.near_speaker,
            far_speaker=self.far_speaker,
            interferers=tuple(self.interferers),
            seed=self.seed,
        )

    def resolve(self, component: str, root: str | Path) -> Path:
        p = Path(self.paths[component])
        return p if p.is_absolute() else Path(root) / p

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


_REQUIRED = {f for f in ManifestEntry.__dataclass_fields__ if f not in ("near_speaker", "far_speaker", "interferers", "split")}


def entry_for(clip: ScenarioClip, paths: dict[str, str], split: str = "") -> ManifestEntry:
    sp = clip.spec
    return ManifestEntry(
        id=clip.id,
        scenario=sp.scenario,
        ser_db=sp.ser_db,
        snr_db=sp.snr_db,
        n_interferers=sp.n_interferers,
        delay_s=sp.echo_delay_s,
        distortion=sp.distortion,
        paths=dict(paths),
        realized_ser_db=clip.realized_ser_db,
        realized_snr_db=clip.realized_snr_db,
        seed=sp.seed,
        near_speaker=sp.near_speaker,
        far_speaker=sp.far_speaker,
        interferers=list(sp.interferers),
        split=split,
    )


def save_clip(clip: ScenarioClip, audio_dir: str | Path, relative_to: str | Path | None = None, split: str = "") -> ManifestEntry:
    """Write every component of ``clip`` as float WAV and return its manifest entry.

    Paths are stored relative to ``relative_to`` when given, else absolute.
    """
    audio_dir = Path(audio_dir)
    audio_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    arrays = {"d": clip.d, "s": clip.s, "y": clip.y, "v": clip.v, "z": clip.z, "x": clip.x, "enroll": clip.enrollment}
    for name, arr in arrays.items():
        p = audio_dir / f"{clip.id}_{name}.wav"
        sig.write_wav(p, arr)
        paths[name] = str(p.relative_to(relative_to)) if relative_to is not None else str(p.resolve())
    return entry_for(clip, paths, split)


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for e in entries:
            f.write(e.to_json() + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a manifest; malformed lines raise :class:`ManifestParseError` with the line number."""
    entries = []
    with open(path) as f:
        for i, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(path, i, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestParseError(path, i, "record is not an object")
            missing = _REQUIRED - obj.keys()
            if missing:
                raise ManifestParseError(path, i, f"missing keys {sorted(missing)}")
            unknown = obj.keys() - ManifestEntry.__dataclass_fields__.keys()
            if unknown:
                raise ManifestParseError(path, i, f"unknown keys {sorted(unknown)}")
            try:
                entries.append(ManifestEntry(**obj))
            except TypeError as exc:
                raise ManifestParseError(path, i, str(exc)) from None
    return entries


def load_clip(entry: ManifestEntry, root: str | Path) -> ScenarioClip:
    """Load the audio referenced by ``entry``; relative paths resolve against ``root``."""
    audio = {c: sig.read_wav(entry.resolve(c, root)) for c in COMPONENTS if c in entry.paths}
    n = audio["d"].size
    zeros = np.zeros(n)
    return ScenarioClip(
        id=entry.id,
        spec=entry.spec,
        d=audio["d"],
        s=audio.get("s", zeros),
        y=audio.get("y", zeros),
        v=audio.get("v", zeros),
        z=audio.get("z", zeros),
        x=audio.get("x", zeros),
        enrollment=audio.get("enroll", zeros),
        realized_ser_db=entry.realized_ser_db,
        realized_snr_db=entry.realized_snr_db,
    )
