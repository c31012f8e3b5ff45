"""Log-magnitude spectrogram images with a shared color scale."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import signal as sig  # noqa: E402

FLOOR_DB = -80.0


def spectrogram_db(wave: np.ndarray) -> np.ndarray:
    """``20 log10 |STFT|`` floored at -80 dB, shape ``(bins, frames)``."""
    spec = np.abs(sig.stft(np.asarray(wave, dtype=np.float64))).T
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(spec)
    return np.maximum(db, FLOOR_DB)


def spectrogram_db_from_spec(spec: np.ndarray) -> np.ndarray:
    """Same scale as :func:`spectrogram_db` for an (uncompressed) complex spectrogram ``(frames, bins)``."""
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(np.abs(spec).T)
    return np.maximum(db, FLOOR_DB)


def plot_panels(panels: list[np.ndarray], titles: list[str], out_path: str | Path, vmax: float | None = None) -> Path:
    """Stack dB spectrograms vertically in one PNG; every panel shares ``[-80, vmax]``."""
    if not panels:
        raise ValueError("nothing to plot")
    if vmax is None:
        vmax = max(float(p.max()) for p in panels)
    if vmax <= FLOOR_DB:
        vmax = FLOOR_DB + 1.0
    fig, axes = plt.subplots(len(panels), 1, figsize=(8, 2.6 * len(panels)), squeeze=False)
    for ax, db, title in zip(axes[:, 0], panels, titles):
        frames = db.shape[1]
        im = ax.imshow(
            db,
            origin="lower",
            aspect="auto",
            cmap="magma",
            vmin=FLOOR_DB,
            vmax=vmax,
            extent=(0, frames * sig.HOP / sig.SAMPLE_RATE, 0, sig.SAMPLE_RATE / 2000),
        )
        ax.set_title(title)
        ax.set_ylabel("kHz")
        fig.colorbar(im, ax=ax, label="dB")
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    return out_path


def plot_waves(waves: list[np.ndarray], titles: list[str], out_path: str | Path) -> Path:
    return plot_panels([spectrogram_db(w) for w in waves], titles, out_path)
