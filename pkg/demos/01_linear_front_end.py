#!/usr/bin/env python3
"""Walk through the linear front end on one synthetic far-end single-talk clip.

Run from the repository root:  python demos/01_linear_front_end.py [outdir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from paec import signal as sig
from paec.corpus import Corpus, make_synthetic_corpus
from paec.frontend import linear_aec
from paec.metrics import erle
from paec.plotting import plot_waves
from paec.rir import ImageSourceProvider
from paec.scene import SceneSpec, build_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="paec-demo-"))
out.mkdir(parents=True, exist_ok=True)

# %% a tiny corpus of formant-synthesized talkers
corpus = Corpus(make_synthetic_corpus(out / "corpus", n_speakers=4, utts_per_speaker=3, seconds=4.0, seed=0))
spk = corpus.speakers

# %% echo only: the far-end talker played through a 0.5 s reverberant room, 230 ms late
spec = SceneSpec("FEST", ser_db=0.0, snr_db=20.0, n_interferers=0, echo_delay_s=0.23,
                 distortion="none", near_speaker=spk[0], far_speaker=spk[1], interferers=(), seed=3)
clip = build_scene(spec, corpus, ImageSourceProvider(n_rooms=1, seed=4, duration=0.5), seconds=6.0)
print(f"mixture: {clip.d.size / 16000:.1f} s, echo-to-noise {clip.realized_snr_db:.1f} dB")

# %% delay estimate, alignment, subband NLMS
y_lin, e, delay = linear_aec(clip.d, clip.x)
print(f"estimated delay {delay.delay_samples / 16:.0f} ms (confidence {delay.confidence:.2f}); injected 230 ms plus the room path")

# convergence: ERLE per second of audio
for k in range(6):
    seg = slice(k * 16000, (k + 1) * 16000)
    print(f"  second {k}: ERLE {erle(clip.d[seg], e[seg]):5.1f} dB")

# %% the residual still carries the room tail the taps cannot reach plus the noise
print(f"overall ERLE {erle(clip.d, e):.1f} dB; noise floor bound {erle(clip.d, clip.v):.1f} dB")
plot_waves([clip.d, y_lin, e], ["microphone", "linear echo estimate", "error signal"], out / "front_end.png")
sig.write_wav(out / "error.wav", e)
print(f"wrote {out / 'front_end.png'}")
