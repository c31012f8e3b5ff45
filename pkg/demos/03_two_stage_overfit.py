#!/usr/bin/env python3
"""Pretrain both stages of TDPF-2 on a toy set, finetune, and dump the stage outputs.

This is the desk-scale version of the training recipe: echo mapping first,
personalized enhancement second, then both together. Expect 10-15 minutes on
one CPU core.
"""

import sys
import tempfile
import time
from pathlib import Path

import torch

from paec import signal as sig
from paec.corpus import Corpus, make_synthetic_corpus
from paec.datagen import toy_clips
from paec.plotting import plot_panels, spectrogram_db_from_spec
from paec.rir import ImageSourceProvider
from paec.training import (
    TrainOptions,
    TrainStrategy,
    collate,
    dataset_loss,
    forward_batch,
    prepare_clip,
    pretrain_stage,
    stage_si_snr,
    train,
)

torch.set_num_threads(1)
out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="paec-demo-"))
corpus = Corpus(make_synthetic_corpus(out / "corpus", n_speakers=10, utts_per_speaker=3, seconds=2.5, seed=21))
rirs = ImageSourceProvider(n_rooms=4, positions_per_room=2, seed=21, duration=0.3)
data = [prepare_clip(c) for c in toy_clips(corpus, {"DT": 14, "FEST": 2, "NEST": 4}, seed=21, rir_provider=rirs)]
print(f"{len(data)} one-second clips")

# %% stage pretraining
t0 = time.time()
pretrain_stage("echo_map", data, TrainOptions(steps=200, seed=0), out / "echo")
pretrain_stage("pse", data, TrainOptions(steps=100, seed=0), out / "pse")
print(f"pretraining took {time.time() - t0:.0f} s")

# %% finetune both stages together
def report(step, model, rec):
    if step % 100 == 0:
        loss, terms = dataset_loss(model, data)
        print(f"step {step}: loss {loss:.4f} (echo term {terms[0]:.4f}), stage-1 SI-SNR vs echo {stage_si_snr(model, data, 0, 'y'):.2f} dB")
        model.train()
    return False

model, _ = train("TDPF-2", TrainStrategy("finetune", out / "echo", out / "pse"), data,
                 TrainOptions(steps=400, lr=3e-4, seed=0), out / "tdpf2", callback=report)

# %% what each stage produces on a double-talk clip
clip = next(c for c in data if c.scenario == "DT")
inputs, _, spk = collate([clip])
with torch.no_grad():
    stages = forward_batch(model.eval(), inputs, spk).stages
specs = [sig.power_decompress(inputs["d"][0].numpy())] + [sig.power_decompress(s[0].numpy()) for s in stages]
panels = [spectrogram_db_from_spec(s) for s in specs]
plot_panels(panels, ["microphone", "stage 1: echo estimate", "stage 2: target speech"], out / "stages.png")
print(f"wrote {out / 'stages.png'}")
