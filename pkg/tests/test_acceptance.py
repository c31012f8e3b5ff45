"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest
import torch
from scipy.signal import lfilter

from paec import signal as sig
from paec.corpus import Corpus, make_synthetic_corpus
from paec.datagen import toy_clips
from paec.frontend import estimate_delay, nlms_run
from paec.losses import LossSpec, plcpa_compressed, plcpa_loss, plcpa_numpy, stage_targets, variant_loss
from paec.metrics import erle, si_snr
from paec.net import VARIANTS, StageOutput, build_model, count_params, variant_config
from paec.rir import ImageSourceProvider
from paec.scene import build_scene, sample_specs
from paec.speaker import speaker_inputs
from paec.training import (
    TrainOptions,
    TrainStrategy,
    dataset_loss,
    fit,
    init_model,
    prepare_clip,
    pretrain_stage,
    stage_si_snr,
    task_clips,
)


def test_stft_round_trip(accept):
    rng = np.random.default_rng(0)
    signals = rng.standard_normal((100, 16000))
    t0 = time.perf_counter()
    worst = 0.0
    for x in signals:
        y = sig.istft(sig.stft(x))
        # interior: samples covered by two overlapping frames
        worst = max(worst, np.max(np.abs(y[sig.HOP : y.size - sig.HOP] - x[sig.HOP : y.size - sig.HOP])))
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and dt < 1.0
    accept("STFT round-trip", ok, f"max interior error {worst:.2e}, {dt:.3f} s for 100 signals")
    assert ok


def test_nlms_oracle(accept):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(160000)
    h = rng.standard_normal(64) * np.exp(-np.arange(64) / 12)
    d = lfilter(h, [1.0], x)
    t0 = time.perf_counter()
    _, e = nlms_run(d, x)
    dt = time.perf_counter() - t0
    half = slice(80000, 160000 - sig.FRAME_LEN)
    value = erle(d[half], e[half])
    ok = value >= 20.0 and dt < 60.0
    accept("NLMS oracle", ok, f"steady-state ERLE {value:.1f} dB (>= 20), {dt:.1f} s")
    assert ok


def test_delay_recovery(accept, corpus):
    far = np.concatenate([corpus.load(p) for p in corpus.utterance_paths(corpus.speakers[4])])[: 5 * 16000]
    rng = np.random.default_rng(2)
    h = rng.standard_normal(200) * np.exp(-np.arange(200) / 30)
    errors = {}
    for ms in (0, 50, 230, 480):
        k = ms * 16
        echo = np.zeros_like(far)
        echo[k:] = lfilter(h, [1.0], far)[: far.size - k]
        noise = rng.standard_normal(far.size)
        noise *= np.sqrt(sig.energy(echo) / sig.energy(noise) / 10.0)  # 10 dB echo-to-noise
        est = estimate_delay(echo + noise, far)
        errors[ms] = est.delay_samples / 16 - ms
    ok = all(abs(v) <= 10 for v in errors.values())
    accept("TDE recovery", ok, "errors (ms): " + ", ".join(f"{k}->{v:+.0f}" for k, v in errors.items()))
    assert ok


def test_mixing_accuracy(accept, tmp_path_factory):
    root = make_synthetic_corpus(tmp_path_factory.mktemp("mixcorpus"), n_speakers=10, utts_per_speaker=3, seconds=2.5, seed=9)
    corpus = Corpus(root)
    rirs = ImageSourceProvider(n_rooms=10, positions_per_room=2, seed=9, duration=0.4)
    worst_ser = worst_snr = worst_add = 0.0
    for spec in sample_specs(500, 17, corpus.speakers):
        clip = build_scene(spec, corpus, rirs, seconds=2.0)
        worst_add = max(worst_add, np.max(np.abs(clip.d - (clip.s + clip.y + clip.v + clip.z))))
        if spec.scenario == "DT":
            worst_ser = max(worst_ser, abs(sig.energy_ratio_db(clip.s, clip.y) - spec.ser_db))
        anchor = clip.y if spec.scenario == "FEST" else clip.s
        worst_snr = max(worst_snr, abs(sig.energy_ratio_db(anchor, clip.v + clip.z) - spec.snr_db))
    specs = sample_specs(5000, 23)
    frac = {s: np.mean([x.scenario == s for x in specs]) for s in ("DT", "FEST", "NEST")}
    talker = [x for x in specs if x.scenario != "FEST"]
    ifrac = {k: np.mean([x.n_interferers == k for x in talker]) for k in (0, 1, 2)}
    ok = (
        worst_ser <= 0.1
        and worst_snr <= 0.1
        and worst_add <= 1e-6
        and all(abs(frac[s] - p) <= 0.03 for s, p in zip(("DT", "FEST", "NEST"), (0.8, 0.1, 0.1)))
        and all(abs(ifrac[k] - p) <= 0.03 for k, p in zip((0, 1, 2), (0.2, 0.5, 0.3)))
    )
    accept(
        "Mixing accuracy",
        ok,
        f"500 clips: max |SER err| {worst_ser:.1e} dB, max |SNR err| {worst_snr:.1e} dB, max additivity err {worst_add:.1e}; "
        f"scenarios {frac['DT']:.3f}/{frac['FEST']:.3f}/{frac['NEST']:.3f}, interferers {ifrac[0]:.3f}/{ifrac[1]:.3f}/{ifrac[2]:.3f}",
    )
    assert ok


BUDGETS = {"GFTNN-AEC": 2.45, "GFTNN-PSE": 3.54, "GFTNN-L": 7.15, "TDPF-1": 6.59, "TDPF-2": 6.59, "TDPF-3": 6.59}


def test_parameter_budgets(accept):
    counts = {v: count_params(v) for v in BUDGETS}
    dev = {v: counts[v] / BUDGETS[v] - 1 for v in BUDGETS}
    ok = all(abs(x) <= 0.15 for x in dev.values())
    accept("Parameter budgets", ok, ", ".join(f"{v} {counts[v]:.2f}M ({dev[v]:+.1%})" for v in BUDGETS))
    assert ok


def test_causality_suite(accept):
    spk = speaker_inputs([np.random.default_rng(0).standard_normal(16000) * 0.1])
    g = torch.Generator().manual_seed(0)
    d, e, y = (torch.complex(torch.randn(1, 100, 161, generator=g), torch.randn(1, 100, 161, generator=g)) for _ in range(3))
    results = {}
    for v in VARIANTS:
        model = build_model(v, seed=1).eval()
        ok = True
        with torch.no_grad():
            base = model(d, e, y, spk)
            for t in (1, 10, 99):
                for which in range(3):
                    inputs = [d.clone(), e.clone(), y.clone()]
                    inputs[which][:, t] += torch.complex(torch.randn(161, generator=g), torch.randn(161, generator=g))
                    out = model(*inputs, spk)
                    ok &= all(torch.equal(a[:, :t], b[:, :t]) for a, b in zip(out.stages, base.stages))
        results[v] = ok
    ok = all(results.values())
    accept("Causality suite", ok, ", ".join(f"{v}:{'ok' if r else 'LEAK'}" for v, r in results.items()))
    assert ok


def test_plcpa_gradient_check(accept):
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(2, 5)), int(rng.integers(3, 7)))
        target = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        est = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        e = torch.tensor(est, requires_grad=True)
        plcpa_loss(torch.tensor(target), e).backward()
        num = np.zeros_like(est)
        h = 1e-6
        for idx in np.ndindex(shape):
            for unit in (1.0, 1j):
                a, b = est.copy(), est.copy()
                a[idx] += h * unit
                b[idx] -= h * unit
                num[idx] += unit * (plcpa_numpy(target, a) - plcpa_numpy(target, b)) / (2 * h)
        worst = max(worst, np.linalg.norm(e.grad.numpy() - num) / np.linalg.norm(num))
    t = torch.tensor(target)
    zero_at_equal = plcpa_loss(t, t.clone()).item() == 0.0
    bumped = t.clone()
    bumped[0, 0] += 1e-3
    positive_otherwise = plcpa_loss(t, bumped).item() > 0.0
    ok = worst < 1e-4 and zero_at_equal and positive_otherwise
    accept("PLCPA gradient check", ok, f"max relative error {worst:.1e}; zero at equality {zero_at_equal}; positive off it {positive_otherwise}")
    assert ok


def test_loss_wiring(accept, corpus, rirs):
    g = torch.Generator().manual_seed(4)

    def rand():
        return torch.complex(torch.randn(1, 8, 161, generator=g, dtype=torch.float64), torch.randn(1, 8, 161, generator=g, dtype=torch.float64))

    targets = {"s": rand(), "y": rand(), "z": rand()}
    worst = 0.0
    for v in ("TDPF-2", "TDPF-3"):
        cfg = variant_config(v)
        out = StageOutput([rand(), rand()])
        total, _ = variant_loss(cfg, targets, out)
        tg = stage_targets(cfg, targets)
        worst = max(worst, abs(total.item() - plcpa_compressed(tg[0], out.s1).item() - plcpa_compressed(tg[1], out.s2).item()))
    _, terms = variant_loss(variant_config("TDPF-2"), targets, StageOutput([targets["y"].clone(), rand()]))
    vanishes = terms[0].item() == 0.0
    clips = [c for c in toy_clips(corpus, {"DT": 2, "NEST": 2}, seed=8, seconds=1.0, rir_provider=rirs) if c.spec.n_interferers]
    feats = [prepare_clip(c, dtype=torch.float64) for c in clips]
    sz_ok = bool(feats) and all(
        torch.equal(stage_targets(variant_config("TDPF-3"), f.targets)[0], f.targets["s+z"])
        and torch.allclose(f.targets["s+z"], torch.as_tensor(sig.power_compress(sig.stft(f.waves["s"] + f.waves["z"]))))
        and not torch.allclose(f.targets["s+z"], f.targets["s"])
        for f in feats
    )
    ok = worst <= 1e-9 and vanishes and sz_ok
    accept("Loss wiring", ok, f"additivity error {worst:.1e}; TDPF-2 stage-1 term at echo {terms[0].item():.1e}; TDPF-3 s+z target on {len(feats)} interferer clips {sz_ok}")
    assert ok


# --- training -----------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_set(tmp_path_factory):
    root = make_synthetic_corpus(tmp_path_factory.mktemp("toycorpus"), n_speakers=10, utts_per_speaker=3, seconds=2.5, seed=21)
    corpus = Corpus(root)
    rirs = ImageSourceProvider(n_rooms=4, positions_per_room=2, seed=21, duration=0.3)
    clips = toy_clips(corpus, {"DT": 14, "FEST": 2, "NEST": 4}, seed=21, seconds=1.0, rir_provider=rirs)
    return [prepare_clip(c) for c in clips]


@pytest.fixture(scope="module")
def pretrained(toy_set, tmp_path_factory):
    root = tmp_path_factory.mktemp("pretrained")
    echo_clips = task_clips("echo_map", toy_set)
    model = build_model("ECHO-MAP", seed=0)
    l0, _ = dataset_loss(model, echo_clips)
    t0 = time.time()
    model, _ = pretrain_stage("echo_map", toy_set, TrainOptions(steps=200, lr=1e-3, seed=0), root / "echo")
    l1, _ = dataset_loss(model, echo_clips)
    pse, _ = pretrain_stage("pse", toy_set, TrainOptions(steps=100, lr=1e-3, seed=0), root / "pse")
    return {"echo": root / "echo", "pse": root / "pse", "echo_losses": (l0, l1), "seconds": time.time() - t0}


@pytest.mark.slow
def test_overfit_echo_map(accept, pretrained):
    l0, l1 = pretrained["echo_losses"]
    ok = l1 <= 0.2 * l0
    accept("Overfit (a) echo-map pretraining", ok, f"loss {l0:.4f} -> {l1:.4f} ({l1 / l0:.1%} of initial) in 200 steps")
    assert ok


@pytest.mark.slow
def test_overfit_tdpf2_finetune(accept, toy_set, pretrained):
    t0 = time.time()
    model = init_model("TDPF-2", TrainStrategy("finetune", pretrained["echo"], pretrained["pse"]))
    l0, _ = dataset_loss(model, toy_set)
    snr0 = stage_si_snr(model, toy_set, 0, "y")
    state = {"loss": l0, "snr": snr0, "step": 0}

    def check(step, m, rec):
        if step % 100:
            return False
        state["loss"], _ = dataset_loss(m, toy_set)
        state["snr"] = stage_si_snr(m, toy_set, 0, "y")
        state["step"] = step
        m.train()
        return state["loss"] <= 0.2 * l0 and state["snr"] - snr0 >= 5.0

    fit(model, toy_set, TrainOptions(steps=2000, lr=3e-4, seed=0), callback=check)
    total_min = (time.time() - t0 + pretrained["seconds"]) / 60
    reduction = 1 - state["loss"] / l0
    gain = state["snr"] - snr0
    ok = reduction >= 0.8 and gain >= 5.0 and total_min <= 30
    accept(
        "Overfit (b) TDPF-2 finetune",
        ok,
        f"loss reduced {reduction:.1%} by step {state['step']}, stage-1 SI-SNR vs y {snr0:.2f} -> {state['snr']:.2f} dB "
        f"({gain:+.2f}), {total_min:.1f} min including pretraining",
    )
    assert ok


@pytest.mark.slow
def test_training_strategy_contracts(accept, toy_set, pretrained):
    freeze_ok = {}
    for strategy in ("joint_freeze", "finetune_freeze"):
        model = init_model("TDPF-2", TrainStrategy(strategy, pretrained["echo"], pretrained["pse"]))
        before = {k: v.clone() for k, v in model.stages[0].state_dict().items()}
        fit(model, toy_set, TrainOptions(steps=5, lr=1e-3, seed=0))
        freeze_ok[strategy] = all(torch.equal(v, before[k]) for k, v in model.stages[0].state_dict().items())
    batch = task_clips("echo_map", toy_set)[:4]
    fine = init_model("TDPF-2", TrainStrategy("finetune", pretrained["echo"], pretrained["pse"]))
    joint = init_model("TDPF-2", TrainStrategy("joint"))
    _, tf = dataset_loss(fine, batch)
    _, tj = dataset_loss(joint, batch)
    pse = build_model("GFTNN-PSE")
    from paec.net import load_weights

    load_weights(pse, pretrained["pse"])
    loads_both = all(torch.equal(v, fine.stages[1].state_dict()[k]) for k, v in pse.stages[0].state_dict().items())
    ok = all(freeze_ok.values()) and loads_both and tf[0] <= tj[0]
    accept(
        "Training-strategy contracts",
        ok,
        f"frozen stage 1 bit-identical {freeze_ok}; finetune loads both stages {loads_both}; "
        f"stage-1 term finetune {tf[0]:.4f} vs random joint {tj[0]:.4f}",
    )
    assert ok


def test_metric_identities(accept):
    rng = np.random.default_rng(5)
    d = rng.standard_normal(16000)
    s = rng.standard_normal(16000)
    s -= s.mean()
    n = rng.standard_normal(16000)
    n -= n.mean()
    n -= (n @ s) / (s @ s) * s
    n *= np.sqrt((s @ s) / 100 / (n @ n))
    est = s + 0.5 * rng.standard_normal(16000)
    checks = {
        "erle(d,d)=0": erle(d, d) == 0.0,
        "erle(d,0.1d)=20": abs(erle(d, 0.1 * d) - 20.0) < 1e-9,
        "si_snr scale": max(abs(si_snr(k * est, s) - si_snr(est, s)) for k in (0.01, 3.0, 1e3)) <= 1e-6,
        "orthogonal 20 dB": abs(si_snr(s + n, s) - 20.0) <= 1e-6,
    }
    ok = all(checks.values())
    accept("Metric identities", ok, ", ".join(f"{k} {v}" for k, v in checks.items()))
    assert ok
