from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paec import signal as sig
from paec.errors import CorpusError, ParameterError
from paec.scene import (
    DELAY_RANGE,
    DISTORTIONS,
    SCENARIOS,
    SER_RANGE,
    SNR_RANGE,
    SceneSpec,
    build_scene,
    sample_specs,
    synth_echo,
)


def _spec(corpus, **kw):
    spk = corpus.speakers
    base = dict(
        scenario="DT", ser_db=0.0, snr_db=10.0, n_interferers=0, echo_delay_s=0.1,
        distortion="none", near_speaker=spk[0], far_speaker=spk[1], interferers=(), seed=7,
    )
    base.update(kw)
    return SceneSpec(**base)


# --- synth_echo ------------------------------------------------------------

def test_unit_impulse_is_identity(rng):
    x = rng.standard_normal(4000)
    assert np.array_equal(synth_echo(x, np.array([1.0]), 0.0), x)


def test_half_second_delay_zeros_head(rng):
    x = rng.standard_normal(16000)
    out = synth_echo(x, np.array([1.0]), 0.5)
    assert np.all(out[:8000] == 0)
    assert np.array_equal(out[8000:], x[:8000])


def test_clip_bound_on_unit_sinusoid():
    t = np.arange(16000) / 16000
    x = np.sin(2 * np.pi * 200 * t)
    out = synth_echo(x, np.array([1.0]), 0.0, "clip")
    bound = 4 * np.sqrt(np.mean(x**2))
    assert bound == pytest.approx(2.828, abs=1e-3)
    assert np.max(np.abs(out)) <= bound
    # a unit sinusoid never reaches 4x its RMS, so nothing is flattened
    assert np.array_equal(out, x)


def test_clip_flattens_peaky_signal():
    x = np.zeros(16000)
    x[::400] = 1.0
    x += 0.01 * np.sin(np.arange(16000))
    out = synth_echo(x, np.array([1.0]), 0.0, "clip")
    limit = 4 * np.sqrt(np.mean(x**2))
    assert np.max(np.abs(out)) == pytest.approx(limit)
    assert np.sum(np.isclose(np.abs(out), limit)) >= 40


def test_attenuation_gain_range(rng):
    x = rng.standard_normal(1000)
    for seed in range(20):
        out = synth_echo(x, np.array([1.0]), 0.0, "attenuate", np.random.default_rng(seed))
        g = out[0] / x[0]
        assert 0.1 <= g <= 0.5
        assert np.allclose(out, g * x)


def test_empty_farend_rejected():
    with pytest.raises(ParameterError):
        synth_echo(np.zeros(0), np.array([1.0]), 0.0)


# --- sample_specs ----------------------------------------------------------

def test_single_spec_in_ranges():
    (s,) = sample_specs(1, 0)
    s.validate()
    assert s.scenario in SCENARIOS and s.distortion in DISTORTIONS
    assert SER_RANGE[0] <= s.ser_db <= SER_RANGE[1]
    assert SNR_RANGE[0] <= s.snr_db <= SNR_RANGE[1]
    assert DELAY_RANGE[0] <= s.echo_delay_s <= DELAY_RANGE[1]


def test_specs_deterministic():
    assert sample_specs(50, 11) == sample_specs(50, 11)
    assert sample_specs(50, 11) != sample_specs(50, 12)


def test_scenario_fraction_10000():
    specs = sample_specs(10000, 3)
    dt = np.mean([s.scenario == "DT" for s in specs])
    assert 0.77 <= dt <= 0.83


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_specs_respect_role_disjointness(seed):
    for s in sample_specs(30, seed):
        s.validate()
        assert s.far_speaker != s.near_speaker
        assert s.near_speaker not in s.interferers
        if s.scenario == "FEST":
            assert s.n_interferers == 0


def test_too_few_speakers():
    with pytest.raises(ParameterError):
        sample_specs(3, 0, ["a", "b"])


def test_spec_invariants_enforced(corpus):
    with pytest.raises(ParameterError):
        _spec(corpus, far_speaker=corpus.speakers[0]).validate()
    with pytest.raises(ParameterError):
        _spec(corpus, scenario="FEST", n_interferers=1, interferers=(corpus.speakers[2],)).validate()
    with pytest.raises(ParameterError):
        _spec(corpus, ser_db=20.0).validate()


# --- build_scene -----------------------------------------------------------

def _check_additive(clip):
    assert np.max(np.abs(clip.d - (clip.s + clip.y + clip.v + clip.z))) <= 1e-6


def test_fest_scene(corpus, rirs):
    clip = build_scene(_spec(corpus, scenario="FEST"), corpus, rirs, seconds=2.0)
    assert np.all(clip.s == 0) and np.all(clip.z == 0)
    assert np.allclose(clip.d, clip.y + clip.v, atol=1e-12)
    assert clip.realized_ser_db is None
    assert abs(clip.realized_snr_db - 10.0) <= 0.1


def test_nest_scene_without_interferers(corpus, rirs):
    clip = build_scene(_spec(corpus, scenario="NEST", snr_db=-3.0), corpus, rirs, seconds=2.0)
    assert np.all(clip.y == 0) and np.all(clip.z == 0)
    assert np.allclose(clip.d, clip.s + clip.v, atol=1e-12)
    assert abs(clip.realized_snr_db + 3.0) <= 0.1


def test_dt_scene_zero_ser(corpus, rirs):
    spk = corpus.speakers
    spec = _spec(corpus, n_interferers=2, interferers=(spk[2], spk[3]))
    clip = build_scene(spec, corpus, rirs, seconds=2.0)
    _check_additive(clip)
    assert abs(sig.energy_ratio_db(clip.s, clip.y)) <= 0.1
    assert abs(sig.energy_ratio_db(clip.s, clip.v + clip.z) - 10.0) <= 0.1
    assert np.max(np.abs(clip.d)) <= 0.99 + 1e-12


@pytest.mark.parametrize("distortion", DISTORTIONS)
def test_mixing_accuracy_with_distortion(corpus, rirs, distortion):
    spec = _spec(corpus, ser_db=-12.0, snr_db=22.0, distortion=distortion, echo_delay_s=0.45)
    clip = build_scene(spec, corpus, rirs, seconds=2.0)
    _check_additive(clip)
    assert abs(clip.realized_ser_db + 12.0) <= 0.1
    assert abs(clip.realized_snr_db - 22.0) <= 0.1


def test_enrollment_is_a_different_utterance(corpus, rirs):
    clip = build_scene(_spec(corpus, scenario="NEST", snr_db=25.0), corpus, rirs, seconds=2.0)
    paths = corpus.utterance_paths(corpus.speakers[0])
    idx = [i for i, p in enumerate(paths) if np.array_equal(corpus.load(p), clip.enrollment)]
    assert len(idx) == 1
    probe = clip.s[8000:8400]

    def best_ncc(x):
        num = np.correlate(x, probe, mode="valid")
        win = np.sqrt(np.convolve(x**2, np.ones(probe.size), mode="valid"))
        return np.max(np.abs(num) / (win * np.linalg.norm(probe) + 1e-30))

    others = [corpus.load(p) for i, p in enumerate(paths) if i != idx[0]]
    # the target is cut from the remaining utterances only
    assert max(best_ncc(o) for o in others) > 1 - 1e-9
    assert best_ncc(clip.enrollment) < 0.99


def test_scene_deterministic(corpus, rirs):
    spec = _spec(corpus, distortion="attenuate")
    a = build_scene(spec, corpus, rirs, seconds=1.5)
    b = build_scene(spec, corpus, rirs, seconds=1.5)
    for name in "dsyvzx":
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_missing_speaker(corpus, rirs):
    with pytest.raises(CorpusError):
        build_scene(_spec(corpus, near_speaker="nobody"), corpus, rirs, seconds=1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_random_specs_mix_exactly(corpus, rirs, seed):
    spec = sample_specs(1, seed, corpus.speakers)[0]
    clip = build_scene(spec, corpus, rirs, seconds=1.0)
    _check_additive(clip)
    if spec.scenario == "DT":
        assert abs(clip.realized_ser_db - spec.ser_db) <= 0.1
    assert abs(clip.realized_snr_db - spec.snr_db) <= 0.1
    if spec.scenario == "NEST":
        assert np.all(clip.y == 0)
