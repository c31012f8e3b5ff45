import json

import numpy as np
import pytest
import torch

from paec.errors import ConfigError, StrategyError
from paec.net import load_checkpoint, scaled_config, variant_config
from paec.training import (
    TrainOptions,
    TrainStrategy,
    collate,
    dataset_loss,
    fit,
    forward_batch,
    init_model,
    pretrain_stage,
    task_clips,
    train,
)
from paec.layers import n_trainable
from paec.losses import variant_loss

SMALL = dict(channels=8, ftlstm_hidden=8, n_ftlstm=1, local_hidden=8, mca_dim=16, mca_heads=4)


def small(variant):
    return scaled_config(variant_config(variant), **SMALL)


def opts(steps, **kw):
    return TrainOptions(steps=steps, lr=kw.pop("lr", 3e-3), seed=kw.pop("seed", 0), checkpoint_every=kw.pop("checkpoint_every", 100), **kw)


@pytest.fixture(scope="module")
def pretrained(toy_features, tmp_path_factory):
    root = tmp_path_factory.mktemp("pre")
    out = {}
    for task, variant in (("echo_map", "ECHO-MAP"), ("aec_ns", "GFTNN-AEC"), ("pse", "GFTNN-PSE")):
        pretrain_stage(task, toy_features, opts(15), root / task, cfg=small(variant))
        out[task] = root / task
    return out


def _stage_params(model, i):
    return {k: v.detach().clone() for k, v in model.stages[i].state_dict().items()}


def test_task_clip_selection(toy_features):
    assert all(c.scenario != "NEST" for c in task_clips("echo_map", toy_features))
    assert all(c.scenario == "NEST" for c in task_clips("pse", toy_features))
    assert len(task_clips("aec_ns", toy_features)) == len(toy_features)
    with pytest.raises(ConfigError):
        task_clips("pse", [c for c in toy_features if c.scenario != "NEST"])
    with pytest.raises(ConfigError):
        task_clips("denoise", toy_features)


def test_pretrain_writes_checkpoint_and_log(pretrained):
    path = pretrained["echo_map"]
    meta = json.loads((path / "checkpoint.json").read_text())
    assert meta["task"] == "echo_map" and meta["step"] == 15
    log = [json.loads(ln) for ln in (path.parent / "echo_map.loss.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log] == list(range(1, 16))
    assert set(log[0]) == {"step", "total", "term1"}


def test_pretrain_deterministic(toy_features):
    a = pretrain_stage("echo_map", toy_features, opts(5), cfg=small("ECHO-MAP"))[1]["history"]
    b = pretrain_stage("echo_map", toy_features, opts(5), cfg=small("ECHO-MAP"))[1]["history"]
    assert abs(a[-1]["total"] - b[-1]["total"]) <= 1e-6


def test_pretrain_task_variant_mismatch(toy_features):
    with pytest.raises(ConfigError):
        pretrain_stage("echo_map", toy_features, opts(1), cfg=small("GFTNN-AEC"))


def test_aec_checkpoint_is_gftnn_aec(pretrained):
    model = load_checkpoint(pretrained["aec_ns"])
    assert model.cfg.variant == "GFTNN-AEC"
    assert model.cfg.stages[0] == small("TDPF-3").stages[0]
    m3 = init_model(small("TDPF-3"), TrainStrategy("joint", pretrained["aec_ns"]))
    for k, v in model.stages[0].state_dict().items():
        assert torch.equal(v, m3.stages[0].state_dict()[k])


@pytest.mark.parametrize("strategy", ["joint_freeze", "finetune_freeze"])
def test_freeze_keeps_stage1_bit_identical(toy_features, pretrained, strategy):
    st = TrainStrategy(strategy, pretrained["echo_map"], pretrained["pse"])
    model = init_model(small("TDPF-2"), st)
    before1, before2 = _stage_params(model, 0), _stage_params(model, 1)
    seen = []

    def check(step, m, rec):
        seen.append(all(p.grad is None for p in m.stages[0].parameters()))
        return False

    fit(model, toy_features, opts(8), callback=check)
    assert all(seen)
    for k, v in model.stages[0].state_dict().items():
        assert torch.equal(v, before1[k])
    assert any(not torch.equal(v, before2[k]) for k, v in model.stages[1].state_dict().items())


def test_finetune_loads_both_stages(pretrained):
    st = TrainStrategy("finetune", pretrained["echo_map"], pretrained["pse"])
    model = init_model(small("TDPF-2"), st)
    pse = load_checkpoint(pretrained["pse"])
    for k, v in pse.stages[0].state_dict().items():
        assert torch.equal(v, model.stages[1].state_dict()[k])
    assert n_trainable(model.stages[0]) > 0


def test_joint_does_not_load_stage2(pretrained):
    model = init_model(small("TDPF-2"), TrainStrategy("joint", pretrained["echo_map"], pretrained["pse"]), seed=11)
    pse = load_checkpoint(pretrained["pse"])
    k = "encoder.0.conv.weight"
    assert not torch.equal(pse.stages[0].state_dict()[k], model.stages[1].state_dict()[k])


def test_finetune_stage1_term_beats_random_joint(toy_features, pretrained):
    fine = init_model(small("TDPF-2"), TrainStrategy("finetune", pretrained["echo_map"], pretrained["pse"]))
    joint = init_model(small("TDPF-2"), TrainStrategy("joint"))
    batch = task_clips("echo_map", toy_features)
    _, t_fine = dataset_loss(fine, batch)
    _, t_joint = dataset_loss(joint, batch)
    assert t_fine[0] <= t_joint[0]


@pytest.mark.parametrize(
    "strategy, s1, s2",
    [("joint_freeze", None, None), ("finetune", "echo_map", None), ("finetune_freeze", None, "pse"), ("bogus", None, None)],
)
def test_strategy_requirements(pretrained, strategy, s1, s2):
    st = TrainStrategy(strategy, pretrained.get(s1) if s1 else None, pretrained.get(s2) if s2 else None)
    with pytest.raises(StrategyError):
        init_model(small("TDPF-2"), st)


def test_missing_checkpoint_path(tmp_path):
    with pytest.raises(StrategyError):
        init_model(small("TDPF-2"), TrainStrategy("joint", tmp_path / "nope"))


def test_structure_mismatch(pretrained):
    # a mask stage cannot initialize the echo-mapping stage
    with pytest.raises(StrategyError):
        init_model(small("TDPF-2"), TrainStrategy("joint", pretrained["aec_ns"]))


def test_single_stage_variant_rejected_by_train(pretrained):
    with pytest.raises(StrategyError):
        init_model(small("GFTNN-L"), TrainStrategy("joint"))


def test_resume_matches_uninterrupted(toy_features, tmp_path):
    cfg = small("TDPF-1")
    straight, _ = train(cfg, TrainStrategy("joint"), toy_features, opts(6, batch_size=2), tmp_path / "a")
    train(cfg, TrainStrategy("joint"), toy_features, opts(3, batch_size=2, checkpoint_every=3), tmp_path / "b")
    resumed, res = train(cfg, TrainStrategy("joint"), toy_features, opts(6, batch_size=2), tmp_path / "b", resume=True)
    assert res["steps"] == 6
    for k, v in straight.state_dict().items():
        assert torch.allclose(v, resumed.state_dict()[k], atol=1e-6), k
    log = [json.loads(ln) for ln in (tmp_path / "b.loss.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log] == list(range(1, 7))
    assert {"term1", "term2", "total"} <= set(log[0])


def test_callback_can_stop_and_checkpoint(toy_features, tmp_path):
    model = init_model(small("TDPF-3"), TrainStrategy("joint"))
    res = fit(model, toy_features, opts(50), tmp_path / "c", callback=lambda step, m, rec: step == 4)
    assert res["steps"] == 4
    assert json.loads((tmp_path / "c" / "checkpoint.json").read_text())["step"] == 4


def test_variant_loss_terms_from_batch(toy_features):
    model = init_model(small("TDPF-3"), TrainStrategy("joint"))
    inputs, targets, spk = collate(toy_features[:2])
    total, terms = variant_loss(model.cfg, targets, forward_batch(model, inputs, spk))
    assert abs(total.item() - terms[0].item() - terms[1].item()) <= 1e-6


@pytest.mark.slow
def test_joint_overfits_toy_set(toy_features):
    model = init_model(small("TDPF-3"), TrainStrategy("joint"))
    l0, _ = dataset_loss(model, toy_features)
    fit(model, toy_features, opts(500, lr=3e-3))
    l1, _ = dataset_loss(model, toy_features)
    assert l1 <= 0.5 * l0
