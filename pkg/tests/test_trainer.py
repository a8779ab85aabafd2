import copy
import dataclasses

import numpy as np
import pytest

from graspda import autodiff as ad
from graspda import alignment, trainer
from graspda.autodiff import Tape
from graspda.dataset import DatasetConfig, build_dataset
from graspda.detector import GraspNet, NetConfig
from graspda.geometry import GraspRect
from graspda.prototypes import PrototypeBank
from graspda.trainer import (COMPONENTS, METRIC_COLUMNS, VARIANTS, DomainHeads, NumericalError, TrainConfig,
                             learning_rate, step_components, total_loss, train)

SMALL_NET = NetConfig(channels=(4, 4, 8, 8), roi_hidden=16, gpn_hidden=8, top_k=16, gpn_samples=16, roi_samples=8)


@pytest.fixture(scope="module")
def tiny_ds():
    return build_dataset(DatasetConfig(seed=5, n_sim_train=6, n_real_train=6, n_real_eval=3))


def _cfg(**kw):
    base = dict(total_steps=12, gpa_start_fraction=0.25, quality_threshold=0.0, local_regions=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


# -- weighted sum and schedules -------------------------------------------------

def test_all_ones_with_default_weights_is_1001_5():
    comps = {k: 1.0 for k in COMPONENTS}
    assert abs(total_loss(comps, TrainConfig()) - 1001.5) < 1e-10


def test_zero_adaptation_weights_leave_grasp_loss():
    cfg = TrainConfig(alpha=0, beta=0, gamma=0, gpa_weight=0)
    comps = {k: 3.7 for k in COMPONENTS}
    assert total_loss(comps, cfg) == 3.7


def test_gpa_term_ignored_before_start():
    cfg = TrainConfig(total_steps=1200)
    comps = {k: 0.0 for k in COMPONENTS}
    comps["L_GPA"] = 5.0
    comps["L_grasp"] = 1.0
    assert cfg.gpa_start == 700
    assert total_loss(comps, cfg, step=699) == 1.0
    assert total_loss(comps, cfg, step=700) == 1.0 + 5000.0


def test_total_loss_on_tensors_matches_floats():
    rng = np.random.default_rng(0)
    vals = {k: float(rng.uniform(0, 2)) for k in COMPONENTS}
    with Tape():
        t = total_loss({k: ad.Tensor(v, requires_grad=True) for k, v in vals.items()}, TrainConfig())
    assert abs(t.item() - total_loss(vals, TrainConfig())) < 1e-10


def test_learning_rate_is_exact_on_both_sides_of_decay():
    cfg = TrainConfig(total_steps=96)
    assert cfg.decay_step == 64
    assert all(learning_rate(cfg, s) == 0.005 for s in range(64))
    assert all(learning_rate(cfg, s) == 0.0005 for s in range(64, 96))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(gpa_start_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(consistency=True, local_dc=False)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig(alpha=0.3, seed=9)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_variant_grid_is_six_and_consistency_needs_both_dc():
    assert len(VARIANTS) == 6
    for flags in VARIANTS.values():
        TrainConfig(**flags)
    assert not any(VARIANTS["source_only"].values())
    assert all(VARIANTS["full"].values())


# -- gradients through a full step ----------------------------------------------

def _setup(tiny_ds, cfg):
    net = GraspNet(SMALL_NET, seed=cfg.seed)
    heads = DomainHeads(SMALL_NET.channels[-1], SMALL_NET.roi_hidden, cfg.seed)
    bank = PrototypeBank(cfg.n_bins, SMALL_NET.roi_hidden)
    # seed the bank so the GPA term is live at the first evaluated step
    rng = np.random.default_rng(1)
    for d in ("sim", "real"):
        bank.gp[d] = rng.uniform(0.1, 1.0, bank.gp[d].shape)
        bank.initialized[d][:] = True
    return net, heads, bank


def _grads(tiny_ds, cfg, net, heads, bank, select):
    bank = copy.deepcopy(bank)
    rng = np.random.default_rng(42)
    with Tape() as tape:
        comps, _, _ = step_components(net, heads, bank, cfg, cfg.gpa_start, tiny_ds.sim_train[:1],
                                      tiny_ds.real_train[:1], rng)
        loss = select(comps)
        grads = tape.backward(loss)
    params = net.parameters() + heads.parameters()
    return [grads.get(p) if grads.get(p) is not None else np.zeros_like(p.data) for p in params], comps


def test_total_gradient_is_weighted_sum_of_component_gradients(tiny_ds):
    cfg = _cfg()
    net, heads, bank = _setup(tiny_ds, cfg)
    g_total, comps = _grads(tiny_ds, cfg, net, heads, bank, lambda c: total_loss(c, cfg, cfg.gpa_start))
    assert set(comps) == set(COMPONENTS)
    weights = {"L_grasp": 1.0, "L_I_DC": cfg.alpha, "L_D_DC": cfg.alpha, "L_G_DC": cfg.beta,
               "L_I_CR": cfg.gamma, "L_D_CR": cfg.gamma, "L_GPA": cfg.gpa_weight}
    acc = [np.zeros_like(g) for g in g_total]
    for name, w in weights.items():
        g_c, _ = _grads(tiny_ds, cfg, net, heads, bank, lambda c, n=name: c[n])
        acc = [a + w * g for a, g in zip(acc, g_c)]
    worst = max(float(np.max(np.abs(a - g))) for a, g in zip(acc, g_total))
    assert worst < 1e-10


def test_grl_flips_encoder_gradients_of_domain_losses(tiny_ds, monkeypatch):
    cfg = _cfg(gpa=False)
    net, heads, bank = _setup(tiny_ds, cfg)

    def da(c):
        return total_loss({k: v for k, v in c.items() if k != "L_grasp"}, cfg)

    g_rev, _ = _grads(tiny_ds, cfg, net, heads, bank, da)
    monkeypatch.setattr(alignment.ad, "grad_reverse", lambda x, coeff=1.0: ad.identity(x))
    g_id, _ = _grads(tiny_ds, cfg, net, heads, bank, da)
    n_enc = len(net.rgb_encoder.parameters()) + len(net.depth_encoder.parameters())
    enc = [i for i, p in enumerate(net.parameters()) if any(p is q for q in
                                                            net.rgb_encoder.parameters() + net.depth_encoder.parameters())]
    assert len(enc) == n_enc
    assert any(np.any(g_rev[i]) for i in enc)
    assert max(float(np.max(np.abs(g_rev[i] + g_id[i]))) for i in enc) < 1e-12
    heads_idx = range(len(net.parameters()), len(g_rev))
    assert max(float(np.max(np.abs(g_rev[i] - g_id[i]))) for i in heads_idx) < 1e-12


# -- training loop -----------------------------------------------------------------

def test_source_only_leaves_domain_parameters_untouched(tiny_ds):
    cfg = _cfg(**VARIANTS["source_only"], total_steps=4)
    fresh = DomainHeads(SMALL_NET.channels[-1], SMALL_NET.roi_hidden, cfg.seed).arrays()
    res = train(cfg, tiny_ds, net_cfg=SMALL_NET)
    after = res.heads.arrays()
    assert all(np.array_equal(fresh[k], after[k]) for k in fresh)
    assert not res.bank.initialized["sim"].any() and not res.bank.initialized["real"].any()
    for row in res.metrics:
        assert all(row[k] == 0.0 for k in COMPONENTS if k != "L_grasp")
        assert row["domain_acc_global"] == row["domain_acc_local"] == 0.0


def test_same_seed_same_metrics_csv(tiny_ds):
    init = {"rgb": GraspNet(SMALL_NET, seed=11).rgb_encoder.arrays(),
            "depth": GraspNet(SMALL_NET, seed=12).depth_encoder.arrays()}
    a = train(_cfg(total_steps=6), tiny_ds, init=init, net_cfg=SMALL_NET).metrics_csv()
    b = train(_cfg(total_steps=6), tiny_ds, init=init, net_cfg=SMALL_NET).metrics_csv()
    assert a == b
    assert a.splitlines()[0] == ",".join(METRIC_COLUMNS)
    c = train(_cfg(total_steps=6, seed=4), tiny_ds, init=init, net_cfg=SMALL_NET).metrics_csv()
    assert c != a


def test_full_run_exercises_every_component(tiny_ds):
    init = {"rgb": GraspNet(SMALL_NET, seed=11).rgb_encoder.arrays(),
            "depth": GraspNet(SMALL_NET, seed=12).depth_encoder.arrays()}
    res = train(_cfg(total_steps=8), tiny_ds, init=init, net_cfg=SMALL_NET)
    late = res.metrics[-1]
    assert all(late[k] > 0 for k in COMPONENTS)
    assert all(r["L_GPA"] == 0.0 for r in res.metrics[:res.config.gpa_start])


def test_poisoned_real_labels_change_nothing(tiny_ds):
    """Canary: garbage labels on real training scenes must not alter a single bit."""
    poisoned = copy.deepcopy(tiny_ds)
    rng = np.random.default_rng(0)
    for s in poisoned.real_train:
        s.grasps = [GraspRect(*rng.uniform(10, 50, 2), rng.uniform(0, np.pi), 20.0, 6.0) for _ in range(5)]
    init = {"rgb": GraspNet(SMALL_NET, seed=11).rgb_encoder.arrays(),
            "depth": GraspNet(SMALL_NET, seed=12).depth_encoder.arrays()}
    clean = train(_cfg(total_steps=8), tiny_ds, init=init, net_cfg=SMALL_NET)
    dirty = train(_cfg(total_steps=8), poisoned, init=init, net_cfg=SMALL_NET)
    assert clean.metrics_csv() == dirty.metrics_csv()
    a, b = clean.net.arrays(), dirty.net.arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    sim_ids = {s.meta["index"] for s in tiny_ds.sim_train}
    assert all(set(ids) <= sim_ids for ids in dirty.grasp_calls)


def test_grasp_loss_refuses_real_scenes(tiny_ds):
    cfg = _cfg()
    net, heads, bank = _setup(tiny_ds, cfg)
    with Tape(), pytest.raises(ValueError, match="non-sim"):
        step_components(net, heads, bank, cfg, 0, tiny_ds.real_train[:1], tiny_ds.real_train[1:2],
                        np.random.default_rng(0))


def test_non_finite_loss_names_component(tiny_ds):
    cfg = _cfg(**VARIANTS["source_only"], lr=1e6, grad_clip=None, total_steps=30)
    with pytest.raises(NumericalError) as err, np.errstate(all="ignore"):
        train(cfg, tiny_ds, net_cfg=SMALL_NET)
    assert err.value.component in COMPONENTS + ("total",)


def test_checkpoints_round_trip(tiny_ds, tmp_path):
    res = train(_cfg(total_steps=4, checkpoint_every=2, pretrain=False, gpa=False), tiny_ds, net_cfg=SMALL_NET,
                out_dir=tmp_path)
    assert (tmp_path / "model_step_000002.json").exists() and (tmp_path / "model_final.json").exists()
    assert (tmp_path / "metrics.csv").read_text() == res.metrics_csv()
    net = trainer.load_model(tmp_path)
    a, b = net.arrays(), res.net.arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert net.cfg == res.net.cfg


# -- ablation harness ----------------------------------------------------------------

def test_ablation_rows_and_table_round_trip(tiny_ds):
    init = {"rgb": GraspNet(SMALL_NET, seed=11).rgb_encoder.arrays(),
            "depth": GraspNet(SMALL_NET, seed=12).depth_encoder.arrays()}
    cfg = _cfg(total_steps=2)
    rows = trainer.ablate(cfg, tiny_ds, seeds=[0, 1], net_cfg=SMALL_NET, pretrained={0: init, 1: init})
    assert len(rows) == 12
    back = trainer.rows_from_csv(trainer.rows_to_csv(rows))
    for r, b in zip(rows, back):
        assert {f: b[f] for f in trainer.FLAGS} == VARIANTS[b["variant"]]
        assert b["toy_ap"] == r["toy_ap"]
    summary = trainer.summarize(rows)
    assert [s["variant"] for s in summary] == list(VARIANTS)
    assert all(s["n"] == 2 and s["min"] <= s["median"] <= s["max"] for s in summary)


def test_gpa_weight_sweep_rows(tiny_ds):
    init = {"rgb": GraspNet(SMALL_NET, seed=11).rgb_encoder.arrays(),
            "depth": GraspNet(SMALL_NET, seed=12).depth_encoder.arrays()}
    rows = trainer.gpa_sweep(_cfg(total_steps=2), tiny_ds, seeds=[0], weights=[0.0, 10.0], net_cfg=SMALL_NET,
                             pretrained={0: init})
    assert [r["gpa_weight"] for r in rows] == [0.0, 10.0]
    assert all(0.0 <= r["toy_ap"] <= 1.0 for r in rows)


def test_frozen_probe_separates_shifted_domains():
    ds = build_dataset(DatasetConfig(seed=5, n_sim_train=20, n_real_train=20, n_real_eval=20))
    net = GraspNet(SMALL_NET, np.random.default_rng(0))
    before = [p.data.copy() for p in net.parameters()]
    args = (net, ds.sim_train[:10], ds.real_train[:10], ds.sim_train[10:], ds.real_eval[:10])
    acc = trainer.frozen_probe_accuracy(*args)
    assert acc >= 0.9 and acc == trainer.frozen_probe_accuracy(*args)
    assert all(np.array_equal(a, p.data) for a, p in zip(before, net.parameters()))
