import logging
import math

import numpy as np
import pytest

from graspda import autodiff as ad
from graspda.autodiff import Tape, Tensor
from graspda.geometry import bin_of
from graspda.prototypes import PrototypeBank, batch_prototypes, gpa_loss, update_global


def _theta(b, L=12):
    return (b + 0.5) * math.pi / L


def test_single_region():
    v = np.array([1.0, 2.0, 3.0])
    protos = batch_prototypes(Tensor(v[None]), [_theta(3)], 12)
    assert list(protos) == [3] and np.array_equal(protos[3].data, v)


def test_two_regions_same_bin():
    u, v = np.array([1.0, 0.0]), np.array([3.0, 4.0])
    protos = batch_prototypes(Tensor(np.stack([u, v])), [_theta(5), _theta(5) + 0.01], 12)
    assert np.allclose(protos[5].data, (u + v) / 2)


def test_seven_region_fixture_matches_brute_force_mean():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(7, 4))
    thetas = rng.uniform(-3, 6, 7)
    protos = batch_prototypes(Tensor(feats), thetas, 12)
    for b in range(12):
        members = [feats[i] for i in range(7) if int(math.floor((thetas[i] % math.pi) * 12 / math.pi)) == b]
        if members:
            assert np.max(np.abs(protos[b].data - sum(members) / len(members))) < 1e-12
        else:
            assert b not in protos


def test_first_touch_initialises():
    bank = PrototypeBank(12, 2)
    update_global(bank, "sim", {4: Tensor([0.3, 0.7])}, 0.001)
    assert bank.initialized["sim"][4] and not bank.initialized["real"][4]
    assert np.array_equal(bank.gp["sim"][4], [0.3, 0.7])


def test_step_is_lambda_when_aligned():
    bank = PrototypeBank(12, 2)
    bank.gp["sim"][0] = [1.0, 1.0]
    bank.initialized["sim"][0] = True
    update_global(bank, "sim", {0: Tensor([2.0, 2.0])}, 0.001)
    assert np.allclose(bank.gp["sim"][0], 0.001 * 2.0 + 0.999 * 1.0, atol=1e-15)


def test_convex_combination_half_step():
    # sim([1,0],[0,1]) = 0.5, so lambda = 1 gives step 0.5
    bank = PrototypeBank(12, 2)
    bank.gp["real"][2] = [0.0, 1.0]
    bank.initialized["real"][2] = True
    update_global(bank, "real", {2: Tensor([1.0, 0.0])}, 1.0)
    assert np.allclose(bank.gp["real"][2], [0.5, 0.5], atol=1e-15)


def test_geometric_decay_closed_form():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.5, 1.5, 6)
    start = p + rng.normal(0, 0.3, 6)
    bank = PrototypeBank(12, 6)
    bank.gp["sim"][7] = start
    bank.initialized["sim"][7] = True
    dist0 = np.linalg.norm(start - p)
    for n in range(1, 1001):
        c = (1 + bank.gp["sim"][7] @ p / (np.linalg.norm(bank.gp["sim"][7]) * np.linalg.norm(p))) / 2
        step = 0.001 * c
        expected = np.linalg.norm(bank.gp["sim"][7] - p) * (1 - step)
        update_global(bank, "sim", {7: Tensor(p)}, 0.001)
        assert abs(np.linalg.norm(bank.gp["sim"][7] - p) - expected) < 1e-9
    assert np.linalg.norm(bank.gp["sim"][7] - p) < dist0


def test_zero_prototype_is_skipped_with_warning(caplog):
    bank = PrototypeBank(12, 2)
    bank.gp["sim"][1] = [1.0, 0.0]
    bank.initialized["sim"][1] = True
    with caplog.at_level(logging.WARNING):
        update_global(bank, "sim", {1: Tensor([0.0, 0.0]), 2: Tensor([0.0, 0.0])}, 0.001)
    assert np.array_equal(bank.gp["sim"][1], [1.0, 0.0])
    assert not bank.initialized["sim"][2]
    assert "cosine undefined" in caplog.text


def test_step_bounded_and_convex_hull():
    rng = np.random.default_rng(2)
    bank = PrototypeBank(12, 3)
    seen = []
    lo, hi = None, None
    for _ in range(200):
        p = rng.normal(size=3)
        seen.append(p)
        before = bank.gp["sim"][0].copy()
        was_init = bank.initialized["sim"][0]
        update_global(bank, "sim", {0: Tensor(p)}, 0.3)
        if was_init:
            moved = bank.gp["sim"][0] - before
            with np.errstate(invalid="ignore", divide="ignore"):
                frac = moved / (p - before)
            frac = frac[np.isfinite(frac)]
            assert np.all(frac >= -1e-12) and np.all(frac <= 0.3 + 1e-12)
        arr = np.array(seen)
        assert np.all(bank.gp["sim"][0] >= arr.min(0) - 1e-12) and np.all(bank.gp["sim"][0] <= arr.max(0) + 1e-12)


def test_gpa_loss_examples():
    bank = PrototypeBank(12, 2)
    assert gpa_loss(bank).item() == 0.0
    bank.gp["sim"][0], bank.gp["real"][0] = [1.0, 0.0], [0.0, 0.0]
    bank.initialized["sim"][0] = bank.initialized["real"][0] = True
    assert gpa_loss(bank).item() == pytest.approx(1.0, abs=1e-15)
    bank.gp["real"][0] = [1.0, 0.0]
    assert gpa_loss(bank).item() == 0.0


def test_gpa_three_bin_fixture_and_symmetry():
    bank = PrototypeBank(12, 3)
    pairs = {1: ([1, 2, 2], [0, 0, 0]), 5: ([3, 0, 4], [0, 0, 0]), 9: ([1, 1, 1], [2, 2, 2])}
    for b, (s, r) in pairs.items():
        bank.gp["sim"][b], bank.gp["real"][b] = s, r
        bank.initialized["sim"][b] = bank.initialized["real"][b] = True
    bank.gp["sim"][11] = [9, 9, 9]
    bank.initialized["sim"][11] = True  # single-domain bin is ignored
    assert abs(gpa_loss(bank).item() - (3.0 + 5.0 + math.sqrt(3))) < 1e-12
    swapped = PrototypeBank(12, 3)
    swapped.gp = {"sim": bank.gp["real"], "real": bank.gp["sim"]}
    swapped.initialized = {"sim": bank.initialized["real"], "real": bank.initialized["sim"]}
    assert gpa_loss(swapped).item() == gpa_loss(bank).item()


def test_gradient_reaches_current_batch_only():
    bank = PrototypeBank(12, 2)
    bank.gp["sim"][0], bank.gp["real"][0] = [1.0, 0.0], [0.0, 1.0]
    bank.initialized["sim"][0] = bank.initialized["real"][0] = True
    feats = Tensor([[2.0, 1.0]], requires_grad=True)
    with Tape() as tape:
        update_global(bank, "sim", batch_prototypes(feats, [0.1], 12), 0.001)
        grads = tape.backward(gpa_loss(bank))
    step = 0.001 * (1 + 2 / math.sqrt(5)) / 2
    s = step * np.array([2.0, 1.0]) + (1 - step) * np.array([1.0, 0.0])
    d = s - np.array([0.0, 1.0])
    np.testing.assert_allclose(grads[feats][0], step * d / np.linalg.norm(d), rtol=1e-12)
    bank.end_step()
    assert bank.live["sim"] == {}


def test_bank_round_trip(tmp_path):
    bank = PrototypeBank(12, 4)
    update_global(bank, "real", {3: Tensor([1.0, 2.0, 3.0, 4.0])}, 0.001)
    bank.save(tmp_path / "bank")
    back = PrototypeBank.load(tmp_path / "bank")
    assert np.array_equal(back.gp["real"], bank.gp["real"])
    assert np.array_equal(back.initialized["real"], bank.initialized["real"])
    assert not back.initialized["sim"].any()
