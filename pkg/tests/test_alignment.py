import math

import numpy as np
import pytest

from graspda import autodiff as ad
from graspda.alignment import (GlobalDomainClassifier, LocalDomainClassifier, accuracy, consistency_loss,
                               global_dc_loss, local_dc_loss)
from graspda.autodiff import Tape, Tensor
from graspda.optim import SGD


def _bce(p, q):
    return -(q * math.log(p) + (1 - q) * math.log(1 - p))


def test_zero_weights_give_half():
    clf = GlobalDomainClassifier(8, np.random.default_rng(0))
    for p in clf.parameters():
        p.data[...] = 0.0
    with Tape():
        out = clf(Tensor(np.random.default_rng(1).normal(size=(2, 8, 5, 7)), requires_grad=True))
    assert out.shape == (2, 1, 5, 7)
    assert np.all(out.data == 0.5)


def test_global_loss_half_is_ln2():
    p = np.full((1, 1, 4, 4), 0.5)
    assert global_dc_loss(p, [1.0]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert global_dc_loss(p, [0.0]).item() == pytest.approx(math.log(2), abs=1e-15)


def test_global_loss_saturated():
    assert global_dc_loss(np.ones((2, 1, 3, 3)) * [[[[1.0]]], [[[0.0]]]], [1.0, 0.0]).item() <= 1e-6


def test_global_loss_2x2_fixture():
    p = np.array([0.9, 0.2, 0.6, 0.35]).reshape(1, 1, 2, 2)
    expected = (_bce(0.9, 1) + _bce(0.2, 1) + _bce(0.6, 1) + _bce(0.35, 1)) / 4
    assert abs(global_dc_loss(p, [1.0]).item() - expected) < 1e-12


def test_local_loss_examples():
    assert local_dc_loss(Tensor([0.5]), [1.0]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert local_dc_loss(Tensor([1.0, 0.0, 1.0]), [1.0, 0.0, 1.0]).item() <= 1e-6
    p, q = [0.8, 0.3, 0.55, 0.1], [1.0, 1.0, 0.0, 0.0]
    expected = sum(_bce(a, b) for a, b in zip(p, q)) / 4
    assert abs(local_dc_loss(Tensor(p), q).item() - expected) < 1e-12
    assert local_dc_loss(None, []).item() == 0.0


def test_consistency_examples():
    g = np.full((1, 1, 4, 4), 0.7)
    assert consistency_loss(g, Tensor([0.7, 0.7]), np.array([0, 0])).item() == pytest.approx(0.0, abs=1e-15)
    g = np.full((1, 1, 2, 2), 0.6)
    assert consistency_loss(g, Tensor([0.1]), np.array([0])).item() == pytest.approx(0.5, abs=1e-15)
    assert consistency_loss(g, None, np.array([])).item() == 0.0


def test_consistency_three_region_fixture():
    g = np.stack([np.array([[0.2, 0.4], [0.6, 0.8]]), np.array([[0.1, 0.1], [0.3, 0.3]])])[:, None]
    p = [0.9, 0.45, 0.05]
    region_image = np.array([0, 0, 1])
    expected = (abs(0.5 - 0.9) + abs(0.5 - 0.45) + abs(0.2 - 0.05)) / 3
    assert abs(consistency_loss(g, Tensor(p), region_image).item() - expected) < 1e-12


def test_losses_invariant_to_region_permutation():
    rng = np.random.default_rng(4)
    g = rng.uniform(0.05, 0.95, (2, 1, 3, 3))
    p = rng.uniform(0.05, 0.95, 9)
    q = rng.integers(0, 2, 9).astype(float)
    img = rng.integers(0, 2, 9)
    perm = rng.permutation(9)
    assert local_dc_loss(Tensor(p), q).item() == pytest.approx(local_dc_loss(Tensor(p[perm]), q[perm]).item(),
                                                               abs=1e-15)
    assert consistency_loss(g, Tensor(p), img).item() == pytest.approx(
        consistency_loss(g, Tensor(p[perm]), img[perm]).item(), abs=1e-15)


def test_consistency_bounded():
    rng = np.random.default_rng(5)
    for _ in range(50):
        v = consistency_loss(rng.random((2, 1, 4, 4)), Tensor(rng.random(6)), rng.integers(0, 2, 6)).item()
        assert 0.0 <= v <= 1.0


def test_flipped_label_convention_gives_identical_losses():
    """Relabel sim=0/real=1 and mirror the classifier output: every loss value repeats."""
    rng = np.random.default_rng(6)
    feats = rng.normal(size=(2, 8, 4, 4))
    q = np.array([1.0, 0.0])

    def run(flip):
        clf = GlobalDomainClassifier(8, np.random.default_rng(0))
        if flip:  # sigmoid(-z) = 1 - sigmoid(z)
            clf.conv2.weight.data *= -1
            clf.conv2.bias.data *= -1
        opt = SGD(clf.parameters(), 0.1, 0.9, 0.0)
        losses = []
        for _ in range(5):
            with Tape() as tape:
                loss = global_dc_loss(clf(Tensor(feats, requires_grad=True)), 1 - q if flip else q)
                grads = tape.backward(loss)
            opt.step(grads)
            losses.append(loss.item())
        return losses

    np.testing.assert_allclose(run(False), run(True), rtol=0, atol=1e-12)


def test_classifier_learns_separable_frozen_features():
    rng = np.random.default_rng(7)
    sim = rng.normal(0.0, 1.0, (40, 6, 4, 4)) + 1.5
    real = rng.normal(0.0, 1.0, (40, 6, 4, 4)) - 1.5
    x = np.concatenate([sim, real])
    q = np.concatenate([np.ones(40), np.zeros(40)])
    clf = GlobalDomainClassifier(6, np.random.default_rng(8))
    opt = SGD(clf.parameters(), 0.05, 0.9, 0.0)
    for _ in range(200):
        idx = rng.integers(0, 80, 8)
        with Tape() as tape:
            grads = tape.backward(global_dc_loss(clf(Tensor(x[idx], requires_grad=True)), q[idx]))
        opt.step(grads)
    test = np.concatenate([rng.normal(0, 1, (20, 6, 4, 4)) + 1.5, rng.normal(0, 1, (20, 6, 4, 4)) - 1.5])
    with Tape():
        p = clf(Tensor(test, requires_grad=True))
    assert accuracy(p, np.concatenate([np.ones(20), np.zeros(20)])) >= 0.95


def test_local_classifier_shape_and_reversal():
    clf = LocalDomainClassifier(5, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(3, 5)), requires_grad=True)
    with Tape() as tape:
        p = clf(x)
        g_rev = tape.backward(local_dc_loss(p, [1.0, 0.0, 1.0]))[x]
    with Tape() as tape:
        h = ad.identity(x)
        p2 = ad.reshape(ad.sigmoid(clf.fc2(ad.relu(clf.fc1(h)))), (3,))
        g_id = tape.backward(local_dc_loss(p2, [1.0, 0.0, 1.0]))[x]
    assert p.shape == (3,)
    assert np.array_equal(g_rev, -g_id)
