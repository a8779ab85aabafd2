import math

import numpy as np
import pytest

from graspda import autodiff as ad
from graspda.autodiff import ContractViolation
from graspda.detector import Encoder
from graspda.pretext import PretextConfig, RotationHead, predict_relative_rotation, pretrain_encoder, rot90


def test_rot90_identity_and_example():
    img = np.array([[1, 2], [3, 4]])
    assert np.array_equal(rot90(img, 0), img)
    assert np.array_equal(rot90(img, 1), [[2, 4], [1, 3]])


def test_rot90_composition_and_period():
    img = np.random.default_rng(0).random((3, 6, 6))
    assert np.array_equal(rot90(rot90(img, 1), 1), rot90(img, 2))
    out = img
    for _ in range(4):
        out = rot90(out, 1)
    assert np.array_equal(out, img)


def test_rot90_is_a_pixel_permutation():
    img = np.arange(25.0).reshape(5, 5)
    for k in range(4):
        assert sorted(rot90(img, k).ravel()) == sorted(img.ravel())


def test_rot90_rejects_bad_input():
    with pytest.raises(ContractViolation):
        rot90(np.zeros((4, 5)), 1)
    with pytest.raises(ContractViolation):
        rot90(np.zeros((4, 4)), 4)


def _small():
    cfg = PretextConfig(steps=3, batch=2, hidden=8)
    enc = Encoder(1, (4, 4, 4, 8), np.random.default_rng(0))
    head = RotationHead(8, cfg, np.random.default_rng(1))
    return cfg, enc, head


def test_prediction_is_a_distribution():
    _, enc, head = _small()
    img = np.random.default_rng(2).random((3, 1, 16, 16))
    probs = predict_relative_rotation(enc, head, img, img)
    assert probs.shape == (3, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_initial_loss_near_ln4():
    images = np.random.default_rng(3).random((20, 1, 16, 16))
    first = []
    for seed in range(8):
        cfg = PretextConfig(steps=1, batch=8, seed=seed)
        _, _, losses = pretrain_encoder(images, 1, (8, 8, 8, 16), cfg, encoder_seed=seed)
        first.append(losses[0])
    assert abs(np.mean(first) - math.log(4)) < 0.15


def test_pretraining_is_deterministic():
    images = np.random.default_rng(4).random((10, 1, 16, 16))
    cfg = PretextConfig(steps=5, batch=2)
    a, _, la = pretrain_encoder(images, 1, (4, 4, 4, 8), cfg)
    b, _, lb = pretrain_encoder(images, 1, (4, 4, 4, 8), cfg)
    assert np.array_equal(la, lb)
    for (ka, va), (kb, vb) in zip(a.arrays().items(), b.arrays().items()):
        assert ka == kb and va.tobytes() == vb.tobytes()


def test_checkpoint_holds_encoder_only(tmp_path):
    from graspda.dataset import DatasetConfig, build_dataset
    from graspda.pretext import save_pretrained
    from graspda.trainer import pretrain_encoders
    from graspda.detector import NetConfig
    ds = build_dataset(DatasetConfig(n_sim_train=4, n_real_train=4, n_real_eval=1))
    weights = pretrain_encoders(ds, NetConfig(), steps=2, seed=0)
    paths = save_pretrained(weights, tmp_path)
    for modality, path in paths.items():
        arrays, manifest = ad.load_checkpoint(path)
        assert manifest["tag"] == f"pretrained_{modality}"
        assert all(name.startswith("conv") for name in arrays)
        assert len(arrays) == 8
