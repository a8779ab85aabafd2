import json

import numpy as np
import pytest

from graspda.dataset import (DatasetConfig, DatasetError, build_dataset, dataset_hash, read_dataset, scene_seed,
                             write_dataset)
from graspda.scenes import Domain

CFG = DatasetConfig(seed=2, n_sim_train=3, n_real_train=3, n_real_eval=2)


@pytest.fixture(scope="module")
def ds():
    return build_dataset(CFG)


def test_split_sizes_and_label_stripping(ds):
    assert len(ds.sim_train) == 3 and len(ds.real_train) == 3 and len(ds.real_eval) == 2
    assert all(s.domain is Domain.SIM for s in ds.sim_train)
    assert all(s.domain is Domain.REAL for s in ds.real_train + ds.real_eval)
    assert all(s.grasps == [] for s in ds.real_train)
    assert any(s.grasps for s in ds.real_eval)


def test_scene_seeds_distinct_across_splits():
    seeds = {scene_seed(0, split, i) for split in ("sim_train", "real_train", "real_eval") for i in range(50)}
    assert len(seeds) == 150


def test_round_trip_is_bit_exact(ds, tmp_path):
    write_dataset(ds, tmp_path)
    back = read_dataset(tmp_path)
    assert back.config == ds.config
    assert len(back.scenes) == len(ds.scenes)
    for a, b in zip(ds.scenes, back.scenes):
        assert a.rgb.tobytes() == b.rgb.tobytes()
        assert a.depth.tobytes() == b.depth.tobytes()
        assert np.array_equal(a.instance_mask, b.instance_mask)
        assert a.grasps == b.grasps
        assert (a.domain, a.seed, a.meta) == (b.domain, b.seed, b.meta)


def test_hash_is_deterministic_and_ignores_run_provenance(ds, tmp_path):
    write_dataset(ds, tmp_path / "a", run={"started": "then"})
    write_dataset(build_dataset(CFG), tmp_path / "b", run={"started": "now"})
    assert dataset_hash(tmp_path / "a") == dataset_hash(tmp_path / "b")
    other = build_dataset(DatasetConfig(seed=3, n_sim_train=3, n_real_train=3, n_real_eval=2))
    write_dataset(other, tmp_path / "c")
    assert dataset_hash(tmp_path / "c") != dataset_hash(tmp_path / "a")


def _corrupt(path, edit):
    m = json.loads((path / "manifest.json").read_text())
    edit(m)
    (path / "manifest.json").write_text(json.dumps(m))


@pytest.mark.parametrize("edit, field", [
    (lambda m: m.pop("schema_version"), "manifest.schema_version"),
    (lambda m: m.update(schema_version=99), "manifest.schema_version"),
    (lambda m: m.update(domain_labels={"sim": 0.0, "real": 1.0}), "manifest.domain_labels"),
    (lambda m: m["scenes"][1].pop("height"), "manifest.scenes[1].height"),
    (lambda m: m["scenes"][0].update(domain="mars"), "manifest.scenes[0].domain"),
    (lambda m: m["scenes"][2].update(width=7), "manifest.scenes[2].file"),
    (lambda m: m["config"].update(n_bogus=1), "manifest.config"),
])
def test_malformed_manifest_names_field(ds, tmp_path, edit, field):
    write_dataset(ds, tmp_path)
    _corrupt(tmp_path, edit)
    with pytest.raises(DatasetError) as err:
        read_dataset(tmp_path)
    assert err.value.field == field


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="manifest.json"):
        read_dataset(tmp_path)
