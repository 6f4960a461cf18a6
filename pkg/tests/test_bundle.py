import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdsovnet import bundle as B
from pdsovnet.errors import ConfigError, DataError
from pdsovnet.preprocess import SampleBatch
from pdsovnet.synth import SynthConfig, generate_dataset, generate_raw

DATA = generate_dataset(SynthConfig(n_per_group=3))


def _bundle(data=DATA):
    return B.DatasetBundle(data.batch, data.split, data.config.to_dict())


def test_round_trip_is_bit_exact():
    back = B.from_files(B.to_files(_bundle()))
    for f in ("x", "v", "y"):
        assert getattr(back.batch, f).tobytes() == getattr(DATA.batch, f).tobytes()
    assert back.split == DATA.split
    assert back.generator["seed"] == 0


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_round_trip_random_batches(n, seed):
    rng = np.random.default_rng(seed)
    batch = SampleBatch(rng.standard_normal((n, 400, 4)), rng.uniform(295, 305, (n, 4)),
                        rng.normal(20, 10, (n, 40, 4)), ["a"] * n)
    back = B.from_files(B.to_files(B.DatasetBundle(batch, {"a": "train"})))
    assert back.batch.x.tobytes() == batch.x.tobytes() and back.batch.y.tobytes() == batch.y.tobytes()


def test_blob_lengths_match_shapes():
    files = B.to_files(_bundle())
    manifest = json.loads(files["manifest.json"])
    for name in ("X", "V", "Y"):
        assert len(files[f"{name}.bin"]) == 8 * int(np.prod(manifest["shapes"][name]))
    assert manifest["count"] == len(DATA.batch)
    assert manifest["label_ref_mm"] == 1e-3


def test_short_blob_is_data_error():
    files = B.to_files(_bundle())
    files["Y.bin"] = files["Y.bin"][:-8]
    with pytest.raises(DataError, match="Y.bin"):
        B.from_files(files)


def test_missing_blob_or_manifest():
    files = B.to_files(_bundle())
    with pytest.raises(DataError):
        B.from_files({k: v for k, v in files.items() if k != "V.bin"})
    with pytest.raises(DataError):
        B.from_files({k: v for k, v in files.items() if k != "manifest.json"})


def test_split_must_cover_groups():
    with pytest.raises(DataError, match="cover"):
        B.DatasetBundle(DATA.batch, {"g0": "train", "g1": "train"})


def test_split_map_with_group_in_both():
    with pytest.raises(ConfigError, match="split hygiene"):
        _bundle().with_split({"train": ["g0", "g1", "g2", "g3"], "val": ["g3"]})


def test_parts_are_group_disjoint():
    b = _bundle()
    assert not (b.train().groups & b.val().groups)
    assert len(b.train()) + len(b.val()) == len(b.batch)


def test_raw_mode_round_trip():
    raw = generate_raw(SynthConfig(n_groups=2), seconds=1)
    b = B.DatasetBundle(SampleBatch.empty(), raw["split"], None, 1e-3, raw["records"], raw["profiles"])
    back = B.from_files(B.to_files(b))
    assert len(back.raw_records) == 2 and len(back.raw_profiles) == 8
    np.testing.assert_array_equal(back.raw_records[1].vibration, raw["records"][1].vibration)
    np.testing.assert_array_equal(back.raw_profiles[5].deviation, raw["profiles"][5].deviation)


def test_hashes_are_content_addressed():
    assert B.bundle_hash(_bundle()) == B.bundle_hash(B.from_files(B.to_files(_bundle())))
    other = _bundle(generate_dataset(SynthConfig(n_per_group=3, seed=1)))
    assert B.bundle_hash(other) != B.bundle_hash(_bundle())
    assert B.config_hash({"a": 1, "b": 2}) == B.config_hash({"b": 2, "a": 1})


def test_read_dir_requires_manifest(tmp_path):
    with pytest.raises(DataError):
        B.read_dir(tmp_path)
