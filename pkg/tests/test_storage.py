import numpy as np
import pytest

from raseg.core import MODALITIES, Volume
from raseg.storage import (
    load_volume,
    make_split,
    read_array,
    read_dataset_manifest,
    read_manifest,
    read_tensors,
    save_volume,
    write_array,
    write_dataset_manifest,
    write_tensors,
)


def test_array_roundtrip_bitexact(tmp_path, rng):
    arr = rng.normal(size=(5, 7, 3)).astype(np.float32)
    path = tmp_path / "a.vol"
    write_array(path, arr, spacing_mm=(3.0, 1.0, 1.0))
    back, meta = read_array(path)
    assert back.tobytes() == arr.tobytes()
    assert back.dtype == np.float32
    assert meta["spacing_mm"] == "3.0 1.0 1.0"


def test_array_uint8_roundtrip(tmp_path, rng):
    arr = rng.integers(0, 6, size=(4, 8, 8)).astype(np.uint8)
    path = tmp_path / "l.vol"
    write_array(path, arr)
    back, _ = read_array(path)
    assert back.tobytes() == arr.tobytes()


def test_tensors_roundtrip_order_and_bits(tmp_path, rng):
    tensors = {
        "enc.0.conv1.weight": rng.normal(size=(2, 3, 3, 3)).astype(np.float32),
        "scalar_counter": np.array(7, dtype=np.int64),
        "bn.running_var": rng.random(4).astype(np.float32),
    }
    path = tmp_path / "t.bin"
    write_tensors(path, tensors, extra={"kind": "test"})
    back, extra = read_tensors(path)
    assert list(back) == list(tensors)
    assert extra["kind"] == "test"
    for name in tensors:
        assert back[name].tobytes() == tensors[name].tobytes()
        assert back[name].shape == tensors[name].shape


def _volume(rng, with_labels=True, shape=(4, 64, 64), sid="007"):
    mods = {m: rng.normal(50, 10, size=shape).astype(np.float32) for m in MODALITIES}
    labels = rng.integers(0, 6, size=shape).astype(np.uint8) if with_labels else None
    return Volume(modalities=mods, labels=labels, spacing=(3.0, 1.0, 1.0), subject_id=sid)


def test_volume_roundtrip(tmp_path, rng):
    vol = _volume(rng)
    manifest = save_volume(vol, tmp_path)
    back = load_volume(manifest)
    for m in MODALITIES:
        assert back.modalities[m].tobytes() == vol.modalities[m].tobytes()
    assert back.labels.tobytes() == vol.labels.tobytes()
    assert back.spacing == vol.spacing
    assert back.subject_id == "007"


def test_volume_without_labels(tmp_path, rng):
    manifest = save_volume(_volume(rng, with_labels=False), tmp_path)
    assert manifest.label_path is None
    assert load_volume(manifest).labels is None


def test_manifest_file_roundtrip(tmp_path, rng):
    manifest = save_volume(_volume(rng), tmp_path)
    back = read_manifest(tmp_path / "007.subject")
    assert back.subject_id == manifest.subject_id
    assert back.label_path == manifest.label_path
    assert {m: p for m, p in back.modality_paths.items()} == manifest.modality_paths


def test_shape_mismatch_names_both_shapes(tmp_path, rng):
    vol = _volume(rng)
    manifest = save_volume(vol, tmp_path)
    bad = rng.normal(size=(4, 64, 63)).astype(np.float32)
    write_array(manifest.modality_paths["T1IR"], bad, spacing_mm=vol.spacing)
    with pytest.raises(ValueError, match=r"64, 63.*64, 64|64, 64.*64, 63"):
        load_volume(manifest)


def test_unwritable_destination(rng):
    with pytest.raises(OSError):
        save_volume(_volume(rng), "/nonexistent-dir/nowhere")


def test_corrupt_file_rejected(tmp_path, rng):
    vol = _volume(rng)
    manifest = save_volume(vol, tmp_path)
    data = manifest.modality_paths["T1"].read_bytes()
    manifest.modality_paths["T1"].write_bytes(data[:-10])
    with pytest.raises(ValueError, match="T1"):
        load_volume(manifest)


def test_dataset_manifest_roundtrip(tmp_path, rng):
    vols = [_volume(rng, sid="007"), _volume(rng, sid="008")]
    manifests = [save_volume(v, tmp_path) for v in vols]
    write_dataset_manifest(manifests, tmp_path / "manifest.txt")
    back = read_dataset_manifest(tmp_path / "manifest.txt")
    assert [m.subject_id for m in back] == ["007", "008"]


def _manifests(ids):
    from raseg.storage import SubjectManifest

    out = []
    for sid in ids:
        out.append(
            SubjectManifest(
                subject_id=sid,
                modality_paths={m: "%s_%s.vol" % (sid, m) for m in MODALITIES},
                label_path=None,
            )
        )
    return out


def test_split_mirrors_reference_protocol():
    ids = ["1", "4", "5", "7", "14", "070", "148"]
    train, test = make_split(_manifests(ids), ["4", "5", "7", "14", "070"], ["1", "148"])
    assert [m.subject_id for m in train] == ["4", "5", "7", "14", "070"]
    assert [m.subject_id for m in test] == ["1", "148"]
    assert all(m.split == "train" for m in train)
    assert all(m.split == "test" for m in test)


def test_split_rejects_overlap():
    with pytest.raises(ValueError, match="overlap"):
        make_split(_manifests(["1", "2"]), ["1"], ["1"])


def test_split_rejects_unknown_id():
    with pytest.raises(ValueError, match="'9'"):
        make_split(_manifests(["1", "2"]), ["9"], [])


def test_split_empty_test():
    train, test = make_split(_manifests(["1", "2"]), ["1", "2"], [])
    assert len(train) == 2 and test == []
