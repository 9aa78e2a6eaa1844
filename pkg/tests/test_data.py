import json
from collections import Counter

import numpy as np
import pytest

from lodet.data import (CocoParseError, CoverageError, DatasetIndex, EpisodeSpec, IntegrityError,
                        SplitError, SynthConfig, dump_coco_json, load_coco_json, load_dataset,
                        sample_k_shot, save_dataset, source_profile, split, synth_generate,
                        target_profile)
from lodet.data.ppm import read_ppm, write_ppm

FIXTURE = {
    "info": {"ignored": True},
    "images": [{"id": 1, "width": 64, "height": 48, "file_name": "a.ppm", "extra": 3}],
    "annotations": [{"id": 10, "image_id": 1, "category_id": 7, "bbox": [2, 3, 10, 12],
                     "area": 120, "iscrowd": 0, "segmentation": []}],
    "categories": [{"id": 7, "name": "vehicle", "supercategory": "x"}],
}


def _disjoint_dataset(n_classes=3, per_class=4):
    images, anns = [], []
    for c in range(1, n_classes + 1):
        for j in range(per_class):
            iid = c * 100 + j
            images.append({"id": iid, "width": 10, "height": 10, "file_name": f"{iid}.ppm"})
            anns.append({"id": iid, "image_id": iid, "category_id": c, "bbox": [1, 1, 3, 3]})
    cats = [{"id": c, "name": f"c{c}"} for c in range(1, n_classes + 1)]
    return DatasetIndex(images, anns, cats)


def _recount(ds):
    counts = Counter()
    for i in ds.image_ids:
        counts.update(ds.classes_in(i))
    return counts


# -- COCO ingestion ------------------------------------------------------------------

def test_minimal_fixture_counts():
    ds = load_coco_json(json.dumps(FIXTURE).encode())
    assert (len(ds.images), len(ds.annotations), len(ds.categories)) == (1, 1, 1)
    assert "extra" not in ds.images[0]


def test_dangling_image_id_names_annotation():
    doc = json.loads(json.dumps(FIXTURE))
    doc["annotations"][0]["image_id"] = 999
    with pytest.raises(IntegrityError, match="annotation 10"):
        load_coco_json(json.dumps(doc))


def test_dangling_category_id():
    doc = json.loads(json.dumps(FIXTURE))
    doc["annotations"][0]["category_id"] = 3
    with pytest.raises(IntegrityError, match="annotation 10"):
        load_coco_json(json.dumps(doc))


def test_bbox_outside_image():
    doc = json.loads(json.dumps(FIXTURE))
    doc["annotations"][0]["bbox"] = [60, 3, 10, 12]
    with pytest.raises(IntegrityError, match="bounds"):
        load_coco_json(json.dumps(doc))


def test_malformed_json_reports_byte_offset():
    blob = '{"images": [ünï, 1]}'.encode()
    with pytest.raises(CocoParseError) as info:
        load_coco_json(blob)
    assert info.value.offset == blob.index("ü".encode())


def test_round_trip_equal():
    ds = load_coco_json(json.dumps(FIXTURE))
    assert load_coco_json(dump_coco_json(ds)) == ds


def test_index_is_immutable():
    ds = load_coco_json(json.dumps(FIXTURE))
    with pytest.raises(Exception):
        ds.images = ()


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3)) / 255.0
    write_ppm(tmp_path / "x.ppm", img)
    np.testing.assert_allclose(read_ppm(tmp_path / "x.ppm"), img, atol=1e-7)


def test_dataset_directory_round_trip(tmp_path):
    ds = synth_generate(source_profile(n_images=3))
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back == ds
    for i in ds.image_ids:
        assert np.max(np.abs(back.pixels_for(i) - ds.pixels_for(i))) <= 0.5 / 255 + 1e-6


# -- synthetic scenes ----------------------------------------------------------------

def test_synth_deterministic():
    a = synth_generate(SynthConfig(n_images=5, seed=3))
    b = synth_generate(SynthConfig(n_images=5, seed=3))
    assert a == b
    for i in a.image_ids:
        assert a.pixels_for(i).tobytes() == b.pixels_for(i).tobytes()


def test_synth_object_count_collapse():
    ds = synth_generate(SynthConfig(n_images=6, objects_per_image=(5, 5), object_scale=(0.1, 0.15)))
    assert all(len(ds.annotations_for(i)) == 5 for i in ds.image_ids)


def test_synth_brightness_shift():
    base = synth_generate(SynthConfig(n_images=10, seed=4))
    shifted = synth_generate(SynthConfig(n_images=10, seed=4, brightness_shift=0.3))
    diff = np.mean([shifted.pixels_for(i).mean() - base.pixels_for(i).mean() for i in base.image_ids])
    assert abs(diff - 0.3) <= 0.01


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(object_scale=(0.2, 0.6))
    with pytest.raises(ValueError):
        SynthConfig(objects_per_image=(3, 2))


def test_profiles_differ_in_density_and_scale():
    src = synth_generate(source_profile(n_images=20))
    tgt = synth_generate(target_profile(n_images=20))
    size = lambda ds: np.mean([a["bbox"][2] for a in ds.annotations])
    assert len(tgt.annotations) > 2 * len(src.annotations)
    assert size(tgt) < size(src)


# -- k-shot episodes -----------------------------------------------------------------

def test_disjoint_classes_exact_episode():
    ep = sample_k_shot(_disjoint_dataset(), EpisodeSpec(k=2, seed=0))
    assert len(ep.image_ids) == 6
    assert _recount(ep) == {1: 2, 2: 2, 3: 2}


def test_episode_deterministic_and_sound():
    ds = synth_generate(target_profile(n_images=60))
    a = sample_k_shot(ds, EpisodeSpec(k=5, seed=1))
    b = sample_k_shot(ds, EpisodeSpec(k=5, seed=1))
    assert a == b
    assert set(a.image_ids) <= set(ds.image_ids)
    for i in a.image_ids:
        assert a.annotations_for(i) == ds.annotations_for(i)


@pytest.mark.parametrize("k", [1, 5, 10])
def test_multi_class_recount(k):
    ds = synth_generate(target_profile(n_images=80))
    for seed in range(5):
        counts = _recount(sample_k_shot(ds, EpisodeSpec(k=k, seed=seed)))
        assert all(counts[c] >= k for c in ds.category_ids)


def test_five_seeds_distinct():
    ds = synth_generate(target_profile())
    eps = {tuple(sorted(sample_k_shot(ds, EpisodeSpec(k=1, seed=s)).image_ids)) for s in range(5)}
    assert len(eps) == 5


def test_coverage_error_names_class():
    with pytest.raises(CoverageError, match="class 2"):
        sample_k_shot(_disjoint_dataset(per_class=3), EpisodeSpec(k=4, seed=0, class_ids=[2]))


def test_episode_spec_validation():
    with pytest.raises(ValueError):
        EpisodeSpec(k=0, seed=0)
    with pytest.raises(ValueError):
        sample_k_shot(_disjoint_dataset(), EpisodeSpec(k=1, seed=0, class_ids=[42]))


# -- splits --------------------------------------------------------------------------

def test_split_half():
    ds = _disjoint_dataset(n_classes=2, per_class=5)
    parts = split(ds, 0.5, seed=0)
    tr, va = set(parts["train"].image_ids), set(parts["val"].image_ids)
    assert len(tr) == len(va) == 5
    assert not tr & va
    assert tr | va == set(ds.image_ids)


def test_split_keeps_all_classes_on_synthetic():
    ds = synth_generate(target_profile())
    parts = split(ds, 0.2, seed=3)
    for side in parts.values():
        assert set(_recount(side)) == set(ds.category_ids)


def test_split_errors():
    ds = _disjoint_dataset(n_classes=1, per_class=2)
    with pytest.raises(SplitError):
        split(ds, 0.0, 0)
    with pytest.raises(SplitError):
        split(ds, 0.1, 0)
