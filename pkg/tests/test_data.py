import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cxrcascade.data import (AugmentPolicy, BBox, DatasetManifest, ImageSample,
                             ManifestRecord, SynthConfig, apply_affine, augment,
                             expand_dataset, load_manifest, load_samples, partition_sizes,
                             resize_area, save_samples, scale_boxes, split, synth_generate,
                             synth_samples, write_manifest)
from cxrcascade.exceptions import AugmentationRejected, LoadError, ParameterError
from cxrcascade.regions import REVIEW_AREA, region_of

from oracles import block_mean_loops


# manifest --------------------------------------------------------------------

def test_empty_manifest(tmp_path):
    write_manifest(DatasetManifest([], 64), tmp_path / "m.tsv")
    m = load_manifest(tmp_path / "m.tsv")
    assert len(m) == 0 and m.image_size == 64


def _write(tmp_path, body, side=64):
    p = tmp_path / "m.tsv"
    p.write_text(f"#cxr-manifest v1 side={side}\n" + body)
    return p


def test_positive_without_boxes_rejected(tmp_path):
    p = _write(tmp_path, "a1\timg.pgm\t1\tpneumonia\t\n")
    with pytest.raises(LoadError, match="a1.*label 1 requires"):
        load_manifest(p, check_paths=False)


@pytest.mark.parametrize("line,msg", [
    ("a\timg.pgm\t0\tnormal\t1,1,2,2\n", "label 0"),
    ("a\timg.pgm\t2\tnormal\t\n", "label must be"),
    ("a\timg.pgm\t1\tpneumonia\t60,60,10,10\n", "exceeds"),
    ("a\timg.pgm\t1\tpneumonia\t1,1,0,2\n", "positive"),
    ("a\timg.pgm\t1\n", "fields"),
    ("a\timg.pgm\t0\tpneumonia\t\n", "disagrees"),
])
def test_malformed_records(tmp_path, line, msg):
    with pytest.raises(LoadError, match=msg):
        load_manifest(_write(tmp_path, line), check_paths=False)


def test_duplicate_ids(tmp_path):
    p = _write(tmp_path, "a\tx.pgm\t0\tnormal\t\na\ty.pgm\t0\tnormal\t\n")
    with pytest.raises(LoadError, match="duplicate"):
        load_manifest(p, check_paths=False)


def test_bad_header_and_missing_file(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("id\tpath\n")
    with pytest.raises(LoadError, match="header"):
        load_manifest(p)
    with pytest.raises(LoadError, match="not found"):
        load_manifest(tmp_path / "nope.tsv")


def test_missing_image_path(tmp_path):
    p = _write(tmp_path, "a\tmissing.pgm\t0\tnormal\t\n")
    with pytest.raises(LoadError, match="a: image missing.pgm"):
        load_manifest(p)


def test_manifest_round_trip(tmp_path):
    samples = [
        ImageSample("r0", np.zeros((16, 16), np.float32), 0, (), "normal"),
        ImageSample("r1", np.full((16, 16), 0.5, np.float32), 1,
                    (BBox(1, 2, 3, 4), BBox(8, 8, 2, 2)), "pneumonia"),
        ImageSample("r2", np.ones((16, 16), np.float32), 0, (), "other_disease"),
    ]
    m = save_samples(samples, tmp_path)
    back = load_manifest(tmp_path / "manifest.tsv")
    assert back.records == m.records
    assert back.image_size == 16
    loaded = load_samples(back)
    for a, b in zip(samples, loaded):
        assert (a.id, a.label, a.boxes, a.category) == (b.id, b.label, b.boxes, b.category)
        np.testing.assert_allclose(a.pixels, b.pixels, atol=0.5 / 255)


# resize ----------------------------------------------------------------------

def test_resize_identity_and_constant(rng):
    img = rng.random((8, 8))
    assert np.array_equal(resize_area(img, 8), img)
    np.testing.assert_array_equal(resize_area(np.full((16, 16), 0.3), 4), np.full((4, 4), 0.3))


def test_resize_matches_block_mean(rng):
    img = rng.random((8, 8))
    assert np.abs(resize_area(img, 4) - block_mean_loops(img, 4)).max() < 1e-12


def test_resize_keeps_rank(rng):
    assert resize_area(rng.random((1, 8, 8)), 2).shape == (1, 2, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(16, 8), (16, 4), (32, 2), (12, 3)]))
def test_resize_preserves_mean(seed, sizes):
    side, target = sizes
    img = np.random.default_rng(seed).random((side, side))
    out = resize_area(img, target)
    assert abs(out.mean() - img.mean()) < 1e-12
    assert out.min() >= 0 and out.max() <= 1


def test_resize_rejects_bad_target():
    with pytest.raises(ParameterError):
        resize_area(np.zeros((10, 10)), 3)
    with pytest.raises(ParameterError):
        resize_area(np.zeros((10, 8)), 5)


# boxes -------------------------------------------------------------------------

def test_scale_boxes_identity():
    boxes = [BBox(3, 4, 5, 6)]
    assert scale_boxes(boxes, 64, 64) == boxes


def test_scale_boxes_halving():
    assert scale_boxes([BBox(100, 100, 200, 200)], 1024, 512) == [BBox(50, 50, 100, 100)]


def test_scale_boxes_drops_collapsed_width():
    # corners 11 -> 5.5 -> 6 and 12 -> 6: zero width after rounding
    assert scale_boxes([BBox(11, 0, 1, 10)], 64, 32) == []


def test_scale_boxes_round_half_up_and_clamp():
    assert scale_boxes([BBox(1, 1, 3, 3)], 4, 2) == [BBox(1, 1, 1, 1)]
    assert scale_boxes([BBox(5, 5, 3, 3)], 8, 16) == [BBox(10, 10, 6, 6)]


# augmentation ------------------------------------------------------------------

def _pos(side=64, box=BBox(20, 20, 10, 10), seed=0):
    px = np.random.default_rng(seed).random((side, side)).astype(np.float64)
    return ImageSample("p", px, 1, (box,), "pneumonia")


def test_identity_policy_changes_nothing(rng):
    s = _pos()
    out = augment(s, rng, AugmentPolicy.identity())
    np.testing.assert_array_equal(out.pixels, s.pixels)
    assert out.boxes == s.boxes
    assert out.id != s.id and out.label == s.label


def test_pure_translation_moves_boxes():
    s = _pos(side=256, box=BBox(30, 40, 20, 10))
    out = apply_affine(s, dx=10, dy=0)
    assert out.boxes == (BBox(40, 40, 20, 10),)
    np.testing.assert_allclose(out.pixels[:, 10:], s.pixels[:, :-10], atol=1e-12)
    assert np.all(out.pixels[:, :10] == 0)


def test_rotation_box_is_hull(rng):
    s = _pos(side=64, box=BBox(40, 10, 10, 10))
    out = apply_affine(s, angle_deg=5)
    (b,) = out.boxes
    assert b.w >= 10 and b.h >= 10


def test_all_boxes_out_of_frame_rejected():
    s = _pos(side=64, box=BBox(60, 60, 4, 4))
    with pytest.raises(AugmentationRejected):
        apply_affine(s, dx=10, dy=10)


def test_policy_limits():
    with pytest.raises(ParameterError):
        AugmentPolicy(translate=0.1)
    with pytest.raises(ParameterError):
        AugmentPolicy(rotate_deg=10)
    with pytest.raises(ParameterError):
        AugmentPolicy(brightness=(0.5, 1.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000))
def test_augment_preserves_label_and_area(seed):
    r = np.random.default_rng(seed)
    s = _pos(box=BBox(int(r.integers(0, 50)), int(r.integers(0, 50)), 8, 8), seed=seed)
    out = augment(s, r)
    assert out.label == 1 and out.boxes and all(b.area > 0 for b in out.boxes)
    assert all(b.within(64) for b in out.boxes)
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1


def test_expand_to_reference_count():
    rng = np.random.default_rng(0)
    base = [ImageSample(f"n{i}", np.zeros((8, 8)), 0, (), "normal") for i in range(21_347 - 50)]
    base += [ImageSample(f"p{i}", np.zeros((8, 8)), 1, (BBox(2, 2, 4, 4),), "pneumonia")
             for i in range(50)]
    out = expand_dataset(base, 33_463, rng)
    assert len(out) == 33_463
    assert len({s.id for s in out}) == 33_463


# split -------------------------------------------------------------------------

def test_split_small():
    a, b = split(list(range(10)), (0.8, 0.2), seed=3)
    assert (len(a), len(b)) == (8, 2)
    assert split(list(range(10)), (0.8, 0.2), seed=3) == [a, b]
    assert sorted(a + b) == list(range(10))


def test_split_reference_counts():
    assert partition_sizes(26_684, (0.8, 0.2)) == [21_348, 5_336]
    assert partition_sizes(100, (0.71, 0.29)) == [71, 29]


def test_split_empty_and_validation():
    assert split([], (0.8, 0.2)) == [[], []]
    with pytest.raises(ParameterError):
        split([1, 2], (0.5, 0.6))
    with pytest.raises(ParameterError):
        split([1, 2], (1.0, 0.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 300), st.integers(0, 10**6))
def test_split_partitions(n, seed):
    parts = split(list(range(n)), (0.6, 0.3, 0.1), seed)
    flat = [x for p in parts for x in p]
    assert sorted(flat) == list(range(n))


def test_split_manifest():
    m = DatasetManifest([ManifestRecord(f"r{i}", f"r{i}.pgm", 0) for i in range(5)], 8)
    a, b = split(m, (0.8, 0.2), seed=1)
    assert isinstance(a, DatasetManifest) and len(a) == 4 and len(b) == 1


# synthetic data ------------------------------------------------------------------

def test_synth_empty(tmp_path):
    m = synth_generate(SynthConfig(count=0), np.random.default_rng(0), tmp_path)
    assert len(m) == 0
    assert len(load_manifest(tmp_path / "manifest.tsv")) == 0


def test_synth_all_positive():
    samples = synth_samples(SynthConfig(count=10, positive_fraction=1.0),
                            np.random.default_rng(0))
    assert all(s.label == 1 and s.boxes for s in samples)


def test_synth_review_fraction_agrees_with_regions():
    cfg = SynthConfig(count=200, positive_fraction=1.0, review_fraction=0.5)
    samples = synth_samples(cfg, np.random.default_rng(11))
    boxes = [b for s in samples for b in s.boxes]
    review = sum(region_of([b], cfg.side) == REVIEW_AREA for b in boxes)
    assert 0.4 <= review / len(boxes) <= 0.6


def test_synth_invariants_and_determinism(tmp_path):
    cfg = SynthConfig(count=30)
    a = synth_samples(cfg, np.random.default_rng(5))
    b = synth_samples(cfg, np.random.default_rng(5))
    for x, y in zip(a, b):
        x.validate()
        assert x.pixels.tobytes() == y.pixels.tobytes() and x.boxes == y.boxes
        assert (x.label == 1) == bool(x.boxes)
        assert x.pixels.min() >= 0 and x.pixels.max() <= 1
    synth_generate(cfg, np.random.default_rng(5), tmp_path / "a")
    synth_generate(cfg, np.random.default_rng(5), tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_synth_box_is_exact_support():
    cfg = SynthConfig(count=20, positive_fraction=1.0, max_blobs=1, texture=0.0)
    for s in synth_samples(cfg, np.random.default_rng(2)):
        (b,) = s.boxes
        assert b.within(cfg.side)


def test_synth_unsatisfiable():
    with pytest.raises(ParameterError):
        SynthConfig(blob_radius=(0.1, 0.6))
    with pytest.raises(ParameterError):
        SynthConfig(side=16, blob_radius=(0.01, 0.02))
