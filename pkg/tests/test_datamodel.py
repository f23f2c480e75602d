import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from damageseg.datamodel import (
    ClassTable,
    DatasetIndex,
    ValidationError,
    compute_class_frequencies,
    load_dataset,
    read_image,
    read_mask,
    write_image,
    write_mask,
)
from damageseg.synth import SynthSpec, generate_synthetic_scene, write_synthetic_split


def test_default_class_table():
    t = ClassTable()
    assert t.num_classes == 11
    assert t.names[3:6] == ("Building-Minor-Damage", "Building-Major-Damage", "Building-Total-Destruction")
    assert t.rare_set == (3, 4, 5)
    assert t.ignore_id == 255
    assert ClassTable.from_dict(t.to_dict()) == t


@pytest.mark.parametrize("kwargs", [
    {"names": ("a", "a")},
    {"names": ("a", "b"), "rare_set": (2,)},
    {"names": ("a", "b"), "ignore_id": 1},
])
def test_class_table_rejects_bad_input(kwargs):
    with pytest.raises(ValidationError):
        ClassTable(**kwargs)


def test_class_table_ids_must_be_contiguous():
    with pytest.raises(ValidationError, match="contiguous"):
        ClassTable.from_dict({"classes": [{"id": 0, "name": "a"}, {"id": 2, "name": "b"}]})


def test_frequencies_single_class():
    f = compute_class_frequencies([np.zeros((2, 2), dtype=np.uint8)], ClassTable())
    assert f.as_dict()[0] == 100.0
    assert sum(f.as_dict().values()) == 100.0


def test_frequencies_hand_placed_labels():
    table = ClassTable()
    a = np.zeros((4, 4), dtype=np.uint8)
    a[0, :3] = 3
    a[2, 2] = 9
    a[3, 3] = 255
    b = np.full((4, 4), 8, dtype=np.uint8)
    b[1:3, 1:3] = 4
    counts = {}
    for m in (a, b):
        for v in m.ravel().tolist():
            if v != 255:
                counts[v] = counts.get(v, 0) + 1
    total = sum(counts.values())
    assert total == 31
    f = compute_class_frequencies([a, b], table)
    for c in range(11):
        assert f.counts[c] == counts.get(c, 0)
        assert f.percentages[c] == pytest.approx(100.0 * counts.get(c, 0) / total)
    assert f.percentages.sum() == pytest.approx(100.0, abs=0.01)


def test_frequencies_report_bad_pixel():
    m = np.zeros((3, 3), dtype=np.uint8)
    m[2, 1] = 40
    with pytest.raises(ValidationError, match=r"row=2, col=1"):
        compute_class_frequencies([m], ClassTable())


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 10)))
def test_mask_png_round_trip(tmp_path_factory, mask):
    path = tmp_path_factory.mktemp("rt") / "m.png"
    write_mask(path, mask)
    np.testing.assert_array_equal(read_mask(path), mask)


def test_mask_round_trip_with_ignore(tmp_path):
    mask = np.array([[0, 255], [10, 3]], dtype=np.uint8)
    write_mask(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), mask)


def test_image_round_trip_is_8bit_exact(tmp_path):
    img = (np.arange(48, dtype=np.float32).reshape(4, 4, 3) * 5) / 255.0
    write_image(tmp_path / "i.png", img)
    np.testing.assert_allclose(read_image(tmp_path / "i.png"), img, atol=1e-7)


def test_load_dataset_sorted_and_unmatched(tmp_path):
    write_synthetic_split(tmp_path, 3, seed=1, split="val", spec=SynthSpec(height=32, width=32))
    idx = load_dataset(tmp_path, "val")
    assert isinstance(idx, DatasetIndex) and len(idx) == 3
    stems = [p[0].stem for p in idx]
    assert stems == sorted(stems)
    image, mask = idx.load(0, ClassTable())
    assert image.shape == (32, 32, 3) and mask.shape == (32, 32)
    (tmp_path / "val" / "masks" / f"{stems[1]}.png").unlink()
    with pytest.raises(ValidationError, match=stems[1]):
        load_dataset(tmp_path, "val")


def test_unreadable_mask_names_path(tmp_path):
    write_synthetic_split(tmp_path, 1, seed=1, split="train", spec=SynthSpec(height=32, width=32))
    idx = load_dataset(tmp_path, "train")
    idx.pairs[0][1].write_bytes(b"not a png")
    with pytest.raises(OSError, match="scene_0000"):
        compute_class_frequencies(idx, ClassTable())


# --- synthetic generator ----------------------------------------------------


def test_generator_is_deterministic():
    a = generate_synthetic_scene(11)
    b = generate_synthetic_scene(11)
    assert a[0].tobytes() == b[0].tobytes()
    assert a[1].tobytes() == b[1].tobytes()
    c = generate_synthetic_scene(12)
    assert a[1].tobytes() != c[1].tobytes()


@pytest.mark.parametrize("cls_id", [0, 4, 10])
def test_generator_single_class(cls_id):
    spec = SynthSpec.uniform_class(11, cls_id, height=40, width=24)
    image, mask = generate_synthetic_scene(3, spec)
    assert mask.shape == (40, 24) and np.all(mask == cls_id)
    assert image.shape == (40, 24, 3) and image.min() >= 0 and image.max() <= 1


def test_generator_rejects_bad_frequencies():
    with pytest.raises(ValidationError):
        SynthSpec(frequencies=(0.5,) * 11)


def test_generator_rare_classes_sit_inside_buildings():
    for seed in range(5):
        _, mask = generate_synthetic_scene(seed)
        rare = np.isin(mask, (3, 4, 5))
        building = np.isin(mask, (2, 3, 4, 5))
        assert rare.any()
        assert np.all(building[rare])
        assert (mask == 2).any()


def test_generator_textures_differ_per_class():
    image, mask = generate_synthetic_scene(0)
    stds = {c: image[mask == c].std(axis=0).mean() for c in (2, 3, 4, 5) if (mask == c).sum() > 20}
    assert len(stds) >= 3
    assert len({round(float(v), 3) for v in stds.values()}) == len(stds)


def test_generator_frequencies_track_targets():
    spec = SynthSpec()
    f = compute_class_frequencies([generate_synthetic_scene(s, spec)[1] for s in range(300)], ClassTable())
    target = 100.0 * np.asarray(spec.frequencies)
    rel = np.abs(f.percentages - target) / target
    assert np.all(rel < 0.30), rel
