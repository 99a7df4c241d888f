import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from attrloss.core import (
    ATTRIBUTE_SUBSETS,
    Dataset,
    DatasetFormatError,
    DimensionError,
    attribute_distance,
    dataset_to_bytes,
    encode_attributes,
    load_dataset,
    save_dataset,
)


@pytest.mark.parametrize(
    "gender, ethnicity, age, expected",
    [
        ("male", "asian", 50, (1, 1, 0.0)),
        ("female", "caucasian", 100, (-1, -1, 1.0)),
        ("female", "asian", 130, (-1, 1, 1.0)),
        ("male", "caucasian", 0, (1, -1, -1.0)),
    ],
)
def test_encode_attributes_examples(gender, ethnicity, age, expected):
    np.testing.assert_array_equal(encode_attributes(gender, ethnicity, age), expected)


def test_encode_age_28_against_arithmetic():
    oracle = 2 * 28 / 100 - 1
    assert oracle == pytest.approx(-0.44)
    np.testing.assert_allclose(encode_attributes("male", "caucasian", 28), (1, -1, oracle), rtol=0, atol=1e-15)


def test_encode_rejects_unknown_categories_and_negative_age():
    with pytest.raises(ValueError):
        encode_attributes("other", "asian", 30)
    with pytest.raises(ValueError):
        encode_attributes("male", "hispanic", 30)
    with pytest.raises(ValueError):
        encode_attributes("male", "asian", -1)


@given(st.floats(0, 100), st.floats(0, 100))
def test_age_encoding_monotone(a, b):
    assume(b - a > 1e-9)  # below this the float encoding cannot resolve the gap
    assert encode_attributes("male", "asian", a)[2] < encode_attributes("male", "asian", b)[2]


@given(st.floats(0, 1e6))
def test_encoding_in_unit_box(age):
    v = encode_attributes("female", "caucasian", age)
    assert np.all(np.abs(v) <= 1)


def test_attribute_distance_examples():
    assert attribute_distance((0, 0, 0), (0, 0, 0)) == 0
    assert attribute_distance((1, 0, 0), (-1, 0, 0)) == 2
    assert attribute_distance((1, 1, 0), (0, 0, 0)) == pytest.approx(math.sqrt(2), abs=1e-15)
    with pytest.raises(DimensionError):
        attribute_distance((1, 0), (1, 0, 0))


vec3 = st.lists(st.floats(-1, 1), min_size=3, max_size=3)


@given(vec3, vec3, vec3)
def test_attribute_distance_metric_axioms(p, q, r):
    assert attribute_distance(p, q) == pytest.approx(attribute_distance(q, p))
    assert attribute_distance(p, r) <= attribute_distance(p, q) + attribute_distance(q, r) + 1e-12


def small_dataset():
    x = np.array([[0.1, -0.2], [0.3, 0.4], [1.0, -1.0]])
    p = np.array([encode_attributes("male", "asian", 20), encode_attributes("female", "asian", 60),
                  encode_attributes("male", "caucasian", 33)])
    return Dataset(x, [0, 1, 1], p, num_classes=2, name="tiny", provenance="unit test")


def test_round_trip_bit_exact(tmp_path):
    ds = small_dataset()
    path = tmp_path / "tiny.attrset"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    assert back.attributes.tobytes() == ds.attributes.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()
    assert (back.N, back.D, back.C, back.H) == (3, 2, 2, 3)
    assert back.name == "tiny" and back.provenance == "unit test"
    assert [s.label for s in back] == [0, 1, 1]


def test_header_layout():
    blob = dataset_to_bytes(small_dataset())
    assert blob[:8] == b"ATTRSET1"
    assert np.frombuffer(blob[8:24], "<u4").tolist() == [3, 2, 2, 3]
    assert len(blob) == 24 + 3 * (4 + 8 * 3 + 8 * 2)


def _write(tmp_path, blob):
    path = tmp_path / "bad.attrset"
    path.write_bytes(blob)
    return path


def test_label_out_of_range_names_record(tmp_path):
    blob = bytearray(dataset_to_bytes(small_dataset()))
    rec = 4 + 8 * 3 + 8 * 2
    blob[24 + 2 * rec : 24 + 2 * rec + 4] = np.uint32(5).tobytes()
    with pytest.raises(DatasetFormatError) as err:
        load_dataset(_write(tmp_path, bytes(blob)))
    assert err.value.record == 2


def test_nan_payload_names_record(tmp_path):
    blob = bytearray(dataset_to_bytes(small_dataset()))
    rec = 4 + 8 * 3 + 8 * 2
    off = 24 + rec + 4 + 8 * 3
    blob[off : off + 8] = np.float64(np.nan).tobytes()
    with pytest.raises(DatasetFormatError) as err:
        load_dataset(_write(tmp_path, bytes(blob)))
    assert err.value.record == 1


def test_empty_and_malformed(tmp_path):
    empty = b"ATTRSET1" + np.array([0, 2, 2, 3], "<u4").tobytes()
    with pytest.raises(DatasetFormatError):
        load_dataset(_write(tmp_path, empty))
    with pytest.raises(DatasetFormatError):
        load_dataset(_write(tmp_path, b"NOTMAGIC" + bytes(16)))
    truncated = dataset_to_bytes(small_dataset())[:-5]
    with pytest.raises(DatasetFormatError):
        load_dataset(_write(tmp_path, truncated))


def test_dataset_invariants():
    x = np.zeros((2, 2))
    p = np.zeros((2, 3))
    with pytest.raises(DatasetFormatError):
        Dataset(x, [0, 0], p, num_classes=2)  # class 1 never appears
    with pytest.raises(DimensionError):
        Dataset(x, [0, 1, 1], p, num_classes=2)


def test_from_records_remaps_labels_densely():
    ds = Dataset.from_records(np.zeros((3, 1)), [17, 4, 17], np.zeros((3, 3)))
    assert ds.labels.tolist() == [1, 0, 1] and ds.C == 2


def test_arrays_are_read_only():
    ds = small_dataset()
    with pytest.raises(ValueError):
        ds.inputs[0, 0] = 5.0


def test_attribute_subsets_keep_raw_columns():
    ds = small_dataset()
    sub = ds.with_attribute_columns(ATTRIBUTE_SUBSETS["g+a"])
    np.testing.assert_array_equal(sub.attributes, ds.attributes[:, [0, 2]])
