import json

import pytest

from microcity.canonical import canonical_json, digest_of, fnv1a64, round6


def test_sorted_keys_and_fixed_decimals():
    s = canonical_json({"b": 1.5, "a": {"z": 2, "y": 0.1234567}})
    assert s == '{"a":{"y":0.123457,"z":2},"b":1.500000}'


def test_round6_normalizes_negative_zero():
    assert str(round6(-1e-9)) == "0.0"
    assert canonical_json(-0.0000001) == "0.000000"


def test_ints_stay_ints():
    assert canonical_json([1, 2.0]) == "[1,2.000000]"


def test_canonical_is_valid_json():
    obj = {"name": "x", "vals": [1.0, -2.25, 3], "flag": True, "none": None}
    assert json.loads(canonical_json(obj)) == {
        "name": "x", "vals": [1.0, -2.25, 3], "flag": True, "none": None,
    }


def test_digest_stability_and_sensitivity():
    a = {"x": 1.0, "y": 2.0}
    assert digest_of(a) == digest_of({"y": 2.0, "x": 1.0})
    assert digest_of(a) != digest_of({"x": 1.0, "y": 2.000001})
    assert len(digest_of(a)) == 16


def test_fnv_known_vector():
    # classic FNV-1a 64 test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        canonical_json(float("nan"))
