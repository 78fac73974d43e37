import json

import numpy as np
import pytest

from fraclap.geometry import BoundarySet
from fraclap.grid import BinaryMask, GridSpec, ScalarField, disk
from fraclap.io import (FormatError, mask_from_json, mask_to_json, quantize, read_pbm, read_pgm,
                        write_boundary_csv, write_pbm, write_pgm)


@pytest.mark.parametrize("bits", [8, 16])
def test_pgm_round_trip_of_quantised_field(tmp_path, bits):
    g = GridSpec.periodic(2, 24)
    u = quantize(ScalarField(g, np.random.default_rng(0).random(g.shape)), bits)
    write_pgm(u, tmp_path / "a.pgm", bits=bits)
    v = read_pgm(tmp_path / "a.pgm")
    assert np.array_equal(u.values, v.values)


def _raw(path, header, payload):
    path.write_bytes(header + payload)


def test_black_and_white_images(tmp_path):
    _raw(tmp_path / "black.pgm", b"P5\n4 4\n255\n", bytes(16))
    assert not read_pgm(tmp_path / "black.pgm").values.any()
    _raw(tmp_path / "white.pgm", b"P5 4 4 65535\n", b"\xff\xff" * 16)
    assert np.all(read_pgm(tmp_path / "white.pgm").values == 1.0)


def test_header_comments(tmp_path):
    _raw(tmp_path / "c.pgm", b"P5\n# a comment\n4 # width\n4\n255\n", bytes(range(16)))
    u = read_pgm(tmp_path / "c.pgm")
    assert u.values[0, 1] == pytest.approx(1 / 255)


@pytest.mark.parametrize("data", [b"P2\n4 4\n255\n" + bytes(16), b"P5\n4 x\n255\n" + bytes(16),
                                  b"P5\n4 4\n255\n" + bytes(3), b"P5\n4 4\n0\n" + bytes(16), b"P5\n4"])
def test_malformed_pgm(tmp_path, data):
    (tmp_path / "m.pgm").write_bytes(data)
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "m.pgm")


def test_dimension_mismatch(tmp_path):
    _raw(tmp_path / "a.pgm", b"P5\n4 4\n255\n", bytes(16))
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "a.pgm", GridSpec.periodic(2, 8))
    _raw(tmp_path / "r.pgm", b"P5\n4 5\n255\n", bytes(20))
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "r.pgm")


def test_pbm_round_trip(tmp_path):
    g = GridSpec.periodic(2, 13)
    m = BinaryMask(g, disk(13, 4))
    write_pbm(m, tmp_path / "m.pbm")
    assert np.array_equal(read_pbm(tmp_path / "m.pbm").members, m.members)


def test_json_mask_round_trip():
    g = GridSpec.periodic(2, 16)
    m = BinaryMask(g, disk(16, 5))
    text = mask_to_json(m)
    assert json.loads(text)["shape"] == [16, 16]
    assert np.array_equal(mask_from_json(text).members, m.members)
    with pytest.raises(FormatError):
        mask_from_json(json.dumps({"shape": [4, 4], "cells": [[4, 0]]}))


def test_boundary_csv(tmp_path):
    g = GridSpec.periodic(2, 8, h=0.5)
    b = BoundarySet(g, np.array([[0, 1], [2, 3]]))
    write_boundary_csv(b, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines == ["x,y", "0.25,0.75", "1.25,1.75"]
