import json
import math

import numpy as np
import pytest

from atomics import io
from atomics.catalog import Affine, Indicator, Linear
from atomics.counterexample import depth_lifting, lifting_obstruction_audit
from atomics.cylinder import FactorizedInner, GenCylinderFn
from atomics.errors import ConfigParse, FormatVersionMismatch
from atomics.measures import MeasureCurve, dirac
from atomics.sampling import parse_law
from utils.constants import FORMAT_VERSION


def test_documents_carry_the_format_version(three_atoms):
    doc = io.dump(three_atoms)
    assert doc["format_version"] == FORMAT_VERSION
    assert doc["type"] == "measure"
    assert io.load(doc) == three_atoms


def test_curve_lifting_law_and_functional_documents(three_atoms):
    curve = MeasureCurve([0.0, 1.0], (three_atoms, dirac([0.0])))
    back = io.load(io.dump(curve))
    assert back.times.tolist() == [0.0, 1.0]
    assert back.states == curve.states

    lam = depth_lifting(1, times=[0.0, 0.5])
    loaded = io.load(json.loads(io.dumps(io.dump(lam))))
    assert np.array_equal(loaded.positions, lam.positions)
    assert loaded.weights == lam.weights

    law = parse_law("stick_breaking:2@uniform_box:2")
    assert io.load(json.loads(io.dumps(io.dump(law)))) == law

    F = GenCylinderFn((FactorizedInner(Linear(), Indicator(0.25, 1.0)),), Affine())
    assert io.load(json.loads(io.dumps(io.dump(F)))) == F


def test_version_mismatch(three_atoms):
    doc = io.dump(three_atoms)
    doc["format_version"] = "0"
    with pytest.raises(FormatVersionMismatch):
        io.load(doc)
    with pytest.raises(FormatVersionMismatch):
        io.load({"type": "measure", "weights": [1.0], "locations": [[0.0]]})


def test_unknown_or_incomplete_documents():
    with pytest.raises(ConfigParse):
        io.load({"format_version": FORMAT_VERSION, "type": "histogram"})
    with pytest.raises(ConfigParse):
        io.load({"format_version": FORMAT_VERSION, "type": "measure", "weights": [1.0]})


def test_reports_become_plain_json():
    doc = io.dump(lifting_obstruction_audit(2))
    assert doc["max_atom_mass"] == 0.125
    assert doc["rejections"][0]["atoms_before"] == 2
    assert io.to_jsonable({"x": math.inf, "n": np.int64(3), "ok": np.bool_(True)}) == {
        "x": "inf", "n": 3, "ok": True}
    assert io.dump(2.5) == {"format_version": FORMAT_VERSION, "value": 2.5}


def test_files_are_deterministic(tmp_path, three_atoms):
    first = io.write_json(tmp_path / "a" / "mu.json", three_atoms)
    second = io.write_json(tmp_path / "b" / "mu.json", three_atoms)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().endswith("\n")
    assert io.read_object(first) == three_atoms


def test_read_json_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigParse):
        io.read_json(bad)
    with pytest.raises(ConfigParse):
        io.read_json(tmp_path / "missing.json")
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigParse):
        io.read_json(listing)


def test_csv_header(tmp_path):
    path = io.write_csv(tmp_path / "rows.csv", [{"epsilon": 0.1, "value": 0.19}, {"epsilon": 0.01, "value": math.nan}])
    lines = path.read_text().splitlines()
    assert lines[0] == f"# format_version={FORMAT_VERSION}"
    assert lines[1] == "epsilon,value"
    assert lines[2] == "0.1,0.19"
    assert lines[3] == "0.01,nan"
