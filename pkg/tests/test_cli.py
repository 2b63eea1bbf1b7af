import json
import logging
from pathlib import Path

import pytest

from atomics import io
from atomics.cli import run
from atomics.measures import AtomicMeasure, MeasureCurve, dirac, make_atomic
from atomics.transport import wasserstein_p
from utils.constants import FORMAT_VERSION


def _summary(capsys) -> dict:
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_dist_between_diracs(capsys):
    io.write_json("zero.json", dirac([0.0]))
    io.write_json("one.json", dirac([1.0]))
    assert run(["dist", "zero.json", "one.json"]) == 0
    assert _summary(capsys) == {"distance": 1.0}
    manifest = json.loads(Path("atomics-out/manifest.json").read_text())
    assert manifest["format_version"] == FORMAT_VERSION
    assert manifest["command"] == "dist"
    assert manifest["files"] == ["distance.json"]
    doc = json.loads(Path("atomics-out/distance.json").read_text())
    assert doc["plan"] == {"sources": [[0.0]], "targets": [[1.0]], "masses": [1.0]}


def test_dist_in_sup_norm(capsys):
    io.write_json("zero.json", dirac([0.0]))
    io.write_json("two.json", make_atomic([0.5, 0.5], [[0.0], [2.0]]))
    assert run(["dist", "zero.json", "two.json", "--p", "inf"]) == 0
    assert _summary(capsys)["distance"] == 2.0
    assert run(["dist", "zero.json", "two.json", "--inf", "--out", "switch"]) == 0
    assert _summary(capsys)["distance"] == 2.0
    doc = json.loads(Path("switch/distance.json").read_text())
    assert doc["p"] == "inf"
    assert doc["plan"]["targets"] == [[0.0], [2.0]]
    assert doc["plan"]["masses"] == [0.5, 0.5]


def test_dist_atomic_on_an_eps_grid(capsys):
    io.write_json("zero.json", dirac([0.0]))
    io.write_json("split.json", make_atomic([0.5, 0.5], [[0.0], [0.5]]))
    assert run(["dist", "zero.json", "split.json", "--atomic", "--eps-grid", "0.5,0.9"]) == 0
    summary = _summary(capsys)
    assert summary["wasserstein"] == pytest.approx(0.25)
    assert summary["sup_term"] == pytest.approx(0.5)
    assert summary["eps_argmax"] == 0.5
    assert summary["distance"] == pytest.approx(0.75)
    doc = json.loads(Path("atomics-out/distance.json").read_text())
    assert doc["eps_grid"] == [0.5, 0.9]
    assert doc["psi"] == "tent"
    assert sum(doc["plan"]["masses"]) == pytest.approx(1.0)
    assert run(["dist", "zero.json", "split.json", "--psi", "exp", "--out", "exp"]) == 0
    assert "sup_term" in _summary(capsys)


def test_dist_rejects_inconsistent_flags():
    io.write_json("zero.json", dirac([0.0]))
    io.write_json("one.json", dirac([1.0]))
    assert run(["dist", "zero.json", "one.json", "--eps-grid", "0.5"]) == 2
    assert run(["dist", "zero.json", "one.json", "--atomic", "--eps-grid", "0.5,abc"]) == 2
    assert run(["dist", "zero.json", "one.json", "--atomic", "--eps-grid", "1.5"]) == 2
    assert run(["dist", "zero.json", "one.json", "--atomic", "--inf"]) == 2


def test_obstruction_audit(capsys):
    assert run(["counterexample", "--audit", "obstruction", "--depth", "5", "--out", "runs"]) == 0
    summary = _summary(capsys)
    assert summary["max_atom_mass"] == 0.015625
    assert summary["n_curves"] == 64
    assert summary["all_rejected"] is True
    assert Path("runs/obstruction.json").exists()


def test_counterexample_measure(capsys):
    assert run(["counterexample", "--t", "0.6"]) == 0
    assert _summary(capsys) == {"atoms": 4, "t": 0.6}
    mu = io.read_object("atomics-out/measure.json")
    assert mu.a.tolist() == [0.25] * 4


def test_sampling_is_reproducible(capsys):
    args = ["sample", "--law", "poisson:1", "--n", "3", "--seed", "7"]
    assert run(args + ["--out", "a"]) == 0
    first = capsys.readouterr().out
    assert run(args + ["--out", "b"]) == 0
    second = capsys.readouterr().out
    assert first == second
    names = [f"measure_{i}.json" for i in range(3)]
    assert json.loads(Path("a/manifest.json").read_text())["files"] == names
    for name in names:
        assert Path("a", name).read_bytes() == Path("b", name).read_bytes()
        assert isinstance(io.read_object(Path("a", name)), AtomicMeasure)


def test_dist_reads_sampled_measures(capsys):
    assert run(["sample", "--law", "stick_breaking:2@uniform_box:2", "--n", "2", "--seed", "5"]) == 0
    capsys.readouterr()
    assert run(["dist", "atomics-out/measure_0.json", "atomics-out/measure_1.json", "--out", "d"]) == 0
    expected = wasserstein_p(io.read_object("atomics-out/measure_0.json"),
                             io.read_object("atomics-out/measure_1.json")).distance
    assert _summary(capsys)["distance"] == pytest.approx(expected)


def test_simulate_writes_curves_liftings_and_residuals(capsys):
    args = ["simulate", "--law", "stick_breaking:2@uniform_box:2", "--field", "mean_field_attraction",
            "--T", "1", "--dt", "0.05", "--seed", "3"]
    assert run(args + ["--n", "2"]) == 0
    summary = _summary(capsys)
    assert summary["n"] == 2
    assert summary["nodes"] == 21
    files = json.loads(Path("atomics-out/manifest.json").read_text())["files"]
    assert files == ["curve_0.json", "curve_1.json", "lifting_0.json", "lifting_1.json",
                     "moments.csv", "residuals.csv"]
    assert isinstance(io.read_object("atomics-out/curve_1.json"), MeasureCurve)
    lines = Path("atomics-out/residuals.csv").read_text().splitlines()
    assert lines[0] == f"# format_version={FORMAT_VERSION}"
    assert lines[1] == "test_fn id,xi id,residual,grid step"
    assert len(lines) == 2 + 5 * 2
    assert run(args + ["--members", "2", "--out", "alias"]) == 0
    assert Path("alias/residuals.csv").read_bytes() == Path("atomics-out/residuals.csv").read_bytes()


def test_invalid_input_exits_with_two(capsys):
    assert run(["teleport"]) == 2
    assert run(["sample", "--law", "gamma:1"]) == 2
    assert run(["counterexample"]) == 2
    assert run(["dist", "missing.json", "other.json"]) == 2
    assert "Error" in capsys.readouterr().err


def test_wrong_document_type_exits_with_two():
    io.write_json("curve.json", MeasureCurve([0.0], (dirac([0.0]),)))
    io.write_json("zero.json", dirac([0.0]))
    assert run(["dist", "curve.json", "zero.json"]) == 2


def test_lift_reports_rejection(capsys):
    split = MeasureCurve([0.0, 1.0], (dirac([0.0]), make_atomic([0.5, 0.5], [[0.0], [0.1]])))
    io.write_json("split.json", split)
    assert run(["lift", "split.json"]) == 0
    summary = _summary(capsys)
    assert summary["accepted"] is False
    assert summary["rejection"]["atoms_after"] == 2


def test_lift_accepts_a_translation(capsys):
    states = tuple(make_atomic([0.6, 0.4], [[t], [1.0 + t]]) for t in (0.0, 0.1, 0.2))
    io.write_json("shift.json", MeasureCurve([0.0, 0.1, 0.2], states))
    assert run(["lift", "shift.json", "--field", "zero"]) == 0
    summary = _summary(capsys)
    assert summary["accepted"] is True
    assert summary["max_marginal_error"] == 0.0
    lam = io.read_object("atomics-out/lifting.json")
    assert lam.positions[:, :, 0].tolist() == [[0.0, 1.0], [0.1, 1.1], [0.2, 1.2]]


def test_runs_log_to_the_configured_directory(tmp_path, capsys):
    assert run(["-v", "counterexample", "--t", "0.5"]) == 0
    try:
        assert logging.getLogger("atomics").level == logging.DEBUG
    finally:
        logging.getLogger("atomics").setLevel(logging.NOTSET)
    assert "Initializing atomics" in (tmp_path / "logs" / "atomics.log").read_text()
    assert "Initializing atomics" in capsys.readouterr().err
