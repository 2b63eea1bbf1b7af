"""
`atomics` command line.

Every command prints a compact JSON summary on stdout and writes its full
result, plus a ``manifest.json`` echoing the resolved configuration, into the
output directory. Exit codes: 0 success, 2 invalid input, 3 numerical failure
(including a failed `verify` sweep).
"""

import json
import logging
import math
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated

import numpy as np
import typer

try:  # typer >= 0.26 raises exceptions from its vendored copy of click
    import typer._click as click
    import typer._click.exceptions
except ImportError:
    import click

from atomics import io
from atomics.capacity import capacity_rate_audit, lipschitz_projection
from atomics.catalog import Affine, Constant, Cosine, Indicator
from atomics.counterexample import counterexample_measure, lifting_obstruction_audit, lipschitz_audit
from atomics.cylinder import FactorizedInner, GenCylinderFn, build_functional
from atomics.dynamics import evolve_ensemble, residual_table, second_moment
from atomics.errors import (
    ConfigParse,
    NumericalError,
    UnknownSubcommand,
    ValidationError,
)
from atomics.fields import build_field
from atomics.manifold import circle_heat_check, get_manifold, manifold_capacity_audit
from atomics.measures import AtomicMeasure, MeasureCurve, make_atomic
from atomics.sampling import (
    parse_base,
    parse_law,
    sample_measure,
    stream,
    verify_barycenter_identity,
)
from atomics.superposition import reconstruct, verify_lifting, weight_spectrum_audit
from atomics.transport import atomic_metric, wasserstein_inf, wasserstein_p
from utils.constants import DEFAULT_MC_SAMPLES, DEFAULT_SEED, DEFAULT_THREADS, FORMAT_VERSION, GROUPING_TOLERANCE
from utils.initializer import init
from utils.log_util import set_module_log_level
from utils.metrics import start_metrics_server

logger = logging.getLogger(__name__)

APP_NAME = "atomics"
DEFAULT_OUT = Path("atomics-out")

app = typer.Typer(name=APP_NAME, help="Atomic measures, particle flows and their liftings.",
                  no_args_is_help=True, add_completion=False, pretty_exceptions_enable=False)

_stop_metrics = threading.Event()

Seed = Annotated[int, typer.Option("--seed", envvar="ATOMICS_SEED", help="Master seed for every random stream.")]
Threads = Annotated[int, typer.Option("--threads", envvar="ATOMICS_THREADS", min=1, help="Worker thread cap.")]
Out = Annotated[Path, typer.Option("--out", envvar="ATOMICS_OUT", help="Output directory.")]


@dataclass
class ExperimentConfig:
    command: str
    seed: int | None
    out: Path
    params: dict = field(default_factory=dict)
    format_version: str = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "out": str(self.out),
                "params": io.to_jsonable(self.params), "format_version": self.format_version}


def _finish(config: ExperimentConfig, summary: dict, files: dict[str, object] | None = None,
            tables: dict[str, list[dict]] | None = None):
    written = []
    for name, obj in (files or {}).items():
        written.append(io.write_json(config.out / f"{name}.json", obj).name)
    for name, rows in (tables or {}).items():
        written.append(io.write_csv(config.out / f"{name}.csv", rows).name)
    io.write_json(config.out / "manifest.json", {"format_version": FORMAT_VERSION, **config.to_dict(),
                                                 "files": sorted(written)})
    typer.echo(json.dumps(io.to_jsonable(summary), sort_keys=True))


def _parse_p(text: str) -> float:
    try:
        p = float(text)
    except ValueError as e:
        raise ConfigParse(f"--p must be a number or 'inf', got {text!r}") from e
    return p


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigParse(f"{flag} must be comma separated numbers, got {text!r}") from e
    if not values:
        raise ConfigParse(f"{flag} is empty")
    return values


def _parse_sweep(text: str) -> list[float]:
    return _parse_floats(text, "--eps-sweep")


def _parse_field(text: str | None):
    if not text:
        return None
    text = text.strip()
    if text.startswith("{"):
        try:
            return build_field(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigParse(f"field is not valid JSON: {e}") from e
    return build_field(text)


def _read(path: Path, expected: type):
    obj = io.read_object(path)
    if not isinstance(obj, expected):
        raise ConfigParse(f"{path} holds a {type(obj).__name__}, expected {expected.__name__}")
    return obj


def _metric(name: str):
    if name == "euclidean":
        return None
    return get_manifold(name).metric


@app.callback()
def configure(
        metrics_port: Annotated[int | None, typer.Option(envvar="ATOMICS_METRICS_PORT",
                                                         help="Serve Prometheus metrics on this port.")] = None,
        verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging for the library.")] = False,
):
    init(APP_NAME)
    if verbose:
        set_module_log_level("atomics", logging.DEBUG)
    if metrics_port:
        start_metrics_server(metrics_port, APP_NAME, _stop_metrics)


@app.command()
def sample(
        law: Annotated[str, typer.Option(help="Law spec such as poisson:1 or stick_breaking:2@uniform_box:2.")],
        n: Annotated[int, typer.Option(min=1, help="Number of measures.")] = 1,
        seed: Seed = DEFAULT_SEED,
        out: Out = DEFAULT_OUT,
):
    """Draw measures from a reference law, one measure_<i>.json per draw."""
    rml = parse_law(law)
    samples = [sample_measure(rml, stream(seed, "sample", i)) for i in range(n)]
    config = ExperimentConfig("sample", seed, out, {"law": law, "n": n})
    _finish(config, {"n": n, "atoms": [mu.n_atoms for mu in samples]},
            {f"measure_{i}": mu for i, mu in enumerate(samples)})


def _plan_doc(mu: AtomicMeasure, nu: AtomicMeasure, plan) -> dict:
    triples = plan.support()
    return {"sources": [mu.locations[i].tolist() for i, _, _ in triples],
            "targets": [nu.locations[j].tolist() for _, j, _ in triples],
            "masses": [m for _, _, m in triples]}


@app.command()
def dist(
        first: Annotated[Path, typer.Argument(help="Measure JSON.")],
        second: Annotated[Path, typer.Argument(help="Measure JSON.")],
        p: Annotated[str, typer.Option(help="Exponent, a number >= 1 or 'inf'.")] = "1",
        inf: Annotated[bool, typer.Option("--inf", help="W_inf, same as --p inf.")] = False,
        atomic: Annotated[bool, typer.Option("--atomic", help="Atomic distance instead of W_p.")] = False,
        psi: Annotated[str | None, typer.Option(help="Profile of the atomic distance, tent or exp; "
                                                     "implies --atomic.")] = None,
        eps_grid: Annotated[str | None, typer.Option("--eps-grid", help="Comma separated eps in (0, 1) for "
                                                                        "the atomic distance.")] = None,
        metric: Annotated[str, typer.Option(help="euclidean, circle or sphere2.")] = "euclidean",
        out: Out = DEFAULT_OUT,
):
    """Wasserstein (or atomic) distance between two measures and an optimal plan."""
    mu, nu = _read(first, AtomicMeasure), _read(second, AtomicMeasure)
    exponent, ground = (math.inf if inf else _parse_p(p)), _metric(metric)
    atomic = atomic or psi is not None
    if eps_grid is not None and not atomic:
        raise ConfigParse("--eps-grid only applies to the atomic distance; add --atomic")
    if math.isinf(exponent):
        if atomic:
            raise ConfigParse("the atomic distance needs a finite --p")
        transport = wasserstein_inf(mu, nu, ground)
    else:
        transport = wasserstein_p(mu, nu, exponent, ground)
    summary = {"distance": transport.distance}
    doc = {"distance": transport.distance, "p": exponent, "plan": _plan_doc(mu, nu, transport.plan)}
    if atomic:
        grid = None if eps_grid is None else _parse_floats(eps_grid, "--eps-grid")
        result = atomic_metric(mu, nu, exponent, psi or "tent", grid, metric=ground)
        summary = {"distance": result.distance, "wasserstein": result.wasserstein,
                   "sup_term": result.sup_term, "eps_argmax": result.eps_argmax}
        doc.update(summary, psi=result.profile, eps_grid=result.eps_grid)
    config = ExperimentConfig("dist", None, out, {"first": str(first), "second": str(second), "p": exponent,
                                                  "atomic": atomic, "psi": psi, "eps_grid": eps_grid,
                                                  "metric": metric})
    _finish(config, summary, {"distance": doc})


@app.command()
def simulate(
        law: Annotated[str, typer.Option(help="Law of the initial measures.")],
        field_spec: Annotated[str, typer.Option("--field", help="Field name or JSON spec.")] = "zero",
        horizon: Annotated[float, typer.Option("--T", help="Time horizon.")] = 1.0,
        dt: Annotated[float, typer.Option(help="Time step.")] = 1e-2,
        n: Annotated[int, typer.Option("--n", "--members", min=1, help="Ensemble size.")] = 1,
        seed: Seed = DEFAULT_SEED,
        threads: Threads = DEFAULT_THREADS,
        out: Out = DEFAULT_OUT,
):
    """
    Flow an ensemble of sampled measures with a non-local field. Writes
    curve_<i>.json and lifting_<i>.json per member and the continuity
    equation residuals of the ensemble to residuals.csv.
    """
    b = _parse_field(field_spec)
    curves, liftings = evolve_ensemble(parse_law(law), b, n, horizon, dt, seed, threads)
    times = liftings.times
    moments = [
        {"t": float(t), "second_moment": math.fsum(second_moment(lam.marginal(k)) for lam in liftings.members) / n}
        for k, t in enumerate(times)
    ]
    residuals = residual_table(curves.members, b)
    config = ExperimentConfig("simulate", seed, out, {"law": law, "field": b.to_dict(), "T": horizon, "dt": dt,
                                                      "n": n, "threads": threads})
    files = {}
    for i, (curve, lam) in enumerate(zip(curves.members, liftings.members)):
        files[f"curve_{i}"] = curve
        files[f"lifting_{i}"] = lam
    _finish(config, {"n": n, "nodes": int(times.size), "final_second_moment": moments[-1]["second_moment"],
                     "max_residual": max(row["residual"] for row in residuals)},
            files, {"residuals": residuals, "moments": moments})


@app.command()
def lift(
        curve_path: Annotated[Path, typer.Argument(metavar="CURVE", help="Curve JSON.")],
        field_spec: Annotated[str | None, typer.Option("--field", help="Driving field for prediction.")] = None,
        p: Annotated[float, typer.Option(help="Matching cost exponent.")] = 2.0,
        tol: Annotated[float, typer.Option(help="Relative weight grouping tolerance.")] = GROUPING_TOLERANCE,
        out: Out = DEFAULT_OUT,
):
    """Reconstruct a purely atomic lifting of a sampled curve."""
    curve = _read(curve_path, MeasureCurve)
    b = _parse_field(field_spec)
    config = ExperimentConfig("lift", None, out, {"curve": str(curve_path), "field": field_spec, "p": p, "tol": tol})
    decomposition = weight_spectrum_audit(curve, tol)
    if not decomposition.accepted:
        summary = {"accepted": False, "rejection": decomposition.rejection}
        _finish(config, summary, {"lift": summary})
        return
    rec = reconstruct(curve, b, p, tol)
    report = verify_lifting(rec.lifting, curve, b, p)
    summary = {
        "accepted": True,
        "classes": [{"weight": c.weight, "size": c.size} for c in decomposition.classes],
        "total_cost": rec.total_cost,
        "ambiguous_nodes": list(rec.ambiguous_nodes),
        "max_marginal_error": report.max_marginal_error,
        "max_ode_residual": report.max_ode_residual,
    }
    _finish(config, summary, {"lift": summary, "lifting": rec.lifting})


@app.command()
def counterexample(
        t: Annotated[float | None, typer.Option(help="Time at which to emit the measure.")] = None,
        depth: Annotated[int, typer.Option(min=0, help="Branching depth.")] = 5,
        distorted: Annotated[bool, typer.Option(help="Use the (1 - t) distorted curve.")] = False,
        audit: Annotated[str | None, typer.Option(help="lipschitz or obstruction.")] = None,
        pairs: Annotated[int, typer.Option(min=1, help="Time pairs for the Lipschitz audit.")] = 1000,
        seed: Seed = DEFAULT_SEED,
        out: Out = DEFAULT_OUT,
):
    """The branching curve whose only lifting is atomless."""
    config = ExperimentConfig("counterexample", seed, out, {"t": t, "depth": depth, "distorted": distorted,
                                                            "audit": audit, "pairs": pairs})
    if audit == "lipschitz":
        report = lipschitz_audit(pairs, seed, distorted, max_depth=depth)
        _finish(config, {"max_ratio": report.max_ratio, "passed": report.passed}, {"lipschitz": report})
    elif audit == "obstruction":
        report = lifting_obstruction_audit(depth)
        summary = {"depth": report.depth, "n_curves": report.n_curves, "max_atom_mass": report.max_atom_mass,
                   "all_rejected": report.all_rejected}
        _finish(config, summary, {"obstruction": report})
    elif audit is not None:
        raise ConfigParse(f"unknown audit {audit!r}; expected lipschitz or obstruction")
    elif t is None:
        raise ConfigParse("give --t or --audit")
    else:
        mu = counterexample_measure(t, distorted)
        _finish(config, {"t": t, "atoms": mu.n_atoms}, {"measure": mu})


@app.command()
def capacity(
        base: Annotated[str, typer.Option(help="Base law, e.g. uniform_box:2.")] = "uniform_box:2",
        family: Annotated[str, typer.Option(help="log or mollified.")] = "log",
        r: Annotated[float, typer.Option(help="Capacity exponent.")] = 2.0,
        eps_sweep: Annotated[str, typer.Option(help="Comma separated eps values.")] = "1e-2,1e-3,1e-4",
        n: Annotated[int, typer.Option(min=1000, help="Monte Carlo samples per eps.")] = DEFAULT_MC_SAMPLES,
        method: Annotated[str, typer.Option(help="auto, mc, is or grid.")] = "auto",
        seed: Seed = DEFAULT_SEED,
        threads: Threads = DEFAULT_THREADS,
        out: Out = DEFAULT_OUT,
):
    """Capacity of the diagonal over an eps sweep."""
    report = capacity_rate_audit(parse_base(base), r, _parse_sweep(eps_sweep), seed, family, n, method, threads)
    config = ExperimentConfig("capacity", seed, out, {"base": base, "family": family, "r": r,
                                                      "eps_sweep": eps_sweep, "n": n, "method": method})
    rows = [{"epsilon": row.eps, "R": row.R, "value": row.value, "stderr": row.stderr, "bound": row.bound}
            for row in report.rows]
    _finish(config, {"passed": report.passed, "decreasing": report.decreasing,
                     "fitted_exponent": report.fitted_exponent},
            {"capacity": report}, {"capacity": rows})


@app.command()
def heat(
        fn: Annotated[Path, typer.Option(help="Generalized cylinder functional JSON in angle coordinates.")],
        measure: Annotated[Path, typer.Option(help="Measure on the circle (angles or embedded points).")],
        t: Annotated[float, typer.Option(help="Heat time.")] = 0.1,
        n: Annotated[int, typer.Option(min=1000, help="Monte Carlo samples.")] = 10 ** 5,
        seed: Seed = DEFAULT_SEED,
        threads: Threads = DEFAULT_THREADS,
        out: Out = DEFAULT_OUT,
):
    """Heat semigroup on the circle against its closed form."""
    spec = io.read_json(fn)
    if "format_version" in spec:
        io.check_version(spec)
    F = build_functional(spec)
    if not isinstance(F, GenCylinderFn):
        raise ConfigParse(f"{fn} is not a generalized cylinder functional")
    report = circle_heat_check(F, _read(measure, AtomicMeasure), t, n, seed, threads)
    config = ExperimentConfig("heat", seed, out, {"fn": str(fn), "measure": str(measure), "t": t, "n": n})
    _finish(config, {"mc_value": report.mc_value, "mc_se": report.mc_se, "exact": report.exact,
                     "agrees": report.agrees}, {"heat": report})


@app.command("manifold-capacity")
def manifold_capacity(
        kind: Annotated[str, typer.Option(help="sphere2 or circle.")] = "sphere2",
        r: Annotated[float, typer.Option(help="Capacity exponent.")] = 2.0,
        eps_sweep: Annotated[str, typer.Option(help="Comma separated eps values.")] = "1e-2,1e-3,1e-4",
        n: Annotated[int, typer.Option(min=1000, help="Monte Carlo samples per eps.")] = DEFAULT_MC_SAMPLES,
        method: Annotated[str, typer.Option(help="auto, mc, is or grid.")] = "auto",
        seed: Seed = DEFAULT_SEED,
        threads: Threads = DEFAULT_THREADS,
        out: Out = DEFAULT_OUT,
):
    """Capacity of the diagonal of the round circle or sphere."""
    report = manifold_capacity_audit(kind, r, _parse_sweep(eps_sweep), seed, n, method, threads)
    config = ExperimentConfig("manifold-capacity", seed, out, {"kind": kind, "r": r, "eps_sweep": eps_sweep,
                                                               "n": n, "method": method})
    rows = [{"epsilon": row.eps, "R": row.R, "value": row.value, "stderr": row.stderr, "bound": row.bound}
            for row in report.rows]
    _finish(config, {"passed": report.passed, "decreasing": report.decreasing,
                     "fitted_exponent": report.fitted_exponent, "skipped": report.skipped},
            {"manifold_capacity": report}, {"manifold_capacity": rows})


def _verification_checks(seed: int, threads: int) -> dict:
    checks = {}

    rng = stream(seed, "verify_transport")
    gaps = []
    for _ in range(50):
        mu = make_atomic(rng.dirichlet(np.ones(3)), rng.normal(size=(3, 1)))
        nu = make_atomic(rng.dirichlet(np.ones(4)), rng.normal(size=(4, 1)))
        for p in (1.0, 2.0):
            quantile = wasserstein_p(mu, nu, p).distance
            simplex = wasserstein_p(mu, nu, p, metric=lambda x, y: np.abs(x - y.T)).distance
            gaps.append(abs(quantile - simplex) / max(simplex, 1e-300))
    checks["transport"] = {"max_relative_gap": max(gaps), "passed": max(gaps) <= 1e-9}

    lip = lipschitz_audit(200, seed, max_depth=12)
    checks["counterexample_lipschitz"] = {"max_ratio": lip.max_ratio, "passed": lip.passed}
    obstruction = lifting_obstruction_audit(10)
    checks["counterexample_obstruction"] = {
        "max_atom_mass": obstruction.max_atom_mass,
        "passed": obstruction.all_rejected and obstruction.max_atom_mass == 2.0 ** -11,
    }

    px, py = lipschitz_projection(1.0, -1.0, math.sqrt(2.0) / 2.0)
    rng = stream(seed, "verify_projection")
    u, v = rng.normal(size=(2, 10 ** 4, 4))
    pu = np.hstack(lipschitz_projection(u[:, :2], u[:, 2:], 0.3))
    pv = np.hstack(lipschitz_projection(v[:, :2], v[:, 2:], 0.3))
    ratio = float(np.max(np.linalg.norm(pu - pv, axis=1) / np.linalg.norm(u - v, axis=1)))
    checks["projection"] = {"example": [px, py], "max_ratio": ratio,
                            "passed": (px, py) == (0.5, -0.5) and ratio <= 1.0 + 1e-12}

    report = verify_barycenter_identity(parse_law("poisson:1"), lambda x, y: np.cos(x[:, 0] - y[:, 0]),
                                        10 ** 4, seed, threads=threads)
    checks["barycenter"] = {"first_z": report.first_order.z, "second_z": report.second_order.z,
                            "passed": report.first_order.passed and report.second_order.passed}

    F = GenCylinderFn((FactorizedInner(Cosine(), Indicator(0.1, 1.0)),
                       FactorizedInner(Constant(1.0), Indicator(0.4, 1.0))), Affine((1.0, 0.5)))
    mu = make_atomic([0.5, 0.3, 0.2], [[0.3], [2.0], [4.0]])
    heat_report = circle_heat_check(F, mu, 0.2, 2 * 10 ** 4, seed, threads)
    checks["circle_heat"] = {"mc_value": heat_report.mc_value, "exact": heat_report.exact,
                             "passed": bool(heat_report.agrees)}

    sphere = manifold_capacity_audit("sphere2", 2.0, (1e-2, 1e-3, 1e-4), seed)
    checks["sphere_capacity"] = {"fitted_exponent": sphere.fitted_exponent,
                                 "passed": sphere.passed and sphere.decreasing}
    return checks


@app.command()
def verify(
        seed: Seed = DEFAULT_SEED,
        threads: Threads = DEFAULT_THREADS,
        out: Out = DEFAULT_OUT,
):
    """Reduced acceptance sweep; exits with 3 when a check fails."""
    checks = _verification_checks(seed, threads)
    passed = all(c["passed"] for c in checks.values())
    config = ExperimentConfig("verify", seed, out, {"threads": threads})
    _finish(config, {"passed": passed, "failed": sorted(k for k, c in checks.items() if not c["passed"])},
            {"verify": {"passed": passed, "checks": checks}})
    if not passed:
        logger.error("Verification failed: %s", ", ".join(k for k, c in checks.items() if not c["passed"]))
        raise typer.Exit(code=3)


def run(argv: list[str] | None = None) -> int:
    """Run the CLI without exiting the interpreter and return its exit code."""
    command = typer.main.get_command(app)
    try:
        rv = command.main(args=argv, prog_name=APP_NAME, standalone_mode=False)
    except click.exceptions.UsageError as e:
        message = e.format_message()
        error = UnknownSubcommand(message) if "No such command" in message else ConfigParse(message)
        logger.error("%s: %s", type(error).__name__, error)
        typer.echo(f"Error: {message}", err=True)
        return 2
    except ValidationError as e:
        logger.error("%s: %s", type(e).__name__, e)
        typer.echo(f"Error: {e}", err=True)
        return 2
    except NumericalError as e:
        logger.error("%s: %s", type(e).__name__, e)
        typer.echo(f"Error: {e}", err=True)
        return 3
    except click.exceptions.Abort:
        return 1
    return rv if isinstance(rv, int) else 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
