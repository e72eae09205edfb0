"""One complete run: path, flow, inverse, fluid solve, diagnostics, and artifact emission."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import RunConfig
from .diagnostics import T_SPLINE, DiagnosticsReport, diagnose, weak_basis
from .flow import SolenoidalFieldSet, integrate_flow, invert_flow
from .io import ensure_dir, write_csv, write_field, write_json
from .noise import WienerPath, sample_path
from .solver import SolverOptions, Trajectory, regularize_initial_data, solve
from .torus_field import ScalarField, TorusGrid, VectorField


class StageError(RuntimeError):
    """A run stage failed; carries the stage tag and time index (if any)."""

    def __init__(self, stage: str, index: int | None, cause: BaseException):
        where = f" at step {index}" if index is not None else ""
        super().__init__(f"{stage} failed{where}: {cause}")
        self.stage = stage
        self.index = index
        self.cause = cause

    @property
    def numerical(self) -> bool:
        return isinstance(self.cause, (ArithmeticError, np.linalg.LinAlgError))


@dataclass
class RunResult:
    config: RunConfig
    path: WienerPath
    trajectory: Trajectory
    report: DiagnosticsReport


def field_from_modes(grid: TorusGrid, spec: dict) -> np.ndarray:
    """``mean + sum a cos(k.x) + b sin(k.x)`` sampled on the grid."""
    out = np.full(grid.shape, float(spec.get("mean", 0.0)))
    for mode in spec.get("modes", ()):
        phase = np.tensordot(np.asarray(mode["k"], dtype=float), grid.coords, axes=1)
        out += float(mode.get("cos", 0.0)) * np.cos(phase) + float(mode.get("sin", 0.0)) * np.sin(phase)
    return out


def initial_fields(config: RunConfig, grid: TorusGrid):
    ini = config["initial"]
    rho = ScalarField(grid, field_from_modes(grid, ini["density"]))
    q = VectorField(grid, np.stack([field_from_modes(grid, c) for c in ini["momentum"]]))
    return rho, q


def run(config: RunConfig, progress=None) -> RunResult:
    """Execute every stage; failures raise ``StageError`` tagged with the stage."""
    grid = TorusGrid(config["grid"]["dim"], config["grid"]["resolution"])
    n, sol = config["noise"], config["solver"]
    params = config.params
    try:
        path = sample_path(n["K"], n["T"], n["steps"], n["seed"])
        Q = SolenoidalFieldSet.from_stream_functions(grid, n["stream_functions"])
    except (ValueError, ArithmeticError) as exc:
        raise StageError("noise", None, exc) from exc
    try:
        flow = integrate_flow(Q, path, interp=sol["interp"], safety=sol["dt_safety"])
    except ArithmeticError as exc:
        raise StageError("flow", getattr(exc, "step", None), exc) from exc
    try:
        flow = invert_flow(flow)
    except ArithmeticError as exc:
        raise StageError("inverse", None, exc) from exc
    rho, q = initial_fields(config, grid)
    try:
        state0 = regularize_initial_data(rho, q, params, config["initial"]["floor_lift"])
    except ValueError as exc:
        raise StageError("initial", 0, exc) from exc
    done = [0]

    def tick(s, total):
        done[0] = s
        if progress is not None:
            progress(s, total)

    try:
        traj = solve(state0, flow, params, SolverOptions(dealias=sol["dealias"]), progress=tick)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError("solve", done[0], exc) from exc
    d = config["diagnostics"]
    try:
        report = diagnose(traj, alpha=d["alpha"], kappa=d["kappa"], renorm_k=d["renorm_k"])
    except (ArithmeticError, ValueError) as exc:
        raise StageError("diagnostics", None, exc) from exc
    return RunResult(config, path, traj, report)


def conventions(config: RunConfig, grid: TorusGrid | None = None) -> dict:
    """Every pinned numerical convention, recorded with each run."""
    grid = grid or TorusGrid(config["grid"]["dim"], config["grid"]["resolution"])
    return {
        "T_spline_coefficients": list(T_SPLINE),
        "T_spline_variable": "s = z - 1 on [1, 3]",
        "test_basis": [name for name, _ in weak_basis(grid)],
        "interp": config["solver"]["interp"],
        "mollifier": "gaussian multiplier exp(-l^2 |k|^2 / 2)",
        "flow_scheme": "stratonovich heun",
        "coefficients_frozen_at": "left node of each step",
        "time_partition": "greedy, closed subintervals, max-abs matrix entry",
        "holder_alpha": config["diagnostics"]["alpha"],
        "ito_sums": "left point",
        "stratonovich_sums": "trapezoid",
    }


def emit(result: RunResult | None, directory, config: RunConfig) -> list[str]:
    """Write snapshots, CSV series and the JSON summary; returns written file names."""
    out = ensure_dir(directory)
    summary = {
        "config": config.data,
        "version": f"transport_ns {__version__}",
        "seed": config.seed,
        "conventions": conventions(config),
    }
    written = []
    if result is not None and result.trajectory.states:
        traj, rep = result.trajectory, result.report
        cadence = config["output"]["cadence"]
        fields = ensure_dir(out / "fields")
        nodes = sorted(set(range(0, len(traj.states), cadence)) | {len(traj.states) - 1})
        for s in nodes:
            st = traj.states[s]
            for name, f in (("eta", st.eta), ("v", st.v)):
                fname = f"fields/{name}_{s:06d}.tnsf"
                write_field(fields / f"{name}_{s:06d}.tnsf", f)
                written.append(fname)
        e = rep.energy
        write_csv(out / "nodes.csv", ["s", "t", "energy", "mass", "artificial_share"],
                  [[s, st.t, e.energy[s], st.mass(), e.artificial_share[s]]
                   for s, st in enumerate(traj.states)])
        write_csv(out / "steps.csv",
                  ["s", "t", "energy_residual", "viscous_dissipation", "artificial_dissipation",
                   "substeps", "cg_iterations"],
                  [[s, traj.states[s].t, e.residual[s], e.viscous[s], e.artificial[s],
                    info.substeps, info.cg_iterations] for s, info in enumerate(traj.info)])
        result.path.to_csv(out / "path.csv")
        written += ["nodes.csv", "steps.csv", "path.csv"]
        summary["diagnostics"] = rep.summary()
        summary["steps"] = len(traj.info)
    write_json(out / "summary.json", summary)
    written.append("summary.json")
    return written
