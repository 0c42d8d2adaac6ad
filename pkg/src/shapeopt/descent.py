"""Gradient-descent loops with backtracking line search and quality safeguards.

One engine drives three direction choices: the restricted gradient (normal
boundary forces), the classical elasticity gradient, and the interior-masked
baseline.  Steps are accepted when they satisfy both the Armijo condition and
the cell-wise quality safeguards; the step size carries over between
iterations (one expansion, then halving).
"""
from __future__ import annotations

import csv
import dataclasses
import logging
from pathlib import Path
from time import perf_counter
from typing import Callable, Iterable

import numpy as np

from . import fem, shape
from .mesh import (
    SimplicialMesh,
    apply_deformation,
    deformation_gradients,
    min_radius_ratio,
    quality_check,
)
from .problems import ProblemData

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
LINE_SEARCH_FAILURE = "line_search_failure"
NON_DESCENT = "non_descent"

CSV_COLUMNS = ("iter", "J", "grad_energy", "alpha", "backtracks", "min_radius_ratio")


@dataclasses.dataclass(frozen=True)
class LineSearchConfig:
    """Line-search and stopping parameters shared by all descent variants.

    The iteration stops when the direction energy <E V, V> drops to
    ``eps_tol**2``.  Step-size safeguards bound the per-cell deformation:
    ``det_lo <= det(I + alpha DV) <= det_hi`` and ``||alpha DV||_F <= frob_max``.
    """

    alpha0: float = 1.0
    beta: float = 0.5
    sigma: float = 0.1
    eps_tol: float = 1e-7
    max_iterations: int = 2000
    max_backtracks: int = 60
    det_lo: float = 0.5
    det_hi: float = 2.0
    frob_max: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 < self.sigma < 0.5:
            raise ValueError(f"sigma must lie in (0, 0.5), got {self.sigma}")
        if self.alpha0 <= 0.0 or self.eps_tol <= 0.0:
            raise ValueError("alpha0 and eps_tol must be positive")


def armijo_accepts(
    j_old: float, j_new: float, directional: float, alpha: float, sigma: float
) -> bool:
    """Sufficient-decrease test: j_new <= j_old + sigma * alpha * directional."""
    return j_new <= j_old + sigma * alpha * directional


@dataclasses.dataclass(frozen=True)
class IterateRecord:
    """One outer iteration: objective, direction data, accepted step."""

    iteration: int
    objective: float
    direction_energy: float
    directional: float          # dJ applied to the step direction
    alpha: float                # accepted step size (0.0 on terminal rows)
    backtracks: int
    min_radius_ratio: float
    seconds: float
    damping: float | None = None  # Newton damping; None for first-order methods


@dataclasses.dataclass
class RunRecord:
    """Full history of one optimization run."""

    method: str
    status: str
    iterates: list[IterateRecord]

    @property
    def final(self) -> IterateRecord:
        return self.iterates[-1]

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.iterates])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.direction_energy for r in self.iterates])

    def write_csv(self, path: str | Path) -> None:
        """Write the history schema; floats use 17 significant digits.

        Wall times stay in memory (see :attr:`IterateRecord.seconds`) so that
        repeated runs of one configuration produce byte-identical files.
        """
        columns = list(CSV_COLUMNS)
        with_damping = any(r.damping is not None for r in self.iterates)
        if with_damping:
            columns.append("damping")
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(columns)
            for r in self.iterates:
                row = [
                    str(r.iteration),
                    _g17(r.objective),
                    _g17(r.direction_energy),
                    _g17(r.alpha),
                    str(r.backtracks),
                    _g17(r.min_radius_ratio),
                ]
                if with_damping:
                    row.append(_g17(r.damping if r.damping is not None else 0.0))
                writer.writerow(row)


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def load_history(path: str | Path) -> dict[str, np.ndarray]:
    """Read a history CSV back into named float arrays."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    table = np.array(rows) if rows else np.zeros((0, len(header)))
    return {name: table[:, i] for i, name in enumerate(header)}


DirectionFn = Callable[
    [SimplicialMesh, shape.ElasticityParams, fem.DualVector, shape.ShapeOperators],
    tuple[np.ndarray, float, float],
]


def _restricted_direction(mesh, params, derivative, operators):
    res = shape.restricted_gradient(mesh, params, derivative, operators)
    return res.direction, res.energy, derivative.pair(res.direction)


def _classical_direction(mesh, params, derivative, operators):
    v = shape.classical_gradient(mesh, params, derivative, operators).values
    energy = float(v.ravel() @ (operators.elasticity @ v.ravel()))
    return v, energy, derivative.pair(v)


def _ssw_direction(mesh, params, derivative, operators):
    v = shape.ssw_direction(mesh, params, derivative, operators).values
    energy = float(v.ravel() @ (operators.elasticity @ v.ravel()))
    return v, energy, derivative.pair(v)


def _descend(
    mesh: SimplicialMesh,
    data: ProblemData,
    params: shape.ElasticityParams,
    config: LineSearchConfig,
    direction_fn: DirectionFn,
    method: str,
    allow_ascent_stop: bool,
    callback: Callable | None,
) -> tuple[SimplicialMesh, RunRecord]:
    records: list[IterateRecord] = []
    alpha = config.alpha0
    status = MAX_ITERATIONS
    tol_energy = config.eps_tol**2
    for iteration in range(config.max_iterations + 1):
        start = perf_counter()
        workspace = fem.poisson_workspace(mesh)
        u = fem.solve_state(mesh, data, workspace)
        p = fem.solve_adjoint(mesh, workspace)
        j_current = fem.objective(mesh, u)
        derivative = shape.shape_derivative(mesh, data, u, p, workspace.geometry)
        operators = shape.shape_operators(mesh, params)
        direction, energy, directional = direction_fn(mesh, params, derivative, operators)
        ratio = min_radius_ratio(mesh)
        if callback is not None:
            callback(
                iteration=iteration, mesh=mesh, objective=j_current,
                energy=energy, directional=directional, derivative=derivative,
                direction=direction, operators=operators,
            )
        if energy <= tol_energy:
            records.append(IterateRecord(
                iteration, j_current, energy, directional, 0.0, 0,
                ratio, perf_counter() - start,
            ))
            status = CONVERGED
            break
        if allow_ascent_stop and directional >= 0.0:
            records.append(IterateRecord(
                iteration, j_current, energy, directional, 0.0, 0,
                ratio, perf_counter() - start,
            ))
            status = NON_DESCENT
            logger.warning("%s: non-descent direction at iteration %d "
                           "(dJ(V) = %.3e >= 0)", method, iteration, directional)
            break
        if iteration == config.max_iterations:
            records.append(IterateRecord(
                iteration, j_current, energy, directional, 0.0, 0,
                ratio, perf_counter() - start,
            ))
            break
        alpha = alpha / config.beta
        backtracks = 0
        accepted = None
        while True:
            report = quality_check(
                mesh, direction, alpha, config.det_lo, config.det_hi, config.frob_max
            )
            if report.passed:
                trial = apply_deformation(mesh, direction, alpha)
                j_trial = fem.objective(trial, fem.solve_state(trial, data))
                if armijo_accepts(j_current, j_trial, directional, alpha, config.sigma):
                    accepted = trial
                    break
            backtracks += 1
            if backtracks > config.max_backtracks:
                break
            alpha *= config.beta
        seconds = perf_counter() - start
        if accepted is None:
            records.append(IterateRecord(
                iteration, j_current, energy, directional, 0.0, backtracks,
                ratio, seconds,
            ))
            status = LINE_SEARCH_FAILURE
            logger.warning("%s: line search exhausted %d backtracks at iteration %d",
                           method, backtracks, iteration)
            break
        records.append(IterateRecord(
            iteration, j_current, energy, directional, alpha, backtracks,
            ratio, seconds,
        ))
        mesh = accepted
    record = RunRecord(method, status, records)
    logger.info("%s: %s after %d iterations (J = %.8e, energy = %.3e)",
                method, record.status, records[-1].iteration,
                records[-1].objective, records[-1].direction_energy)
    return mesh, record


def restricted_descent(
    mesh: SimplicialMesh,
    data: ProblemData,
    params: shape.ElasticityParams | None = None,
    config: LineSearchConfig | None = None,
    callback: Callable | None = None,
) -> tuple[SimplicialMesh, RunRecord]:
    """Descend along the restricted gradient until <E V, V> <= eps_tol^2.

    Returns the final mesh and the run history.  Each accepted step keeps
    every cell within the quality safeguards, so meshes stay valid for the
    whole run; the objective is non-increasing across accepted steps.
    """
    return _descend(
        mesh, data, params or shape.ElasticityParams(), config or LineSearchConfig(),
        _restricted_direction, "restricted", allow_ascent_stop=False, callback=callback,
    )


def classical_descent(
    mesh: SimplicialMesh,
    data: ProblemData,
    params: shape.ElasticityParams | None = None,
    config: LineSearchConfig | None = None,
    callback: Callable | None = None,
) -> tuple[SimplicialMesh, RunRecord]:
    """Descend along the unrestricted elasticity gradient (baseline)."""
    return _descend(
        mesh, data, params or shape.ElasticityParams(), config or LineSearchConfig(),
        _classical_direction, "classical", allow_ascent_stop=False, callback=callback,
    )


def ssw_descent(
    mesh: SimplicialMesh,
    data: ProblemData,
    params: shape.ElasticityParams | None = None,
    config: LineSearchConfig | None = None,
    callback: Callable | None = None,
) -> tuple[SimplicialMesh, RunRecord]:
    """Descend along the interior-masked baseline direction.

    The masked direction need not be a descent direction; if dJ(V) >= 0 the
    run stops with status ``non_descent`` and the mesh is returned as is.
    """
    return _descend(
        mesh, data, params or shape.ElasticityParams(), config or LineSearchConfig(),
        _ssw_direction, "ssw", allow_ascent_stop=True, callback=callback,
    )


# ----------------------------------------------------------------------------
# spurious single-vertex deformation


@dataclasses.dataclass(frozen=True)
class SweepRecord:
    """Objective and worst cell determinant along a one-parameter deformation."""

    alphas: np.ndarray
    objectives: np.ndarray       # NaN where the mesh is degenerate
    min_determinants: np.ndarray


def collapse_direction(
    mesh: SimplicialMesh,
    data: ProblemData,
    collapse_alpha: float = 0.1,
    probe_alphas: Iterable[float] | None = None,
) -> tuple[np.ndarray, int]:
    """Single-vertex deformation that decreases J yet collapses a cell.

    Scans boundary vertices; for each incident cell the candidate field moves
    only that vertex along the altitude towards the opposite edge/face,
    scaled so the cell volume vanishes exactly at ``collapse_alpha``.  Returns
    the first candidate whose objective is strictly decreasing at the probe
    steps while no other cell degenerates earlier.  Demonstrates that descent
    directions alone do not protect mesh validity.
    """
    if probe_alphas is None:
        probe_alphas = np.linspace(0.0, collapse_alpha, 11)[1:-1]
    probe_alphas = np.asarray(list(probe_alphas))
    j0 = fem.objective(mesh, fem.solve_state(mesh, data))
    for vertex in mesh.boundary_vertices:
        incident = np.flatnonzero(np.any(mesh.cells == vertex, axis=1))
        for cell in incident:
            field = np.zeros_like(mesh.vertices)
            altitude = _altitude_vector(mesh, int(cell), int(vertex))
            field[vertex] = altitude / collapse_alpha
            dets = 1.0 + collapse_alpha * _det_rates(mesh, field)
            others = np.delete(dets, cell)
            if others.size and others.min() <= 1e-9:
                continue  # some other cell collapses first
            objectives = [j0]
            good = True
            for alpha in probe_alphas:
                trial = apply_deformation(mesh, field, float(alpha))
                objectives.append(fem.objective(trial, fem.solve_state(trial, data)))
                if objectives[-1] >= objectives[-2]:
                    good = False
                    break
            if good:
                logger.info("collapse direction at boundary vertex %d, cell %d",
                            vertex, cell)
                return field, int(vertex)
    raise RuntimeError("no strictly decreasing collapse direction found")


def _det_rates(mesh: SimplicialMesh, field: np.ndarray) -> np.ndarray:
    """Per-cell d/dalpha of det(I + alpha DV); exact since one moved vertex makes DV rank one."""
    dv = deformation_gradients(mesh, field)
    return np.trace(dv, axis1=1, axis2=2)


def _altitude_vector(mesh: SimplicialMesh, cell: int, vertex: int) -> np.ndarray:
    """Vector from ``vertex`` to the foot of its altitude in ``cell``."""
    nodes = list(mesh.cells[cell])
    others = [n for n in nodes if n != vertex]
    x = mesh.vertices[vertex]
    base = mesh.vertices[others[0]]
    if mesh.dim == 2:
        tangent = mesh.vertices[others[1]] - base
        tangent = tangent / np.linalg.norm(tangent)
        rel = x - base
        return (base + tangent * (rel @ tangent)) - x
    t1 = mesh.vertices[others[1]] - base
    t2 = mesh.vertices[others[2]] - base
    normal = np.cross(t1, t2)
    normal = normal / np.linalg.norm(normal)
    return -normal * ((x - base) @ normal)


def spurious_sweep(
    mesh: SimplicialMesh,
    data: ProblemData,
    field: np.ndarray,
    alphas: Iterable[float],
) -> SweepRecord:
    """Evaluate J and the worst cell determinant along x + alpha * field.

    Stops at the first degenerate configuration (min determinant <= 1e-12);
    there the objective is recorded as NaN since the state problem has no
    valid mesh.  Degeneracy is data here, not an error.
    """
    out_alpha: list[float] = []
    out_j: list[float] = []
    out_det: list[float] = []
    dv = deformation_gradients(mesh, field)
    eye = np.eye(mesh.dim)
    for alpha in alphas:
        dets = np.linalg.det(eye + float(alpha) * dv)
        mind = float(dets.min())
        out_alpha.append(float(alpha))
        out_det.append(mind)
        if mind <= 1e-12:
            out_j.append(float("nan"))
            logger.info("sweep hit degenerate mesh at alpha = %g (min det %.3e)",
                        alpha, mind)
            break
        trial = apply_deformation(mesh, field, float(alpha))
        out_j.append(fem.objective(trial, fem.solve_state(trial, data)))
    return SweepRecord(np.array(out_alpha), np.array(out_j), np.array(out_det))
