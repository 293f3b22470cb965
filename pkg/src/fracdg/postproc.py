"""Comparison quantities: averaged reference pressure, interface errors,
aperture sweeps, and field dumps.

The reference interface pressure is the aperture average of a
full-dimensional solution, taken per transversal line with the analytic
wall positions as integration endpoints and the integration split at
element boundaries so each piece sees a single polynomial.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import models
from .assembly import DGSpace, _basis_at, _ElementMaps, segment_rule
from .geometry import ApertureProfile, FractureFrame
from .mesh import FRACTURE, InterfaceGrid, Mesh

logger = logging.getLogger(__name__)

DEFAULT_N_QUAD = 16


# ---------------------------------------------------------------------------
# transversal averaging

@dataclass
class GammaAverage:
    """Aperture-averaged pressure of a full-dimensional solution,
    evaluable at tangential coordinates."""

    full: models.FullSolution
    profile: ApertureProfile
    frame: FractureFrame
    n_quad: int = DEFAULT_N_QUAD

    def __post_init__(self):
        mesh = self.full.mesh
        if mesh.mode != "full":
            raise ValueError("averaging needs a full-dimensional solution")
        lat = mesh.lattices[0]
        cols = np.flatnonzero(lat.col_tags == FRACTURE)
        if len(cols) == 0:
            raise ValueError("mesh has no fracture block")
        self._lat = lat
        self._cols = cols
        self._maps = _ElementMaps.build(mesh)

    def _row(self, t: float) -> tuple[int, float]:
        ys = self._lat.ys
        if t < ys[0] - 1e-12 or t > ys[-1] + 1e-12:
            raise ValueError(f"coordinate {t} leaves the fracture block")
        j = min(max(int(np.searchsorted(ys, t, side="right")) - 1, 0),
                self._lat.n_rows - 1)
        s = (t - ys[j]) / (ys[j + 1] - ys[j])
        return j, s

    def _line_average(self, t: float) -> float:
        lat, cols = self._lat, self._cols
        gamma0 = self.frame.offset
        d1 = float(self.profile.d1_fn(t))
        d2 = float(self.profile.d2_fn(t))
        a, b = gamma0 - d1, gamma0 + d2
        j, s = self._row(t)

        lines = np.arange(cols[0], cols[-1] + 2)
        edges = (1.0 - s) * lat.xs[j, lines] + s * lat.xs[j + 1, lines]
        width = np.diff(edges).min()
        if abs(edges[0] - a) > 0.5 * width or abs(edges[-1] - b) > 0.5 * width:
            raise ValueError("transversal segment exits the fracture block; "
                             "the mesh does not match the aperture profile")

        # diagonal crossings: each cell's lower-left to upper-right split
        diag = (1.0 - s) * lat.xs[j, lines[:-1]] + s * lat.xs[j + 1,
                                                              lines[1:]]
        breaks = np.concatenate([[a], edges[1:-1], diag, [b]])
        breaks = np.unique(np.clip(breaks, min(a, edges[0]) - 1e-12,
                                   max(b, edges[-1]) + 1e-12))
        breaks = breaks[(breaks >= a - 1e-12) & (breaks <= b + 1e-12)]
        breaks[0], breaks[-1] = a, b

        tq, wq = segment_rule(self.n_quad)
        space, coeffs = self.full.space, self.full.coefficients
        total = 0.0
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            if hi - lo < 1e-14:
                continue
            xs = lo + tq * (hi - lo)
            mid = 0.5 * (lo + hi)
            i = min(max(int(np.searchsorted(edges, mid, side="right")) - 1,
                        0), len(cols) - 1)
            col = cols[i]
            which = 1 if mid <= diag[i] else 0
            e = int(lat.elem_ids[j, col][which])
            pts = np.column_stack([xs, np.full_like(xs, t)])
            phi = _basis_at(self._maps, space, e, pts)
            vals = phi @ coeffs[space.element_dofs(e)]
            total += float(wq @ vals) * (hi - lo)
        return total / (d1 + d2)

    def __call__(self, t) -> np.ndarray:
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([self._line_average(float(ti)) for ti in tt])
        return out if np.ndim(t) else float(out[0])


def average_across_fracture(full: models.FullSolution,
                            profile: ApertureProfile | None = None,
                            frame: FractureFrame | None = None,
                            n_quad: int = DEFAULT_N_QUAD) -> GammaAverage:
    """Aperture average of the full-dimensional pressure as an interface
    field.  Profile and frame default to the solution's preset."""
    return GammaAverage(full=full,
                        profile=profile or full.preset.profile,
                        frame=frame or full.preset.frame,
                        n_quad=n_quad)


# ---------------------------------------------------------------------------
# interface error metric

def _as_gamma_callable(obj) -> Callable:
    if isinstance(obj, models.ReducedSolution):
        return obj.evaluate_interface
    if callable(obj):
        return obj
    value = float(obj)
    return lambda t: np.full_like(np.asarray(t, dtype=float), value)


def l2_error_gamma(field_a, field_b, grid: InterfaceGrid,
                   n_quad: int = DEFAULT_N_QUAD) -> float:
    """L2 norm of the difference of two interface fields over the grid.

    Fields may be callables of the tangential coordinate, reduced
    solutions, or constants.
    """
    fa, fb = _as_gamma_callable(field_a), _as_gamma_callable(field_b)
    tq, wq = segment_rule(n_quad)
    total = 0.0
    for e in range(grid.n_elements):
        t0, t1 = grid.t_breaks[e], grid.t_breaks[e + 1]
        ts = t0 + tq * (t1 - t0)
        diff = np.asarray(fa(ts), dtype=float) - np.asarray(fb(ts),
                                                            dtype=float)
        total += float(wq @ diff**2) * (t1 - t0)
    return float(np.sqrt(total))


def l2_error_bulk(solution, exact: Callable,
                  n_quad: int | None = None) -> float:
    """L2 norm of (discrete - exact) over the meshed bulk domain."""
    from .assembly import triangle_rule, tri_basis

    if isinstance(solution, models.FullSolution):
        mesh, space, coeffs = solution.mesh, solution.space, \
            solution.coefficients
    else:
        mesh, space, coeffs = solution.mesh, solution.bulk_space, \
            solution.bulk_coefficients
    maps = _ElementMaps.build(mesh)
    total = 0.0
    for e in range(mesh.n_elements):
        k = int(space.degrees[e])
        pts, w = triangle_rule(k + 2 if n_quad is None else n_quad)
        phys = maps.v0[e] + pts @ maps.jac[e].T
        phi = tri_basis(k, pts)
        vals = phi @ coeffs[space.element_dofs(e)]
        diff = vals - np.asarray(exact(phys), dtype=float)
        total += float(w @ diff**2) * abs(maps.det[e])
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# sweep tables

@dataclass(frozen=True)
class ErrorRow:
    d0: float
    variant: str
    l2_error: float
    bulk_dofs: int
    iface_dofs: int
    residual: float
    note: str = ""


@dataclass
class ErrorTable:
    """Sweep results, one row per (d0, variant)."""

    rows: list = field(default_factory=list)

    HEADER = "d0,variant,l2_error,bulk_dofs,iface_dofs,residual"

    def add(self, row: ErrorRow) -> None:
        if np.isfinite(row.l2_error) and row.l2_error < 0.0:
            raise ValueError("negative error")
        if any(r.d0 == row.d0 and r.variant == row.variant
               for r in self.rows):
            raise ValueError(f"duplicate row ({row.d0}, {row.variant})")
        self.rows.append(row)

    def get(self, d0: float, variant: str) -> ErrorRow:
        for r in self.rows:
            if r.d0 == d0 and r.variant == variant:
                return r
        raise KeyError((d0, variant))

    def errors(self, variant: str) -> np.ndarray:
        return np.array([r.l2_error for r in self.rows
                         if r.variant == variant])

    def to_csv(self) -> str:
        lines = [self.HEADER]
        for r in self.rows:
            lines.append(f"{r.d0:.17g},{r.variant},{r.l2_error:.17g},"
                         f"{r.bulk_dofs},{r.iface_dofs},{r.residual:.17g}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def aperture_sweep(preset, variants: Sequence[str], d0_list: Sequence[float],
                   h: float, *, degrees=1, mu0: float = 10.0,
                   mu0_gamma: float | None = None, xi: float | None = None,
                   n_quad: int = DEFAULT_N_QUAD, ref_h: float | None = None,
                   ref_degrees=None, ref_h_normal: float | None = None,
                   fracture_layers: int = 4, reference: str = "full",
                   ref_method: str = "direct-LU",
                   mesh_mode: str = "auto", edge_terms: str = "consistent",
                   method: str | None = None, tol: float = 1e-10,
                   max_iter: int | None = None,
                   on_solution=None) -> ErrorTable:
    """Error table over an aperture-scale sweep.

    ``preset`` is a preset name or a callable mapping d0 to a
    ProblemPreset.  For each d0 one full-dimensional reference is solved
    and averaged (``reference="full"``); all variants in that row compare
    against that same reference field.  ``reference="exact"`` uses the
    preset's closed-form interface reference instead and skips the full
    run.  Failures are recorded per row and leave the rest of the sweep
    intact.

    ``on_solution(d0, tag, solution)`` is invoked after every successful
    solve with tag "reference" for the full run and the variant name for
    reduced runs; it can dump fields or matrices without re-solving.
    """
    if callable(preset):
        make = preset
    else:
        make = lambda d0: models.preset_by_name(preset, d0=d0, xi=xi
                                                if xi is not None
                                                else 2.0 / 3.0)
    if reference not in ("full", "exact"):
        raise ValueError(f"unknown reference {reference!r}")

    table = ErrorTable()
    for d0 in d0_list:
        pset = make(d0)
        ref = None
        ref_note = ""
        if reference == "exact":
            if pset.gamma_reference is None:
                raise ValueError(f"preset {pset.name!r} has no closed-form "
                                 "interface reference")
            ref = pset.gamma_reference
            logger.info("d0=%g: closed-form interface reference", d0)
        else:
            try:
                full = models.run_full(pset, ref_h or h,
                                       ref_degrees or degrees, mu0,
                                       fracture_layers=fracture_layers,
                                       h_normal=ref_h_normal,
                                       method=ref_method, tol=tol,
                                       max_iter=max_iter)
                ref = average_across_fracture(full, n_quad=n_quad)
                logger.info("d0=%g: reference %s", d0, full.report.summary())
                if on_solution is not None:
                    on_solution(d0, "reference", full)
            except Exception as exc:
                ref_note = f"reference failed: {exc}"
                logger.error("d0=%g: %s", d0, ref_note)
        for variant in variants:
            if ref is None:
                table.add(ErrorRow(d0, str(variant), float("nan"), 0, 0,
                                   float("nan"), note=ref_note))
                continue
            try:
                sol = models.run_reduced(pset, variant, h, degrees, mu0,
                                         xi, mu0_gamma=mu0_gamma,
                                         mesh_mode=mesh_mode,
                                         edge_terms=edge_terms,
                                         method=method, tol=tol,
                                         max_iter=max_iter)
                err = l2_error_gamma(sol, ref, sol.grid, n_quad)
                table.add(ErrorRow(d0, str(variant), err,
                                   sol.bulk_space.n_dofs,
                                   sol.iface_space.n_dofs,
                                   sol.report.relative_residual))
                logger.info(
                    "d0=%g variant %s: err=%.6e wellposedness lhs=%.3g "
                    "(%s) %s", d0, variant, err, sol.wellposedness.lhs,
                    "ok" if sol.wellposedness.satisfied else "violated",
                    sol.report.summary())
                if on_solution is not None:
                    on_solution(d0, str(variant), sol)
            except Exception as exc:
                table.add(ErrorRow(d0, str(variant), float("nan"), 0, 0,
                                   float("nan"), note=str(exc)))
                logger.error("d0=%g variant %s failed: %s", d0, variant,
                             exc)
    return table


# ---------------------------------------------------------------------------
# field dumps

def _bulk_sample_points(mesh: Mesh, e: int) -> np.ndarray:
    tri = mesh.vertices[mesh.elements[e]]
    cent = tri.mean(axis=0)
    pts = [cent] + [0.5 * (v + cent) for v in tri]
    return np.array(pts)


def write_fields(solution, prefix) -> list:
    """Dump a solution as plain-text tables.

    Writes ``<prefix>.vertices.txt`` (id x y), ``<prefix>.elements.txt``
    (id v0 v1 v2 subdomain degree), ``<prefix>.coefficients.txt`` (element
    id followed by its coefficients), and ``<prefix>.samples.txt``
    (element id, x, y, value at interior points).  Reduced solutions add
    ``<prefix>.gamma.txt`` with (t, value) rows of the interface pressure.
    Returns the written paths.
    """
    prefix = str(prefix)
    if isinstance(solution, models.FullSolution):
        mesh, space, coeffs = solution.mesh, solution.space, \
            solution.coefficients
        evaluate = solution.evaluate
        reduced = None
    else:
        mesh, space, coeffs = solution.mesh, solution.bulk_space, \
            solution.bulk_coefficients
        evaluate = solution.evaluate_bulk
        reduced = solution

    paths = []

    path = prefix + ".vertices.txt"
    with open(path, "w") as fh:
        fh.write("# vertex x y\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i} {x:.17g} {y:.17g}\n")
    paths.append(path)

    path = prefix + ".elements.txt"
    with open(path, "w") as fh:
        fh.write("# element v0 v1 v2 subdomain degree\n")
        for e in range(mesh.n_elements):
            v = mesh.elements[e]
            fh.write(f"{e} {v[0]} {v[1]} {v[2]} {int(mesh.subdomain[e])} "
                     f"{int(space.degrees[e])}\n")
    paths.append(path)

    path = prefix + ".coefficients.txt"
    with open(path, "w") as fh:
        fh.write("# element coefficients...\n")
        for e in range(mesh.n_elements):
            vals = " ".join(f"{c:.17g}"
                            for c in coeffs[space.element_dofs(e)])
            fh.write(f"{e} {vals}\n")
    paths.append(path)

    path = prefix + ".samples.txt"
    with open(path, "w") as fh:
        fh.write("# element x y value\n")
        for e in range(mesh.n_elements):
            pts = _bulk_sample_points(mesh, e)
            vals = evaluate(pts)
            for (x, y), v in zip(pts, vals):
                fh.write(f"{e} {x:.17g} {y:.17g} {v:.17g}\n")
    paths.append(path)

    if reduced is not None:
        path = prefix + ".gamma.txt"
        grid = reduced.grid
        with open(path, "w") as fh:
            fh.write("# t value\n")
            for e in range(grid.n_elements):
                t0, t1 = grid.t_breaks[e], grid.t_breaks[e + 1]
                ts = t0 + (t1 - t0) * (np.arange(8) + 0.5) / 8.0
                vals = reduced.evaluate_interface(ts)
                for t, v in zip(ts, vals):
                    fh.write(f"{t:.17g} {v:.17g}\n")
        paths.append(path)

    return paths


def read_samples(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a ``.samples.txt`` dump back as (elements, points, values)."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    return data[:, 0].astype(int), data[:, 1:3], data[:, 3]


def read_gamma_curve(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``.gamma.txt`` dump back as (t, values)."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    return data[:, 0], data[:, 1]
