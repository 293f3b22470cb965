"""Interior-penalty DG assembly for the bulk and interface problems.

Bases are monomials on the reference simplex mapped affinely to each
element; quadrature is Gauss-Legendre (segments) and a conical product of
Gauss-Legendre with Gauss-Jacobi (triangles), with enough points to
integrate products of two basis gradients exactly.

Three coupled bilinear forms make up the reduced systems:

* the bulk SIPG form on the two matrix blocks (wall facets carry no bulk
  facet terms in reduced modes; the coupling form replaces them),
* the interface form for the tangential flow of ``d * p_gamma`` along the
  fracture midsurface, including its transport terms fed by the bulk wall
  traces (variants that keep aperture-gradient transport),
* the coupling form tying the wall traces to the interface pressure.

Wall traces are evaluated where the mesh mode dictates: on the walls
themselves for curved meshes (polynomial extension of the wall element at
the analytic wall points) and on the midsurface for rectified meshes.

The interface Nitsche edge terms exist in two flavours (``edge_terms``):
``"consistent"`` (default) symmetrizes the boundary-edge terms so that the
exact solution annihilates the residual; ``"printed"`` keeps a
sign-flipped symmetrizing term and drops the permeability factor from the
transport edge term, reproducing a formulation found in the literature
that is inconsistent at inflow/outflow edges of the interface.  The flag
exists for sensitivity studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .geometry import ApertureProfile, PermeabilityData
from .mesh import (
    BOUNDARY,
    FRACTURE,
    GAMMA_1,
    GAMMA_2,
    INTERIOR,
    SIDE_1,
    SIDE_2,
    InterfaceGrid,
    Mesh,
)

__all__ = [
    "DGSpace", "SparseSystem",
    "triangle_rule", "segment_rule",
    "tri_basis", "tri_basis_grad", "seg_basis", "seg_basis_deriv",
    "penalty_bulk", "dg_jump_avg",
    "interpolate_bulk", "interpolate_interface",
    "assemble_full", "assemble_reduced",
]

VARIANTS = ("I", "I-R", "II", "II-R")
MAX_DEGREE = 3


# ---------------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=None)
def segment_rule(n: int):
    """Gauss-Legendre rule with n points on [0, 1] (exact to degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(n: int):
    """Conical-product rule with n^2 points on the reference triangle
    {(x, y): x, y >= 0, x + y <= 1}, exact for total degree 2n-1."""
    u, wu = segment_rule(n)
    yj, wj = roots_jacobi(n, 1.0, 0.0)
    y = 0.5 * (yj + 1.0)
    wy = 0.25 * wj
    pts = np.empty((n * n, 2))
    w = np.empty(n * n)
    idx = 0
    for j in range(n):
        for i in range(n):
            pts[idx, 0] = u[i] * (1.0 - y[j])
            pts[idx, 1] = y[j]
            w[idx] = wu[i] * wy[j]
            idx += 1
    return pts, w


# ---------------------------------------------------------------------------
# reference bases (monomials)

@lru_cache(maxsize=None)
def tri_exponents(k: int) -> tuple:
    """Monomial exponents (a, b), total degree ascending."""
    return tuple((a, d - a) for d in range(k + 1) for a in range(d, -1, -1))


def tri_dim(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def tri_basis(k: int, pts: np.ndarray) -> np.ndarray:
    """Monomial values at reference points; shape (npts, ndof)."""
    pts = np.atleast_2d(pts)
    exps = tri_exponents(k)
    out = np.empty((len(pts), len(exps)))
    for i, (a, b) in enumerate(exps):
        out[:, i] = pts[:, 0] ** a * pts[:, 1] ** b
    return out


def tri_basis_grad(k: int, pts: np.ndarray) -> np.ndarray:
    """Reference gradients of the monomials; shape (npts, ndof, 2)."""
    pts = np.atleast_2d(pts)
    exps = tri_exponents(k)
    out = np.zeros((len(pts), len(exps), 2))
    for i, (a, b) in enumerate(exps):
        if a > 0:
            out[:, i, 0] = a * pts[:, 0] ** (a - 1) * pts[:, 1] ** b
        if b > 0:
            out[:, i, 1] = b * pts[:, 0] ** a * pts[:, 1] ** (b - 1)
    return out


def seg_basis(k: int, t: np.ndarray) -> np.ndarray:
    t = np.atleast_1d(t)
    return np.vander(t, k + 1, increasing=True)


def seg_basis_deriv(k: int, t: np.ndarray) -> np.ndarray:
    t = np.atleast_1d(t)
    out = np.zeros((len(t), k + 1))
    for a in range(1, k + 1):
        out[:, a] = a * t ** (a - 1)
    return out


# ---------------------------------------------------------------------------
# spaces

@dataclass(frozen=True)
class DGSpace:
    """Broken polynomial space with per-element degrees and dof offsets.

    ``kind`` is "bulk" (triangles) or "interface" (segments).  Bulk dofs
    are grouped by subdomain (side 1, side 2, fracture slab) in
    deterministic element order, so system matrices are reproducible.
    """

    kind: str
    degrees: np.ndarray
    offsets: np.ndarray
    n_dofs: int

    def __post_init__(self) -> None:
        if np.any(self.degrees < 1) or np.any(self.degrees > MAX_DEGREE):
            raise ValueError(f"degrees must lie in [1, {MAX_DEGREE}]")

    @property
    def n_elements(self) -> int:
        return len(self.degrees)

    def local_dim(self, e: int) -> int:
        k = int(self.degrees[e])
        return tri_dim(k) if self.kind == "bulk" else k + 1

    def element_dofs(self, e: int) -> np.ndarray:
        start = int(self.offsets[e])
        return np.arange(start, start + self.local_dim(e))

    @classmethod
    def bulk(cls, mesh: Mesh, degree: int | np.ndarray) -> "DGSpace":
        degrees = np.broadcast_to(np.asarray(degree, dtype=np.int64),
                                  (mesh.n_elements,)).copy()
        dims = np.array([tri_dim(int(k)) for k in degrees])
        group = np.argsort(np.where(mesh.subdomain == FRACTURE, 3,
                                    mesh.subdomain), kind="stable")
        offsets = np.empty(mesh.n_elements, dtype=np.int64)
        offsets[group] = np.concatenate([[0], np.cumsum(dims[group])[:-1]])
        return cls(kind="bulk", degrees=degrees, offsets=offsets,
                   n_dofs=int(dims.sum()))

    @classmethod
    def interface(cls, grid: InterfaceGrid, degree: int | np.ndarray) -> "DGSpace":
        degrees = np.broadcast_to(np.asarray(degree, dtype=np.int64),
                                  (grid.n_elements,)).copy()
        dims = degrees + 1
        offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
        return cls(kind="interface", degrees=degrees, offsets=offsets,
                   n_dofs=int(dims.sum()))


@dataclass
class _ElementMaps:
    """Affine reference-to-physical maps of all triangles of a mesh."""

    v0: np.ndarray
    jac: np.ndarray
    jac_inv: np.ndarray
    det: np.ndarray

    @classmethod
    def build(cls, mesh: Mesh) -> "_ElementMaps":
        v = mesh.vertices
        e = mesh.elements
        v0 = v[e[:, 0]]
        jac = np.stack([v[e[:, 1]] - v0, v[e[:, 2]] - v0], axis=-1)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        return cls(v0=v0, jac=jac, jac_inv=inv, det=det)

    def to_reference(self, e: int, x: np.ndarray) -> np.ndarray:
        return (x - self.v0[e]) @ self.jac_inv[e].T


def _basis_at(mesh_maps: _ElementMaps, space: DGSpace, e: int,
              x_phys: np.ndarray, grad: bool = False):
    """Element basis (and physical gradients) at physical points."""
    k = int(space.degrees[e])
    ref = mesh_maps.to_reference(e, np.atleast_2d(x_phys))
    vals = tri_basis(k, ref)
    if not grad:
        return vals
    g_ref = tri_basis_grad(k, ref)
    g_phys = g_ref @ mesh_maps.jac_inv[e]
    return vals, g_phys


# ---------------------------------------------------------------------------
# penalty, jump/average and interpolation helpers

def penalty_bulk(degrees, h_values, mu0: float, dim: int = 2) -> float:
    """Facet penalty: mu0 * max over adjacent elements of
    (k+1)(k+dim)/h.  One (degree, h) pair for boundary facets, two for
    interior ones."""
    if mu0 <= 0.0:
        raise ValueError("mu0 must be positive")
    degrees = np.atleast_1d(np.asarray(degrees))
    h_values = np.atleast_1d(np.asarray(h_values, dtype=float))
    if len(degrees) != len(h_values) or len(degrees) not in (1, 2):
        raise ValueError("need one or two (degree, h) pairs")
    if np.any(h_values <= 0.0):
        raise ValueError("nonpositive element size")
    return float(mu0 * np.max((degrees + 1) * (degrees + dim) / h_values))


def dg_jump_avg(values, normals, kind: str = "scalar"):
    """Facet jump/average of two one-sided traces.

    Scalar: jump = v1 n1 + v2 n2 (a vector), average = (v1 + v2)/2.
    Vector: jump = z1 . n1 + z2 . n2 (a scalar), average = (z1 + z2)/2.
    """
    v1 = np.asarray(values[0], dtype=float)
    v2 = np.asarray(values[1], dtype=float)
    n1 = np.asarray(normals[0], dtype=float)
    n2 = np.asarray(normals[1], dtype=float)
    if kind == "scalar":
        jump = v1[..., None] * n1 + v2[..., None] * n2
        return jump, 0.5 * (v1 + v2)
    if kind == "vector":
        if v1.shape[-1] != n1.shape[-1] or v2.shape[-1] != n2.shape[-1]:
            raise ValueError("trace and normal dimensions do not match")
        jump = np.sum(v1 * n1, axis=-1) + np.sum(v2 * n2, axis=-1)
        return jump, 0.5 * (v1 + v2)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# interpolation (local L2 projection; exact for polynomials of degree <= k)

def interpolate_bulk(mesh: Mesh, space: DGSpace, f) -> np.ndarray:
    maps = _ElementMaps.build(mesh)
    coeffs = np.zeros(space.n_dofs)
    for e in range(mesh.n_elements):
        k = int(space.degrees[e])
        pts, w = triangle_rule(k + 2)
        phi = tri_basis(k, pts)
        x = maps.v0[e] + pts @ maps.jac[e].T
        wq = w * maps.det[e]
        mass = phi.T @ (phi * wq[:, None])
        rhs = phi.T @ (np.asarray(f(x), dtype=float) * wq)
        sl = slice(space.offsets[e], space.offsets[e] + tri_dim(k))
        coeffs[sl] = np.linalg.solve(mass, rhs)
    return coeffs


def interpolate_interface(grid: InterfaceGrid, space: DGSpace, f) -> np.ndarray:
    coeffs = np.zeros(space.n_dofs)
    for e in range(grid.n_elements):
        k = int(space.degrees[e])
        t0, t1 = grid.t_breaks[e], grid.t_breaks[e + 1]
        tq, w = segment_rule(k + 2)
        t = t0 + tq * (t1 - t0)
        psi = seg_basis(k, tq)
        wq = w * (t1 - t0)
        mass = psi.T @ (psi * wq[:, None])
        rhs = psi.T @ (np.asarray(f(t), dtype=float) * wq)
        sl = slice(space.offsets[e], space.offsets[e] + k + 1)
        coeffs[sl] = np.linalg.solve(mass, rhs)
    return coeffs


# ---------------------------------------------------------------------------
# sparse system container

@dataclass
class SparseSystem:
    """Assembled linear system with its dof bookkeeping.

    ``dof_space``/``dof_element``/``dof_local`` map each global dof back
    to (space id, element, local basis index); space id 0 is bulk, 1 the
    interface."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_bulk: int
    n_iface: int
    dof_space: np.ndarray
    dof_element: np.ndarray
    dof_local: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.matrix.shape[0]

    def symmetry_defect(self) -> float:
        """max |A - A^T| / max |A|."""
        d = self.matrix - self.matrix.T
        denom = np.abs(self.matrix.data).max() if self.matrix.nnz else 1.0
        num = np.abs(d.data).max() if d.nnz else 0.0
        return float(num / denom)


def _dof_maps(spaces_dims: list[tuple[int, np.ndarray, np.ndarray]], n_total: int):
    dof_space = np.empty(n_total, dtype=np.int8)
    dof_element = np.empty(n_total, dtype=np.int64)
    dof_local = np.empty(n_total, dtype=np.int64)
    for sid, offsets, dims in spaces_dims:
        for e, (o, nd) in enumerate(zip(offsets, dims)):
            dof_space[o:o + nd] = sid
            dof_element[o:o + nd] = e
            dof_local[o:o + nd] = np.arange(nd)
    return dof_space, dof_element, dof_local


class _Accumulator:
    """COO triplet accumulator with a dense rhs."""

    def __init__(self, n: int):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs = np.zeros(n)
        self.n = n

    def add(self, rows: np.ndarray, cols: np.ndarray, block: np.ndarray) -> None:
        r, c = np.meshgrid(rows, cols, indexing="ij")
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(np.asarray(block, dtype=float).ravel())

    def matrix(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((self.n, self.n))
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)).tocsr()


# ---------------------------------------------------------------------------
# facet geometry

def _facet_geometry(mesh: Mesh, maps: _ElementMaps, f: int):
    """Vertices, length, and the unit normal pointing out of the first
    adjacent element."""
    va, vb = mesh.vertices[mesh.facets[f]]
    tang = vb - va
    length = float(np.linalg.norm(tang))
    normal = np.array([tang[1], -tang[0]]) / length
    e0 = mesh.facet_elements[f, 0]
    centroid = mesh.vertices[mesh.elements[e0]].mean(axis=0)
    if normal @ (0.5 * (va + vb) - centroid) < 0.0:
        normal = -normal
    return va, vb, length, normal


def _perm_of_element(mesh: Mesh, perm: PermeabilityData, e: int) -> np.ndarray:
    tag = int(mesh.subdomain[e])
    if tag == FRACTURE:
        return perm.k_f
    return perm.bulk(tag)


# ---------------------------------------------------------------------------
# bulk SIPG form

def _bulk_sipg(acc: _Accumulator, mesh: Mesh, space: DGSpace,
               perm: PermeabilityData, q, g, mu0: float,
               flux_classes: tuple[int, ...]) -> None:
    """Volume + facet terms of the symmetric interior penalty form.

    ``flux_classes`` lists the facet classes treated as interior flux
    facets (wall facets belong here for full-dimensional meshes only).
    Exterior-boundary facets always receive Nitsche terms with data ``g``.
    """
    maps = _ElementMaps.build(mesh)
    h_elem = mesh.element_h()

    for e in range(mesh.n_elements):
        k = int(space.degrees[e])
        K = _perm_of_element(mesh, perm, e)
        pts, w = triangle_rule(k + 2)
        wq = w * maps.det[e]
        grad = tri_basis_grad(k, pts) @ maps.jac_inv[e]
        kgrad = grad @ K.T
        block = np.einsum("qid,qjd,q->ij", grad, kgrad, wq)
        dofs = space.offsets[e] + np.arange(tri_dim(k))
        acc.add(dofs, dofs, block)
        if q is not None:
            phi = tri_basis(k, pts)
            x = maps.v0[e] + pts @ maps.jac[e].T
            acc.rhs[dofs] += phi.T @ (np.asarray(q(x), dtype=float) * wq)

    for f in range(mesh.n_facets):
        cls = int(mesh.facet_class[f])
        e0, e1 = mesh.facet_elements[f]
        va, vb, length, normal = _facet_geometry(mesh, maps, f)

        if cls == BOUNDARY:
            k = int(space.degrees[e0])
            tq, w = segment_rule(k + 2)
            x = va + np.outer(tq, vb - va)
            wq = w * length
            mu = penalty_bulk([k], [h_elem[e0]], mu0)
            phi, gphi = _basis_at(maps, space, e0, x, grad=True)
            K = _perm_of_element(mesh, perm, e0)
            kdn = gphi @ (K @ normal)
            dofs = space.offsets[e0] + np.arange(tri_dim(k))
            block = mu * phi.T @ (phi * wq[:, None]) \
                - phi.T @ (kdn * wq[:, None]) - (kdn * wq[:, None]).T @ phi
            acc.add(dofs, dofs, block)
            gv = np.asarray(g(x), dtype=float)
            acc.rhs[dofs] += mu * phi.T @ (gv * wq) - kdn.T @ (gv * wq)
            continue

        if cls not in flux_classes or e1 < 0:
            continue

        ka, kb = int(space.degrees[e0]), int(space.degrees[e1])
        tq, w = segment_rule(max(ka, kb) + 2)
        x = va + np.outer(tq, vb - va)
        wq = w * length
        mu = penalty_bulk([ka, kb], [h_elem[e0], h_elem[e1]], mu0)
        elems = (e0, e1)
        signs = (1.0, -1.0)
        phis, kdns, dof_sets = [], [], []
        for e in elems:
            phi, gphi = _basis_at(maps, space, e, x, grad=True)
            K = _perm_of_element(mesh, perm, e)
            phis.append(phi)
            kdns.append(gphi @ (K @ normal))
            dof_sets.append(space.offsets[e] + np.arange(space.local_dim(e)))
        for i in range(2):
            for j in range(2):
                block = mu * signs[i] * signs[j] * \
                    phis[i].T @ (phis[j] * wq[:, None]) \
                    - 0.5 * signs[i] * phis[i].T @ (kdns[j] * wq[:, None]) \
                    - 0.5 * signs[j] * (kdns[i] * wq[:, None]).T @ phis[j]
                acc.add(dof_sets[i], dof_sets[j], block)


# ---------------------------------------------------------------------------
# interface quadrature helpers

def _interface_rule(grid: InterfaceGrid, e: int, order_pts: int):
    t0, t1 = grid.t_breaks[e], grid.t_breaks[e + 1]
    tq, w = segment_rule(order_pts)
    return t0 + tq * (t1 - t0), w * (t1 - t0), (t0, t1)


def _wall_points(mesh: Mesh, profile: ApertureProfile, t: np.ndarray,
                 side: int) -> np.ndarray:
    """Physical evaluation points of the wall traces at parameters t."""
    gamma0 = mesh.frame.offset
    x = np.empty((len(t), 2))
    x[:, 1] = t
    if mesh.mode == "rectified":
        x[:, 0] = gamma0
    elif side == 1:
        x[:, 0] = gamma0 - np.asarray(profile.d1_fn(t), dtype=float)
    else:
        x[:, 0] = gamma0 + np.asarray(profile.d2_fn(t), dtype=float)
    return x


def _iface_local(grid: InterfaceGrid, e: int, t: np.ndarray) -> np.ndarray:
    t0, t1 = grid.t_breaks[e], grid.t_breaks[e + 1]
    return (np.atleast_1d(t) - t0) / (t1 - t0)


def _iface_penalty(space: DGSpace, lengths: np.ndarray, mu0: float,
                   edge: int) -> float:
    """Edge penalty on the interface grid, in analogy to the bulk rule
    with the intrinsic element dimension (segments: (k+1)^2 / length)."""
    m = space.n_elements
    if edge == 0:
        pairs = [(int(space.degrees[0]), lengths[0])]
    elif edge == m:
        pairs = [(int(space.degrees[m - 1]), lengths[m - 1])]
    else:
        pairs = [(int(space.degrees[edge - 1]), lengths[edge - 1]),
                 (int(space.degrees[edge]), lengths[edge])]
    return float(mu0 * max((k + 1) * (k + 1) / h for k, h in pairs))


# ---------------------------------------------------------------------------
# interface tangential-flow form (with the aperture inside the gradient)

def _gamma1_form(acc: _Accumulator, grid: InterfaceGrid, space: DGSpace,
                 off: int, profile: ApertureProfile, perm: PermeabilityData,
                 q_gamma, g_gamma, mu0: float, edge_terms: str) -> None:
    tau = grid.frame.tangents[0]
    kt = float(tau @ perm.k_gamma @ tau)
    lengths = grid.lengths

    # volume: kt * (d p)' phi' and the interface source
    for e in range(grid.n_elements):
        k = int(space.degrees[e])
        t, wq, (t0, t1) = _interface_rule(grid, e, k + 3)
        scale = 1.0 / (t1 - t0)
        psi = seg_basis(k, _iface_local(grid, e, t))
        dpsi = seg_basis_deriv(k, _iface_local(grid, e, t)) * scale
        d = np.asarray(profile.d1_fn(t), dtype=float) \
            + np.asarray(profile.d2_fn(t), dtype=float)
        dd = np.asarray(profile.dd1_fn(t), dtype=float) \
            + np.asarray(profile.dd2_fn(t), dtype=float)
        dofs = off + space.offsets[e] + np.arange(k + 1)
        flux = dd[:, None] * psi + d[:, None] * dpsi
        acc.add(dofs, dofs, kt * dpsi.T @ (flux * wq[:, None]))
        if q_gamma is not None:
            acc.rhs[dofs] += psi.T @ (np.asarray(q_gamma(t), dtype=float) * wq)

    # interior edges: penalty, consistency and symmetrization
    for edge in range(1, grid.n_elements):
        te = float(grid.t_breaks[edge])
        d = float(profile.d1_fn(te) + profile.d2_fn(te))
        dd = float(profile.dd1_fn(te) + profile.dd2_fn(te))
        mu = _iface_penalty(space, lengths, mu0, edge)
        eL, eR = edge - 1, edge
        data = []
        for e, loc in ((eL, 1.0), (eR, 0.0)):
            k = int(space.degrees[e])
            scale = 1.0 / lengths[e]
            psi = seg_basis(k, np.array([loc]))[0]
            dpsi = seg_basis_deriv(k, np.array([loc]))[0] * scale
            data.append((off + space.offsets[e] + np.arange(k + 1), psi, dpsi))
        signs = (1.0, -1.0)
        for i in range(2):
            di, pi, gi = data[i]
            for j in range(2):
                dj, pj, gj = data[j]
                block = mu * signs[i] * signs[j] * np.outer(pi, pj) \
                    - 0.5 * signs[i] * kt * np.outer(pi, dd * pj + d * gj) \
                    - 0.5 * signs[j] * kt * d * np.outer(gi, pj)
                acc.add(di, dj, block)

    # boundary edges: Nitsche terms with data g_gamma
    for edge, e, loc, nu in ((0, 0, 0.0, -1.0),
                             (grid.n_elements, grid.n_elements - 1, 1.0, 1.0)):
        te = float(grid.t_breaks[edge])
        d = float(profile.d1_fn(te) + profile.d2_fn(te))
        dd = float(profile.dd1_fn(te) + profile.dd2_fn(te))
        mu = _iface_penalty(space, lengths, mu0, edge)
        k = int(space.degrees[e])
        scale = 1.0 / lengths[e]
        psi = seg_basis(k, np.array([loc]))[0]
        dpsi = seg_basis_deriv(k, np.array([loc]))[0] * scale
        dofs = off + space.offsets[e] + np.arange(k + 1)
        sym_sign = -1.0 if edge_terms == "consistent" else 1.0
        block = mu * np.outer(psi, psi) \
            - nu * kt * np.outer(psi, dd * psi + d * dpsi) \
            + sym_sign * nu * kt * d * np.outer(dpsi, psi)
        acc.add(dofs, dofs, block)
        gval = float(g_gamma(te))
        acc.rhs[dofs] += mu * gval * psi - nu * kt * d * gval * dpsi


# ---------------------------------------------------------------------------
# transport form fed by wall traces (variants keeping grad-d transport)

def _gamma2_form(acc: _Accumulator, grid: InterfaceGrid, mesh: Mesh,
                 bulk_space: DGSpace, iface_space: DGSpace, off: int,
                 maps: _ElementMaps, profile: ApertureProfile,
                 perm: PermeabilityData, edge_terms: str) -> None:
    tau = grid.frame.tangents[0]
    kt = float(tau @ perm.k_gamma @ tau)

    def wall_trace_rows(e: int, t: np.ndarray):
        """Per-side (dofs, basis values) of the wall traces at t."""
        out = []
        for side, belem in ((1, grid.belem1[e]), (2, grid.belem2[e])):
            x = _wall_points(mesh, profile, t, side)
            phi = _basis_at(maps, bulk_space, int(belem), x)
            dofs = bulk_space.offsets[belem] + np.arange(phi.shape[1])
            out.append((dofs, phi))
        return out

    # volume: -(p1 dd1 + p2 dd2) kt psi'
    for e in range(grid.n_elements):
        kf = int(iface_space.degrees[e])
        kb = max(int(bulk_space.degrees[grid.belem1[e]]),
                 int(bulk_space.degrees[grid.belem2[e]]))
        t, wq, (t0, t1) = _interface_rule(grid, e, max(kf, kb) + 3)
        scale = 1.0 / (t1 - t0)
        dpsi = seg_basis_deriv(kf, _iface_local(grid, e, t)) * scale
        idofs = off + iface_space.offsets[e] + np.arange(kf + 1)
        dd = (np.asarray(profile.dd1_fn(t), dtype=float),
              np.asarray(profile.dd2_fn(t), dtype=float))
        for (dofs, phi), ddi in zip(wall_trace_rows(e, t), dd):
            block = -kt * dpsi.T @ (phi * (ddi * wq)[:, None])
            acc.add(idofs, dofs, block)

    # interior edges: mean wall pressure against the interface jump,
    # weighted by kt * d'
    for edge in range(1, grid.n_elements):
        te = np.array([float(grid.t_breaks[edge])])
        dd = float(profile.dd1_fn(te[0]) + profile.dd2_fn(te[0]))
        if dd == 0.0:
            continue
        # {p_b} at the edge: mean over the one-sided limits from the two
        # adjacent interface elements (their wall elements may differ)
        trace_rows = []
        for e in (edge - 1, edge):
            for dofs, phi in wall_trace_rows(e, te):
                trace_rows.append((dofs, 0.25 * phi[0]))
        for e, loc, sign in ((edge - 1, 1.0, 1.0), (edge, 0.0, -1.0)):
            kf = int(iface_space.degrees[e])
            psi = seg_basis(kf, np.array([loc]))[0]
            idofs = off + iface_space.offsets[e] + np.arange(kf + 1)
            for dofs, row in trace_rows:
                acc.add(idofs, dofs, sign * kt * dd * np.outer(psi, row))

    # boundary edges: as printed the permeability factor is absent here;
    # the consistent flavour keeps it
    kfac = kt if edge_terms == "consistent" else 1.0
    for edge, e, loc, nu in ((0, 0, 0.0, -1.0),
                             (grid.n_elements, grid.n_elements - 1, 1.0, 1.0)):
        te = np.array([float(grid.t_breaks[edge])])
        dd1 = float(profile.dd1_fn(te[0]))
        dd2 = float(profile.dd2_fn(te[0]))
        kf = int(iface_space.degrees[e])
        psi = seg_basis(kf, np.array([loc]))[0]
        idofs = off + iface_space.offsets[e] + np.arange(kf + 1)
        for (dofs, phi), ddi in zip(wall_trace_rows(e, te), (dd1, dd2)):
            acc.add(idofs, dofs, nu * kfac * ddi * np.outer(psi, phi[0]))


# ---------------------------------------------------------------------------
# coupling form (wall traces <-> interface pressure)

def _coupling_form(acc: _Accumulator, grid: InterfaceGrid, mesh: Mesh,
                   bulk_space: DGSpace, iface_space: DGSpace, off: int,
                   maps: _ElementMaps, profile: ApertureProfile,
                   perm: PermeabilityData) -> None:
    kperp = perm.k_gamma_perp

    for e in range(grid.n_elements):
        kf = int(iface_space.degrees[e])
        kb = max(int(bulk_space.degrees[grid.belem1[e]]),
                 int(bulk_space.degrees[grid.belem2[e]]))
        t, wq, _ = _interface_rule(grid, e, max(kf, kb) + 3)
        d = np.asarray(profile.d1_fn(t), dtype=float) \
            + np.asarray(profile.d2_fn(t), dtype=float)
        beta = perm.beta_gamma(d)
        psi = seg_basis(kf, _iface_local(grid, e, t))
        idofs = off + iface_space.offsets[e] + np.arange(kf + 1)

        sides = []
        for side, belem in ((1, grid.belem1[e]), (2, grid.belem2[e])):
            x = _wall_points(mesh, profile, t, side)
            phi = _basis_at(maps, bulk_space, int(belem), x)
            dofs = bulk_space.offsets[belem] + np.arange(phi.shape[1])
            sides.append((dofs, phi))

        # transversal flux: (kperp / d) [p][phi] with [p] = p2 - p1
        jump_sign = (-1.0, 1.0)
        wflux = kperp / d * wq
        for i in range(2):
            di, pi = sides[i]
            for j in range(2):
                dj, pj = sides[j]
                acc.add(di, dj, jump_sign[i] * jump_sign[j]
                        * pi.T @ (pj * wflux[:, None]))

        # closure: beta (p_gamma - {p})(phi_gamma - {phi})
        wb = beta * wq
        terms = [(idofs, psi, 1.0)] + [(d_, p_, -0.5) for d_, p_ in sides]
        for di, pi, si in terms:
            for dj, pj, sj in terms:
                acc.add(di, dj, si * sj * pi.T @ (pj * wb[:, None]))


# ---------------------------------------------------------------------------
# public assembly entry points

def assemble_full(mesh: Mesh, space: DGSpace, perm: PermeabilityData,
                  q, g, mu0: float) -> SparseSystem:
    """Assemble the SIPG system of the non-reduced model.

    Wall facets are ordinary interior facets here (permeability jumps
    across them); ``g`` is the Dirichlet datum on the outer boundary,
    imposed weakly."""
    if mesh.mode != "full":
        raise ValueError("assemble_full needs a full-mode mesh")
    acc = _Accumulator(space.n_dofs)
    _bulk_sipg(acc, mesh, space, perm, q, g, mu0,
               flux_classes=(INTERIOR, GAMMA_1, GAMMA_2))
    dims = np.array([space.local_dim(e) for e in range(space.n_elements)])
    dmaps = _dof_maps([(0, space.offsets, dims)], space.n_dofs)
    return SparseSystem(matrix=acc.matrix(), rhs=acc.rhs,
                        n_bulk=space.n_dofs, n_iface=0,
                        dof_space=dmaps[0], dof_element=dmaps[1],
                        dof_local=dmaps[2])


def _check_variant_mesh(variant: str, mesh: Mesh, profile: ApertureProfile):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if mesh.mode == "full":
        raise ValueError("reduced variants cannot use a full-dimensional mesh")
    if variant.endswith("-R"):
        # Rectified variants flatten the walls onto the midline.  With a
        # constant aperture the wall-conforming mesh carries the same model
        # (every slope term vanishes and the trace offset is exact), so it
        # is accepted as the canonical degenerate configuration.
        if mesh.mode == "curved-reduced" and not profile.is_constant:
            raise ValueError(f"variant {variant} needs a rectified mesh for "
                             "non-constant apertures")
    else:
        if mesh.mode != "curved-reduced":
            raise ValueError(f"variant {variant} evaluates traces on the "
                             "fracture walls and needs a wall-conforming "
                             f"mesh, got {mesh.mode!r}")


def assemble_reduced(mesh: Mesh, grid: InterfaceGrid, bulk_space: DGSpace,
                     iface_space: DGSpace, perm: PermeabilityData,
                     profile: ApertureProfile, q_bulk, q_gamma, g_bulk,
                     g_gamma, variant: str, mu0_bulk: float,
                     mu0_gamma: float,
                     edge_terms: str = "consistent") -> SparseSystem:
    """Assemble the coupled bulk/interface system of a reduced model.

    The system is blocked as [bulk dofs | interface dofs].  Variants I and
    I-R include the wall-trace transport form; all variants share the bulk
    SIPG form, the tangential interface form and the coupling form.  Wall
    traces are taken on the walls for curved meshes and on the midsurface
    for rectified ones.
    """
    if edge_terms not in ("consistent", "printed"):
        raise ValueError(f"unknown edge_terms {edge_terms!r}")
    _check_variant_mesh(variant, mesh, profile)

    n = bulk_space.n_dofs + iface_space.n_dofs
    off = bulk_space.n_dofs
    acc = _Accumulator(n)
    maps = _ElementMaps.build(mesh)

    _bulk_sipg(acc, mesh, bulk_space, perm, q_bulk, g_bulk, mu0_bulk,
               flux_classes=(INTERIOR,))
    _gamma1_form(acc, grid, iface_space, off, profile, perm,
                 q_gamma, g_gamma, mu0_gamma, edge_terms)
    _coupling_form(acc, grid, mesh, bulk_space, iface_space, off, maps,
                   profile, perm)
    if variant in ("I", "I-R"):
        _gamma2_form(acc, grid, mesh, bulk_space, iface_space, off, maps,
                     profile, perm, edge_terms)

    bdims = np.array([bulk_space.local_dim(e)
                      for e in range(bulk_space.n_elements)])
    idims = np.array([iface_space.local_dim(e)
                      for e in range(iface_space.n_elements)])
    dmaps = _dof_maps([(0, bulk_space.offsets, bdims),
                       (1, off + iface_space.offsets, idims)], n)
    return SparseSystem(matrix=acc.matrix(), rhs=acc.rhs,
                        n_bulk=bulk_space.n_dofs, n_iface=iface_space.n_dofs,
                        dof_space=dmaps[0], dof_element=dmaps[1],
                        dof_local=dmaps[2])
