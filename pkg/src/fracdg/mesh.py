"""Structured simplicial meshes conforming to a vertical fracture.

Bulk meshes are built from tensor-product lattices whose column lines are
stretched so that one line follows each fracture wall (piecewise-linearly,
vertex-snapped onto the analytic wall graphs).  Three modes exist:

``full``
    One connected mesh of matrix-side-1, fracture slab and matrix-side-2;
    the wall lines are ordinary interior facet lines with a permeability
    jump across them.
``curved-reduced``
    Two disconnected blocks whose inner boundaries follow the walls; the
    fracture gap stays unmeshed and is handled by interface coupling.
``rectified``
    Two disconnected blocks abutting along the fracture midsurface itself
    (wall vertices on Gamma, duplicated per side).

Row and column counts are rounded up to powers of two so that halving the
target mesh size exactly doubles every count, which keeps refinement
studies nested.  Quadrilateral cells are split along the same diagonal
everywhere; both sub-triangles keep positive area for any wall position
because the splitting diagonal always spans one lattice cell in the row
direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import ApertureProfile, FractureFrame

__all__ = [
    "INTERIOR", "BOUNDARY", "GAMMA_1", "GAMMA_2",
    "SIDE_1", "SIDE_2", "FRACTURE",
    "Mesh", "InterfaceGrid", "StructuredLattice",
    "build_bulk_mesh", "build_interface_grid", "classify_facets",
    "mesh_quality", "intersect_partitions",
]

# facet classes
INTERIOR = 0
BOUNDARY = 1
GAMMA_1 = 2
GAMMA_2 = 3

# subdomain tags
SIDE_1 = 1
SIDE_2 = 2
FRACTURE = 3

_FACET_NAMES = {INTERIOR: "interior", BOUNDARY: "exterior-boundary",
                GAMMA_1: "gamma-side-1", GAMMA_2: "gamma-side-2"}


def _pow2_count(length: float, h: float) -> int:
    """Smallest power of two n with length / n <= h (at least 1)."""
    if h <= 0.0:
        raise ValueError("h_target must be positive")
    raw = length / h
    if raw <= 1.0:
        return 1
    return 1 << int(math.ceil(math.log2(raw) - 1e-9))


@dataclass(frozen=True)
class StructuredLattice:
    """Bookkeeping of one tensor-product block of the mesh.

    ``xs[j, i]`` is the x coordinate of lattice line ``i`` at row line
    ``j``; ``vidx`` holds the matching global vertex ids, ``elem_ids[j, i]``
    the two global triangle ids of cell ``(j, i)`` (split along the
    diagonal from the cell's lower-left to upper-right corner).
    """

    ys: np.ndarray
    xs: np.ndarray
    vidx: np.ndarray
    col_tags: np.ndarray
    elem_ids: np.ndarray
    gamma1_line: int | None = None
    gamma2_line: int | None = None

    @property
    def n_rows(self) -> int:
        return len(self.ys) - 1

    @property
    def n_cols(self) -> int:
        return self.xs.shape[1] - 1

    def locate_column(self, j: int, x: float) -> int:
        """Column index of the cell in row ``j`` containing abscissa ``x``."""
        row_x = self.xs[j]
        i = int(np.searchsorted(row_x, x, side="right")) - 1
        return min(max(i, 0), self.n_cols - 1)


@dataclass(frozen=True)
class Mesh:
    """Immutable simplicial mesh with facet classification.

    ``facet_elements[f]`` lists the one or two adjacent elements
    (second entry ``-1`` on one-sided facets).  Facet classes split into
    interior, exterior boundary and the two fracture-wall families.
    """

    vertices: np.ndarray
    elements: np.ndarray
    subdomain: np.ndarray
    mode: str
    facets: np.ndarray
    facet_elements: np.ndarray
    facet_class: np.ndarray
    lattices: tuple[StructuredLattice, ...]
    frame: FractureFrame
    profile: ApertureProfile
    h_target: float
    _h_elem: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    def element_volumes(self) -> np.ndarray:
        v = self.vertices
        e = self.elements
        a = v[e[:, 1]] - v[e[:, 0]]
        b = v[e[:, 2]] - v[e[:, 0]]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def element_h(self) -> np.ndarray:
        """Per-element mesh size: the maximum edge length."""
        if self._h_elem is not None:
            return self._h_elem
        v = self.vertices
        e = self.elements
        l01 = np.linalg.norm(v[e[:, 1]] - v[e[:, 0]], axis=1)
        l12 = np.linalg.norm(v[e[:, 2]] - v[e[:, 1]], axis=1)
        l20 = np.linalg.norm(v[e[:, 0]] - v[e[:, 2]], axis=1)
        h = np.maximum(np.maximum(l01, l12), l20)
        object.__setattr__(self, "_h_elem", h)
        return h

    def facets_of_class(self, cls: int) -> np.ndarray:
        return np.nonzero(self.facet_class == cls)[0]

    def gamma_facet_intervals(self, cls: int) -> tuple[np.ndarray, np.ndarray]:
        """Gamma facets of one wall, sorted along the interface.

        Returns (facet ids, intervals (m, 2)) where the intervals are the
        tangential parameter ranges covered by each facet.
        """
        ids = self.facets_of_class(cls)
        if len(ids) == 0:
            return ids, np.zeros((0, 2))
        t = self.frame.tangential(self.vertices[self.facets[ids]])
        lo = t.min(axis=1)
        hi = t.max(axis=1)
        order = np.argsort(lo)
        return ids[order], np.column_stack([lo[order], hi[order]])

    def summary(self) -> str:
        counts = {name: int(np.sum(self.facet_class == cls))
                  for cls, name in _FACET_NAMES.items()}
        return (f"{self.mode} mesh: {self.n_vertices} vertices, "
                f"{self.n_elements} elements, facets {counts}")


def _build_block(ys: np.ndarray, xs: np.ndarray, col_tags: np.ndarray,
                 v_offset: int, e_offset: int,
                 gamma1_line: int | None, gamma2_line: int | None):
    """Triangulate one lattice block: vertices, elements, tags, lattice."""
    n_rows = len(ys) - 1
    n_lines = xs.shape[1]
    n_cols = n_lines - 1

    vidx = (v_offset + np.arange((n_rows + 1) * n_lines)).reshape(n_rows + 1, n_lines)
    verts = np.empty(((n_rows + 1) * n_lines, 2))
    verts[:, 0] = xs.ravel()
    verts[:, 1] = np.repeat(ys, n_lines)

    v00 = vidx[:-1, :-1]
    v10 = vidx[:-1, 1:]
    v01 = vidx[1:, :-1]
    v11 = vidx[1:, 1:]
    lower = np.stack([v00, v10, v11], axis=-1).reshape(-1, 3)
    upper = np.stack([v00, v11, v01], axis=-1).reshape(-1, 3)
    elems = np.empty((2 * n_rows * n_cols, 3), dtype=np.int64)
    elems[0::2] = lower
    elems[1::2] = upper

    tags = np.repeat(np.tile(col_tags, n_rows), 2).astype(np.int8)
    elem_ids = (e_offset + np.arange(2 * n_rows * n_cols)).reshape(n_rows, n_cols, 2)
    lat = StructuredLattice(ys=ys, xs=xs, vidx=vidx, col_tags=col_tags,
                            elem_ids=elem_ids,
                            gamma1_line=gamma1_line, gamma2_line=gamma2_line)
    return verts, elems, tags, lat


def _gamma_edge_set(lat: StructuredLattice, line: int) -> set[tuple[int, int]]:
    ids = lat.vidx[:, line]
    return {(min(a, b), max(a, b)) for a, b in zip(ids[:-1], ids[1:])}


def _extract_facets(elements: np.ndarray):
    """All element edges, deduplicated, with adjacency (second id -1 when
    one-sided)."""
    ne = len(elements)
    edges = np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]],
                            elements[:, [2, 0]]])
    owner = np.tile(np.arange(ne), 3)
    edges_sorted = np.sort(edges, axis=1)
    uniq, inverse, counts = np.unique(edges_sorted, axis=0,
                                      return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if counts.max() > 2:
        bad = np.nonzero(counts > 2)[0][:5]
        raise ValueError(f"facets adjacent to more than two elements: {uniq[bad].tolist()}")
    facet_elements = np.full((len(uniq), 2), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    sorted_inv = inverse[order]
    sorted_owner = owner[order]
    starts = np.searchsorted(sorted_inv, np.arange(len(uniq)))
    facet_elements[:, 0] = sorted_owner[starts]
    two = counts == 2
    facet_elements[two, 1] = sorted_owner[starts[two] + 1]
    return uniq, facet_elements


def build_bulk_mesh(domain, profile: ApertureProfile, mode: str,
                    h_target: float, frame: FractureFrame | None = None,
                    fracture_layers: int = 4,
                    h_target_normal: float | None = None) -> Mesh:
    """Mesh the bulk subdomains around (or including) the fracture.

    ``domain`` is ``((xmin, ymin), (xmax, ymax))`` (default unit square).
    ``h_target`` bounds the lattice spacing; counts round up to powers of
    two.  ``h_target_normal`` optionally loosens the spacing across the
    fracture direction (anisotropic meshes for reference solutions).
    ``fracture_layers`` sets the number of element layers across the
    fracture slab in full mode.
    """
    if frame is None:
        frame = FractureFrame.vertical_line(0.5)
    if domain is None:
        domain = ((0.0, 0.0), (1.0, 1.0))
    (xmin, ymin), (xmax, ymax) = domain
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("empty domain")
    if mode not in ("full", "curved-reduced", "rectified"):
        raise ValueError(f"unknown mesh mode {mode!r}")
    if fracture_layers < 1:
        raise ValueError("fracture_layers must be at least 1")
    gamma0 = frame.offset
    if not (xmin < gamma0 < xmax):
        raise ValueError("fracture hyperplane lies outside the domain")
    if abs(profile.t_range[0] - ymin) > 1e-12 or abs(profile.t_range[1] - ymax) > 1e-12:
        raise ValueError("aperture profile parameter range must span the domain height")

    h_n = h_target if h_target_normal is None else h_target_normal
    n_rows = _pow2_count(ymax - ymin, h_target)
    n1 = _pow2_count(gamma0 - xmin, h_n)
    n2 = _pow2_count(xmax - gamma0, h_n)
    ys = np.linspace(ymin, ymax, n_rows + 1)

    if mode == "rectified":
        w1 = np.full(n_rows + 1, gamma0)
        w2 = np.full(n_rows + 1, gamma0)
    else:
        d1 = np.asarray(profile.d1_fn(ys), dtype=float)
        d2 = np.asarray(profile.d2_fn(ys), dtype=float)
        if np.any(d1 + d2 <= 0.0):
            raise ValueError("total aperture not positive along the fracture")
        w1 = gamma0 - d1
        w2 = gamma0 + d2
        if np.any(w1 <= xmin):
            raise ValueError("fracture wall on side 1 exits the domain "
                             f"(min x = {w1.min():.6g} <= {xmin})")
        if np.any(w2 >= xmax):
            raise ValueError("fracture wall on side 2 exits the domain "
                             f"(max x = {w2.max():.6g} >= {xmax})")

    frac1 = np.linspace(0.0, 1.0, n1 + 1)
    xs1 = xmin + np.outer(w1 - xmin, frac1)
    frac2 = np.linspace(0.0, 1.0, n2 + 1)
    xs2 = w2[:, None] + np.outer(xmax - w2, frac2)

    blocks = []
    if mode == "full":
        fracf = np.linspace(0.0, 1.0, fracture_layers + 1)[1:-1]
        xsf = w1[:, None] + np.outer(w2 - w1, fracf)
        xs = np.concatenate([xs1, xsf, xs2], axis=1)
        col_tags = np.concatenate([np.full(n1, SIDE_1, dtype=np.int8),
                                   np.full(fracture_layers, FRACTURE, dtype=np.int8),
                                   np.full(n2, SIDE_2, dtype=np.int8)])
        blocks.append((ys, xs, col_tags, n1, n1 + fracture_layers))
    else:
        blocks.append((ys, xs1, np.full(n1, SIDE_1, dtype=np.int8), n1, None))
        blocks.append((ys, xs2, np.full(n2, SIDE_2, dtype=np.int8), None, 0))

    all_verts, all_elems, all_tags, lattices = [], [], [], []
    gamma1_edges: set[tuple[int, int]] = set()
    gamma2_edges: set[tuple[int, int]] = set()
    v_off = e_off = 0
    for ys_b, xs_b, tags_b, g1_line, g2_line in blocks:
        verts, elems, tags, lat = _build_block(ys_b, xs_b, tags_b, v_off, e_off,
                                               g1_line, g2_line)
        all_verts.append(verts)
        all_elems.append(elems)
        all_tags.append(tags)
        lattices.append(lat)
        if g1_line is not None:
            gamma1_edges |= _gamma_edge_set(lat, g1_line)
        if g2_line is not None:
            gamma2_edges |= _gamma_edge_set(lat, g2_line)
        v_off += len(verts)
        e_off += len(elems)

    vertices = np.concatenate(all_verts)
    elements = np.concatenate(all_elems)
    subdomain = np.concatenate(all_tags)

    facets, facet_elements = _extract_facets(elements)
    facet_class = _classify(facets, facet_elements, gamma1_edges, gamma2_edges)

    mesh = Mesh(vertices=vertices, elements=elements, subdomain=subdomain,
                mode=mode, facets=facets, facet_elements=facet_elements,
                facet_class=facet_class, lattices=tuple(lattices),
                frame=frame, profile=profile, h_target=h_target)

    vol = mesh.element_volumes()
    if np.any(vol <= 0.0):
        bad = np.nonzero(vol <= 0.0)[0]
        raise ValueError(f"inverted elements: ids {bad[:10].tolist()}"
                         f"{' ...' if len(bad) > 10 else ''}")
    return mesh


def _classify(facets: np.ndarray, facet_elements: np.ndarray,
              gamma1_edges: set, gamma2_edges: set) -> np.ndarray:
    cls = np.empty(len(facets), dtype=np.int8)
    for f, (a, b) in enumerate(facets):
        key = (int(a), int(b))
        if key in gamma1_edges:
            cls[f] = GAMMA_1
        elif key in gamma2_edges:
            cls[f] = GAMMA_2
        elif facet_elements[f, 1] >= 0:
            cls[f] = INTERIOR
        else:
            cls[f] = BOUNDARY
    return cls


def classify_facets(mesh: Mesh) -> dict:
    """Validate facet adjacency and report the class partition counts."""
    ne_per_facet = np.sum(mesh.facet_elements >= 0, axis=1)
    if np.any(ne_per_facet == 0) or np.any(ne_per_facet > 2):
        raise ValueError("facet adjacent to zero or more than two elements")
    counts = {name: int(np.sum(mesh.facet_class == cls))
              for cls, name in _FACET_NAMES.items()}
    total = sum(counts.values())
    if total != mesh.n_facets:
        raise ValueError("facet classes do not partition the facet set")
    # wall facets carry one element per side tag in reduced modes, and in
    # full mode separate the slab from the matching matrix side
    for cls, tag in ((GAMMA_1, SIDE_1), (GAMMA_2, SIDE_2)):
        for f in mesh.facets_of_class(cls):
            e0, e1 = mesh.facet_elements[f]
            tags = {int(mesh.subdomain[e0])}
            if e1 >= 0:
                tags.add(int(mesh.subdomain[e1]))
            if mesh.mode == "full":
                if tags != {tag, FRACTURE}:
                    raise ValueError(f"facet {f}: wall facet with tags {tags}")
            elif tags != {tag}:
                raise ValueError(f"facet {f}: wall facet with tags {tags}")
    return counts


def mesh_quality(mesh: Mesh) -> dict:
    """Mesh size range and the minimum interior angle (degrees)."""
    if mesh.n_elements == 0:
        raise ValueError("empty mesh")
    h = mesh.element_h()
    v = mesh.vertices
    e = mesh.elements
    min_angle = math.inf
    p0, p1, p2 = v[e[:, 0]], v[e[:, 1]], v[e[:, 2]]
    for a, b, c in ((p0, p1, p2), (p1, p2, p0), (p2, p0, p1)):
        u = b - a
        w = c - a
        cosang = np.sum(u * w, axis=1) / (np.linalg.norm(u, axis=1)
                                          * np.linalg.norm(w, axis=1))
        ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        min_angle = min(min_angle, float(ang.min()))
    return {"h_max": float(h.max()), "h_min": float(h.min()),
            "min_angle": min_angle}


@dataclass(frozen=True)
class InterfaceGrid:
    """One-dimensional grid on the fracture midsurface.

    Element k spans ``[t_breaks[k], t_breaks[k+1]]`` in the tangential
    coordinate.  ``facet1/facet2`` and ``belem1/belem2`` reference, per
    interface element, the bulk facet and bulk element on each wall whose
    projection covers it.  Interior edges sit at ``t_breaks[1:-1]``,
    boundary edges at the two ends.
    """

    t_breaks: np.ndarray
    facet1: np.ndarray
    facet2: np.ndarray
    belem1: np.ndarray
    belem2: np.ndarray
    frame: FractureFrame
    mode: str

    @property
    def n_elements(self) -> int:
        return len(self.t_breaks) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.t_breaks)

    @property
    def measure(self) -> float:
        return float(self.t_breaks[-1] - self.t_breaks[0])

    def element_of_t(self, t: float) -> int:
        k = int(np.searchsorted(self.t_breaks, t, side="right")) - 1
        return min(max(k, 0), self.n_elements - 1)


def intersect_partitions(breaks1: Sequence[float], breaks2: Sequence[float],
                         sliver_tol: float):
    """Common refinement of two interval partitions of the same range.

    Returns ``(breaks, idx1, idx2)`` where ``idx_i[k]`` is the source
    interval of partition i containing merged interval k.  Breakpoints
    closer than ``sliver_tol`` are fused so that near-empty intersections
    cannot appear as elements.
    """
    b1 = np.asarray(breaks1, dtype=float)
    b2 = np.asarray(breaks2, dtype=float)
    if len(b1) < 2 or len(b2) < 2:
        raise ValueError("partitions need at least two breakpoints")
    if (abs(b1[0] - b2[0]) > sliver_tol) or (abs(b1[-1] - b2[-1]) > sliver_tol):
        raise ValueError("interval partitions disagree about the covered range")
    merged = np.sort(np.concatenate([b1, b2]))
    keep = [merged[0]]
    for t in merged[1:]:
        if t - keep[-1] > sliver_tol:
            keep.append(t)
    breaks = np.asarray(keep)
    # snap the end breakpoints onto the exact common endpoints
    breaks[0] = 0.5 * (b1[0] + b2[0])
    breaks[-1] = 0.5 * (b1[-1] + b2[-1])
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    idx1 = np.clip(np.searchsorted(b1, mid, side="right") - 1, 0, len(b1) - 2)
    idx2 = np.clip(np.searchsorted(b2, mid, side="right") - 1, 0, len(b2) - 2)
    return breaks, idx1, idx2


def build_interface_grid(mesh: Mesh, frame: FractureFrame | None = None,
                         mode: str | None = None) -> InterfaceGrid:
    """Interface grid on Gamma from the wall facets of a two-sided mesh.

    ``mode="rectified"`` expects coinciding wall partitions and uses them
    directly; ``mode="projected"`` intersects the orthogonal projections
    of the two wall partitions (non-matching grids allowed).  By default
    the mode follows the mesh mode.
    """
    if frame is None:
        frame = mesh.frame
    if mode is None:
        if mesh.mode == "rectified":
            mode = "rectified"
        elif mesh.mode == "curved-reduced":
            mode = "projected"
        else:
            raise ValueError("full-dimensional meshes have no reduced interface")
    if mode not in ("rectified", "projected"):
        raise ValueError(f"unknown interface mode {mode!r}")

    ids1, iv1 = mesh.gamma_facet_intervals(GAMMA_1)
    ids2, iv2 = mesh.gamma_facet_intervals(GAMMA_2)
    if len(ids1) == 0 or len(ids2) == 0:
        raise ValueError("mesh has no wall facets on one of the sides")

    b1 = np.append(iv1[:, 0], iv1[-1, 1])
    b2 = np.append(iv2[:, 0], iv2[-1, 1])
    sliver = 1e-12 * max(b1[-1] - b1[0], b2[-1] - b2[0])

    if mode == "rectified":
        if len(b1) != len(b2) or not np.allclose(b1, b2, atol=sliver):
            raise ValueError("rectified interface needs matching wall partitions")
        breaks = b1
        idx1 = np.arange(len(ids1))
        idx2 = np.arange(len(ids2))
    else:
        breaks, idx1, idx2 = intersect_partitions(b1, b2, sliver)

    facet1 = ids1[idx1]
    facet2 = ids2[idx2]
    belem1 = mesh.facet_elements[facet1, 0]
    belem2 = mesh.facet_elements[facet2, 0]
    # wall facets in full mode touch two elements; keep the matrix side
    if mesh.mode == "full":
        for arr, fac in ((belem1, facet1), (belem2, facet2)):
            other = mesh.facet_elements[fac, 1]
            frac = mesh.subdomain[arr] == FRACTURE
            arr[frac] = other[frac]
    return InterfaceGrid(t_breaks=breaks, facet1=facet1, facet2=facet2,
                         belem1=belem1, belem2=belem2, frame=frame, mode=mode)
