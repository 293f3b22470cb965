"""Fracture geometry for a single planar fracture inside a porous matrix.

The fracture midsurface is a hyperplane segment Gamma inside the domain,
described by a :class:`FractureFrame` (unit normal, tangent basis, offset).
The fracture walls are offset graphs over Gamma given by an
:class:`ApertureProfile` holding the two one-sided apertures ``d1`` and
``d2`` together with their analytic tangential gradients.  All operations
here are pure functions of immutable value objects; everything is safe to
share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "FractureFrame",
    "ApertureProfile",
    "PermeabilityData",
    "ApertureValues",
    "WellposednessReport",
    "eval_aperture",
    "interface_normals",
    "continuous_jump_avg",
    "project_to_gamma",
    "check_wellposedness",
]

_ORTHONORMAL_TOL = 1e-12


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class FractureFrame:
    """Orthonormal frame attached to the fracture hyperplane.

    ``Gamma = { x : normal . x == offset }`` intersected with the domain.
    Points on Gamma are parameterized by tangential coordinates ``t``
    (a single scalar in 2D): ``x(t) = offset * normal + t * tangent``.

    Parameters
    ----------
    normal : unit normal of the hyperplane.
    tangents : orthonormal tangent vectors completing the basis
        (one vector in 2D, stored as rows).
    offset : position of the hyperplane along its normal (length).
    """

    normal: np.ndarray
    tangents: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        n = _unit(self.normal)
        tau = np.atleast_2d(np.asarray(self.tangents, dtype=float))
        basis = np.vstack([n, tau])
        gram = basis @ basis.T
        if not np.allclose(gram, np.eye(len(basis)), atol=_ORTHONORMAL_TOL):
            raise ValueError("frame basis is not orthonormal")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "tangents", tau)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    @classmethod
    def vertical_line(cls, x_position: float = 0.5) -> "FractureFrame":
        """2D frame for a fracture along ``x1 == x_position``."""
        return cls(normal=np.array([1.0, 0.0]),
                   tangents=np.array([[0.0, 1.0]]),
                   offset=x_position)

    def point(self, t) -> np.ndarray:
        """Ambient coordinates of the point on Gamma with tangential
        coordinate(s) ``t``."""
        t = np.asarray(t, dtype=float)
        base = self.offset * self.normal
        if self.tangents.shape[0] == 1:
            return base + np.multiply.outer(t, self.tangents[0])
        return base + np.tensordot(t, self.tangents, axes=([-1], [0]))

    def eta(self, x: np.ndarray) -> np.ndarray:
        """Signed normal coordinate of ambient point(s) ``x``."""
        x = np.asarray(x, dtype=float)
        return x @ self.normal - self.offset

    def tangential(self, x: np.ndarray) -> np.ndarray:
        """Tangential coordinate(s) of ambient point(s) ``x``
        (scalar per point in 2D)."""
        x = np.asarray(x, dtype=float)
        t = x @ self.tangents.T
        return t[..., 0] if self.tangents.shape[0] == 1 else t


class ApertureValues(NamedTuple):
    d1: np.ndarray
    d2: np.ndarray
    d: np.ndarray
    grad_d1: np.ndarray
    grad_d2: np.ndarray


@dataclass(frozen=True)
class ApertureProfile:
    """One-sided apertures ``d1``, ``d2`` of the fracture as functions of
    the tangential coordinate, with analytic tangential derivatives.

    Only the total aperture ``d = d1 + d2`` must stay positive; ``d1`` or
    ``d2`` individually may take negative values.  Gradients are closures
    shipped with the profile (never finite differences), because the
    reduced formulations consume them pointwise at quadrature points.
    """

    kind: str
    d1_fn: Callable[[np.ndarray], np.ndarray]
    d2_fn: Callable[[np.ndarray], np.ndarray]
    dd1_fn: Callable[[np.ndarray], np.ndarray]
    dd2_fn: Callable[[np.ndarray], np.ndarray]
    d_min: float
    d_sup: float
    t_range: tuple[float, float] = (0.0, 1.0)
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.d_min > 0.0:
            raise ValueError(f"total aperture must stay positive, got d_min={self.d_min}")
        lo, hi = self.t_range
        if not hi > lo:
            raise ValueError("empty tangential parameter range")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @classmethod
    def constant(cls, d1: float, d2: float,
                 t_range: tuple[float, float] = (0.0, 1.0)) -> "ApertureProfile":
        d = d1 + d2
        if d <= 0.0:
            raise ValueError("constant profile needs d1 + d2 > 0")
        return cls(kind="constant",
                   d1_fn=lambda t: np.full_like(np.asarray(t, dtype=float), d1),
                   d2_fn=lambda t: np.full_like(np.asarray(t, dtype=float), d2),
                   dd1_fn=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                   dd2_fn=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                   d_min=d, d_sup=d, t_range=t_range,
                   params={"d1": d1, "d2": d2})

    @classmethod
    def sinusoidal(cls, d0: float, frequency: float = 8.0 * math.pi,
                   phase: float = 0.0, asymmetry: str = "antisymmetric",
                   t_range: tuple[float, float] = (0.0, 1.0)) -> "ApertureProfile":
        """Sinusoidal walls ``d0 * (1 + sin(frequency*t + phase)/2)``.

        ``asymmetry="antisymmetric"`` flips the sign of the oscillation on
        side 2, so the total aperture is the constant ``2*d0``;
        ``"symmetric"`` uses the same oscillation on both sides, so the
        total aperture varies between ``d0`` and ``3*d0``.
        """
        if d0 <= 0.0:
            raise ValueError("d0 must be positive")
        if asymmetry not in ("antisymmetric", "symmetric"):
            raise ValueError(f"unknown asymmetry {asymmetry!r}")
        sign = -1.0 if asymmetry == "antisymmetric" else 1.0

        def d1_fn(t):
            t = np.asarray(t, dtype=float)
            return d0 * (1.0 + 0.5 * np.sin(frequency * t + phase))

        def d2_fn(t):
            t = np.asarray(t, dtype=float)
            return d0 * (1.0 + sign * 0.5 * np.sin(frequency * t + phase))

        def dd1_fn(t):
            t = np.asarray(t, dtype=float)
            return 0.5 * d0 * frequency * np.cos(frequency * t + phase)

        def dd2_fn(t):
            t = np.asarray(t, dtype=float)
            return sign * 0.5 * d0 * frequency * np.cos(frequency * t + phase)

        if asymmetry == "antisymmetric":
            d_min = d_sup = 2.0 * d0
        else:
            d_min, d_sup = d0, 3.0 * d0
        return cls(kind="sinusoidal", d1_fn=d1_fn, d2_fn=d2_fn,
                   dd1_fn=dd1_fn, dd2_fn=dd2_fn,
                   d_min=d_min, d_sup=d_sup, t_range=t_range,
                   params={"d0": d0, "frequency": frequency, "phase": phase,
                           "asymmetry": asymmetry})

    @classmethod
    def from_callables(cls, d1_fn, d2_fn, dd1_fn, dd2_fn,
                       d_min: float, d_sup: float,
                       t_range: tuple[float, float] = (0.0, 1.0)) -> "ApertureProfile":
        """User-supplied closures; the caller must provide correct bounds
        ``d_min <= d(t) <= d_sup``."""
        return cls(kind="custom", d1_fn=d1_fn, d2_fn=d2_fn,
                   dd1_fn=dd1_fn, dd2_fn=dd2_fn,
                   d_min=d_min, d_sup=d_sup, t_range=t_range)


def _check_t(profile: ApertureProfile, t: np.ndarray) -> None:
    lo, hi = profile.t_range
    tol = 1e-12 * max(1.0, abs(hi - lo))
    if np.any(t < lo - tol) or np.any(t > hi + tol):
        raise ValueError(f"tangential coordinate outside [{lo}, {hi}]")


def eval_aperture(profile: ApertureProfile, t, frame: FractureFrame) -> ApertureValues:
    """Evaluate apertures and their ambient tangential gradients at ``t``.

    Returns arrays shaped like ``t`` (gradients get a trailing space
    dimension).  Raises if ``t`` leaves the parameter range or if the total
    aperture is not positive at a queried point.
    """
    t_arr = np.asarray(t, dtype=float)
    _check_t(profile, t_arr)
    d1 = np.asarray(profile.d1_fn(t_arr), dtype=float)
    d2 = np.asarray(profile.d2_fn(t_arr), dtype=float)
    d = d1 + d2
    if np.any(d <= 0.0):
        raise ValueError("total aperture is not positive at a queried point")
    tau = frame.tangents[0]
    g1 = np.multiply.outer(np.asarray(profile.dd1_fn(t_arr), dtype=float), tau)
    g2 = np.multiply.outer(np.asarray(profile.dd2_fn(t_arr), dtype=float), tau)
    return ApertureValues(d1=d1, d2=d2, d=d, grad_d1=g1, grad_d2=g2)


def interface_normals(profile: ApertureProfile, frame: FractureFrame, t):
    """Unit normals of the two fracture walls at tangential coordinate ``t``.

    ``n1 = (-n - grad d1) / sqrt(1 + |grad d1|^2)`` points from the fracture
    into the side-1 matrix, ``n2 = (n - grad d2) / sqrt(1 + |grad d2|^2)``
    into side 2.  The normalization is exact because the gradients are
    tangential, hence orthogonal to ``n``.
    """
    vals = eval_aperture(profile, t, frame)
    n = frame.normal
    s1 = np.sqrt(1.0 + np.sum(vals.grad_d1 ** 2, axis=-1))
    s2 = np.sqrt(1.0 + np.sum(vals.grad_d2 ** 2, axis=-1))
    n1 = (-n - vals.grad_d1) / s1[..., None]
    n2 = (n - vals.grad_d2) / s2[..., None]
    return n1, n2


def continuous_jump_avg(trace1, trace2, profile: ApertureProfile,
                        frame: FractureFrame, t, kind: str = "scalar"):
    """Jump and average of wall traces across the fracture.

    Scalar kind: ``jump = trace2 - trace1`` and the arithmetic mean.
    Vector kind (fluxes): the wall-geometry factors enter,
    ``jump = trace1 . (n + grad d1) - trace2 . (n - grad d2)`` and
    ``avg = (trace1 . (n + grad d1) + trace2 . (n - grad d2)) / 2``.
    """
    if kind == "scalar":
        t1 = np.asarray(trace1, dtype=float)
        t2 = np.asarray(trace2, dtype=float)
        return t2 - t1, 0.5 * (t1 + t2)
    if kind == "vector":
        vals = eval_aperture(profile, t, frame)
        t1 = np.asarray(trace1, dtype=float)
        t2 = np.asarray(trace2, dtype=float)
        if t1.shape[-1] != frame.dim or t2.shape[-1] != frame.dim:
            raise ValueError("vector traces must have the ambient dimension")
        w1 = frame.normal + vals.grad_d1
        w2 = frame.normal - vals.grad_d2
        a = np.sum(t1 * w1, axis=-1)
        b = np.sum(t2 * w2, axis=-1)
        return a - b, 0.5 * (a + b)
    raise ValueError(f"unknown kind {kind!r}")


def project_to_gamma(x, frame: FractureFrame) -> np.ndarray:
    """Orthogonal projection of ambient point(s) onto the hyperplane."""
    x = np.asarray(x, dtype=float)
    eta = x @ frame.normal - frame.offset
    return x - np.multiply.outer(eta, frame.normal)


def _as_tensor(K, dim: int = 2) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        return float(K) * np.eye(dim)
    if K.shape != (dim, dim):
        raise ValueError(f"permeability tensor must be scalar or {dim}x{dim}")
    return K


def _spd_bounds(K: np.ndarray, label: str) -> tuple[float, float]:
    if not np.allclose(K, K.T, atol=1e-12 * max(1.0, float(np.abs(K).max()))):
        raise ValueError(f"{label} must be symmetric")
    eig = np.linalg.eigvalsh(K)
    if eig.min() <= 0.0:
        raise ValueError(f"{label} must be positive definite")
    return float(eig.min()), float(eig.max())


@dataclass(frozen=True)
class PermeabilityData:
    """Constant permeabilities of the bulk sides and the fracture, plus
    the coupling parameter ``xi > 1/2``.

    ``k_gamma`` acts tangentially on Gamma, ``k_gamma_perp`` is the scalar
    transversal permeability.  ``k_f`` is the permeability of the meshed
    fracture slab in the non-reduced reference model (defaults to
    ``k_gamma``).
    """

    k1: np.ndarray
    k2: np.ndarray
    k_gamma: np.ndarray
    k_gamma_perp: float
    xi: float = 2.0 / 3.0
    k_f: np.ndarray | None = None
    kappa_gamma_min: float = field(init=False, default=0.0)
    kappa_gamma_max: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        dim = 2
        k1 = _as_tensor(self.k1, dim)
        k2 = _as_tensor(self.k2, dim)
        kg = _as_tensor(self.k_gamma, dim)
        _spd_bounds(k1, "k1")
        _spd_bounds(k2, "k2")
        gmin, gmax = _spd_bounds(kg, "k_gamma")
        if self.k_gamma_perp <= 0.0:
            raise ValueError("k_gamma_perp must be positive")
        if not self.xi > 0.5:
            raise ValueError(f"coupling parameter xi must exceed 1/2, got {self.xi}")
        kf = kg if self.k_f is None else _as_tensor(self.k_f, dim)
        _spd_bounds(kf, "k_f")
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "k_gamma", kg)
        object.__setattr__(self, "k_gamma_perp", float(self.k_gamma_perp))
        object.__setattr__(self, "xi", float(self.xi))
        object.__setattr__(self, "k_f", kf)
        object.__setattr__(self, "kappa_gamma_min", gmin)
        object.__setattr__(self, "kappa_gamma_max", gmax)

    @classmethod
    def from_fracture(cls, k1, k2, k_f, xi: float = 2.0 / 3.0,
                      frame: FractureFrame | None = None) -> "PermeabilityData":
        """Derive the effective tangential/transversal fracture
        permeabilities from the slab permeability ``k_f``."""
        if frame is None:
            frame = FractureFrame.vertical_line()
        kf = _as_tensor(k_f, frame.dim)
        perp = float(frame.normal @ kf @ frame.normal)
        return cls(k1=k1, k2=k2, k_gamma=kf, k_gamma_perp=perp, xi=xi, k_f=kf)

    def beta_gamma(self, d) -> np.ndarray:
        """Coupling coefficient ``4 * k_gamma_perp / ((2 xi - 1) d)``."""
        return 4.0 * self.k_gamma_perp / ((2.0 * self.xi - 1.0) * np.asarray(d, dtype=float))

    def bulk(self, side: int) -> np.ndarray:
        if side == 1:
            return self.k1
        if side == 2:
            return self.k2
        raise ValueError(f"bulk side must be 1 or 2, got {side}")


@dataclass(frozen=True)
class WellposednessReport:
    lhs: float
    satisfied: bool
    sup_grad_d: float
    sup_grad_diff: float
    samples: int


def check_wellposedness(profile: ApertureProfile, perm: PermeabilityData,
                        samples_per_unit: int = 1024) -> WellposednessReport:
    """Evaluate the coercivity bound for the coupled reduced problem.

    ``lhs = (kmax/kmin)^2 * (D / d_min)
    * ((2 xi - 1) * sup|grad d|^2 + sup|grad d1 - grad d2|^2)``
    with the fracture-permeability eigenvalue bounds ``kmin, kmax``;
    the problem is guaranteed solvable when ``lhs < 16``.  Sup-norms are
    approximated by dense sampling of the parameter range.
    """
    lo, hi = profile.t_range
    n = max(2, int(math.ceil(samples_per_unit * (hi - lo)))) + 1
    t = np.linspace(lo, hi, n)
    g1 = np.asarray(profile.dd1_fn(t), dtype=float)
    g2 = np.asarray(profile.dd2_fn(t), dtype=float)
    d = np.asarray(profile.d1_fn(t), dtype=float) + np.asarray(profile.d2_fn(t), dtype=float)
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2)) and np.all(np.isfinite(d))):
        raise ValueError("aperture fields produced non-finite samples")
    sup_grad_d = float(np.abs(g1 + g2).max())
    sup_grad_diff = float(np.abs(g1 - g2).max())
    ratio = perm.kappa_gamma_max / perm.kappa_gamma_min
    lhs = (ratio ** 2) * (profile.d_sup / profile.d_min) * (
        (2.0 * perm.xi - 1.0) * sup_grad_d ** 2 + sup_grad_diff ** 2)
    return WellposednessReport(lhs=float(lhs), satisfied=bool(lhs < 16.0),
                               sup_grad_d=sup_grad_d, sup_grad_diff=sup_grad_diff,
                               samples=n)
