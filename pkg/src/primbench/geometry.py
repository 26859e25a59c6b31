"""Analytic representations of the five simple primitives.

Parametric forms use the storage layouts below (``u``, ``v`` are the surface
parameters, each letter a 3-vector)::

    Plane     a*u + b*v + c                                              [a b c]
    Cylinder  a*cos(u) + b*sin(u) + c*v + d                              [a b c d]
    Cone      a*cos(u) + b*sin(u) + c*v*cos(u) + d*v*sin(u) + e*v + f    [a b c d e f]
    Sphere    (a*cos(u) + b*sin(u))*cos(v) + c*sin(v) + d                [a b c d]
    Torus     a*cos(u) + b*sin(u) + (c*cos(u) + d*sin(u))*cos(v)
              + e*sin(v) + f                                             [a b c d e f]

Implicit forms are polynomial coefficient vectors:

* plane ``a x + b y + c z + d`` -> ``[a b c d]``
* quadrics (cylinder, cone, sphere)
  ``a x^2 + b y^2 + c z^2 + 2(d xy + e xz + f yz) + 2(g x + h y + i z) + l``
  -> ``[a b c d e f g h i l]``
* torus: the 35 coefficients of a degree-4 polynomial, monomials ``x^i y^j z^k``
  ordered by exponent triple ``(i, j, k)`` in descending lexicographic order
  (``x^4`` first, constant term last).

Points are plain ``numpy`` arrays of shape ``(3,)`` or ``(n, 3)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]

ZERO_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate or malformed primitives and inputs."""


class PrimitiveKind(enum.Enum):
    PLANE = "Plane"
    CYLINDER = "Cylinder"
    CONE = "Cone"
    SPHERE = "Sphere"
    TORUS = "Torus"

    @property
    def order(self) -> int:
        """Position in the family order used for tie-breaks."""
        return _KIND_ORDER[self]

    @property
    def n_params(self) -> int:
        return PARAM_LENGTHS[self]

    @property
    def n_coeffs(self) -> int:
        return COEFF_LENGTHS[self]

    @classmethod
    def parse(cls, token: str) -> "PrimitiveKind":
        try:
            return cls(token.strip())
        except ValueError:
            raise GeometryError(f"unknown primitive kind {token!r}") from None


KINDS = tuple(PrimitiveKind)
_KIND_ORDER = {k: i for i, k in enumerate(KINDS)}

PARAM_LENGTHS = {
    PrimitiveKind.PLANE: 9,
    PrimitiveKind.CYLINDER: 12,
    PrimitiveKind.CONE: 18,
    PrimitiveKind.SPHERE: 12,
    PrimitiveKind.TORUS: 18,
}

TORUS_MONOMIALS: tuple[tuple[int, int, int], ...] = tuple(
    sorted(
        ((i, j, k) for i, j, k in product(range(5), repeat=3) if i + j + k <= 4),
        reverse=True,
    )
)

_PLANE_MONOMIALS = ((1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0))
_QUADRIC_MONOMIALS = (
    (2, 0, 0), (0, 2, 0), (0, 0, 2),
    (1, 1, 0), (1, 0, 1), (0, 1, 1),
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (0, 0, 0),
)
_QUADRIC_WEIGHTS = (1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 1.0)

_MONOMIALS = {
    PrimitiveKind.PLANE: (np.array(_PLANE_MONOMIALS), np.ones(4)),
    PrimitiveKind.CYLINDER: (np.array(_QUADRIC_MONOMIALS), np.array(_QUADRIC_WEIGHTS)),
    PrimitiveKind.CONE: (np.array(_QUADRIC_MONOMIALS), np.array(_QUADRIC_WEIGHTS)),
    PrimitiveKind.SPHERE: (np.array(_QUADRIC_MONOMIALS), np.array(_QUADRIC_WEIGHTS)),
    PrimitiveKind.TORUS: (np.array(TORUS_MONOMIALS), np.ones(len(TORUS_MONOMIALS))),
}

COEFF_LENGTHS = {k: len(m[0]) for k, m in _MONOMIALS.items()}

# Kinds whose ``u`` (and for torus also ``v``) parameter is an angle.
_PERIODIC_U = {PrimitiveKind.CYLINDER, PrimitiveKind.CONE, PrimitiveKind.SPHERE, PrimitiveKind.TORUS}


# ---------------------------------------------------------------------------
# Decoded geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Shape:
    """Geometric description decoded from a parametric vector.

    ``center`` is the plane origin, the cylinder axis point, the cone apex, the
    sphere center or the torus center. ``axis`` is the plane normal or the
    rotation axis (unit length; ``None`` for spheres). ``radius`` is the
    cylinder/sphere radius or the torus major radius; ``minor_radius`` is the
    torus tube radius; ``half_angle`` the cone half-angle in radians.
    """

    kind: PrimitiveKind
    center: FloatArray
    axis: FloatArray | None = None
    radius: float = 0.0
    minor_radius: float = 0.0
    half_angle: float = 0.0


def _vecs(params: FloatArray) -> list[FloatArray]:
    return [params[i : i + 3] for i in range(0, len(params), 3)]


def _close(x: float, y: float, scale: float, rtol: float = 1e-6) -> bool:
    return abs(x - y) <= rtol * max(scale, 1e-300)


def _decode(kind: PrimitiveKind, params: FloatArray) -> Shape:
    """Validate well-formedness and decode; raises :class:`GeometryError`."""
    vs = _vecs(params)
    if kind is PrimitiveKind.PLANE:
        a, b, c = vs
        n = np.cross(a, b)
        nn = np.linalg.norm(n)
        if nn <= 1e-9 * np.linalg.norm(a) * np.linalg.norm(b) or nn == 0.0:
            raise GeometryError("plane directions are linearly dependent")
        return Shape(kind, c.copy(), n / nn)

    if kind is PrimitiveKind.CYLINDER:
        a, b, c, d = vs
        r = np.linalg.norm(a)
        cn = np.linalg.norm(c)
        if r == 0.0 or cn == 0.0:
            raise GeometryError("cylinder has zero radius or zero axis")
        scale = r * r
        if not _close(np.linalg.norm(b), r, r) or not _close(a @ b, 0.0, scale):
            raise GeometryError("cylinder radial vectors must be orthogonal with equal norm")
        if not _close(a @ c, 0.0, r * cn) or not _close(b @ c, 0.0, r * cn):
            raise GeometryError("cylinder axis must be orthogonal to the radial vectors")
        return Shape(kind, d.copy(), c / cn, radius=float(r))

    if kind is PrimitiveKind.SPHERE:
        a, b, c, d = vs
        r = np.linalg.norm(a)
        if r == 0.0:
            raise GeometryError("sphere has zero radius")
        scale = r * r
        for x in (b, c):
            if not _close(np.linalg.norm(x), r, r):
                raise GeometryError("sphere frame vectors must have equal norm")
        if not (_close(a @ b, 0, scale) and _close(a @ c, 0, scale) and _close(b @ c, 0, scale)):
            raise GeometryError("sphere frame vectors must be mutually orthogonal")
        return Shape(kind, d.copy(), None, radius=float(r))

    if kind is PrimitiveKind.TORUS:
        a, b, c, d, e, f = vs
        big = np.linalg.norm(a)
        small = np.linalg.norm(e)
        if small == 0.0 or big == 0.0:
            raise GeometryError("torus radii must be positive")
        if not _close(np.linalg.norm(b), big, big) or not _close(a @ b, 0, big * big):
            raise GeometryError("torus major vectors must be orthogonal with equal norm")
        for x in (c, d):
            if not _close(np.linalg.norm(x), small, small):
                raise GeometryError("torus minor vectors must have equal norm")
        ratio = (c @ a) / (big * big)
        if not (np.allclose(c, ratio * a, atol=1e-6 * small) and np.allclose(d, ratio * b, atol=1e-6 * small)):
            raise GeometryError("torus minor vectors must be parallel to the major vectors")
        if not (_close(e @ a, 0, big * small) and _close(e @ b, 0, big * small)):
            raise GeometryError("torus axis vector must be orthogonal to the major vectors")
        if big < small * (1 - 1e-9):
            raise GeometryError("torus major radius must be at least the minor radius")
        return Shape(kind, f.copy(), e / small, radius=float(big), minor_radius=float(small))

    # Cone
    a, b, c, d, e, f = vs
    r0 = np.linalg.norm(a)
    k = np.linalg.norm(c)
    en = np.linalg.norm(e)
    if k == 0.0 or en == 0.0:
        raise GeometryError("cone needs a nonzero slope and axis vector")
    if not _close(np.linalg.norm(d), k, k) or not _close(c @ d, 0, k * k):
        raise GeometryError("cone slope vectors must be orthogonal with equal norm")
    for x in (a, b, c, d):
        if not _close(x @ e, 0, max(np.linalg.norm(x), k) * en):
            raise GeometryError("cone axis vector must be orthogonal to the radial vectors")
    if r0 > 1e-12 * k:
        if not _close(np.linalg.norm(b), r0, r0) or not _close(a @ b, 0, r0 * r0):
            raise GeometryError("cone radial vectors must be orthogonal with equal norm")
        sign = 1.0 if (c @ a) >= 0 else -1.0
        if not (
            np.allclose(c, sign * k / r0 * a, atol=1e-6 * k)
            and np.allclose(d, sign * k / r0 * b, atol=1e-6 * k)
        ):
            raise GeometryError("cone slope vectors must be parallel to the radial vectors")
        apex = f - (r0 / (sign * k)) * e
    else:
        if np.linalg.norm(b) > 1e-12 * k:
            raise GeometryError("cone radial vectors must both vanish for an apex-centred form")
        apex = f.copy()
    return Shape(kind, apex, e / en, half_angle=float(math.atan2(k, en)))


# ---------------------------------------------------------------------------
# Primitive types
# ---------------------------------------------------------------------------


def _frozen(values: ArrayLike) -> FloatArray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParametricPrimitive:
    """A primitive in parametric storage form (validated on construction)."""

    kind: PrimitiveKind
    params: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", _frozen(self.params))
        if len(self.params) != PARAM_LENGTHS[self.kind]:
            raise GeometryError(
                f"{self.kind.value} needs {PARAM_LENGTHS[self.kind]} parameters, got {len(self.params)}"
            )
        if not np.all(np.isfinite(self.params)):
            raise GeometryError("parameters must be finite")
        self.shape  # noqa: B018 - validates well-formedness

    @cached_property
    def shape(self) -> Shape:
        return _decode(self.kind, self.params)

    def __repr__(self) -> str:
        return f"ParametricPrimitive({self.kind.value}, {np.array2string(self.params, precision=4)})"


@dataclass(frozen=True, eq=False)
class ImplicitPrimitive:
    """A primitive as a normalized implicit coefficient vector."""

    kind: PrimitiveKind
    coeffs: FloatArray

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if len(coeffs) != COEFF_LENGTHS[self.kind]:
            raise GeometryError(
                f"{self.kind.value} needs {COEFF_LENGTHS[self.kind]} coefficients, got {len(coeffs)}"
            )
        object.__setattr__(self, "coeffs", _frozen(normalize_coefficients(coeffs)))

    def __repr__(self) -> str:
        return f"ImplicitPrimitive({self.kind.value}, {np.array2string(self.coeffs, precision=4)})"


@dataclass(frozen=True)
class TrimRegion:
    """Rectangle ``[u_min, u_max] x [v_min, v_max]`` of the parameter domain."""

    u_min: float
    u_max: float
    v_min: float
    v_max: float

    def __post_init__(self) -> None:
        vals = (self.u_min, self.u_max, self.v_min, self.v_max)
        if not all(math.isfinite(x) for x in vals):
            raise GeometryError("trim bounds must be finite")
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise GeometryError("degenerate trim region")

    def check(self, kind: PrimitiveKind) -> None:
        period = 2 * math.pi * (1 + 1e-12)
        if kind in _PERIODIC_U and self.u_max - self.u_min > period:
            raise GeometryError("angular u range exceeds one period")
        if kind is PrimitiveKind.TORUS and self.v_max - self.v_min > period:
            raise GeometryError("angular v range exceeds one period")
        if kind is PrimitiveKind.SPHERE and (
            self.v_min < -math.pi / 2 - 1e-12 or self.v_max > math.pi / 2 + 1e-12
        ):
            raise GeometryError("sphere latitude must lie in [-pi/2, pi/2]")

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)


FULL_TURN = TrimRegion(0.0, 2 * math.pi, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Constructors from geometric descriptions
# ---------------------------------------------------------------------------


def _unit(v: ArrayLike) -> FloatArray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not n > 0:
        raise GeometryError("zero-length direction")
    return v / n


def orthonormal_frame(axis: ArrayLike) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Right-handed frame ``(e1, e2, w)`` with ``w`` along ``axis``."""
    w = _unit(axis)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(w)))] = 1.0
    e1 = np.cross(w, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(w, e1)
    return e1, e2, w


def make_plane(origin: ArrayLike, normal: ArrayLike) -> ParametricPrimitive:
    e1, e2, _ = orthonormal_frame(normal)
    return ParametricPrimitive(PrimitiveKind.PLANE, np.concatenate([e1, e2, np.asarray(origin, float)]))


def make_cylinder(center: ArrayLike, axis: ArrayLike, radius: float) -> ParametricPrimitive:
    if not radius > 0:
        raise GeometryError("cylinder radius must be positive")
    e1, e2, w = orthonormal_frame(axis)
    return ParametricPrimitive(
        PrimitiveKind.CYLINDER, np.concatenate([radius * e1, radius * e2, w, np.asarray(center, float)])
    )


def make_cone(apex: ArrayLike, axis: ArrayLike, half_angle: float) -> ParametricPrimitive:
    """Cone with apex at ``f`` (``v`` is the height along ``axis``)."""
    if not 0 < half_angle < math.pi / 2:
        raise GeometryError("cone half-angle must lie in (0, pi/2)")
    e1, e2, w = orthonormal_frame(axis)
    t = math.tan(half_angle)
    z = np.zeros(3)
    return ParametricPrimitive(
        PrimitiveKind.CONE, np.concatenate([z, z, t * e1, t * e2, w, np.asarray(apex, float)])
    )


def make_sphere(center: ArrayLike, radius: float) -> ParametricPrimitive:
    if not radius > 0:
        raise GeometryError("sphere radius must be positive")
    return ParametricPrimitive(
        PrimitiveKind.SPHERE,
        np.concatenate([radius * np.eye(3).reshape(-1), np.asarray(center, float)]),
    )


def make_torus(center: ArrayLike, axis: ArrayLike, major: float, minor: float) -> ParametricPrimitive:
    if not (minor > 0 and major >= minor):
        raise GeometryError("torus radii must satisfy major >= minor > 0")
    e1, e2, w = orthonormal_frame(axis)
    return ParametricPrimitive(
        PrimitiveKind.TORUS,
        np.concatenate([major * e1, major * e2, minor * e1, minor * e2, minor * w, np.asarray(center, float)]),
    )


def from_shape(shape: Shape) -> ParametricPrimitive:
    """Inverse of :attr:`ParametricPrimitive.shape` up to the choice of frame."""
    k = shape.kind
    if k is PrimitiveKind.PLANE:
        return make_plane(shape.center, shape.axis)
    if k is PrimitiveKind.CYLINDER:
        return make_cylinder(shape.center, shape.axis, shape.radius)
    if k is PrimitiveKind.CONE:
        return make_cone(shape.center, shape.axis, shape.half_angle)
    if k is PrimitiveKind.SPHERE:
        return make_sphere(shape.center, shape.radius)
    return make_torus(shape.center, shape.axis, shape.radius, shape.minor_radius)


def transform(p: ParametricPrimitive, rotation: ArrayLike, translation: ArrayLike = (0, 0, 0), scale: float = 1.0) -> ParametricPrimitive:
    """Apply ``x -> scale * R x + t`` to a primitive.

    Every storage layout ends with the offset vector; all other vectors are
    directions and only rotate and scale.
    """
    rot = np.asarray(rotation, dtype=np.float64)
    vs = np.array(_vecs(p.params))
    out = scale * vs @ rot.T
    out[-1] += np.asarray(translation, dtype=np.float64)
    return ParametricPrimitive(p.kind, out.reshape(-1))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def eval_parametric(p: ParametricPrimitive, u: ArrayLike, v: ArrayLike) -> FloatArray:
    """Surface point(s) at parameters ``(u, v)``; broadcasts, trailing axis 3."""
    u = np.asarray(u, dtype=np.float64)[..., None]
    v = np.asarray(v, dtype=np.float64)[..., None]
    vs = _vecs(p.params)
    k = p.kind
    if k is PrimitiveKind.PLANE:
        a, b, c = vs
        return a * u + b * v + c
    cu, su = np.cos(u), np.sin(u)
    if k is PrimitiveKind.CYLINDER:
        a, b, c, d = vs
        return a * cu + b * su + c * v + d
    if k is PrimitiveKind.CONE:
        a, b, c, d, e, f = vs
        return a * cu + b * su + (c * cu + d * su) * v + e * v + f
    cv, sv = np.cos(v), np.sin(v)
    if k is PrimitiveKind.SPHERE:
        a, b, c, d = vs
        return (a * cu + b * su) * cv + c * sv + d
    a, b, c, d, e, f = vs
    return a * cu + b * su + (c * cu + d * su) * cv + e * sv + f


def partials(p: ParametricPrimitive, u: ArrayLike, v: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Analytic derivatives ``(dX/du, dX/dv)`` of the parameterization."""
    u = np.asarray(u, dtype=np.float64)[..., None]
    v = np.asarray(v, dtype=np.float64)[..., None]
    vs = _vecs(p.params)
    k = p.kind
    if k is PrimitiveKind.PLANE:
        a, b, _ = vs
        shape = np.broadcast_shapes(u.shape, v.shape)
        return np.broadcast_to(a, shape[:-1] + (3,)).copy(), np.broadcast_to(b, shape[:-1] + (3,)).copy()
    cu, su = np.cos(u), np.sin(u)
    if k is PrimitiveKind.CYLINDER:
        a, b, c, _ = vs
        du = -a * su + b * cu
        return du + 0 * v, c + 0 * u + 0 * v
    if k is PrimitiveKind.CONE:
        a, b, c, d, e, _ = vs
        du = -a * su + b * cu + (-c * su + d * cu) * v
        dv = c * cu + d * su + e + 0 * v
        return du, dv
    cv, sv = np.cos(v), np.sin(v)
    if k is PrimitiveKind.SPHERE:
        a, b, c, _ = vs
        du = (-a * su + b * cu) * cv
        dv = -(a * cu + b * su) * sv + c * cv
        return du, dv
    a, b, c, d, e, _ = vs
    du = -a * su + b * cu + (-c * su + d * cu) * cv
    dv = -(c * cu + d * su) * sv + e * cv
    return du, dv


def surface_normal(p: ParametricPrimitive, u: ArrayLike, v: ArrayLike) -> FloatArray:
    """Unit normal ``dX/du x dX/dv`` (undefined at singular parameter values)."""
    du, dv = partials(p, u, v)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def _monomial_values(q: FloatArray, exps: NDArray[np.int_]) -> FloatArray:
    q = np.asarray(q, dtype=np.float64)
    powers = [q[..., axis, None] ** np.arange(5) for axis in range(3)]
    return powers[0][..., exps[:, 0]] * powers[1][..., exps[:, 1]] * powers[2][..., exps[:, 2]]


def eval_implicit(p: ImplicitPrimitive, q: ArrayLike) -> FloatArray | float:
    """Value of the implicit polynomial at point(s) ``q``."""
    exps, weights = _MONOMIALS[p.kind]
    vals = _monomial_values(np.asarray(q, dtype=np.float64), exps) @ (weights * p.coeffs)
    return float(vals) if np.ndim(vals) == 0 else vals


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def _axial(q: FloatArray, origin: FloatArray, axis: FloatArray) -> tuple[FloatArray, FloatArray]:
    rel = q - origin
    z = rel @ axis
    perp = rel - z[..., None] * axis
    return z, np.linalg.norm(perp, axis=-1)


def distance_to_surface(p: ParametricPrimitive, q: ArrayLike) -> FloatArray | float:
    """Exact Euclidean distance from ``q`` to the untrimmed surface.

    For cones this is the surface traced by the parameterization over all real
    ``v``: both nappes of the double cone.
    """
    q = np.asarray(q, dtype=np.float64)
    s = p.shape
    k = p.kind
    if k is PrimitiveKind.PLANE:
        d = np.abs((q - s.center) @ s.axis)
    elif k is PrimitiveKind.SPHERE:
        d = np.abs(np.linalg.norm(q - s.center, axis=-1) - s.radius)
    elif k is PrimitiveKind.CYLINDER:
        _, rho = _axial(q, s.center, s.axis)
        d = np.abs(rho - s.radius)
    elif k is PrimitiveKind.TORUS:
        z, rho = _axial(q, s.center, s.axis)
        d = np.abs(np.hypot(rho - s.radius, z) - s.minor_radius)
    else:
        z, rho = _axial(q, s.center, s.axis)
        sa, ca = math.sin(s.half_angle), math.cos(s.half_angle)
        apex_dist = np.hypot(rho, z)
        d_up = np.where(rho * sa + z * ca >= 0, np.abs(rho * ca - z * sa), apex_dist)
        d_down = np.where(rho * sa - z * ca >= 0, np.abs(rho * ca + z * sa), apex_dist)
        d = np.minimum(d_up, d_down)
    return float(d) if np.ndim(d) == 0 else d


def _radial(rel_perp: FloatArray, rho: FloatArray, axis: FloatArray) -> FloatArray:
    out = np.empty_like(rel_perp)
    ok = rho > 1e-300
    out[ok] = rel_perp[ok] / rho[ok, None]
    if (~ok).any():
        out[~ok] = orthonormal_frame(axis)[0]
    return out


def normal_near(p: ParametricPrimitive, q: ArrayLike) -> FloatArray:
    """Unit surface normal at the point of the surface nearest to each query.

    Orientation is arbitrary; callers compare normals up to sign. On the
    medial axis (e.g. a sphere center) an arbitrary valid normal is returned.
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    s = p.shape
    k = p.kind
    if k is PrimitiveKind.PLANE:
        return np.broadcast_to(s.axis, q.shape).copy()
    rel = q - s.center
    if k is PrimitiveKind.SPHERE:
        r = np.linalg.norm(rel, axis=1)
        return _radial(rel, r, s.axis)
    z = rel @ s.axis
    perp = rel - z[:, None] * s.axis
    rho = np.linalg.norm(perp, axis=1)
    radial = _radial(perp, rho, s.axis)
    if k is PrimitiveKind.CYLINDER:
        return radial
    if k is PrimitiveKind.TORUS:
        d = np.stack([rho - s.radius, z], axis=1)
        nd = np.linalg.norm(d, axis=1)
        on_core = nd <= 1e-300
        a = np.where(on_core, 1.0, d[:, 0] / np.where(on_core, 1.0, nd))
        b = np.where(on_core, 0.0, d[:, 1] / np.where(on_core, 1.0, nd))
        return a[:, None] * radial + b[:, None] * s.axis
    sa, ca = math.sin(s.half_angle), math.cos(s.half_angle)
    up = np.abs(rho * ca - z * sa) <= np.abs(rho * ca + z * sa)
    nz = np.where(up, -sa, sa)
    return ca * radial + nz[:, None] * s.axis


# ---------------------------------------------------------------------------
# Implicit conversion
# ---------------------------------------------------------------------------


def normalize_coefficients(v: ArrayLike) -> FloatArray:
    """Scale to unit Euclidean norm with the first nonzero entry positive."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(v)
    if not norm > 0 or not np.isfinite(norm):
        raise GeometryError("cannot normalize a zero (or non-finite) coefficient vector")
    out = v / norm
    nonzero = np.flatnonzero(np.abs(out) > ZERO_TOL)
    if len(nonzero) and out[nonzero[0]] < 0:
        out = -out
    return out + 0.0  # drop negative zeros


def _quadric_vector(A: FloatArray, b: FloatArray, l: float) -> FloatArray:
    return np.array([A[0, 0], A[1, 1], A[2, 2], A[0, 1], A[0, 2], A[1, 2], b[0], b[1], b[2], l])


class _Poly:
    """Tiny dense polynomial in x, y, z of total degree <= 4."""

    def __init__(self, c: FloatArray | None = None):
        self.c = np.zeros((5, 5, 5)) if c is None else c

    @classmethod
    def affine(cls, lin: ArrayLike, const: float) -> "_Poly":
        p = cls()
        p.c[1, 0, 0], p.c[0, 1, 0], p.c[0, 0, 1] = lin
        p.c[0, 0, 0] = const
        return p

    def __add__(self, other: "_Poly | float") -> "_Poly":
        if isinstance(other, _Poly):
            return _Poly(self.c + other.c)
        out = self.c.copy()
        out[0, 0, 0] += other
        return _Poly(out)

    def __sub__(self, other: "_Poly | float") -> "_Poly":
        return self + (other * -1.0)

    def __mul__(self, other: "_Poly | float") -> "_Poly":
        if not isinstance(other, _Poly):
            return _Poly(self.c * other)
        out = np.zeros((5, 5, 5))
        for i, j, k in zip(*np.nonzero(self.c)):
            shifted = other.c[: 5 - i, : 5 - j, : 5 - k] * self.c[i, j, k]
            out[i:, j:, k:] += shifted
        return _Poly(out)

    __rmul__ = __mul__


def parametric_to_implicit(p: ParametricPrimitive) -> ImplicitPrimitive:
    """Exact implicit polynomial of the surface, normalized."""
    s = p.shape
    k = p.kind
    if k is PrimitiveKind.PLANE:
        n = s.axis
        return ImplicitPrimitive(k, np.append(n, -n @ s.center))
    if k in (PrimitiveKind.SPHERE, PrimitiveKind.CYLINDER, PrimitiveKind.CONE):
        c = s.center
        if k is PrimitiveKind.SPHERE:
            A = np.eye(3)
            extra = -s.radius**2
        elif k is PrimitiveKind.CYLINDER:
            A = np.eye(3) - np.outer(s.axis, s.axis)
            extra = -s.radius**2
        else:
            A = math.cos(s.half_angle) ** 2 * np.eye(3) - np.outer(s.axis, s.axis)
            extra = 0.0
        b = -A @ c
        l = c @ A @ c + extra
        return ImplicitPrimitive(k, _quadric_vector(A, b, l))
    # Torus: (|X|^2 + R^2 - r^2)^2 - 4 R^2 (|X|^2 - (X.w)^2), X = x - center
    c, w = s.center, s.axis
    X = [_Poly.affine(np.eye(3)[i], -c[i]) for i in range(3)]
    sq = X[0] * X[0] + X[1] * X[1] + X[2] * X[2]
    h = X[0] * w[0] + X[1] * w[1] + X[2] * w[2]
    big2, small2 = s.radius**2, s.minor_radius**2
    t = sq + (big2 - small2)
    poly = t * t - (sq - h * h) * (4 * big2)
    coeffs = np.array([poly.c[m] for m in TORUS_MONOMIALS])
    return ImplicitPrimitive(k, coeffs)


# ---------------------------------------------------------------------------
# Sampling and extents
# ---------------------------------------------------------------------------


def area_element(p: ParametricPrimitive, u: ArrayLike, v: ArrayLike) -> FloatArray:
    du, dv = partials(p, u, v)
    return np.linalg.norm(np.cross(du, dv), axis=-1)


Mask = Callable[[FloatArray, FloatArray], NDArray[np.bool_]]


def sample_surface(
    p: ParametricPrimitive,
    trim: TrimRegion,
    n: int,
    seed: int | np.random.Generator,
    mask: Mask | None = None,
    return_params: bool = False,
) -> FloatArray | tuple[FloatArray, FloatArray, FloatArray]:
    """Draw ``n`` points uniformly by area from the trimmed patch.

    Uses rejection over the parameter rectangle, accepting ``(u, v)`` with
    probability proportional to the area element. ``mask(u, v)`` optionally
    removes parts of the rectangle (holes, annuli).
    """
    if n < 1:
        raise GeometryError("need at least one sample")
    trim.check(p.kind)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gu, gv = np.meshgrid(
        np.linspace(trim.u_min, trim.u_max, 65), np.linspace(trim.v_min, trim.v_max, 65)
    )
    jmax = float(area_element(p, gu, gv).max()) * 1.05
    if not jmax > 0:
        raise GeometryError("patch has zero area")
    us: list[FloatArray] = []
    vs: list[FloatArray] = []
    have = 0
    for _ in range(10_000):
        m = max(64, 2 * (n - have))
        u = rng.uniform(trim.u_min, trim.u_max, m)
        v = rng.uniform(trim.v_min, trim.v_max, m)
        keep = rng.uniform(0.0, jmax, m) < area_element(p, u, v)
        if mask is not None:
            keep &= mask(u, v)
        us.append(u[keep])
        vs.append(v[keep])
        have += int(keep.sum())
        if have >= n:
            break
    else:
        raise GeometryError("rejection sampling failed; mask leaves no area")
    u = np.concatenate(us)[:n]
    v = np.concatenate(vs)[:n]
    pts = eval_parametric(p, u, v)
    if return_params:
        return pts, u, v
    return pts


def bounding_box_diagonal(pts: ArrayLike) -> float:
    """Diagonal length of the axis-aligned bounding box."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise GeometryError("bounding box of an empty point set")
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
