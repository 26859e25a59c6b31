"""Primitive fitting: closed-form initializers, minimal samples and
geometric least-squares refinement.

Every fitter returns a :class:`ParametricPrimitive` or ``None`` when the data
do not determine a well-formed primitive. Normals are unoriented.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import least_squares

from .geometry import (
    GeometryError,
    ParametricPrimitive,
    PrimitiveKind,
    make_cone,
    make_cylinder,
    make_plane,
    make_sphere,
    make_torus,
    orthonormal_frame,
)

FloatArray = NDArray[np.float64]

MIN_HALF_ANGLE = math.radians(2.0)
MAX_HALF_ANGLE = math.radians(88.0)


def _unit(v: FloatArray) -> FloatArray:
    return v / np.linalg.norm(v)


def _safe(build, *args) -> ParametricPrimitive | None:
    try:
        if not all(np.all(np.isfinite(a)) for a in args):
            return None
        return build(*args)
    except (GeometryError, ValueError, ZeroDivisionError):
        return None


# ---------------------------------------------------------------------------
# Closed-form pieces
# ---------------------------------------------------------------------------


def fit_plane(pts: ArrayLike) -> ParametricPrimitive | None:
    """Total least-squares plane through the centroid."""
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 3:
        return None
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c, full_matrices=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        return None
    return make_plane(c, vt[-1])


def fit_circle_2d(xy: FloatArray) -> tuple[FloatArray, float] | None:
    """Algebraic (Kasa) circle fit followed by a few Gauss-Newton steps."""
    if len(xy) < 3:
        return None
    a = np.c_[2 * xy, np.ones(len(xy))]
    b = (xy**2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    c = sol[:2]
    r2 = sol[2] + c @ c
    if not r2 > 0:
        return None
    r = math.sqrt(r2)
    for _ in range(5):
        d = xy - c
        rho = np.linalg.norm(d, axis=1)
        if np.any(rho == 0):
            break
        jac = np.c_[-d / rho[:, None], -np.ones(len(xy))]
        step, *_ = np.linalg.lstsq(jac, -(rho - r), rcond=None)
        c = c + step[:2]
        r = r + step[2]
    if not (r > 0 and np.all(np.isfinite(c))):
        return None
    return c, float(r)


def fit_sphere_algebraic(pts: ArrayLike) -> ParametricPrimitive | None:
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) < 4:
        return None
    c0 = pts.mean(axis=0)
    q = pts - c0
    a = np.c_[2 * q, np.ones(len(q))]
    sol, *_ = np.linalg.lstsq(a, (q**2).sum(axis=1), rcond=None)
    r2 = sol[3] + sol[:3] @ sol[:3]
    if not r2 > 0:
        return None
    return _safe(make_sphere, sol[:3] + c0, math.sqrt(r2))


def axis_from_normals(normals: ArrayLike) -> FloatArray:
    """Direction most orthogonal to all normals (cylinder axis)."""
    n = np.asarray(normals, dtype=np.float64)
    _, vecs = np.linalg.eigh(n.T @ n)
    return vecs[:, 0]


def line_constraint_matrix(pts: FloatArray, normals: FloatArray) -> tuple[FloatArray, FloatArray, float]:
    """6x6 matrix of the constraints ``[x cross n ; n]`` on normalized points.

    Points are centered on their centroid and scaled to unit size (twice
    the RMS distance to the centroid, comparable to a bbox diagonal but
    invariant under rigid motions). Returns the matrix with the center and
    scale used.
    """
    center = pts.mean(axis=0)
    scale = 2.0 * float(np.sqrt(np.mean(np.sum((pts - center) ** 2, axis=1)))) or 1.0
    x = (pts - center) / scale
    c = np.c_[np.cross(x, normals), normals]
    return c.T @ c, center, scale


def rotation_axis(pts: ArrayLike, normals: ArrayLike) -> tuple[FloatArray, FloatArray] | None:
    """Axis line of a surface of revolution from its normal lines.

    Every normal line of such a surface meets the axis, which makes the
    rotation about the axis a null motion of the constraint matrix. Returns
    ``(point on axis, unit direction)`` or ``None`` when the smallest null
    vector has no rotational part.
    """
    pts = np.asarray(pts, dtype=np.float64)
    nrm = np.asarray(normals, dtype=np.float64)
    if len(pts) < 6:
        return None
    mat, center, scale = line_constraint_matrix(pts, nrm)
    _, vecs = np.linalg.eigh(mat)
    omega, v = vecs[:3, 0], vecs[3:, 0]
    w2 = omega @ omega
    if w2 < 1e-6:
        return None
    point = np.cross(omega, v) / w2
    return center + scale * point, omega / math.sqrt(w2)


def _meridian(pts: FloatArray, point: FloatArray, axis: FloatArray) -> tuple[FloatArray, FloatArray]:
    d = pts - point
    h = d @ axis
    rho = np.linalg.norm(d - np.outer(h, axis), axis=1)
    return h, rho


def cylinder_from_axis(pts: FloatArray, point: FloatArray, axis: FloatArray) -> ParametricPrimitive | None:
    e1, e2, w = orthonormal_frame(axis)
    d = pts - point
    fit = fit_circle_2d(np.c_[d @ e1, d @ e2])
    if fit is None:
        return None
    (a, b), r = fit
    return _safe(make_cylinder, point + a * e1 + b * e2, w, r)


def cone_from_axis(pts: FloatArray, point: FloatArray, axis: FloatArray) -> ParametricPrimitive | None:
    """Line fit ``rho = a + b h`` in the meridian half-plane."""
    h, rho = _meridian(pts, point, axis)
    if np.ptp(h) < 1e-12:
        return None
    b, a = np.polyfit(h, rho, 1)
    if abs(b) < 1e-9:
        return None
    h0 = -a / b
    apex = point + h0 * axis
    w = axis if b > 0 else -axis
    half = math.atan(abs(b))
    if not MIN_HALF_ANGLE <= half <= MAX_HALF_ANGLE:
        return None
    return _safe(make_cone, apex, w, half)


def torus_from_axis(pts: FloatArray, point: FloatArray, axis: FloatArray) -> ParametricPrimitive | None:
    """Circle fit in the meridian half-plane gives tube center and radius."""
    h, rho = _meridian(pts, point, axis)
    fit = fit_circle_2d(np.c_[rho, h])
    if fit is None:
        return None
    (big, z0), r = fit
    if not (r > 0 and big >= r):
        return None
    return _safe(make_torus, point + z0 * axis, axis, big, r)


def cone_from_tangent_planes(pts: FloatArray, normals: FloatArray) -> ParametricPrimitive | None:
    """Apex as the least-squares meet of the tangent planes, axis from the
    apex-to-point directions (which share one angle with the axis)."""
    if len(pts) < 3:
        return None
    a = normals
    b = np.einsum("ij,ij->i", normals, pts)
    mat = a.T @ a
    if np.linalg.cond(mat) > 1e10:
        return None
    apex = np.linalg.solve(mat, a.T @ b)
    d = pts - apex
    nd = np.linalg.norm(d, axis=1)
    if np.any(nd < 1e-12):
        return None
    d = d / nd[:, None]
    if len(pts) == 3:
        w = np.cross(d[1] - d[0], d[2] - d[0])
        if np.linalg.norm(w) < 1e-12:
            return None
        w = _unit(w)
        if w @ d.mean(axis=0) < 0:
            w = -w
    else:
        # the points may straddle the apex (both nappes): compare axis
        # candidates by how constant the angle to |d . w| is
        cands = []
        for cand in (d, d * np.where(d @ np.linalg.eigh(d.T @ d)[1][:, -1] < 0, -1.0, 1.0)[:, None]):
            _, _, vt = np.linalg.svd(cand - cand.mean(axis=0), full_matrices=False)
            cands.append(vt[-1])
        line = rotation_axis(pts, normals)
        if line is not None:
            cands.append(line[1])
        w = min(cands, key=lambda c: float(np.std(np.abs(d @ c))))
        if w @ d.mean(axis=0) < 0:
            w = -w
        d = d * np.where(d @ w < 0, -1.0, 1.0)[:, None]
    half = float(np.mean(np.arccos(np.clip(d @ w, -1, 1))))
    if not MIN_HALF_ANGLE <= half <= MAX_HALF_ANGLE:
        return None
    return _safe(make_cone, apex, w, half)


def _closest_between_lines(p1, d1, p2, d2) -> FloatArray | None:
    w0 = p1 - p2
    a, b, c = d1 @ d1, d1 @ d2, d2 @ d2
    d, e = d1 @ w0, d2 @ w0
    den = a * c - b * b
    if den < 1e-12:
        return None
    s = (b * e - c * d) / den
    t = (a * e - b * d) / den
    return 0.5 * (p1 + s * d1 + p2 + t * d2)


# ---------------------------------------------------------------------------
# Minimal samples (RANSAC hypotheses)
# ---------------------------------------------------------------------------


def plane_from_sample(pts: FloatArray) -> ParametricPrimitive | None:
    n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    if np.linalg.norm(n) < 1e-12:
        return None
    return make_plane(pts[0], n)


def sphere_from_sample(pts: FloatArray, normals: FloatArray) -> ParametricPrimitive | None:
    c = _closest_between_lines(pts[0], normals[0], pts[1], normals[1])
    if c is None:
        return None
    r = 0.5 * (np.linalg.norm(pts[0] - c) + np.linalg.norm(pts[1] - c))
    return _safe(make_sphere, c, r)


def cylinder_from_sample(pts: FloatArray, normals: FloatArray) -> ParametricPrimitive | None:
    w = np.cross(normals[0], normals[1])
    if np.linalg.norm(w) < 1e-6:
        return None
    w = _unit(w)
    e1, e2, _ = orthonormal_frame(w)
    proj = [np.array([p @ e1, p @ e2]) for p in pts[:2]]
    dirs = [np.array([n @ e1, n @ e2]) for n in normals[:2]]
    m = np.c_[dirs[0], -dirs[1]]
    if abs(np.linalg.det(m)) < 1e-12:
        return None
    s, t = np.linalg.solve(m, proj[1] - proj[0])
    c2 = 0.5 * (proj[0] + s * dirs[0] + proj[1] + t * dirs[1])
    r = 0.5 * (abs(s) + abs(t))
    return _safe(make_cylinder, c2[0] * e1 + c2[1] * e2, w, r)


def cone_from_sample(pts: FloatArray, normals: FloatArray) -> ParametricPrimitive | None:
    return cone_from_tangent_planes(pts[:3], normals[:3])


def torus_from_neighborhood(pts: FloatArray, normals: FloatArray) -> ParametricPrimitive | None:
    axis = rotation_axis(pts, normals)
    if axis is None:
        return None
    return torus_from_axis(pts, *axis)


# ---------------------------------------------------------------------------
# Initial fits from a whole point set
# ---------------------------------------------------------------------------


def initial_fit(kind: PrimitiveKind, pts: ArrayLike, normals: ArrayLike) -> ParametricPrimitive | None:
    """Non-iterative fit of ``kind`` to a (mostly inlier) point set."""
    pts = np.asarray(pts, dtype=np.float64)
    nrm = np.asarray(normals, dtype=np.float64)
    if kind is PrimitiveKind.PLANE:
        return fit_plane(pts)
    if kind is PrimitiveKind.SPHERE:
        return fit_sphere_algebraic(pts)
    if kind is PrimitiveKind.CYLINDER:
        w = axis_from_normals(nrm)
        return cylinder_from_axis(pts, pts.mean(axis=0), w)
    if kind is PrimitiveKind.CONE:
        cone = cone_from_tangent_planes(pts, nrm)
        if cone is None:
            axis = rotation_axis(pts, nrm)
            cone = None if axis is None else cone_from_axis(pts, *axis)
        return cone
    axis = rotation_axis(pts, nrm)
    return None if axis is None else torus_from_axis(pts, *axis)


# ---------------------------------------------------------------------------
# Geometric least squares
# ---------------------------------------------------------------------------


def _tilt(w0: FloatArray, e1: FloatArray, e2: FloatArray, a: float, b: float) -> FloatArray:
    return _unit(w0 + a * e1 + b * e2)


def refine(
    p: ParametricPrimitive,
    pts: ArrayLike,
    scale: float | None = None,
    max_points: int = 1500,
    max_nfev: int = 60,
) -> ParametricPrimitive | None:
    """Minimize geometric distances of ``pts`` to a primitive of ``p.kind``.

    Uses a Huber loss with transition at ``scale`` (default 1% of the point
    set's extent) so that a few stray points do not drag the surface.
    Large inputs are sub-sampled deterministically.
    """
    pts = np.asarray(pts, dtype=np.float64)
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).astype(np.int64)]
    ext = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0
    f_scale = scale if scale else 0.01 * ext
    kind = p.kind
    s = p.shape

    if kind is PrimitiveKind.PLANE:
        return fit_plane(pts) or p
    if kind is PrimitiveKind.SPHERE:
        def res(x):
            return np.linalg.norm(pts - x[:3], axis=1) - x[3]

        x0 = np.r_[s.center, s.radius]
        build = lambda x: make_sphere(x[:3], abs(x[3]))  # noqa: E731
    else:
        e1, e2, w0 = orthonormal_frame(s.axis)
        c0 = s.center
        if kind is PrimitiveKind.CYLINDER:
            c0 = c0 + ((pts.mean(axis=0) - c0) @ w0) * w0

            def res(x):
                w = _tilt(w0, e1, e2, x[0], x[1])
                c = c0 + x[2] * e1 + x[3] * e2
                d = pts - c
                return np.linalg.norm(d - np.outer(d @ w, w), axis=1) - x[4]

            x0 = np.r_[0, 0, 0, 0, s.radius]
            build = lambda x: make_cylinder(c0 + x[2] * e1 + x[3] * e2, _tilt(w0, e1, e2, x[0], x[1]), abs(x[4]))  # noqa: E731
        elif kind is PrimitiveKind.CONE:
            # orient the axis towards the data so the signed residual uses h > 0
            if np.mean((pts - c0) @ w0) < 0:
                w0, e2 = -w0, -e2

            def res(x):
                w = _tilt(w0, e1, e2, x[0], x[1])
                d = pts - x[2:5]
                h = d @ w
                rho = np.linalg.norm(d - np.outer(h, w), axis=1)
                return rho * math.cos(x[5]) - np.abs(h) * math.sin(x[5])

            x0 = np.r_[0, 0, c0, s.half_angle]
            build = lambda x: make_cone(x[2:5], _tilt(w0, e1, e2, x[0], x[1]), x[5])  # noqa: E731
        else:

            def res(x):
                w = _tilt(w0, e1, e2, x[0], x[1])
                d = pts - x[2:5]
                h = d @ w
                rho = np.linalg.norm(d - np.outer(h, w), axis=1)
                return np.hypot(rho - x[5], h) - x[6]

            x0 = np.r_[0, 0, c0, s.radius, s.minor_radius]
            build = lambda x: make_torus(x[2:5], _tilt(w0, e1, e2, x[0], x[1]), x[5], abs(x[6]))  # noqa: E731
    try:
        sol = least_squares(res, x0, loss="huber", f_scale=f_scale, max_nfev=max_nfev, method="trf")
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(sol.x)):
        return None
    if kind is PrimitiveKind.CONE and not MIN_HALF_ANGLE <= sol.x[5] <= MAX_HALF_ANGLE:
        return None
    return _safe(build, sol.x)


def fit_primitive(kind: PrimitiveKind, pts: ArrayLike, normals: ArrayLike, scale: float | None = None) -> ParametricPrimitive | None:
    """Initial closed-form fit followed by geometric refinement."""
    init = initial_fit(kind, pts, normals)
    if init is None:
        return None
    return refine(init, pts, scale) or init
