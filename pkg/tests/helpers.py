"""Shared test helpers: random primitives and brute-force oracles."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation

from primbench.geometry import (
    ParametricPrimitive,
    PrimitiveKind,
    TrimRegion,
    eval_parametric,
    transform,
)

TWO_PI = 2 * math.pi


def canonical_params(kind: PrimitiveKind, rng: np.random.Generator) -> np.ndarray:
    """Parameters in the local frame (axis = z) with random dimensions."""
    ex, ey, ez = np.eye(3)
    zero = np.zeros(3)
    if kind is PrimitiveKind.PLANE:
        # non-orthogonal, non-unit directions are allowed for planes
        a = ex * rng.uniform(0.5, 2) + ey * rng.uniform(-0.5, 0.5)
        b = ey * rng.uniform(0.5, 2)
        return np.concatenate([a, b, zero])
    if kind is PrimitiveKind.CYLINDER:
        r = rng.uniform(0.2, 1.5)
        return np.concatenate([r * ex, r * ey, rng.uniform(0.5, 2) * ez, zero])
    if kind is PrimitiveKind.SPHERE:
        r = rng.uniform(0.2, 1.5)
        return np.concatenate([r * ex, r * ey, r * ez, zero])
    if kind is PrimitiveKind.CONE:
        r0 = rng.uniform(0.0, 1.0)
        k = rng.uniform(0.2, 1.5) * rng.choice([-1, 1])
        h = rng.uniform(0.5, 2)
        return np.concatenate([r0 * ex, r0 * ey, k * ex, k * ey, h * ez, zero])
    big = rng.uniform(0.5, 2.0)
    small = rng.uniform(0.1, big)
    return np.concatenate([big * ex, big * ey, small * ex, small * ey, small * ez, zero])


def random_rigid(rng: np.random.Generator, spread: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    rot = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
    return rot, rng.uniform(-spread, spread, 3)


def random_primitive(kind: PrimitiveKind, rng: np.random.Generator) -> ParametricPrimitive:
    local = ParametricPrimitive(kind, canonical_params(kind, rng))
    rot, t = random_rigid(rng)
    return transform(local, rot, t)


def patch_trim(kind: PrimitiveKind) -> TrimRegion:
    """A bounded patch covering the interesting part of each surface."""
    if kind is PrimitiveKind.PLANE:
        return TrimRegion(-1.0, 1.0, -1.0, 1.0)
    if kind is PrimitiveKind.CYLINDER:
        return TrimRegion(0.0, TWO_PI, -1.0, 1.0)
    if kind is PrimitiveKind.CONE:
        return TrimRegion(0.0, TWO_PI, 0.0, 1.0)
    if kind is PrimitiveKind.SPHERE:
        return TrimRegion(0.0, TWO_PI, -math.pi / 2, math.pi / 2)
    return TrimRegion(0.0, TWO_PI, 0.0, TWO_PI)


def grid_samples(p: ParametricPrimitive, trim: TrimRegion, n: int) -> np.ndarray:
    """Roughly ``n`` surface points on a regular parameter grid."""
    side = int(math.ceil(math.sqrt(n)))
    u, v = np.meshgrid(
        np.linspace(trim.u_min, trim.u_max, side), np.linspace(trim.v_min, trim.v_max, side)
    )
    return eval_parametric(p, u.ravel(), v.ravel())


def brute_force_distance(queries: np.ndarray, samples: np.ndarray, chunk: int = 16) -> np.ndarray:
    """Minimum distance from each query to a dense surface sample."""
    out = np.empty(len(queries))
    sq = np.einsum("ij,ij->i", samples, samples)
    for start in range(0, len(queries), chunk):
        q = queries[start : start + chunk]
        d2 = sq[None, :] - 2 * q @ samples.T + np.einsum("ij,ij->i", q, q)[:, None]
        out[start : start + chunk] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def oracle_trim(kind: PrimitiveKind) -> TrimRegion:
    """Large patches for the nearest-point oracle (queries stay near the middle)."""
    if kind is PrimitiveKind.PLANE:
        return TrimRegion(-5.0, 5.0, -5.0, 5.0)
    if kind in (PrimitiveKind.CYLINDER, PrimitiveKind.CONE):
        return TrimRegion(0.0, TWO_PI, -5.0, 5.0)
    return patch_trim(kind)


def nearest_point_oracle(
    p: ParametricPrimitive, trim: TrimRegion, queries: np.ndarray, n: int = 100_000, refine: int = 4
) -> np.ndarray:
    """Brute-force distance from queries to a sampled patch.

    A regular ``n``-point parameter grid is scanned exhaustively; the best
    ``refine`` grid samples per query are then re-sampled on a fine local grid
    (again exhaustively) to remove the discretization error.
    """
    side = int(math.ceil(math.sqrt(n)))
    us = np.linspace(trim.u_min, trim.u_max, side)
    vs = np.linspace(trim.v_min, trim.v_max, side)
    du, dv = us[1] - us[0], vs[1] - vs[0]
    uu, vv = np.meshgrid(us, vs)
    uu, vv = uu.ravel(), vv.ravel()
    samples = eval_parametric(p, uu, vv)
    sq = np.einsum("ij,ij->i", samples, samples)
    fine = np.linspace(-1.5, 1.5, 61)
    fu, fv = np.meshgrid(fine * du, fine * dv)
    fu, fv = fu.ravel(), fv.ravel()
    out = np.empty(len(queries))
    for i, q in enumerate(queries):
        d2 = sq - 2 * samples @ q + q @ q
        best = np.argpartition(d2, refine)[:refine]
        loc = eval_parametric(p, (uu[best, None] + fu).ravel(), (vv[best, None] + fv).ravel())
        out[i] = np.sqrt(min(((loc - q) ** 2).sum(axis=1).min(), max(d2[best].min(), 0.0)))
    return out


def cube_model(n_per_face: int, rng: np.random.Generator, half: float = 1.0):
    """Surface samples of an axis-aligned cube as a ground-truth model.

    Returns the model and each point's distance to the nearest cube edge.
    """
    from primbench.dataset import GroundTruthModel
    from primbench.geometry import make_plane, parametric_to_implicit

    pts, segs, prims = [], [], []
    start = 0
    for axis in range(3):
        for sign in (-1.0, 1.0):
            uv = rng.uniform(-half, half, (n_per_face, 2))
            p = np.empty((n_per_face, 3))
            others = [a for a in range(3) if a != axis]
            p[:, axis] = sign * half
            p[:, others[0]], p[:, others[1]] = uv[:, 0], uv[:, 1]
            normal = np.zeros(3)
            normal[axis] = sign
            pts.append(p)
            segs.append(np.arange(start, start + n_per_face))
            prims.append(make_plane(normal * half, normal))
            start += n_per_face
    cloud = np.concatenate(pts)
    model = GroundTruthModel(cloud, tuple(segs), tuple(prims), tuple(parametric_to_implicit(q) for q in prims))
    # the own face has gap 0; the nearest edge is at the next smallest gap
    gaps = np.sort(half - np.abs(cloud), axis=1)
    return model, gaps[:, 1]


def slippage_sample(kind: str, rng: np.random.Generator, n: int = 400) -> tuple[np.ndarray, np.ndarray]:
    """Points and exact unit normals of a canonical surface in a random pose.

    ``kind`` is a primitive name in lower case or ``"blob"`` for a generic
    star-shaped freeform surface with no rigid symmetry.
    """
    from primbench.geometry import (
        make_cone,
        make_cylinder,
        make_plane,
        make_sphere,
        make_torus,
        sample_surface,
        surface_normal,
    )

    if kind == "blob":
        c = rng.uniform(-3, 3, (6, 3))
        amp = rng.uniform(0.08, 0.14, 6)

        def radius(u):
            return 1.0 + sum(a * np.sin(u @ ci + ci[0]) for a, ci in zip(amp, c))

        def implicit(x):
            r = np.linalg.norm(x, axis=-1)
            return r - radius(x / r[..., None])

        u = rng.normal(size=(n, 3))
        u /= np.linalg.norm(u, axis=1)[:, None]
        pts = u * radius(u)[:, None]
        h = 1e-6
        grad = np.stack(
            [(implicit(pts + h * e) - implicit(pts - h * e)) / (2 * h) for e in np.eye(3)], axis=1
        )
        nrm = grad / np.linalg.norm(grad, axis=1)[:, None]
    else:
        if kind == "plane":
            p, trim = make_plane([0, 0, 0], [0, 0, 1]), TrimRegion(-1, 1, -1, 1)
        elif kind == "sphere":
            p, trim = make_sphere([0, 0, 0], rng.uniform(0.5, 2)), TrimRegion(0, TWO_PI, -1.2, 1.2)
        elif kind == "cylinder":
            p, trim = make_cylinder([0, 0, 0], [0, 0, 1], rng.uniform(0.5, 2)), TrimRegion(0, TWO_PI, 0, rng.uniform(1, 3))
        elif kind == "cone":
            a = rng.uniform(0.3, 1.0)
            p, trim = make_cone([0, 0, 0], [0, 0, 1], a), TrimRegion(0, TWO_PI, rng.uniform(0.2, 0.8), rng.uniform(1.5, 3))
        elif kind == "torus":
            big = rng.uniform(1, 2)
            p, trim = make_torus([0, 0, 0], [0, 0, 1], big, big * rng.uniform(0.2, 0.6)), TrimRegion(0, TWO_PI, 0, TWO_PI)
        else:
            raise ValueError(kind)
        pts, u, v = sample_surface(p, trim, n, rng, return_params=True)
        nrm = surface_normal(p, u, v)
    rot, t = random_rigid(rng, 3.0)
    return pts @ rot.T + t, nrm @ rot.T
