"""Primitive growing: sharp-edge detection by surface variation, region
growing, slippage classification and RANSAC refinement.

The pipeline (:func:`fit_pg`) is::

    normals -> surface variation -> sharp points -> regions
            -> slippage class per region -> fit or RANSAC split
            -> sharp points joined to the nearest primitive
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .dataset import GroundTruthModel
from .fitting import (
    cone_from_sample,
    cylinder_from_sample,
    fit_primitive,
    line_constraint_matrix,
    plane_from_sample,
    refine,
    sphere_from_sample,
    torus_from_neighborhood,
)
from .geometry import (
    KINDS,
    ParametricPrimitive,
    PrimitiveKind,
    bounding_box_diagonal,
    distance_to_surface,
    normal_near,
    parametric_to_implicit,
)
from .neighbors import estimate_normals, graph_components, knn, surface_variation

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]


class InvarianceClass(enum.Enum):
    PLANAR = "planar"
    SPHERICAL = "spherical"
    CYLINDRICAL = "cylindrical"
    HELICAL = "helical"
    PRISMATIC = "prismatic"
    REVOLUTE = "revolute"
    COMPLEX = "complex"


DIRECT_FIT = {
    InvarianceClass.PLANAR: (PrimitiveKind.PLANE,),
    InvarianceClass.SPHERICAL: (PrimitiveKind.SPHERE,),
    InvarianceClass.CYLINDRICAL: (PrimitiveKind.CYLINDER,),
    InvarianceClass.REVOLUTE: (PrimitiveKind.CONE, PrimitiveKind.TORUS),
}


@dataclass(frozen=True)
class PgConfig:
    """Settings of the primitive-growing pipeline.

    ``ransac_epsilon`` is a fraction of the cloud's bbox diagonal; the RANSAC
    minimum support is ``max(ransac_min_support, 1% of the region)``. Each
    RANSAC extraction round draws ``ransac_iterations // 8`` hypotheses per
    primitive kind.
    """

    k: int = 16
    eta: float = 0.8
    slippage_ratio: float = 1e-3
    ransac_epsilon: float = 0.01
    ransac_min_support: int = 20
    ransac_iterations: int = 1024
    ransac_normal_angle: float = 25.0
    fit_inlier_fraction: float = 0.9
    min_segment_size: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 3:
            raise ValueError("k must be at least 3")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not 0 < self.slippage_ratio < 1:
            raise ValueError("slippage ratio must lie in (0, 1)")
        if not self.ransac_epsilon > 0 or self.ransac_iterations < 1:
            raise ValueError("bad RANSAC settings")
        if self.min_segment_size < 1 or self.ransac_min_support < 3:
            raise ValueError("segment sizes must be positive")

    @classmethod
    def from_json(cls, path: str | Path) -> "PgConfig":
        return cls(**json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Sharp edges and regions
# ---------------------------------------------------------------------------


def detect_sharp_edges(variations: ArrayLike, eta: float) -> NDArray[np.bool_]:
    """Points whose variation strictly exceeds the ``eta`` quantile."""
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    v = np.asarray(variations, dtype=np.float64)
    if v.size == 0:
        return np.zeros(0, dtype=bool)
    return v > np.quantile(v, eta)


def region_grow(cloud: ArrayLike, graph: IntArray, sharp: ArrayLike, seed: int) -> list[IntArray]:
    """Flood fill over non-sharp points along (symmetrized) neighbor edges.

    Seeds are visited in a seeded random order, which fixes region numbering;
    the regions themselves are the connected components and do not depend on
    the order.
    """
    sharp = np.asarray(sharp, dtype=bool)
    n = len(graph)
    if len(sharp) != n or len(np.asarray(cloud)) != n:
        raise ValueError("cloud, graph and sharp flags disagree in size")
    free = ~sharp
    rows = np.repeat(np.arange(n), graph.shape[1])
    cols = graph.reshape(-1)
    ok = free[rows] & free[cols]
    adj = coo_matrix((np.ones(int(ok.sum())), (rows[ok], cols[ok])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    order = np.random.default_rng(seed).permutation(np.flatnonzero(free))
    regions: list[IntArray] = []
    seen: set[int] = set()
    for s in order:
        lab = int(labels[s])
        if lab in seen:
            continue
        seen.add(lab)
        regions.append(np.flatnonzero(free & (labels == lab)))
    return regions


# ---------------------------------------------------------------------------
# Slippage
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SlippageResult:
    eigenvalues: FloatArray
    eigenvectors: FloatArray
    slippable: int
    invariance: InvarianceClass


def slippage_analysis(pts: ArrayLike, normals: ArrayLike, ratio: float = 1e-3) -> SlippageResult:
    """Eigen-analysis of the 6x6 constraint matrix of small rigid motions.

    Points are centered and scaled to a unit bbox diagonal first. The number
    of slippable motions counts eigenvalues below ``ratio * lambda_max``
    (capped at 3). Classes that share a count are told apart by the
    rotational part ``r`` of the null motions ``[r, t]``:

    * 3 motions: one rotation (about the normal) means planar, three mean
      spherical;
    * 2 motions: a pure translation among them means cylindrical, otherwise
      helical;
    * 1 motion: a rotation means revolute, a translation prismatic.
    """
    pts = np.asarray(pts, dtype=np.float64)
    nrm = np.asarray(normals, dtype=np.float64)
    if len(pts) < 6:
        raise ValueError("slippage analysis needs at least 6 points")
    mat, _, _ = line_constraint_matrix(pts, nrm)
    evals, evecs = np.linalg.eigh(mat)
    evals = np.maximum(evals, 0.0)
    s = min(int(np.sum(evals < ratio * evals[-1])), 3)
    null = evecs[:3, :s]  # rotational parts of the null motions
    if s == 0:
        cls = InvarianceClass.COMPLEX
    else:
        sv = np.linalg.svd(null, compute_uv=False)
        rot_rank = int(np.sum(sv > 0.5))
        if s == 3:
            cls = InvarianceClass.SPHERICAL if rot_rank >= 2 else InvarianceClass.PLANAR
        elif s == 2:
            cls = InvarianceClass.CYLINDRICAL if sv[-1] < 0.1 else InvarianceClass.HELICAL
        else:
            cls = InvarianceClass.REVOLUTE if sv[0] > 0.1 else InvarianceClass.PRISMATIC
    return SlippageResult(evals, evecs, s, cls)


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


def _compatible(p: ParametricPrimitive, pts: FloatArray, nrm: FloatArray, eps: float, cos_tol: float) -> NDArray[np.bool_]:
    close = distance_to_surface(p, pts) <= eps
    if nrm is None or not close.any():
        return close
    out = close.copy()
    sn = normal_near(p, pts[close])
    out[close] = np.abs(np.einsum("ij,ij->i", sn, nrm[close])) >= cos_tol
    return out


_SAMPLERS = {
    PrimitiveKind.PLANE: (3, lambda p, n: plane_from_sample(p)),
    PrimitiveKind.SPHERE: (2, sphere_from_sample),
    PrimitiveKind.CYLINDER: (2, cylinder_from_sample),
    PrimitiveKind.CONE: (3, cone_from_sample),
}


def ransac_decompose(
    cloud: FloatArray,
    normals: FloatArray,
    graph: IntArray,
    indices: ArrayLike,
    eps: float,
    config: PgConfig,
    rng: np.random.Generator,
) -> tuple[list[tuple[IntArray, ParametricPrimitive]], IntArray]:
    """Greedy RANSAC extraction of primitives from one region.

    Hypotheses come from minimal samples drawn inside the k-neighborhood of a
    random seed (torus hypotheses from the whole neighborhood). Each round
    keeps the hypothesis with most compatible points, refines it by least
    squares and claims the largest connected part of its inliers.

    Returns the extracted ``(indices, primitive)`` parts and the leftovers.
    """
    remaining = np.asarray(indices, dtype=np.int64)
    cos_tol = math.cos(math.radians(config.ransac_normal_angle))
    min_support = max(config.ransac_min_support, int(math.ceil(0.01 * len(remaining))))
    parts: list[tuple[IntArray, ParametricPrimitive]] = []
    local_k = min(graph.shape[1], 16)
    while len(remaining) >= min_support:
        member = np.zeros(len(cloud), dtype=bool)
        member[remaining] = True
        probe = remaining if len(remaining) <= 500 else rng.choice(remaining, 500, replace=False)
        best: tuple[int, ParametricPrimitive] | None = None
        per_kind = max(1, config.ransac_iterations // 8)
        for kind in KINDS:
            for _ in range(per_kind):
                s = int(rng.choice(remaining))
                nb = graph[s][member[graph[s]]][:local_k]
                if kind is PrimitiveKind.TORUS:
                    if len(nb) < 8:
                        continue
                    # grow the neighborhood two rings for a usable patch
                    ring = np.unique(graph[nb].reshape(-1))
                    ring = ring[member[ring]]
                    cand = torus_from_neighborhood(cloud[ring], normals[ring])
                else:
                    m, build = _SAMPLERS[kind]
                    if len(nb) < m - 1:
                        continue
                    pick = np.r_[s, rng.choice(nb, m - 1, replace=False)]
                    cand = build(cloud[pick], normals[pick])
                if cand is None:
                    continue
                score = int(_compatible(cand, cloud[probe], normals[probe], eps, cos_tol).sum())
                if best is None or score > best[0]:
                    best = (score, cand)
        if best is None:
            break
        cand = best[1]
        ok = _compatible(cand, cloud[remaining], normals[remaining], eps, cos_tol)
        if ok.sum() >= 6:
            better = refine(cand, cloud[remaining[ok]], scale=eps)
            if better is not None:
                ok2 = _compatible(better, cloud[remaining], normals[remaining], eps, cos_tol)
                if ok2.sum() >= ok.sum():
                    cand, ok = better, ok2
        comps = graph_components(graph, remaining[ok]) if ok.any() else []
        if not comps or len(comps[0]) < min_support:
            break
        part = comps[0]
        parts.append((part, cand))
        remaining = np.setdiff1d(remaining, part, assume_unique=True)
    return _settle(cloud, normals, np.asarray(indices, dtype=np.int64), parts, eps, cos_tol, min_support)


def _settle(cloud, normals, region, parts, eps, cos_tol, min_support):
    """Merge parts lying on one surface, then give each region point to the
    nearest compatible part; greedy extraction order otherwise leaves
    tangent strips on the wrong side of smooth seams."""
    merged: list[tuple[IntArray, ParametricPrimitive]] = []
    for idx, p in parts:
        for j, (idx0, p0) in enumerate(merged):
            if p0.kind is p.kind and _compatible(p0, cloud[idx], normals[idx], eps, cos_tol).mean() >= 0.9:
                merged[j] = (np.union1d(idx0, idx), p0)
                break
        else:
            merged.append((idx, p))
    if not merged:
        return [], region
    dist = np.stack([distance_to_surface(p, cloud[region]) for _, p in merged])
    ok = np.stack([_compatible(p, cloud[region], normals[region], eps, cos_tol) for _, p in merged])
    dist[~ok] = np.inf
    best = np.argmin(dist, axis=0)
    hit = np.isfinite(dist[best, np.arange(len(region))])
    out = []
    for j, (_, p) in enumerate(merged):
        idx = region[hit & (best == j)]
        if len(idx) >= min_support:
            out.append((idx, p))
        else:
            hit[np.isin(region, idx)] = False
    return out, region[~hit]


def _mfe(pts: FloatArray, p: ParametricPrimitive) -> float:
    return float(np.mean(distance_to_surface(p, pts)) / max(bounding_box_diagonal(pts), 1e-300))


def refine_segment(
    cloud: FloatArray,
    normals: FloatArray,
    graph: IntArray,
    indices: ArrayLike,
    invariance: InvarianceClass,
    config: PgConfig,
    eps: float,
    rng: np.random.Generator,
) -> tuple[list[tuple[IntArray, ParametricPrimitive]], IntArray]:
    """Fit one region according to its invariance class.

    Planar, spherical and cylindrical regions get a direct least-squares fit
    of that kind; revolute regions get both a cone and a torus and keep the
    lower MFE. A direct fit that explains fewer than ``fit_inlier_fraction``
    of the points within ``eps``, and every prismatic, helical or complex
    region, goes to RANSAC decomposition.
    """
    idx = np.asarray(indices, dtype=np.int64)
    pts = cloud[idx]
    kinds = DIRECT_FIT.get(invariance, ())
    best = None
    for kind in kinds:
        p = fit_primitive(kind, pts, normals[idx], scale=eps)
        if p is None:
            continue
        err = _mfe(pts, p)
        if best is None or err < best[0]:
            best = (err, p)
    if best is not None:
        inlier = np.mean(distance_to_surface(best[1], pts) <= eps)
        if inlier >= config.fit_inlier_fraction:
            return [(idx, best[1])], np.zeros(0, dtype=np.int64)
    return ransac_decompose(cloud, normals, graph, idx, eps, config, rng)


def assign_sharp_points(
    parts: list[tuple[IntArray, ParametricPrimitive]],
    sharp: ArrayLike,
    cloud: FloatArray,
    max_distance: float | None = None,
) -> list[IntArray]:
    """Join each listed point to the part whose surface is nearest.

    Ties go to the lower part index. With ``max_distance`` set, points
    farther than that from every surface stay unsegmented.
    """
    sharp = np.asarray(sharp, dtype=np.int64)
    segs = [np.asarray(s, dtype=np.int64) for s, _ in parts]
    if not parts or sharp.size == 0:
        return segs
    dist = np.stack([distance_to_surface(p, cloud[sharp]) for _, p in parts])
    best = np.argmin(dist, axis=0)  # first minimum = lower part index
    keep = np.ones(len(sharp), dtype=bool) if max_distance is None else dist[best, np.arange(len(sharp))] <= max_distance
    return [np.sort(np.r_[s, sharp[keep & (best == j)]]) for j, s in enumerate(segs)]


@dataclass(frozen=True, eq=False)
class PgTrace:
    """Intermediate results kept for inspection and tests."""

    normals: FloatArray
    variation: FloatArray
    sharp: NDArray[np.bool_]
    regions: list[IntArray]
    classes: list[InvarianceClass] = field(default_factory=list)


def fit_pg(cloud: ArrayLike, config: PgConfig = PgConfig(), trace: list | None = None) -> GroundTruthModel:
    """Segment ``cloud`` with the primitive-growing pipeline.

    Returns a model whose segments carry fitted parametric and implicit
    forms. Pass a list as ``trace`` to receive a :class:`PgTrace`.
    """
    pts = np.ascontiguousarray(cloud, dtype=np.float64)
    if len(pts) <= config.k:
        raise ValueError("cloud must have more than k points")
    if bounding_box_diagonal(pts) == 0:
        raise ValueError("all points coincide")
    rng = np.random.default_rng(config.seed)
    graph = knn(pts, config.k)
    normals, _ = estimate_normals(pts, config.k, graph)
    variation = surface_variation(pts, graph)
    sharp = detect_sharp_edges(variation, config.eta)
    regions = region_grow(pts, graph, sharp, config.seed)
    eps = config.ransac_epsilon * bounding_box_diagonal(pts)
    parts: list[tuple[IntArray, ParametricPrimitive]] = []
    leftovers = []
    classes = []

    def process(regs):
        for reg in regs:
            if len(reg) < max(config.min_segment_size, 6):
                leftovers.append(reg)
                classes.append(None)
                continue
            cls = slippage_analysis(pts[reg], normals[reg], config.slippage_ratio).invariance
            classes.append(cls)
            got, rest = refine_segment(pts, normals, graph, reg, cls, config, eps, rng)
            parts.extend((s, p) for s, p in got if len(s) >= config.min_segment_size)
            leftovers.extend(s for s, p in got if len(s) < config.min_segment_size)
            leftovers.append(rest)

    process(regions)
    # second pass: sharp points that no fitted surface explains (e.g. a small
    # curved part whose every point ranks above the flat majority) are grown
    # into regions of their own
    sharp_idx = np.flatnonzero(sharp)
    if parts:
        near = np.min([distance_to_surface(p, pts[sharp_idx]) for _, p in parts], axis=0) <= eps
        far = sharp_idx[~near]
    else:
        far = sharp_idx
    if len(far) >= config.min_segment_size:
        extra_regions = [c for c in graph_components(graph, far) if len(c) >= config.min_segment_size]
        regions = regions + extra_regions
        process(extra_regions)
    taken = np.concatenate([s for s, _ in parts]) if parts else np.zeros(0, dtype=np.int64)
    segs = assign_sharp_points(parts, np.setdiff1d(sharp_idx, taken), pts)
    if leftovers:
        extra = np.setdiff1d(np.concatenate(leftovers), sharp_idx)
        segs = assign_sharp_points(list(zip(segs, [p for _, p in parts])), extra, pts, max_distance=2 * eps)
    prims = [p for _, p in parts]
    if trace is not None:
        trace.append(PgTrace(normals, variation, sharp, regions, classes))
    return GroundTruthModel(
        pts,
        tuple(segs),
        tuple(prims),
        tuple(parametric_to_implicit(p) for p in prims),
        {"method": "pg"},
    )
