"""Hough-transform primitive fitting in discretized parameter spaces.

Each family has a reduced parameterization voted in stages (a direct
5-7 dimensional accumulator is out of reach):

* plane: normal direction ``(theta, phi)`` and signed offset ``rho``, every
  orientation cell voted by every point;
* sphere: center and radius ``(cx, cy, cz, r)``, voted along normal lines;
* cylinder: axis direction from the Gauss map (normals lie on a great
  circle), then center and radius ``(o1, o2, r)`` of the projected circles;
* cone: axis direction and half-angle ``(theta, phi, alpha)`` from the
  normal cone, then the axis position ``(o1, o2)`` where projected normal
  lines meet, then apex height and half-angle ``(t, alpha)``;
* torus: axis line ``(theta, phi, o1, o2)`` met by all normal lines, then
  the meridian circle ``(R, z0, r)``.

Directions use ``d = (sin t cos p, sin t sin p, cos t)`` with
``theta in [0, pi]`` and ``phi in [0, pi)``, which covers every unsigned
direction. Positions ``(o1, o2)`` are coordinates in the frame
``orthonormal_frame(d)`` relative to the region origin.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dataset import GroundTruthModel
from .fitting import MAX_HALF_ANGLE, MIN_HALF_ANGLE, refine
from .geometry import (
    GeometryError,
    ParametricPrimitive,
    PrimitiveKind,
    bounding_box_diagonal,
    distance_to_surface,
    make_cone,
    make_cylinder,
    make_plane,
    make_sphere,
    make_torus,
    normal_near,
    orthonormal_frame,
    parametric_to_implicit,
)
from .neighbors import estimate_normals, graph_components, knn
from .persistence import persistent_peaks

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

# accumulator dimensionality of the first voting stage
STAGE_DIMS = {
    PrimitiveKind.PLANE: 3,
    PrimitiveKind.SPHERE: 3,
    PrimitiveKind.CYLINDER: 2,
    PrimitiveKind.CONE: 3,
    PrimitiveKind.TORUS: 4,
}
# length of the full reduced parameter vector given to candidate_from_peak
REDUCED_DIMS = {
    PrimitiveKind.PLANE: 3,
    PrimitiveKind.SPHERE: 4,
    PrimitiveKind.CYLINDER: 5,
    PrimitiveKind.CONE: 6,
    PrimitiveKind.TORUS: 7,
}


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamRegion:
    """Box of parameter space split into cells.

    ``axes`` holds one ``(low, high, cells)`` triple per dimension; ``origin``
    is the reference point for offsets and positions. ``sweep`` is an extra
    axis that votes range over but that is summed out of the grid (the
    sphere radius).
    """

    family: PrimitiveKind
    axes: tuple[tuple[float, float, int], ...]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sweep: tuple[float, float, int] | None = None

    def __post_init__(self) -> None:
        if (self.family is PrimitiveKind.SPHERE) != (self.sweep is not None):
            raise ValueError("sphere regions, and only they, need a radius sweep")
        for lo, hi, n in self.axes + ((self.sweep,) if self.sweep else ()):
            if not lo < hi:
                raise ValueError("region axes need low < high")
            if int(n) != n or n < 1:
                raise ValueError("region axes need at least one cell")
        if len(self.axes) != STAGE_DIMS[self.family]:
            raise ValueError(f"{self.family.value} regions have {STAGE_DIMS[self.family]} axes")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(n) for _, _, n in self.axes)

    @property
    def widths(self) -> FloatArray:
        return np.array([(hi - lo) / n for lo, hi, n in self.axes])

    def center(self, index: tuple[int, ...]) -> tuple[float, ...]:
        return tuple(lo + (i + 0.5) * (hi - lo) / n for i, (lo, hi, n) in zip(index, self.axes))

    @property
    def max_cells_per_vote(self) -> int:
        """Upper bound on the cells one point increments."""
        s = self.shape
        if self.family is PrimitiveKind.PLANE:
            return s[0] * s[1]
        if self.family is PrimitiveKind.SPHERE:
            return 2 * int(self.sweep[2])
        if self.family is PrimitiveKind.CYLINDER:
            return s[0] * s[1]
        if self.family is PrimitiveKind.CONE:
            return s[0] * s[1]
        return s[0] * s[1] * (s[2] + s[3])


@dataclass(frozen=True, eq=False)
class Accumulator:
    region: ParamRegion
    votes: NDArray[np.int64]
    touches: int = 0

    def __post_init__(self) -> None:
        if self.votes.shape != self.region.shape:
            raise ValueError("vote grid does not match the region")
        if (self.votes < 0).any():
            raise ValueError("votes must be non-negative")

    def __sub__(self, other: "Accumulator") -> "Accumulator":
        if other.region != self.region:
            raise ValueError("accumulators over different regions")
        return Accumulator(self.region, self.votes - other.votes, self.touches - other.touches)

    def __add__(self, other: "Accumulator") -> "Accumulator":
        if other.region != self.region:
            raise ValueError("accumulators over different regions")
        return Accumulator(self.region, self.votes + other.votes, self.touches + other.touches)


@dataclass(frozen=True)
class Peak:
    coords: tuple[float, ...]
    height: float
    persistence: float


def _kind(token: str) -> PrimitiveKind:
    # config files name families in any letter case
    return PrimitiveKind.parse(token.strip().capitalize())


@dataclass(frozen=True)
class HtConfig:
    """Settings of the Hough pipeline.

    ``epsilon`` is a fraction of the cloud's bbox diagonal. ``angular_cells``
    and ``length_cells`` resolve most accumulator axes; the 4-D torus axis
    grid and the torus minor radius use ``coarse_cells``. ``torus_samples``
    caps the points voting for torus axes (a fixed subsample).
    """

    angular_cells: int = 64
    length_cells: int = 64
    coarse_cells: int = 32
    epsilon: float = 0.01
    persistence_ratio: float = 0.10
    min_segment_size: int = 20
    max_iterations: int = 40
    families: tuple[str, ...] = ("plane", "cylinder", "cone", "sphere", "torus")
    k: int = 16
    normal_tolerance: float = 10.0
    max_peaks: int = 4
    torus_samples: int = 3000

    def __post_init__(self) -> None:
        object.__setattr__(self, "families", tuple(self.families))
        for f in self.families:
            _kind(f)
        if not 0 < self.epsilon <= 1 or not 0 < self.persistence_ratio <= 1:
            raise ValueError("ratios must lie in (0, 1]")
        if self.min_segment_size < 3:
            raise ValueError("min segment size must be at least 3")
        if min(self.angular_cells, self.length_cells, self.coarse_cells) < 4:
            raise ValueError("need at least 4 cells per axis")
        if self.max_iterations < 1 or self.max_peaks < 1 or self.k < 3:
            raise ValueError("bad iteration, peak or neighbor settings")

    @property
    def kinds(self) -> tuple[PrimitiveKind, ...]:
        return tuple(sorted({_kind(f) for f in self.families}, key=lambda k: k.order))

    @classmethod
    def from_json(cls, path: str | Path) -> "HtConfig":
        return cls(**json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Voting kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _cell(x, lo, hi, n):
    j = int(math.floor((x - lo) / (hi - lo) * n))
    return j if 0 <= j < n else -1


@numba.njit(cache=True)
def _vote_plane(rel, dirs, lo, hi, n, out):
    t = 0
    for i in range(rel.shape[0]):
        for m in range(dirs.shape[0]):
            rho = rel[i, 0] * dirs[m, 0] + rel[i, 1] * dirs[m, 1] + rel[i, 2] * dirs[m, 2]
            j = _cell(rho, lo, hi, n)
            if j >= 0:
                out[m, j] += 1
                t += 1
    return t


@numba.njit(cache=True)
def _vote_great_circle(nrm, dirs, tol, out):
    t = 0
    for i in range(nrm.shape[0]):
        for m in range(dirs.shape[0]):
            if abs(nrm[i, 0] * dirs[m, 0] + nrm[i, 1] * dirs[m, 1] + nrm[i, 2] * dirs[m, 2]) <= tol:
                out[m] += 1
                t += 1
    return t


@numba.njit(cache=True)
def _vote_normal_cone(nrm, dirs, lo, hi, n, out):
    t = 0
    for i in range(nrm.shape[0]):
        for m in range(dirs.shape[0]):
            c = abs(nrm[i, 0] * dirs[m, 0] + nrm[i, 1] * dirs[m, 1] + nrm[i, 2] * dirs[m, 2])
            j = _cell(math.asin(min(c, 1.0)), lo, hi, n)
            if j >= 0:
                out[m, j] += 1
                t += 1
    return t


@numba.njit(cache=True)
def _vote_sphere(pts, nrm, lo, hi, n, rlo, rhi, nr, out):
    # walk both rays of each normal line; a ray meets a cell in one run, and
    # the two rays can only share the cell around the point itself
    t = 0
    for i in range(pts.shape[0]):
        first = -1
        for s in (-1.0, 1.0):
            prev = -1
            for k in range(nr):
                r = rlo + (k + 0.5) * (rhi - rlo) / nr
                a = _cell(pts[i, 0] + s * r * nrm[i, 0], lo[0], hi[0], n[0])
                b = _cell(pts[i, 1] + s * r * nrm[i, 1], lo[1], hi[1], n[1])
                c = _cell(pts[i, 2] + s * r * nrm[i, 2], lo[2], hi[2], n[2])
                if a < 0 or b < 0 or c < 0:
                    continue
                flat = (a * n[1] + b) * n[2] + c
                if s < 0 and k == 0:
                    first = flat
                if flat == prev or (s > 0 and flat == first):
                    continue
                prev = flat
                out[a, b, c] += 1
                t += 1
    return t


@numba.njit(cache=True)
def _raster_line(qx, qy, vx, vy, lo, hi, n, out, m):
    # clip the line q + s v against the box, then visit every cell it
    # crosses exactly once (grid traversal)
    s0, s1 = -1e300, 1e300
    q = (qx, qy)
    v = (vx, vy)
    for a in range(2):
        if abs(v[a]) < 1e-12:
            if q[a] < lo[a] or q[a] >= hi[a]:
                return 0
        else:
            ta = (lo[a] - q[a]) / v[a]
            tb = (hi[a] - q[a]) / v[a]
            s0 = max(s0, min(ta, tb))
            s1 = min(s1, max(ta, tb))
    if s0 > s1:
        return 0
    wx = (hi[0] - lo[0]) / n[0]
    wy = (hi[1] - lo[1]) / n[1]
    sm = s0 + 1e-9 * (s1 - s0)
    ix = min(max(int(math.floor((qx + sm * vx - lo[0]) / wx)), 0), n[0] - 1)
    iy = min(max(int(math.floor((qy + sm * vy - lo[1]) / wy)), 0), n[1] - 1)
    if vx > 1e-12:
        sx, tx, dx = 1, (lo[0] + (ix + 1) * wx - qx) / vx, wx / vx
    elif vx < -1e-12:
        sx, tx, dx = -1, (lo[0] + ix * wx - qx) / vx, -wx / vx
    else:
        sx, tx, dx = 0, 1e300, 1e300
    if vy > 1e-12:
        sy, ty, dy = 1, (lo[1] + (iy + 1) * wy - qy) / vy, wy / vy
    elif vy < -1e-12:
        sy, ty, dy = -1, (lo[1] + iy * wy - qy) / vy, -wy / vy
    else:
        sy, ty, dy = 0, 1e300, 1e300
    t = 0
    while 0 <= ix < n[0] and 0 <= iy < n[1]:
        out[m, ix, iy] += 1
        t += 1
        if tx < ty:
            if tx > s1:
                break
            ix += sx
            tx += dx
        else:
            if ty > s1:
                break
            iy += sy
            ty += dy
    return t


@numba.njit(cache=True)
def _vote_axis_lines(rel, nrm, e1s, e2s, lo, hi, n, min_len, out):
    t = 0
    for i in range(rel.shape[0]):
        for m in range(e1s.shape[0]):
            qx = rel[i, 0] * e1s[m, 0] + rel[i, 1] * e1s[m, 1] + rel[i, 2] * e1s[m, 2]
            qy = rel[i, 0] * e2s[m, 0] + rel[i, 1] * e2s[m, 1] + rel[i, 2] * e2s[m, 2]
            vx = nrm[i, 0] * e1s[m, 0] + nrm[i, 1] * e1s[m, 1] + nrm[i, 2] * e1s[m, 2]
            vy = nrm[i, 0] * e2s[m, 0] + nrm[i, 1] * e2s[m, 1] + nrm[i, 2] * e2s[m, 2]
            ln = math.hypot(vx, vy)
            if ln < min_len:
                continue
            t += _raster_line(qx, qy, vx / ln, vy / ln, lo, hi, n, out, m)
    return t


@numba.njit(cache=True)
def _vote_circles(q, m2, lo, hi, n, out):
    # circle centers q -+ r m for every radius cell: (center_a, center_b, r)
    t = 0
    nr = n[2]
    for i in range(q.shape[0]):
        for k in range(nr):
            r = lo[2] + (k + 0.5) * (hi[2] - lo[2]) / nr
            prev = -1
            for s in (-1.0, 1.0):
                a = _cell(q[i, 0] + s * r * m2[i, 0], lo[0], hi[0], n[0])
                b = _cell(q[i, 1] + s * r * m2[i, 1], lo[1], hi[1], n[1])
                if a < 0 or b < 0:
                    continue
                flat = a * n[1] + b
                if flat == prev:
                    continue
                prev = flat
                out[a, b, k] += 1
                t += 1
    return t


@numba.njit(cache=True)
def _vote_apex(z, rho, lo, hi, n, out):
    # apex height t and half-angle alpha with rho = |z - t| tan(alpha)
    t = 0
    for i in range(z.shape[0]):
        for k in range(n[1]):
            alpha = lo[1] + (k + 0.5) * (hi[1] - lo[1]) / n[1]
            off = rho[i] / math.tan(alpha)
            prev = -1
            for s in (-1.0, 1.0):
                j = _cell(z[i] + s * off, lo[0], hi[0], n[0])
                if j < 0 or j == prev:
                    continue
                prev = j
                out[j, k] += 1
                t += 1
    return t


# ---------------------------------------------------------------------------
# Regions and accumulators
# ---------------------------------------------------------------------------


def direction(theta: float, phi: float) -> FloatArray:
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def _direction_grid(ax_t: tuple[float, float, int], ax_p: tuple[float, float, int]) -> FloatArray:
    t = ax_t[0] + (np.arange(ax_t[2]) + 0.5) * (ax_t[1] - ax_t[0]) / ax_t[2]
    p = ax_p[0] + (np.arange(ax_p[2]) + 0.5) * (ax_p[1] - ax_p[0]) / ax_p[2]
    tt, pp = np.meshgrid(t, p, indexing="ij")
    st = np.sin(tt)
    return np.stack([st * np.cos(pp), st * np.sin(pp), np.cos(tt)], axis=-1).reshape(-1, 3)


def _frames(dirs: FloatArray) -> tuple[FloatArray, FloatArray]:
    fr = [orthonormal_frame(d) for d in dirs]
    return np.array([f[0] for f in fr]), np.array([f[1] for f in fr])


def _bounds(axes, idx):
    return (
        np.array([axes[i][0] for i in idx], dtype=np.float64),
        np.array([axes[i][1] for i in idx], dtype=np.float64),
        np.array([axes[i][2] for i in idx], dtype=np.int64),
    )


def default_region(family: PrimitiveKind, pts: ArrayLike, config: HtConfig = HtConfig()) -> ParamRegion:
    """First-stage region of ``family`` sized to the cloud's bounding box."""
    pts = np.asarray(pts, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    origin = tuple(float(x) for x in 0.5 * (lo + hi))
    diag = float(np.linalg.norm(hi - lo)) or 1.0
    na, nl, nc = config.angular_cells, config.length_cells, config.coarse_cells
    dirs = ((0.0, math.pi, na), (0.0, math.pi, na))
    if family is PrimitiveKind.PLANE:
        axes = dirs + ((-0.5 * diag, 0.5 * diag, nl),)
    elif family is PrimitiveKind.SPHERE:
        m = 0.25 * diag
        axes = tuple((float(lo[i] - m), float(hi[i] + m), nl) for i in range(3))
        return ParamRegion(family, axes, (0.0, 0.0, 0.0), (0.005 * diag, 0.5 * diag, nl))
    elif family is PrimitiveKind.CYLINDER:
        axes = dirs
    elif family is PrimitiveKind.CONE:
        axes = dirs + ((MIN_HALF_ANGLE, MAX_HALF_ANGLE, na),)
    else:
        coarse = ((0.0, math.pi, nc), (0.0, math.pi, nc))
        axes = coarse + ((-0.75 * diag, 0.75 * diag, nc), (-0.75 * diag, 0.75 * diag, nc))
    return ParamRegion(family, axes, origin)


def _great_circle_tol(region: ParamRegion) -> float:
    w = region.widths
    return math.sin(0.75 * math.hypot(w[0], w[1]))


def build_accumulator(pts: ArrayLike, normals: ArrayLike, region: ParamRegion) -> Accumulator:
    """Vote every point into the first-stage accumulator of ``region.family``.

    Each point increments each cell its Hough hypersurface passes through at
    most once. Normals are treated as unsigned.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 3)
    nrm = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot vote an empty cloud")
    if len(nrm) != len(pts):
        raise ValueError("need one normal per point")
    rel = pts - np.asarray(region.origin)
    ax = region.axes
    out = np.zeros(region.shape, dtype=np.int64)
    fam = region.family
    if fam is PrimitiveKind.PLANE:
        dirs = _direction_grid(ax[0], ax[1])
        t = _vote_plane(rel, dirs, ax[2][0], ax[2][1], ax[2][2], out.reshape(-1, ax[2][2]))
    elif fam is PrimitiveKind.SPHERE:
        rlo, rhi, nr = region.sweep
        t = _vote_sphere(rel, nrm, *_bounds(ax, range(3)), rlo, rhi, int(nr), out)
    elif fam is PrimitiveKind.CYLINDER:
        dirs = _direction_grid(ax[0], ax[1])
        t = _vote_great_circle(nrm, dirs, _great_circle_tol(region), out.reshape(-1))
    elif fam is PrimitiveKind.CONE:
        dirs = _direction_grid(ax[0], ax[1])
        t = _vote_normal_cone(nrm, dirs, ax[2][0], ax[2][1], ax[2][2], out.reshape(-1, ax[2][2]))
    else:
        dirs = _direction_grid(ax[0], ax[1])
        e1, e2 = _frames(dirs)
        lo, hi, n = _bounds(ax, (2, 3))
        t = _vote_axis_lines(rel, nrm, e1, e2, lo, hi, n, 0.2, out.reshape(-1, n[0], n[1]))
    return Accumulator(region, out, int(t))


def persistent_maxima(acc: Accumulator, ratio: float) -> list[Peak]:
    """Maxima with persistence above ``ratio * max``, by descending height."""
    return [
        Peak(acc.region.center(p.index), p.height, p.persistence)
        for p in persistent_peaks(acc.votes, ratio)
    ]


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------


def candidate_from_peak(
    peak: Peak, family: PrimitiveKind, origin: ArrayLike = (0.0, 0.0, 0.0)
) -> ParametricPrimitive | None:
    """Primitive from a full reduced parameter vector; ``None`` if ill-formed.

    Reduced parameters: plane ``(theta, phi, rho)``; sphere
    ``(cx, cy, cz, r)``; cylinder ``(theta, phi, o1, o2, r)``; cone
    ``(theta, phi, o1, o2, t, alpha)`` with apex ``o + t d``; torus
    ``(theta, phi, o1, o2, z0, R, r)`` with center ``o + z0 d``.
    """
    c = tuple(float(x) for x in peak.coords)
    if len(c) != REDUCED_DIMS[family]:
        raise ValueError(f"{family.value} peaks carry {REDUCED_DIMS[family]} coordinates")
    o = np.asarray(origin, dtype=np.float64)
    try:
        if family is PrimitiveKind.PLANE:
            d = direction(c[0], c[1])
            return make_plane(o + c[2] * d, d)
        if family is PrimitiveKind.SPHERE:
            return make_sphere(c[:3], c[3])
        d = direction(c[0], c[1])
        e1, e2, _ = orthonormal_frame(d)
        base = o + c[2] * e1 + c[3] * e2
        if family is PrimitiveKind.CYLINDER:
            return make_cylinder(base, d, c[4])
        if family is PrimitiveKind.CONE:
            return make_cone(base + c[4] * d, d, c[5])
        return make_torus(base + c[4] * d, d, c[5], c[6])
    except GeometryError:
        return None


def assign_inliers(
    pts: ArrayLike,
    surf: ParametricPrimitive,
    epsilon: float,
    claimed: ArrayLike | None = None,
    normals: ArrayLike | None = None,
    max_angle: float = 90.0,
    diagonal: float | None = None,
) -> IntArray:
    """Unclaimed points within ``epsilon * diagonal`` of the surface.

    ``diagonal`` defaults to the cloud's bbox diagonal. With ``normals``
    given, points whose normal deviates from the surface normal by more than
    ``max_angle`` degrees (unsigned) are excluded as well.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.int64)
    diag = bounding_box_diagonal(pts) if diagonal is None else diagonal
    ok = distance_to_surface(surf, pts) <= epsilon * diag
    if claimed is not None:
        ok &= ~np.asarray(claimed, dtype=bool)
    if normals is not None and max_angle < 90.0:
        idx = np.flatnonzero(ok)
        cosang = np.abs(np.einsum("ij,ij->i", normal_near(surf, pts[idx]), np.asarray(normals)[idx]))
        ok[idx[cosang < math.cos(math.radians(max_angle))]] = False
    return np.flatnonzero(ok)


def _mfe(pts: FloatArray, p: ParametricPrimitive) -> float:
    diag = bounding_box_diagonal(pts)
    d = float(np.mean(distance_to_surface(p, pts)))
    return d / diag if diag > 0 else d


def select_best_type(pts: ArrayLike, candidates: list[ParametricPrimitive]) -> ParametricPrimitive:
    """Candidate with the lowest MFE on ``pts``; ties by family order."""
    if not candidates:
        raise ValueError("no candidates")
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty subset")
    scored = [(_mfe(pts, c), c.kind.order, i) for i, c in enumerate(candidates)]
    return candidates[min(scored)[2]]


# ---------------------------------------------------------------------------
# Staged search
# ---------------------------------------------------------------------------


@dataclass
class _Context:
    pts: FloatArray
    nrm: FloatArray
    diag: float
    origin: FloatArray
    config: HtConfig
    stage1: dict = field(default_factory=dict)


def _top(acc_votes: NDArray[np.int64], region_like, ratio: float, limit: int, min_height: int) -> list[tuple[tuple[float, ...], float, float]]:
    out = []
    for p in persistent_peaks(acc_votes, ratio, limit=limit):
        if p.height < min_height:
            break
        out.append((region_like(p.index), p.height, p.persistence))
    return out


def _centers(lo: float, hi: float, n: int):
    return lambda i: lo + (i + 0.5) * (hi - lo) / n


def _axis_points(ctx: _Context, d: FloatArray, sin_lo: float, sin_hi: float, unclaimed: IntArray) -> IntArray:
    c = np.abs(ctx.nrm[unclaimed] @ d)
    return unclaimed[(c >= sin_lo) & (c <= sin_hi)]


def _project(ctx: _Context, idx: IntArray, d: FloatArray):
    e1, e2, _ = orthonormal_frame(d)
    rel = ctx.pts[idx] - ctx.origin
    q = np.stack([rel @ e1, rel @ e2], axis=1)
    m = np.stack([ctx.nrm[idx] @ e1, ctx.nrm[idx] @ e2], axis=1)
    return q, m, rel @ d


def _cylinder_stage(ctx: _Context, peak, unclaimed: IntArray) -> list[Peak]:
    cfg = ctx.config
    th, ph = peak[0]
    d = direction(th, ph)
    idx = _axis_points(ctx, d, 0.0, math.sin(math.radians(5.0)), unclaimed)
    if len(idx) < cfg.min_segment_size:
        return []
    q, m, _ = _project(ctx, idx, d)
    ln = np.linalg.norm(m, axis=1)
    m = m / ln[:, None]
    h = 0.75 * ctx.diag
    n = cfg.length_cells
    lo = np.array([-h, -h, 0.005 * ctx.diag])
    hi = np.array([h, h, 0.5 * ctx.diag])
    out = np.zeros((n, n, n), dtype=np.int64)
    _vote_circles(q, m, lo, hi, np.array([n, n, n]), out)
    f = [_centers(lo[i], hi[i], n) for i in range(3)]
    return [
        Peak((th, ph, f[0](i[0]), f[1](i[1]), f[2](i[2])), ht, pers)
        for i, ht, pers in _top(out, lambda x: x, cfg.persistence_ratio, 2, cfg.min_segment_size)
    ]


def _cone_stage(ctx: _Context, peak, unclaimed: IntArray) -> list[Peak]:
    cfg = ctx.config
    th, ph, alpha = peak[0]
    d = direction(th, ph)
    tol = math.radians(4.0)
    idx = _axis_points(ctx, d, math.sin(max(alpha - tol, 0.0)), math.sin(min(alpha + tol, math.pi / 2)), unclaimed)
    if len(idx) < cfg.min_segment_size:
        return []
    q, m, z = _project(ctx, idx, d)
    ln = np.linalg.norm(m, axis=1)
    keep = ln > 0.2
    q, m, z, idx = q[keep], m[keep] / ln[keep, None], z[keep], idx[keep]
    n = cfg.length_cells
    h = 0.75 * ctx.diag
    lo2, hi2, n2 = np.array([-h, -h]), np.array([h, h]), np.array([n, n])
    grid = np.zeros((1, n, n), dtype=np.int64)
    for i in range(len(q)):
        _raster_line(q[i, 0], q[i, 1], m[i, 0], m[i, 1], lo2, hi2, n2, grid, 0)
    f = _centers(-h, h, n)
    found = []
    for (a, b), _, _ in _top(grid[0], lambda x: x, cfg.persistence_ratio, 2, cfg.min_segment_size):
        o = np.array([f(a), f(b)])
        # points whose projected normal line passes near the axis
        rel = o - q
        off = np.abs(rel[:, 0] * m[:, 1] - rel[:, 1] * m[:, 0])
        near = off <= 2.0 * (2 * h / n)
        if near.sum() < cfg.min_segment_size:
            continue
        rho = np.linalg.norm(q[near] - o, axis=1)
        lo = np.array([-ctx.diag, MIN_HALF_ANGLE])
        hi = np.array([ctx.diag, MAX_HALF_ANGLE])
        acc = np.zeros((n, cfg.angular_cells), dtype=np.int64)
        _vote_apex(z[near], rho, lo, hi, np.array([n, cfg.angular_cells]), acc)
        ft, fa = _centers(lo[0], hi[0], n), _centers(lo[1], hi[1], cfg.angular_cells)
        for (i, j), ht, pers in _top(acc, lambda x: x, cfg.persistence_ratio, 1, cfg.min_segment_size):
            found.append(Peak((th, ph, o[0], o[1], ft(i), fa(j)), ht, pers))
    return found


def _sphere_stage(ctx: _Context, peak, unclaimed: IntArray) -> list[Peak]:
    cfg = ctx.config
    c = np.asarray(peak[0])
    rel = ctx.pts[unclaimed] - c
    r = np.linalg.norm(rel, axis=1)
    ok = r > 0
    cosang = np.zeros(len(r))
    cosang[ok] = np.abs(np.einsum("ij,ij->i", rel[ok], ctx.nrm[unclaimed][ok])) / r[ok]
    keep = cosang >= math.cos(math.radians(10.0))
    if keep.sum() < cfg.min_segment_size:
        return []
    rlo, rhi, nr = ctx.stage1[PrimitiveKind.SPHERE].region.sweep
    acc = np.histogram(r[keep], bins=int(nr), range=(rlo, rhi))[0].astype(np.int64)
    f = _centers(rlo, rhi, int(nr))
    return [
        Peak((*peak[0], f(i[0])), ht, pers)
        for i, ht, pers in _top(acc, lambda x: x, cfg.persistence_ratio, 2, cfg.min_segment_size)
    ]


def _torus_stage(ctx: _Context, peak, unclaimed: IntArray) -> list[Peak]:
    cfg = ctx.config
    th, ph, o1, o2 = peak[0]
    d = direction(th, ph)
    e1, e2, _ = orthonormal_frame(d)
    axis_pt = ctx.origin + o1 * e1 + o2 * e2
    rel = ctx.pts[unclaimed] - axis_pt
    z = rel @ d
    perp = rel - np.outer(z, d)
    rho = np.linalg.norm(perp, axis=1)
    ok = rho > 1e-12
    radial = np.zeros_like(perp)
    radial[ok] = perp[ok] / rho[ok, None]
    nr = ctx.nrm[unclaimed]
    m = np.stack([np.einsum("ij,ij->i", nr, radial), nr @ d], axis=1)
    # keep points whose normal line nearly meets the axis
    cross = np.abs(np.einsum("ij,j->i", np.cross(radial, nr), d))
    keep = ok & (cross < math.sin(math.radians(10.0)))
    if keep.sum() < cfg.min_segment_size:
        return []
    m = m[keep] / np.linalg.norm(m[keep], axis=1)[:, None]
    q = np.stack([rho[keep], z[keep]], axis=1)
    n = cfg.length_cells
    lo = np.array([0.0, -0.75 * ctx.diag, 0.002 * ctx.diag])
    hi = np.array([0.75 * ctx.diag, 0.75 * ctx.diag, 0.25 * ctx.diag])
    cells = np.array([n, n, cfg.coarse_cells])
    acc = np.zeros(tuple(cells), dtype=np.int64)
    _vote_circles(q, m, lo, hi, cells, acc)
    f = [_centers(lo[i], hi[i], cells[i]) for i in range(3)]
    return [
        Peak((th, ph, o1, o2, f[1](i[1]), f[0](i[0]), f[2](i[2])), ht, pers)
        for i, ht, pers in _top(acc, lambda x: x, cfg.persistence_ratio, 2, cfg.min_segment_size)
    ]


def _full_peaks(ctx: _Context, family: PrimitiveKind, unclaimed: IntArray) -> list[Peak]:
    acc: Accumulator = ctx.stage1[family]
    region = acc.region
    cfg = ctx.config
    first = _top(acc.votes, region.center, cfg.persistence_ratio, cfg.max_peaks, cfg.min_segment_size)
    if family is PrimitiveKind.PLANE:
        return [Peak(c, h, p) for c, h, p in first]
    stage = {PrimitiveKind.SPHERE: _sphere_stage, PrimitiveKind.CYLINDER: _cylinder_stage, PrimitiveKind.CONE: _cone_stage, PrimitiveKind.TORUS: _torus_stage}[family]
    out = []
    for pk in first:
        out.extend(stage(ctx, pk, unclaimed))
    return out


def _refined(ctx: _Context, cand: ParametricPrimitive, unclaimed_mask: NDArray[np.bool_], tol: float) -> ParametricPrimitive | None:
    eps = ctx.config.epsilon * ctx.diag
    for t in (tol, 2.0 * eps):
        sup = assign_inliers(
            ctx.pts, cand, t / ctx.diag, ~unclaimed_mask, ctx.nrm, ctx.config.normal_tolerance, ctx.diag
        )
        if len(sup) < max(ctx.config.min_segment_size, 7):
            return None
        better = refine(cand, ctx.pts[sup], scale=eps, max_points=800, max_nfev=40)
        if better is None:
            return None
        cand = better
    return cand


def _vote_tolerance(ctx: _Context, family: PrimitiveKind) -> float:
    """Distance tolerance matching the quantization of a family's peaks."""
    cfg = ctx.config
    ang = math.pi / cfg.angular_cells
    length = 1.5 * ctx.diag / cfg.length_cells
    base = {
        PrimitiveKind.PLANE: ctx.diag / cfg.length_cells + 0.5 * ctx.diag * ang,
        PrimitiveKind.SPHERE: length,
        PrimitiveKind.CYLINDER: length + 0.5 * ctx.diag * ang,
        PrimitiveKind.CONE: length + 0.5 * ctx.diag * ang,
        PrimitiveKind.TORUS: length + 0.5 * ctx.diag * ang,
    }[family]
    return max(base, 3.0 * cfg.epsilon * ctx.diag)


def fit_ht(cloud: ArrayLike, config: HtConfig = HtConfig()) -> GroundTruthModel:
    """Greedy Hough segmentation of ``cloud``.

    Every iteration collects persistent peaks of each family over the
    unclaimed points, turns them into least-squares-refined candidates and
    claims the largest connected inlier set among them; the surviving
    candidates then compete on that set by MFE. First-stage votes of claimed
    points are subtracted (accumulators are additive over point sets).
    Leftover points within twice the inlier distance of a primitive join the
    nearest one; the rest stay unsegmented.
    """
    pts = np.ascontiguousarray(cloud, dtype=np.float64)
    if len(pts) < config.min_segment_size:
        raise ValueError("cloud is smaller than the minimum segment size")
    diag = bounding_box_diagonal(pts)
    if diag == 0:
        raise ValueError("all points coincide")
    k = min(config.k, len(pts) - 1)
    graph = knn(pts, k)
    nrm, _ = estimate_normals(pts, k, graph)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ctx = _Context(pts, nrm, diag, 0.5 * (lo + hi), config)
    kinds = config.kinds
    # torus axes are voted by a fixed subsample; all other families by every point
    voters = {fam: np.ones(len(pts), dtype=bool) for fam in kinds}
    if PrimitiveKind.TORUS in voters and len(pts) > config.torus_samples:
        sub = np.random.default_rng(0).choice(len(pts), config.torus_samples, replace=False)
        voters[PrimitiveKind.TORUS] = np.zeros(len(pts), dtype=bool)
        voters[PrimitiveKind.TORUS][sub] = True
    for fam in kinds:
        ctx.stage1[fam] = build_accumulator(pts[voters[fam]], nrm[voters[fam]], default_region(fam, pts, config))
    eps = config.epsilon
    unclaimed = np.ones(len(pts), dtype=bool)
    segments: list[IntArray] = []
    prims: list[ParametricPrimitive] = []
    for _ in range(config.max_iterations):
        free = np.flatnonzero(unclaimed)
        if len(free) < config.min_segment_size:
            break
        best = None
        survivors = []
        for fam in kinds:
            origin = ctx.stage1[fam].region.origin
            for pk in _full_peaks(ctx, fam, free):
                cand = candidate_from_peak(pk, fam, origin)
                if cand is None:
                    continue
                cand = _refined(ctx, cand, unclaimed, _vote_tolerance(ctx, fam))
                if cand is None:
                    continue
                inl = assign_inliers(pts, cand, eps, ~unclaimed, nrm, config.normal_tolerance, diag)
                if len(inl) < config.min_segment_size:
                    continue
                comp = graph_components(graph, inl)[0]
                survivors.append(cand)
                key = (len(comp), -_mfe(pts[comp], cand))
                if best is None or key > best[0]:
                    best = (key, comp)
        if best is None or len(best[1]) < config.min_segment_size:
            break
        comp = best[1]
        winner = select_best_type(pts[comp], survivors)
        segments.append(comp)
        prims.append(winner)
        unclaimed[comp] = False
        for fam in kinds:
            gone = comp[voters[fam][comp]]
            if len(gone):
                st = ctx.stage1[fam]
                ctx.stage1[fam] = st - build_accumulator(pts[gone], nrm[gone], st.region)
    segments, prims = _finish(pts, segments, prims, unclaimed, 2.0 * eps * diag, eps * diag)
    return GroundTruthModel(
        pts,
        tuple(segments),
        tuple(prims),
        tuple(parametric_to_implicit(p) for p in prims),
        {"method": "ht"},
    )


def _finish(pts, segments, prims, unclaimed, reach, eps):
    """Join leftovers to the nearest primitive within ``reach``; refit."""
    if not segments:
        return [], []
    free = np.flatnonzero(unclaimed)
    segs = [np.asarray(s) for s in segments]
    if len(free):
        dist = np.stack([distance_to_surface(p, pts[free]) for p in prims])
        near = np.argmin(dist, axis=0)
        ok = dist[near, np.arange(len(free))] <= reach
        segs = [np.sort(np.r_[s, free[ok & (near == j)]]) for j, s in enumerate(segs)]
    out = []
    for s, p in zip(segs, prims):
        q = refine(p, pts[s], scale=eps)
        out.append(q if q is not None and _mfe(pts[s], q) <= _mfe(pts[s], p) else p)
    return segs, out
