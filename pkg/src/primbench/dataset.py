"""Synthetic benchmark models and the four-file ground-truth format.

A model directory holds::

    points.txt      File 1, one ``x y z`` triple per line
    segments.txt    File 2, ``PrimitiveK:=[i1 i2 ... in]`` (0-based indices)
    parametric.txt  File 3, ``PrimitiveK:=[Kind, [p1 ... pm]]``
    implicit.txt    File 4, ``PrimitiveK:=[Kind, [c1 ... cm]]``

``K`` numbers the segments from 1 in file order. Floats are written with 17
significant digits so that a write/read cycle is lossless.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import shapely
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .geometry import (
    KINDS,
    GeometryError,
    ImplicitPrimitive,
    ParametricPrimitive,
    PrimitiveKind,
    TrimRegion,
    area_element,
    bounding_box_diagonal,
    make_cone,
    make_cylinder,
    make_sphere,
    make_torus,
    parametric_to_implicit,
    sample_surface,
    surface_normal,
    transform,
)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

POINTS_FILE = "points.txt"
SEGMENTS_FILE = "segments.txt"
PARAMETRIC_FILE = "parametric.txt"
IMPLICIT_FILE = "implicit.txt"
FILE_NAMES = (POINTS_FILE, SEGMENTS_FILE, PARAMETRIC_FILE, IMPLICIT_FILE)

TWO_PI = 2 * math.pi


class DatasetError(ValueError):
    """Malformed file, inconsistent model or infeasible generator request."""


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def _index_array(idx: ArrayLike) -> IntArray:
    arr = np.asarray(idx, dtype=np.int64).reshape(-1)
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Segmentation:
    """A partition proposal: index sets over a cloud of ``n_points``.

    Points in no segment are unsegmented.
    """

    n_points: int
    segments: tuple[IntArray, ...]

    def __post_init__(self) -> None:
        segs = tuple(_index_array(s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        for k, s in enumerate(segs):
            if s.size and (s.min() < 0 or s.max() >= self.n_points):
                raise DatasetError(f"segment {k + 1} references a point outside the cloud")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def unsegmented(self) -> IntArray:
        mask = np.ones(self.n_points, dtype=bool)
        for s in self.segments:
            mask[s] = False
        return np.flatnonzero(mask)

    def labels(self) -> IntArray:
        """Per-point segment number, -1 for unsegmented (last writer wins)."""
        lab = np.full(self.n_points, -1, dtype=np.int64)
        for k, s in enumerate(self.segments):
            lab[s] = k
        return lab


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """Point cloud plus labeled segments and their primitive forms.

    ``parametric`` and ``implicit`` are either ``None`` (file absent) or one
    entry per segment, where an entry may itself be ``None``.
    """

    cloud: FloatArray
    segments: tuple[IntArray, ...]
    parametric: tuple[ParametricPrimitive | None, ...] | None = None
    implicit: tuple[ImplicitPrimitive | None, ...] | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        cloud = np.array(self.cloud, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(cloud)):
            raise DatasetError("cloud coordinates must be finite")
        cloud.setflags(write=False)
        object.__setattr__(self, "cloud", cloud)
        object.__setattr__(self, "segments", Segmentation(len(cloud), tuple(self.segments)).segments)
        for name in ("parametric", "implicit"):
            forms = getattr(self, name)
            if forms is not None:
                forms = tuple(forms)
                if len(forms) != len(self.segments):
                    raise DatasetError(f"{name} forms must match the segments one to one")
                object.__setattr__(self, name, forms)

    @property
    def n_points(self) -> int:
        return len(self.cloud)

    @property
    def segmentation(self) -> Segmentation:
        return Segmentation(self.n_points, self.segments)

    @property
    def kinds(self) -> list[PrimitiveKind | None]:
        if self.parametric is None:
            return [None] * len(self.segments)
        return [None if p is None else p.kind for p in self.parametric]


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _token(x: float | str) -> str:
    return x if isinstance(x, str) else format_float(x)


def format_segment_line(k: int, indices: Sequence[int | str]) -> str:
    return f"Primitive{k}:=[" + " ".join(str(i) for i in indices) + "]"


def format_primitive_body(kind: PrimitiveKind | str, values: Sequence[float | str]) -> str:
    name = kind.value if isinstance(kind, PrimitiveKind) else kind
    return f"[{name}, [" + " ".join(_token(v) for v in values) + "]]"


def format_primitive_line(k: int, kind: PrimitiveKind | str, values: Sequence[float | str]) -> str:
    return f"Primitive{k}:=" + format_primitive_body(kind, values)


def _write_lines(path: Path, lines: list[str]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def write_ground_truth(m: GroundTruthModel, directory: str | Path) -> list[Path]:
    """Write Files 1-4; File 3/4 only when the model carries those forms."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    _write_lines(d / POINTS_FILE, [" ".join(format_float(c) for c in p) for p in m.cloud])
    _write_lines(
        d / SEGMENTS_FILE, [format_segment_line(k, s.tolist()) for k, s in enumerate(m.segments, start=1)]
    )
    written += [d / POINTS_FILE, d / SEGMENTS_FILE]
    for name, forms, attr in ((PARAMETRIC_FILE, m.parametric, "params"), (IMPLICIT_FILE, m.implicit, "coeffs")):
        if forms is None:
            continue
        lines = [
            format_primitive_line(k, f.kind, getattr(f, attr))
            for k, f in enumerate(forms, start=1)
            if f is not None
        ]
        _write_lines(d / name, lines)
        written.append(d / name)
    return written


_SEGMENT_RE = re.compile(r"^Primitive(\d+):=\[([^\]]*)\]$")
# the closing bracket of the outer list is optional on read
_PRIMITIVE_RE = re.compile(r"^Primitive(\d+):=\[\s*([A-Za-z]+)\s*,\s*\[([^\]]*)\]\]?$")


def _content_lines(path: Path) -> list[tuple[int, str]]:
    with open(path, encoding="ascii") as fh:
        return [(no, line.strip()) for no, line in enumerate(fh, start=1) if line.strip()]


def read_points(path: str | Path) -> FloatArray:
    path = Path(path)
    rows = []
    for no, line in _content_lines(path):
        parts = line.split()
        if len(parts) != 3:
            raise DatasetError(f"{path.name}:{no}: expected three coordinates")
        try:
            rows.append([float(t) for t in parts])
        except ValueError as exc:
            raise DatasetError(f"{path.name}:{no}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def read_segments(path: str | Path, n_points: int, index_base: int = 0) -> list[IntArray]:
    path = Path(path)
    if index_base not in (0, 1):
        raise DatasetError("index base must be 0 or 1")
    segs = []
    for no, line in _content_lines(path):
        m = _SEGMENT_RE.match(line)
        if m is None:
            raise DatasetError(f"{path.name}:{no}: malformed segment line")
        if int(m.group(1)) != len(segs) + 1:
            raise DatasetError(f"{path.name}:{no}: primitives must be numbered 1, 2, ... in order")
        try:
            idx = np.array([int(t) for t in m.group(2).split()], dtype=np.int64) - index_base
        except ValueError:
            raise DatasetError(f"{path.name}:{no}: non-integer index") from None
        if idx.size and (idx.min() < 0 or idx.max() >= n_points):
            raise DatasetError(f"{path.name}:{no}: index out of range for {n_points} points")
        if np.unique(idx).size != idx.size:
            raise DatasetError(f"{path.name}:{no}: repeated index")
        segs.append(idx)
    return segs


def _read_forms(path: Path, n_segments: int, build: Callable[[PrimitiveKind, FloatArray], object]) -> list:
    forms: list = [None] * n_segments
    for no, line in _content_lines(path):
        m = _PRIMITIVE_RE.match(line)
        if m is None:
            raise DatasetError(f"{path.name}:{no}: malformed primitive line")
        k = int(m.group(1))
        if not 1 <= k <= n_segments:
            raise DatasetError(f"{path.name}:{no}: Primitive{k} has no segment")
        try:
            kind = PrimitiveKind.parse(m.group(2))
            values = np.array([float(t) for t in m.group(3).split()])
            forms[k - 1] = build(kind, values)
        except (GeometryError, ValueError) as exc:
            raise DatasetError(f"{path.name}:{no}: {exc}") from None
    return forms


def read_ground_truth(directory: str | Path, index_base: int = 0) -> GroundTruthModel:
    """Parse a model directory; Files 3 and 4 are optional."""
    d = Path(directory)
    for name in (POINTS_FILE, SEGMENTS_FILE):
        if not (d / name).is_file():
            raise DatasetError(f"{d}: missing {name}")
    cloud = read_points(d / POINTS_FILE)
    segs = read_segments(d / SEGMENTS_FILE, len(cloud), index_base)
    par = imp = None
    if (d / PARAMETRIC_FILE).is_file():
        par = _read_forms(d / PARAMETRIC_FILE, len(segs), ParametricPrimitive)
    if (d / IMPLICIT_FILE).is_file():
        imp = _read_forms(d / IMPLICIT_FILE, len(segs), ImplicitPrimitive)
    return GroundTruthModel(cloud, tuple(segs), par, imp)


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """What kind of models to draw.

    Attributes
    ----------
    n_primitives : (lo, hi)
        Inclusive range of segment counts per model.
    kind_weights : 5 weights
        Relative preference for Plane, Cylinder, Cone, Sphere, Torus. A zero
        weight excludes the kind.
    n_points : (lo, hi)
        Inclusive range of points per model.
    missing_fraction : float
        Probability that a model gets holes punched into it.
    hole_count, hole_radius : ranges
        Number of holes and their radius as a fraction of the bbox diagonal.
    noise : float
        Gaussian displacement along the normal, sigma as a fraction of the
        bbox diagonal.
    seed : int
        Base seed combined with the per-model seed.
    """

    n_primitives: tuple[int, int] = (5, 15)
    kind_weights: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)
    n_points: tuple[int, int] = (8000, 12000)
    missing_fraction: float = 0.0
    hole_count: tuple[int, int] = (1, 3)
    hole_radius: tuple[float, float] = (0.02, 0.05)
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.n_primitives
        if not 1 <= lo <= hi:
            raise DatasetError("primitive count range must satisfy 1 <= lo <= hi")
        if len(self.kind_weights) != len(KINDS) or min(self.kind_weights) < 0 or max(self.kind_weights) <= 0:
            raise DatasetError("kind weights must be five non-negative numbers, not all zero")
        if not 1 <= self.n_points[0] <= self.n_points[1]:
            raise DatasetError("point count range must satisfy 1 <= lo <= hi")
        if not 0 <= self.missing_fraction <= 1:
            raise DatasetError("missing fraction must lie in [0, 1]")
        if not 0 <= self.hole_count[0] <= self.hole_count[1]:
            raise DatasetError("bad hole count range")
        if not 0 < self.hole_radius[0] <= self.hole_radius[1] <= 1:
            raise DatasetError("hole radius range must lie in (0, 1]")
        if not 0 <= self.noise <= 1:
            raise DatasetError("noise must lie in [0, 1]")

    def weight(self, kind: PrimitiveKind) -> float:
        return float(self.kind_weights[kind.order])


@dataclass(frozen=True, eq=False)
class Part:
    """A trimmed primitive patch awaiting sampling."""

    primitive: ParametricPrimitive
    trim: TrimRegion
    mask: Callable[[FloatArray, FloatArray], NDArray[np.bool_]] | None = None

    def area(self, grid: int = 200) -> float:
        t = self.trim
        du = (t.u_max - t.u_min) / grid
        dv = (t.v_max - t.v_min) / grid
        u, v = np.meshgrid(t.u_min + du * (np.arange(grid) + 0.5), t.v_min + dv * (np.arange(grid) + 0.5))
        w = area_element(self.primitive, u, v)
        if self.mask is not None:
            w = w * self.mask(u, v)
        return float(w.sum() * du * dv)


def _plane(origin: ArrayLike, a: ArrayLike, b: ArrayLike) -> ParametricPrimitive:
    return ParametricPrimitive(
        PrimitiveKind.PLANE, np.concatenate([np.asarray(a, float), np.asarray(b, float), np.asarray(origin, float)])
    )


def _disk_mask(r_in: float, r_out: float, cx: float = 0.0, cy: float = 0.0):
    def mask(u, v):
        r2 = (u - cx) ** 2 + (v - cy) ** 2
        return (r2 >= r_in * r_in) & (r2 <= r_out * r_out)

    return mask


def _outside_circles(circles: list[tuple[float, float, float]], inner=None):
    def mask(u, v):
        keep = np.ones(np.shape(u), dtype=bool) if inner is None else inner(u, v)
        for cx, cy, r in circles:
            keep &= (u - cx) ** 2 + (v - cy) ** 2 > r * r
        return keep

    return mask


EZ = np.array([0.0, 0.0, 1.0])
EX = np.array([1.0, 0.0, 0.0])
EY = np.array([0.0, 1.0, 0.0])


def _annulus(z: float, r_in: float, r_out: float, up: bool) -> Part:
    b = EY if up else -EY
    return Part(_plane([0, 0, z], EX, b), TrimRegion(-r_out, r_out, -r_out, r_out), _disk_mask(r_in, r_out))


def _chamfer(z_lo: float, z_hi: float, r_lo: float, r_hi: float) -> Part:
    """Conical band between radius ``r_lo`` at ``z_lo`` and ``r_hi`` at ``z_hi``."""
    slope = (r_hi - r_lo) / (z_hi - z_lo)
    if slope < 0:  # narrowing upwards: apex above, axis pointing down
        z_apex = z_lo + r_lo / -slope
        axis = -EZ
        v0, v1 = z_apex - z_hi, z_apex - z_lo
    else:
        z_apex = z_lo - r_lo / slope
        axis = EZ
        v0, v1 = z_lo - z_apex, z_hi - z_apex
    cone = make_cone([0, 0, z_apex], axis, math.atan(abs(slope)))
    return Part(cone, TrimRegion(0.0, TWO_PI, v0, v1))


def _fillet(z_c: float, ring: float, r: float, v0: float, v1: float, cx: float = 0.0, cy: float = 0.0) -> Part:
    return Part(make_torus([cx, cy, z_c], EZ, ring, r), TrimRegion(0.0, TWO_PI, v0, v1))


class _Builder:
    """Random template instances in a local frame."""

    def __init__(self, spec: GeneratorSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        w = np.array(spec.kind_weights, dtype=float)
        self.rel = w / w.max()

    def want(self, kind: PrimitiveKind, base: float = 0.5) -> bool:
        r = self.rel[kind.order]
        return r > 0 and self.rng.uniform() < min(0.9, base * (0.5 + r))

    # -- 1 and 2 primitive models -------------------------------------------------
    def single(self) -> list[Part]:
        kinds = [k for k in KINDS if self.rel[k.order] > 0]
        p = self.rel[[k.order for k in kinds]]
        kind = kinds[self.rng.choice(len(kinds), p=p / p.sum())]
        rng = self.rng
        if kind is PrimitiveKind.PLANE:
            s = rng.uniform(2, 6)
            return [Part(_plane([0, 0, 0], EX, EY), TrimRegion(-s / 2, s / 2, -s / 2, s / 2))]
        if kind is PrimitiveKind.CYLINDER:
            r = rng.uniform(0.5, 2)
            return [Part(make_cylinder([0, 0, 0], EZ, r), TrimRegion(0, TWO_PI, 0, rng.uniform(1, 4) * r))]
        if kind is PrimitiveKind.CONE:
            r0, r1 = sorted(rng.uniform(0.3, 2.5, 2))
            return [_chamfer(0.0, rng.uniform(1, 3), r1 + 0.3, r0)]
        if kind is PrimitiveKind.SPHERE:
            return [Part(make_sphere([0, 0, 0], rng.uniform(0.5, 3)), TrimRegion(0, TWO_PI, -math.pi / 2, math.pi / 2))]
        big = rng.uniform(1, 3)
        return [_fillet(0.0, big, big * rng.uniform(0.2, 0.6), 0.0, TWO_PI)]

    def sphere_on_plane(self) -> list[Part]:
        rng = self.rng
        rs = rng.uniform(0.8, 1.5)
        depth = rng.uniform(0.2, 0.6) * rs  # sphere center below the plane
        rho = math.sqrt(rs * rs - depth * depth)
        s = rng.uniform(3, 5) * rs
        plane = Part(_plane([0, 0, 0], EX, EY), TrimRegion(-s, s, -s, s), _outside_circles([(0, 0, rho)]))
        cap = Part(make_sphere([0, 0, -depth], rs), TrimRegion(0, TWO_PI, math.asin(depth / rs), math.pi / 2))
        return [plane, cap]

    # -- revolved profile ---------------------------------------------------------
    def revolved(self) -> list[Part]:
        rng = self.rng
        steps = int(rng.integers(1, 4))
        radii = np.sort(rng.uniform(0.6, 3.0, steps + 1))[::-1]
        # enforce visible steps
        for i in range(1, steps + 1):
            radii[i] = min(radii[i], radii[i - 1] - 0.4)
        if radii[-1] < 0.4:
            radii = radii - radii[-1] + 0.5
        heights = rng.uniform(0.8, 2.5, steps + 1)
        zs = np.concatenate([[0.0], np.cumsum(heights)])
        bore = radii[-1] * rng.uniform(0.25, 0.55) if self.want(PrimitiveKind.CYLINDER, 0.3) else 0.0
        parts: list[Part] = []
        lo = np.zeros(steps + 1)  # usable z-range of each cylinder section
        hi = np.zeros(steps + 1)
        lo[:] = zs[:-1]
        hi[:] = zs[1:]
        bottom_out = radii[0]
        if self.want(PrimitiveKind.CONE, 0.3):
            c = min(0.35 * heights[0], 0.3 * (radii[0] - bore))
            parts.append(_chamfer(0.0, c, radii[0] - c, radii[0]))
            lo[0] = c
            bottom_out = radii[0] - c
        parts.append(_annulus(0.0, bore, bottom_out, up=False))
        for i in range(steps):
            z = zs[i + 1]
            r_out, r_in = radii[i], radii[i + 1]
            width = r_out - r_in
            a_in, a_out = r_in, r_out
            if self.want(PrimitiveKind.TORUS):
                f = rng.uniform(0.2, 0.4) * min(width, heights[i + 1])
                parts.append(_fillet(z + f, r_in + f, f, math.pi, 1.5 * math.pi))
                lo[i + 1] = z + f
                a_in = r_in + f
            if self.want(PrimitiveKind.CONE, 0.4):
                c = rng.uniform(0.25, 0.4) * min(width, heights[i])
                parts.append(_chamfer(z - c, z, r_out, r_out - c))
                hi[i] = z - c
                a_out = r_out - c
            elif self.want(PrimitiveKind.TORUS, 0.3) and r_out > 0.6:
                g = rng.uniform(0.2, 0.35) * min(width, heights[i])
                parts.append(_fillet(z - g, r_out - g, g, 0.0, 0.5 * math.pi))
                hi[i] = z - g
                a_out = r_out - g
            parts.append(_annulus(z, a_in, a_out, up=True))
        top = zs[-1]
        r_top = radii[-1]
        if bore == 0.0 and self.want(PrimitiveKind.SPHERE):
            rs = r_top * rng.uniform(1.1, 2.0)
            drop = math.sqrt(rs * rs - r_top * r_top)
            parts.append(Part(make_sphere([0, 0, top - drop], rs), TrimRegion(0, TWO_PI, math.asin(drop / rs), math.pi / 2)))
        else:
            t_out = r_top
            if self.want(PrimitiveKind.CONE, 0.3):
                c = rng.uniform(0.25, 0.4) * min(r_top - bore, heights[-1])
                parts.append(_chamfer(top - c, top, r_top, r_top - c))
                hi[-1] = top - c
                t_out = r_top - c
            parts.append(_annulus(top, bore, t_out, up=True) if bore else _annulus(top, 0.0, t_out, up=True))
        for i in range(steps + 1):
            parts.append(Part(make_cylinder([0, 0, 0], EZ, radii[i]), TrimRegion(0, TWO_PI, lo[i], hi[i])))
        if bore:
            parts.append(Part(make_cylinder([0, 0, 0], EZ, bore), TrimRegion(0, TWO_PI, 0.0, top)))
        return parts

    # -- plate with holes ---------------------------------------------------------
    def plate(self) -> list[Part]:
        rng = self.rng
        length, width = rng.uniform(4, 8), rng.uniform(3, 6)
        thick = rng.uniform(0.5, 1.2)
        nx, ny = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        cw, ch = length / nx, width / ny
        top_holes: list[tuple[float, float, float]] = []
        bottom_holes: list[tuple[float, float, float]] = []
        parts: list[Part] = []
        for ix in range(nx):
            for iy in range(ny):
                cx = -length / 2 + cw * (ix + 0.5)
                cy = -width / 2 + ch * (iy + 0.5)
                room = 0.35 * min(cw, ch)
                choice = rng.uniform()
                if choice < 0.5 and self.rel[PrimitiveKind.CYLINDER.order] > 0:
                    r = rng.uniform(0.35, 0.7) * room
                    depth = 0.0
                    if self.want(PrimitiveKind.CONE, 0.4):
                        depth = rng.uniform(0.2, 0.4) * thick
                        spread = depth * math.tan(math.radians(rng.uniform(35, 50)))
                        parts.append(
                            Part(
                                make_cone([cx, cy, thick - depth - r * depth / spread], EZ, math.atan(spread / depth)),
                                TrimRegion(0, TWO_PI, r * depth / spread, r * depth / spread + depth),
                            )
                        )
                        top_holes.append((cx, cy, r + spread))
                    else:
                        top_holes.append((cx, cy, r))
                    bottom_holes.append((cx, cy, r))
                    parts.append(Part(make_cylinder([cx, cy, 0], EZ, r), TrimRegion(0, TWO_PI, 0.0, thick - depth)))
                elif choice < 0.8 and self.rel[PrimitiveKind.CYLINDER.order] > 0:
                    r = rng.uniform(0.4, 0.65) * room
                    h = rng.uniform(0.6, 1.5)
                    base = thick
                    foot = r
                    if self.want(PrimitiveKind.TORUS):
                        f = rng.uniform(0.25, 0.45) * (room - r) + 0.05
                        parts.append(_fillet(thick + f, r + f, f, math.pi, 1.5 * math.pi, cx, cy))
                        base = thick + f
                        foot = r + f
                    top_holes.append((cx, cy, foot))
                    parts.append(Part(make_cylinder([cx, cy, 0], EZ, r), TrimRegion(0, TWO_PI, base, thick + h)))
                    if self.want(PrimitiveKind.SPHERE, 0.4):
                        rs = r * rng.uniform(1.1, 1.8)
                        drop = math.sqrt(rs * rs - r * r)
                        parts.append(
                            Part(
                                make_sphere([cx, cy, thick + h - drop], rs),
                                TrimRegion(0, TWO_PI, math.asin(drop / rs), math.pi / 2),
                            )
                        )
                    else:
                        parts.append(
                            Part(_plane([cx, cy, thick + h], EX, EY), TrimRegion(-r, r, -r, r), _disk_mask(0.0, r))
                        )
                elif self.want(PrimitiveKind.SPHERE, 0.6):
                    rs = rng.uniform(0.7, 1.0) * room
                    drop = rs * rng.uniform(0.2, 0.6)
                    rho = math.sqrt(rs * rs - drop * drop)
                    top_holes.append((cx, cy, rho))
                    parts.append(
                        Part(make_sphere([cx, cy, thick - drop], rs), TrimRegion(0, TWO_PI, math.asin(drop / rs), math.pi / 2))
                    )
        rect = TrimRegion(-length / 2, length / 2, -width / 2, width / 2)
        parts.append(Part(_plane([0, 0, thick], EX, EY), rect, _outside_circles(top_holes) if top_holes else None))
        parts.append(Part(_plane([0, 0, 0], EX, -EY), TrimRegion(-length / 2, length / 2, -width / 2, width / 2),
                          _outside_circles([(x, -y, r) for x, y, r in bottom_holes]) if bottom_holes else None))
        hx, hy = length / 2, width / 2
        parts.append(Part(_plane([hx, 0, 0], EY, EZ), TrimRegion(-hy, hy, 0, thick)))
        parts.append(Part(_plane([-hx, 0, 0], -EY, EZ), TrimRegion(-hy, hy, 0, thick)))
        parts.append(Part(_plane([0, hy, 0], -EX, EZ), TrimRegion(-hx, hx, 0, thick)))
        parts.append(Part(_plane([0, -hy, 0], EX, EZ), TrimRegion(-hx, hx, 0, thick)))
        return parts

    # -- filleted L bracket -------------------------------------------------------
    def bracket(self) -> list[Part]:
        rng = self.rng
        width = rng.uniform(2, 5)
        base_len, base_t = rng.uniform(3, 6), rng.uniform(0.4, 0.9)
        up_h, up_t = rng.uniform(2.5, 5), rng.uniform(0.4, 0.9)
        f = rng.uniform(0.3, 0.8) * min(base_t, up_t) if self.rel[PrimitiveKind.CYLINDER.order] > 0 else 0.0
        parts: list[Part] = []
        # fillet at the inner corner, axis along y
        if f > 0:
            cyl = ParametricPrimitive(
                PrimitiveKind.CYLINDER,
                np.concatenate([-f * EX, -f * EZ, EY, [up_t + f, 0.0, base_t + f]]),
            )
            parts.append(Part(cyl, TrimRegion(0.0, 0.5 * math.pi, 0.0, width)))
        base_holes: list[tuple[float, float, float]] = []
        up_holes: list[tuple[float, float, float]] = []
        n_holes = int(rng.integers(0, 3)) if self.rel[PrimitiveKind.CYLINDER.order] > 0 else 0
        span = base_len - up_t - f
        for j in range(n_holes):
            r = rng.uniform(0.1, 0.2) * min(width, span / n_holes)
            x = up_t + f + span * (j + 1) / (n_holes + 1)
            y = width * rng.uniform(0.4, 0.6)
            base_holes.append((x, y, r))
            parts.append(Part(make_cylinder([x, y, 0], EZ, r), TrimRegion(0, TWO_PI, 0.0, base_t)))
        if self.rel[PrimitiveKind.CYLINDER.order] > 0 and rng.uniform() < 0.5:
            r = rng.uniform(0.12, 0.25) * min(width, up_h - base_t - f)
            z = base_t + f + (up_h - base_t - f) * rng.uniform(0.45, 0.65)
            up_holes.append((width / 2, z, r))
            parts.append(Part(make_cylinder([0, width / 2, z], EX, r), TrimRegion(0, TWO_PI, 0.0, up_t)))
        # planar faces: (origin, a, b, trim, holes in (u, v) coordinates)
        bottom_holes = [(x, y, r) for x, y, r in base_holes]
        parts.append(Part(_plane([0, 0, 0], EX, -EY), TrimRegion(0, base_len, -width, 0),
                          _outside_circles([(x, -y, r) for x, y, r in bottom_holes]) if bottom_holes else None))
        parts.append(Part(_plane([0, 0, base_t], EX, EY), TrimRegion(up_t + f, base_len, 0, width),
                          _outside_circles(base_holes) if base_holes else None))
        parts.append(Part(_plane([base_len, 0, 0], EY, EZ), TrimRegion(0, width, 0, base_t)))
        parts.append(Part(_plane([0, 0, 0], EZ, EY), TrimRegion(0, up_h, 0, width),
                          _outside_circles([(z, y, r) for y, z, r in up_holes]) if up_holes else None))
        parts.append(Part(_plane([up_t, 0, 0], EY, EZ), TrimRegion(0, width, base_t + f, up_h),
                          _outside_circles(up_holes) if up_holes else None))
        parts.append(Part(_plane([0, 0, up_h], EX, EY), TrimRegion(0, up_t, 0, width)))
        # the two L-shaped side caps, profile polygon in (x, z)
        arc = np.linspace(math.pi, 1.5 * math.pi, 24)
        fillet_pts = [(up_t + f + f * math.cos(t), base_t + f + f * math.sin(t)) for t in arc] if f > 0 else [(up_t, base_t)]
        profile = shapely.Polygon([(0, 0), (base_len, 0), (base_len, base_t)] + fillet_pts[::-1] + [(up_t, up_h), (0, up_h)])
        shapely.prepare(profile)

        def side_mask(u, v, poly=profile):
            return shapely.contains_xy(poly, u, v)

        box = TrimRegion(0, base_len, 0, up_h)
        parts.append(Part(_plane([0, 0, 0], EX, EZ), box, side_mask))
        parts.append(Part(_plane([0, width, 0], EX, EZ), box, side_mask))
        return parts


_TEMPLATES = {
    "single": (1, 1),
    "sphere_on_plane": (2, 2),
    "revolved": (3, 20),
    "plate": (6, 30),
    "bracket": (9, 20),
}


def _allocate(areas: FloatArray, n: int) -> IntArray:
    """Largest-remainder split of ``n`` points proportional to area."""
    share = areas / areas.sum() * n
    counts = np.floor(share).astype(np.int64)
    rest = n - int(counts.sum())
    order = np.lexsort((np.arange(len(areas)), -(share - counts)))
    counts[order[:rest]] += 1
    return counts


def random_pose(rng: np.random.Generator) -> tuple[FloatArray, FloatArray]:
    rot = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
    return rot, rng.uniform(-5, 5, 3)


def generate_model(spec: GeneratorSpec, seed: int) -> GroundTruthModel:
    """Draw one model: template, area-proportional sampling, random pose.

    Every part gets at least 1.5% of the model's area (smaller features are
    re-drawn) so that each segment has a usable number of points.
    """
    rng = np.random.default_rng([spec.seed, seed])
    builder = _Builder(spec, rng)
    lo, hi = spec.n_primitives
    names = [t for t, (a, b) in _TEMPLATES.items() if a <= hi and b >= lo]
    if not names:
        raise DatasetError(f"no template produces {lo}..{hi} primitives")
    n_points = int(rng.integers(spec.n_points[0], spec.n_points[1] + 1))
    allowed = {k for k in KINDS if spec.weight(k) > 0}
    for _ in range(500):
        name = names[int(rng.integers(len(names)))]
        parts = getattr(builder, name)()
        if not lo <= len(parts) <= hi or len(parts) > n_points:
            continue
        if any(p.primitive.kind not in allowed for p in parts):
            continue
        areas = np.array([p.area() for p in parts])
        if areas.min() < 0.015 * areas.sum() and len(parts) > 1:
            continue
        break
    else:
        raise DatasetError("generator could not satisfy the requested settings")
    counts = _allocate(areas, n_points)
    if counts.min() < 1:
        raise DatasetError("too few points for the drawn model")
    rot, shift = random_pose(rng)
    clouds, normals, prims = [], [], []
    for part, c in zip(parts, counts):
        pts, u, v = sample_surface(part.primitive, part.trim, int(c), rng, mask=part.mask, return_params=True)
        clouds.append(pts)
        normals.append(surface_normal(part.primitive, u, v))
        prims.append(transform(part.primitive, rot, shift))
    cloud = np.concatenate(clouds) @ rot.T + shift
    if spec.noise > 0:
        nrm = np.concatenate(normals) @ rot.T
        cloud = cloud + nrm * (spec.noise * bounding_box_diagonal(cloud) * rng.standard_normal(len(cloud)))[:, None]
    perm = rng.permutation(len(cloud))
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))
    bounds = np.concatenate([[0], np.cumsum(counts)])
    segments = tuple(np.sort(inverse[bounds[i] : bounds[i + 1]]) for i in range(len(parts)))
    model = GroundTruthModel(
        cloud[perm],
        segments,
        tuple(prims),
        tuple(parametric_to_implicit(p) for p in prims),
        {"template": name, "seed": int(seed), "missing_data": False},
    )
    if spec.missing_fraction > 0 and rng.uniform() < spec.missing_fraction:
        holes = int(rng.integers(spec.hole_count[0], spec.hole_count[1] + 1))
        if holes:
            radius = rng.uniform(*spec.hole_radius) * bounding_box_diagonal(model.cloud)
            model = simulate_missing_data(model, holes, radius, int(rng.integers(2**31)))
    return model


def simulate_missing_data(m: GroundTruthModel, hole_count: int, hole_radius: float, seed: int) -> GroundTruthModel:
    """Remove every point within ``hole_radius`` of randomly chosen cloud points.

    Surviving points keep their coordinates and relative order; segment
    indices are remapped and segments left empty are dropped together with
    their primitive forms.
    """
    if not hole_radius > 0:
        raise DatasetError("hole radius must be positive")
    if hole_count < 0:
        raise DatasetError("hole count must be non-negative")
    if hole_count == 0:
        return m
    rng = np.random.default_rng(seed)
    centers = m.cloud[rng.choice(m.n_points, size=hole_count, replace=hole_count > m.n_points)]
    tree = cKDTree(m.cloud)
    drop = np.zeros(m.n_points, dtype=bool)
    for hit in tree.query_ball_point(centers, hole_radius):
        drop[np.asarray(hit, dtype=np.int64)] = True
    if drop.all():
        raise DatasetError("holes would remove the whole cloud")
    new_index = np.cumsum(~drop) - 1
    segs, par, imp = [], [], []
    for k, s in enumerate(m.segments):
        s = s[~drop[s]]
        if s.size == 0:
            continue
        segs.append(new_index[s])
        if m.parametric is not None:
            par.append(m.parametric[k])
        if m.implicit is not None:
            imp.append(m.implicit[k])
    info = dict(m.info, missing_data=True, holes=int(hole_count), hole_radius=float(hole_radius))
    return replace(
        m,
        cloud=m.cloud[~drop],
        segments=tuple(segs),
        parametric=None if m.parametric is None else tuple(par),
        implicit=None if m.implicit is None else tuple(imp),
        info=info,
    )


def split_train_test(models: Sequence, test_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle split; the test set gets ``round(fraction * n)`` models."""
    if not 0 < test_fraction < 1:
        raise DatasetError("test fraction must lie in (0, 1)")
    n = len(models)
    if n < 2:
        raise DatasetError("need at least two models to split")
    n_test = min(max(int(round(test_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test = sorted(perm[:n_test].tolist())
    train = sorted(perm[n_test:].tolist())
    return [models[i] for i in train], [models[i] for i in test]
