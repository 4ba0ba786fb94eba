"""Open domains in R^d with exact boundary distance.

Three geometries are supported: half-spaces, balls and slabs (an interval
when d = 1).  All of them expose the same small contract used by the
simulation engine and the transport metrics:

* ``signed_distance`` -- positive inside, negative outside;
* ``distance_to_boundary`` -- the unsigned distance to the boundary set;
* ``faces`` -- per-face distances and unit normals, used by the
  Brownian-bridge crossing correction;
* ``project_to_boundary`` -- nearest boundary point.

Points are passed either as a single vector of shape ``(d,)`` or as a batch
of shape ``(n, d)``; scalars are accepted in one dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import csgraph

BOUNDARY_TOL = 1e-12


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
        single = True
    elif arr.ndim == 1:
        if dim == 1 and arr.shape[0] != 1:
            arr = arr.reshape(-1, 1)
            single = False
        else:
            arr = arr.reshape(1, -1)
            single = True
    else:
        single = False
    if arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return arr, single


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError("normal vector must be finite and nonzero")
    return v / norm


class Domain:
    """Common behaviour of the analytic domains.

    Subclasses implement ``_signed``, ``_faces`` and ``_project`` on batches.
    """

    dim: int
    r0: float
    r1: float

    # -- batch primitives supplied by subclasses -------------------------
    def _signed(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _faces(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_point(self) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict[str, Any]:
        raise NotImplementedError

    # -- public API ------------------------------------------------------
    def signed_distance(self, x):
        pts, single = _as_batch(x, self.dim)
        out = self._signed(pts)
        return float(out[0]) if single else out

    def distance_to_boundary(self, x):
        """Exact distance to the boundary set, whichever side ``x`` is on."""
        pts, single = _as_batch(x, self.dim)
        out = np.abs(self._signed(pts))
        return float(out[0]) if single else out

    def contains(self, x):
        """True for points of the open domain."""
        pts, single = _as_batch(x, self.dim)
        out = self._signed(pts) > BOUNDARY_TOL
        return bool(out[0]) if single else out

    def in_closure(self, x):
        pts, single = _as_batch(x, self.dim)
        out = self._signed(pts) >= -BOUNDARY_TOL
        return bool(out[0]) if single else out

    def on_boundary(self, x):
        pts, single = _as_batch(x, self.dim)
        out = np.abs(self._signed(pts)) <= BOUNDARY_TOL
        return bool(out[0]) if single else out

    def faces(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Distances ``(n, F)`` to each boundary face and unit normals ``(n, F, d)``.

        For the ball there is a single radial face; the bridge formula applied
        to it is an approximation.
        """
        pts, _ = _as_batch(x, self.dim)
        return self._faces(pts)

    def project_to_boundary(self, x):
        pts, single = _as_batch(x, self.dim)
        out = self._project(pts)
        return out[0] if single else out

    @property
    def flat_boundary(self) -> bool:
        """Whether the bridge crossing probability is exact for this geometry."""
        return True

    def intrinsic_distance(self, x, y, quadrature_steps: int = 200) -> float:
        """Distance for the metric weighted by ``1 / (rho_boundary ^ 1)``.

        Computed as the integral of that weight along the straight chord from
        ``x`` to ``y``.  In one dimension the chord is the only path, so the
        value is exact; for ``d >= 2`` it is an upper bound on the geodesic
        distance.  Returns ``inf`` when exactly one endpoint, or two distinct
        endpoints, lie on the boundary.
        """
        if quadrature_steps <= 0:
            raise ValueError("quadrature_steps must be a positive integer")
        xa, _ = _as_batch(x, self.dim)
        ya, _ = _as_batch(y, self.dim)
        xa, ya = xa[0], ya[0]
        if not (self.in_closure(xa) and self.in_closure(ya)):
            raise ValueError("intrinsic distance is defined on the closed domain only")
        length = float(np.linalg.norm(ya - xa))
        if length == 0.0:
            return 0.0
        if self.on_boundary(xa) or self.on_boundary(ya):
            return math.inf
        if self.dim == 1:
            # integrate over the ordered interval so the result is exactly symmetric
            lo, hi = sorted((float(xa[0]), float(ya[0])))
            return self._chord_integral(np.array([lo]), np.array([hi]), quadrature_steps)
        return self._chord_integral(xa, ya, quadrature_steps)

    def _chord_integral(self, xa: np.ndarray, ya: np.ndarray, limit: int) -> float:
        diff = ya - xa
        length = float(np.linalg.norm(diff))

        def weight(s: float) -> float:
            rho = abs(float(self._signed((xa + s * diff)[None, :])[0]))
            return length / min(rho, 1.0)

        value, _ = integrate.quad(weight, 0.0, 1.0, limit=max(limit, 1), epsabs=1e-13, epsrel=1e-12)
        return float(value)

    def intrinsic_distance_grid(self, x, y, spacing: float = 0.02, pad: float = 1.0) -> float:
        """Shortest path on a 16-neighbour grid graph (2-D validation aid).

        Only meaningful for ``d = 2``.  Edge costs use the trapezoid rule for
        the boundary weight; the endpoints are joined to their nearest grid
        nodes by straight segments.
        """
        if self.dim != 2:
            raise ValueError("grid refinement is only implemented for d = 2")
        xa = np.asarray(x, dtype=float)
        ya = np.asarray(y, dtype=float)
        lo = np.minimum(xa, ya) - pad
        hi = np.maximum(xa, ya) + pad
        gx = np.arange(lo[0], hi[0] + spacing / 2, spacing)
        gy = np.arange(lo[1], hi[1] + spacing / 2, spacing)
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        inside = self._signed(pts) > BOUNDARY_TOL
        w = np.full(pts.shape[0], np.inf)
        w[inside] = 1.0 / np.minimum(np.abs(self._signed(pts[inside])), 1.0)
        nx, ny = len(gx), len(gy)
        idx = np.arange(nx * ny).reshape(nx, ny)
        rows, cols, vals = [], [], []
        offsets = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)]
        for di, dj in offsets:
            i_src = np.arange(max(0, -di), nx - max(0, di))
            j_src = np.arange(max(0, -dj), ny - max(0, dj))
            a = idx[np.ix_(i_src, j_src)].ravel()
            b = idx[np.ix_(i_src + di, j_src + dj)].ravel()
            ok = inside[a] & inside[b]
            a, b = a[ok], b[ok]
            step = spacing * math.hypot(di, dj)
            rows.append(a)
            cols.append(b)
            vals.append(0.5 * step * (w[a] + w[b]))
        graph = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nx * ny, nx * ny),
        ).tocsr()
        start = int(np.argmin(np.where(inside, np.linalg.norm(pts - xa, axis=1), np.inf)))
        end = int(np.argmin(np.where(inside, np.linalg.norm(pts - ya, axis=1), np.inf)))
        dist = csgraph.dijkstra(graph, directed=False, indices=start)[end]
        return float(
            dist
            + self._chord_integral(xa, pts[start], 50)
            + self._chord_integral(pts[end], ya, 50)
        )


def _check_radii(r0: float, r1: float | None) -> tuple[float, float]:
    if not (r0 > 0 and math.isfinite(r0)):
        raise ValueError("r0 must be positive and finite")
    if r1 is None:
        r1 = r0 / 2
    if not 0 < r1 <= r0:
        raise ValueError("need 0 < r1 <= r0")
    if r1 > 1:
        raise ValueError("r1 must not exceed 1 (the cutoff profile saturates at 1)")
    return float(r0), float(r1)


@dataclass(frozen=True)
class HalfSpace(Domain):
    """``{x : <normal, x> > offset}``."""

    normal: tuple[float, ...]
    offset: float = 0.0
    r0: float = 1.0
    r1: float | None = None
    dim: int = field(init=False)
    _n: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = _unit(self.normal)
        object.__setattr__(self, "normal", tuple(float(v) for v in n))
        object.__setattr__(self, "_n", n)
        object.__setattr__(self, "dim", n.size)
        r0, r1 = _check_radii(self.r0, self.r1)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "r1", r1)

    def _signed(self, x):
        return x @ self._n - self.offset

    def _faces(self, x):
        dist = (x @ self._n - self.offset)[:, None]
        normals = np.broadcast_to(self._n, (x.shape[0], 1, self.dim))
        return dist, normals

    def _project(self, x):
        return x - np.outer(x @ self._n - self.offset, self._n)

    def boundary_point(self):
        return self.offset * self._n

    def to_config(self):
        return {"kind": "half_space", "normal": list(self.normal), "offset": self.offset,
                "r0": self.r0, "r1": self.r1}


@dataclass(frozen=True)
class Ball(Domain):
    center: tuple[float, ...]
    radius: float = 1.0
    r0: float | None = None
    r1: float | None = None
    dim: int = field(init=False)
    _c: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        object.__setattr__(self, "_c", c)
        object.__setattr__(self, "dim", c.size)
        r0 = self.r0 if self.r0 is not None else min(1.0, self.radius / 2)
        r0, r1 = _check_radii(r0, self.r1)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "r1", r1)

    @property
    def flat_boundary(self) -> bool:
        return False

    def _radial(self, x):
        rel = x - self._c
        norm = np.linalg.norm(rel, axis=1)
        unit = np.zeros_like(rel)
        scale = np.max(np.abs(rel), axis=1)
        nz = scale > 0
        # rescale first: squaring tiny offsets underflows and ruins the direction
        scaled = rel[nz] / scale[nz, None]
        unit[nz] = scaled / np.linalg.norm(scaled, axis=1)[:, None]
        unit[~nz, 0] = 1.0
        return norm, unit

    def _signed(self, x):
        return self.radius - np.linalg.norm(x - self._c, axis=1)

    def _faces(self, x):
        norm, unit = self._radial(x)
        return (self.radius - norm)[:, None], unit[:, None, :]

    def _project(self, x):
        _, unit = self._radial(x)
        return self._c + self.radius * unit

    def boundary_point(self):
        e = np.zeros(self.dim)
        e[0] = self.radius
        return self._c + e

    def to_config(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius,
                "r0": self.r0, "r1": self.r1}


@dataclass(frozen=True)
class Slab(Domain):
    """``{x : a < <normal, x> < b}``; the interval ``(a, b)`` when d = 1."""

    a: float
    b: float
    normal: tuple[float, ...] = (1.0,)
    r0: float | None = None
    r1: float | None = None
    dim: int = field(init=False)
    _n: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("slab needs a < b")
        n = _unit(self.normal)
        object.__setattr__(self, "normal", tuple(float(v) for v in n))
        object.__setattr__(self, "_n", n)
        object.__setattr__(self, "dim", n.size)
        r0 = self.r0 if self.r0 is not None else min(1.0, (self.b - self.a) / 4)
        r0, r1 = _check_radii(r0, self.r1)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "r1", r1)

    def _signed(self, x):
        s = x @ self._n
        return np.minimum(s - self.a, self.b - s)

    def _faces(self, x):
        s = x @ self._n
        dist = np.column_stack([s - self.a, self.b - s])
        normals = np.broadcast_to(np.stack([self._n, -self._n]), (x.shape[0], 2, self.dim))
        return dist, normals

    def _project(self, x):
        s = x @ self._n
        target = np.where(np.abs(s - self.a) <= np.abs(self.b - s), self.a, self.b)
        return x + np.outer(target - s, self._n)

    def boundary_point(self):
        return self.a * self._n

    def to_config(self):
        return {"kind": "interval" if self.dim == 1 else "slab", "a": self.a, "b": self.b,
                "normal": list(self.normal), "r0": self.r0, "r1": self.r1}


def half_line(offset: float = 0.0, **radii) -> HalfSpace:
    return HalfSpace(normal=(1.0,), offset=offset, **radii)


def interval(a: float, b: float, **radii) -> Slab:
    return Slab(a=a, b=b, normal=(1.0,), **radii)


def domain_from_config(cfg: dict[str, Any]) -> Domain:
    """Build a domain from ``{"kind": "half_space" | "ball" | "interval" | "slab", ...}``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    radii = {k: cfg.pop(k) for k in ("r0", "r1") if k in cfg and cfg[k] is not None}
    cfg.pop("r0", None)
    cfg.pop("r1", None)
    try:
        if kind == "half_space":
            dom = HalfSpace(normal=tuple(cfg.pop("normal", (1.0,))), offset=float(cfg.pop("offset", 0.0)), **radii)
        elif kind == "ball":
            dom = Ball(center=tuple(cfg.pop("center")), radius=float(cfg.pop("radius", 1.0)), **radii)
        elif kind in ("interval", "slab"):
            dom = Slab(a=float(cfg.pop("a")), b=float(cfg.pop("b")), normal=tuple(cfg.pop("normal", (1.0,))), **radii)
        else:
            raise ValueError(f"domain.kind: unknown geometry {kind!r}")
    except KeyError as exc:
        raise ValueError(f"domain.{exc.args[0]}: missing required field") from None
    if cfg:
        raise ValueError(f"domain.{sorted(cfg)[0]}: unknown field")
    return dom
