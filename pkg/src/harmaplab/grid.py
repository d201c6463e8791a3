"""Finite-difference lattices on balls, annuli and boxes (m = 2, 3).

Lattices are anchored at the domain centre (ball/annulus) or at the lower
corner (box), with uniform spacing ``h``.  Unknowns live on *inside* nodes,
lattice points strictly inside the open domain.  Every stencil arm that
leaves the domain is cut at the boundary (Shortley-Weller); the cut point
becomes a *boundary point* carrying Dirichlet data.  A :class:`GridFunction`
stores values on inside nodes and, optionally, on boundary points.

Combined indexing: ``0 .. n_inside-1`` are inside nodes, ``n_inside ..`` are
boundary points.  Operators are sparse matrices of shape
``(n_inside, n_inside + n_boundary)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateLevel, EmptyRegion, NonpositiveWeight, TooCoarse

__all__ = [
    "Domain",
    "Grid",
    "GridFunction",
    "build_grid",
    "laplacian",
    "gradient",
    "weighted_divergence",
    "weighted_operator",
    "norms",
    "level_profile",
    "level_boundary_flux",
    "unit_ball_volume",
    "write_grid_function",
    "read_grid_function",
]

# Lattice points closer than SNAP*h to the boundary are treated as boundary.
SNAP = 1e-3


def unit_ball_volume(m: int) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


@dataclass(frozen=True)
class Domain:
    kind: str
    m: int
    center: tuple = ()
    outer_radius: float = 0.0
    inner_radius: float = 0.0
    lo: tuple = ()
    hi: tuple = ()

    @classmethod
    def ball(cls, center, r):
        center = tuple(float(c) for c in center)
        if r <= 0:
            raise ValueError("radius must be positive")
        return cls("ball", len(center), center=center, outer_radius=float(r))

    @classmethod
    def annulus(cls, center, eps, r):
        center = tuple(float(c) for c in center)
        if not 0 < eps < r:
            raise ValueError("annulus needs 0 < eps < r")
        return cls("annulus", len(center), center=center, outer_radius=float(r),
                   inner_radius=float(eps))

    @classmethod
    def box(cls, lo, hi):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("box needs positive side lengths")
        return cls("box", len(lo), lo=lo, hi=hi)

    @property
    def omega_m(self) -> float:
        return unit_ball_volume(self.m)

    @property
    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(np.subtract(self.hi, self.lo)))
        vol = self.omega_m * self.outer_radius ** self.m
        if self.kind == "annulus":
            vol -= self.omega_m * self.inner_radius ** self.m
        return vol

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(np.subtract(self.hi, self.lo)))
        return 2 * self.outer_radius

    def sdf(self, x) -> np.ndarray:
        """Signed distance to the boundary, negative inside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            inner = np.minimum(x - lo, hi - x)  # >0 inside along each axis
            outside = np.maximum(np.maximum(lo - x, x - hi), 0.0)
            out_d = np.linalg.norm(outside, axis=-1)
            return np.where(np.all(inner > 0, axis=-1), -np.min(inner, axis=-1), out_d)
        rr = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        d = rr - self.outer_radius
        if self.kind == "annulus":
            d = np.maximum(d, self.inner_radius - rr)
        return d

    def distance(self, x) -> np.ndarray:
        """``d_x = dist(x, boundary)`` for points in the closed domain."""
        return np.maximum(-self.sdf(x), 0.0)

    def contains(self, x) -> np.ndarray:
        return self.sdf(x) <= 0

    def describe(self) -> str:
        fmt = lambda v: ",".join(repr(float(t)) for t in v)
        if self.kind == "ball":
            return f"ball center={fmt(self.center)} r={self.outer_radius!r}"
        if self.kind == "annulus":
            return (f"annulus center={fmt(self.center)} eps={self.inner_radius!r} "
                    f"r={self.outer_radius!r}")
        return f"box lo={fmt(self.lo)} hi={fmt(self.hi)}"

    @classmethod
    def parse(cls, text: str) -> "Domain":
        kind, *rest = text.split()
        kw = dict(t.split("=", 1) for t in rest)
        vec = lambda s: [float(t) for t in s.split(",")]
        if kind == "ball":
            return cls.ball(vec(kw["center"]), float(kw["r"]))
        if kind == "annulus":
            return cls.annulus(vec(kw["center"]), float(kw["eps"]), float(kw["r"]))
        if kind == "box":
            return cls.box(vec(kw["lo"]), vec(kw["hi"]))
        raise ValueError(f"unknown domain kind {kind!r}")


def _axis_crossing(domain: Domain, x: np.ndarray, k: int, sgn: int, h: float) -> np.ndarray:
    """Smallest t in (0, 1] with x + t*sgn*h*e_k on the boundary (inf if none)."""
    n = len(x)
    t = np.full(n, np.inf)
    if domain.kind == "box":
        bound = domain.hi[k] if sgn > 0 else domain.lo[k]
        tt = (bound - x[:, k]) * sgn / h
        return np.where((tt > 0) & (tt <= 1 + 1e-12), np.minimum(tt, 1.0), np.inf)
    c = x - np.asarray(domain.center)
    radii = [domain.outer_radius]
    if domain.kind == "annulus":
        radii.append(domain.inner_radius)
    for R in radii:
        # |c + s e_k|^2 = R^2 with s = sgn*h*t
        b = c[:, k] * sgn * h
        cc = np.sum(c ** 2, axis=1) - R ** 2
        disc = b ** 2 - h ** 2 * cc
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        for root in ((-b - sq) / h ** 2, (-b + sq) / h ** 2):
            good = ok & (root > 0) & (root <= 1 + 1e-12)
            t = np.where(good, np.minimum(t, root), t)
    return np.minimum(t, 1.0)


class Grid:
    """Lattice over a :class:`Domain`; build with :func:`build_grid`."""

    def __init__(self, domain: Domain, h: float):
        self.domain = domain
        self.h = float(h)
        m = domain.m
        if domain.kind == "box":
            origin = np.asarray(domain.lo)
            counts = np.subtract(domain.hi, domain.lo) / h
            nmax = np.rint(counts).astype(int)
            if np.any(np.abs(counts - nmax) > 1e-9 * np.maximum(counts, 1)):
                raise TooCoarse("box side lengths must be integer multiples of h")
            ranges = [np.arange(0, nn + 1) for nn in nmax]
        else:
            origin = np.asarray(domain.center)
            N = int(math.ceil(domain.outer_radius / h)) + 1
            ranges = [np.arange(-N, N + 1)] * m
        self.origin = origin
        self.shape = tuple(len(r) for r in ranges)
        self.offset = np.array([r[0] for r in ranges])
        mesh = np.meshgrid(*ranges, indexing="ij")
        lattice_idx = np.stack([g.ravel() for g in mesh], axis=1)
        pts = origin + h * lattice_idx
        inside = domain.sdf(pts) < -SNAP * h
        self.lattice_inside = inside.reshape(self.shape)
        self.index = np.full(self.shape, -1, dtype=np.int64)
        n_in = int(inside.sum())
        self.index.reshape(-1)[np.flatnonzero(inside)] = np.arange(n_in)
        self.ijk = lattice_idx[inside]
        self.points = pts[inside]
        self.n_inside = n_in

        nbr = np.empty((m, 2, n_in), dtype=np.int64)
        theta = np.ones((m, 2, n_in))
        bpts, bcomp = [], []
        n_b = 0
        for k in range(m):
            for s, sgn in enumerate((-1, 1)):
                nij = self.ijk.copy()
                nij[:, k] += sgn
                loc = nij - self.offset
                inb = np.all((loc >= 0) & (loc < np.asarray(self.shape)), axis=1)
                j = np.full(n_in, -1, dtype=np.int64)
                j[inb] = self.index[tuple(loc[inb].T)]
                cut = j < 0
                nbr[k, s, ~cut] = j[~cut]
                if np.any(cut):
                    xc = self.points[cut]
                    t = _axis_crossing(domain, xc, k, sgn, h)
                    t = np.where(np.isfinite(t), t, 1.0)
                    theta[k, s, cut] = t
                    bp = xc.copy()
                    bp[:, k] += sgn * h * t
                    nb = len(bp)
                    nbr[k, s, cut] = n_in + n_b + np.arange(nb)
                    bpts.append(bp)
                    if domain.kind == "annulus":
                        rr = np.linalg.norm(bp - np.asarray(domain.center), axis=1)
                        bcomp.append((np.abs(rr - domain.inner_radius)
                                      < np.abs(rr - domain.outer_radius)).astype(int))
                    else:
                        bcomp.append(np.zeros(nb, dtype=int))
                    n_b += nb
        if n_b:
            self.boundary_points = np.vstack(bpts)
            self.boundary_component = np.concatenate(bcomp)
        else:
            self.boundary_points = np.zeros((0, m))
            self.boundary_component = np.zeros(0, dtype=int)
        self.n_boundary = n_b
        self.nbr = nbr
        self.theta = theta
        self.regular = np.all(nbr < n_in, axis=(0, 1)) & np.all(theta == 1.0, axis=(0, 1))
        self.node_class = np.where(self.regular, "interior", "boundary-adjacent")

    # ------------------------------------------------------------------
    @property
    def m(self) -> int:
        return self.domain.m

    @property
    def n_total(self) -> int:
        return self.n_inside + self.n_boundary

    @property
    def all_points(self) -> np.ndarray:
        return np.vstack([self.points, self.boundary_points])

    @cached_property
    def distance(self) -> np.ndarray:
        """Analytic distance to the boundary for inside nodes."""
        return self.domain.distance(self.points)

    @cached_property
    def laplace_matrix(self) -> sp.csr_matrix:
        return weighted_operator(self, None)

    @cached_property
    def gradient_matrices(self) -> list:
        """Second-order unequal-arm first-derivative matrices, one per axis."""
        n_in, h = self.n_inside, self.h
        rows = np.arange(n_in)
        mats = []
        for k in range(self.m):
            a, b = self.theta[k, 0], self.theta[k, 1]
            cm = -b / (h * a * (a + b))
            cp = a / (h * b * (a + b))
            c0 = (b - a) / (h * a * b)
            data = np.concatenate([cm, cp, c0])
            cols = np.concatenate([self.nbr[k, 0], self.nbr[k, 1], rows])
            mats.append(sp.csr_matrix((data, (np.tile(rows, 3), cols)),
                                      shape=(n_in, self.n_total)))
        return mats

    def lattice_array(self, values: np.ndarray, fill=np.nan) -> np.ndarray:
        """Scatter inside-node values (first axis) into the full lattice."""
        values = np.asarray(values)
        out = np.full(self.shape + values.shape[1:], fill, dtype=float)
        out[tuple((self.ijk - self.offset).T)] = values
        return out

    def in_region(self, region: Optional[Domain], points=None) -> np.ndarray:
        pts = self.points if points is None else points
        if region is None:
            return np.ones(len(pts), dtype=bool)
        return region.sdf(pts) <= 1e-12

    def node_at(self, x) -> int:
        """Inside-node index of the lattice point at ``x`` (must exist)."""
        loc = np.rint((np.asarray(x, dtype=float) - self.origin) / self.h).astype(int) - self.offset
        if np.any(loc < 0) or np.any(loc >= np.asarray(self.shape)):
            raise ValueError("point outside lattice")
        i = int(self.index[tuple(loc)])
        if i < 0 or not np.allclose(self.points[i], x, atol=1e-9 * max(self.h, 1)):
            raise ValueError(f"{x} is not an inside lattice node")
        return i


def build_grid(domain: Domain, h: float) -> Grid:
    if domain.kind in ("ball",) and not h < domain.outer_radius / 4:
        raise TooCoarse(f"h={h} must be < r/4 = {domain.outer_radius / 4}")
    if domain.kind == "annulus" and not h < (domain.outer_radius - domain.inner_radius) / 4:
        raise TooCoarse("h must be < (r - eps)/4")
    if domain.kind == "box" and not h < min(np.subtract(domain.hi, domain.lo)) / 4:
        raise TooCoarse("h must be < shortest side/4")
    if domain.m not in (2, 3):
        raise ValueError("only m = 2, 3 are supported")
    return Grid(domain, h)


class GridFunction:
    """Samples of a scalar or vector field on a grid.

    ``values`` has shape ``(n_inside,)`` or ``(n_inside, ...)``;
    ``boundary`` (optional) has matching trailing shape on boundary points.
    """

    def __init__(self, grid: Grid, values, boundary=None):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != grid.n_inside:
            raise ValueError("values must have one row per inside node")
        if boundary is not None:
            boundary = np.asarray(boundary, dtype=float)
            if boundary.shape != (grid.n_boundary,) + self.values.shape[1:]:
                raise ValueError("boundary values have the wrong shape")
        self.boundary = boundary

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridFunction":
        vals = np.asarray(fn(grid.points), dtype=float)
        bvals = np.asarray(fn(grid.boundary_points), dtype=float)
        if grid.n_boundary == 0:
            bvals = np.zeros((0,) + vals.shape[1:])
        return cls(grid, vals, bvals)

    @property
    def value_shape(self) -> tuple:
        return self.values.shape[1:]

    @property
    def value_dim(self) -> int:
        return int(np.prod(self.value_shape)) if self.value_shape else 1

    def full(self) -> np.ndarray:
        if self.boundary is None:
            raise ValueError("operation needs boundary values")
        return np.concatenate([self.values, self.boundary], axis=0)

    def _combine(self, other, op):
        if isinstance(other, GridFunction):
            b = None
            if self.boundary is not None and other.boundary is not None:
                b = op(self.boundary, other.boundary)
            return GridFunction(self.grid, op(self.values, other.values), b)
        b = None if self.boundary is None else op(self.boundary, other)
        return GridFunction(self.grid, op(self.values, other), b)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def map(self, fn) -> "GridFunction":
        """Apply a pointwise function to values and boundary values."""
        b = None if self.boundary is None else np.asarray(fn(self.boundary))
        return GridFunction(self.grid, np.asarray(fn(self.values)), b)

    def sup(self) -> float:
        vals = self.values if self.boundary is None else self.full()
        if vals.ndim > 1:
            vals = np.linalg.norm(vals.reshape(len(vals), -1), axis=1)
        return float(np.max(np.abs(vals))) if vals.size else 0.0


# ---------------------------------------------------------------- operators

def weighted_operator(grid: Grid, rho: Optional[np.ndarray]) -> sp.csr_matrix:
    """Flux-form ``div(rho grad .)`` with harmonic face averages of ``rho``.

    ``rho`` is given on the combined index space (inside + boundary) or
    ``None`` for the plain Laplacian.
    """
    n_in, h = grid.n_inside, grid.h
    rows = np.arange(n_in)
    r_list, c_list, d_list = [], [], []
    diag = np.zeros(n_in)
    for k in range(grid.m):
        a, b = grid.theta[k, 0], grid.theta[k, 1]
        jm, jp = grid.nbr[k, 0], grid.nbr[k, 1]
        if rho is None:
            rm = rp = 1.0
        else:
            r0 = rho[:n_in]
            rm = 2 * r0 * rho[jm] / (r0 + rho[jm])
            rp = 2 * r0 * rho[jp] / (r0 + rho[jp])
        cm = 2 * rm / (h * h * a * (a + b))
        cp = 2 * rp / (h * h * b * (a + b))
        r_list += [rows, rows]
        c_list += [jm, jp]
        d_list += [cm * np.ones(n_in), cp * np.ones(n_in)]
        diag -= cm + cp
    r_list.append(rows)
    c_list.append(rows)
    d_list.append(diag)
    return sp.csr_matrix((np.concatenate(d_list), (np.concatenate(r_list), np.concatenate(c_list))),
                         shape=(n_in, grid.n_total))


def _apply(mat, u: GridFunction) -> GridFunction:
    full = u.full()
    shp = full.shape
    out = mat @ full.reshape(shp[0], -1)
    return GridFunction(u.grid, out.reshape((mat.shape[0],) + shp[1:]))


def laplacian(u: GridFunction) -> GridFunction:
    """Shortley-Weller Laplacian on inside nodes (componentwise)."""
    return _apply(u.grid.laplace_matrix, u)


def gradient(u: GridFunction) -> GridFunction:
    """Gradient on inside nodes; trailing axis of length m is appended."""
    comps = [_apply(G, u).values for G in u.grid.gradient_matrices]
    return GridFunction(u.grid, np.stack(comps, axis=-1))


def _rho_full(rho) -> np.ndarray:
    r = rho.full() if isinstance(rho, GridFunction) else np.asarray(rho, dtype=float)
    if np.any(~(r > 0)):
        raise NonpositiveWeight("rho must be positive at every node")
    return r


def weighted_divergence(rho, f: GridFunction) -> GridFunction:
    """``div(rho grad f)`` in flux form.

    The face-normal differences are taken from ``f`` itself (with its
    boundary values), so ``weighted_divergence(1, f) == laplacian(f)``.
    """
    if np.isscalar(rho):
        if not rho > 0:
            raise NonpositiveWeight("rho must be positive")
        return _apply(f.grid.laplace_matrix * float(rho), f)
    return _apply(weighted_operator(f.grid, _rho_full(rho)), f)


# ---------------------------------------------------------------- measures

def _edge_energy(u: GridFunction, rho_full: Optional[np.ndarray], mask: np.ndarray) -> float:
    """Edge quadrature of ``int rho |grad u|^2`` over edges with both ends in mask."""
    g = u.grid
    full = u.full()
    full = full.reshape(len(full), -1)
    n_in, h = g.n_inside, g.h
    total = 0.0
    rows = np.arange(n_in)
    for k in range(g.m):
        for s in (0, 1):
            j = g.nbr[k, s]
            th = g.theta[k, s]
            # interior edges are seen from both ends: count from the + side only
            use = mask[rows] & mask[j] & ((s == 1) | (j >= n_in))
            if not np.any(use):
                continue
            du = full[j[use]] - full[rows[use]]
            length = th[use] * h
            w = 1.0
            if rho_full is not None:
                r0, r1 = rho_full[rows[use]], rho_full[j[use]]
                w = 2 * r0 * r1 / (r0 + r1)
            total += float(np.sum(w * np.sum(du ** 2, axis=1) / length) * h ** (g.m - 1))
    if g.domain.kind == "box" and g.n_boundary:
        total += _box_face_energy(g, full, rho_full, mask)
    return total


def _box_face_energy(g: Grid, full, rho_full, mask) -> float:
    """Edges lying on box faces; half of their dual cell is inside."""
    n_in, h = g.n_inside, g.h
    bidx = np.rint((g.boundary_points - g.origin) / h).astype(np.int64)
    lookup = {tuple(t): n_in + i for i, t in enumerate(bidx)}
    total = 0.0
    for i, t in enumerate(bidx):
        a = n_in + i
        for k in range(g.m):
            nb = list(t)
            nb[k] += 1
            b = lookup.get(tuple(nb))
            if b is None or not (mask[a] and mask[b]):
                continue
            du = full[b] - full[a]
            w = 1.0
            if rho_full is not None:
                w = 2 * rho_full[a] * rho_full[b] / (rho_full[a] + rho_full[b])
            total += 0.5 * w * float(np.sum(du ** 2)) / h * h ** (g.m - 1)
    return total


def norms(u: GridFunction, K: Optional[Domain] = None, rho=None) -> dict:
    """Sup, L1 and energy of ``u`` restricted to the region ``K``.

    Sup and L1 are node sums with cell volume ``h**m``.  The energy is an
    edge quadrature: each lattice edge (or cut arm) inside ``K`` contributes
    ``rho_face * (du/len)**2 * len * h**(m-1)``.
    """
    g = u.grid
    mask_in = g.in_region(K)
    if not np.any(mask_in):
        raise EmptyRegion("no grid node lies in K")
    vals = u.values[mask_in].reshape(int(mask_in.sum()), -1)
    mag = np.linalg.norm(vals, axis=1)
    out = {"sup": float(mag.max()), "L1": float(mag.sum() * g.h ** g.m)}
    if u.boundary is not None:
        mask_b = g.in_region(K, g.boundary_points)
        mask = np.concatenate([mask_in, mask_b])
        rf = None
        if rho is not None:
            rf = (np.full(g.n_total, float(rho)) if np.isscalar(rho) else _rho_full(rho))
        out["energy"] = _edge_energy(u, rf, mask)
    return out


def level_profile(u: GridFunction, s_values: Sequence[float], hole_volume: float = 0.0) -> np.ndarray:
    """Node-counting measure ``h**m * #{u > s}`` (+ ``hole_volume``) per level."""
    g = u.grid
    vals = np.sort(u.values.ravel())
    s = np.asarray(s_values, dtype=float)
    counts = len(vals) - np.searchsorted(vals, s, side="right")
    return counts * g.h ** g.m + hole_volume


def _lattice_gradient_mag(u: GridFunction, rho) -> tuple:
    g = u.grid
    grad = gradient(u).values.reshape(g.n_inside, g.m)
    gm = np.linalg.norm(grad, axis=1)
    if rho is None:
        w = np.ones(g.n_inside)
    elif np.isscalar(rho):
        w = np.full(g.n_inside, float(rho))
    else:
        w = rho.values if isinstance(rho, GridFunction) else np.asarray(rho)[: g.n_inside]
    return g.lattice_array(w * gm), g.lattice_array(gm)


def _extended_lattice(u: GridFunction, fl: np.ndarray, gm: np.ndarray):
    """Lattice arrays with outside neighbours of inside nodes filled in.

    An outside node reached from inside node ``i`` along a cut arm of
    fraction ``theta`` gets ``u_i + (g_b - u_i) / theta``, so linear
    interpolation along that edge passes through the boundary value ``g_b``
    at the boundary point.  Several arms reaching one node are averaged.
    ``rho |grad u|`` and ``|grad u|`` are extrapolated linearly along the
    same axis when the opposite neighbour is an inside node, else copied.
    """
    g = u.grid
    arr = g.lattice_array(u.values)
    if u.boundary is None:
        return arr, fl, gm
    n_in = g.n_inside
    full = u.full()
    acc = np.zeros(g.shape)
    cnt = np.zeros(g.shape)
    fl_acc = np.zeros(g.shape)
    gm_acc = np.zeros(g.shape)
    flat_fl = fl[tuple((g.ijk - g.offset).T)]
    flat_gm = gm[tuple((g.ijk - g.offset).T)]
    shape = np.asarray(g.shape)
    for k in range(g.m):
        for side, sgn in enumerate((-1, 1)):
            j = g.nbr[k, side]
            i = np.flatnonzero(j >= n_in)
            if i.size == 0:
                continue
            loc = g.ijk[i] - g.offset
            loc[:, k] += sgn
            keep = np.all((loc >= 0) & (loc < shape), axis=1)
            i, loc = i[keep], loc[keep]
            ui = full[i]
            ext = ui + (full[j[i]] - ui) / g.theta[k, side, i]
            back = g.nbr[k, 1 - side, i]
            inner = back < n_in
            bk = np.where(inner, back, 0)
            fl_ext = np.where(inner, 2 * flat_fl[i] - flat_fl[bk], flat_fl[i])
            gm_ext = np.where(inner, 2 * flat_gm[i] - flat_gm[bk], flat_gm[i])
            idx = tuple(loc.T)
            np.add.at(acc, idx, ext)
            np.add.at(cnt, idx, 1.0)
            np.add.at(fl_acc, idx, np.maximum(fl_ext, 0.0))
            np.add.at(gm_acc, idx, np.maximum(gm_ext, 0.0))
    filled = (cnt > 0) & np.isnan(arr)
    arr = arr.copy()
    fl, gm = fl.copy(), gm.copy()
    arr[filled] = acc[filled] / cnt[filled]
    fl[filled] = fl_acc[filled] / cnt[filled]
    gm[filled] = gm_acc[filled] / cnt[filled]
    return arr, fl, gm


def level_boundary_flux(u: GridFunction, rho, s: float) -> float:
    """``sum over facets of rho |grad u| * facet measure`` on ``{u = s}``.

    Marching squares (m = 2) or marching cubes (m = 3) with linear
    interpolation; ``rho |grad u|`` is interpolated (multi)linearly from
    node values.  When ``u`` carries boundary values, cells cut by the
    boundary are included through :func:`_extended_lattice` and facets
    whose midpoint lies outside the domain are dropped; otherwise only
    cells with all corners inside are used.
    """
    from scipy.ndimage import map_coordinates
    from skimage import measure

    g = u.grid
    fl, gm = _lattice_gradient_mag(u, rho)
    arr, fl, gm = _extended_lattice(u, fl, gm)
    valid = ~np.isnan(arr)
    fill = np.where(valid, arr, np.nanmin(arr) - 1.0)
    fl, gm = np.nan_to_num(fl), np.nan_to_num(gm)
    cell_ok = np.ones(tuple(n - 1 for n in g.shape), dtype=bool)
    for d in np.ndindex(*(2,) * g.m):
        cell_ok &= valid[tuple(slice(di, di + n - 1) for di, n in zip(d, g.shape))]

    def usable(mid):
        cell = np.clip(np.floor(mid).astype(int), 0, np.array(cell_ok.shape) - 1)
        ok = cell_ok[tuple(cell.T)]
        x = g.origin + g.h * (g.offset + mid)
        return ok & (g.domain.sdf(x) <= 0)

    if g.m == 2:
        pieces = []
        for c in measure.find_contours(fill, s):
            mid = 0.5 * (c[1:] + c[:-1])
            pieces.append((mid, np.linalg.norm(np.diff(c, axis=0), axis=1) * g.h))
        if not pieces:
            raise DegenerateLevel(f"no level set at s={s}")
        mid = np.vstack([p[0] for p in pieces])
        size = np.concatenate([p[1] for p in pieces])
    else:
        try:
            verts, faces, _, _ = measure.marching_cubes(fill, s)
        except (ValueError, RuntimeError):
            raise DegenerateLevel(f"no level set at s={s}") from None
        tri = verts[faces]
        mid = tri.mean(axis=1)
        size = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        size *= g.h ** 2
    ok = usable(mid)
    vals = map_coordinates(fl, mid[ok].T, order=1)
    gv = map_coordinates(gm, mid[ok].T, order=1)
    total = float(np.sum(vals * size[ok]))
    gsum = float(np.sum(gv * size[ok]))
    lsum = float(np.sum(size[ok]))
    if lsum == 0.0 or gsum / lsum < 1e-12:
        raise DegenerateLevel(f"vanishing gradient or empty level set at s={s}")
    return total


# ---------------------------------------------------------------- file format

def write_grid_function(path, u: GridFunction) -> None:
    """Text format: header, one line per inside node, then boundary points."""
    g = u.grid
    vals = u.values.reshape(g.n_inside, -1)
    n = vals.shape[1]
    lines = [f"m={g.m}", f"n={n}", f"h={g.h!r}", f"domain={g.domain.describe()}"]
    for ij, x, v in zip(g.ijk, g.points, vals):
        lines.append(" ".join([*(str(int(t)) for t in ij), *(repr(float(t)) for t in x),
                               *(repr(float(t)) for t in v)]))
    if u.boundary is not None:
        lines.append("# boundary")
        bv = u.boundary.reshape(g.n_boundary, -1)
        for x, v in zip(g.boundary_points, bv):
            lines.append(" ".join([*(repr(float(t)) for t in x), *(repr(float(t)) for t in v)]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid_function(path) -> GridFunction:
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = dict(line.split("=", 1) for line in lines[:4])
    m, n, h = int(head["m"]), int(head["n"]), float(head["h"])
    grid = build_grid(Domain.parse(head["domain"]), h)
    body = lines[4:]
    try:
        cut = body.index("# boundary")
        node_lines, b_lines = body[:cut], body[cut + 1:]
    except ValueError:
        node_lines, b_lines = body, None
    data = np.array([[float(t) for t in ln.split()] for ln in node_lines]).reshape(-1, 2 * m + n)
    if len(data) != grid.n_inside or not np.array_equal(data[:, :m].astype(int), grid.ijk):
        raise ValueError("node list does not match the grid described in the header")
    vals = data[:, 2 * m:]
    bvals = None
    if b_lines is not None:
        bd = np.array([[float(t) for t in ln.split()] for ln in b_lines]).reshape(-1, m + n)
        bvals = bd[:, m:]
    if n == 1:
        vals = vals[:, 0]
        bvals = None if bvals is None else bvals[:, 0]
    return GridFunction(grid, vals, bvals)
