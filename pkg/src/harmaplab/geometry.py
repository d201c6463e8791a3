"""Pseudo-Riemannian metrics in coordinates and adapted normal coordinates.

A :class:`MetricChart` wraps vectorised evaluators ``h(y)`` and (optionally)
``dh(y)``.  Evaluators take arrays of shape ``(..., n)`` and return
``(..., n, n)`` and ``(..., n, n, n)`` respectively, with
``dh[..., i, j, k] = d h_ij / d y^k``.

:func:`normal_coordinates` builds the quadratic change of variables
``z = z_M + A y + 1/2 B(y, y)`` in which the pulled-back metric equals
``eta = diag(1, .., 1, -1, .., -1)`` at ``y = 0`` and the Christoffel
symbols vanish there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import DomainExit, NewtonDivergence, SingularMetric

__all__ = [
    "MetricChart",
    "ChristoffelEval",
    "NormalCoordinateMap",
    "ChartConstants",
    "eta_matrix",
    "metric_inverse",
    "christoffel",
    "christoffel_field",
    "normal_coordinates",
    "pullback_metric",
    "chart_constants",
    "flat_chart",
    "diag_poly_chart",
    "eta_plus_quadratic_chart",
    "parse_chart",
    "CHART_BUILDERS",
]


def eta_matrix(p: int, q: int) -> np.ndarray:
    return np.diag(np.r_[np.ones(p), -np.ones(q)])


@dataclass(frozen=True)
class MetricChart:
    """A coordinate expression of a metric of signature ``(p, q)``.

    Parameters
    ----------
    signature : (p, q)
    lo, hi : arrays of shape (n,)
        The coordinate box on which the evaluators are valid.
    h : callable
        ``y -> h_ij(y)``, vectorised over leading axes.
    dh : callable, optional
        Analytic derivative.  When omitted, central differences with step
        ``fd_step`` are used.
    """

    signature: tuple
    lo: np.ndarray
    hi: np.ndarray
    h: Callable
    dh: Optional[Callable] = None
    fd_step: Optional[float] = None
    nondegeneracy_floor: float = 1e-8
    name: str = "chart"

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        p, q = self.signature
        if p + q != self.lo.size:
            raise ValueError("signature does not match box dimension")
        if self.fd_step is None:
            scale = float(np.max(self.hi - self.lo))
            object.__setattr__(self, "fd_step", 1e-5 * scale)

    @property
    def n(self) -> int:
        return self.lo.size

    @property
    def eta(self) -> np.ndarray:
        return eta_matrix(*self.signature)

    def inside(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.all((y >= self.lo) & (y <= self.hi), axis=-1)

    def metric(self, y) -> np.ndarray:
        return np.asarray(self.h(np.asarray(y, dtype=float)), dtype=float)

    def metric_derivative(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.dh is not None:
            return np.asarray(self.dh(y), dtype=float)
        step = self.fd_step
        out = np.empty(y.shape[:-1] + (self.n, self.n, self.n))
        for k in range(self.n):
            e = np.zeros(self.n)
            e[k] = step
            out[..., k] = (self.metric(y + e) - self.metric(y - e)) / (2 * step)
        return out

    def check(self, y) -> None:
        """Raise :class:`SingularMetric` unless the invariants hold at ``y``."""
        hm = self.metric(y)
        if not np.allclose(hm, np.swapaxes(hm, -1, -2), rtol=1e-12, atol=0):
            raise SingularMetric("metric is not symmetric")
        det = np.linalg.det(hm)
        if np.any(np.abs(det) <= self.nondegeneracy_floor):
            raise SingularMetric("metric is degenerate")
        ev = np.linalg.eigvalsh(hm)
        p, q = self.signature
        if np.any((ev > 0).sum(-1) != p) or np.any((ev < 0).sum(-1) != q):
            raise SingularMetric(f"metric signature differs from {self.signature}")


@dataclass(frozen=True)
class ChristoffelEval:
    gamma: np.ndarray
    base_point: np.ndarray


def _checked_inverse(chart: MetricChart, hm: np.ndarray) -> np.ndarray:
    det = np.linalg.det(hm)
    if np.any(np.abs(det) <= chart.nondegeneracy_floor):
        raise SingularMetric(f"|det h| <= {chart.nondegeneracy_floor}")
    return np.linalg.inv(hm)


def metric_inverse(chart: MetricChart, y) -> np.ndarray:
    """Inverse metric ``h^{ij}(y)``."""
    return _checked_inverse(chart, chart.metric(y))


def christoffel_field(chart: MetricChart, y) -> np.ndarray:
    """Christoffel symbols ``Gamma[..., i, j, k]`` at a batch of points."""
    y = np.asarray(y, dtype=float)
    hinv = _checked_inverse(chart, chart.metric(y))
    d = chart.metric_derivative(y)  # d[..., a, b, c] = d_c h_ab
    # T_ljk = d_j h_lk + d_k h_jl - d_l h_jk
    t = (np.swapaxes(d, -1, -2)
         + np.swapaxes(d, -3, -2)
         - np.moveaxis(d, -1, -3))
    gamma = 0.5 * np.einsum("...il,...ljk->...ijk", hinv, t)
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def christoffel(chart: MetricChart, y) -> ChristoffelEval:
    y = np.asarray(y, dtype=float)
    return ChristoffelEval(gamma=christoffel_field(chart, y), base_point=y.copy())


@dataclass(frozen=True)
class NormalCoordinateMap:
    """``z = z_M + A y + 1/2 B(y, y)`` together with its source chart."""

    z_M: np.ndarray
    A: np.ndarray
    B: np.ndarray
    source: MetricChart
    validity_radius: float = np.inf
    newton_tol: float = 1e-12
    newton_maxiter: int = 50

    def forward(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (self.z_M + y @ self.A.T
                + 0.5 * np.einsum("ijk,...j,...k->...i", self.B, y, y))

    def jacobian(self, y) -> np.ndarray:
        """``dz/dy = A + B(y, .)`` with shape (..., n, n)."""
        y = np.asarray(y, dtype=float)
        return self.A + np.einsum("ijk,...k->...ij", self.B, y)

    def inverse(self, z) -> np.ndarray:
        """Damped Newton inversion of :meth:`forward`."""
        z = np.asarray(z, dtype=float)
        y = np.linalg.solve(self.A, (z - self.z_M)[..., None])[..., 0]
        res = self.forward(y) - z
        rnorm = np.linalg.norm(res, axis=-1)
        for _ in range(self.newton_maxiter):
            if np.all(rnorm <= self.newton_tol):
                return y
            step = np.linalg.solve(self.jacobian(y), res[..., None])[..., 0]
            t = np.ones(rnorm.shape)
            for _ in range(30):
                y_try = y - t[..., None] * step
                r_try = self.forward(y_try) - z
                n_try = np.linalg.norm(r_try, axis=-1)
                bad = n_try > rnorm * (1 - 1e-4 * t)
                if not np.any(bad & (rnorm > self.newton_tol)):
                    break
                t = np.where(bad, 0.5 * t, t)
            y, res, rnorm = y_try, r_try, n_try
        if np.all(rnorm <= self.newton_tol * 10):
            return y
        raise NewtonDivergence(f"inverse map failed, residual {rnorm.max():.3e}")

    def pulled_back_chart(self, radius: Optional[float] = None) -> MetricChart:
        """The metric in the ``y`` coordinates, with an analytic derivative.

        The returned chart's box is the cube inscribed in the ball of the
        given radius (default: the validity radius).
        """
        radius = self.validity_radius if radius is None else radius
        if not np.isfinite(radius):
            raise ValueError("pulled-back chart needs a finite radius")
        n = self.A.shape[0]
        half = radius / np.sqrt(n)
        src = self.source

        def h(y):
            return pullback_metric(src, self, y)

        def dh(y):
            y = np.asarray(y, dtype=float)
            z = self.forward(y)
            jac = self.jacobian(y)
            ht = src.metric(z)
            dht = src.metric_derivative(z)
            first = np.einsum("...ijr,...rp,...ik,...jl->...klp", dht, jac, jac, jac)
            hb = np.einsum("...ij,ikp,...jl->...klp", ht, self.B, jac)
            return first + hb + np.swapaxes(hb, -2, -3)

        return MetricChart(signature=src.signature, lo=-half * np.ones(n),
                           hi=half * np.ones(n), h=h, dh=dh,
                           nondegeneracy_floor=src.nondegeneracy_floor,
                           name=f"normal({src.name})")


def pullback_metric(chart: MetricChart, ncm: NormalCoordinateMap, y) -> np.ndarray:
    """``h_kl(y) = h~_ij(z(y)) J^i_k J^j_l`` with ``J = A + B y``."""
    z = ncm.forward(y)
    if not np.all(chart.inside(z)):
        raise DomainExit("forward(y) left the source chart domain")
    jac = ncm.jacobian(y)
    return np.einsum("...ik,...ij,...jl->...kl", jac, chart.metric(z), jac)


def _normalize_A(H: np.ndarray, signature) -> np.ndarray:
    w, Q = np.linalg.eigh(H)
    order = np.argsort(-w, kind="stable")
    w, Q = w[order], Q[:, order]
    p, q = signature
    if (w > 0).sum() != p or (w < 0).sum() != q:
        raise SingularMetric(f"metric at base point is not of signature {signature}")
    for c in range(Q.shape[1]):
        col = Q[:, c]
        j = int(np.argmax(np.abs(col)))
        if col[j] < 0:
            Q[:, c] = -col
    return Q / np.sqrt(np.abs(w))


def normal_coordinates(chart: MetricChart, z_M, *, measure_radius: bool = True
                       ) -> NormalCoordinateMap:
    """Adapted coordinates centred at ``z_M``.

    ``A`` comes from the sorted eigendecomposition of ``h~(z_M)`` (positive
    eigenvalues first, each eigenvector's largest entry made positive);
    ``B`` solves ``M_lq B^q_jk = -h~_pq Gamma~^p_rs A^q_l A^r_j A^s_k`` with
    ``M_lq = h~_pq A^p_l``.
    """
    z_M = np.asarray(z_M, dtype=float)
    if not chart.inside(z_M):
        raise DomainExit("base point outside chart")
    H = chart.metric(z_M)
    if abs(np.linalg.det(H)) <= chart.nondegeneracy_floor:
        raise SingularMetric("metric degenerate at base point")
    A = _normalize_A(H, chart.signature)
    gt = christoffel_field(chart, z_M)
    Mmat = A.T @ H  # M_lq = h_pq A^p_l
    rhs = -np.einsum("pq,prs,ql,rj,sk->ljk", H, gt, A, A, A)
    n = chart.n
    B = np.linalg.solve(Mmat, rhs.reshape(n, n * n)).reshape(n, n, n)
    B = 0.5 * (B + np.swapaxes(B, 1, 2))
    ncm = NormalCoordinateMap(z_M=z_M, A=A, B=B, source=chart)
    if measure_radius:
        ncm = NormalCoordinateMap(z_M=z_M, A=A, B=B, source=chart,
                                  validity_radius=_validity_radius(chart, ncm))
    return ncm


def _unit_ball_samples(n: int, count: int) -> np.ndarray:
    """Deterministic Halton points in the closed unit ball."""
    halton = qmc.Halton(d=n, scramble=False)
    pts = 2.0 * halton.random(int(count * 2 ** n * 1.2) + 16)[1:] - 1.0
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    return pts[:count]


def _sphere_samples(n: int, count: int) -> np.ndarray:
    pts = _unit_ball_samples(n, count)
    nrm = np.linalg.norm(pts, axis=1)
    pts = pts[nrm > 1e-3]
    return pts / np.linalg.norm(pts, axis=1)[:, None]


def _validity_radius(chart: MetricChart, ncm: NormalCoordinateMap,
                     samples: int = 256) -> float:
    """Largest radius (on a 0.85-geometric ladder) on which the map behaves."""
    n = chart.n
    dist_box = float(np.min(np.minimum(ncm.z_M - chart.lo, chart.hi - ncm.z_M)))
    r = dist_box / np.linalg.norm(ncm.A, 2)
    sph = np.vstack([_sphere_samples(n, samples), _unit_ball_samples(n, samples)])
    p, q = chart.signature
    for _ in range(80):
        y = r * sph
        try:
            z = ncm.forward(y)
            if np.all(chart.inside(z)):
                jac = ncm.jacobian(y)
                if np.all(np.linalg.cond(jac) < 1e3):
                    back = ncm.inverse(z)
                    if np.max(np.abs(back - y)) <= 1e-10:
                        hm = pullback_metric(chart, ncm, y)
                        ev = np.linalg.eigvalsh(hm)
                        if (np.all((ev > 0).sum(-1) == p) and np.all((ev < 0).sum(-1) == q)
                                and np.all(np.abs(np.linalg.det(hm)) > chart.nondegeneracy_floor)):
                            return float(r)
        except (NewtonDivergence, SingularMetric, np.linalg.LinAlgError):
            pass
        r *= 0.85
    raise NewtonDivergence("no radius found on which the normal map is invertible")


@dataclass(frozen=True)
class ChartConstants:
    C_W: float
    C_Gamma: float
    R_chart: float


_FD_FLOOR = 1e-12


def _master_samples(n: int, R0: float, samples: int, shells: int = 10) -> np.ndarray:
    base = _unit_ball_samples(n, samples)
    return np.vstack([R0 * 2.0 ** (-j) * base for j in range(shells)])


def chart_constants(chart: MetricChart, ncm: NormalCoordinateMap,
                    radius: float, samples: int = 4096) -> ChartConstants:
    """Sampled bounds ``C_W`` and ``C_Gamma`` on the ball of ``radius``.

    The sample set is a fixed family of dyadically scaled Halton clouds
    inside the validity ball, filtered to ``|y| <= radius``; nested sample
    sets make the constants nondecreasing in ``radius``.  ``C_Gamma`` is the
    larger of ``sup |dGamma|_F`` (central differences) and
    ``sup |Gamma(y)|_F / |y|``; either bounds ``|Gamma(y) xi xi| / (|y||xi|^2)``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    R0 = ncm.validity_radius
    if radius > R0 * (1 + 1e-12):
        raise DomainExit("radius exceeds validity radius")
    n = chart.n
    pts = _master_samples(n, R0, samples)
    pts = pts[np.linalg.norm(pts, axis=1) <= radius]
    if len(pts) == 0:
        pts = np.zeros((1, n))
    pb = ncm.pulled_back_chart(R0 * np.sqrt(n) * 1.0)
    # pulled-back evaluators are valid anywhere the forward map stays in the source box
    jac = ncm.jacobian(pts)
    cw = np.linalg.norm(jac, 2, axis=(-2, -1)) + np.linalg.norm(np.linalg.inv(jac), 2, axis=(-2, -1))
    gam = christoffel_field(pb, pts)
    step = 1e-4 * R0
    dg2 = np.zeros(len(pts))
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        dgk = (christoffel_field(pb, pts + e) - christoffel_field(pb, pts - e)) / (2 * step)
        dg2 += np.sum(dgk ** 2, axis=(1, 2, 3))
    ynorm = np.linalg.norm(pts, axis=1)
    gn = np.sqrt(np.sum(gam ** 2, axis=(1, 2, 3)))
    ratio = np.where(ynorm > 0, gn / np.where(ynorm > 0, ynorm, 1.0), 0.0)
    cg = max(float(np.sqrt(dg2.max())), float(ratio.max()), _FD_FLOOR)
    return ChartConstants(C_W=float(cw.max()), C_Gamma=cg, R_chart=float(R0))


# ---------------------------------------------------------------- built-ins

def flat_chart(p: int, q: int, half_width: float = 1.0) -> MetricChart:
    n = p + q
    eta = eta_matrix(p, q)

    def h(y):
        y = np.asarray(y)
        return np.broadcast_to(eta, y.shape[:-1] + (n, n)).copy()

    def dh(y):
        y = np.asarray(y)
        return np.zeros(y.shape[:-1] + (n, n, n))

    return MetricChart((p, q), -half_width * np.ones(n), half_width * np.ones(n),
                       h, dh, name=f"flat-pq p={p} q={q}")


def diag_poly_chart(p: int, q: int, a=None, b=None, half_width: float = 1.0) -> MetricChart:
    """``h_ii(z) = eta_ii (1 + sum_k a_ik z_k + sum_k b_ik z_k^2)``, off-diagonal zero."""
    n = p + q
    eta_d = np.r_[np.ones(p), -np.ones(q)]
    a = np.zeros((n, n)) if a is None else np.asarray(a, dtype=float).reshape(n, n)
    b = np.zeros((n, n)) if b is None else np.asarray(b, dtype=float).reshape(n, n)

    def h(y):
        y = np.asarray(y, dtype=float)
        diag = eta_d * (1 + y @ a.T + (y ** 2) @ b.T)
        out = np.zeros(y.shape[:-1] + (n, n))
        idx = np.arange(n)
        out[..., idx, idx] = diag
        return out

    def dh(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (n, n, n))
        idx = np.arange(n)
        # d/dz_k of h_ii
        out[..., idx, idx, :] = eta_d[:, None] * (a + 2 * b * y[..., None, :])
        return out

    return MetricChart((p, q), -half_width * np.ones(n), half_width * np.ones(n),
                       h, dh, name=f"diag-poly p={p} q={q}")


def eta_plus_quadratic_chart(p: int, q: int, scale: float = 0.2, seed: int = 0,
                             half_width: float = 0.5) -> MetricChart:
    """``h(z) = eta + scale * (L_k z^k + Q_kl z^k z^l)`` with seeded symmetric L, Q."""
    n = p + q
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((n, n, n))
    L = 0.5 * (L + np.swapaxes(L, 0, 1))  # L[i, j, k], symmetric in ij
    Qm = rng.standard_normal((n, n, n, n))
    Qm = 0.5 * (Qm + np.swapaxes(Qm, 0, 1))
    Qm = 0.5 * (Qm + np.swapaxes(Qm, 2, 3))
    eta = eta_matrix(p, q)

    def h(y):
        y = np.asarray(y, dtype=float)
        return eta + scale * (np.einsum("ijk,...k->...ij", L, y)
                              + np.einsum("ijkl,...k,...l->...ij", Qm, y, y))

    def dh(y):
        y = np.asarray(y, dtype=float)
        return scale * (L + 2 * np.einsum("ijkl,...l->...ijk", Qm, y))

    return MetricChart((p, q), -half_width * np.ones(n), half_width * np.ones(n),
                       h, dh, name=f"eta-plus-quadratic p={p} q={q} scale={scale} seed={seed}")


def _floats(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


CHART_BUILDERS = {
    "flat-pq": lambda kw: flat_chart(int(kw.pop("p")), int(kw.pop("q")),
                                     float(kw.pop("width", 1.0))),
    "diag-poly": lambda kw: diag_poly_chart(
        int(kw.pop("p")), int(kw.pop("q")),
        _floats(kw.pop("a")) if "a" in kw else None,
        _floats(kw.pop("b")) if "b" in kw else None,
        float(kw.pop("width", 1.0))),
    "eta-plus-quadratic": lambda kw: eta_plus_quadratic_chart(
        int(kw.pop("p")), int(kw.pop("q")), float(kw.pop("scale", 0.2)),
        int(kw.pop("seed", 0)), float(kw.pop("width", 0.5))),
}


def parse_chart(text: str) -> MetricChart:
    """Build a chart from ``"<name> key=value ..."`` (see docs/charts.md)."""
    parts = text.split()
    if not parts:
        raise ValueError("empty chart description")
    name, kw = parts[0], {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise ValueError(f"chart parameter {tok!r} is not key=value")
        k, v = tok.split("=", 1)
        kw[k] = v
    if name not in CHART_BUILDERS:
        raise ValueError(f"unknown chart {name!r}; known: {sorted(CHART_BUILDERS)}")
    try:
        chart = CHART_BUILDERS[name](kw)
    except KeyError as exc:
        raise ValueError(f"chart {name!r} is missing parameter {exc.args[0]!r}") from None
    if kw:
        raise ValueError(f"unused chart parameters: {sorted(kw)}")
    return chart
