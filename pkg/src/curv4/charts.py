"""Coordinate charts with analytic metrics and curvature extraction.

Conventions (the sign dictionary every verifier refers to):
  (a) R(X,Y) = -grad_X grad_Y + grad_Y grad_X + grad_[X,Y],
      R_ijkl = <R(e_i,e_j)e_k, e_l>;
  (b) sec(e_i,e_j) = R_ijij in an orthonormal frame, positive on round spheres
      (constant curvature c: R_ijkl = c (d_ik d_jl - d_il d_jk));
  (c) Ric_ij = sum_k R_kikj, positive on spheres; scal = trace;
  (d) Delta_fun = trace of the covariant Hessian (so Delta_fun(h^2) =
      2 h Delta_fun h + 2|grad h|^2); Delta_Hodge = d delta + delta d
      = -Delta_fun on functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from . import jets
from .jets import Jet3


class ChartError(Exception):
    pass


@dataclass(frozen=True)
class MetricChart:
    g: tuple  # 4x4 nested tuple of expression trees, symmetric
    domain: tuple  # 4 pairs (lo, hi)
    orientation: int = 1
    name: str = "chart"

    def __post_init__(self):
        if len(self.g) != 4 or any(len(row) != 4 for row in self.g):
            raise ChartError("metric must be a 4x4 matrix of expressions")
        if len(self.domain) != 4 or any(hi <= lo for lo, hi in self.domain):
            raise ChartError("domain must be 4 nonempty open intervals")
        if self.orientation not in (1, -1):
            raise ChartError("orientation must be +1 or -1")


def chart_from_strings(entries, domain, orientation=1, name="chart"):
    """Build a chart from a 4x4 (or upper-triangular dict) of source strings."""
    g = [[None] * 4 for _ in range(4)]
    for i in range(4):
        for j in range(4):
            src = entries[i][j]
            g[i][j] = ex.parse(src) if isinstance(src, str) else src
    return MetricChart(tuple(tuple(row) for row in g), tuple(tuple(d) for d in domain),
                       orientation, name)


def conformal_chart(base: MetricChart, factor, name=None):
    """Chart with metric exp(2 f) g, f given as an expression (tree or source)."""
    f = ex.parse(factor) if isinstance(factor, str) else factor
    scale = ex.Call("exp", ex.Bin("*", ex.num(2.0), f))
    g = tuple(tuple(ex.mul(scale, base.g[i][j]) for j in range(4)) for i in range(4))
    return MetricChart(g, base.domain, base.orientation,
                       name or f"conformal({base.name})")


# -- sampling -----------------------------------------------------------------


def sample_box(domain, count, margin=0.05, seed=0):
    """Low-discrepancy points in the box shrunk by `margin` per side."""
    if count < 1:
        raise ChartError("sample count must be >= 1")
    sampler = qmc.Halton(d=4, scramble=True, seed=int(seed))
    u = sampler.random(count)
    lo = np.array([d[0] for d in domain])
    hi = np.array([d[1] for d in domain])
    width = hi - lo
    return lo + width * (margin + (1.0 - 2.0 * margin) * u)


# -- metric evaluation --------------------------------------------------------


def metric_jets(chart: MetricChart, pts):
    """4x4 nested list of Jet3 for g at pts (shape (..., 4))."""
    pts = np.asarray(pts, dtype=float)
    env = [Jet3.variable(i, pts[..., i]) for i in range(4)]
    return metric_jets_env(chart, env, pts)


def metric_jets_env(chart: MetricChart, env, pts=None):
    g = [[None] * 4 for _ in range(4)]
    for i in range(4):
        for j in range(i, 4):
            g[i][j] = ex.eval_jet_env(chart.g[i][j], env, pts)
            if j != i:
                g[j][i] = g[i][j]
    return g


class Geometry:
    """Per-point metric pipeline shared by curvature and form operators.

    Accepts metric jets directly so conformal metrics built from field data
    (not expressible in the DSL) run through the same code paths.
    """

    def __init__(self, gjets, pts):
        self.pts = np.asarray(pts, dtype=float)
        self.g = gjets
        self._cache = {}

    @staticmethod
    def of_chart(chart: MetricChart, pts):
        return Geometry(metric_jets(chart, pts), pts)

    def _get(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def ginv(self):
        return self._get("ginv", lambda: jets.mat_inverse(self.g, self.pts))

    @property
    def g_values(self):
        return self._get("gv", lambda: _mat_values(self.g))

    @property
    def ginv_values(self):
        return self._get("giv", lambda: _mat_values(self.ginv))

    @property
    def det_jet(self):
        return self._get("det", lambda: jets.det4(self.g))

    @property
    def sqrt_det_jet(self):
        return self._get("sqdet", lambda: jets.sqrt(self.det_jet, self.pts))

    @property
    def gamma(self):
        """Christoffel jets: gamma[i][j][k] = Gamma^i_jk (symmetric in j,k)."""

        def build():
            g, ginv = self.g, self.ginv
            dg = [[[g[l][k].partial(a) for k in range(4)] for l in range(4)]
                  for a in range(4)]
            gam = [[[None] * 4 for _ in range(4)] for _ in range(4)]
            for i in range(4):
                for j in range(4):
                    for k in range(j, 4):
                        acc = None
                        for l in range(4):
                            term = ginv[i][l] * (dg[j][l][k] + dg[k][j][l] - dg[l][j][k])
                            acc = term if acc is None else acc + term
                        gam[i][j][k] = 0.5 * acc
                        gam[i][k][j] = gam[i][j][k]
            return gam

        return self._get("gamma", build)

    @property
    def gamma_values(self):
        def build():
            gam = self.gamma
            batch = self.pts.shape[:-1]
            out = np.empty(batch + (4, 4, 4))
            for i in range(4):
                for j in range(4):
                    for k in range(4):
                        out[..., i, j, k] = gam[i][j][k].value
            return out

        return self._get("gamma_values", build)

    @property
    def dgamma_values(self):
        """d_a Gamma^i_jk as values, shape batch + (4,4,4,4) indexed [a,i,j,k]."""

        def build():
            gam = self.gamma
            batch = self.pts.shape[:-1]
            out = np.empty(batch + (4, 4, 4, 4))
            for i in range(4):
                for j in range(4):
                    for k in range(4):
                        out[..., :, i, j, k] = gam[i][j][k].grad()
            return out

        return self._get("dgamma_values", build)

    @property
    def riemann_coord(self):
        """R_ijkl in coordinates (all indices down), shape batch + (4,4,4,4)."""

        def build():
            G = self.gamma_values
            dG = self.dgamma_values
            rup = (
                -np.einsum("...iljk->...lijk", dG)
                + np.einsum("...jlik->...lijk", dG)
                - np.einsum("...lim,...mjk->...lijk", G, G, optimize=True)
                + np.einsum("...ljm,...mik->...lijk", G, G, optimize=True)
            )
            return np.einsum("...lm,...mijk->...ijkl", self.g_values, rup, optimize=True)

        return self._get("riemann_coord", build)

    @property
    def frame(self):
        """Orthonormal frame values: columns E[..., :, a] are the frame vectors.

        Gram-Schmidt on the coordinate basis in fixed order (equals the
        inverse-transpose Cholesky factor); orientation flag handled by the
        chart wrapper.
        """

        def build():
            L = np.linalg.cholesky(self.g_values)
            eye = np.broadcast_to(np.eye(4), L.shape)
            Linv = np.linalg.solve(L, eye)
            return np.swapaxes(Linv, -1, -2)

        return self._get("frame", build)

    def frame_jets(self):
        """Frame as jets (needed where frame-component fields get differentiated)."""
        g = self.g
        basis = [[Jet3.constant(1.0 if i == a else 0.0, self.pts.shape[:-1])
                  for i in range(4)] for a in range(4)]  # basis[a][i]: coords of d_a

        def inner(u, v):
            acc = None
            for i in range(4):
                for j in range(4):
                    t = u[i] * g[i][j] * v[j]
                    acc = t if acc is None else acc + t
            return acc

        frame = []
        for a in range(4):
            v = [Jet3(c.c.copy()) for c in basis[a]]
            for b in range(a):
                coef = inner(v, frame[b])
                v = [v[i] - coef * frame[b][i] for i in range(4)]
            nrm = jets.sqrt(inner(v, v), self.pts)
            frame.append([v[i] / nrm for i in range(4)])
        return frame  # frame[a][i] = component i of e_a


def _mat_values(m):
    batch = m[0][0].value.shape
    out = np.empty(batch + (4, 4))
    for i in range(4):
        for j in range(4):
            out[..., i, j] = m[i][j].value
    return out


# -- curvature slate ------------------------------------------------------------


@dataclass
class CurvatureSlate:
    points: np.ndarray  # (N, 4)
    frame: np.ndarray  # (N, 4, 4), columns are frame vectors in coordinates
    R: np.ndarray  # (N, 4, 4, 4, 4) in the orthonormal frame
    Ric: np.ndarray  # (N, 4, 4)
    scal: np.ndarray  # (N,)
    geometry: Geometry = field(default=None, repr=False)


def curvature_at(chart_or_geom, pts=None, frame=None, orientation=1):
    """Curvature tensor in an orthonormal frame (Gram-Schmidt or supplied).

    `frame`, if given, must hold orthonormal tangent vectors as columns.
    """
    if isinstance(chart_or_geom, MetricChart):
        chart = chart_or_geom
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        _check_interior(chart, pts)
        geom = Geometry.of_chart(chart, pts)
        orientation = chart.orientation
    else:
        geom = chart_or_geom
        pts = geom.pts
    if frame is None:
        E = geom.frame.copy()
        if orientation < 0:
            E[..., :, 3] *= -1.0
    else:
        E = np.broadcast_to(np.asarray(frame, dtype=float), pts.shape[:-1] + (4, 4)).copy()
        gram = np.einsum("...ia,...ij,...jb->...ab", E, geom.g_values, E, optimize=True)
        dev = np.max(np.abs(gram - np.eye(4)))
        if dev > 1e-8:
            raise ChartError(f"supplied basis is not orthonormal (Gram deviation {dev:.2e})")
    Rc = geom.riemann_coord
    R = np.einsum("...ijkl,...ia,...jb,...kc,...ld->...abcd", Rc, E, E, E, E, optimize=True)
    Ric = np.einsum("...kikj->...ij", R)
    scal = np.einsum("...ii->...", Ric)
    return CurvatureSlate(points=pts, frame=E, R=R, Ric=Ric, scal=scal, geometry=geom)


def _check_interior(chart, pts):
    lo = np.array([d[0] for d in chart.domain])
    hi = np.array([d[1] for d in chart.domain])
    if np.any(pts <= lo) or np.any(pts >= hi):
        bad = np.argmax(np.any((pts <= lo) | (pts >= hi), axis=-1))
        raise ChartError(f"point {tuple(pts.reshape(-1,4)[bad])} not interior to {chart.name}")


def sectional(slate: CurvatureSlate, u, v):
    """Sectional curvature of span(u, v); u, v in frame components."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    num = np.einsum("...ijkl,...i,...j,...k,...l->...", slate.R, u, v, u, v, optimize=True)
    uu = np.einsum("...i,...i->...", u, u, optimize=True)
    vv = np.einsum("...i,...i->...", v, v, optimize=True)
    uv = np.einsum("...i,...i->...", u, v, optimize=True)
    den = uu * vv - uv**2
    if np.any(den <= 1e-14 * uu * vv):
        raise ChartError("degenerate plane in sectional curvature")
    return num / den


# -- normal charts --------------------------------------------------------------


def normal_chart(chart: MetricChart, p, basis):
    """Chart in coordinates y with x = p + B y - 1/2 B-quadratic correction.

    In the new chart Gamma'(0) = 0 and g'(0) = I; the coordinate frame at the
    origin equals `basis` (columns, orthonormal under g at p).
    """
    p = np.asarray(p, dtype=float).reshape(4)
    B = np.asarray(basis, dtype=float).reshape(4, 4)
    geom = Geometry.of_chart(chart, p[None, :])
    gram = B.T @ geom.g_values[0] @ B
    dev = np.max(np.abs(gram - np.eye(4)))
    if dev > 1e-8:
        raise ChartError(f"basis is not orthonormal at p (Gram deviation {dev:.2e})")
    gamma_p = geom.gamma_values[0]  # Gamma^i_jk at p
    C = np.einsum("ijk,ja,kb->iab", gamma_p, B, B, optimize=True)  # symmetric in (a, b)

    ys = [ex.Var(a) for a in range(4)]
    x_exprs = []
    jac = [[None] * 4 for _ in range(4)]  # J[i][a] = dx_i/dy_a as expressions
    for i in range(4):
        node = ex.num(p[i])
        for a in range(4):
            node = ex.add(node, ex.mul(ex.num(B[i, a]), ys[a]))
        for a in range(4):
            for b in range(4):
                if C[i, a, b] != 0.0:
                    node = ex.sub(node, ex.mul(ex.num(0.5 * C[i, a, b]),
                                               ex.mul(ys[a], ys[b])))
        x_exprs.append(node)
        for a in range(4):
            jn = ex.num(B[i, a])
            for b in range(4):
                if C[i, a, b] != 0.0:
                    jn = ex.sub(jn, ex.mul(ex.num(C[i, a, b]), ys[b]))
            jac[i][a] = jn

    gp = [[None] * 4 for _ in range(4)]
    for a in range(4):
        for b in range(a, 4):
            acc = None
            for i in range(4):
                for j in range(4):
                    gij = ex.substitute(chart.g[i][j], x_exprs)
                    term = ex.mul(ex.mul(jac[i][a], jac[j][b]), gij)
                    acc = term if acc is None else ex.add(acc, term)
            gp[a][b] = acc
            gp[b][a] = acc

    r = _normal_chart_radius(chart, p, B, C)
    domain = tuple((-r, r) for _ in range(4))
    return MetricChart(tuple(tuple(row) for row in gp), domain, chart.orientation,
                       name=f"normal({chart.name})")


def _normal_chart_radius(chart, p, B, C):
    lo = np.array([d[0] for d in chart.domain])
    hi = np.array([d[1] for d in chart.domain])
    dist = float(np.min(np.minimum(p - lo, hi - p)))
    lin = float(np.max(np.abs(B).sum(axis=1)))
    quad = float(np.max(np.abs(C).sum(axis=(1, 2))))
    r = 0.5 * dist / max(lin, 1e-12)
    for _ in range(60):
        if r * lin + 0.5 * r * r * quad <= 0.9 * dist:
            break
        r *= 0.5
    return max(r, 1e-6)


def pullback_two_form(components, x_exprs, jac):
    """Pull a coordinate 2-form field back through x = x(y).

    components: dict {(i,j) i<j: expr tree}; returns the same structure in y.
    """
    full = {}
    for (i, j), node in components.items():
        full[(i, j)] = node
    out = {}
    for a in range(4):
        for b in range(a + 1, 4):
            acc = None
            for (i, j), node in full.items():
                sub = ex.substitute(node, x_exprs)
                # phi_ij (J_ia J_jb - J_ib J_ja)
                t1 = ex.mul(jac[i][a], jac[j][b])
                t2 = ex.mul(jac[i][b], jac[j][a])
                term = ex.mul(sub, ex.sub(t1, t2))
                acc = term if acc is None else ex.add(acc, term)
            out[(a, b)] = acc if acc is not None else ex.num(0.0)
    return out


def normal_chart_map(chart: MetricChart, p, basis):
    """The (x_exprs, jac) pair of normal_chart, for pulling back fields."""
    p = np.asarray(p, dtype=float).reshape(4)
    B = np.asarray(basis, dtype=float).reshape(4, 4)
    geom = Geometry.of_chart(chart, p[None, :])
    gamma_p = geom.gamma_values[0]
    C = np.einsum("ijk,ja,kb->iab", gamma_p, B, B, optimize=True)
    ys = [ex.Var(a) for a in range(4)]
    x_exprs = []
    jac = [[None] * 4 for _ in range(4)]
    for i in range(4):
        node = ex.num(p[i])
        for a in range(4):
            node = ex.add(node, ex.mul(ex.num(B[i, a]), ys[a]))
        for a in range(4):
            for b in range(4):
                if C[i, a, b] != 0.0:
                    node = ex.sub(node, ex.mul(ex.num(0.5 * C[i, a, b]),
                                               ex.mul(ys[a], ys[b])))
        x_exprs.append(node)
        for a in range(4):
            jn = ex.num(B[i, a])
            for b in range(4):
                if C[i, a, b] != 0.0:
                    jn = ex.sub(jn, ex.mul(ex.num(C[i, a, b]), ys[b]))
            jac[i][a] = jn
    return x_exprs, jac


def validate_chart(chart: MetricChart, count=32, margin=0.05, seed=7):
    """Positive-definiteness spot check (Cholesky at sampled interior points)."""
    pts = sample_box(chart.domain, count, margin, seed)
    g = Geometry.of_chart(chart, pts).g_values
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as e:
        raise ChartError(f"metric not positive definite on {chart.name}: {e}") from None
    if np.any(np.linalg.det(g) <= 0.0):
        raise ChartError(f"metric determinant not positive on {chart.name}")
    return True
