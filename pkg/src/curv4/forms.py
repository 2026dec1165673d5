"""2-form fields: Hodge star, d, delta, covariant derivatives, Laplacians, F/G.

Component conventions: a 2-form is stored by its six ordered-pair coefficients
(12, 13, 14, 23, 24, 34), phi = sum_{i<j} c_ij dx^i ^ dx^j, and the Lambda^2
inner product makes {w^i ^ w^j}_{i<j} orthonormal in an orthonormal coframe,
so |phi|^2 = sum_{i<j} f_ij^2.  The full antisymmetric coefficients used by
the component Bochner identity are f/2; both sides of that identity are linear
in phi, so the verifier works directly with the ordered-pair components.
"""

from __future__ import annotations

import itertools as it

import numpy as np

from . import expr as ex
from . import jets
from .charts import Geometry, MetricChart
from .jets import Jet3

PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
PAIR_KEYS = ("12", "13", "14", "23", "24", "34")
PAIR_INDEX = {p: k for k, p in enumerate(PAIRS)}
TRIPLES = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))

# Frame Hodge star on ordered-pair components: (12)<->(34), (13)<->-(24),
# (14)<->(23).  Signs fixed by the volume pairing phi ^ *psi = <phi,psi> vol.
STAR6 = np.zeros((6, 6))
STAR6[PAIR_INDEX[(0, 1)], PAIR_INDEX[(2, 3)]] = 1.0
STAR6[PAIR_INDEX[(2, 3)], PAIR_INDEX[(0, 1)]] = 1.0
STAR6[PAIR_INDEX[(0, 2)], PAIR_INDEX[(1, 3)]] = -1.0
STAR6[PAIR_INDEX[(1, 3)], PAIR_INDEX[(0, 2)]] = -1.0
STAR6[PAIR_INDEX[(0, 3)], PAIR_INDEX[(1, 2)]] = 1.0
STAR6[PAIR_INDEX[(1, 2)], PAIR_INDEX[(0, 3)]] = 1.0


class FormError(Exception):
    pass


class TwoFormField:
    """Six coordinate-component expressions over a chart."""

    def __init__(self, chart: MetricChart, components):
        self.chart = chart
        comps = []
        for key in PAIR_KEYS:
            node = components.get(key, ex.num(0.0)) if isinstance(components, dict) \
                else components[PAIR_KEYS.index(key)]
            comps.append(ex.parse(node) if isinstance(node, str) else node)
        self.components = tuple(comps)

    def component_jets(self, pts):
        pts = np.asarray(pts, dtype=float)
        env = [Jet3.variable(i, pts[..., i]) for i in range(4)]
        return [ex.eval_jet_env(c, env, pts) for c in self.components]


# -- value-level frame operations ---------------------------------------------


def hodge_star_frame(f6):
    """Star on orthonormal-frame ordered-pair components, shape (..., 6)."""
    return np.asarray(f6) @ STAR6.T


def frame_components(E, g_values, coord6):
    """Frame components f_ab = phi(e_a, e_b) from coordinate components.

    E: (..., 4, 4) frame columns; coord6: (..., 6) coordinate coefficients.
    """
    Phi = full_matrix_values(coord6)
    _ = g_values  # orthonormality of E under g is the caller's contract
    Ff = np.einsum("...ij,...ia,...jb->...ab", Phi, E, E, optimize=True)
    return pair_components_values(Ff)


def full_matrix_values(c6):
    c6 = np.asarray(c6)
    out = np.zeros(c6.shape[:-1] + (4, 4))
    for k, (i, j) in enumerate(PAIRS):
        out[..., i, j] = c6[..., k]
        out[..., j, i] = -c6[..., k]
    return out


def pair_components_values(mat):
    out = np.empty(mat.shape[:-2] + (6,))
    for k, (i, j) in enumerate(PAIRS):
        out[..., k] = mat[..., i, j]
    return out


def sd_split_frame(f6, tol=1e-10):
    """phi+- = phi +- *phi, F = |phi+|^2/2, G = |phi-|^2/2, with the wedge
    cross-check F = |phi|^2 + *(phi^phi), G = |phi|^2 - *(phi^phi)."""
    f6 = np.asarray(f6)
    star = hodge_star_frame(f6)
    fplus = f6 + star
    fminus = f6 - star
    F = 0.5 * np.sum(fplus**2, axis=-1)
    G = 0.5 * np.sum(fminus**2, axis=-1)
    norm_sq = np.sum(f6**2, axis=-1)
    wedge = 2.0 * (
        f6[..., 0] * f6[..., 5] - f6[..., 1] * f6[..., 4] + f6[..., 2] * f6[..., 3]
    )
    scale = np.maximum(norm_sq, 1e-300)
    dev = max(np.max(np.abs(F - (norm_sq + wedge)) / np.maximum(scale, 1.0)),
              np.max(np.abs(G - (norm_sq - wedge)) / np.maximum(scale, 1.0))) \
        if f6.size else 0.0
    if dev > tol:
        raise FormError(
            f"self-dual split cross-check failed ({dev:.2e} > {tol:g}): star convention bug")
    return {"plus": fplus, "minus": fminus, "F": F, "G": G}


# -- jet-level coordinate operations -------------------------------------------


def lambda2_metric_jets(geom: Geometry):
    """Q[(ij),(kl)] = g^ik g^jl - g^il g^jk as jets, 6x6 symmetric."""
    gi = geom.ginv
    Q = [[None] * 6 for _ in range(6)]
    for a, (i, j) in enumerate(PAIRS):
        for b, (k, l) in enumerate(PAIRS):
            if b < a:
                continue
            Q[a][b] = gi[i][k] * gi[j][l] - gi[i][l] * gi[j][k]
            Q[b][a] = Q[a][b]
    return Q


def inner_lambda2_jets(geom: Geometry, a6, b6, Q=None):
    Q = Q if Q is not None else lambda2_metric_jets(geom)
    acc = None
    for p in range(6):
        for q in range(6):
            t = a6[p] * Q[p][q] * b6[q]
            acc = t if acc is None else acc + t
    return acc


def norm_sq_jet(geom: Geometry, c6, Q=None):
    return inner_lambda2_jets(geom, c6, c6, Q)


def wedge_self_jet(geom: Geometry, c6):
    """*(phi ^ phi) = 2 (c12 c34 - c13 c24 + c14 c23) / sqrt(det g)."""
    w = c6[0] * c6[5] - c6[1] * c6[4] + c6[2] * c6[3]
    return (2.0 * w) / geom.sqrt_det_jet


def star_coord_jets(geom: Geometry, c6):
    """Coordinate components of *phi: (*phi)_kl = sqrt(g) eps_{ijkl} phi^{ij} (i<j)."""
    gi = geom.ginv
    up = [[None] * 4 for _ in range(4)]  # phi^{ij} for i<j as jets
    for i in range(4):
        for j in range(i + 1, 4):
            acc = None
            for m, (a, b) in enumerate(PAIRS):
                t = (gi[i][a] * gi[j][b] - gi[i][b] * gi[j][a]) * c6[m]
                acc = t if acc is None else acc + t
            up[i][j] = acc
    sq = geom.sqrt_det_jet
    out = []
    for k, l in PAIRS:
        rest = [m for m in range(4) if m not in (k, l)]
        i, j = rest
        sign = _eps4(i, j, k, l)
        out.append(sq * up[i][j] * sign)
    return out


def _eps4(i, j, k, l):
    perm = (i, j, k, l)
    sign = 1
    p = list(perm)
    for a in range(4):
        for b in range(a + 1, 4):
            if p[a] > p[b]:
                sign = -sign
    return sign


def exterior_d2_jets(c6):
    """3-form components of d(phi), keyed by TRIPLES, metric-free."""
    out = {}
    full = {}
    for k, (i, j) in enumerate(PAIRS):
        full[(i, j)] = c6[k]

    def comp(i, j):
        if i == j:
            return None
        if (i, j) in full:
            return full[(i, j)]
        return -full[(j, i)]

    for (i, j, k) in TRIPLES:
        out[(i, j, k)] = (comp(j, k).partial(i) - comp(i, k).partial(j)
                          + comp(i, j).partial(k))
    return out


def exterior_d1_jets(a4):
    """2-form components of d(alpha) for a 1-form given as 4 jets."""
    return [a4[j].partial(i) - a4[i].partial(j) for (i, j) in PAIRS]


def nabla_two_form_jets(geom: Geometry, c6):
    """(nabla_a phi)_{ij} jets: T[a][k] with k indexing PAIRS."""
    gam = geom.gamma
    full = _full_jets(c6)
    T = []
    for a in range(4):
        row = []
        for (i, j) in PAIRS:
            t = full[i][j].partial(a)
            for l in range(4):
                t = t - gam[l][a][i] * full[l][j] - gam[l][a][j] * full[i][l]
            row.append(t)
        T.append(row)
    return T


def _full_jets(c6):
    batch = c6[0].value.shape
    zero = Jet3.constant(0.0, batch)
    full = [[zero for _ in range(4)] for _ in range(4)]
    for k, (i, j) in enumerate(PAIRS):
        full[i][j] = c6[k]
        full[j][i] = -c6[k]
    return full


def codiff_two_form_jets(geom: Geometry, c6, T=None):
    """1-form (delta phi)_j = -g^{ab} (nabla_a phi)_{bj} as jets."""
    T = T if T is not None else nabla_two_form_jets(geom, c6)
    gi = geom.ginv
    Tfull = [_full_jets(row) for row in T]  # Tfull[a][b][j]
    out = []
    for j in range(4):
        acc = None
        for a in range(4):
            for b in range(4):
                t = gi[a][b] * Tfull[a][b][j]
                acc = t if acc is None else acc + t
        out.append(-acc)
    return out


def codiff_three_form_values(geom: Geometry, w_triples):
    """(delta w)_{jk} values for a 3-form of jets keyed by TRIPLES."""
    gam = geom.gamma_values
    giv = geom.ginv_values

    idx = {}
    for t, trip in enumerate(TRIPLES):
        idx[trip] = (t, 1.0)

    def comp_values_and_grads():
        batch = geom.pts.shape[:-1]
        vals = np.zeros(batch + (4, 4, 4))
        grads = np.zeros(batch + (4, 4, 4, 4))  # [a, i, j, k]
        for trip in TRIPLES:
            jet = w_triples[trip]
            v = jet.value
            g = jet.grad()
            for perm in it.permutations(range(3)):
                sign = _perm_sign(perm)
                tgt = (trip[perm[0]], trip[perm[1]], trip[perm[2]])
                vals[..., tgt[0], tgt[1], tgt[2]] = sign * v
                grads[..., :, tgt[0], tgt[1], tgt[2]] = sign * g
        return vals, grads

    W, dW = comp_values_and_grads()
    # (nabla_a w)_{ijk} = d_a w_ijk - G^l_ai w_ljk - G^l_aj w_ilk - G^l_ak w_ijl
    nab = dW \
        - np.einsum("...lai,...ljk->...aijk", gam, W, optimize=True) \
        - np.einsum("...laj,...ilk->...aijk", gam, W, optimize=True) \
        - np.einsum("...lak,...ijl->...aijk", gam, W, optimize=True)
    dd = -np.einsum("...ab,...abjk->...jk", giv, nab, optimize=True)
    return pair_components_values(dd)


def _perm_sign(perm):
    sign = 1
    p = list(perm)
    for a in range(len(p)):
        for b in range(a + 1, len(p)):
            if p[a] > p[b]:
                sign = -sign
    return sign


def hodge_laplacian_values(geom: Geometry, c6, T=None):
    """(d delta + delta d) phi, coordinate-component values (..., 6)."""
    T = T if T is not None else nabla_two_form_jets(geom, c6)
    dphi = exterior_d2_jets(c6)
    delta_phi = codiff_two_form_jets(geom, c6, T)
    d_delta = np.stack([(delta_phi[j].partial(i) - delta_phi[i].partial(j)).value
                        for (i, j) in PAIRS], axis=-1)
    delta_d = codiff_three_form_values(geom, dphi)
    return d_delta + delta_d


def rough_laplacian_values(geom: Geometry, c6):
    """g^{ab} (nabla^2_{ab} phi)_{ij} values (..., 6); note Delta_rough = -this
    in the positive-spectrum convention."""
    gam_v = geom.gamma_values
    giv = geom.ginv_values
    T = nabla_two_form_jets(geom, c6)  # T[b][pair]
    batch = geom.pts.shape[:-1]
    Tfull_vals = np.zeros(batch + (4, 4, 4))
    Tfull_grads = np.zeros(batch + (4, 4, 4, 4))  # [a; b, i, j]
    for b in range(4):
        for k, (i, j) in enumerate(PAIRS):
            v = T[b][k].value
            g = T[b][k].grad()
            Tfull_vals[..., b, i, j] = v
            Tfull_vals[..., b, j, i] = -v
            Tfull_grads[..., :, b, i, j] = g
            Tfull_grads[..., :, b, j, i] = -g
    nab2 = (Tfull_grads
            - np.einsum("...cab,...cij->...abij", gam_v, Tfull_vals, optimize=True)
            - np.einsum("...lai,...blj->...abij", gam_v, Tfull_vals, optimize=True)
            - np.einsum("...laj,...bil->...abij", gam_v, Tfull_vals, optimize=True))
    tr = np.einsum("...ab,...abij->...ij", giv, nab2, optimize=True)
    return pair_components_values(tr)


def curvature_action_frame(R, f6):
    """q(R) phi = sum_{ij} w^i ^ i(e_j) R_{e_i e_j} phi, orthonormal frame.

    R: (..., 4,4,4,4) frame curvature; f6: (..., 6) frame components.
    """
    Phi = full_matrix_values(f6)
    Ric = np.einsum("...kikj->...ij", R)
    term_ric = (np.einsum("...pa,...pb->...ab", Ric, Phi, optimize=True)
                - np.einsum("...pb,...pa->...ab", Ric, Phi, optimize=True))
    mixed = np.einsum("...ajpb,...pj->...ab", R, Phi, optimize=True)
    term_mix = mixed - np.swapaxes(mixed, -1, -2)
    Q = term_ric - term_mix
    return pair_components_values(Q)


# -- scalar helpers -------------------------------------------------------------


def scalar_laplacian_values(geom: Geometry, u: Jet3):
    """Delta_fun u = g^{ab} (d2_{ab} u - Gamma^c_ab d_c u), trace-Hessian sign."""
    giv = geom.ginv_values
    gam = geom.gamma_values
    batch = geom.pts.shape[:-1]
    hess = np.empty(batch + (4, 4))
    for a in range(4):
        for b in range(a, 4):
            alpha = [0, 0, 0, 0]
            alpha[a] += 1
            alpha[b] += 1
            hess[..., a, b] = u.derivative(tuple(alpha))
            hess[..., b, a] = hess[..., a, b]
    grad = u.grad()
    cov = hess - np.einsum("...cab,...c->...ab", gam, grad, optimize=True)
    return np.einsum("...ab,...ab->...", giv, cov, optimize=True)


def grad_inner_values(geom: Geometry, u: Jet3, v: Jet3):
    """<grad u, grad v> = g^{ab} d_a u d_b v."""
    return np.einsum("...ab,...a,...b->...", geom.ginv_values, u.grad(), v.grad(), optimize=True)


def scalar_laplacian_scale(geom: Geometry, u: Jet3):
    """Pre-cancellation magnitude of Delta_fun u: sum |g^ab|(|hess| + |Gamma d u|).

    Residuals of identities whose exact value vanishes are meaningful relative
    to this, not to the cancelled result.
    """
    giv = np.abs(geom.ginv_values)
    gam = np.abs(geom.gamma_values)
    batch = geom.pts.shape[:-1]
    hess = np.empty(batch + (4, 4))
    for a in range(4):
        for b in range(a, 4):
            alpha = [0, 0, 0, 0]
            alpha[a] += 1
            alpha[b] += 1
            hess[..., a, b] = np.abs(u.derivative(tuple(alpha)))
            hess[..., b, a] = hess[..., a, b]
    grad = np.abs(u.grad())
    cov = hess + np.einsum("...cab,...c->...ab", gam, grad, optimize=True)
    return np.einsum("...ab,...ab->...", giv, cov, optimize=True)


def norm_values(geom: Geometry, c6, Q=None):
    return np.sqrt(np.maximum(norm_sq_jet(geom, c6, Q).value, 0.0))


def nabla_norm_sq_values(geom: Geometry, T, Q=None):
    """|nabla phi|^2 = g^{ab} <T_a, T_b>_{Lambda^2} values."""
    Qj = Q if Q is not None else lambda2_metric_jets(geom)
    giv = geom.ginv_values
    batch = geom.pts.shape[:-1]
    inner = np.empty(batch + (4, 4))
    for a in range(4):
        for b in range(a, 4):
            inner[..., a, b] = inner_lambda2_jets(geom, T[a], T[b], Qj).value
            inner[..., b, a] = inner[..., a, b]
    return np.einsum("...ab,...ab->...", giv, inner, optimize=True)


def covariant_invariants(geom: Geometry, c6, degeneracy_floor=0.0, Q=None, T=None,
                          nsq=None, grad_sq=None):
    """|nabla phi|^2, |phi|, |d|phi||^2 (masked where |phi| <= floor)."""
    Q = Q if Q is not None else lambda2_metric_jets(geom)
    T = T if T is not None else nabla_two_form_jets(geom, c6)
    nsq = nsq if nsq is not None else norm_sq_jet(geom, c6, Q)
    grad_sq = grad_sq if grad_sq is not None else nabla_norm_sq_values(geom, T, Q)
    norm = np.sqrt(np.maximum(nsq.value, 0.0))
    valid = norm > degeneracy_floor
    dnorm_sq = np.full(norm.shape, np.nan)
    if np.all(valid):
        nj = jets.sqrt(nsq, geom.pts)
        dnorm_sq = grad_inner_values(geom, nj, nj)
    elif np.any(valid):
        sub_pts = geom.pts[valid]
        sub_geom = Geometry(_subset_matrix(geom.g, valid), sub_pts)
        sub_c6 = [Jet3(c.c[valid]) for c in c6]
        sub_nsq = norm_sq_jet(sub_geom, sub_c6)
        nj = jets.sqrt(sub_nsq, sub_pts)
        dnorm_sq[valid] = grad_inner_values(sub_geom, nj, nj)
    return {"grad_sq": grad_sq, "norm": norm, "dnorm_sq": dnorm_sq, "valid": valid}


def _subset_matrix(m, mask):
    return [[Jet3(m[i][j].c[mask]) for j in range(4)] for i in range(4)]
