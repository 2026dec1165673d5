import numpy as np
import pytest

from curv4 import charts, forms, jets, presets
from curv4 import expr as ex
from curv4.charts import Geometry, conformal_chart, curvature_at, sample_box
from curv4.forms import TwoFormField
from curv4.jets import Jet3

RNG = np.random.default_rng(31)


@pytest.fixture(scope="module")
def cp2():
    chart = presets.cp2_fubini_study()
    pts = sample_box(chart.domain, 8, seed=2)
    return chart, pts, Geometry.of_chart(chart, pts)


def test_star_examples_and_involution():
    f = RNG.normal(size=(40, 6))
    st = forms.hodge_star_frame(f)
    assert np.allclose(forms.hodge_star_frame(st), f)
    assert np.allclose(np.sum(st**2, -1), np.sum(f**2, -1))  # isometry, exact
    e = np.eye(6)
    assert np.allclose(forms.hodge_star_frame(e[0]), e[5])    # w12 -> w34
    assert np.allclose(forms.hodge_star_frame(e[1]), -e[4])   # w13 -> -w24
    assert np.allclose(forms.hodge_star_frame(e[2]), e[3])    # w14 -> w23


def test_volume_pairing_oracle(cp2):
    """phi ^ *psi = <phi, psi> vol fixes every star sign."""
    _, _, geom = cp2
    a6 = [Jet3.constant(v, (8,)) for v in RNG.normal(size=6)]
    b6 = [Jet3.constant(v, (8,)) for v in RNG.normal(size=6)]
    star_b = forms.star_coord_jets(geom, b6)
    av = [x.value for x in a6]
    sv = [x.value for x in star_b]
    wedge = (av[0] * sv[5] - av[1] * sv[4] + av[2] * sv[3]
             + av[3] * sv[2] - av[4] * sv[1] + av[5] * sv[0])
    inner = forms.inner_lambda2_jets(geom, a6, b6).value
    vol = geom.sqrt_det_jet.value
    assert np.max(np.abs(wedge - inner * vol)) < 1e-12


def test_sd_split_contract():
    lam = np.array([3.0, 1.0])
    f = np.zeros(6)
    f[0], f[5] = lam
    out = forms.sd_split_frame(f)
    assert out["F"] == pytest.approx((lam[0] + lam[1])**2)
    assert out["G"] == pytest.approx((lam[0] - lam[1])**2)
    e12 = np.eye(6)[0]
    out = forms.sd_split_frame(e12)
    assert out["F"] == pytest.approx(1.0) and out["G"] == pytest.approx(1.0)
    # self-dual input: G = 0 and *phi+ = phi+
    sd = e12 + np.eye(6)[5]
    out = forms.sd_split_frame(sd)
    assert out["G"] == pytest.approx(0.0)
    assert np.allclose(forms.hodge_star_frame(out["plus"]), out["plus"], atol=1e-12)
    assert np.allclose(forms.hodge_star_frame(out["minus"]), -out["minus"], atol=1e-12)


def test_fg_nonnegative_and_product_zero_iff_sd():
    f = RNG.normal(size=(200, 6))
    out = forms.sd_split_frame(f)
    assert np.all(out["F"] >= 0) and np.all(out["G"] >= 0)
    sd = f + forms.hodge_star_frame(f)
    out2 = forms.sd_split_frame(sd)
    assert np.max(out2["G"]) < 1e-12 * np.max(out2["F"])


def test_d_squared_zero(cp2):
    chart, pts, _ = cp2
    alpha = [ex.eval_jet(ex.parse(s), pts) for s in
             ("sin(x1)*x2", "cos(x3) + x4^2", "x1*x4", "exp(0.3*x2)")]
    dd = forms.exterior_d2_jets(forms.exterior_d1_jets(alpha))
    assert max(np.max(np.abs(v.value)) for v in dd.values()) < 1e-10


def test_flat_hand_calculus():
    chart = presets.flat_t4()
    pts = sample_box(chart.domain, 10, seed=3)
    geom = Geometry.of_chart(chart, pts)
    c6 = [Jet3.constant(0.0, (10,)) for _ in range(6)]
    c6[3] = ex.eval_jet(ex.parse("sin(x1)"), pts)  # phi = sin(x1) dx2^dx3
    dphi = forms.exterior_d2_jets(c6)
    assert np.max(np.abs(dphi[(0, 1, 2)].value - np.cos(pts[:, 0]))) < 1e-10
    for trip in ((0, 1, 3), (0, 2, 3), (1, 2, 3)):
        assert np.max(np.abs(dphi[trip].value)) < 1e-14
    delta = forms.codiff_two_form_jets(geom, c6)
    assert max(np.max(np.abs(d.value)) for d in delta) < 1e-10
    hodge = forms.hodge_laplacian_values(geom, c6)
    assert np.max(np.abs(hodge[:, 3] - np.sin(pts[:, 0]))) < 1e-10


def test_parallel_forms_product_and_kaehler():
    chart = presets.product_s2s2(1.0, 1.0)
    pts = sample_box(chart.domain, 10, seed=4)
    geom = Geometry.of_chart(chart, pts)
    fld = TwoFormField(chart, presets.form_preset("factor_volumes", chart))
    c6 = fld.component_jets(pts)
    T = forms.nabla_two_form_jets(geom, c6)
    assert forms.nabla_norm_sq_values(geom, T).max() < 1e-18
    dphi = forms.exterior_d2_jets(c6)
    assert max(np.max(np.abs(v.value)) for v in dphi.values()) < 1e-10
    delta = forms.codiff_two_form_jets(geom, c6)
    assert max(np.max(np.abs(d.value)) for d in delta) < 1e-10

    cp2_chart = presets.cp2_fubini_study()
    pts2 = sample_box(cp2_chart.domain, 10, seed=5)
    geom2 = Geometry.of_chart(cp2_chart, pts2)
    kf = TwoFormField(cp2_chart, presets.form_preset("kaehler", cp2_chart))
    c6k = kf.component_jets(pts2)
    Tk = forms.nabla_two_form_jets(geom2, c6k)
    assert forms.nabla_norm_sq_values(geom2, Tk).max() < 1e-9
    hodge = forms.hodge_laplacian_values(geom2, c6k)
    assert np.max(np.abs(hodge)) < 1e-8


def test_weitzenboeck_identity_independent_paths(cp2):
    chart, pts, geom = cp2
    comps = {k: f"{RNG.uniform(-0.4, 0.4):.3f}*sin(x{RNG.integers(1, 5)})"
                f"*cos(x{RNG.integers(1, 5)}) + {RNG.uniform(-0.3, 0.3):.3f}"
             for k in forms.PAIR_KEYS}
    fld = TwoFormField(chart, comps)
    c6 = fld.component_jets(pts)
    slate = curvature_at(chart, pts)
    f6 = forms.frame_components(slate.frame, geom.g_values,
                                np.stack([c.value for c in c6], -1))
    hodge = forms.frame_components(slate.frame, geom.g_values,
                                   forms.hodge_laplacian_values(geom, c6))
    rough = forms.frame_components(slate.frame, geom.g_values,
                                   forms.rough_laplacian_values(geom, c6))
    qR = forms.curvature_action_frame(slate.R, f6)
    assert np.max(np.abs(hodge + rough - qR)) < 1e-12


def test_conformal_star_invariance_and_codiff_scaling():
    base = presets.product_s2s2(1.0, 1.0)
    f_src = "0.2*sin(x1)*sin(x3)"
    conf = conformal_chart(base, f_src)
    pts = sample_box(base.domain, 10, seed=6)
    g1 = Geometry.of_chart(base, pts)
    g2 = Geometry.of_chart(conf, pts)
    c6 = [ex.eval_jet(ex.parse(s), pts) for s in
          ("sin(x1)*x2 + 1", "x3", "0.5", "cos(x4)", "x1*x3", "2")]
    s1 = forms.star_coord_jets(g1, c6)
    s2 = forms.star_coord_jets(g2, c6)
    # * on 2-forms is conformally invariant (machine precision)
    assert max(np.max(np.abs(a.value - b.value)) for a, b in zip(s1, s2)) < 1e-12
    # delta' phi = e^{-2f} delta phi
    d1 = forms.codiff_two_form_jets(g1, c6)
    d2 = forms.codiff_two_form_jets(g2, c6)
    scale = np.exp(-2.0 * ex.eval_values(ex.parse(f_src), pts))
    err = max(np.max(np.abs(b.value - scale * a.value)) for a, b in zip(d1, d2))
    assert err < 1e-9


def test_harmonicity_conformally_invariant():
    base = presets.product_s2s2(1.0, 1.0)
    conf = conformal_chart(base, "0.1*sin(x1)*cos(x3)")
    pts = sample_box(base.domain, 12, seed=7)
    fld = TwoFormField(conf, presets.form_preset("factor_volume_1", conf))
    c6 = fld.component_jets(pts)
    geom = Geometry.of_chart(conf, pts)
    assert np.max(np.abs(forms.hodge_laplacian_values(geom, c6))) < 1e-8


def test_classical_kato_everywhere():
    base = presets.product_s2s2(1.0, 1.0)
    conf = conformal_chart(base, "0.15*sin(x1)*cos(x3)")
    pts = sample_box(conf.domain, 300, seed=8)
    geom = Geometry.of_chart(conf, pts)
    fld = TwoFormField(conf, presets.form_preset("factor_volume_1", conf))
    inv = forms.covariant_invariants(geom, fld.component_jets(pts),
                                     degeneracy_floor=0.0)
    ok = np.isfinite(inv["dnorm_sq"])
    ratio = inv["grad_sq"][ok] / np.maximum(inv["dnorm_sq"][ok], 1e-300)
    assert np.min(ratio) >= 1.0 - 1e-9


def test_degenerate_norm_gradient_reported():
    chart = presets.flat_t4()
    pts = sample_box(chart.domain, 20, seed=9)
    geom = Geometry.of_chart(chart, pts)
    # phi vanishing on a hypersurface: |phi| has no gradient there
    c6 = [ex.eval_jet(ex.parse("sin(x1)"), pts)] + \
         [Jet3.constant(0.0, (20,)) for _ in range(5)]
    inv = forms.covariant_invariants(geom, c6, degeneracy_floor=1e-8)
    assert inv["valid"].all() or np.all(np.isnan(inv["dnorm_sq"][~inv["valid"]]))


def test_scalar_laplacian_flat():
    chart = presets.flat_t4()
    pts = sample_box(chart.domain, 15, seed=10)
    geom = Geometry.of_chart(chart, pts)
    u = ex.eval_jet(ex.parse("sin(x1)*cos(x2)"), pts)
    lap = forms.scalar_laplacian_values(geom, u)
    assert np.max(np.abs(lap + 2.0 * u.value)) < 1e-12
    # Delta(h^2) = 2 h Delta h + 2 |dh|^2 fixes the function-Laplacian sign
    lap_sq = forms.scalar_laplacian_values(geom, u * u)
    grad_sq = forms.grad_inner_values(geom, u, u)
    assert np.max(np.abs(lap_sq - 2.0 * u.value * lap - 2.0 * grad_sq)) < 1e-12


def test_rough_laplacian_constant_flat():
    chart = presets.flat_t4()
    pts = sample_box(chart.domain, 5, seed=11)
    geom = Geometry.of_chart(chart, pts)
    c6 = [Jet3.constant(float(v), (5,)) for v in RNG.normal(size=6)]
    assert np.max(np.abs(forms.rough_laplacian_values(geom, c6))) < 1e-14
    assert np.max(np.abs(forms.hodge_laplacian_values(geom, c6))) < 1e-14


def test_two_form_field_parsing():
    chart = presets.flat_t4()
    fld = TwoFormField(chart, {"12": "sin(x1)", "34": "1"})
    assert isinstance(fld.components[0], ex.Call)
    assert ex.constant_value(fld.components[5]) == 1.0
    assert ex.constant_value(fld.components[1]) == 0.0
