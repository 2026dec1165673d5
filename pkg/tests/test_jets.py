import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curv4 import expr as ex
from curv4 import jets
from curv4.jets import Jet3

from oracles import random_expression, taylor_coefficient


def test_variable_lift():
    j = Jet3.variable(0, 2.0)
    assert j.value == 2.0
    assert j.derivative((1, 0, 0, 0)) == 1.0
    assert np.sum(np.abs(j.c)) == 3.0  # value + unit slot only


def test_sin_of_variable_taylor():
    s = jets.sin(Jet3.variable(1, 0.0))
    assert abs(s.value) == 0.0
    assert s.derivative((0, 1, 0, 0)) == 1.0
    assert s.derivative((0, 2, 0, 0)) == 0.0
    assert s.derivative((0, 3, 0, 0)) == -1.0


def test_cube_of_variable():
    c = jets.powr(Jet3.variable(2, 1.0), 3)
    assert c.value == 1.0
    assert c.derivative((0, 0, 1, 0)) == 3.0
    assert c.derivative((0, 0, 2, 0)) == 6.0
    assert c.derivative((0, 0, 3, 0)) == 6.0


def test_exp_pure_coefficients():
    e = jets.exp(Jet3.variable(0, 0.0))
    for k in range(4):
        assert abs(e.derivative((k, 0, 0, 0)) - 1.0) < 1e-15


def test_product_mixed_coefficient():
    ab = Jet3.variable(0, 0.0) * Jet3.variable(1, 0.0)
    assert ab.derivative((1, 1, 0, 0)) == 1.0
    assert np.sum(np.abs(ab.c)) == 1.0


def test_geometric_series_normalization():
    """Pins the storage convention: raw Taylor coefficients, derivative = c * a!."""
    r = 1.0 / (1.0 + Jet3.variable(0, 0.0))
    stored = [r.c[jets.INDEX_OF[(k, 0, 0, 0)]] for k in range(4)]
    assert np.allclose(stored, [1.0, -1.0, 1.0, -1.0], atol=1e-15)
    derivs = [r.derivative((k, 0, 0, 0)) for k in range(4)]
    assert np.allclose(derivs, [1.0, -1.0, 2.0, -6.0], atol=1e-15)


def test_polynomial_products_truncation_exact():
    """Degree <= 3 polynomial products match exact expansion coefficient-wise."""
    rng = np.random.default_rng(0)
    x = [Jet3.variable(i, rng.uniform(-1, 1)) for i in range(4)]
    p = x[0] * x[1] - 2.0 * x[2]  # degree 2
    q = x[3] + 0.5 * x[0]  # degree 1
    prod = p * q
    # compare against expanded polynomial evaluated as jets
    expanded = (x[0] * x[1] * x[3] + 0.5 * x[0] * x[0] * x[1]
                - 2.0 * x[2] * x[3] - x[0] * x[2])
    assert np.allclose(prod.c, expanded.c, atol=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_against_symbolic_oracle_batch(seed):
    """Jet coefficients match the AST-level symbolic differentiator."""
    rng = np.random.default_rng(100 + seed)
    checked = 0
    while checked < 250:
        tree = random_expression(rng, depth=3)
        p = rng.uniform(0.3, 1.2, size=4)
        try:
            jet = ex.eval_jet(tree, p[None, :])
        except ex.ExprError:
            continue
        ok = True
        for alpha in [(0, 0, 0, 0), (1, 0, 0, 0), (0, 1, 1, 0), (2, 0, 0, 1),
                      (0, 0, 3, 0), (1, 1, 1, 0)]:
            try:
                want = taylor_coefficient(tree, alpha, p)
            except ex.ExprError:
                ok = False
                break
            if not np.isfinite(want):
                ok = False  # oracle differentiated through ^0 at a zero base
                break
            got = jet.c[0, jets.INDEX_OF[alpha]]
            scale = max(abs(want), 1.0)
            assert abs(got - want) <= 1e-12 * scale, (ex.to_string(tree), alpha)
        if ok:
            checked += 1


def test_chain_rule_composites():
    """elementary(fn, arith(...)) equals the jet of the composed closed form."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b = rng.uniform(0.2, 1.5, size=2)
        p = rng.uniform(0.2, 1.0, size=4)
        composed = ex.parse(f"exp(sin({a}*x1 + x2*x3) - {b}*x4^2)")
        jet = ex.eval_jet(composed, p[None, :])
        for alpha in [(1, 0, 0, 0), (0, 1, 0, 1), (1, 1, 1, 0), (0, 0, 0, 2)]:
            want = taylor_coefficient(composed, alpha, p)
            got = jet.c[0, jets.INDEX_OF[alpha]]
            assert abs(got - want) <= 1e-10 * max(abs(want), 1.0)


def test_division_by_zero_reports_point():
    with pytest.raises(jets.JetError):
        Jet3.variable(0, 1.0) / Jet3.variable(1, 0.0)


def test_log_domain_error():
    with pytest.raises(jets.JetError):
        jets.log(Jet3.variable(0, -1.0))


def test_sqrt_matches_pow_half():
    u = 1.0 + Jet3.variable(0, 0.5) * Jet3.variable(1, 0.25)
    assert np.allclose(jets.sqrt(u).c, jets.powr(u, 0.5).c, atol=1e-14)


def test_nan_poisoning_aborts():
    bad = Jet3.constant(np.nan)
    with pytest.raises(jets.JetError, match="non-finite"):
        jets.assert_finite(bad, "unit test")


def test_batched_matches_scalar():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0.2, 1.0, size=(17, 4))
    tree = ex.parse("sin(x1)*exp(x2) / (1 + x3^2) - sqrt(x4)")
    batch = ex.eval_jet(tree, pts)
    for n in (0, 7, 16):
        single = ex.eval_jet(tree, pts[n:n + 1])
        assert np.allclose(batch.c[n], single.c[0], atol=1e-15)


@given(st.integers(0, 3), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
@settings(max_examples=60, deadline=None)
def test_ring_axioms(axis, a, b):
    x = Jet3.variable(axis, 0.3)
    u = a + x * x
    v = b - 2.0 * x
    w = x * 0.5 + 1.0
    assert np.allclose((u * v).c, (v * u).c, atol=1e-13)
    assert np.allclose(((u + v) * w).c, (u * w + v * w).c, atol=1e-12)
    assert np.allclose((u * (v * w)).c, ((u * v) * w).c, atol=1e-12)


@given(st.floats(0.2, 3.0), st.integers(0, 3))
@settings(max_examples=40, deadline=None)
def test_exp_log_inverse(v, axis):
    u = v + Jet3.variable(axis, 0.0) * 0.3
    back = jets.exp(jets.log(u))
    assert np.allclose(back.c, u.c, atol=1e-12)


def test_partial_degrades_order():
    u = jets.powr(Jet3.variable(0, 1.0), 3)
    du = u.partial(0)  # 3 x^2
    assert abs(du.value - 3.0) < 1e-15
    assert abs(du.derivative((1, 0, 0, 0)) - 6.0) < 1e-15
    assert abs(du.derivative((2, 0, 0, 0)) - 6.0) < 1e-15
    # third-order content of a derivative is unknown and stored as zero
    assert du.c[jets.INDEX_OF[(3, 0, 0, 0)]] == 0.0


def test_mat_inverse_and_det():
    rng = np.random.default_rng(11)
    pts = rng.uniform(0.2, 0.8, size=(5, 4))
    env = [Jet3.variable(i, pts[:, i]) for i in range(4)]
    m = [[None] * 4 for _ in range(4)]
    for i in range(4):
        for j in range(4):
            base = 3.0 if i == j else 0.0
            m[i][j] = Jet3.constant(base, (5,)) + 0.2 * env[i] * env[j]
            m[j][i] = m[i][j]
    inv = jets.mat_inverse(m)
    eye = [[sum((m[i][k] * inv[k][j] for k in range(1, 4)), m[i][0] * inv[0][j])
            for j in range(4)] for i in range(4)]
    for i in range(4):
        for j in range(4):
            target = 1.0 if i == j else 0.0
            assert np.allclose(eye[i][j].value, target, atol=1e-12)
    det = jets.det4(m)
    vals = np.empty((5, 4, 4))
    for i in range(4):
        for j in range(4):
            vals[:, i, j] = m[i][j].value
    assert np.allclose(det.value, np.linalg.det(vals), atol=1e-10)
