"""Independent oracles shared by the test modules.

The symbolic differentiator works on the expression AST and never touches the
jet code, so jet coefficients can be checked against a genuinely separate
path.  Curvature oracles are the classical closed forms.
"""

import numpy as np

from curv4 import expr as ex


def differentiate(node, axis):
    """d node / d x_axis as a new expression tree."""
    if isinstance(node, ex.Num) or isinstance(node, ex.Const):
        return ex.Num(0.0)
    if isinstance(node, ex.Var):
        return ex.Num(1.0 if node.index == axis else 0.0)
    if isinstance(node, ex.Unary):
        return ex.Unary("-", differentiate(node.arg, axis))
    if isinstance(node, ex.Bin):
        l, r = node.left, node.right
        dl, dr = differentiate(l, axis), differentiate(r, axis)
        if node.op == "+":
            return ex.Bin("+", dl, dr)
        if node.op == "-":
            return ex.Bin("-", dl, dr)
        if node.op == "*":
            return ex.Bin("+", ex.Bin("*", dl, r), ex.Bin("*", l, dr))
        if node.op == "/":
            num = ex.Bin("-", ex.Bin("*", dl, r), ex.Bin("*", l, dr))
            return ex.Bin("/", num, ex.Bin("*", r, r))
        if node.op == "^":
            c = ex.constant_value(r)
            if c is None:
                raise ValueError("oracle only handles constant exponents")
            down = ex.Bin("^", l, ex.Num(c - 1.0))
            return ex.Bin("*", ex.Num(c), ex.Bin("*", down, dl))
    if isinstance(node, ex.Call):
        da = differentiate(node.arg, axis)
        a = node.arg
        outer = {
            "sin": lambda: ex.Call("cos", a),
            "cos": lambda: ex.Unary("-", ex.Call("sin", a)),
            "exp": lambda: ex.Call("exp", a),
            "log": lambda: ex.Bin("/", ex.Num(1.0), a),
            "sqrt": lambda: ex.Bin("/", ex.Num(0.5), ex.Call("sqrt", a)),
        }[node.fn]()
        return ex.Bin("*", outer, da)
    raise TypeError(f"not a node: {node!r}")


def taylor_coefficient(node, alpha, point):
    """Raw Taylor coefficient (derivative / alpha!) by repeated symbolic d/dx.

    May return NaN when the derivative tree hits 0^negative at the point
    (e.g. differentiating through ^0 at a zero base); callers skip those.
    """
    import math

    tree = node
    fact = 1.0
    for axis, k in enumerate(alpha):
        for _ in range(k):
            tree = differentiate(tree, axis)
        fact *= math.factorial(k)
    with np.errstate(divide="ignore", invalid="ignore"):
        return ex.eval_values(tree, np.asarray(point, dtype=float)[None, :])[0] / fact


def random_expression(rng, depth=3, allow_div=True):
    """Random well-formed expression over x1..x4 for fuzz and oracle tests."""
    if depth == 0 or rng.random() < 0.25:
        kind = int(rng.integers(0, 3))
        if kind == 0:
            # literals are nonnegative, as the parser produces (minus is Unary)
            return ex.Num(round(float(rng.uniform(0.0, 2.0)), 4))
        return ex.Var(int(rng.integers(0, 4)))
    roll = float(rng.random())
    if roll < 0.55:
        ops = ["+", "-", "*"] + (["/"] if allow_div else [])
        op = ops[int(rng.integers(0, len(ops)))]
        return ex.Bin(op, random_expression(rng, depth - 1, allow_div),
                      random_expression(rng, depth - 1, allow_div))
    if roll < 0.7:
        return ex.Unary("-", random_expression(rng, depth - 1, allow_div))
    if roll < 0.85:
        return ex.Bin("^", random_expression(rng, depth - 1, allow_div),
                      ex.Num(float(rng.integers(1, 4))))
    fn = ("sin", "cos", "exp")[int(rng.integers(0, 3))]
    return ex.Call(fn, random_expression(rng, depth - 1, allow_div))


def constant_curvature_R(c):
    """R_ijkl = c (d_ik d_jl - d_il d_jk) in an orthonormal frame."""
    d = np.eye(4)
    return c * (np.einsum("ik,jl->ijkl", d, d) - np.einsum("il,jk->ijkl", d, d))


def complex_space_form_R(J_frame, c=4.0):
    """Curvature of a complex space form with hol sec c; J_frame[a,b] = <J e_a, e_b>."""
    d = np.eye(4)
    base = np.einsum("ac,bd->abcd", d, d) - np.einsum("ad,bc->abcd", d, d)
    base = np.broadcast_to(base, J_frame.shape[:-2] + (4, 4, 4, 4)).copy()
    base += (np.einsum("...ac,...bd->...abcd", J_frame, J_frame)
             - np.einsum("...ad,...bc->...abcd", J_frame, J_frame)
             + 2.0 * np.einsum("...ab,...cd->...abcd", J_frame, J_frame))
    return (c / 4.0) * base
