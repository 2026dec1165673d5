"""Truncated Taylor arithmetic in 4 variables up to total order 3.

A jet stores the 35 raw Taylor coefficients c_alpha = (d^alpha f)(p) / alpha!
of a function at a point, indexed by multi-indices |alpha| <= 3.  Products are
truncated polynomial convolutions, so they are exact for polynomial inputs of
total degree <= 3; elementary functions compose through their univariate
Taylor expansion in the nilpotent part.  All coefficient arrays carry an
arbitrary leading batch shape, so one evaluation differentiates a whole sample
of points at once.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

NVARS = 4
ORDER = 3

MULTI_INDICES: tuple[tuple[int, int, int, int], ...] = tuple(
    sorted(
        (
            alpha
            for alpha in itertools.product(range(ORDER + 1), repeat=NVARS)
            if sum(alpha) <= ORDER
        ),
        key=lambda a: (sum(a), a),
    )
)
NCOEFF = len(MULTI_INDICES)  # 35
INDEX_OF = {alpha: k for k, alpha in enumerate(MULTI_INDICES)}
DEGREE = np.array([sum(a) for a in MULTI_INDICES])
FACTORIAL = np.array(
    [math.factorial(a[0]) * math.factorial(a[1]) * math.factorial(a[2]) * math.factorial(a[3])
     for a in MULTI_INDICES],
    dtype=float,
)


def _build_mul_table():
    pairs = []
    for i, a in enumerate(MULTI_INDICES):
        for j, b in enumerate(MULTI_INDICES):
            s = tuple(x + y for x, y in zip(a, b))
            if sum(s) <= ORDER:
                pairs.append((INDEX_OF[s], i, j))
    pairs.sort()
    k = np.array([p[0] for p in pairs])
    i = np.array([p[1] for p in pairs])
    j = np.array([p[2] for p in pairs])
    # group start offsets for np.add.reduceat; every output slot has >= 1 term
    offsets = np.searchsorted(k, np.arange(NCOEFF))
    return i, j, offsets


_MUL_I, _MUL_J, _MUL_OFFSETS = _build_mul_table()


def _build_partial_tables():
    tables = []
    for axis in range(NVARS):
        src, dst, fac = [], [], []
        for t, beta in enumerate(MULTI_INDICES):
            if sum(beta) <= ORDER - 1:
                shifted = list(beta)
                shifted[axis] += 1
                src.append(INDEX_OF[tuple(shifted)])
                dst.append(t)
                fac.append(beta[axis] + 1)
        tables.append((np.array(dst), np.array(src), np.array(fac, dtype=float)))
    return tables


_PARTIAL_TABLES = _build_partial_tables()


class JetError(Exception):
    """Domain failure (division by zero, log/sqrt of nonpositive, NaN)."""

    def __init__(self, message, where=None):
        if where is not None:
            message = f"{message} at point {where}"
        super().__init__(message)
        self.where = where


def _first_bad(mask, points):
    """Coordinates of the first offending batch entry, for diagnostics."""
    if points is None:
        return None
    idx = np.argmax(mask)
    p = np.asarray(points)
    if p.ndim >= 2:
        return tuple(float(v) for v in p.reshape(-1, p.shape[-1])[idx])
    return tuple(float(v) for v in p)


class Jet3:
    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def constant(value, batch_shape=()):
        c = np.zeros(tuple(batch_shape) + (NCOEFF,))
        c[..., 0] = value
        return Jet3(c)

    @staticmethod
    def variable(axis, x0):
        """Jet of the coordinate function x_axis at value x0 (scalar or batch)."""
        if not 0 <= axis < NVARS:
            raise ValueError(f"axis must be in 0..3, got {axis}")
        x0 = np.asarray(x0, dtype=float)
        c = np.zeros(x0.shape + (NCOEFF,))
        c[..., 0] = x0
        unit = [0, 0, 0, 0]
        unit[axis] = 1
        c[..., INDEX_OF[tuple(unit)]] = 1.0
        return Jet3(c)

    # -- views -------------------------------------------------------------

    @property
    def value(self):
        return self.c[..., 0]

    def grad(self):
        """First derivatives, shape batch + (4,)."""
        slots = [INDEX_OF[tuple(1 if k == i else 0 for k in range(NVARS))] for i in range(NVARS)]
        return self.c[..., slots]

    def derivative(self, alpha):
        """d^alpha value (raw coefficient times alpha!)."""
        k = INDEX_OF[tuple(alpha)]
        return self.c[..., k] * FACTORIAL[k]

    def partial(self, axis):
        """Jet of d/dx_axis; its degree-3 coefficients are unknown (zeroed)."""
        dst, src, fac = _PARTIAL_TABLES[axis]
        out = np.zeros_like(self.c)
        out[..., dst] = self.c[..., src] * fac
        return Jet3(out)

    # -- ring operations ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet3):
            return Jet3(self.c + other.c)
        out = self.c.copy()
        out[..., 0] += other
        return Jet3(out)

    __radd__ = __add__

    def __neg__(self):
        return Jet3(-self.c)

    def __sub__(self, other):
        if isinstance(other, Jet3):
            return Jet3(self.c - other.c)
        out = self.c.copy()
        out[..., 0] -= other
        return Jet3(out)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if not isinstance(other, Jet3):
            return Jet3(self.c * np.asarray(other)[..., None]
                        if np.ndim(other) else self.c * other)
        a, b = np.broadcast_arrays(self.c, other.c)
        prod = a[..., _MUL_I] * b[..., _MUL_J]
        return Jet3(np.add.reduceat(prod, _MUL_OFFSETS, axis=-1))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet3):
            return self * other._reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _reciprocal(self, points=None):
        u0 = self.value
        bad = u0 == 0.0
        if np.any(bad):
            raise JetError("division by zero", _first_bad(bad, points))
        inv = 1.0 / u0
        return self._compose(np.stack([inv, -inv**2, inv**3, -inv**4], axis=-1))

    def __pow__(self, exponent):
        if isinstance(exponent, Jet3):
            raise TypeError("jet exponents are handled at the expression level")
        return powr(self, exponent)

    def _compose(self, coeffs):
        """Evaluate sum_k coeffs[...,k] * w^k where w = self - value(self)."""
        w = Jet3(self.c.copy())
        w.c[..., 0] = 0.0
        w2 = w * w
        w3 = w2 * w
        out = (
            w.c * coeffs[..., 1, None]
            + w2.c * coeffs[..., 2, None]
            + w3.c * coeffs[..., 3, None]
        )
        out[..., 0] += coeffs[..., 0]
        return Jet3(out)


# -- elementary functions ---------------------------------------------------


def exp(u: Jet3) -> Jet3:
    e = np.exp(u.value)
    return u._compose(np.stack([e, e, e / 2.0, e / 6.0], axis=-1))


def log(u: Jet3, points=None) -> Jet3:
    u0 = u.value
    bad = ~(u0 > 0.0)
    if np.any(bad):
        raise JetError("log of nonpositive value", _first_bad(bad, points))
    inv = 1.0 / u0
    return u._compose(np.stack([np.log(u0), inv, -inv**2 / 2.0, inv**3 / 3.0], axis=-1))


def sin(u: Jet3) -> Jet3:
    s, c = np.sin(u.value), np.cos(u.value)
    return u._compose(np.stack([s, c, -s / 2.0, -c / 6.0], axis=-1))


def cos(u: Jet3) -> Jet3:
    s, c = np.sin(u.value), np.cos(u.value)
    return u._compose(np.stack([c, -s, -c / 2.0, s / 6.0], axis=-1))


def sqrt(u: Jet3, points=None) -> Jet3:
    u0 = u.value
    bad = ~(u0 > 0.0)
    if np.any(bad):
        raise JetError("sqrt of nonpositive value", _first_bad(bad, points))
    r = np.sqrt(u0)
    return u._compose(
        np.stack([r, 0.5 / r, -1.0 / (8.0 * u0 * r), 1.0 / (16.0 * u0**2 * r)], axis=-1)
    )


def powr(u: Jet3, r, points=None) -> Jet3:
    """u**r for real constant r; integer r works for any base, else base > 0."""
    r = float(r)
    if r == round(r) and abs(r) <= 64:
        n = int(round(r))
        if n == 0:
            return Jet3.constant(1.0, u.value.shape)
        acc = u
        for _ in range(abs(n) - 1):
            acc = acc * u
        if n < 0:
            acc = acc._reciprocal(points)
        return acc
    u0 = u.value
    bad = ~(u0 > 0.0)
    if np.any(bad):
        raise JetError(f"negative base for non-integer power {r}", _first_bad(bad, points))
    p = np.power(u0, r)
    c1 = r * p / u0
    c2 = r * (r - 1.0) / 2.0 * p / u0**2
    c3 = r * (r - 1.0) * (r - 2.0) / 6.0 * p / u0**3
    return u._compose(np.stack([p, c1, c2, c3], axis=-1))


def assert_finite(u: Jet3, context: str, points=None):
    """NaN poisoning gate: abort the enclosing computation on any bad coefficient."""
    bad = ~np.isfinite(u.c)
    if np.any(bad):
        mask = np.any(bad, axis=-1)
        raise JetError(f"non-finite jet coefficients in {context}", _first_bad(mask, points))


# -- small dense jet linear algebra -----------------------------------------


def mat_vec(m, v):
    """m: nested list [i][j] of Jet3 (4x4), v: list of Jet3 (4)."""
    return [sum((m[i][j] * v[j] for j in range(1, NVARS)), m[i][0] * v[0]) for i in range(NVARS)]


def mat_inverse(m, points=None):
    """Inverse of a 4x4 jet matrix by Gauss-Jordan (no pivoting; SPD-ish inputs)."""
    n = NVARS
    a = [[Jet3(m[i][j].c.copy()) for j in range(n)] for i in range(n)]
    shape = m[0][0].value.shape
    inv = [[Jet3.constant(1.0 if i == j else 0.0, shape) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = a[col][col]
        if np.any(piv.value == 0.0):
            raise JetError("singular metric matrix", _first_bad(piv.value == 0.0, points))
        piv_inv = piv._reciprocal(points)
        for j in range(n):
            a[col][j] = a[col][j] * piv_inv
            inv[col][j] = inv[col][j] * piv_inv
        for row in range(n):
            if row == col:
                continue
            f = a[row][col]
            for j in range(n):
                a[row][j] = a[row][j] - f * a[col][j]
                inv[row][j] = inv[row][j] - f * inv[col][j]
    return inv


def det4(m):
    """Determinant of a 4x4 jet matrix (cofactor expansion)."""

    def det3(r, c):
        rows = [i for i in range(4) if i != r]
        cols = [j for j in range(4) if j != c]
        (i0, i1, i2), (j0, j1, j2) = rows, cols
        return (
            m[i0][j0] * (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1])
            - m[i0][j1] * (m[i1][j0] * m[i2][j2] - m[i1][j2] * m[i2][j0])
            + m[i0][j2] * (m[i1][j0] * m[i2][j1] - m[i1][j1] * m[i2][j0])
        )

    out = None
    for j in range(4):
        term = m[0][j] * det3(0, j)
        if j % 2 == 1:
            term = -term
        out = term if out is None else out + term
    return out
