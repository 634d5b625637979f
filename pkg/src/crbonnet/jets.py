"""Truncated multivariate Taylor (jet) arithmetic in Wirtinger variables.

A jet stores the Taylor coefficients (mixed partials divided by a!b!) of a
smooth field up to total order K at a base point of C^m, with the m
holomorphic coordinates and their conjugates treated as 2m independent
variables.  Coefficient arrays may carry arbitrary leading batch axes, so a
single Jet can hold the expansions at many quadrature nodes at once; all
operations broadcast over those axes.

Multi-indices are stored in graded order (total degree, then lexicographic),
which makes the degree-<=k coefficients of any table a prefix: truncation is a
slice and never copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import (
    BranchViolation,
    DivisionBySingular,
    OrderExceeded,
    SingularSystem,
)

SINGULAR_EPS = 1e-12
_COND_BOUND = 1e12
# cap on the size of the temporary (batch x pairs) array used by _mul_coeffs
_MUL_BLOCK = 1 << 23


def _multiindices(slots: int, order: int) -> np.ndarray:
    """All exponent tuples with total degree <= order, graded-lex ordered."""
    rows = []

    def rec(prefix, remaining, total):
        if remaining == 1:
            rows.append(prefix + (total,))
            return
        for k in range(total, -1, -1):
            rec(prefix + (k,), remaining - 1, total - k)

    for d in range(order + 1):
        rec((), slots, d)
    return np.asarray(rows, dtype=np.int16)


@dataclass(frozen=True)
class JetTables:
    """Precomputed index bookkeeping for one (n_vars, order) pair."""

    slots: int
    order: int
    powers: np.ndarray          # (ncoeff, slots) int16
    count_at_order: np.ndarray  # ncoeff of the degree-<=k prefix, k = 0..order
    key_to_index: np.ndarray    # dense lookup, key = powers @ strides
    strides: np.ndarray
    mul_ia: np.ndarray          # pair tables, sorted by output index
    mul_ib: np.ndarray
    mul_seg_starts: np.ndarray
    mul_seg_out: np.ndarray
    deriv_src: tuple            # per variable: source coefficient indices
    deriv_dst: tuple            # per variable: destination indices (order-1 prefix)
    deriv_fac: tuple            # per variable: multiplicity factors
    conj_perm: np.ndarray       # index of (b, a) for each (a, b)

    @property
    def ncoeff(self) -> int:
        return self.powers.shape[0]

    def index_of(self, exponents) -> int:
        key = int(np.dot(np.asarray(exponents, dtype=np.int64), self.strides))
        idx = int(self.key_to_index[key])
        if idx < 0:
            raise OrderExceeded(f"multi-index {tuple(exponents)} beyond order {self.order}")
        return idx


@lru_cache(maxsize=None)
def _pair_tables(slots: int, order: int, fmin: int, fmax: int, gmin: int, gmax: int):
    """Pair tables restricted to fmin <= deg(f-entry) <= fmax, same for g."""
    tab = jet_tables(slots, order)
    count = tab.count_at_order
    keys = tab.powers.astype(np.int64) @ tab.strides
    ia_blocks, ib_blocks = [], []
    for d1 in range(fmin, min(fmax, order) + 1):
        lo1, hi1 = (count[d1 - 1] if d1 else 0), count[d1]
        lo2 = count[gmin - 1] if gmin else 0
        hi2 = count[min(order - d1, gmax)] if order - d1 >= gmin else lo2
        if hi1 == lo1 or hi2 <= lo2:
            continue
        ia_blocks.append(np.repeat(np.arange(lo1, hi1, dtype=np.int32), hi2 - lo2))
        ib_blocks.append(np.tile(np.arange(lo2, hi2, dtype=np.int32), hi1 - lo1))
    if not ia_blocks:
        z = np.zeros(0, dtype=np.int32)
        return z, z, z, z
    ia = np.concatenate(ia_blocks)
    ib = np.concatenate(ib_blocks)
    iout = tab.key_to_index[keys[ia] + keys[ib]]
    perm = np.lexsort((ib, ia, iout))
    ia, ib, iout = ia[perm], ib[perm], iout[perm]
    seg_starts = np.concatenate(([0], np.flatnonzero(np.diff(iout)) + 1))
    seg_out = iout[seg_starts]
    return ia, ib, seg_starts, seg_out


@lru_cache(maxsize=None)
def jet_tables(slots: int, order: int) -> JetTables:
    powers = _multiindices(slots, order)
    ncoeff = powers.shape[0]
    degs = powers.sum(axis=1).astype(np.int64)
    count_at_order = np.searchsorted(degs, np.arange(order + 1), side="right")

    base = order + 1
    strides = base ** np.arange(slots, dtype=np.int64)
    keys = powers.astype(np.int64) @ strides
    key_to_index = np.full(base ** slots, -1, dtype=np.int32)
    key_to_index[keys] = np.arange(ncoeff, dtype=np.int32)

    # multiplication pairs: all (i, j) with deg_i + deg_j <= order, grouped by
    # the output index so the product kernel can reduceat over sorted segments
    ia_blocks, ib_blocks = [], []
    for d1 in range(order + 1):
        lo1, hi1 = (count_at_order[d1 - 1] if d1 else 0), count_at_order[d1]
        hi2 = count_at_order[order - d1]
        if hi1 == lo1 or hi2 == 0:
            continue
        ia_blk = np.repeat(np.arange(lo1, hi1, dtype=np.int32), hi2)
        ib_blk = np.tile(np.arange(hi2, dtype=np.int32), hi1 - lo1)
        ia_blocks.append(ia_blk)
        ib_blocks.append(ib_blk)
    ia = np.concatenate(ia_blocks)
    ib = np.concatenate(ib_blocks)
    iout = key_to_index[keys[ia] + keys[ib]]
    perm = np.lexsort((ib, ia, iout))
    ia, ib, iout = ia[perm], ib[perm], iout[perm]
    seg_starts = np.concatenate(([0], np.flatnonzero(np.diff(iout)) + 1))
    seg_out = iout[seg_starts]

    deriv_src, deriv_dst, deriv_fac = [], [], []
    for v in range(slots):
        src = np.flatnonzero(powers[:, v] >= 1).astype(np.int32)
        dst = key_to_index[keys[src] - strides[v]]
        fac = powers[src, v].astype(np.float64)
        deriv_src.append(src)
        deriv_dst.append(dst)
        deriv_fac.append(fac)

    half = slots // 2
    swapped = np.concatenate([powers[:, half:], powers[:, :half]], axis=1)
    conj_perm = key_to_index[swapped.astype(np.int64) @ strides]

    return JetTables(
        slots=slots,
        order=order,
        powers=powers,
        count_at_order=count_at_order,
        key_to_index=key_to_index,
        strides=strides,
        mul_ia=ia,
        mul_ib=ib,
        mul_seg_starts=seg_starts,
        mul_seg_out=seg_out,
        deriv_src=tuple(deriv_src),
        deriv_dst=tuple(deriv_dst),
        deriv_fac=tuple(deriv_fac),
        conj_perm=conj_perm,
    )


def _mul_coeffs(tab: JetTables, fc: np.ndarray, gc: np.ndarray, bounds=None) -> np.ndarray:
    """Coefficient array of the truncated product; inputs live in ``tab``.

    ``bounds`` is an optional (fmin, fmax, gmin, gmax) degree restriction on
    the factors; entries outside it are known zero and their products are
    skipped via a smaller cached pair table.
    """
    if bounds is None:
        ia, ib = tab.mul_ia, tab.mul_ib
        seg_starts, seg_out = tab.mul_seg_starts, tab.mul_seg_out
    else:
        fmin, fmax, gmin, gmax = bounds
        ia, ib, seg_starts, seg_out = _pair_tables(
            tab.slots, tab.order, fmin, min(fmax, tab.order), gmin, min(gmax, tab.order)
        )
    if ia.size == 0:
        batch = np.broadcast_shapes(fc.shape[:-1], gc.shape[:-1])
        return np.zeros(batch + (tab.ncoeff,), dtype=np.complex128)
    batch = np.broadcast_shapes(fc.shape[:-1], gc.shape[:-1])
    fc = np.broadcast_to(fc, batch + fc.shape[-1:])
    gc = np.broadcast_to(gc, batch + gc.shape[-1:])
    flat_f = fc.reshape(-1, tab.ncoeff)
    flat_g = gc.reshape(-1, tab.ncoeff)
    nbatch = flat_f.shape[0]
    out = np.zeros((nbatch, tab.ncoeff), dtype=np.complex128)
    step = max(1, _MUL_BLOCK // max(ia.size, 1))
    for lo in range(0, nbatch, step):
        hi = min(lo + step, nbatch)
        t = flat_f[lo:hi, ia]
        t *= flat_g[lo:hi, ib]
        sums = np.add.reduceat(t, seg_starts, axis=-1)
        out[lo:hi, seg_out] = sums
    return out.reshape(batch + (tab.ncoeff,))


class Jet:
    """Dense truncated Taylor table; immutable by convention.

    ``n_vars`` counts complex coordinates; the coefficient table runs over the
    2 * n_vars Wirtinger slots, holomorphic variables first, conjugates after.
    """

    __slots__ = ("coeffs", "n_vars", "order", "base_point")

    def __init__(self, coeffs, n_vars, order, base_point=None):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        tab = jet_tables(2 * n_vars, order)
        if coeffs.shape[-1] != tab.ncoeff:
            raise ValueError(
                f"coefficient axis {coeffs.shape[-1]} does not match "
                f"order-{order} table size {tab.ncoeff}"
            )
        self.coeffs = coeffs
        self.n_vars = n_vars
        self.order = order
        self.base_point = base_point

    # -- constructors -------------------------------------------------

    @classmethod
    def constant(cls, value, n_vars, order, base_point=None):
        value = np.asarray(value, dtype=np.complex128)
        tab = jet_tables(2 * n_vars, order)
        coeffs = np.zeros(value.shape + (tab.ncoeff,), dtype=np.complex128)
        coeffs[..., 0] = value
        return cls(coeffs, n_vars, order, base_point)

    @classmethod
    def variable(cls, slot, value, n_vars, order, base_point=None):
        """Jet of one Wirtinger coordinate: slot i is z^{i+1}, slot n_vars+i its conjugate."""
        jet = cls.constant(value, n_vars, order, base_point)
        if order >= 1:
            jet.coeffs[..., 1 + slot] = 1.0
        return jet

    # -- bookkeeping ---------------------------------------------------

    @property
    def tables(self) -> JetTables:
        return jet_tables(2 * self.n_vars, self.order)

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def truncated(self, order: int) -> "Jet":
        if order > self.order:
            raise OrderExceeded(f"cannot raise order {self.order} to {order}")
        if order == self.order:
            return self
        cnt = self.tables.count_at_order[order]
        return Jet(self.coeffs[..., :cnt], self.n_vars, order, self.base_point)

    def conj(self) -> "Jet":
        return Jet(
            np.conj(self.coeffs[..., self.tables.conj_perm]),
            self.n_vars,
            self.order,
            self.base_point,
        )

    def derivative(self, var: int) -> "Jet":
        if self.order == 0:
            raise OrderExceeded("cannot differentiate an order-0 jet")
        tab = self.tables
        cnt = tab.count_at_order[self.order - 1]
        out = np.zeros(self.coeffs.shape[:-1] + (cnt,), dtype=np.complex128)
        out[..., tab.deriv_dst[var]] = tab.deriv_fac[var] * self.coeffs[..., tab.deriv_src[var]]
        return Jet(out, self.n_vars, self.order - 1, self.base_point)

    def is_real(self, tol: float = 1e-10) -> bool:
        """Conjugate-symmetry test: coeffs(a,b) == conj(coeffs(b,a))."""
        diff = self.coeffs - np.conj(self.coeffs[..., self.tables.conj_perm])
        scale = max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))
        return bool(np.max(np.abs(diff), initial=0.0) <= tol * scale)

    # -- ring operations -----------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.n_vars, self.order, self.base_point)

    def __add__(self, other):
        other = self._coerce(other)
        k = min(self.order, other.order)
        a, b = self.truncated(k), other.truncated(k)
        return Jet(a.coeffs + b.coeffs, self.n_vars, k, self.base_point)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.n_vars, self.order, self.base_point)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            scal = np.asarray(other, dtype=np.complex128)[..., None]
            return Jet(self.coeffs * scal, self.n_vars, self.order, self.base_point)
        k = min(self.order, other.order)
        a, b = self.truncated(k), other.truncated(k)
        return Jet(_mul_coeffs(a.tables, a.coeffs, b.coeffs), self.n_vars, k, self.base_point)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=np.complex128))
        return self * _reciprocal(other)

    def __rtruediv__(self, other):
        return _reciprocal(self) * other


def _check_denominator(c0: np.ndarray, eps: float):
    if np.min(np.abs(c0)) < eps:
        raise DivisionBySingular(
            f"constant term magnitude {np.min(np.abs(c0)):.3e} below epsilon {eps:.1e}"
        )


def _check_branch(c0: np.ndarray):
    # the principal branch is continuous off the closed negative real axis
    on_cut = (c0.real <= 0.0) & (np.abs(c0.imag) <= 1e-14 * np.maximum(1.0, np.abs(c0.real)))
    if np.any(on_cut):
        raise BranchViolation("constant term on the negative real axis (principal branch cut)")


def mul_bounded(f: Jet, g: Jet, f_degree=None, g_degree=None) -> Jet:
    """Product with known degree support on the factors (skips zero blocks).

    Degree bounds may be an int (max degree) or a (min, max) pair; pass the
    polynomial degree of a recentered polynomial jet to avoid multiplying its
    structurally-zero tail.
    """
    k = min(f.order, g.order)
    f, g = f.truncated(k), g.truncated(k)

    def norm(bound):
        if bound is None:
            return 0, k
        if np.isscalar(bound):
            return 0, int(bound)
        return int(bound[0]), int(bound[1])

    fmin, fmax = norm(f_degree)
    gmin, gmax = norm(g_degree)
    coeffs = _mul_coeffs(f.tables, f.coeffs, g.coeffs, (fmin, fmax, gmin, gmax))
    return Jet(coeffs, f.n_vars, k, f.base_point)


def _series_eval(f: Jet, series: np.ndarray, u_deg: int | None = None) -> Jet:
    """Evaluate sum_k series[..., k] * (f - f0)^k through truncation order.

    Powers of the nilpotent part u are built sequentially; u^k has no terms
    of degree below k, which the pair tables exploit.  ``u_deg`` optionally
    caps the degree of u (e.g. when f is a recentered low-degree polynomial).
    """
    order = f.order
    tab = f.tables
    dmax = order if u_deg is None else min(int(u_deg), order)
    u = f.coeffs.copy()
    u[..., 0] = 0.0
    out = np.zeros(np.broadcast_shapes(series.shape[:-1], u.shape[:-1]) + (tab.ncoeff,),
                   dtype=np.complex128)
    out[..., 0] = series[..., 0]
    power = u
    for k in range(1, order + 1):
        if k > 1:
            power = _mul_coeffs(tab, power, u, (k - 1, min((k - 1) * dmax, order), 1, dmax))
        out += series[..., k, None] * power
    return Jet(out, f.n_vars, order, f.base_point)


def _pow_series(c0: np.ndarray, alpha: float, order: int) -> np.ndarray:
    terms = [np.power(c0, alpha)]
    binom = 1.0
    for k in range(1, order + 1):
        binom *= (alpha - (k - 1)) / k
        terms.append(binom * np.power(c0, alpha - k))
    return np.stack(terms, axis=-1)


def _reciprocal(g: Jet, eps: float = SINGULAR_EPS, u_deg: int | None = None) -> Jet:
    c0 = g.value
    _check_denominator(np.atleast_1d(c0), eps)
    return _series_eval(g, _pow_series(c0, -1.0, g.order), u_deg)


def _log(f: Jet, eps: float = SINGULAR_EPS, u_deg: int | None = None) -> Jet:
    c0 = np.atleast_1d(f.value)
    _check_denominator(c0, eps)
    _check_branch(c0)
    series = [np.log(f.value)]
    for k in range(1, f.order + 1):
        series.append(((-1.0) ** (k + 1) / k) * np.power(f.value, -float(k)))
    return _series_eval(f, np.stack(series, axis=-1), u_deg)


def _pow_rational(f: Jet, exponent, eps: float = SINGULAR_EPS, u_deg: int | None = None) -> Jet:
    alpha = float(Fraction(exponent))
    c0 = np.atleast_1d(f.value)
    if alpha < 0:
        _check_denominator(c0, eps)
    if alpha != int(alpha):
        _check_branch(c0)
    return _series_eval(f, _pow_series(f.value, alpha, f.order), u_deg)


def _exp(f: Jet, u_deg: int | None = None) -> Jet:
    # internal helper (not part of the public op set): needed for e^{f} rho
    series = [np.exp(f.value)]
    for k in range(1, f.order + 1):
        series.append(series[-1] / k)
    return _series_eval(f, np.stack(series, axis=-1), u_deg)


_BINARY_OPS = {"add", "sub", "mul", "div"}
_UNARY_OPS = {"log", "sqrt", "pow_rational"}


def jet_compose(f: Jet, g: Jet | None, op: str, exponent=None, eps: float = SINGULAR_EPS,
                arg_degree: int | None = None) -> Jet:
    """Compose jets under one of {add, sub, mul, div, log, sqrt, pow_rational}.

    ``arg_degree`` is an optional cap on the polynomial degree of the series
    argument (g for div, f for the unary ops); it only prunes work, never
    changes the result.
    """
    if op in _BINARY_OPS:
        if g is None:
            raise ValueError(f"op {op!r} needs two jets")
        if op == "add":
            return f + g
        if op == "sub":
            return f - g
        if op == "mul":
            return f * g
        _check_denominator(np.atleast_1d(g.value), eps)
        return f * _reciprocal(g, eps, arg_degree)
    if op not in _UNARY_OPS:
        raise ValueError(f"unknown op {op!r}")
    if op == "log":
        return _log(f, eps, arg_degree)
    if op == "sqrt":
        return _pow_rational(f, Fraction(1, 2), eps, arg_degree)
    if exponent is None:
        raise ValueError("pow_rational needs an exponent")
    return _pow_rational(f, exponent, eps, arg_degree)


def jet_extract(f: Jet, idx) -> np.ndarray:
    """Mixed partial d^a dbar^b f at the base point (a! b! times the coefficient)."""
    a, b = idx
    exps = tuple(a) + tuple(b)
    if len(exps) != 2 * f.n_vars:
        raise ValueError(f"multi-index needs {f.n_vars} exponents per half, got {idx}")
    total = sum(exps)
    if total > f.order:
        raise OrderExceeded(f"requested order {total} exceeds jet order {f.order}")
    i = f.tables.index_of(exps)
    fac = 1.0
    for e in exps:
        fac *= math.factorial(e)
    return fac * f.coeffs[..., i]


def jet_linear_solve(A, b, cond_bound: float = _COND_BOUND):
    """Solve A x = b for jet vectors, exact to the common truncation order.

    The constant-term system is solved once; the nilpotent remainder is folded
    in order by order (the iteration terminates exactly after K+1 sweeps).
    """
    rows = [list(r) for r in A]
    m = len(rows)
    order = min(min(j.order for r in rows for j in r), min(v.order for v in b))
    rows = [[j.truncated(order) for j in r] for r in rows]
    b = [v.truncated(order) for v in b]
    n_vars = b[0].n_vars
    base_point = b[0].base_point

    batch = np.broadcast_shapes(*(np.shape(rows[i][j].value) for i in range(m) for j in range(m)))
    A0 = np.stack(
        [
            np.stack([np.broadcast_to(rows[i][j].value, batch) for j in range(m)], axis=-1)
            for i in range(m)
        ],
        axis=-2,
    )
    A0 = np.ascontiguousarray(A0)
    try:
        A0inv = np.linalg.inv(A0)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("constant-term matrix is singular") from exc
    cond = np.linalg.norm(A0, ord=np.inf, axis=(-2, -1)) * np.linalg.norm(
        A0inv, ord=np.inf, axis=(-2, -1)
    )
    if np.max(cond) > cond_bound:
        raise SingularSystem(f"constant-term condition number {np.max(cond):.3e} too large")

    def apply_const(minv, vec):
        out = []
        for i in range(m):
            acc = None
            for j in range(m):
                term = vec[j] * minv[..., i, j]
                acc = term if acc is None else acc + term
            out.append(acc)
        return out

    # nilpotent part of A
    tilde = []
    for i in range(m):
        row = []
        for j in range(m):
            c = rows[i][j].coeffs.copy()
            c[..., 0] = 0.0
            row.append(Jet(c, n_vars, order, base_point))
        tilde.append(row)

    x = apply_const(A0inv, b)
    for _ in range(order):
        resid = []
        for i in range(m):
            acc = b[i]
            for j in range(m):
                acc = acc - tilde[i][j] * x[j]
            resid.append(acc)
        x = apply_const(A0inv, resid)
    return x


def jet_determinant(A) -> Jet:
    """Cofactor-expansion determinant of a small matrix of jets (dim <= 4)."""
    rows = [list(r) for r in A]
    m = len(rows)
    if m > 4:
        raise ValueError("jet_determinant supports dimension <= 4")
    if m == 1:
        return rows[0][0]
    if m == 2:
        return rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
    out = None
    for j in range(m):
        minor = [[rows[i][k] for k in range(m) if k != j] for i in range(1, m)]
        term = rows[0][j] * jet_determinant(minor)
        if j % 2 == 1:
            term = -term
        out = term if out is None else out + term
    return out
