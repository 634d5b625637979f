"""Jet arithmetic: frozen examples, ring axioms, solve/determinant checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crbonnet.errors import (
    BranchViolation,
    DivisionBySingular,
    OrderExceeded,
    SingularSystem,
)
from crbonnet.jets import (
    Jet,
    jet_compose,
    jet_determinant,
    jet_extract,
    jet_linear_solve,
    jet_tables,
    mul_bounded,
)


def ball_rho(points, n_vars, order):
    """Jet of |z|^2 - 1 at the given base points."""
    z = [Jet.variable(i, np.asarray(points)[..., i], n_vars, order) for i in range(n_vars)]
    out = z[0] * z[0].conj() - 1
    for i in range(1, n_vars):
        out = out + z[i] * z[i].conj()
    return out


def dict_mul(p, q, slots, order):
    """Reference polynomial product on exponent-tuple dicts, truncated."""
    out = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            if sum(e) <= order:
                out[e] = out.get(e, 0.0) + ca * cb
    return out


def jet_from_dict(p, n_vars, order, base=None):
    """Recenter an exponent-dict polynomial at `base` by building it from variables."""
    if base is None:
        base = [0.0] * n_vars
    out = Jet.constant(0.0, n_vars, order)
    for e, c in p.items():
        term = Jet.constant(c, n_vars, order)
        for s, k in enumerate(e):
            v = base[s % n_vars] if s < n_vars else np.conj(base[s - n_vars])
            for _ in range(k):
                term = term * Jet.variable(s, v, n_vars, order)
        out = out + term
    return out


# ---------------------------------------------------------------- examples


def test_mul_monomial_unit_coefficient():
    z1 = Jet.variable(0, 0.0, 2, 2)
    f = z1 * z1.conj()
    assert jet_extract(f, ((1, 0), (1, 0))) == pytest.approx(1.0)


def test_log_of_one_is_zero_jet():
    f = jet_compose(Jet.constant(1.0, 2, 3), None, "log")
    assert np.max(np.abs(f.coeffs)) == 0.0


def test_div_geometric_series_oracle():
    # 1/(1-|z|^2) at z=(0.5, 0), K=3.  Oracle: recentered geometric series
    # computed with an independent dict-polynomial expansion of
    # (4/3) * sum_k ((t - 1/4)/(3/4))^k in the Wirtinger offsets.
    K = 3
    z1 = Jet.variable(0, 0.5, 2, K)
    z2 = Jet.variable(1, 0.0, 2, K)
    f = jet_compose(Jet.constant(1.0, 2, K), 1 - (z1 * z1.conj() + z2 * z2.conj()), "div")

    # t - 1/4 = |z|^2 - 1/4 recentered: offsets d1, d2 and conjugates
    shift = {
        (1, 0, 0, 0): 0.5, (0, 0, 1, 0): 0.5,
        (1, 0, 1, 0): 1.0, (0, 1, 0, 1): 1.0,
    }
    expected = {(0, 0, 0, 0): 4.0 / 3.0}
    w = {e: c / 0.75 for e, c in shift.items()}
    power = {(0, 0, 0, 0): 1.0}
    for _ in range(K):
        power = dict_mul(power, w, 4, K)
        for e, c in power.items():
            expected[e] = expected.get(e, 0.0) + (4.0 / 3.0) * c

    assert f.value == pytest.approx(4.0 / 3.0, abs=1e-14)
    tab = f.tables
    for e, c in expected.items():
        idx = tab.index_of(e)
        assert f.coeffs[idx] == pytest.approx(c, abs=1e-13), e
    # every coefficient outside the oracle's support must vanish
    covered = {tab.index_of(e) for e in expected}
    rest = [i for i in range(tab.ncoeff) if i not in covered]
    assert np.max(np.abs(f.coeffs[rest])) < 1e-14
    # the |z^2|^2 slot carries (4/3)^2; the |z^1|^2 slot picks up a cross term
    assert jet_extract(f, ((0, 1), (0, 1))) == pytest.approx(16.0 / 9.0, abs=1e-14)
    assert jet_extract(f, ((1, 0), (1, 0))) == pytest.approx(80.0 / 27.0, abs=1e-14)


def test_extract_factorials():
    z1 = Jet.variable(0, 0.0, 2, 4)
    f = z1 * z1.conj()
    f2 = f * f
    assert jet_extract(f2, ((2, 0), (2, 0))) == pytest.approx(4.0)


def test_extract_log_series():
    z1 = Jet.variable(0, 0.0, 2, 3)
    f = jet_compose(1 + z1 * z1.conj(), None, "log")
    assert jet_extract(f, ((1, 0), (1, 0))) == pytest.approx(1.0, abs=1e-14)


def test_linear_solve_identity_and_diag():
    K = 3
    rng = np.random.default_rng(7)
    tab = jet_tables(4, K)
    b = [Jet(rng.normal(size=tab.ncoeff) + 1j * rng.normal(size=tab.ncoeff), 2, K)
         for _ in range(2)]
    eye = [[Jet.constant(1.0 if i == j else 0.0, 2, K) for j in range(2)] for i in range(2)]
    x = jet_linear_solve(eye, b)
    for xi, bi in zip(x, b):
        assert np.max(np.abs(xi.coeffs - bi.coeffs)) < 1e-14

    two = [[Jet.constant(2.0 if i == j else 0.0, 2, K) for j in range(2)] for i in range(2)]
    x = jet_linear_solve(two, [Jet.constant(1.0, 2, K), Jet.constant(0.0, 2, K)])
    assert x[0].value == pytest.approx(0.5)
    assert np.abs(x[1].value) < 1e-15


def test_linear_solve_ball_contact_direction():
    # bordered system for the ball at z=(1,0); hand differentiation of
    # z^1/|z|^2 gives d/dz1 = 0, d/dzbar1 = -1 there
    K = 4
    rho = ball_rho([1.0, 0.0], 2, K)
    rho_i = [rho.derivative(i) for i in range(2)]
    rho_ib = [rho.derivative(2 + i) for i in range(2)]
    rho_ij = [[rho_i[i].derivative(2 + j) for j in range(2)] for i in range(2)]
    k = K - 2
    zero = Jet.constant(0.0, 2, k)
    one = Jet.constant(1.0, 2, k)
    A = [
        [rho_ij[0][0], rho_ij[0][1], -rho_i[0].truncated(k)],
        [rho_ij[1][0], rho_ij[1][1], -rho_i[1].truncated(k)],
        [rho_ib[0].truncated(k), rho_ib[1].truncated(k), zero],
    ]
    x = jet_linear_solve(A, [zero, zero, one])
    xi1 = x[0].conj()
    assert xi1.value == pytest.approx(1.0, abs=1e-13)
    assert jet_extract(xi1, ((1, 0), (0, 0))) == pytest.approx(0.0, abs=1e-13)
    assert jet_extract(xi1, ((0, 1), (0, 0))) == pytest.approx(0.0, abs=1e-13)
    assert jet_extract(xi1, ((0, 0), (1, 0))) == pytest.approx(-1.0, abs=1e-13)
    assert x[2].value == pytest.approx(1.0, abs=1e-13)  # r = 1/|z|^2


def test_determinant_identity_diag():
    K = 3
    eye = [[Jet.constant(float(i == j), 2, K) for j in range(2)] for i in range(2)]
    d = jet_determinant(eye)
    assert d.value == pytest.approx(1.0)
    assert np.max(np.abs(d.coeffs[1:])) == 0.0

    z1 = Jet.variable(0, 0.3 + 0.2j, 2, K)
    diag = [[z1, Jet.constant(0.0, 2, K)], [Jet.constant(0.0, 2, K), z1.conj()]]
    d = jet_determinant(diag)
    ref = z1 * z1.conj()
    assert np.max(np.abs(d.coeffs - ref.coeffs)) < 1e-15


def test_determinant_bordered_ball_is_minus_one():
    rng = np.random.default_rng(11)
    for m in (2, 3):
        pts = rng.normal(size=(5, m)) + 1j * rng.normal(size=(5, m))
        rho = ball_rho(pts, m, 4)
        rows = [[rho] + [rho.derivative(m + j) for j in range(m)]]
        for i in range(m):
            di = rho.derivative(i)
            rows.append([di.truncated(2)] + [di.derivative(m + j) for j in range(m)])
        rows[0] = [rows[0][0].truncated(2)] + [c.truncated(2) for c in rows[0][1:]]
        det = jet_determinant(rows)
        target = np.zeros(det.coeffs.shape[-1])
        target[0] = -1.0
        assert np.max(np.abs(det.coeffs - target)) < 1e-12


# ---------------------------------------------------------------- properties

coef = st.complex_numbers(min_magnitude=0.0, max_magnitude=2.0,
                          allow_nan=False, allow_infinity=False)


def poly_strategy(slots, deg, max_terms=5):
    exps = st.tuples(*[st.integers(0, deg) for _ in range(slots)]).filter(
        lambda e: sum(e) <= deg
    )
    return st.dictionaries(exps, coef, min_size=1, max_size=max_terms)


@settings(max_examples=50, deadline=None)
@given(poly_strategy(4, 2), poly_strategy(4, 2))
def test_product_of_polynomials_is_exact(p, q):
    K = 4
    jp = jet_from_dict(p, 2, K)
    jq = jet_from_dict(q, 2, K)
    prod = jp * jq
    ref = jet_from_dict(dict_mul(p, q, 4, K), 2, K)
    scale = max(1.0, np.max(np.abs(ref.coeffs)))
    assert np.max(np.abs(prod.coeffs - ref.coeffs)) <= 1e-13 * scale


@settings(max_examples=50, deadline=None)
@given(poly_strategy(4, 2), poly_strategy(4, 2), poly_strategy(4, 2))
def test_ring_axioms(p, q, r):
    K = 3
    jp, jq, jr = (jet_from_dict(d, 2, K) for d in (p, q, r))
    lhs = (jp + jq) * jr
    rhs = jp * jr + jq * jr
    scale = max(1.0, np.max(np.abs(lhs.coeffs)))
    assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) <= 1e-13 * scale
    assert np.max(np.abs((jp * jq).coeffs - (jq * jp).coeffs)) <= 1e-13 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_log_derivative_consistency(seed):
    rng = np.random.default_rng(seed)
    K = 3
    tab = jet_tables(4, K)
    f = Jet(rng.normal(size=tab.ncoeff) + 1j * rng.normal(size=tab.ncoeff) * 0.1, 2, K)
    f.coeffs[..., 0] = 1.5 + rng.random()
    lf = jet_compose(f, None, "log")
    for i in range(2):
        a = np.zeros(2, dtype=int)
        a[i] = 1
        lhs = jet_extract(lf, (tuple(a), (0, 0))) * f.value
        rhs = jet_extract(f, (tuple(a), (0, 0)))
        assert abs(lhs - rhs) <= 1e-13 * max(1.0, abs(rhs))


def test_reality_of_real_function_jets():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(6, 2)) + 1j * rng.normal(size=(6, 2))
    rho = ball_rho(pts, 2, 4)
    assert rho.is_real()
    # multiplying two real jets stays real; i times one does not
    assert (rho * rho).is_real()
    assert not (1j * rho).is_real()


def test_linear_solve_residual_random_systems():
    rng = np.random.default_rng(13)
    K = 4
    tab = jet_tables(4, K)
    for _ in range(5):
        A = [[Jet(rng.normal(size=tab.ncoeff) + 1j * rng.normal(size=tab.ncoeff), 2, K)
              for _ in range(3)] for _ in range(3)]
        for i in range(3):
            A[i][i].coeffs[..., 0] += 6.0  # keep the constant part well conditioned
        b = [Jet(rng.normal(size=tab.ncoeff) + 1j * rng.normal(size=tab.ncoeff), 2, K)
             for _ in range(3)]
        x = jet_linear_solve(A, b)
        bmax = max(np.max(np.abs(v.coeffs)) for v in b)
        for i in range(3):
            resid = -b[i]
            for j in range(3):
                resid = resid + A[i][j] * x[j]
            assert np.max(np.abs(resid.coeffs)) <= 1e-12 * bmax


# ---------------------------------------------------------------- structure


def test_truncation_is_prefix():
    rng = np.random.default_rng(2)
    tab = jet_tables(4, 5)
    f = Jet(rng.normal(size=tab.ncoeff), 2, 5)
    g = f.truncated(3)
    assert g.coeffs.shape[-1] == jet_tables(4, 3).ncoeff
    assert np.array_equal(g.coeffs, f.coeffs[: g.coeffs.shape[-1]])


def test_derivative_of_product_leibniz():
    rng = np.random.default_rng(4)
    tab = jet_tables(4, 4)
    f = Jet(rng.normal(size=tab.ncoeff) + 1j * rng.normal(size=tab.ncoeff), 2, 4)
    g = Jet(rng.normal(size=tab.ncoeff) + 1j * rng.normal(size=tab.ncoeff), 2, 4)
    for v in range(4):
        lhs = (f * g).derivative(v)
        rhs = f.derivative(v) * g.truncated(3) + f.truncated(3) * g.derivative(v)
        assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) < 1e-12


def test_conj_swaps_halves():
    z1 = Jet.variable(0, 0.4 + 0.1j, 2, 3)
    zb = z1.conj()
    assert zb.value == pytest.approx(0.4 - 0.1j)
    assert jet_extract(zb, ((0, 0), (1, 0))) == pytest.approx(1.0)
    assert abs(jet_extract(zb, ((1, 0), (0, 0)))) == 0.0


def test_batched_matches_pointwise():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(4, 2)) * 0.4 + 1j * rng.normal(size=(4, 2)) * 0.4
    rho = ball_rho(pts, 2, 4)
    f = jet_compose(Jet.constant(np.ones(4), 2, 4), -rho, "div")
    for k in range(4):
        fk = jet_compose(Jet.constant(1.0, 2, 4), -ball_rho(pts[k], 2, 4), "div")
        assert np.max(np.abs(f.coeffs[k] - fk.coeffs)) < 1e-13


def test_pow_rational_chain_consistency():
    rng = np.random.default_rng(21)
    tab = jet_tables(4, 4)
    f = Jet(rng.normal(size=(3, tab.ncoeff)) * 0.3 + 1j * rng.normal(size=(3, tab.ncoeff)) * 0.3,
            2, 4)
    f.coeffs[..., 0] = 2.0 + rng.random(3)
    p = jet_compose(f, None, "pow_rational", exponent="-1/3")
    cube = p * p * p * f
    resid = cube.coeffs.copy()
    resid[..., 0] -= 1.0
    assert np.max(np.abs(resid)) < 1e-12
    s = jet_compose(f * f, None, "sqrt")
    assert np.max(np.abs(s.coeffs - f.coeffs)) < 1e-12


def test_mul_bounded_matches_full():
    rng = np.random.default_rng(17)
    tab = jet_tables(4, 6)
    low = np.zeros((3, tab.ncoeff), dtype=complex)
    cnt = tab.count_at_order[2]
    low[..., :cnt] = rng.normal(size=(3, cnt))
    f = Jet(low, 2, 6)
    g = Jet(rng.normal(size=(3, tab.ncoeff)) + 1j * rng.normal(size=(3, tab.ncoeff)), 2, 6)
    full = f * g
    fast = mul_bounded(f, g, f_degree=2)
    assert np.max(np.abs(full.coeffs - fast.coeffs)) < 1e-13


# ---------------------------------------------------------------- errors


def test_division_by_singular():
    z1 = Jet.variable(0, 0.0, 2, 3)
    with pytest.raises(DivisionBySingular):
        jet_compose(Jet.constant(1.0, 2, 3), z1 * z1.conj(), "div")


def test_branch_violation_on_cut():
    f = Jet.constant(-2.0, 2, 3)
    with pytest.raises(BranchViolation):
        jet_compose(f, None, "log")
    with pytest.raises(BranchViolation):
        jet_compose(f, None, "sqrt")
    # integer powers of negative constants are fine
    p = jet_compose(f, None, "pow_rational", exponent=-1)
    assert p.value == pytest.approx(-0.5)


def test_order_exceeded_on_extract():
    z1 = Jet.variable(0, 0.0, 2, 2)
    with pytest.raises(OrderExceeded):
        jet_extract(z1, ((2, 0), (1, 0)))


def test_singular_system_raises():
    K = 2
    one = Jet.constant(1.0, 2, K)
    A = [[one, one], [one, one]]
    with pytest.raises(SingularSystem):
        jet_linear_solve(A, [one, one])
