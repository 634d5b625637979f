"""Transgression sums, the exactness oracle, variants, and index integrals."""

import math

import numpy as np
import pytest

from crbonnet.curvature import ambient_metric, renormalized_connection
from crbonnet.domains import (
    DomainSpec,
    _hermitian_pair,
    _sorted_monomials,
    ambient_point,
    make_builtin,
    sample_boundary,
    sample_interior,
)
from crbonnet.errors import ExtrapolationUnstable, InvalidParams, JetOrderExhausted
from crbonnet.forms import real_vector
from crbonnet.frames import build_coframe, field_values, solve_xi, split_NT
from crbonnet.monge_ampere import fefferman_iterate
from crbonnet.quadrature import boundary_chart, integrate_form, sphere_grid
from crbonnet.transgression import (
    chern_det,
    d_pi_residual,
    index_integral,
    phi_terms,
    signed_permutation_pairs,
    transgression_form,
)


def pipeline(spec, z, order=4, with_metric=False, mix=None):
    pt = ambient_point(spec, z, order=order)
    xi, r = solve_xi(pt)
    fd = build_coframe(pt, xi, r, mix=mix)
    metric = ambient_metric(pt, fd) if with_metric else None
    return pt, fd, renormalized_connection(pt, fd, metric)


def quartic_bump_domain():
    """Ball with quartic mixed terms; the top Chern form is nonzero here."""
    monos = [((0, 0), (0, 0), -1.0 + 0j)]
    for i in range(2):
        e = [0, 0]
        e[i] = 1
        monos += _hermitian_pair(tuple(e), tuple(e), 1.0)
    monos += _hermitian_pair((2, 0), (0, 1), 0.15)
    monos += _hermitian_pair((1, 1), (1, 0), 0.1)
    return DomainSpec(1, "polynomial", _sorted_monomials(monos), {}, np.zeros(2))


def pi_callback(spec, n, variant="standard"):
    def cb(z):
        _, _, bundle = pipeline(spec, z)
        return transgression_form(bundle, n, variant=variant).Pi.at_value()

    return cb


# ---------------------------------------------------------------------------
# permutation sums


def test_signed_pairs_counts():
    for n in (1, 2):
        pairs = signed_permutation_pairs(n)
        assert len(pairs) == math.factorial(n) ** 2
    signs = {(s, t): sign for sign, s, t in signed_permutation_pairs(2)}
    assert signs[(1, 2), (1, 2)] == 1
    assert signs[(2, 1), (1, 2)] == -1
    assert signs[(2, 1), (2, 1)] == 1


def test_phi_terms_n1_closed_forms():
    ball = make_builtin("ball", 1)
    z = sample_boundary(ball, 4, seed=2)
    _, _, bundle = pipeline(ball, z)
    phi0, phi1 = phi_terms(bundle, 1)
    th, Th = bundle.theta_conn, bundle.Theta
    want0 = [th[0][0].wedge(th[1][0]).wedge(th[0][1]), th[0][0].wedge(Th[1][1])]
    want1 = [Th[1][0].wedge(th[0][1])]
    for got, want in zip(phi0, want0):
        assert (got - want).at_value().max_abs() <= 1e-15
    assert (phi1[0] - want1[0]).at_value().max_abs() <= 1e-15
    assert phi1[1].at_value().max_abs() == 0.0


@pytest.mark.parametrize("n,t", [(1, 0.2), (2, 0.15)])
def test_degree_bookkeeping(n, t):
    ell = make_builtin("real_ellipsoid", n, {"t": t})
    z = sample_boundary(ell, 2, seed=3)
    _, _, bundle = pipeline(ell, z)
    tv = transgression_form(bundle, n)
    assert tv.Pi.degree == 2 * n + 1
    assert tv.chern.degree == 2 * n + 2
    assert tv.phi1[n].at_value().max_abs() == 0.0
    assert all(f.degree == 2 * n + 1 for f in tv.phi0 + tv.phi1)


# ---------------------------------------------------------------------------
# the primitive and its exactness


def test_ball_boundary_density_oracle():
    # on the round sphere the primitive is -(1/4pi^2) theta wedge d theta
    ball = make_builtin("ball", 1)
    z = sample_boundary(ball, 6, seed=2)
    _, fd, bundle = pipeline(ball, z)
    tv = transgression_form(bundle, 1)
    _, T = split_NT(fd.xi)
    w1 = field_values(fd.W[1])
    vecs = [real_vector(field_values(T)), real_vector(w1), real_vector(-1j * w1)]
    lhs = tv.Pi.at_value().pair(vecs)
    rhs = fd.theta.wedge(fd.theta.d()).at_value().pair(vecs)
    assert np.max(np.abs(lhs / rhs + 1.0 / (4.0 * np.pi**2))) <= 1e-12


def test_ball_interior_chern_vanishes():
    ball = make_builtin("ball", 1)
    z = sample_interior(ball, 12, seed=5)
    _, _, bundle = pipeline(ball, z, with_metric=True)
    tv = transgression_form(bundle, 1)
    w_max = max(f.at_value().max_abs() for row in bundle.W_chern for f in row)
    assert w_max <= 1e-10
    assert tv.chern.at_value().max_abs() <= 1e-12
    assert chern_det(bundle.W_chern).at_value().max_abs() <= 1e-12


def test_row_homotopy_matches_closed_form():
    # independent route: deform the connection, integrate the path exactly
    for spec, n in [(make_builtin("ball", 1), 1), (quartic_bump_domain(), 1),
                    (make_builtin("real_ellipsoid", 2, {"t": 0.15}), 2)]:
        z = sample_boundary(spec, 3, seed=4) * 0.95
        _, _, bundle = pipeline(spec, z)
        tv = transgression_form(bundle, n)
        tv_row = transgression_form(bundle, n, variant="row")
        scale = max(tv.Pi.at_value().max_abs(), 1e-30)
        assert (tv.Pi - tv_row.Pi).at_value().max_abs() / scale <= 1e-12


def test_exactness_on_nonzero_chern():
    # the quartic bump makes chern genuinely nonzero, so this pins every
    # sign and prefactor of the construction at once
    spec = quartic_bump_domain()
    z = sample_boundary(spec, 6, seed=1) * 0.9
    pt = ambient_point(spec, z, order=5)
    xi, r = solve_xi(pt)
    fd = build_coframe(pt, xi, r)
    bundle = renormalized_connection(pt, fd)
    tv = transgression_form(bundle, 1)
    assert tv.chern.at_value().max_abs() > 1e-7
    assert (tv.Pi.d() - tv.chern).at_value().max_abs() <= 1e-12


def test_d_pi_residual_builtin_examples():
    ball = make_builtin("ball", 1)
    z = sample_interior(ball, 100, seed=3)
    assert d_pi_residual(ball, z) <= 1e-8

    tube = make_builtin("tube_disc", 1)
    zb = sample_boundary(tube, 80, seed=4)
    zc = tube.star_center + 0.95 * (zb - tube.star_center)
    zc = zc[tube.evaluate(zc) < -0.02]
    assert zc.shape[0] >= 20
    assert d_pi_residual(tube, zc) <= 1e-8

    ell = make_builtin("real_ellipsoid", 1, {"t": 0.2})
    sol = fefferman_iterate(ell, target_order=3)
    ze = sample_boundary(ell, 60, seed=9) * 0.93
    assert d_pi_residual(sol, ze) <= 1e-7


def test_d_pi_residual_order_gate():
    ball = make_builtin("ball", 1)
    z = sample_interior(ball, 3, seed=6)
    with pytest.raises(JetOrderExhausted):
        d_pi_residual(ball, z, order=4)


def test_prop_top_det_identity():
    # det of the renormalized curvature equals det of the metric-route
    # curvature, including where both are nonzero
    for spec in (quartic_bump_domain(), make_builtin("real_ellipsoid", 1, {"t": 0.2})):
        z = sample_boundary(spec, 6, seed=7) * 0.92
        _, _, bundle = pipeline(spec, z, with_metric=True)
        tv = transgression_form(bundle, 1)
        assert (tv.chern - chern_det(bundle.W_chern)).at_value().max_abs() <= 1e-9
        assert (tv.chern - chern_det(bundle.Wc)).at_value().max_abs() <= 1e-9


def test_gauge_invariance_pointwise():
    ell = make_builtin("real_ellipsoid", 1, {"t": 0.2})
    z = sample_boundary(ell, 6, seed=8)
    rng = np.random.default_rng(5)
    q, _ = np.linalg.qr(rng.normal(size=(1, 1)) + 1j * rng.normal(size=(1, 1)))
    _, _, plain = pipeline(ell, z)
    _, _, mixed = pipeline(ell, z, mix=q)
    vecs = [
        real_vector(np.broadcast_to(np.array([1.0, 0.0]), z.shape)),
        real_vector(np.broadcast_to(np.array([1j, 0.0]), z.shape)),
        real_vector(np.broadcast_to(np.array([0.0, 1.0 + 0.5j]), z.shape)),
    ]
    a = transgression_form(plain, 1).Pi.at_value().pair(vecs)
    b = transgression_form(mixed, 1).Pi.at_value().pair(vecs)
    scale = np.max(np.abs(a))
    assert scale > 1e-6
    assert np.max(np.abs(a - b)) / scale <= 1e-10


def test_variant_boundary_integrals_agree():
    ball = make_builtin("ball", 1)
    chart = boundary_chart(ball, sphere_grid(1, 12))
    vals = {
        variant: integrate_form(chart, pi_callback(ball, 1, variant))
        for variant in ("standard", "column", "block")
    }
    assert abs(vals["standard"] - (-1.0)) <= 1e-9
    assert abs(vals["column"] - vals["standard"]) <= 1e-6
    assert abs(vals["block"] - vals["standard"]) <= 1e-6


def test_unknown_variant_rejected():
    ball = make_builtin("ball", 1)
    z = sample_boundary(ball, 2, seed=1)
    _, _, bundle = pipeline(ball, z)
    with pytest.raises(InvalidParams):
        transgression_form(bundle, 1, variant="diagonal")


# ---------------------------------------------------------------------------
# index integrals


def test_index_identity_field_exact():
    k, v = index_integral(np.eye(4))
    assert k == 1
    assert abs(v - 1.0) <= 1e-12


def test_index_orientation_reversing_field():
    k, v = index_integral(np.diag([1.0, 1.0, 1.0, -1.0]))
    assert k == -1
    assert abs(v + 1.0) <= 1e-12


def test_index_complex_field_metric_connection():
    k_triv, v_triv = index_integral(np.eye(2, dtype=complex))
    k_met, v_met = index_integral(np.eye(2, dtype=complex), connection="metric")
    assert k_triv == 1 and k_met == 1
    assert abs(v_met - 1.0) <= 1e-2
    assert abs(v_triv - v_met) <= 1e-2


def test_index_connection_independence_generic():
    L = np.array([[1.0 + 0.5j, 0.3], [-0.2j, 0.8 - 0.1j]])
    _, v_triv = index_integral(L)
    _, v_met = index_integral(L, connection="metric")
    assert abs(v_triv - v_met) <= 1e-2


def test_index_extrapolation_unstable():
    with pytest.raises(ExtrapolationUnstable):
        index_integral(np.eye(2, dtype=complex), connection="metric",
                       eps_list=(0.95, 0.6, 0.2))


def test_index_input_validation():
    with pytest.raises(InvalidParams):
        index_integral(np.zeros((4, 4)))
    with pytest.raises(InvalidParams):
        index_integral(np.eye(3))
    with pytest.raises(InvalidParams):
        index_integral(np.eye(4), connection="metric")
    with pytest.raises(InvalidParams):
        index_integral(np.eye(4), connection="levi-civita")
