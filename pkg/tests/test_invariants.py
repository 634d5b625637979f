"""Density formulas, the tensor identities, and the two-route report."""

import json

import numpy as np
import pytest

from crbonnet.curvature import PseudoHermitianData
from crbonnet.domains import ambient_point, make_builtin, sample_boundary
from crbonnet.errors import (
    DensityRouteMismatch,
    InvalidParams,
    NewtonDiverged,
    StageTooLow,
    WrongDimension,
)
from crbonnet.curvature import extract_pseudohermitian, renormalized_connection
from crbonnet.frames import build_coframe, solve_xi
from crbonnet.invariants import (
    KETensor,
    burns_epstein_density,
    dim5_density,
    dim5_scalar_expression,
    gauss_bonnet_report,
    ke_tensor_oracle,
    random_ke_tensor,
    weyl_norm2,
)


def synthetic_data(n, A=None, R=None, scal=None):
    A = np.zeros((n, n)) if A is None else np.asarray(A, dtype=complex)
    R = np.zeros((n, n, n, n)) if R is None else np.asarray(R, dtype=complex)
    ric = np.einsum("aacd->cd", R)
    s = np.einsum("cc->", ric).real if scal is None else scal
    return PseudoHermitianData(A=A, R=R, Ric=ric, scal=np.asarray(s),
                               r_boundary=np.asarray(s) / (n * (n + 1)))


def extracted_data(spec, z):
    pt = ambient_point(spec, z, order=4)
    xi, r = solve_xi(pt)
    fd = build_coframe(pt, xi, r)
    bundle = renormalized_connection(pt, fd)
    return extract_pseudohermitian(pt, bundle, fd)


def sphere_tensor(n):
    eye = np.eye(n)
    return (np.einsum("ab,cd->abcd", eye, eye)
            + np.einsum("cb,ad->abcd", eye, eye)).astype(complex)


# ---------------------------------------------------------------------------
# three-dimensional density


def test_burns_epstein_sphere_value():
    data = synthetic_data(1, R=sphere_tensor(1))
    assert data.scal == 2.0
    coeff = burns_epstein_density(data)
    assert abs(coeff + 1.0 / (4.0 * np.pi**2)) <= 1e-15


def test_burns_epstein_cancellation_point():
    data = synthetic_data(1, A=[[np.exp(0.7j)]], R=sphere_tensor(1))
    assert abs(burns_epstein_density(data)) <= 1e-15


def test_burns_epstein_tube_boundary():
    tube = make_builtin("tube_disc", 1)
    data = extracted_data(tube, sample_boundary(tube, 40, seed=2))
    coeff = burns_epstein_density(data)
    assert np.max(np.abs(coeff + 1.0 / (4.0 * np.pi**2))) <= 1e-10
    assert np.max(data.torsion_norm2) <= 1e-18


def test_density_dimension_gates():
    with pytest.raises(WrongDimension):
        burns_epstein_density(synthetic_data(2))
    with pytest.raises(WrongDimension):
        dim5_density(synthetic_data(1))


# ---------------------------------------------------------------------------
# five-dimensional density


def test_dim5_sphere_value():
    data = synthetic_data(2, R=sphere_tensor(2))
    assert data.scal == 6.0
    assert abs(float(np.sum(np.abs(data.R) ** 2)) - 12.0) <= 1e-14
    coeff = dim5_density(data)
    assert abs(coeff + 2.0 / (16.0 * np.pi**3)) <= 1e-16
    assert abs(float(coeff) * 8.0 * np.pi**3 + 1.0) <= 1e-12


def test_dim5_flat_curvature_limit():
    # with A = R = 0 only the cubic scalar term survives
    want = 27.0 / 54.0
    assert abs(dim5_scalar_expression(3.0, 0.0, 0.0) - want) <= 1e-18
    # data whose scal field is not the trace of R is refused
    with pytest.raises(DensityRouteMismatch):
        dim5_density(synthetic_data(2, scal=3.0))


def test_dim5_on_ke_tensor_matches_s_form():
    rng = np.random.default_rng(11)
    for _ in range(10):
        ke = random_ke_tensor(rng)
        data = synthetic_data(2, R=ke.R)
        assert abs(float(data.scal) + 6.0) <= 1e-13
        s2 = float(np.sum(np.abs(ke.S) ** 2))
        want = (0.5 * s2 + 2.0) / (16.0 * np.pi**3)
        assert abs(float(dim5_density(data)) - want) <= 1e-14


def test_dim5_locality_under_frame_rotation():
    # the density is a scalar invariant: rotating the frame scrambles the
    # tensor components but cannot move the value
    rng = np.random.default_rng(7)
    raw = rng.normal(size=(2, 2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2, 2))
    from crbonnet.invariants import _symmetrize

    R = _symmetrize(raw)
    A = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    A = (A + A.T) / 2.0
    data = synthetic_data(2, A=A, R=R)

    U, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    R_rot = np.einsum("ae,bf,cg,dh,efgh->abcd", U, np.conj(U), U, np.conj(U), R)
    A_rot = U @ A @ U.T
    rotated = synthetic_data(2, A=A_rot, R=R_rot)

    assert np.max(np.abs(R_rot - R)) > 1e-2
    assert abs(float(dim5_density(rotated)) - float(dim5_density(data))) <= 1e-13

    # sanity: a perturbation that does alter the invariants moves the value
    bumped = synthetic_data(2, A=A, R=1.05 * R)
    assert abs(float(dim5_density(bumped)) - float(dim5_density(data))) > 1e-6


# ---------------------------------------------------------------------------
# tensor oracle


def loop_norm2(T):
    total = 0.0
    idx = range(2)
    for a in idx:
        for b in idx:
            for c in idx:
                for d in idx:
                    total += abs(T[a, b, c, d]) ** 2
    return total


def loop_weyl_norm2(S):
    # brute-force version of the optimized contraction, written from the
    # component displays with explicit loops
    idx = range(2)
    eye = np.eye(2)
    total = 0.0
    for a in idx:
        for b in idx:
            for c in idx:
                for d in idx:
                    w1 = S[a, b, c, d] + 2.0 * eye[a, b] * eye[c, d]
                    w2 = eye[a, d] * eye[b, c] - eye[a, c] * eye[b, d]
                    total += 4.0 * abs(w1) ** 2 + 2.0 * abs(w2) ** 2
    return total


def test_weyl_norm_against_loop_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        ke = random_ke_tensor(rng)
        assert abs(ke.Weyl_sq - loop_weyl_norm2(ke.S)) <= 1e-12
        assert abs(float(np.sum(np.abs(ke.S) ** 2)) - loop_norm2(ke.S)) <= 1e-12


def test_constant_curvature_weyl_value():
    assert weyl_norm2(np.zeros((2, 2, 2, 2))) == 72.0


def test_ke_oracle_thousand_samples():
    rep = ke_tensor_oracle(1000, seed=42)
    assert rep["samples"] == 1000
    assert rep["max_ricci_residual"] <= 1e-12
    assert rep["max_s_trace_residual"] <= 1e-12
    assert rep["max_weyl_identity_residual"] <= 1e-10
    assert rep["max_density_rearrangement_residual"] <= 1e-10


def test_density_rearrangement_constant_case():
    # S = 0: both bracketings give 1/(4 pi^3) per unit coordinate volume
    ke = KETensor(R=np.zeros((2, 2, 2, 2)), S=np.zeros((2, 2, 2, 2)),
                  Weyl_sq=72.0)
    direct = 2.0 * (0.5 * 0.0 + 2.0) / (16.0 * np.pi**3)
    rearranged = (-(7.0 / 6.0) * (ke.Weyl_sq / 4.0 + 6.0)
                  + (5.0 / 12.0) * ke.Weyl_sq) / (8.0 * np.pi**3)
    assert abs(direct - 1.0 / (4.0 * np.pi**3)) <= 1e-18
    assert abs(direct - rearranged) <= 1e-18


# ---------------------------------------------------------------------------
# report


def test_report_ball_n1():
    rep = gauss_bonnet_report(make_builtin("ball", 1), resolution=16)
    assert abs(rep.integral_transgression + 1.0) <= 1e-10
    assert abs(rep.integral_density + 1.0) <= 1e-10
    assert rep.discrepancy <= 1e-12
    assert not rep.flagged
    assert rep.fefferman_stage is None
    assert abs(rep.euler_side) <= 1e-12
    diag = rep.per_node_diagnostics
    assert diag["interior_chern_max"] <= 1e-14
    assert diag["euler_characteristic"] == 1
    assert abs(diag["scal"]["min"] - 2.0) <= 1e-11
    assert abs(diag["scal"]["max"] - 2.0) <= 1e-11
    assert diag["einstein_residual"]["max"] <= 1e-12
    assert diag["torsion_sq"]["max"] <= 1e-20


def test_report_mobius_matches_ball():
    rep = gauss_bonnet_report(
        make_builtin("mobius_ball", 1, {"a": [0.3, 0.1]}), resolution=12)
    assert abs(rep.integral_transgression + 1.0) <= 1e-9
    assert rep.discrepancy <= 1e-10
    assert abs(rep.euler_side) <= 1e-9


def test_report_ellipsoid_staged():
    rep = gauss_bonnet_report(
        make_builtin("real_ellipsoid", 1, {"t": 0.2}), resolution=12)
    assert rep.fefferman_stage == 3
    assert rep.discrepancy <= 1e-8
    assert not rep.flagged
    assert rep.euler_side is None
    # the invariant of this non-spherical structure is near, not at, -1
    assert abs(rep.integral_transgression + 1.0) <= 1e-3
    assert rep.per_node_diagnostics["einstein_residual"]["max"] <= 1e-11


def test_report_ball_n2():
    rep = gauss_bonnet_report(make_builtin("ball", 2), resolution=8)
    assert abs(rep.integral_transgression + 1.0) <= 1e-10
    assert rep.discrepancy <= 1e-12
    assert abs(rep.euler_side) <= 1e-12


def test_report_refinement_stability():
    a = gauss_bonnet_report(make_builtin("ball", 1), resolution=8)
    b = gauss_bonnet_report(make_builtin("ball", 1), resolution=16)
    assert abs(a.integral_transgression - b.integral_transgression) <= 1e-8


def test_report_worker_determinism():
    a = gauss_bonnet_report(make_builtin("ball", 1), resolution=8, workers=1)
    b = gauss_bonnet_report(make_builtin("ball", 1), resolution=8, workers=2)
    assert a.integral_transgression == b.integral_transgression
    assert a.integral_density == b.integral_density
    assert a.per_node_diagnostics["scal"] == b.per_node_diagnostics["scal"]


def test_report_validation_and_serialization():
    ball = make_builtin("ball", 1)
    with pytest.raises(InvalidParams):
        gauss_bonnet_report(ball, n=2)
    with pytest.raises(StageTooLow):
        gauss_bonnet_report(
            make_builtin("real_ellipsoid", 1, {"t": 0.1}), fefferman_stage=2)
    with pytest.raises(NewtonDiverged):
        gauss_bonnet_report(make_builtin("tube_disc", 1), resolution=8)

    rep = gauss_bonnet_report(ball, resolution=8)
    doc = rep.to_json_dict()
    text = json.dumps(doc)
    back = json.loads(text)
    assert back["domain_id"] == "ball(n=1)"
    assert back["euler_side"] is not None
    rows = rep.diagnostics_rows()
    assert ("scal", *[back["per_node_diagnostics"]["scal"][k]
                      for k in ("min", "max", "mean")]) in rows
