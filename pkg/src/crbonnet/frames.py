"""Per-point boundary frame data.

Builds, at any point where the gradient of rho does not vanish, the
transverse (1,0) field xi with dual pairing 1 against d rho, the transverse
curvature r, a Levi-orthonormal frame W_alpha of Ker d rho, the dual coframe
{d rho, theta^alpha}, and the contact form theta.  Everything is carried
through jets so downstream code can differentiate the frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .domains import AmbientPoint
from .errors import DegenerateFrame, DivisionBySingular
from .forms import FormElement, form_from_gradient
from .jets import Jet, jet_compose, jet_determinant, jet_linear_solve

__all__ = [
    "FrameData",
    "solve_xi",
    "build_coframe",
    "split_NT",
    "jet_matrix_inverse",
    "field_values",
]

_PIVOT_EPS = 1e-10


@dataclass
class FrameData:
    """Frame package at one (possibly batched) point."""

    point: AmbientPoint
    n: int
    xi: list  # jet components of the transverse (1,0) field
    r: Jet  # transverse curvature
    W: list  # (n+1)x(n+1) jets; row 0 = xi, rows 1.. = Levi-orthonormal W_alpha
    coframe: list  # FormElements dual to the rows of W; coframe[0] = del rho
    h: list  # Levi form in the new frame (jets; identity to truncation order)
    theta: FormElement  # contact form (i/2)(dbar rho - del rho)

    @property
    def m(self) -> int:
        return self.n + 1

    def frame_values(self) -> np.ndarray:
        """Base-point frame matrix, shape (..., m, m), rows = frame vectors."""
        return np.stack(
            [np.stack([c.value for c in row], axis=-1) for row in self.W], axis=-2
        )

    def duality_residual(self) -> float:
        """Largest deviation of coframe(W) from the identity at the base point."""
        worst = 0.0
        for i, form in enumerate(self.coframe):
            for j, row in enumerate(self.W):
                val = form.pair([(field_values(row), None)])
                want = 1.0 if i == j else 0.0
                worst = max(worst, float(np.max(np.abs(val - want))))
        return worst

    def levi_decomposition_residual(self) -> float:
        """Coefficientwise residual of del dbar rho against the frame decomposition.

        Checks del dbar rho = sum_ab h_ab theta^a wedge conj(theta^b)
        + r del rho wedge dbar rho with the orthonormalized h = identity.
        """
        rho = self.point.rho_jet
        m = self.m
        coeffs = {}
        for i in range(m):
            for j in range(m):
                coeffs[(i, m + j)] = rho.derivative(i).derivative(m + j)
        ddbar = FormElement(m, 2, coeffs)
        del_rho = self.coframe[0]
        dbar_rho = del_rho.conj()
        model = (del_rho.wedge(dbar_rho)) * self.r
        for a in range(1, m):
            for b in range(1, m):
                term = self.coframe[a].wedge(self.coframe[b].conj()) * self.h[a - 1][b - 1]
                model = model + term
        return (ddbar - model).at_value().max_abs()


def solve_xi(point: AmbientPoint):
    """Transverse field and transverse curvature from the bordered system.

    Unknowns are the conjugate components of xi together with r; the rows
    state d rho(xi) = 1 and Hess(rho) xi-bar = r grad(rho).
    """
    rho = point.rho_jet
    m = rho.n_vars
    order = rho.order - 2
    if order < 0:
        raise ValueError("solve_xi needs a jet of order >= 2")
    grad = [rho.derivative(i).truncated(order) for i in range(m)]
    gradbar = [rho.derivative(m + i).truncated(order) for i in range(m)]
    hess = [[rho.derivative(i).derivative(m + j) for j in range(m)] for i in range(m)]
    zero = Jet.constant(np.zeros(np.shape(rho.value)), m, order, rho.base_point)
    one = Jet.constant(np.ones(np.shape(rho.value)), m, order, rho.base_point)

    rows = [[hess[i][j] for j in range(m)] + [-grad[i]] for i in range(m)]
    rows.append([gradbar[j] for j in range(m)] + [zero])
    rhs = [zero] * m + [one]
    sol = jet_linear_solve(rows, rhs)
    xi = [sol[j].conj() for j in range(m)]
    return xi, sol[m]


def _levi_dot_value(hess_val, u, v):
    """h(u, v) = sum hess[i][j] u_i conj(v_j) on base-point values."""
    return np.einsum("...ij,...i,...j->...", hess_val, u, np.conj(v))


def _levi_dot_jet(hess, u, v):
    acc = None
    for i in range(len(u)):
        for j in range(len(v)):
            term = hess[i][j] * u[i] * v[j].conj()
            acc = term if acc is None else acc + term
    return acc


def _gather_jet(cands, pick, comp):
    """Per-point selection of candidate ``pick``'s component ``comp``."""
    stacked = np.stack([c[comp].coeffs for c in cands], axis=0)
    idx = pick.reshape((1,) + pick.shape + (1,))
    idx = np.broadcast_to(idx, (1,) + pick.shape + (stacked.shape[-1],))
    out = np.take_along_axis(stacked, idx, axis=0)[0]
    proto = cands[0][comp]
    return Jet(out, proto.n_vars, proto.order, proto.base_point)


def build_coframe(point: AmbientPoint, xi, r, mix=None) -> FrameData:
    """Levi-orthonormal frame of Ker d rho and the dual coframe.

    The seed vectors are the coordinate directions projected along xi onto
    Ker d rho, pivoted per point by largest Levi norm (deterministic
    tie-break: numpy argmax takes the lowest index).  ``mix`` optionally
    applies an n x n unitary to the selected seeds before orthonormalization
    to exercise the frame gauge.
    """
    rho = point.rho_jet
    m = rho.n_vars
    n = m - 1
    order = xi[0].order
    grad = [rho.derivative(i).truncated(order) for i in range(m)]
    hess = [[rho.derivative(i).derivative(m + j).truncated(order) for j in range(m)]
            for i in range(m)]
    batch = np.shape(rho.value)

    # projections of the coordinate basis onto Ker d rho
    cands = []
    for k in range(m):
        comps = []
        for l in range(m):
            c = -(grad[k] * xi[l])
            if l == k:
                c = c + 1.0
            comps.append(c)
        cands.append(comps)

    # pivot selection on base values
    hess_val = np.stack(
        [np.stack([np.broadcast_to(hess[i][j].value, batch) for j in range(m)], axis=-1)
         for i in range(m)],
        axis=-2,
    )
    vals = np.stack(
        [np.stack([np.broadcast_to(c.value, batch) for c in comps], axis=-1)
         for comps in cands],
        axis=0,
    )  # (m_cand, ..., m)
    scale = np.maximum(np.abs(np.einsum("...ii->...", hess_val).real) / m, 1e-300)
    used = np.zeros((m,) + batch, dtype=bool)
    axes_shape = (m,) + (1,) * len(batch)
    cand_ids = np.arange(m).reshape(axes_shape)
    picks = []
    for _ in range(n):
        norms = np.stack(
            [_levi_dot_value(hess_val, vals[a], vals[a]).real for a in range(m)], axis=0
        )
        norms = np.where(used, -np.inf, norms)
        pick = np.argmax(norms, axis=0)
        best = np.take_along_axis(norms, pick[None], axis=0)[0]
        if np.min(best / scale) < _PIVOT_EPS:
            raise DegenerateFrame(
                f"Levi pivot {np.min(best):.3e} below threshold; "
                "Levi form degenerate on Ker d rho at this point"
            )
        picks.append(pick)
        used |= cand_ids == pick
        chosen = np.take_along_axis(
            vals, pick.reshape((1,) + pick.shape + (1,)), axis=0
        )[0]
        unit = chosen / np.sqrt(best)[..., None]
        for a in range(m):
            proj = _levi_dot_value(hess_val, vals[a], unit)
            vals[a] = vals[a] - proj[..., None] * unit

    # seeds through jets, optionally mixed
    seeds = []
    for a in range(n):
        seeds.append([_gather_jet(cands, picks[a], l) for l in range(m)])
    if mix is not None:
        mix = np.asarray(mix, dtype=np.complex128)
        mixed = []
        for a in range(n):
            comps = []
            for l in range(m):
                acc = None
                for b in range(n):
                    term = seeds[b][l] * mix[a, b]
                    acc = term if acc is None else acc + term
                comps.append(acc)
            mixed.append(comps)
        seeds = mixed

    # Gram-Schmidt through jets against the Levi form
    ws = []
    for a in range(n):
        v = seeds[a]
        for w in ws:
            coef = _levi_dot_jet(hess, v, w)
            v = [v[l] - coef * w[l] for l in range(m)]
        norm2 = _levi_dot_jet(hess, v, v)
        norm2 = (norm2 + norm2.conj()) * 0.5
        try:
            inv_norm = jet_compose(norm2, None, "pow_rational", exponent=Fraction(-1, 2))
        except DivisionBySingular as exc:
            raise DegenerateFrame("Levi norm vanished during orthonormalization") from exc
        ws.append([v[l] * inv_norm for l in range(m)])

    frame = [list(xi)] + ws
    inv = jet_matrix_inverse(frame)
    coframe = [FormElement(m, 1, {(k,): grad[k] for k in range(m)})]
    for a in range(1, m):
        coframe.append(FormElement(m, 1, {(k,): inv[k][a] for k in range(m)}))

    levi = [[_levi_dot_jet(hess, ws[a], ws[b]) for b in range(n)] for a in range(n)]

    theta_coeffs = {}
    for k in range(m):
        theta_coeffs[(k,)] = grad[k] * (-0.5j)
        theta_coeffs[(m + k,)] = rho.derivative(m + k).truncated(order) * 0.5j
    theta = FormElement(m, 1, theta_coeffs)

    return FrameData(
        point=point, n=n, xi=list(xi), r=r, W=frame, coframe=coframe, h=levi, theta=theta
    )


def split_NT(xi):
    """Real-imaginary splitting of xi into the fields N and T.

    Both are real fields returned by their (1,0) components: the actual
    vector is the component plus its conjugate.  N = (xi + conj xi)/2 and
    T = i(xi - conj xi), so d rho(N) = 1, theta(T) = 1 and the cross
    pairings vanish.
    """
    N = [c * 0.5 for c in xi]
    T = [c * 1j for c in xi]
    return N, T


def jet_matrix_inverse(A):
    """Adjugate inverse of a small (<= 4x4) matrix of jets."""
    rows = [list(r) for r in A]
    m = len(rows)
    det = jet_determinant(rows)
    inv_det = 1.0 / det
    if m == 1:
        return [[inv_det]]
    out = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            minor = [
                [rows[a][b] for b in range(m) if b != i]
                for a in range(m)
                if a != j
            ]
            cof = jet_determinant(minor)
            if (i + j) % 2:
                cof = -cof
            out[i][j] = cof * inv_det
    return out


def field_values(comps) -> np.ndarray:
    """Stack jet components into a base-point array of shape (..., m)."""
    vals = [c.value for c in comps]
    shape = np.broadcast_shapes(*(np.shape(v) for v in vals))
    return np.stack([np.broadcast_to(v, shape) for v in vals], axis=-1)
