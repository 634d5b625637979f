"""Collar metric, renormalized connection, and boundary curvature tensors.

The ambient Kahler metric g = del dbar log(-1/rho) has connection and
curvature forms with 1/rho poles at the boundary.  Subtracting the universal
singular matrix Y leaves a connection that extends over the boundary; in the
coordinate frame the subtraction can be carried out in closed form,

    theta_i^j = sum_kl rho_{i kbar l} [M]^{kbar j} dz^l
                + (sum_l rho_{il} dz^l) xi^j / (1 - r rho),

    [M]^{kbar j} = (Hess rho)^{-1, kbar j}
                   - conj(xi)^k xi^j / (r (1 - r rho)),

which contains no negative powers of rho at all: the identities
Hess(rho) conj(xi) = r grad(rho) and grad(rho) . xi = 1 cancel every pole of
psi - Y.  Everything downstream (frame transform, curvature, boundary
traces) therefore evaluates at exact boundary points.

All matrices of forms are indexed mat[i][j] for the form with lower index i
and upper index j; matrix products contract adjacent indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domains import AmbientPoint
from .errors import NotInterior, NotOnBoundary, StageTooLow
from .forms import (
    FormElement,
    antihol_vector,
    form_from_gradient,
    hol_vector,
    real_vector,
)
from .frames import FrameData, field_values, jet_matrix_inverse, split_NT
from .jets import Jet, jet_compose
from .monge_ampere import ApproxSolution

__all__ = [
    "MetricData",
    "ConnectionBundle",
    "PseudoHermitianData",
    "ambient_metric",
    "renormalized_connection",
    "extract_pseudohermitian",
    "check_einstein_relations",
    "prop_display_residuals",
    "BOUNDARY_TOL",
]

BOUNDARY_TOL = 1e-12


def _mat_zero(m, degree):
    return [[FormElement.zero(m, degree) for _ in range(m)] for _ in range(m)]


def _mat_wedge_square(mat, m):
    out = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            acc = None
            for k in range(m):
                term = mat[i][k].wedge(mat[k][j])
                acc = term if acc is None else acc + term
            out[i][j] = acc
    return out


def _gauge_transform(mat, E, Einv, m):
    """E mat E^{-1} for a matrix of forms and jet matrices E, E^{-1}."""
    out = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            acc = None
            for k in range(m):
                for l in range(m):
                    term = mat[k][l] * (E[i][k] * Einv[l][j])
                    acc = term if acc is None else acc + term
            out[i][j] = acc
    return out


@dataclass
class MetricData:
    """Ambient metric jets in both the coordinate and the adapted frame."""

    g: list  # coordinate g_{i jbar}, matrix of jets
    g_frame: list | None  # block-diagonal frame metric: (1-r rho)/rho^2 and h/(-rho)
    frame: FrameData | None

    def block_residual(self) -> float:
        """Frame change of g against the stored block form, at base values."""
        E = self.frame.frame_values()
        gv = np.stack(
            [np.stack([np.broadcast_to(c.value, E.shape[:-2]) for c in row], axis=-1)
             for row in self.g],
            axis=-2,
        )
        changed = np.einsum("...ik,...kl,...jl->...ij", E, gv, np.conj(E))
        block = np.stack(
            [np.stack([np.broadcast_to(c.value, E.shape[:-2]) for c in row], axis=-1)
             for row in self.g_frame],
            axis=-2,
        )
        scale = np.maximum(np.max(np.abs(block)), 1.0)
        return float(np.max(np.abs(changed - block)) / scale)


def ambient_metric(point: AmbientPoint, frame: FrameData | None) -> MetricData:
    """Kahler metric of the log potential; ``frame=None`` skips the block form.

    The frame block only exists where the boundary frame does (d rho != 0),
    while the coordinate metric is defined on the whole interior, including
    critical points of rho such as the ball center.
    """
    rho = point.rho_jet
    m = rho.n_vars
    if np.any(rho.value.real >= 0):
        raise NotInterior("ambient metric needs rho < 0 at every base point")
    log_neg = jet_compose(-rho, None, "log")
    potential = -log_neg  # log(-1/rho)
    g = [[potential.derivative(i).derivative(m + j) for j in range(m)] for i in range(m)]

    if frame is None:
        return MetricData(g=g, g_frame=None, frame=None)

    inv_eps = 1.0 / (-rho)
    q = (1.0 - frame.r * rho.truncated(frame.r.order)) * inv_eps * inv_eps
    zero = Jet.constant(np.zeros(np.shape(rho.value)), m, q.order, rho.base_point)
    g_frame = [[zero for _ in range(m)] for _ in range(m)]
    g_frame[0][0] = q
    for a in range(1, m):
        for b in range(1, m):
            g_frame[a][b] = frame.h[a - 1][b - 1] * inv_eps
    return MetricData(g=g, g_frame=g_frame, frame=frame)


@dataclass
class ConnectionBundle:
    """Renormalized connection, curvature, and the auxiliary forms."""

    frame: FrameData
    theta_coord: list  # pole-free coordinate-frame connection matrix
    theta_conn: list  # frame connection theta_i^j
    Theta: list  # curvature of theta_conn
    u: list  # the two auxiliary one-forms (length m)
    Wc: list  # Theta_i^j - u_i wedge theta^j
    A: np.ndarray  # torsion values used in u, shape (..., n, n)
    psi: list | None = None  # Chern connection of g in the frame (interior)
    Y: list | None = None  # singular matrix in the frame (interior)
    Kc: list | None = None  # metric bilinear term (interior)
    W_chern: list | None = None  # Psi + Kc route to Wc (interior)

    def trace_identity_residual(self) -> float:
        m = self.frame.m
        diff = None
        for i in range(m):
            term = self.Theta[i][i] - self.Wc[i][i]
            diff = term if diff is None else diff + term
        return diff.at_value().max_abs()

    def u_trace_residual(self) -> float:
        acc = None
        for i in range(self.frame.m):
            term = self.u[i].wedge(self.frame.coframe[i])
            acc = term if acc is None else acc + term
        return acc.at_value().max_abs()

    def defth_residual(self) -> float:
        if self.psi is None:
            raise NotInterior("Chern-route forms were not built (boundary point)")
        worst = 0.0
        m = self.frame.m
        for i in range(m):
            for j in range(m):
                diff = self.theta_conn[i][j] - (self.psi[i][j] - self.Y[i][j])
                worst = max(worst, diff.at_value().max_abs())
        return worst

    def defW_residual(self) -> float:
        if self.W_chern is None:
            raise NotInterior("Chern-route forms were not built (boundary point)")
        worst = 0.0
        m = self.frame.m
        for i in range(m):
            for j in range(m):
                diff = self.Wc[i][j] - self.W_chern[i][j]
                worst = max(worst, diff.at_value().max_abs())
        return worst


def _extract_torsion(theta_conn, frame: FrameData) -> np.ndarray:
    """A_{alpha gamma} from the conjugate-coframe coefficient of theta_0^alpha."""
    n = frame.n
    rows = []
    for alpha in range(n):
        row = []
        for gamma in range(n):
            wbar = antihol_vector(field_values(frame.W[1 + gamma]))
            val = theta_conn[0][1 + alpha].pair([wbar])
            row.append(np.conj(1j * val))
        rows.append(row)
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def renormalized_connection(
    point: AmbientPoint, frame: FrameData, metric: MetricData | None = None
) -> ConnectionBundle:
    """Assemble the renormalized connection and curvature in the adapted frame.

    Passing the ambient ``metric`` additionally builds the Chern connection
    psi, the singular matrix Y, and the metric term Kc, which exist only at
    strictly interior points; the pole-free parts evaluate on the boundary
    itself.
    """
    rho = point.rho_jet
    m = rho.n_vars
    n = m - 1
    xi, r = frame.xi, frame.r

    grad = [rho.derivative(i) for i in range(m)]
    hess = [[grad[i].derivative(m + j) for j in range(m)] for i in range(m)]
    third = [[[hess[i][k].derivative(l) for l in range(m)] for k in range(m)]
             for i in range(m)]
    hol2 = [[grad[i].derivative(l) for l in range(m)] for i in range(m)]

    hess_inv = jet_matrix_inverse(hess)
    s = 1.0 / (1.0 - r * rho.truncated(r.order))
    inv_r = 1.0 / r
    xibar = [c.conj() for c in xi]
    proj = [[hess_inv[k][j] - xibar[k] * xi[j] * (inv_r * s) for j in range(m)]
            for k in range(m)]

    theta_coord = []
    for i in range(m):
        row = []
        for j in range(m):
            coeffs = {}
            for l in range(m):
                acc = hol2[i][l] * (xi[j] * s)
                for k in range(m):
                    acc = acc + third[i][k][l] * proj[k][j]
                coeffs[(l,)] = acc
            row.append(FormElement(m, 1, coeffs))
        theta_coord.append(row)

    theta_coord_sq = _mat_wedge_square(theta_coord, m)
    Theta_coord = [[theta_coord[i][j].d() - theta_coord_sq[i][j] for j in range(m)]
                   for i in range(m)]

    E = frame.W
    Einv = jet_matrix_inverse(E)
    dE = [[form_from_gradient(E[i][j], "full") for j in range(m)] for i in range(m)]
    theta_conn = _gauge_transform(theta_coord, E, Einv, m)
    for i in range(m):
        for j in range(m):
            acc = theta_conn[i][j]
            for k in range(m):
                acc = acc + dE[i][k] * Einv[k][j]
            theta_conn[i][j] = acc
    Theta = _gauge_transform(Theta_coord, E, Einv, m)

    # auxiliary one-forms from the extracted torsion and the frame derivative
    # of r; these are exactly the forms whose wedge with the coframe relates
    # the two curvature normalizations
    A = _extract_torsion(theta_conn, frame)
    del_rho = frame.coframe[0]
    dr_hol = form_from_gradient(r, "hol")
    r_frame = []  # r differentiated along xi, W_alpha
    for i in range(m):
        acc = None
        for k in range(m):
            term = E[i][k] * r.derivative(k)
            acc = term if acc is None else acc + term
        r_frame.append(acc)
    u = [None] * m
    u[0] = del_rho * (r * r * s) + dr_hol * s
    for beta in range(n):
        term = del_rho * (r_frame[1 + beta] * s)
        for gamma in range(n):
            term = term + frame.coframe[1 + gamma] * ((-1j) * A[..., beta, gamma]) * s
        u[1 + beta] = term

    Wc = [[Theta[i][j] - u[i].wedge(frame.coframe[j]) for j in range(m)]
          for i in range(m)]

    bundle = ConnectionBundle(
        frame=frame,
        theta_coord=theta_coord,
        theta_conn=theta_conn,
        Theta=Theta,
        u=u,
        Wc=Wc,
        A=A,
    )

    if metric is None:
        return bundle
    if np.any(rho.value.real >= 0):
        raise NotInterior("interior checks need rho < 0 at every base point")

    g = metric.g
    g_inv = jet_matrix_inverse(g)
    psi_coord = []
    for i in range(m):
        row = []
        for j in range(m):
            coeffs = {}
            for l in range(m):
                acc = None
                for k in range(m):
                    term = g[i][k].derivative(l) * g_inv[k][j]
                    acc = term if acc is None else acc + term
                coeffs[(l,)] = acc
            row.append(FormElement(m, 1, coeffs))
        psi_coord.append(row)
    psi = _gauge_transform(psi_coord, E, Einv, m)
    for i in range(m):
        for j in range(m):
            acc = psi[i][j]
            for k in range(m):
                acc = acc + dE[i][k] * Einv[k][j]
            psi[i][j] = acc

    inv_eps = 1.0 / (-rho)
    Y = [[FormElement.zero(m, 1) for _ in range(m)] for _ in range(m)]
    Y[0][0] = del_rho * (2.0 * inv_eps)
    for a in range(1, m):
        Y[0][a] = frame.coframe[a] * inv_eps
        Y[a][a] = del_rho * inv_eps

    omega = None
    for k in range(m):
        term = frame.coframe[k].wedge(frame.coframe[k].conj()) * metric.g_frame[k][k]
        omega = term if omega is None else omega + term
    Kc = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            term = frame.coframe[j].wedge(frame.coframe[i].conj()) * metric.g_frame[i][i]
            if i == j:
                term = term + omega
            Kc[i][j] = term

    psi_coord_sq = _mat_wedge_square(psi_coord, m)
    Psi_coord = [[psi_coord[i][j].d() - psi_coord_sq[i][j] for j in range(m)]
                 for i in range(m)]
    Psi = _gauge_transform(Psi_coord, E, Einv, m)
    W_chern = [[Psi[i][j] + Kc[i][j] for j in range(m)] for i in range(m)]

    bundle.psi = psi
    bundle.Y = Y
    bundle.Kc = Kc
    bundle.W_chern = W_chern
    return bundle


@dataclass
class PseudoHermitianData:
    """Boundary tensors in the Levi-orthonormal frame (batched arrays)."""

    A: np.ndarray  # torsion, (..., n, n)
    R: np.ndarray  # curvature, (..., n, n, n, n), slots (a, bbar, c, dbar)
    Ric: np.ndarray  # (..., n, n)
    scal: np.ndarray  # (...,)
    r_boundary: np.ndarray  # (...,)

    @property
    def torsion_norm2(self) -> np.ndarray:
        return np.sum(np.abs(self.A) ** 2, axis=(-2, -1))

    @property
    def curvature_norm2(self) -> np.ndarray:
        return np.sum(np.abs(self.R) ** 2, axis=(-4, -3, -2, -1))


def extract_pseudohermitian(
    point: AmbientPoint, bundle: ConnectionBundle, frame: FrameData
) -> PseudoHermitianData:
    """Torsion and Tanaka-Webster curvature read off at a boundary point."""
    rho = point.rho_jet
    if np.max(np.abs(rho.value.real)) > BOUNDARY_TOL:
        raise NotOnBoundary(
            f"|rho| = {np.max(np.abs(rho.value.real)):.3e} exceeds {BOUNDARY_TOL:.1e}"
        )
    m = frame.m
    n = frame.n

    # intrinsic connection: remove the i r theta trace part
    phi = [[bundle.theta_conn[1 + b][1 + a] for a in range(n)] for b in range(n)]
    for b in range(n):
        phi[b][b] = phi[b][b] - frame.theta * (frame.r * 1j)
    phi_sq = [[None] * n for _ in range(n)]
    for a in range(n):
        for b in range(n):
            acc = None
            for c in range(n):
                term = phi[a][c].wedge(phi[c][b])
                acc = term if acc is None else acc + term
            phi_sq[a][b] = acc
    Omega = [[phi[a][b].d() - phi_sq[a][b] for b in range(n)] for a in range(n)]

    w_hol = [hol_vector(field_values(frame.W[1 + c])) for c in range(n)]
    w_anti = [antihol_vector(field_values(frame.W[1 + c])) for c in range(n)]
    R = np.stack(
        [
            np.stack(
                [
                    np.stack(
                        [
                            np.stack(
                                [Omega[a][b].pair([w_hol[c], w_anti[d]]) for d in range(n)],
                                axis=-1,
                            )
                            for c in range(n)
                        ],
                        axis=-2,
                    )
                    for b in range(n)
                ],
                axis=-3,
            )
            for a in range(n)
        ],
        axis=-4,
    )
    Ric = np.einsum("...aacd->...cd", R)
    scal = np.einsum("...cc->...", Ric).real
    return PseudoHermitianData(
        A=bundle.A, R=R, Ric=Ric, scal=scal, r_boundary=frame.r.value.real
    )


def check_einstein_relations(
    data: PseudoHermitianData, frame: FrameData, sol=None
) -> dict:
    """Residuals of the Einstein-type boundary relations.

    Reports the pseudo-Einstein residual |Ric - (n+1) r h|, the scalar
    relation |r - scal/(n(n+1))|, and, when the torsion vanishes and r is
    constant (ball, tube), the normal derivative of r against its
    characterization -r^2 - |A|^2/n.
    """
    if isinstance(sol, ApproxSolution) and sol.stage < 2:
        raise StageTooLow(
            f"Einstein relations need Fefferman stage >= 2, have {sol.stage}"
        )
    n = frame.n
    eye = np.eye(n)
    pe = np.max(
        np.abs(data.Ric - (n + 1) * data.r_boundary[..., None, None] * eye)
    )
    rM = np.max(np.abs(data.r_boundary - data.scal / (n * (n + 1))))

    N, _ = split_NT(frame.xi)
    acc = None
    for k, comp in enumerate(frame.xi):
        term = comp * frame.r.derivative(k)
        acc = term if acc is None else acc + term
    r_N = acc.value.real
    rn_target = -data.r_boundary**2 - data.torsion_norm2.real / n
    return {
        "pe": float(pe),
        "rM": float(rM),
        "rN": float(np.max(np.abs(r_N - rn_target))),
        "r_N": r_N,
    }


def prop_display_residuals(bundle: ConnectionBundle) -> dict:
    """Coefficientwise residuals of the four collar displays of theta_i^j.

    The displays are rebuilt from independently extracted r, A, h and the
    coframe, then compared with the assembled connection at base values.
    The trace-part display is replaced by the metric-compatibility statement
    for the intrinsic connection (its skew-hermitian part restricted to the
    contact directions), which is what the display encodes once the trace is
    removed.
    """
    frame = bundle.frame
    rho = frame.point.rho_jet
    m, n = frame.m, frame.n
    r, A = frame.r, bundle.A
    s = 1.0 / (1.0 - r * rho.truncated(r.order))
    rho_t = rho.truncated(r.order)
    del_rho = frame.coframe[0]
    dbar_rho = del_rho.conj()
    dr_hol = form_from_gradient(r, "hol")
    E = frame.W
    r_frame = []
    for i in range(m):
        acc = None
        for k in range(m):
            term = E[i][k] * r.derivative(k)
            acc = term if acc is None else acc + term
        r_frame.append(acc)

    out = {}
    # theta_0^0 = -r dbar rho - rho r^2 s del rho - rho s dr^{(1,0)}
    model = (dbar_rho * (-1.0) * r + del_rho * (-1.0) * (rho_t * r * r * s)
             + dr_hol * (-1.0) * (rho_t * s))
    out["theta_0_0"] = (bundle.theta_conn[0][0] - model).at_value().max_abs()

    # theta_0^alpha = r theta^alpha - i A^al_gbar theta^gbar - conj(r_al) dbar rho
    worst = 0.0
    for al in range(n):
        model = frame.coframe[1 + al] * r + dbar_rho * (-1.0) * r_frame[1 + al].conj()
        for ga in range(n):
            model = model + frame.coframe[1 + ga].conj() * (
                -1j * np.conj(A[..., al, ga])
            )
        worst = max(worst, (bundle.theta_conn[0][1 + al] - model).at_value().max_abs())
    out["theta_0_alpha"] = worst

    # theta_beta^0 = -theta^betabar - rho r_beta s del rho + i rho s A theta^gamma
    worst = 0.0
    for be in range(n):
        model = frame.coframe[1 + be].conj() * (-1.0) + del_rho * (
            -1.0
        ) * (rho_t * r_frame[1 + be] * s)
        for ga in range(n):
            model = model + frame.coframe[1 + ga] * (rho_t * s * 1j) * A[..., be, ga]
        worst = max(worst, (bundle.theta_conn[1 + be][0] - model).at_value().max_abs())
    out["theta_beta_0"] = worst

    # intrinsic part: phi + conj(phi)^T vanishes along the level set
    worst = 0.0
    _, T = split_NT(frame.xi)
    tangents = [hol_vector(field_values(frame.W[1 + c])) for c in range(n)]
    tangents += [antihol_vector(field_values(frame.W[1 + c])) for c in range(n)]
    tangents.append(real_vector(field_values(T)))
    for al in range(n):
        for be in range(n):
            form = bundle.theta_conn[1 + al][1 + be]
            if al == be:
                form = form - frame.theta * (r * 1j)
            mirror = bundle.theta_conn[1 + be][1 + al]
            if al == be:
                mirror = mirror - frame.theta * (r * 1j)
            comb = form + mirror.conj()
            for t in tangents:
                worst = max(worst, float(np.max(np.abs(comb.pair([t])))))
    out["metric_compat"] = worst
    return out
