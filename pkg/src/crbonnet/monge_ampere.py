"""Complex Monge-Ampere operator and boundary-flattening defining functions.

For a defining function rho on a domain in C^{n+1} the operator is the
bordered (n+2) x (n+2) determinant in rho and its first and mixed second
derivatives.  A defining function is "flat" when J[rho] = -1 holds to high
order at the boundary; ``fefferman_iterate`` improves a given rho one order
at a time and ``verify_vanishing_order`` measures the achieved order along
inward rays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .domains import polynomial_jet, sample_boundary
from .errors import (
    CollarTooThin,
    InvalidParams,
    NotInterior,
    OrderExceeded,
    OrderStall,
)
from .jets import Jet, jet_compose, jet_determinant, mul_bounded
from .jets import _exp  # shared series kernel; rho~ = e^f rho needs it

# a ray whose residuals all sit below EXACT_FLOOR counts as identically
# flat; individual points below NOISE_FLOOR are too close to rounding (the
# observed floor of the residual evaluation is ~5e-16, and points an order
# of magnitude above it still carry clean slope information) and are
# dropped before fitting.  Both floors assume the stage >= 1 normalization,
# which makes J + 1 an O(1)-scaled quantity.
EXACT_FLOOR = 1e-12
NOISE_FLOOR = 5e-15

# the slope is fitted on the deepest _FIT_POINTS reliable depths only: the
# vanishing order is a deep-collar limit, and near the outer edge of the
# collar the next-order term can dominate and even flip the sign of the
# residual, which says nothing about the order
_FIT_POINTS = 4
_MIN_FIT_POINTS = 3

DEPTH_COUNT = 8
DEPTH_RANGE = (1e-1, 1e-3)

# rescan grid for a stalled stage constant, as multiples of the classical one
_CAL_MULTIPLIERS = (
    Fraction(1, 3), Fraction(1, 2), Fraction(2, 3), Fraction(5, 6),
    Fraction(7, 6), Fraction(4, 3), Fraction(3, 2), Fraction(2), Fraction(3),
)
_CAL_RAYS = 4
_CAL_SEED = 20240401


def default_depths(collar: float = 1.0) -> np.ndarray:
    """Geometric depth schedule for collar probes."""
    return collar * np.geomspace(DEPTH_RANGE[0], DEPTH_RANGE[1], DEPTH_COUNT)


@dataclass
class MAEvaluation:
    """One evaluation of J: the jet of J[rho] and of the residual J[rho] + 1."""

    point: np.ndarray
    J_value: Jet
    residual: Jet


@dataclass
class RayFit:
    """Least-squares slope of log|J+1| against log|rho| along one inward ray."""

    ray_id: int
    slope: float
    fit_residual: float
    exact: bool


def _hermitian_part(j: Jet) -> Jet:
    c = 0.5 * (j.coeffs + np.conj(j.coeffs[..., j.tables.conj_perm]))
    return Jet(c, j.n_vars, j.order, j.base_point)


def bordered_J(rho: Jet) -> Jet:
    """J from a jet of rho with order K >= 2; the result has order K - 2.

    The matrix is [[rho, rho_jbar], [rho_i, rho_{i jbar}]] and the border
    keeps the determinant regular across rho = 0, so this works on the
    boundary itself.
    """
    if rho.order < 2:
        raise OrderExceeded("J needs a jet of rho of order >= 2")
    m = rho.n_vars
    k2 = rho.order - 2
    d1 = [rho.derivative(i) for i in range(m)]
    rows = [[rho.truncated(k2)]
            + [rho.derivative(m + j).truncated(k2) for j in range(m)]]
    for i in range(m):
        rows.append([d1[i].truncated(k2)]
                    + [d1[i].derivative(m + j) for j in range(m)])
    det = jet_determinant(rows)
    if not det.is_real(1e-8):
        raise InvalidParams("J[rho] came out non-real; rho is not a real function")
    return _hermitian_part(det)


def monge_ampere_J(domain, z, order: int = 4) -> MAEvaluation:
    """Evaluate J[rho] at z from any evaluator exposing jet(z, order).

    ``order`` is the jet order requested from the domain; J_value and the
    residual J_value + 1 come back at order - 2.
    """
    z = np.asarray(z, dtype=np.complex128)
    rho = domain.jet(z, order)
    J = bordered_J(rho)
    c = J.coeffs.copy()
    c[..., 0] += 1.0
    return MAEvaluation(point=z, J_value=J, residual=Jet(c, J.n_vars, J.order, z))


def monge_ampere_via_log(domain, z, order: int = 4) -> Jet:
    """Interior-only route: J = -(-rho)^{n+2} det(dd-bar log(1/(-rho))).

    Valid where rho < 0 only; raises NotInterior otherwise.  Kept separate
    from the bordered route on purpose so the two can be compared.
    """
    z = np.asarray(z, dtype=np.complex128)
    rho = domain.jet(z, order)
    if np.any(rho.value.real >= 0.0):
        raise NotInterior("log route needs rho < 0 at every point")
    m = rho.n_vars
    neg = -rho
    L = -jet_compose(neg, None, "log")
    rows = [[L.derivative(i).derivative(m + j) for j in range(m)] for i in range(m)]
    det = jet_determinant(rows)
    pw = jet_compose(neg.truncated(rho.order - 2), None, "pow_rational", exponent=m + 1)
    return _hermitian_part(-(pw * det))


def check_invariance_law(domain, f, z, order: int = 2) -> np.ndarray:
    """Relative defect of J[e^f rho] = e^{(n+2) f} J[rho] for pluriharmonic f.

    f is Re of a holomorphic polynomial, given either as a plain real number
    or as a list of (exponents, coeff) monomials in the holomorphic slots.
    Zero up to rounding for every valid rho; this is the transformation law
    that pins down the boundary normalization.
    """
    z = np.asarray(z, dtype=np.complex128)
    rho = domain.jet(z, order)
    m = rho.n_vars
    if np.isscalar(f) or isinstance(f, (int, float)):
        monos = [((0,) * m, (0,) * m, complex(f))]
    else:
        monos = [(tuple(a), (0,) * m, complex(c)) for a, c in f]
    h = polynomial_jet(monos, z, m, order)
    fjet = 0.5 * (h + h.conj())
    lhs = bordered_J(_exp(fjet) * rho).value.real
    rhs = np.exp((m + 1) * fjet.value.real) * bordered_J(rho).value.real
    return np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-30)


# -- global J for polynomial rho ------------------------------------------
#
# When rho is a polynomial in (z, zbar), so is J[rho]; expanding the bordered
# determinant once in monomial space gives an exact evaluator for J that
# costs no jet orders, which the improvement cascade leans on heavily.

def _poly_diff(p: dict, slot: int) -> dict:
    out: dict = {}
    for k, c in p.items():
        e = k[slot]
        if e:
            kk = k[:slot] + (e - 1,) + k[slot + 1:]
            out[kk] = out.get(kk, 0.0) + c * e
    return out


def _poly_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for kp, cp in p.items():
        for kq, cq in q.items():
            kk = tuple(x + y for x, y in zip(kp, kq))
            out[kk] = out.get(kk, 0.0) + cp * cq
    return out


def _poly_det(rows: list) -> dict:
    if len(rows) == 1:
        return rows[0][0]
    out: dict = {}
    for j, entry in enumerate(rows[0]):
        minor = [r[:j] + r[j + 1:] for r in rows[1:]]
        term = _poly_mul(entry, _poly_det(minor))
        sign = -1.0 if j % 2 else 1.0
        for k, c in term.items():
            out[k] = out.get(k, 0.0) + sign * c
    return out


def global_J_monomials(spec) -> tuple:
    """Monomial table of J[rho] for a polynomial defining function."""
    if spec.monomials is None:
        raise InvalidParams("global J table needs a polynomial defining function")
    m = spec.m
    rho: dict = {}
    for a, b, c in spec.monomials:
        k = tuple(a) + tuple(b)
        rho[k] = rho.get(k, 0.0) + complex(c)
    d1 = [_poly_diff(rho, i) for i in range(m)]
    rows = [[rho] + [_poly_diff(rho, m + j) for j in range(m)]]
    for i in range(m):
        rows.append([d1[i]] + [_poly_diff(d1[i], m + j) for j in range(m)])
    det = _poly_det(rows)
    return tuple((k[:m], k[m:], c) for k, c in sorted(det.items()) if c != 0.0)


# -- staged defining functions ---------------------------------------------

class ApproxSolution:
    """Defining function improved to a given stage, evaluable as jets.

    Stage 1 is the normalization rho * (-J[rho])^{-1/(n+2)}; each later
    stage s+1 multiplies by 1 + (1 + J[rho_s]) / c_s.  The object only
    stores the base spec and the stage constants, and rebuilds jets on
    demand; every stage costs two extra jet orders of the previous one,
    except stage 1 on polynomial specs where J is known globally.
    """

    def __init__(self, spec, stage: int, constants=(), calibrated=None):
        stage = int(stage)
        if stage < 1:
            raise InvalidParams("stage must be >= 1")
        if len(constants) != stage - 1:
            raise InvalidParams(f"stage {stage} needs {stage - 1} constants")
        self.spec = spec
        self.stage = stage
        self.constants = tuple(float(c) for c in constants)
        self.calibrated = dict(calibrated or {})
        self.n = spec.n
        self.m = spec.n + 1
        if spec.monomials is not None:
            self._J_monos = global_J_monomials(spec)
            self._v_deg = max((sum(a) + sum(b) for a, b, _ in self._J_monos), default=0)
            self._rho_deg = max(sum(a) + sum(b) for a, b, _ in spec.monomials)
        else:
            self._J_monos = None
            self._v_deg = None
            self._rho_deg = None

    def __repr__(self):
        return (f"ApproxSolution(kind={self.spec.kind!r}, n={self.n}, "
                f"stage={self.stage}, constants={self.constants})")

    @property
    def target_order(self) -> int:
        return self.stage

    @property
    def rho_s(self):
        """The composite evaluator itself."""
        return self

    # evaluator interface, interchangeable with DomainSpec ----------------

    def jet(self, z, order: int) -> Jet:
        z = np.asarray(z, dtype=np.complex128)
        return self._stage_jet(z, order, self.stage)

    def evaluate(self, z) -> np.ndarray:
        return self.jet(z, 0).value.real

    def gradient(self, z) -> np.ndarray:
        j = self.jet(z, 1)
        return j.coeffs[..., 1:1 + self.m]

    # cascade --------------------------------------------------------------

    def _stage_jet(self, z, order: int, s: int) -> Jet:
        if s == 0:
            return self.spec.jet(z, order)
        if s == 1:
            if self._J_monos is not None:
                rho = self.spec.jet(z, order)
                v = -polynomial_jet(self._J_monos, z, self.m, order)
                w = jet_compose(v, None, "pow_rational",
                                exponent=Fraction(-1, self.m + 1),
                                arg_degree=self._v_deg)
                return mul_bounded(rho, w, f_degree=self._rho_deg)
            rho = self.spec.jet(z, order + 2)
            w = jet_compose(-bordered_J(rho), None, "pow_rational",
                            exponent=Fraction(-1, self.m + 1))
            return rho.truncated(order) * w
        prev = self._stage_jet(z, order + 2, s - 1)
        J = bordered_J(prev)
        c = self.constants[s - 2]
        fac = J.coeffs / c
        fac[..., 0] += 1.0 + 1.0 / c
        return prev.truncated(order) * Jet(fac, self.m, order, prev.base_point)

    def correction_factor(self, z, s: int, order: int = 0) -> Jet:
        """The stage-s multiplier as a jet (s = 1 is the normalization)."""
        if not 1 <= s <= self.stage:
            raise InvalidParams(f"stage {s} not in [1, {self.stage}]")
        z = np.asarray(z, dtype=np.complex128)
        if s == 1:
            if self._J_monos is not None:
                v = -polynomial_jet(self._J_monos, z, self.m, order)
                return jet_compose(v, None, "pow_rational",
                                   exponent=Fraction(-1, self.m + 1),
                                   arg_degree=self._v_deg)
            v = -bordered_J(self.spec.jet(z, order + 2))
            return jet_compose(v, None, "pow_rational",
                               exponent=Fraction(-1, self.m + 1))
        J = bordered_J(self._stage_jet(z, order + 2, s - 1))
        c = self.constants[s - 2]
        fac = J.coeffs / c
        fac[..., 0] += 1.0 + 1.0 / c
        return Jet(fac, self.m, order, z)


def _collar_residuals(sol, rays, depths, collar, seed):
    """|rho_s| and |J[rho_s] + 1| on the (ray, depth) probe grid."""
    spec = getattr(sol, "spec", sol)
    if depths is None:
        depths = default_depths(collar)
    depths = np.asarray(depths, dtype=float)
    pts = sample_boundary(spec, rays, seed=seed)
    gdir = 2.0 * np.conj(spec.gradient(pts))
    gdir /= np.linalg.norm(gdir, axis=-1, keepdims=True)
    P = pts[:, None, :] - depths[None, :, None] * gdir[:, None, :]
    vals = sol.evaluate(P)
    if np.any(vals >= 0.0):
        bad = int(np.argwhere(np.any(vals >= 0.0, axis=1))[0, 0])
        raise CollarTooThin(f"depth schedule leaves the domain on ray {bad}")
    R = np.abs(monge_ampere_J(sol, P, order=2).residual.value.real)
    return -vals, R


def _fit_tail(xx, rr):
    """(slope, rms, exact) from the deepest reliable points of one curve."""
    keep = rr > NOISE_FLOOR
    if float(rr.max()) <= EXACT_FLOOR or int(keep.sum()) < _MIN_FIT_POINTS:
        return math.inf, 0.0, True
    lx, lr = np.log(xx[keep]), np.log(rr[keep])
    order = np.argsort(lx)  # deepest point first, shallowest last
    lx, lr = lx[order][:_FIT_POINTS], lr[order][:_FIT_POINTS]
    slope, icpt = np.polyfit(lx, lr, 1)
    resid = float(np.sqrt(np.mean((slope * lx + icpt - lr) ** 2)))
    return float(slope), resid, False


def verify_vanishing_order(sol, rays: int = 8, depths=None, collar: float = 1.0,
                           seed: int = 0) -> list[RayFit]:
    """Fit the vanishing order of J[rho_s] + 1 along inward boundary rays.

    Boundary points are sampled on the underlying domain; each ray marches
    inward along the real gradient direction through the depth schedule.
    Rays whose residual sits at rounding level come back with slope = inf
    and exact = True.  Raises CollarTooThin if a depth leaves the domain.

    A single ray can under-report the order: where the leading residual
    coefficient passes through zero the curve has a sign crossing inside
    the collar and no clean power law.  ``stage_vanishing_order`` is the
    robust per-stage figure; the per-ray fits are for reporting.
    """
    X, R = _collar_residuals(sol, rays, depths, collar, seed)
    fits: list[RayFit] = []
    for r in range(rays):
        slope, resid, exact = _fit_tail(X[r], R[r])
        fits.append(RayFit(r, slope, resid, exact))
    return fits


def stage_vanishing_order(sol, rays: int = 8, depths=None, collar: float = 1.0,
                          seed: int = 0) -> RayFit:
    """Vanishing order of the whole stage: fit the rms residual over rays.

    Aggregating |J + 1| in quadrature across the ray bundle at each depth
    washes out the isolated directions where the leading coefficient
    vanishes, so this is stable where individual rays are not.  Returned
    with ray_id = -1.
    """
    X, R = _collar_residuals(sol, rays, depths, collar, seed)
    xx = np.exp(np.mean(np.log(X), axis=0))
    rr = np.sqrt(np.mean(R * R, axis=0))
    slope, resid, exact = _fit_tail(xx, rr)
    return RayFit(-1, slope, resid, exact)


def _min_slope(sol, seed: int = _CAL_SEED) -> float:
    return stage_vanishing_order(sol, rays=_CAL_RAYS, seed=seed).slope


def fefferman_iterate(spec, target_order: int | None = None,
                      calibrate: bool = True) -> ApproxSolution:
    """Improve rho until J[rho_s] = -1 + O(rho^s), s = target_order <= n+2.

    Stage constants default to the classical c_s = (s+1)(n+2-s).  Every
    stage is checked behaviorally: if the measured slope falls short the
    constant is rescanned over a small rational grid and the best value is
    kept (recorded in .calibrated); if no candidate reaches the expected
    slope the stage raises OrderStall.  Beyond n+2 the obstruction makes
    further stages meaningless, so target_order is capped there.
    """
    n = spec.n
    smax = n + 2 if target_order is None else int(target_order)
    if not 1 <= smax <= n + 2:
        raise InvalidParams(f"target_order must lie in [1, {n + 2}], got {smax}")
    sol = ApproxSolution(spec, 1, ())
    if _min_slope(sol) < 1.0 - 0.2:
        raise OrderStall("normalization failed to flatten J + 1 to first order")
    constants: list[float] = []
    calibrated: dict[int, float] = {}
    for s in range(1, smax):
        classical = float((s + 1) * (n + 2 - s))
        target = (s + 1) - 0.2
        slope = _min_slope(ApproxSolution(spec, s + 1, (*constants, classical)))
        if slope >= target:
            constants.append(classical)
            continue
        if not calibrate:
            raise OrderStall(f"stage {s + 1}: slope {slope:.3f} below {target}")
        best_c, best_slope = classical, slope
        for mult in _CAL_MULTIPLIERS:
            c_try = float(Fraction(int(classical)) * mult)
            trial = _min_slope(ApproxSolution(spec, s + 1, (*constants, c_try)))
            if trial > best_slope:
                best_c, best_slope = c_try, trial
        if best_slope < target:
            raise OrderStall(
                f"stage {s + 1}: best slope {best_slope:.3f} below {target} "
                f"after rescanning c_{s}")
        constants.append(best_c)
        calibrated[s] = best_c
    return ApproxSolution(spec, smax, tuple(constants), calibrated)


def convergence_table(spec, target_order: int | None = None, rays: int = 6,
                      depths=None, seed: int = 0) -> list[dict]:
    """Slope fits for every stage up to target_order, one row per (ray, stage)."""
    sol = fefferman_iterate(spec, target_order)
    rows: list[dict] = []
    for s in range(1, sol.stage + 1):
        sub = ApproxSolution(spec, s, sol.constants[:s - 1], sol.calibrated)
        for fit in verify_vanishing_order(sub, rays=rays, depths=depths, seed=seed):
            rows.append({"ray_id": fit.ray_id, "stage": s,
                         "slope": fit.slope, "fit_residual": fit.fit_residual})
    return rows
