"""Defining functions: built-in models and user-supplied Hermitian polynomials.

A domain is {rho < 0} in C^{n+1} for a real defining function rho.  Built-ins
cover the unit ball, its real-ellipsoid deformation, a disc-bundle tube chart,
and the pullback of the ball under a Moebius automorphism.  User domains are
Hermitian polynomials given in a small JSON format.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    InvalidParams,
    NewtonDiverged,
    ParseError,
    PseudoconvexityLost,
    SymmetryConflict,
    WrongDimension,
)
from .jets import Jet, jet_compose, jet_determinant, jet_tables

BUILTIN_KINDS = ("ball", "real_ellipsoid", "tube_disc", "mobius_ball")
_PROBE_COUNT = 24
_PROBE_SEED = 20240917


def polynomial_jet(monomials, z, m: int, order: int) -> Jet:
    """Jet of a polynomial in (z, zbar) at base points z, by binomial recentering.

    monomials is an iterable of (a, b, c): exponents of the m holomorphic slots,
    exponents of the m conjugate slots, complex coefficient.  Exact at every
    order (a polynomial is its own Taylor series).
    """
    z = np.asarray(z, dtype=np.complex128)
    tab = jet_tables(2 * m, order)
    zvals = np.concatenate([z, np.conj(z)], axis=-1)
    coeffs = np.zeros(z.shape[:-1] + (tab.ncoeff,), dtype=np.complex128)
    for a, b, c in monomials:
        e = tuple(a) + tuple(b)
        for k in itertools.product(*(range(x + 1) for x in e)):
            if sum(k) > order:
                continue
            idx = tab.index_of(k)
            fac = complex(c)
            term = None
            for s, (es, ks) in enumerate(zip(e, k)):
                fac *= math.comb(es, ks)
                if es - ks:
                    p = zvals[..., s] ** (es - ks)
                    term = p if term is None else term * p
            if term is None:
                coeffs[..., idx] += fac
            else:
                coeffs[..., idx] += fac * term
    return Jet(coeffs, m, order, base_point=z)


@dataclass(eq=False)
class DomainSpec:
    """Immutable description of one domain; evaluation is pure and batched."""

    n: int
    kind: str
    monomials: tuple | None
    params: dict
    star_center: np.ndarray
    hermitian_completed: bool = False
    _groups: tuple = field(default=None, repr=False)

    @property
    def m(self) -> int:
        """Ambient complex dimension n+1."""
        return self.n + 1

    def __post_init__(self):
        self.star_center = np.asarray(self.star_center, dtype=np.complex128)
        if self.monomials is not None:
            # off-diagonal Hermitian pairs are stored once with weight 2 so
            # evaluation sums real numbers only (Im rho is exactly zero)
            groups, seen = [], set()
            for a, b, c in self.monomials:
                if (a, b) in seen:
                    continue
                if a == b:
                    groups.append((a, b, complex(c).real, 1.0))
                else:
                    groups.append((a, b, complex(c), 2.0))
                    seen.add((b, a))
            self._groups = tuple(groups)

    # -- evaluation -----------------------------------------------------

    def evaluate(self, z) -> np.ndarray:
        """rho(z), exactly real, batched over leading axes of z."""
        z = np.asarray(z, dtype=np.complex128)
        if self.kind == "mobius_ball":
            return self._mobius_value(z)
        zb = np.conj(z)
        out = np.zeros(z.shape[:-1])
        for a, b, c, w in self._groups:
            term = np.ones(z.shape[:-1], dtype=np.complex128)
            for i, e in enumerate(a):
                if e:
                    term = term * z[..., i] ** e
            for i, e in enumerate(b):
                if e:
                    term = term * zb[..., i] ** e
            out += w * (c * term).real
        return out

    def gradient(self, z) -> np.ndarray:
        """Holomorphic first derivatives (rho_1 .. rho_m) at z."""
        j = self.jet(z, 1)
        return j.coeffs[..., 1:1 + self.m]

    def jet(self, z, order: int) -> Jet:
        """Jet of rho at base points z (batched)."""
        z = np.asarray(z, dtype=np.complex128)
        if self.kind == "mobius_ball":
            return self._mobius_jet(z, order)
        return polynomial_jet(self.monomials, z, self.m, order)

    # -- Moebius pullback chain ------------------------------------------

    def _mobius_setup(self):
        a = np.asarray(self.params["a"], dtype=np.complex128)
        a2 = float(np.sum(np.abs(a) ** 2).real)
        s = math.sqrt(1.0 - a2)
        m = self.m
        if a2 == 0.0:
            M = np.eye(m, dtype=np.complex128)
        else:
            P = np.outer(a, np.conj(a)) / a2
            M = P + s * (np.eye(m) - P)
        return a, s, M

    def _mobius_value(self, z):
        a, s, M = self._mobius_setup()
        inner = 1.0 - z @ np.conj(a)
        num = a - z @ M.T
        F = num / inner[..., None]
        rho_f = np.sum((F * np.conj(F)).real, axis=-1) - 1.0
        jac = (num[..., :, None] * np.conj(a)[None, :]
               - M * inner[..., None, None]) / inner[..., None, None] ** 2
        det = np.linalg.det(jac)
        scale = np.power((det * np.conj(det)).real, -1.0 / (self.n + 2))
        return scale * rho_f

    def _mobius_jet(self, z, order):
        a, s, M = self._mobius_setup()
        m = self.m
        Z = [Jet.variable(i, z[..., i], m, order, base_point=z) for i in range(m)]
        inner = Jet.constant(np.ones(z.shape[:-1]), m, order, base_point=z)
        for i in range(m):
            inner = inner - Z[i] * np.conj(a[i])
        den = jet_compose(Jet.constant(1.0, m, order, base_point=z), inner, "div")
        num = []
        for i in range(m):
            ni = Jet.constant(a[i], m, order, base_point=z)
            for j in range(m):
                ni = ni - M[i, j] * Z[j]
            num.append(ni)
        F = [num[i] * den for i in range(m)]
        rho_f = F[0] * F[0].conj() - 1
        for i in range(1, m):
            rho_f = rho_f + F[i] * F[i].conj()
        den2 = den * den
        jac = [[(num[i] * np.conj(a[j]) - M[i, j] * inner) * den2 for j in range(m)]
               for i in range(m)]
        det = jet_determinant(jac)
        det2 = det * det.conj()
        scale = jet_compose(det2, None, "pow_rational", exponent=Fraction(-1, self.n + 2))
        out = scale * rho_f
        out.base_point = z
        return out

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        doc = {"n": self.n, "kind": self.kind}
        if self.monomials is not None:
            doc["monomials"] = [
                {"a": list(a), "b": list(b), "re": complex(c).real, "im": complex(c).imag}
                for a, b, c in self.monomials
            ]
        params = {}
        for key, val in self.params.items():
            arr = np.asarray(val)
            if arr.ndim == 0:
                params[key] = float(arr.real) if arr.imag == 0 else [float(arr.real), float(arr.imag)]
            else:
                params[key] = [[float(v.real), float(v.imag)] for v in arr]
        doc["params"] = params
        doc["star_center"] = [[float(v.real), float(v.imag)] for v in self.star_center]
        return doc


@dataclass
class AmbientPoint:
    """A point of C^{n+1} carrying the jet of rho there."""

    z: np.ndarray
    rho_jet: Jet


def ambient_point(spec: DomainSpec, z, order: int = 4) -> AmbientPoint:
    z = np.asarray(z, dtype=np.complex128)
    return AmbientPoint(z=z, rho_jet=spec.jet(z, order))


# -------------------------------------------------------------- constructors


def _hermitian_pair(a, b, c):
    """The monomial and its conjugate partner (deduplicated for a == b)."""
    if a == b:
        return [(a, b, complex(c).real + 0j)]
    return [(a, b, complex(c)), (b, a, np.conj(complex(c)))]


def _sorted_monomials(monos):
    return tuple(sorted(monos, key=lambda t: (sum(t[0]) + sum(t[1]), t[0], t[1])))


def make_builtin(kind: str, n: int, params: dict | None = None) -> DomainSpec:
    """Construct one of the built-in defining functions and validate it."""
    if n not in (1, 2):
        raise WrongDimension(f"CR dimension must be 1 or 2, got {n}")
    params = dict(params or {})
    m = n + 1
    zero = tuple([0] * m)

    def unit(i):
        e = [0] * m
        e[i] = 1
        return tuple(e)

    if kind == "ball":
        monos = [(zero, zero, -1.0 + 0j)]
        for i in range(m):
            monos += _hermitian_pair(unit(i), unit(i), 1.0)
        spec = DomainSpec(n, kind, _sorted_monomials(monos), {}, np.zeros(m))
    elif kind == "real_ellipsoid":
        t = float(params.get("t", 0.0))
        if abs(t) >= 1.0:
            raise InvalidParams("ellipsoid deformation needs |t| < 1 (domain degenerates)")
        monos = [(zero, zero, -1.0 + 0j)]
        for i in range(m):
            monos += _hermitian_pair(unit(i), unit(i), 1.0)
        if t != 0.0:
            two = [0] * m
            two[0] = 2
            monos += _hermitian_pair(tuple(two), zero, t / 2.0)
        spec = DomainSpec(n, kind, _sorted_monomials(monos), {"t": t}, np.zeros(m))
    elif kind == "tube_disc":
        if n != 1:
            raise InvalidParams("tube_disc is a CR dimension 1 model")
        # rho = 1 - (1-|w|^2)|zeta|^2 with (w, zeta) = (z^1, z^2); the domain
        # {rho<0} is the outside of the tube, anchored at (0, 2)
        monos = [((0, 0), (0, 0), 1.0 + 0j)]
        monos += _hermitian_pair((0, 1), (0, 1), -1.0)
        monos += _hermitian_pair((1, 1), (1, 1), 1.0)
        spec = DomainSpec(n, kind, _sorted_monomials(monos), {}, np.array([0.0, 2.0]))
    elif kind == "mobius_ball":
        a = np.asarray(params.get("a", np.zeros(m)), dtype=np.complex128).reshape(-1)
        if a.size != m:
            raise InvalidParams(f"mobius center needs {m} components, got {a.size}")
        if np.sum(np.abs(a) ** 2) >= 1.0:
            raise InvalidParams("mobius center must satisfy |a| < 1")
        spec = DomainSpec(n, kind, None, {"a": a}, np.zeros(m))
    else:
        raise InvalidParams(f"unknown builtin kind {kind!r}")

    _validate_domain(spec)
    return spec


def mobius_pullback(a, n: int | None = None) -> DomainSpec:
    """Ball defining function pulled back by the automorphism sending a to 0."""
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    if n is None:
        n = a.size - 1
    return make_builtin("mobius_ball", n, {"a": a})


# -------------------------------------------------------------- parsing


def _parse_complex_vector(raw, what):
    try:
        return np.array([complex(re, im) for re, im in raw], dtype=np.complex128)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what} must be a list of [re, im] pairs: {exc}")


def parse_domain_spec(text: str) -> DomainSpec:
    """Parse and validate the JSON domain format (see README for the grammar)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", position=exc.pos)
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    try:
        n = int(doc["n"])
        kind = str(doc["kind"])
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}")
    if n not in (1, 2):
        raise WrongDimension(f"CR dimension must be 1 or 2, got {n}")

    if kind in BUILTIN_KINDS:
        params = doc.get("params", {})
        if kind == "mobius_ball" and "a" in params:
            params = dict(params)
            params["a"] = _parse_complex_vector(params["a"], "params.a")
        spec = make_builtin(kind, n, params)
        if "star_center" in doc:
            spec.star_center = _parse_complex_vector(doc["star_center"], "star_center")
            _validate_domain(spec)
        return spec
    if kind != "polynomial":
        raise ParseError(f"unknown kind {kind!r}")

    m = n + 1
    if "star_center" not in doc:
        raise ParseError("polynomial domains must declare star_center")
    center = _parse_complex_vector(doc["star_center"], "star_center")
    if center.size != m:
        raise ParseError(f"star_center needs {m} components")

    table = {}
    for pos, rec in enumerate(doc.get("monomials", [])):
        try:
            a = tuple(int(x) for x in rec["a"])
            b = tuple(int(x) for x in rec["b"])
            c = complex(float(rec.get("re", 0.0)), float(rec.get("im", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad monomial record: {exc}", position=pos)
        if len(a) != m or len(b) != m or min(a + b) < 0:
            raise ParseError(
                f"exponent lists need {m} non-negative entries", position=pos
            )
        table[(a, b)] = table.get((a, b), 0.0) + c

    completed = False
    for (a, b), c in list(table.items()):
        mirror = table.get((b, a))
        if a == b:
            if abs(c.imag) > 1e-12 * max(1.0, abs(c)):
                raise SymmetryConflict(f"diagonal monomial {a} has complex coefficient {c}")
            table[(a, b)] = complex(c.real)
        elif mirror is None:
            table[(b, a)] = np.conj(c)
            completed = True
        elif abs(mirror - np.conj(c)) > 1e-12 * max(1.0, abs(c)):
            raise SymmetryConflict(
                f"monomials {(a, b)} and {(b, a)} have non-conjugate coefficients"
            )

    monos = _sorted_monomials([(a, b, c) for (a, b), c in table.items()])
    spec = DomainSpec(n, "polynomial", monos, dict(doc.get("params", {})), center,
                      hermitian_completed=completed)
    _validate_domain(spec)
    return spec


# -------------------------------------------------------------- probing


def ray_to_boundary(spec: DomainSpec, center, dirs, tol: float = 1e-13,
                    max_iter: int = 50, t_init=None) -> np.ndarray:
    """Radii t > 0 with rho(center + t * dir) = 0, one per direction.

    Safeguarded Newton: keeps a sign-change bracket and bisects whenever the
    Newton step leaves it or stalls.
    """
    center = np.asarray(center, dtype=np.complex128)
    dirs = np.asarray(dirs, dtype=np.complex128)
    nray = dirs.shape[0]

    def val(t):
        return spec.evaluate(center + t[:, None] * dirs)

    lo = np.zeros(nray)
    flo = val(lo)
    if np.any(flo >= 0):
        raise NewtonDiverged("ray center is not interior")
    hi = np.ones(nray) if t_init is None else np.array(t_init, dtype=float)
    fhi = val(hi)
    for _ in range(60):
        bad = fhi < 0
        if not np.any(bad):
            break
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, hi * 2.0, hi)
        if np.max(hi) > 1e9:
            raise NewtonDiverged("no boundary crossing along probe ray")
        fhi = val(hi)

    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        pts = center + t[:, None] * dirs
        f = spec.evaluate(pts)
        lo = np.where(f < 0, t, lo)
        hi = np.where(f > 0, t, hi)
        if np.max(np.abs(f)) <= tol:
            return t
        g = spec.gradient(pts)
        df = 2.0 * np.sum(g * dirs, axis=-1).real
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(np.abs(df) > 1e-30, f / df, np.inf)
        tn = t - step
        inside = (tn > lo) & (tn < hi) & np.isfinite(tn)
        t = np.where(inside, tn, 0.5 * (lo + hi))
    f = spec.evaluate(center + t[:, None] * dirs)
    if np.max(np.abs(f)) > tol:
        raise NewtonDiverged(
            f"boundary Newton stalled at residual {np.max(np.abs(f)):.3e}"
        )
    return t


def sample_boundary(spec: DomainSpec, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic boundary sample; ray search from the star center."""
    rng = np.random.default_rng(seed)
    m = spec.m
    if spec.kind == "tube_disc":
        # parametric: (1-|w|^2)|zeta|^2 = 1 exactly, so |rho| is at rounding
        # level already; one fiber-radius Newton step absorbs the last ulp
        w = 0.75 * np.sqrt(rng.random(count)) * np.exp(2j * np.pi * rng.random(count))
        phase = np.exp(2j * np.pi * rng.random(count))
        zeta = phase / np.sqrt(1.0 - np.abs(w) ** 2)
        pts = np.stack([w, zeta], axis=-1)
        f = spec.evaluate(pts)
        c = (1.0 - np.abs(w) ** 2) * np.abs(zeta) ** 2
        pts[:, 1] *= 1.0 + f / (2.0 * c)  # rho = 1 - c t^2, Newton at t = 1
        return pts
    dirs = rng.normal(size=(count, m)) + 1j * rng.normal(size=(count, m))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    t = ray_to_boundary(spec, spec.star_center, dirs)
    return spec.star_center + t[:, None] * dirs


def sample_interior(spec: DomainSpec, count: int, seed: int = 0,
                    depth=(0.05, 0.5)) -> np.ndarray:
    """Points with rho < 0, pulled inward from a boundary sample."""
    rng = np.random.default_rng(seed)
    pts = sample_boundary(spec, count, seed=seed + 1)
    s = depth[0] + (depth[1] - depth[0]) * rng.random(count)
    if spec.kind == "tube_disc":
        # the domain is the outside of the tube: push the fiber radius up
        out = pts.copy()
        out[:, 1] *= (1.0 + s)
        return out
    return spec.star_center + (1.0 - s)[:, None] * (pts - spec.star_center)


def levi_smallest_eigenvalue(spec: DomainSpec, pts) -> np.ndarray:
    """Smallest eigenvalue of the Levi form on the complex tangent space."""
    pts = np.asarray(pts, dtype=np.complex128)
    m = spec.m
    jets = spec.jet(pts, 2)
    tab = jets.tables
    grad = jets.coeffs[..., 1:1 + m]
    hess = np.empty(pts.shape[:-1] + (m, m), dtype=np.complex128)
    for i in range(m):
        for j in range(m):
            e = [0] * (2 * m)
            e[i] += 1
            e[m + j] += 1
            hess[..., i, j] = jets.coeffs[..., tab.index_of(tuple(e))]
    out = np.empty(pts.shape[:-1])
    flat_g = grad.reshape(-1, m)
    flat_h = hess.reshape(-1, m, m)
    flat_o = out.reshape(-1)
    for k in range(flat_g.shape[0]):
        _, _, vh = np.linalg.svd(flat_g[k].reshape(1, m))
        basis = vh.conj().T[:, 1:]
        # the form is sum_ij rho_{i jbar} u^i conj(u^j): restrict as B^T H B-bar
        levi = basis.T @ flat_h[k] @ basis.conj()
        flat_o[k] = np.min(np.linalg.eigvalsh(levi))
    return out


def _validate_domain(spec: DomainSpec):
    if spec.evaluate(spec.star_center) >= 0:
        raise InvalidParams("star center is not an interior point")
    pts = sample_boundary(spec, _PROBE_COUNT, seed=_PROBE_SEED)
    grad = spec.gradient(pts)
    if np.min(np.linalg.norm(grad, axis=-1)) < 1e-10:
        raise PseudoconvexityLost("d rho vanishes at a probed boundary point")
    lam = levi_smallest_eigenvalue(spec, pts)
    if np.min(lam) <= 0:
        raise PseudoconvexityLost(
            f"Levi form not positive definite (min eigenvalue {np.min(lam):.3e})"
        )
