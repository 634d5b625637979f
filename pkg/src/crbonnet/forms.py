"""Exterior algebra on the Wirtinger coframe dz^i, dzbar^i.

A form is stored as a map from sorted axis tuples to coefficients; axis k in
[0, m) is dz^{k+1} and axis m + k its conjugate, mirroring the jet slot
layout.  Coefficients may be plain scalars, numpy arrays (a batch of points),
or :class:`~crbonnet.jets.Jet` values when the form still has derivatives to
give.  Wedge products and the exterior derivative keep whatever coefficient
type they are fed.
"""

from __future__ import annotations

import numpy as np

from .errors import JetOrderExhausted
from .jets import Jet

__all__ = [
    "FormElement",
    "basis_covector",
    "form_from_gradient",
    "hol_vector",
    "antihol_vector",
    "real_vector",
]


def _merge_axes(a: tuple, b: tuple):
    """Concatenate two sorted axis tuples; returns (axes, sign) or None."""
    out = []
    sign = 1
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            return None
        if a[i] < b[j]:
            out.append(a[i])
            i += 1
        else:
            # b[j] jumps over the remaining len(a) - i factors of a
            if (len(a) - i) % 2:
                sign = -sign
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out), sign


def _insert_axis(axes: tuple, s: int):
    """Prepend axis s to a sorted tuple; returns (axes, sign) or None."""
    if s in axes:
        return None
    pos = sum(1 for a in axes if a < s)
    return tuple(sorted(axes + (s,))), (1 if pos % 2 == 0 else -1)


def _value(c):
    return c.value if isinstance(c, Jet) else c


def _conj_coeff(c):
    return c.conj() if isinstance(c, Jet) else np.conj(c)


class FormElement:
    """Differential form of homogeneous degree over C^m.

    Instances behave as immutable values; all operations return new forms.
    Multiplying by a scalar or a Jet scales every coefficient (use
    ``form * jet``, never ``jet * form`` -- the jet would try to coerce the
    form into an array).
    """

    __slots__ = ("m", "degree", "coeffs")

    def __init__(self, m: int, degree: int, coeffs: dict | None = None):
        self.m = m
        self.degree = degree
        self.coeffs = dict(coeffs or {})

    @classmethod
    def zero(cls, m: int, degree: int) -> "FormElement":
        return cls(m, degree, {})

    # -- ring structure -------------------------------------------------

    def __add__(self, other: "FormElement") -> "FormElement":
        if not isinstance(other, FormElement):
            return NotImplemented
        if self.degree != other.degree or self.m != other.m:
            raise ValueError("can only add forms of matching degree and dimension")
        out = dict(self.coeffs)
        for axes, c in other.coeffs.items():
            out[axes] = out[axes] + c if axes in out else c
        return FormElement(self.m, self.degree, out)

    def __neg__(self) -> "FormElement":
        return FormElement(self.m, self.degree, {a: -c for a, c in self.coeffs.items()})

    def __sub__(self, other: "FormElement") -> "FormElement":
        return self + (-other)

    def __mul__(self, scalar) -> "FormElement":
        return FormElement(
            self.m, self.degree, {a: c * scalar for a, c in self.coeffs.items()}
        )

    def __rmul__(self, scalar) -> "FormElement":
        return FormElement(
            self.m, self.degree, {a: scalar * c for a, c in self.coeffs.items()}
        )

    def wedge(self, other: "FormElement") -> "FormElement":
        if self.m != other.m:
            raise ValueError("wedge needs matching dimensions")
        out: dict = {}
        for a1, c1 in self.coeffs.items():
            for a2, c2 in other.coeffs.items():
                merged = _merge_axes(a1, a2)
                if merged is None:
                    continue
                axes, sign = merged
                term = c1 * c2 if sign > 0 else -(c1 * c2)
                out[axes] = out[axes] + term if axes in out else term
        return FormElement(self.m, self.degree + other.degree, out)

    # -- calculus -------------------------------------------------------

    def d(self) -> "FormElement":
        """Exterior derivative; consumes one order from every jet coefficient."""
        out: dict = {}
        for axes, c in self.coeffs.items():
            if not isinstance(c, Jet):
                raise JetOrderExhausted("coefficient is a plain value, not a jet")
            if c.order < 1:
                raise JetOrderExhausted("jet order 0 cannot support another derivative")
            for s in range(2 * self.m):
                ins = _insert_axis(axes, s)
                if ins is None:
                    continue
                new_axes, sign = ins
                term = c.derivative(s)
                if sign < 0:
                    term = -term
                out[new_axes] = out[new_axes] + term if new_axes in out else term
        return FormElement(self.m, self.degree + 1, out)

    def conj(self) -> "FormElement":
        m2 = 2 * self.m
        out: dict = {}
        for axes, c in self.coeffs.items():
            mapped = sorted((a + self.m) % m2 for a in axes)
            # parity of the permutation sorting the mapped axes
            raw = [(a + self.m) % m2 for a in axes]
            sign = 1
            for i in range(len(raw)):
                for j in range(i + 1, len(raw)):
                    if raw[i] > raw[j]:
                        sign = -sign
            term = _conj_coeff(c)
            if sign < 0:
                term = -term
            key = tuple(mapped)
            out[key] = out[key] + term if key in out else term
        return FormElement(self.m, self.degree, out)

    # -- evaluation -----------------------------------------------------

    def at_value(self) -> "FormElement":
        """Drop jet coefficients to their point values."""
        return FormElement(self.m, self.degree, {a: _value(c) for a, c in self.coeffs.items()})

    def pair(self, vectors):
        """Pair against ``degree`` tangent vectors (see ``hol_vector`` et al.)."""
        if len(vectors) != self.degree:
            raise ValueError(f"degree-{self.degree} form needs {self.degree} vectors")
        if not self.coeffs:
            return 0.0 + 0.0j
        comps = [_vector_components(v, self.m) for v in vectors]
        total = None
        d = self.degree
        for axes, c in self.coeffs.items():
            cols = [
                np.stack([comps[a][axes[b]] for b in range(d)], axis=-1)
                for a in range(d)
            ]
            mat = np.stack(cols, axis=-2)
            term = _value(c) * np.linalg.det(mat)
            total = term if total is None else total + term
        return total

    def contract(self, vector) -> "FormElement":
        """Interior product with one tangent vector."""
        comp = _vector_components(vector, self.m)
        out: dict = {}
        for axes, c in self.coeffs.items():
            for b, axis in enumerate(axes):
                rest = axes[:b] + axes[b + 1:]
                term = c * comp[axis]
                if b % 2:
                    term = -term
                out[rest] = out[rest] + term if rest in out else term
        return FormElement(self.m, self.degree - 1, out)

    def max_abs(self) -> float:
        """Largest coefficient magnitude at the point (jets by their value)."""
        best = 0.0
        for c in self.coeffs.values():
            best = max(best, float(np.max(np.abs(_value(c)), initial=0.0)))
        return best

    def __repr__(self):
        return f"FormElement(m={self.m}, degree={self.degree}, terms={len(self.coeffs)})"


def _vector_components(vector, m: int):
    """Flatten a (hol, antihol) pair into 2m slot components."""
    hol, anti = vector
    ref = hol if hol is not None else anti
    zero = np.zeros(np.shape(ref)[:-1], dtype=np.complex128)
    comps = []
    for k in range(m):
        comps.append(zero if hol is None else hol[..., k])
    for k in range(m):
        comps.append(zero if anti is None else anti[..., k])
    return comps


def basis_covector(m: int, slot: int, coeff=1.0) -> FormElement:
    """The 1-form dual to Wirtinger slot ``slot``."""
    return FormElement(m, 1, {(slot,): coeff})


def form_from_gradient(jet: Jet, part: str) -> FormElement:
    """1-form of the holomorphic or antiholomorphic derivative of a jet.

    ``part`` is "hol" for sum_k (d_k f) dz^k and "anti" for the conjugate
    slots; "full" takes both (the exterior derivative of the function).
    """
    m = jet.n_vars
    coeffs = {}
    slots = {"hol": range(m), "anti": range(m, 2 * m), "full": range(2 * m)}[part]
    for s in slots:
        coeffs[(s,)] = jet.derivative(s)
    return FormElement(m, 1, coeffs)


def hol_vector(w) -> tuple:
    """A (1,0) tangent vector with component array w of shape (..., m)."""
    return (np.asarray(w, dtype=np.complex128), None)


def antihol_vector(w) -> tuple:
    """The (0,1) vector conjugate to the (1,0) vector with components w."""
    return (None, np.conj(np.asarray(w, dtype=np.complex128)))


def real_vector(u) -> tuple:
    """The real tangent vector u + conj(u) for a (1,0) component array u."""
    u = np.asarray(u, dtype=np.complex128)
    return (u, np.conj(u))
