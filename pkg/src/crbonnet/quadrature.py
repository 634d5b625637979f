"""Boundary charts and deterministic quadrature on S^{2n+1}-like boundaries.

The boundary of a star-shaped domain is parametrized radially over a fixed
Hopf-style product grid on the unit sphere: trapezoidal nodes in the
periodic phase angles (spectrally accurate for analytic periodic
integrands) and Gauss-Legendre nodes in the latitudes.  Differential forms
are integrated by pairing against the ordered real tangent frame of each
node, so the chart Jacobian never appears explicitly; scalar weights carry
the reference surface measure of the unit-sphere template only.

Sums are chunked and Kahan-compensated in a fixed order, which makes the
totals bitwise reproducible for any worker count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .domains import DomainSpec, ray_to_boundary
from .errors import InvalidParams, NewtonDiverged
from .forms import FormElement, real_vector

BOUNDARY_RESIDUAL = 1e-12

# nodes per evaluation batch; fixed per CR dimension so that reduction
# order (and therefore every rounding) is independent of the worker count
CHUNK_BY_N = {1: 16384, 2: 2048}


def _phase_count(n: int, resolution: int) -> int:
    if resolution < 8:
        raise InvalidParams(f"resolution must be >= 8, got {resolution}")
    return resolution if n == 1 else (resolution + 1) // 2


def _latitude_count(phases: int) -> int:
    # Gauss-Legendre on the latitude densities reaches 1e-15 by 8 nodes;
    # below that the reference volumes miss their 1e-12 contract
    return max((phases + 1) // 2, 8)


@dataclass
class QuadratureChart:
    """Grid on a (2n+1)-dimensional boundary with per-node tangent frames.

    ``weights`` includes the unit-sphere surface density (so they total
    vol(S^{2n+1}) on the template); ``angle_weights`` is the bare product
    measure of the grid angles, which is what form integration uses.
    """

    n: int
    nodes: np.ndarray  # (N, n+1) complex boundary points
    angle_weights: np.ndarray  # (N,)
    weights: np.ndarray  # (N,) angle_weights times template density
    tangents: np.ndarray  # (N, 2n+1, n+1) complex, ordered frame
    normals: np.ndarray  # (N, n+1) complex outward normal direction
    directions: np.ndarray  # (N, n+1) unit-sphere template nodes
    radii: np.ndarray  # (N,)
    center: np.ndarray  # (n+1,)
    spec: DomainSpec | None = None
    orientation: int = 1  # +1 once the outward-normal-first check passed

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    def chunk_size(self) -> int:
        return CHUNK_BY_N[self.n]


def _real_embed(vectors: np.ndarray) -> np.ndarray:
    """Complex (..., k, m) frames to real (..., k, 2m), coords (x1,y1,...)."""
    out = np.empty(vectors.shape[:-1] + (2 * vectors.shape[-1],))
    out[..., 0::2] = vectors.real
    out[..., 1::2] = vectors.imag
    return out


def _orientation_dets(normals, tangents) -> np.ndarray:
    rows = np.concatenate([normals[:, None, :], tangents], axis=1)
    return np.linalg.det(_real_embed(rows))


def sphere_grid(n: int, resolution: int) -> QuadratureChart:
    """Unit-sphere template chart on S^{2n+1} in C^{n+1}."""
    if n not in (1, 2):
        raise InvalidParams(f"CR dimension must be 1 or 2, got {n}")
    phases = _phase_count(n, resolution)
    lats = _latitude_count(phases)

    phi = 2.0 * np.pi * np.arange(phases) / phases
    wphi = 2.0 * np.pi / phases
    x_gl, w_gl = np.polynomial.legendre.leggauss(lats)
    eta = 0.25 * np.pi * (x_gl + 1.0)
    weta = 0.25 * np.pi * w_gl

    if n == 1:
        e, p1, p2 = np.meshgrid(eta, phi, phi, indexing="ij")
        we = np.meshgrid(weta, np.full(phases, wphi), np.full(phases, wphi),
                         indexing="ij")
        angle_w = (we[0] * we[1] * we[2]).reshape(-1)
        e, p1, p2 = e.reshape(-1), p1.reshape(-1), p2.reshape(-1)
        c, s = np.cos(e), np.sin(e)
        f1, f2 = np.exp(1j * p1), np.exp(1j * p2)
        nodes = np.stack([c * f1, s * f2], axis=-1)
        t_eta = np.stack([-s * f1, c * f2], axis=-1)
        t_p1 = np.stack([1j * c * f1, np.zeros_like(f1)], axis=-1)
        t_p2 = np.stack([np.zeros_like(f2), 1j * s * f2], axis=-1)
        tangents = np.stack([t_eta, t_p1, t_p2], axis=1)
        density = c * s
    else:
        e1, e2, p1, p2, p3 = np.meshgrid(eta, eta, phi, phi, phi, indexing="ij")
        we = np.meshgrid(weta, weta, np.full(phases, wphi),
                         np.full(phases, wphi), np.full(phases, wphi),
                         indexing="ij")
        angle_w = (we[0] * we[1] * we[2] * we[3] * we[4]).reshape(-1)
        e1, e2 = e1.reshape(-1), e2.reshape(-1)
        p1, p2, p3 = p1.reshape(-1), p2.reshape(-1), p3.reshape(-1)
        c1, s1, c2, s2 = np.cos(e1), np.sin(e1), np.cos(e2), np.sin(e2)
        f = [np.exp(1j * p1), np.exp(1j * p2), np.exp(1j * p3)]
        mu = [c1, s1 * c2, s1 * s2]
        dmu1 = [-s1, c1 * c2, c1 * s2]
        dmu2 = [np.zeros_like(c1), -s1 * s2, s1 * c2]
        nodes = np.stack([mu[j] * f[j] for j in range(3)], axis=-1)
        t_e1 = np.stack([dmu1[j] * f[j] for j in range(3)], axis=-1)
        t_e2 = np.stack([dmu2[j] * f[j] for j in range(3)], axis=-1)
        zero = np.zeros_like(f[0])
        t_p = [np.stack([1j * mu[j] * f[j] if j == k else zero
                         for j in range(3)], axis=-1) for k in range(3)]
        tangents = np.stack([t_e1, t_e2] + t_p, axis=1)
        density = c1 * s1 ** 3 * c2 * s2

    dets = _orientation_dets(nodes, tangents)
    if np.all(dets < 0):
        tangents = tangents[:, [1, 0] + list(range(2, tangents.shape[1])), :]
        dets = -dets
    if not np.all(dets > 0):
        raise InvalidParams("template orientation is not uniform over nodes")

    m = n + 1
    return QuadratureChart(
        n=n,
        nodes=nodes,
        angle_weights=angle_w,
        weights=angle_w * density,
        tangents=tangents,
        normals=nodes.copy(),
        directions=nodes.copy(),
        radii=np.ones(nodes.shape[0]),
        center=np.zeros(m, dtype=np.complex128),
    )


def boundary_chart(spec: DomainSpec, grid: QuadratureChart) -> QuadratureChart:
    """Pull the unit-sphere template onto the boundary of a star-shaped domain.

    Radii solve rho(center + R omega) = 0 per node; tangent frames follow
    from the implicit derivative of R along each template tangent.
    """
    center = spec.star_center
    omega = grid.directions
    radii = ray_to_boundary(spec, center, omega)
    nodes = center + radii[:, None] * omega
    residual = np.max(np.abs(spec.evaluate(nodes)))
    if residual > BOUNDARY_RESIDUAL:
        raise NewtonDiverged(f"chart node residual {residual:.3e}")

    grad = spec.gradient(nodes)
    # d rho(v) = 2 Re <grad, v> for a real tangent direction v
    denom = np.sum(grad * omega, axis=-1).real
    rdot = -radii[:, None] * np.sum(
        grad[:, None, :] * grid.tangents, axis=-1).real / denom[:, None]
    tangents = rdot[..., None] * omega[:, None, :] \
        + radii[:, None, None] * grid.tangents

    normals = np.conj(grad)
    dets = _orientation_dets(normals, tangents)
    if not np.all(dets > 0):
        raise InvalidParams("boundary chart orientation flipped at a node")

    return QuadratureChart(
        n=grid.n,
        nodes=nodes,
        angle_weights=grid.angle_weights,
        weights=grid.weights,
        tangents=tangents,
        normals=normals,
        directions=omega,
        radii=radii,
        center=center,
        spec=spec,
    )


def _kahan(values: np.ndarray) -> complex:
    total = 0.0 + 0.0j
    comp = 0.0 + 0.0j
    for v in values:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def _chunk_ranges(count: int, chunk: int):
    return [(lo, min(lo + chunk, count)) for lo in range(0, count, chunk)]


_POOL_CHART = None
_POOL_CALLBACK = None


def _chunk_value(bounds) -> complex:
    lo, hi = bounds
    chart, form_at_node = _POOL_CHART, _POOL_CALLBACK
    form = form_at_node(chart.nodes[lo:hi])
    if form.degree != 2 * chart.n + 1:
        raise InvalidParams(
            f"form degree {form.degree}, expected {2 * chart.n + 1}")
    frame = [real_vector(chart.tangents[lo:hi, a, :])
             for a in range(chart.tangents.shape[1])]
    vals = form.pair(frame)
    return _kahan(np.asarray(vals).ravel() * chart.angle_weights[lo:hi])


def integrate_form(chart: QuadratureChart, form_at_node, workers: int = 1,
                   chunk: int | None = None) -> complex:
    """Integrate a (2n+1)-form given by a batched node callback.

    The callback receives a block of boundary points (shape (k, n+1)) and
    returns a FormElement whose coefficients are batched over the block.
    The reduction is a fixed-order Kahan fold over fixed-size chunks, so
    results are bitwise identical for every ``workers`` value.
    """
    global _POOL_CHART, _POOL_CALLBACK
    if chunk is None:
        chunk = chart.chunk_size()
    ranges = _chunk_ranges(chart.node_count, chunk)
    _POOL_CHART, _POOL_CALLBACK = chart, form_at_node
    try:
        if workers > 1 and len(ranges) > 1 and hasattr(os, "fork"):
            import multiprocessing

            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(processes=workers) as pool:
                partials = pool.map(_chunk_value, ranges)
        else:
            partials = [_chunk_value(r) for r in ranges]
    finally:
        _POOL_CHART = _POOL_CALLBACK = None
    return _kahan(np.asarray(partials, dtype=np.complex128))


def residue_sphere(center, eps: float, form_at_node, n: int | None = None,
                   resolution: int = 16, workers: int = 1) -> complex:
    """Integrate a form over the Euclidean eps-sphere about an interior point.

    Orientation matches the boundary charts: outward normal first.
    """
    center = np.asarray(center, dtype=np.complex128)
    if n is None:
        n = center.shape[-1] - 1
    grid = sphere_grid(n, resolution)
    chart = QuadratureChart(
        n=n,
        nodes=center + eps * grid.directions,
        angle_weights=grid.angle_weights,
        weights=grid.weights,
        tangents=eps * grid.tangents,
        normals=grid.directions.copy(),
        directions=grid.directions,
        radii=np.full(grid.node_count, eps),
        center=center,
    )
    return integrate_form(chart, form_at_node, workers=workers)


def integrate_scalar(chart: QuadratureChart, values) -> float:
    """Weight-sum of scalar node values over the unit-sphere template.

    Uses the density-bearing ``weights`` and the same fixed chunked Kahan
    fold as ``integrate_form``.
    """
    terms = (np.asarray(values) * chart.weights).astype(np.complex128)
    ranges = _chunk_ranges(chart.node_count, chart.chunk_size())
    partials = [_kahan(terms[lo:hi]) for lo, hi in ranges]
    return float(_kahan(np.asarray(partials, dtype=np.complex128)).real)


def template_volume(chart: QuadratureChart) -> float:
    """Kahan total of the unit-template weights (vol S^{2n+1} reference)."""
    return integrate_scalar(chart, np.ones(chart.node_count))


def sphere_volume(dim: int) -> float:
    """Closed-form volume of the unit sphere S^dim."""
    return 2.0 * math.pi ** ((dim + 1) / 2.0) / math.gamma((dim + 1) / 2.0)
