import time

import numpy as np

from crbonnet.domains import ambient_point, make_builtin
from crbonnet.frames import build_coframe, solve_xi
from crbonnet.quadrature import (
    boundary_chart,
    integrate_form,
    residue_sphere,
    sphere_grid,
    sphere_volume,
    template_volume,
)

for n, res in [(1, 8), (1, 16), (1, 48), (2, 8), (2, 16)]:
    g = sphere_grid(n, res)
    vol = template_volume(g)
    want = sphere_volume(2 * n + 1)
    print(f"n={n} res={res}: nodes={g.node_count} vol err {abs(vol-want):.3e}")

# Stokes oracle on the ball: contact form wedge powers of its derivative
def theta_dtheta(spec, n):
    def cb(z):
        pt = ambient_point(spec, z, order=3)
        xi, r = solve_xi(pt)
        fd = build_coframe(pt, xi, r)
        th = fd.theta
        form = th.wedge(th.d())
        if n == 2:
            form = form.wedge(th.d())
        return form.at_value()
    return cb

for n, res, want in [(1, 16, 4 * np.pi**2), (2, 8, 8 * np.pi**3)]:
    ball = make_builtin("ball", n)
    chart = boundary_chart(ball, sphere_grid(n, res))
    t0 = time.time()
    val = integrate_form(chart, theta_dtheta(ball, n))
    print(f"n={n} res={res}: int theta (dtheta)^n = {val:.12f} "
          f"err {abs(val-want):.3e}  [{time.time()-t0:.2f}s]")

# ellipsoid radius along the Re z1 axis
ell = make_builtin("real_ellipsoid", 1, {"t": 0.2})
g = sphere_grid(1, 8)
chart = boundary_chart(ell, g)
axis = np.argmin(np.abs(g.directions - np.array([1.0, 0.0])).sum(axis=1))
print("ellipsoid radius check: dir", g.directions[axis],
      "R =", chart.radii[axis], "want", 1 / np.sqrt(1.2))

# mobius chart radii
mob = make_builtin("mobius_ball", 1, {"a": [0.3 + 0.0j, 0.1j]})
chart_m = boundary_chart(mob, sphere_grid(1, 12))
amax = np.sqrt(0.3**2 + 0.1**2)
print("mobius radii range:", chart_m.radii.min(), chart_m.radii.max(),
      "bound", 1 + amax)

# determinism across worker counts
ball = make_builtin("ball", 1)
chart = boundary_chart(ball, sphere_grid(1, 16))
v1 = integrate_form(chart, theta_dtheta(ball, 1), workers=1, chunk=512)
v3 = integrate_form(chart, theta_dtheta(ball, 1), workers=3, chunk=512)
print("workers bitwise:", v1 == v3, v1)

# residue sphere with a constant-coefficient exactish form: d(x dy) etc.
from crbonnet.forms import basis_covector

def const_form(z):
    k = z.shape[0]
    f = basis_covector(2, 0, np.full(k, 1.0))
    for slot, anti in [(0, True), (1, False)]:
        b = basis_covector(2, slot, np.full(k, 1.0))
        f = f.wedge(b.conj() if anti else b)
    return f

val = residue_sphere(np.zeros(2, dtype=complex), 0.5, const_form, resolution=12)
print("residue const dz0 dz0bar dz1 =", val)
