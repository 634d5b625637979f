import time

import numpy as np

from crbonnet.curvature import ambient_metric, renormalized_connection
from crbonnet.domains import ambient_point, make_builtin, sample_boundary, sample_interior
from crbonnet.errors import JetOrderExhausted
from crbonnet.forms import real_vector
from crbonnet.frames import build_coframe, field_values, solve_xi, split_NT
from crbonnet.quadrature import boundary_chart, integrate_form, sphere_grid
from crbonnet.transgression import (
    chern_det,
    d_pi_residual,
    index_integral,
    transgression_form,
)


def pipeline(spec, z, order=4, with_metric=False):
    pt = ambient_point(spec, z, order=order)
    xi, r = solve_xi(pt)
    fd = build_coframe(pt, xi, r)
    metric = ambient_metric(pt, fd) if with_metric else None
    return pt, fd, renormalized_connection(pt, fd, metric)


ball = make_builtin("ball", 1)

# 1. boundary density oracle
z = sample_boundary(ball, 5, seed=2)
pt, fd, bundle = pipeline(ball, z)
tv = transgression_form(bundle, 1)
_, T = split_NT(fd.xi)
w1 = field_values(fd.W[1])
vecs = [real_vector(field_values(T)), real_vector(w1), real_vector(-1j * w1)]
lhs = tv.Pi.at_value().pair(vecs)
rhs = fd.theta.wedge(fd.theta.d()).at_value().pair(vecs)
print("Pi/theta^dtheta + 1/4pi^2:", np.max(np.abs(lhs / rhs + 1 / (4 * np.pi**2))))

# 2. row homotopy equals closed form
tv_row = transgression_form(bundle, 1, variant="row")
diff = (tv.Pi - tv_row.Pi).at_value().max_abs()
print("row vs standard:", diff, " scale", tv.Pi.at_value().max_abs())

# 3. exactness residuals
rng = np.random.default_rng(3)
pts = sample_interior(ball, 40, seed=3)
print("ball dPi residual:", d_pi_residual(ball, pts))
try:
    d_pi_residual(ball, pts[:2], order=4)
    print("order-4: no raise (unexpected)")
except JetOrderExhausted as e:
    print("order-4 raises JetOrderExhausted ok")

# 4. ball chern + W vanish at interior
zi = sample_interior(ball, 10, seed=5)
_, _, bint = pipeline(ball, zi, with_metric=True)
wmax = max(f.at_value().max_abs() for row in bint.W_chern for f in row)
tvi = transgression_form(bint, 1)
print("ball interior |W|:", wmax, " |chern|:", tvi.chern.at_value().max_abs(),
      " |det W|:", chern_det(bint.W_chern).at_value().max_abs())

# 5. ball invariant integral at res 12 and 16
def pi_callback(spec, n, variant="standard"):
    def cb(znodes):
        _, _, b = pipeline(spec, znodes)
        return transgression_form(b, n, variant=variant).Pi.at_value()
    return cb

for res in (12, 16):
    chart = boundary_chart(ball, sphere_grid(1, res))
    t0 = time.time()
    val = integrate_form(chart, pi_callback(ball, 1))
    print(f"ball n=1 res {res}: int Pi = {val:.12f} ({time.time()-t0:.1f}s)")

# 6. variant integrals
chart = boundary_chart(ball, sphere_grid(1, 12))
for variant in ("column", "block"):
    t0 = time.time()
    val = integrate_form(chart, pi_callback(ball, 1, variant))
    print(f"variant {variant}: {val:.12f} ({time.time()-t0:.1f}s)")

# 7. index integrals
print("identity real:", index_integral(np.eye(4)))
print("diag(1,1,1,-1):", index_integral(np.diag([1.0, 1.0, 1.0, -1.0])))
print("complex trivial:", index_integral(np.eye(2, dtype=complex)))
t0 = time.time()
print("complex metric:", index_integral(np.eye(2, dtype=complex), connection="metric"),
      f"({time.time()-t0:.1f}s)")

# 8. Prop 3.3 det identity, raw ellipsoid collar
ell = make_builtin("real_ellipsoid", 1, {"t": 0.2})
zc = sample_boundary(ell, 8, seed=7) * 0.92
_, _, be = pipeline(ell, zc, with_metric=True)
tve = transgression_form(be, 1)
for name, W in (("Wc", be.Wc), ("W_chern", be.W_chern)):
    d = (tve.chern - chern_det(W)).at_value().max_abs()
    print(f"prop33 {name}: |det Theta - det W| = {d:.3e}, scale {tve.chern.at_value().max_abs():.3e}")
