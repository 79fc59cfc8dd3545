# %% [markdown]
# # Cost calculus: twist inverses and the derived geometry
#
# Everything downstream of the cost c(x, y) is built from its derivative
# oracles: the twist inverses Y(x, p) and X(q, y), the matrix
# A(x, p) = D^2_x c(x, Y(x, p)), the density ratio B, the boundary function
# G = h*(Y) and its p-gradient beta, and the curvature form contracted over
# orthogonal directions.

# %%
import numpy as np

from otflow import costs, domains

c = costs.make_cost("sqrt_one_plus_sq_dist")
rng = np.random.default_rng(3)
x = 0.3 * rng.normal(size=(5, 2))
y = np.array([2.0, 0.0]) + 0.3 * rng.normal(size=(5, 2))

# the twist inverses undo the cost gradients
p = c.grad_x(x, y)
print("invert_Y round trip error:", np.abs(c.invert_Y(x, p) - y).max())
q = c.grad_y(x, y)
print("invert_X round trip error:", np.abs(c.invert_X(q, y) - x).max())

# %%
# A computed directly and through the twist-map Jacobians
a = c.matrix_A(x, p)
a_alt = c.matrix_A_alt(x, p)
print("A vs -(DpY)^-1 DxY:", np.abs(a - a_alt).max())

# %%
# the boundary function for a disk target, its gradient, and its p-Hessian
tgt = domains.Disk(0.9, (2.0, 0.0))
g_val = c.boundary_G(tgt, x[0], p[0])
beta = c.oblique_beta(tgt, x[0], p[0])
g_pp = c.G_hessian_p(tgt, x[0], p[0])
print("G:", g_val, " beta:", beta)
print("G_pp eigenvalues:", np.linalg.eigvalsh(g_pp))

# %%
# the curvature form vanishes identically for costs whose A is affine in p
for name in ("inner_product", "neg_half_sq_dist", "sqrt_one_plus_sq_dist"):
    ci = costs.make_cost(name)
    xi = np.array([1.0, 0.2])
    eta = np.array([-0.2, 1.0])
    if name == "inner_product":
        val = ci.mtw_tensor(np.array([0.1, 0.0]), np.array([0.3, 0.1]), xi, eta)
    else:
        val = ci.mtw_tensor(x[0], p[0], xi, eta)
    print(f"{name:24s} curvature form = {val:+.3e}")
