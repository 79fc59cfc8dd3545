# %% [markdown]
# # Boundary convexity audits
#
# The flow theory needs the source to be cost-convex with respect to the
# target and vice versa. Both conditions are boundary quadratic forms; the
# audits sweep them over boundary x target (or boundary x source) samples and
# report the minimum with a witness. For the inner-product cost the forms
# reduce to boundary curvature, so disks give delta = 1/R exactly, and a
# nonconvex "peanut" source is caught with a witness on its concave arc.

# %%
import numpy as np

from otflow import costs, domains

cost = costs.make_cost("inner_product")


def audit(src, tgt, label):
    spec = domains.ProblemSpec(src, tgt, cost,
                               domains.uniform_density(src),
                               domains.uniform_density(tgt))
    rc = domains.check_c_convexity(spec, 192, 32)
    rs = domains.check_cstar_convexity(spec, 192, 32)
    bit = domains.check_bitwist(spec, 1024)
    print(f"{label:28s} delta = {rc.min_value:+.4f}   delta* = "
          f"{rs.min_value:+.4f}   min|det cross| = {bit.min_abs_det:.2e}")
    return rc


audit(domains.Disk(1.0), domains.Disk(2.0), "disk(1) -> disk(2)")
audit(domains.Disk(0.5), domains.Disk(1.5), "disk(0.5) -> disk(1.5)")
audit(domains.Disk(1.0), domains.Ellipse(2.0, 1.0), "disk(1) -> ellipse(2,1)")

# %%
# the peanut: r(angle) = 1 + 0.3 cos(2 angle) has concave arcs
peanut = domains.CosineBlob(1.0, 0.3, 2)
rep = audit(peanut, domains.Disk(2.0), "peanut -> disk(2)")
print("witness: boundary point", np.round(rep.argmin_x, 3),
      "at parameter", round(rep.argmin_s, 3),
      "where the boundary curvature is",
      round(float(peanut.curvature(rep.argmin_s)), 3))

# %%
# a genuinely cost-dependent pair: offset disks under sqrt(1 + |x-y|^2);
# the margins shrink as the disks separate and turn negative beyond 1/R
cost_s = costs.make_cost("sqrt_one_plus_sq_dist")
for d in (0.8, 1.2, 2.0, 3.0):
    src = domains.Disk(0.5)
    tgt = domains.Disk(0.5, (d, 0.0))
    spec = domains.ProblemSpec(src, tgt, cost_s,
                               domains.uniform_density(src),
                               domains.uniform_density(tgt))
    rc = domains.check_c_convexity(spec, 96, 48)
    print(f"offset {d:.1f}: delta = {rc.min_value:+.4f}")
