"""Explicit time stepping of the transport flow under the second boundary
condition.

The potential u evolves by du/dt = log det W - log B(x, grad u) with
W = D^2 u - A(x, grad u), while the boundary values of u are projected after
every interior update so that G(x, grad u) = h*(Y(x, grad u)) vanishes on the
boundary ring. The projection is a Newton iteration on the ring values whose
Jacobian couples each node to itself through the one-sided radial stencil and
to the whole ring through the spectral tangential derivative; obliqueness of
the direction field beta keeps the diagonal away from zero.

Stability: the step size obeys dt <= c_stab h_min^2 / max trace(W^{-1}) with
c_stab = 0.4, where h_min is the smallest effective node spacing divided by
sqrt(2) (the two space dimensions share the explicit stability budget; the
angular spacing near the center is the post-projection effective one, see
:mod:`otflow.grid`). Steps that lose positive definiteness of W, fail the
boundary projection, or produce non-finite values are rejected and retried
with half the step.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _numerics as nm
from .errors import (BoundaryIncompatible, ImageMismatch, NewtonStall,
                     NonPositiveDet, NotCConvex, ObliquenessLost, StepRejected)
from .grid import Field

#: columns of the per-step diagnostics table, in file order
STEP_COLUMNS = ("t", "dt", "sup_theta", "inf_theta", "mass_balance_err",
                "max_boundary_G", "min_eig_W", "stationary_residual")


@dataclass
class Schedule:
    """Run policy: stopping, stepping, and output cadence."""

    stop_tol: float = 1e-8
    t_max: float = 10.0
    snapshot_dt: float = 0.25
    c_stab: float = 0.4
    max_halvings: int = 12
    boundary_tol: float = 1e-10
    boundary_cap: int = 30
    obliqueness_floor: float = 1e-8
    init_boundary_tol: float | None = None   # default: 1e-7 + 5 dr^2
    image_tol: float | None = None


class FlowContext:
    """Immutable per-run data shared by every state of one flow."""

    def __init__(self, spec, grid):
        self.spec = spec
        self.grid = grid
        self.rho_nodes = spec.rho(grid.nodes)
        self.log_rho = np.log(self.rho_nodes)
        self.target_mass = spec.masses()[1]
        self.dmat = grid.spectral_matrix()
        self.ring_x = grid.nodes[-1]
        self.ring_jinv = grid.jinv[-1]
        self.ring_nu = grid.boundary_normals


@dataclass
class FlowState:
    """Potential at one time with the derived fields the stepper reuses."""

    ctx: FlowContext
    u: np.ndarray
    t: float
    grad_u: np.ndarray
    tmap: np.ndarray
    W: np.ndarray
    det_W: np.ndarray
    rate: np.ndarray | None
    G: np.ndarray
    min_eig_W: float
    max_boundary_G: float
    mass_err: float
    spd_ok: bool

    @property
    def grid(self):
        return self.ctx.grid

    @property
    def spec(self):
        return self.ctx.spec

    @property
    def valid(self):
        return self.spd_ok and self.rate is not None and np.all(np.isfinite(self.u))

    def u_field(self):
        return Field(self.u.copy(), "scalar", self.grid._id)

    def rate_field(self):
        if self.rate is None:
            raise NonPositiveDet("det W <= 0 somewhere; no rate field")
        return Field(self.rate.copy(), "scalar", self.grid._id)

    def W_field(self):
        return Field(self.W.copy(), "matrix", self.grid._id)

    def beta_field(self):
        """Oblique direction (D_p Y)^T grad h*(T) at every node."""
        C = self.spec.cost.cross_hessian(self.grid.nodes, self.tmap)
        P = nm.inv2(C)
        return nm.matvec2(nm.transpose2(P), self.spec.target.h_grad(self.tmap))

    def boundary_chi(self):
        """|W beta| on the boundary ring."""
        beta = self.beta_field()[-1]
        return nm.norm2(nm.matvec2(self.W[-1], beta))


@dataclass
class StepReport:
    dt: float
    interior_residual: float
    boundary_newton_iters: int
    halvings: int
    flags: list = field(default_factory=list)


@dataclass
class Snapshot:
    t: float
    u: np.ndarray
    rate: np.ndarray


@dataclass
class Trajectory:
    """A completed (or truncated) run: snapshots plus per-step records."""

    ctx: FlowContext
    snapshots: list
    step_records: np.ndarray    # (n_steps, len(STEP_COLUMNS))
    converged: bool
    reason: str

    @property
    def grid(self):
        return self.ctx.grid

    @property
    def spec(self):
        return self.ctx.spec

    def times(self):
        return np.array([s.t for s in self.snapshots])

    def state_at(self, idx):
        snap = self.snapshots[idx]
        return build_state(self.ctx, snap.u, snap.t)

    def final_state(self):
        return self.state_at(len(self.snapshots) - 1)

    def snapshot_index_at_time(self, t, tol=1e-9):
        ts = self.times()
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > tol:
            raise KeyError(f"no snapshot at t = {t}")
        return i


def build_state(ctx, u_values, t, tmap_seed=None):
    """Assemble the cached fields of a state from raw potential values."""
    grid = ctx.grid
    spec = ctx.spec
    cost = spec.cost
    u = np.asarray(u_values, float)
    grad, hess = grid.scalar_calculus(u)
    tmap = cost.invert_Y(grid.nodes, grad, seed=tmap_seed)
    if cost.hess_xx_vanishes:
        W = hess
    else:
        W = hess - cost.hess_xx(grid.nodes, tmap)
    det_w = nm.det2(W)
    lo, _ = nm.sym_eig_range2(W)
    min_eig = float(np.min(lo))
    spd_ok = bool(min_eig > 0.0)
    G = spec.target.h(tmap)
    max_g = float(np.max(np.abs(G[-1])))
    if spd_ok:
        log_b = ctx.log_rho - np.log(spec.rho_star(tmap))
        if not cost.cross_identity:
            C = cost.cross_hessian(grid.nodes, tmap)
            log_b = log_b + np.log(np.abs(nm.det2(C)))
        rate = np.log(det_w) - log_b
        mass = float(np.sum(grid.weights * np.exp(rate) * ctx.rho_nodes))
        mass_err = abs(mass - ctx.target_mass)
    else:
        rate = None
        mass_err = np.inf
    return FlowState(ctx=ctx, u=u, t=float(t), grad_u=grad, tmap=tmap, W=W,
                     det_W=det_w, rate=rate, G=G, min_eig_W=min_eig,
                     max_boundary_G=max_g, mass_err=mass_err, spd_ok=spd_ok)


def interior_rhs(state):
    """The flow right-hand side log det W - log B at every node (boundary
    included through the one-sided stencils); this field is the potential's
    time derivative."""
    if not state.spd_ok or state.rate is None:
        raise NonPositiveDet(
            f"det W <= 0 (min eigenvalue {state.min_eig_W:.3e}); "
            "the flow left the cost-convex cone")
    return state.rate_field()


# --- initialization ---------------------------------------------------------

def initialize(spec, grid, u0, schedule=None):
    """Validate initial data and return the state at t = 0.

    Checks, in order: positive definiteness of W(u0) everywhere (with a
    witness node on failure), the boundary compatibility h*(Y(x, grad u0)) = 0
    on the boundary ring, that the transport image stays inside the closed
    target, and that the image of the boundary covers the target boundary to
    a Hausdorff tolerance.
    """
    sched = schedule or Schedule()
    ctx = FlowContext(spec, grid)
    u = grid.apply_pole_projection(np.asarray(u0.data if isinstance(u0, Field)
                                              else u0, float).copy())
    state = build_state(ctx, u, 0.0)
    if not state.spd_ok:
        lo, _ = nm.sym_eig_range2(state.W)
        i, j = np.unravel_index(np.argmin(lo), lo.shape)
        raise NotCConvex(
            f"initial potential not locally uniformly cost-convex: min "
            f"eigenvalue {lo[i, j]:.3e} at node {(i, j)}, x = {grid.nodes[i, j]}",
            witness=(int(i), int(j), grid.nodes[i, j].copy(), float(lo[i, j])))
    # the discrete gradient of exact continuum-compatible data carries an
    # O(h^2) boundary defect, so the compatibility tolerance scales with it
    init_tol = (sched.init_boundary_tol if sched.init_boundary_tol is not None
                else 1e-7 + 5.0 * grid.dr ** 2)
    if state.max_boundary_G > init_tol:
        raise BoundaryIncompatible(
            f"max |h*(Y(x, grad u0))| = {state.max_boundary_G:.3e} on the "
            f"boundary (tolerance {init_tol:g})")
    inside = float(np.max(state.G))
    if inside > init_tol:
        raise ImageMismatch(
            f"transport image leaves the closed target: max h* = {inside:.3e}")
    if state.max_boundary_G > sched.boundary_tol:
        # start the flow exactly on the boundary constraint
        _project_boundary(ctx, u, tmap_seed=state.tmap, tol=sched.boundary_tol,
                          cap=sched.boundary_cap,
                          obliqueness_floor=sched.obliqueness_floor)
        state = build_state(ctx, u, 0.0, tmap_seed=state.tmap)
    # boundary coverage: every target boundary sample must be near a mapped node
    n_probe = 4 * grid.n_s
    probes = spec.target.boundary_param(np.arange(n_probe) / n_probe)
    mapped = state.tmap[-1]
    d2 = ((probes[:, None, :] - mapped[None, :, :]) ** 2).sum(-1)
    gap = float(np.sqrt(d2.min(axis=1).max()))
    mapped_spacing = float(np.max(nm.norm2(np.diff(
        np.concatenate([mapped, mapped[:1]], axis=0), axis=0))))
    tol = sched.image_tol if sched.image_tol is not None else 4.0 * mapped_spacing
    if gap > tol:
        raise ImageMismatch(
            f"boundary image leaves a gap of {gap:.3e} on the target boundary "
            f"(tolerance {tol:.3e})")
    return state


def initial_linear_scaling(spec, grid):
    """Potential of the affine map source -> target for the inner-product
    cost between a centered disk source and a disk or ellipse target."""
    src, tgt = spec.source, spec.target
    if src.kind != "disk":
        raise ValueError("linear scaling initial data needs a disk source")
    if tgt.kind == "disk":
        ax = ay = tgt.radius / src.radius
        c2 = tgt.center
    elif tgt.kind == "ellipse":
        ax, ay = tgt.a / src.radius, tgt.b / src.radius
        c2 = tgt.center
    else:
        raise ValueError("linear scaling initial data needs a disk or ellipse target")
    d = grid.nodes - src.center
    u0 = (grid.nodes[..., 0] * c2[0] + grid.nodes[..., 1] * c2[1]
          + 0.5 * (ax * d[..., 0] ** 2 + ay * d[..., 1] ** 2))
    return grid.scalar(u0)


def initial_antipodal_reflection(spec, grid):
    """Stationary potential of the point reflection T(x) = c2 - (x - c1)
    between equal-radius disks under the sqrt(1 + |x - y|^2) cost."""
    src, tgt = spec.source, spec.target
    if src.kind != "disk" or tgt.kind != "disk" or not np.isclose(
            src.radius, tgt.radius):
        raise ValueError("antipodal reflection initial data needs equal-radius disks")
    z = 2.0 * (grid.nodes - src.center) - (tgt.center - src.center)
    return grid.scalar(0.5 * np.sqrt(1.0 + z[..., 0] ** 2 + z[..., 1] ** 2))


INITIAL_POTENTIALS = {
    "linear_scaling": initial_linear_scaling,
    "antipodal_reflection": initial_antipodal_reflection,
}


# --- boundary projection -----------------------------------------------------

def _ring_gradient(ctx, b, u_m1, u_m2):
    grid = ctx.grid
    u_r = (3.0 * b - 4.0 * u_m1 + u_m2) / (2.0 * grid.dr)
    u_s = ctx.dmat @ b
    ji = ctx.ring_jinv
    grad = np.empty((grid.n_s, 2))
    grad[:, 0] = ji[:, 0, 0] * u_r + ji[:, 1, 0] * u_s
    grad[:, 1] = ji[:, 0, 1] * u_r + ji[:, 1, 1] * u_s
    return grad


def _boundary_beta(ctx, y):
    if ctx.spec.cost.cross_identity:
        return ctx.spec.target.h_grad(y)
    C = ctx.spec.cost.cross_hessian(ctx.ring_x, y)
    return nm.matvec2(nm.transpose2(nm.inv2(C)), ctx.spec.target.h_grad(y))


def _project_boundary(ctx, u_values, tmap_seed=None, tol=1e-10, cap=30,
                      obliqueness_floor=1e-8):
    """Newton-update the boundary ring of u_values so that G = 0 there.

    Mutates u_values in place; returns the Newton iteration count. The LU
    factorization of the ring Jacobian is cached on the context and reused
    chord-style across steps while it keeps converging (the ring geometry
    drifts only O(dt) per step); it is rebuilt when progress slows.
    """
    from scipy.linalg import lu_factor, lu_solve

    grid = ctx.grid
    spec = ctx.spec
    b = u_values[-1].copy()
    u_m1, u_m2 = u_values[-2], u_values[-3]
    y_seed = tmap_seed[-1] if tmap_seed is not None else None

    def residual(bv):
        grad = _ring_gradient(ctx, bv, u_m1, u_m2)
        y = spec.cost.invert_Y(ctx.ring_x, grad, seed=y_seed)
        return spec.target.h(y), y

    def refresh_jacobian(y):
        beta = _boundary_beta(ctx, y)
        obl = np.sum(beta * ctx.ring_nu, axis=-1)
        if np.min(obl) < obliqueness_floor:
            raise ObliquenessLost(
                f"beta . nu = {np.min(obl):.3e} on the boundary ring")
        ji = ctx.ring_jinv
        a_r = (beta[:, 0] * ji[:, 0, 0] + beta[:, 1] * ji[:, 0, 1]) \
            * 3.0 / (2.0 * grid.dr)
        a_s = beta[:, 0] * ji[:, 1, 0] + beta[:, 1] * ji[:, 1, 1]
        jac = a_s[:, None] * ctx.dmat
        jac[np.arange(grid.n_s), np.arange(grid.n_s)] += a_r
        ctx._ring_lu = lu_factor(jac)

    g, y = residual(b)
    y_seed = y
    err = float(np.max(np.abs(g)))
    iters = 0
    fresh = False
    while err > tol:
        if iters >= cap:
            raise NewtonStall(
                f"boundary projection stalled at max |G| = {err:.3e}")
        if getattr(ctx, "_ring_lu", None) is None:
            refresh_jacobian(y)
            fresh = True
        delta = lu_solve(ctx._ring_lu, -g)
        lam = 1.0
        while True:
            g_new, y_new = residual(b + lam * delta)
            err_new = float(np.max(np.abs(g_new)))
            if err_new < err or err_new <= tol:
                break
            lam *= 0.5
            if lam < 1.0 / 64.0:
                if not fresh:
                    break           # stale factorization: rebuild and retry
                raise NewtonStall(
                    f"boundary projection cannot reduce |G| below {err:.3e}")
        if lam < 1.0 / 64.0 or (not fresh and err_new > 0.25 * err
                                and err_new > tol):
            ctx._ring_lu = None     # slow chord progress: force a rebuild
            if lam < 1.0 / 64.0:
                continue
        b = b + lam * delta
        g, y, y_seed = g_new, y_new, y_new
        err = err_new
        iters += 1
    u_values[-1] = b
    return iters


def enforce_boundary(state, schedule=None):
    """Project the boundary values of u onto G = 0 and refresh the caches."""
    sched = schedule or Schedule()
    u = state.u.copy()
    _project_boundary(state.ctx, u, tmap_seed=state.tmap,
                      tol=sched.boundary_tol, cap=sched.boundary_cap,
                      obliqueness_floor=sched.obliqueness_floor)
    return build_state(state.ctx, u, state.t, tmap_seed=state.tmap)


# --- stepping ----------------------------------------------------------------

def policy_dt(state, c_stab=0.4):
    """Stability-limited step: c_stab h_min^2 / max trace(W^{-1})."""
    tr_winv = (state.W[..., 0, 0] + state.W[..., 1, 1]) / state.det_W
    return c_stab * state.grid.h_min ** 2 / float(np.max(tr_winv))


def step(state, dt, schedule=None, max_halvings=None):
    """One explicit update u <- u + dt * rate at non-boundary nodes followed
    by the boundary projection; rejects and halves dt when positivity or the
    projection fails."""
    sched = schedule or Schedule()
    halvings_cap = sched.max_halvings if max_halvings is None else max_halvings
    if not state.spd_ok or state.rate is None:
        raise NonPositiveDet("cannot step an invalid state")
    grid = state.grid
    attempt_dt = float(dt)
    last_fail = "unstable"
    for halving in range(halvings_cap + 1):
        u_new = state.u.copy()
        u_new[:-1] += attempt_dt * state.rate[:-1]
        u_new = grid.apply_pole_projection(u_new)
        if not np.all(np.isfinite(u_new)):
            last_fail = "non-finite potential"
            attempt_dt *= 0.5
            continue
        try:
            iters = _project_boundary(
                state.ctx, u_new, tmap_seed=state.tmap, tol=sched.boundary_tol,
                cap=sched.boundary_cap, obliqueness_floor=sched.obliqueness_floor)
        except (NewtonStall, ObliquenessLost) as exc:
            last_fail = str(exc)
            attempt_dt *= 0.5
            continue
        new_state = build_state(state.ctx, u_new, state.t + attempt_dt,
                                tmap_seed=state.tmap)
        if not new_state.spd_ok or not np.all(np.isfinite(new_state.rate)):
            last_fail = (f"W lost positivity (min eig {new_state.min_eig_W:.3e})"
                         if not new_state.spd_ok else "non-finite rate")
            attempt_dt *= 0.5
            continue
        report = StepReport(dt=attempt_dt,
                            interior_residual=float(np.max(np.abs(new_state.rate[:-1]))),
                            boundary_newton_iters=iters, halvings=halving)
        return new_state, report
    raise StepRejected(
        f"step rejected after {halvings_cap} halvings (dt = {attempt_dt:.3e}): "
        f"{last_fail}")


def _record_row(state, dt):
    return (state.t, dt, float(np.max(state.rate)), float(np.min(state.rate)),
            state.mass_err, state.max_boundary_G, state.min_eig_W,
            float(np.max(np.abs(state.rate))))


def run_to_convergence(spec, grid, u0, schedule=None):
    """March the flow until the rate's sup norm falls below stop_tol or the
    horizon is reached; snapshots are taken exactly at multiples of
    snapshot_dt and the per-step monitor table is kept throughout."""
    sched = schedule or Schedule()
    state = initialize(spec, grid, u0, sched)
    snapshots = [Snapshot(0.0, state.u.copy(), state.rate.copy())]
    records = []
    k_snap = 1
    converged = bool(np.max(np.abs(state.rate)) <= sched.stop_tol)
    reason = "stationary at start" if converged else ""
    while not converged and state.t < sched.t_max - 1e-12:
        target_t = min(k_snap * sched.snapshot_dt, sched.t_max)
        dt = min(policy_dt(state, sched.c_stab), target_t - state.t)
        state, rep = step(state, dt, sched)
        records.append(_record_row(state, rep.dt))
        if abs(state.t - target_t) < 1e-9:
            state.t = target_t
            if abs(target_t - k_snap * sched.snapshot_dt) < 1e-9:
                snapshots.append(Snapshot(state.t, state.u.copy(),
                                          state.rate.copy()))
                k_snap += 1
        if np.max(np.abs(state.rate)) <= sched.stop_tol:
            converged = True
            reason = f"rate below stop_tol at t = {state.t:.4f}"
    if not converged and not reason:
        reason = (f"t_max = {sched.t_max} reached with sup |rate| = "
                  f"{np.max(np.abs(state.rate)):.3e}")
    if abs(snapshots[-1].t - state.t) > 1e-12:
        snapshots.append(Snapshot(state.t, state.u.copy(), state.rate.copy()))
    table = np.array(records, float).reshape(-1, len(STEP_COLUMNS))
    return Trajectory(ctx=state.ctx, snapshots=snapshots, step_records=table,
                      converged=converged, reason=reason)
