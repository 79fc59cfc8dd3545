"""The linearization of the flow, its special nonnegative solutions, and the
boundary derivative of the Li-Yau quantity.

Differentiating the flow equation in time shows that the rate field
theta = du/dt solves

    L v := w^{ij} v_ij + drift . grad v - dv/dt = 0,      D_beta v = 0 on the
    boundary,

where w^{ij} is the inverse of W and the drift is the p-gradient of the
right-hand side log det W - log B frozen at the current state:
drift_k = -w^{ij} D_{p_k} A_{ij} - D_{p_k} log B. (Note the sign of the
D_p log B part: it is the one produced by differentiating the flow, and the
one that makes L annihilate the flow's own rate field.)

For a positive solution v, f = log v satisfies L f + w^{ij} f_i f_j = 0 and
the scaled quantity F = t (w^{ij} f_i f_j - alpha df/dt) is the object whose
boundary directional derivative along beta admits the closed forms
implemented here. The special solutions used throughout are the gaps
Theta_k(x, t) = sup_x theta(., k-1) - theta(x, (k-1) + t), which are
nonnegative by the maximum principle.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _numerics as nm
from .errors import (DegenerateDenominator, EllipticityLost, NonPositiveTheta,
                     ObliquenessLost)
from .grid import Field, directional_derivative_at_boundary

#: default Li-Yau scaling exponent; any value > 1 is admissible
DEFAULT_ALPHA = 2.0

#: positivity floor under which log Theta is not evaluated
THETA_FLOOR = 1e-14


@dataclass
class LinearizedCoeffs:
    """Coefficients of the linearized operator at one state."""

    winv: np.ndarray         # (n_r, n_s, 2, 2), inverse of W
    drift: np.ndarray        # (n_r, n_s, 2)
    beta: np.ndarray         # (n_s, 2) on the boundary ring
    c1: float                # sampled min eigenvalue of winv (ellipticity)
    c2: float                # sampled min of beta . nu (obliqueness)
    grid_id: int


def build_coeffs(state, ellipticity_floor=1e-10, obliqueness_floor=1e-10):
    """Assemble the linearized coefficients from a flow state.

    D_p A and D_p log B come from the cost's mixed third derivatives
    contracted with the inverse cross Hessian (the implicit derivative of the
    twist inverse), so no finite differencing in p is involved for costs with
    analytic thirds.
    """
    grid = state.grid
    spec = state.spec
    cost = spec.cost
    winv = nm.inv2(state.W)
    lo, _ = nm.sym_eig_range2(winv)
    c1 = float(np.min(lo))
    if c1 <= ellipticity_floor:
        raise EllipticityLost(f"min eigenvalue of w^(ij) = {c1:.3e}")
    x = grid.nodes
    y = state.tmap
    grad_log_rho_star = spec.rho_star.grad_log(y)
    if cost.cross_identity:
        pinv = None
    else:
        pinv = nm.inv2(cost.cross_hessian(x, y))
    if cost.thirds_vanish:
        dp_a_contracted = 0.0
        tr_term = 0.0
    else:
        t_xxy = cost.third_xxy(x, y)          # [i, j, r]
        t_xyy = cost.third_xyy(x, y)          # [i, r, q]
        p_mat = pinv if pinv is not None else np.broadcast_to(
            np.eye(2), x.shape[:-1] + (2, 2))
        # D_{p_k} A_{ij} = c_{ij,r} P[r, k], contracted with w^{ij}
        dp_a = np.einsum('...ijr,...rk->...ijk', t_xxy, p_mat)
        dp_a_contracted = np.einsum('...ij,...ijk->...k', winv, dp_a)
        # d/dy_r log |det C| = tr(P dC/dy_r) with (dC/dy_r)_{ij} = c_{i,jr}
        tr_c = np.einsum('...ij,...jir->...r', p_mat, t_xyy)
        tr_term = np.einsum('...r,...rk->...k', tr_c, p_mat)
    if cost.cross_identity:
        dp_log_b = -grad_log_rho_star
    else:
        dp_log_b = tr_term - np.einsum(
            '...r,...rk->...k', grad_log_rho_star, pinv)
    drift = -dp_log_b - (dp_a_contracted if np.ndim(dp_a_contracted) else 0.0)
    if not np.ndim(drift):
        drift = np.zeros(x.shape)
    beta = state.beta_field()[-1]
    c2 = float(np.min(np.sum(beta * grid.boundary_normals, axis=-1)))
    if c2 <= obliqueness_floor:
        raise ObliquenessLost(f"min beta . nu = {c2:.3e}")
    return LinearizedCoeffs(winv=winv, drift=drift, beta=beta, c1=c1, c2=c2,
                            grid_id=grid._id)


def apply_L(coeffs, grid, v_now, v_prev, dt):
    """The linearized operator on a pair of consecutive snapshots of v:
    w^{ij} v_ij + drift . grad v - (v_now - v_prev) / dt, as a scalar field.

    Spatial derivatives act on v_now; the time derivative is the backward
    difference, so the residual of a true solution is O(h + dt).
    """
    grid.check_field(v_now)
    grid.check_field(v_prev)
    gx, hess = grid.scalar_calculus(v_now.data)
    out = (coeffs.winv[..., 0, 0] * hess[..., 0, 0]
           + coeffs.winv[..., 0, 1] * hess[..., 0, 1]
           + coeffs.winv[..., 1, 0] * hess[..., 1, 0]
           + coeffs.winv[..., 1, 1] * hess[..., 1, 1])
    out = out + coeffs.drift[..., 0] * gx[..., 0] + coeffs.drift[..., 1] * gx[..., 1]
    out = out - (v_now.data - v_prev.data) / dt
    return grid.scalar(out)


def log_gradient_residual(coeffs, grid, f_now, f_prev, dt):
    """Residual of the log-substituted equation: L f + w^{ij} f_i f_j.

    Vanishes (to discretization error) when f = log v for a positive solution
    v of the linearized equation.
    """
    lf = apply_L(coeffs, grid, f_now, f_prev, dt)
    gx = grid.grad_values(f_now.data)
    return grid.scalar(lf.data + nm.quadform2(coeffs.winv, gx))


# --- special solutions and the Li-Yau quantity -------------------------------

@dataclass
class HarnackSeries:
    """Fields of one gap solution Theta_k along the snapshot grid.

    All arrays are stacked over the series times; nodes where the gap sits
    at or below the positivity floor are masked and excluded from maxima.
    F(., 0) is identically zero by the time factor.
    """

    k: int
    alpha: float
    floor: float
    base_sup: float                  # sup theta(., k-1)
    times: np.ndarray                # offsets from k-1, starting at 0
    snapshot_indices: np.ndarray     # indices into the trajectory snapshots
    gap: np.ndarray                  # (m, n_r, n_s)
    f: np.ndarray                    # log gap (nan where masked)
    dt_f: np.ndarray                 # time derivative of f on the snapshot grid
    grad_f: np.ndarray               # (m, n_r, n_s, 2)
    winv_quad: np.ndarray            # w^{ij} f_i f_j per time
    F: np.ndarray                    # t (winv_quad - alpha dt_f)
    mask: np.ndarray                 # gap > floor
    grid_id: int

    def F_max_series(self):
        """max_x F(., t) over unmasked nodes for every series time."""
        out = np.full(len(self.times), np.nan)
        for m in range(len(self.times)):
            valid = self.mask[m]
            if np.any(valid):
                out[m] = np.max(self.F[m][valid])
        return out

    def diff_harnack_series(self):
        """max_x (w^{ij} f_i f_j - alpha df/dt) for every series time > 0."""
        out = np.full(len(self.times), np.nan)
        for m in range(len(self.times)):
            valid = self.mask[m]
            if np.any(valid):
                out[m] = np.max((self.winv_quad[m] - self.alpha * self.dt_f[m])[valid])
        return out

    def f_field(self, m, grid):
        return Field(np.nan_to_num(self.f[m], nan=0.0, neginf=0.0), "scalar",
                     self.grid_id)

    def F_field(self, m):
        return Field(np.where(self.mask[m], self.F[m], 0.0), "scalar",
                     self.grid_id)


def gap_series_from_fields(trajectory, rate_fields, times, indices, base_sup,
                           k, alpha, floor):
    """Assemble a HarnackSeries from explicit rate fields.

    This is the hook for testing candidate solutions other than the built-in
    gaps; nothing is asserted about them.
    """
    m = len(times)
    shape = rate_fields[0].shape
    gap = np.empty((m,) + shape)
    for i in range(m):
        gap[i] = base_sup - rate_fields[i]
    mask = gap > floor
    if not np.any(mask.reshape(m, -1).any(axis=1)):
        raise NonPositiveTheta(
            f"gap solution k={k} is below the floor {floor:g} everywhere")
    # truncate trailing times where the gap has no positive part at all
    alive = mask.reshape(m, -1).any(axis=1)
    last = int(np.max(np.nonzero(alive)[0])) + 1
    if last < 3:
        raise NonPositiveTheta(
            f"gap solution k={k} has fewer than three usable snapshots")
    m = last
    times = np.asarray(times[:m], float)
    indices = np.asarray(indices[:m], int)
    gap = gap[:m]
    mask = mask[:m]
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(mask, np.log(np.maximum(gap, 1e-300)), np.nan)
    # time derivative of f on the (uniform) snapshot grid: centered inside,
    # one-sided at the ends
    dt_f = np.empty_like(f)
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-6, atol=1e-12):
        raise ValueError("gap series needs uniformly spaced snapshots")
    h = float(dts[0])
    dt_f[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    dt_f[0] = (f[1] - f[0]) / h
    dt_f[-1] = (f[-1] - f[-2]) / h
    grid = trajectory.grid
    grad_f = np.empty(f.shape + (2,))
    winv_quad = np.empty_like(f)
    F = np.zeros_like(f)
    for i in range(m):
        state = trajectory.state_at(int(indices[i]))
        winv = nm.inv2(state.W)
        fi = np.nan_to_num(f[i], nan=0.0, neginf=0.0)
        grad_f[i] = grid.grad_values(fi)
        winv_quad[i] = nm.quadform2(winv, grad_f[i])
        if times[i] > 0:
            F[i] = times[i] * (winv_quad[i] - alpha * dt_f[i])
    # nodes where the floor mask touched any time-stencil value carry
    # non-finite time derivatives; exclude them from the evaluable set
    mask &= np.isfinite(F) & np.isfinite(dt_f)
    return HarnackSeries(k=k, alpha=alpha, floor=floor, base_sup=base_sup,
                         times=times, snapshot_indices=indices, gap=gap, f=f,
                         dt_f=dt_f, grad_f=grad_f, winv_quad=winv_quad, F=F,
                         mask=mask, grid_id=grid._id)


def theta_special(trajectory, k=1, alpha=DEFAULT_ALPHA, floor=THETA_FLOOR):
    """The gap solution Theta_k(x, t) = sup theta(., k-1) - theta(x, (k-1)+t)
    sampled on the trajectory's snapshot grid."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    i0 = trajectory.snapshot_index_at_time(float(k - 1))
    snaps = trajectory.snapshots[i0:]
    if len(snaps) < 3:
        raise NonPositiveTheta(f"trajectory too short for gap solution k={k}")
    times = np.array([s.t - snaps[0].t for s in snaps])
    # keep the uniformly spaced cadence prefix (the run's final snapshot may
    # sit off the cadence grid at the stopping time)
    if len(times) > 2:
        h = times[1] - times[0]
        spacing_ok = np.isclose(np.diff(times), h, rtol=1e-6, atol=1e-9)
        cut = len(times) if spacing_ok.all() else int(np.argmin(spacing_ok)) + 1
        snaps = snaps[:cut]
        times = times[:cut]
    if len(snaps) < 3:
        raise NonPositiveTheta(f"trajectory too short for gap solution k={k}")
    base_sup = float(np.max(snaps[0].rate))
    rate_fields = [s.rate for s in snaps]
    indices = np.arange(i0, i0 + len(snaps))
    return gap_series_from_fields(trajectory, rate_fields, times, indices,
                                  base_sup, k, alpha, floor)


# --- boundary derivative of F -------------------------------------------------

def _series_time_index(series, t):
    i = int(np.argmin(np.abs(series.times - t)))
    if abs(series.times[i] - t) > 1e-9:
        raise KeyError(f"series has no snapshot at offset t = {t}")
    return i


def dbetaF_direct(series, state, j_node, t, obliqueness_floor=1e-6):
    """One-sided finite-difference derivative of F along beta at boundary
    node j at series offset t.

    Refuses nodes whose sampling neighborhood touches the positivity-floor
    mask: F is undefined there and differencing across the hole is
    meaningless.
    """
    m = _series_time_index(series, t)
    grid = state.grid
    j = int(j_node)
    window = (np.arange(j - 2, j + 3)) % grid.n_s
    if not series.mask[m][-3:, window].all():
        raise NonPositiveTheta(
            f"gap at offset {t} touches the floor near boundary node {j}")
    f_field = series.F_field(m)
    beta = state.beta_field()[-1, j]
    return directional_derivative_at_boundary(
        grid, f_field, j, beta, obliqueness_floor=obliqueness_floor)


def _boundary_convexity_contraction(state, j_node, tau):
    """(Dnu - c^(r,l) c_(ij,r) nu^l)-form at boundary node j contracted with
    the (not necessarily unit) tangent vector tau."""
    grid = state.grid
    spec = state.spec
    j = int(j_node)
    s_j = grid.s[j]
    tan = spec.source.boundary_tangent(s_j)
    kappa = float(spec.source.curvature(s_j))
    tau_t = float(np.dot(tau, tan))
    first = kappa * tau_t ** 2
    if getattr(spec.cost, "thirds_vanish", False):
        return first
    x = grid.nodes[-1, j]
    y = state.tmap[-1, j]
    thirds = spec.cost.third_xxy(x, y)              # [i, j, r]
    cinv = nm.inv2(spec.cost.cross_hessian(x, y))   # [r, l]
    nu = grid.boundary_normals[j]
    w = cinv.T @ nu                                 # w_r = c^(r,l) nu^l
    corr = np.einsum('ijr,i,j,r->', thirds, tau, tau, w)
    return first - corr


def dbetaF_closed(series, state, j_node, t, mode="general"):
    """Closed-form boundary derivative of F along beta at node j, offset t.

    Returns (value, (term1, term2, term3)): the curvature-form term, the
    -G_pp(grad f, grad f) term, and the +alpha G_pp(grad f, grad theta) term,
    each already multiplied by t. ``mode='quadratic'`` uses the specialization
    valid for the inner-product cost (W = D^2 u, beta = grad h*(grad u));
    ``mode='general'`` assembles the full G_pp from the cost calculus.
    """
    if mode not in ("general", "quadratic"):
        raise ValueError("mode must be 'general' or 'quadratic'")
    m = _series_time_index(series, t)
    grid = state.grid
    spec = state.spec
    j = int(j_node)
    t_val = float(series.times[m])
    grad_f = series.grad_f[m][-1, j]
    grad_rate = grid.grad_values(state.rate)[-1, j]
    W = state.W[-1, j]
    beta = state.beta_field()[-1, j]
    chi = float(np.linalg.norm(W @ beta))
    tau = np.linalg.solve(W, grad_f)
    alpha = series.alpha
    x = grid.nodes[-1, j]
    if mode == "quadratic":
        s_j = grid.s[j]
        kappa = float(spec.source.curvature(s_j))
        tan = spec.source.boundary_tangent(s_j)
        tau_t = float(np.dot(tau, tan))
        hstar_hess = spec.target.h_hess(state.grad_u[-1, j])
        term1 = -t_val * chi * kappa * tau_t ** 2
        term2 = -t_val * float(grad_f @ hstar_hess @ grad_f)
        term3 = t_val * alpha * float(grad_rate @ hstar_hess @ grad_f)
    else:
        form = _boundary_convexity_contraction(state, j, tau)
        g_pp = spec.cost.G_hessian_p(spec.target, x, state.grad_u[-1, j],
                                     y=state.tmap[-1, j])
        term1 = -t_val * chi * form
        term2 = -t_val * float(grad_f @ g_pp @ grad_f)
        term3 = t_val * alpha * float(grad_rate @ g_pp @ grad_f)
    return term1 + term2 + term3, (term1, term2, term3)


def boundary_tangency_defect(series, state, t):
    """max over boundary nodes of |<W beta, tau>| / (|W beta| max |tau|) for
    tau = W^{-1} grad f; zero in the continuum for the gap solutions.

    The normalization uses the ring maximum of |tau| so nodes where grad f
    happens to vanish do not turn roundoff into an O(1) ratio.
    """
    m = _series_time_index(series, t)
    grad_f = series.grad_f[m][-1]
    W = state.W[-1]
    beta = state.beta_field()[-1]
    wbeta = nm.matvec2(W, beta)
    tau = nm.solve2(W, grad_f)
    num = np.abs(np.sum(wbeta * tau, axis=-1))
    den = nm.norm2(wbeta) * float(np.max(nm.norm2(tau)))
    if np.max(den) <= 1e-300:
        return 0.0
    return float(np.max(num / den))


# --- max principle monitor -----------------------------------------------------

@dataclass
class MonotonicityReport:
    times: np.ndarray
    running_max: np.ndarray
    running_min: np.ndarray
    max_violation: float        # largest upward move of the running max
    min_violation: float        # largest downward move of the running min

    def worst(self):
        return max(self.max_violation, self.min_violation)


def max_principle_monitor(trajectory=None, times=None, sup_series=None,
                          inf_series=None):
    """Monotonicity of the running extrema of the rate field.

    Pass a trajectory (uses the per-step records) or explicit series. The
    violations are the largest forward increase of the max series and the
    largest forward decrease of the min series.
    """
    if trajectory is not None:
        times = trajectory.step_records[:, 0]
        sup_series = trajectory.step_records[:, 2]
        inf_series = trajectory.step_records[:, 3]
    times = np.asarray(times, float)
    sup_series = np.asarray(sup_series, float)
    inf_series = np.asarray(inf_series, float)
    if len(sup_series) == 0:
        return MonotonicityReport(times, sup_series, inf_series, 0.0, 0.0)
    # compare against the running envelope so persistent drift accumulates
    up = float(np.max(sup_series - np.minimum.accumulate(sup_series)))
    down = float(np.max(np.maximum.accumulate(inf_series) - inf_series))
    return MonotonicityReport(times, sup_series, inf_series,
                              max(up, 0.0), max(down, 0.0))
