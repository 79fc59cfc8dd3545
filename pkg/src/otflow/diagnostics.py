"""Run monitors and the rate-extraction pipeline.

Collects the per-state scalar monitors (boundary alignment of W beta with the
outward normal, mass balance, extrema of the rate field), fits exponential
decay rates to convergence series, and turns the gap solutions' Harnack
structure into the oscillation-decay envelope that certifies the exponential
convergence of the run.
"""

from dataclasses import dataclass

import numpy as np

from . import _numerics as nm
from .errors import DegenerateDenominator, NoDecayWindow


@dataclass
class AlignmentReport:
    max_sin: float      # max over boundary nodes of |sin angle(W beta, nu)|
    min_chi: float      # min over boundary nodes of |W beta|


def wbeta_alignment(state):
    """Alignment of W beta with the outward normal on the boundary ring."""
    beta = state.beta_field()[-1]
    wbeta = nm.matvec2(state.W[-1], beta)
    chi = nm.norm2(wbeta)
    nu = state.grid.boundary_normals
    sin = np.abs(nm.cross2(wbeta, nu)) / chi
    return AlignmentReport(max_sin=float(np.max(sin)), min_chi=float(np.min(chi)))


# --- exponential rate fitting ---------------------------------------------------

@dataclass
class RateFit:
    sigma: float
    amplitude: float
    t_lo: float
    t_hi: float
    r2: float
    n_samples: int


def fit_rate(times, values, window=None, min_samples=10):
    """Least-squares exponential fit value = amplitude exp(-sigma t).

    The fit window defaults to everything after the series' last local
    maximum (the global argmax for a rise-then-decay series); pass
    ``window = (t_lo, t_hi)`` to override, e.g. to cut a tail that has hit a
    floor. Nonpositive samples are dropped. Raises NoDecayWindow when fewer
    than ``min_samples`` usable samples remain or the series does not decay.
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    keep = np.isfinite(values) & (values > 0)
    times, values = times[keep], values[keep]
    if window is not None:
        lo, hi = window
        m = (times >= lo) & (times <= hi)
        times, values = times[m], values[m]
    else:
        if len(values):
            start = int(np.argmax(values))
            times, values = times[start:], values[start:]
    if len(values) < max(2, min_samples):
        raise NoDecayWindow(
            f"only {len(values)} usable samples (need {min_samples})")
    logs = np.log(values)
    slope, intercept = np.polyfit(times, logs, 1)
    pred = slope * times + intercept
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    ss_res = float(np.sum((logs - pred) ** 2))
    if ss_tot <= 1e-28 or slope >= 0:
        raise NoDecayWindow("series does not decay on the fit window")
    r2 = 1.0 - ss_res / ss_tot
    return RateFit(sigma=float(-slope), amplitude=float(np.exp(intercept)),
                   t_lo=float(times[0]), t_hi=float(times[-1]), r2=r2,
                   n_samples=len(values))


@dataclass
class AffineFit:
    """Least-squares fit of an affine-in-features bound y = c1 f1 + c2 f2."""

    c1: float
    c2: float
    max_excess: float    # max of (data - fit); shift c1 by this for an envelope


def fit_affine(t, y, features=("1", "t")):
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    keep = np.isfinite(y)
    t, y = t[keep], y[keep]
    cols = []
    for f in features:
        if f == "1":
            cols.append(np.ones_like(t))
        elif f == "t":
            cols.append(t)
        elif f == "1/t":
            cols.append(1.0 / t)
        else:
            raise ValueError(f"unknown feature {f}")
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return AffineFit(c1=float(coef[0]), c2=float(coef[1]),
                     max_excess=float(np.max(resid)) if len(resid) else 0.0)


@dataclass
class EnvelopeFit:
    """Horizon-independent upper bound y <= c1 f1(t) + c2 f2(t).

    The slope coefficient is the least-squares value clamped at zero (a bound
    that grows is never needed by a decaying series) and the constant is the
    tight intercept; both are then stable once the series' early maximum is
    inside the window, which is the executable meaning of bounds whose
    constants do not depend on the horizon.
    """

    c1: float
    c2: float


def _features(name, t):
    if name == "1":
        return np.ones_like(t)
    if name == "t":
        return t
    if name == "1/t":
        return 1.0 / t
    raise ValueError(f"unknown feature {name}")


def fit_envelope(t, y, features=("1", "t")):
    """Upper-envelope fit: clamp the varying coefficient of a least-squares
    fit at zero, then take the tight constant term."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    keep = np.isfinite(y)
    t, y = t[keep], y[keep]
    base = fit_affine(t, y, features)
    c2 = max(0.0, base.c2)
    c1 = float(np.max((y - c2 * _features(features[1], t))
                      / _features(features[0], t)))
    return EnvelopeFit(c1=c1, c2=c2)


def sublinearity_stability(t, y, features=("1", "t")):
    """Stability of the envelope bound under halving the horizon: the sup
    distance between the [0, T/2]- and [0, T]-fitted bounds on the common
    window, relative to the data scale."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    keep = np.isfinite(y)
    t, y = t[keep], y[keep]
    if len(t) < 6:
        raise NoDecayWindow("series too short to compare horizons")
    t_half = t[0] + (t[-1] - t[0]) / 2.0
    m = t <= t_half
    if np.count_nonzero(m) < 4 or np.count_nonzero(~m) < 2:
        raise NoDecayWindow("series too short to compare horizons")
    fit_half = fit_envelope(t[m], y[m], features)
    fit_full = fit_envelope(t, y, features)

    def evaluate(fit, tt):
        return fit.c1 * _features(features[0], tt) + fit.c2 * _features(features[1], tt)

    probe = t[m]
    gap = float(np.max(np.abs(evaluate(fit_half, probe) - evaluate(fit_full, probe))))
    scale = float(np.max(np.abs(y))) or 1.0
    return gap / scale, fit_half, fit_full


# --- Harnack ratios and oscillation decay ----------------------------------------

@dataclass
class HarnackRatioReport:
    times: np.ndarray
    ratios: np.ndarray
    c_max: float
    c_median: float
    eps: float            # (C - 1) / C from the max ratio
    sigma: float          # -log eps


def harnack_ratio_series(series, t_min=1.0, gap_floor=None):
    """C(t) = sup gap(., t) / inf gap(., t + 1) over the series times with
    t >= t_min; the contraction factor eps = (C - 1)/C and rate -log eps are
    derived from the largest ratio."""
    floor = series.floor if gap_floor is None else gap_floor
    ts = series.times
    out_t, out_c = [], []
    for m, t in enumerate(ts):
        if t < t_min - 1e-9:
            continue
        target = t + 1.0
        n = np.argmin(np.abs(ts - target))
        if abs(ts[n] - target) > 1e-9:
            continue
        sup_now = float(np.max(series.gap[m]))
        inf_next = float(np.min(series.gap[n]))
        if inf_next <= floor:
            raise DegenerateDenominator(
                f"inf gap(., {target}) = {inf_next:.3e} at or below the floor")
        out_t.append(t)
        out_c.append(sup_now / inf_next)
    if not out_c:
        raise DegenerateDenominator("no usable (t, t+1) pairs in the series")
    ratios = np.array(out_c)
    c_max = float(np.max(ratios))
    eps = (c_max - 1.0) / c_max
    sigma = float(-np.log(eps)) if 0 < eps < 1 else np.inf
    return HarnackRatioReport(times=np.array(out_t), ratios=ratios, c_max=c_max,
                              c_median=float(np.median(ratios)), eps=eps,
                              sigma=sigma)


@dataclass
class OscillationReport:
    k: np.ndarray
    sup_series: np.ndarray
    inf_series: np.ndarray
    sup_violations: int
    inf_violations: int
    contractive: bool
    tol: float

    @property
    def violations(self):
        return self.sup_violations + self.inf_violations


def oscillation_decay(trajectory, eps, sigma, tol=1e-8, c_harnack=None):
    """Geometric decay envelope of the rate extrema at integer times.

    Checks sup(k+1) <= eps sup(k-1) + tol and
    inf(k) >= -(C-1) sup(0) exp(-sigma (k-1)) - tol; reports the violation
    counts (an eps >= 1 input is reported as non-contractive rather than
    checked).
    """
    ts = trajectory.times()
    k_max = int(np.floor(ts[-1] + 1e-9))
    ks, sups, infs = [], [], []
    for k in range(0, k_max + 1):
        i = np.argmin(np.abs(ts - k))
        if abs(ts[i] - k) > 1e-9:
            continue
        ks.append(k)
        sups.append(float(np.max(trajectory.snapshots[i].rate)))
        infs.append(float(np.min(trajectory.snapshots[i].rate)))
    ks = np.array(ks)
    sups = np.array(sups)
    infs = np.array(infs)
    if not (0 < eps < 1):
        return OscillationReport(ks, sups, infs, 0, 0, contractive=False, tol=tol)
    c_val = c_harnack if c_harnack is not None else 1.0 / (1.0 - eps)
    sup_viol = 0
    for idx in range(2, len(ks)):
        if sups[idx] > eps * sups[idx - 2] + tol:
            sup_viol += 1
    inf_viol = 0
    for idx in range(1, len(ks)):
        bound = -(c_val - 1.0) * sups[0] * np.exp(-sigma * (ks[idx] - 1)) - tol
        if infs[idx] < bound:
            inf_viol += 1
    return OscillationReport(ks, sups, infs, sup_viol, inf_viol,
                             contractive=True, tol=tol)


# --- run summary -------------------------------------------------------------------

def measured_norm_bound(trajectory, n_cost_samples=256):
    """A computable stand-in for the run's regularity scale: the largest of
    the potential's sup norm, gradient, Hessian, and rate over the snapshots,
    together with a sampled bound on the cost and its first two derivative
    tensors over the visited product region."""
    grid = trajectory.grid
    spec = trajectory.spec
    out = 0.0
    step = max(1, len(trajectory.snapshots) // 8)
    for snap in trajectory.snapshots[::step]:
        gx, hess = grid.scalar_calculus(snap.u)
        out = max(out, float(np.max(np.abs(snap.u))),
                  float(np.max(nm.norm2(gx))),
                  float(np.max(np.abs(hess))),
                  float(np.max(np.abs(snap.rate))))
    rng = np.random.default_rng(0)
    idx = rng.integers(0, grid.n_r * grid.n_s, size=n_cost_samples)
    xs = grid.nodes.reshape(-1, 2)[idx]
    st = trajectory.final_state()
    ys = st.tmap.reshape(-1, 2)[idx]
    cost = spec.cost
    out = max(out, float(np.max(np.abs(cost.eval(xs, ys)))),
              float(np.max(np.abs(cost.grad_x(xs, ys)))),
              float(np.max(np.abs(cost.cross_hessian(xs, ys)))),
              float(np.max(np.abs(cost.hess_xx(xs, ys)))))
    return out


def run_summary(trajectory, rate_fit=None, harnack=None):
    """The scalar summary of one run, with nulls where a quantity does not
    apply (e.g. no decay fit for a stationary run)."""
    rec = trajectory.step_records
    final = trajectory.snapshots[-1]
    per_snap_alignment = []
    step = max(1, len(trajectory.snapshots) // 12)
    for i in range(0, len(trajectory.snapshots), step):
        per_snap_alignment.append(wbeta_alignment(trajectory.state_at(i)).max_sin)
    return {
        "sigma": None if rate_fit is None else rate_fit.sigma,
        "R2": None if rate_fit is None else rate_fit.r2,
        "C_harnack": None if harnack is None else harnack.c_max,
        "eps": None if harnack is None else harnack.eps,
        "max_mass_err": float(np.max(rec[:, 4])) if len(rec) else 0.0,
        "max_alignment": float(np.max(per_snap_alignment)),
        "stationary_residual": float(np.max(np.abs(final.rate))),
        "K_measured": measured_norm_bound(trajectory),
    }
