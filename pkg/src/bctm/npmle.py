"""Data-driven starting values for real-data fits.

The pipeline estimates the marginal survival nonparametrically (Turnbull's
self-consistency NPMLE), regresses ``log(-log S)`` on the latency covariates
to get ``gamma0``, strips the covariate effect to get an empirical baseline
hazard curve, and reads cut-points and ``psi0`` off that curve.  ``beta0``
comes from matching cure probabilities at four covariate profiles.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import BctmError, DomainError, RootFindingError
from .likelihood import BctmLikelihood, Dataset
from .model import ALPHA_EPS, BctmParameters, KnotGrid, log_cure_rate_from_lp
from .simulation import select_cutpoints_quantile

PSI_FLOOR = 1e-4


class NonIdentifiableWarning(UserWarning):
    """A regression slope has no design variation and was set to 0."""


class CutpointFallbackWarning(UserWarning):
    """Inflection cut-points were unavailable; quantile knots were used."""


@dataclass(frozen=True)
class NpmleEstimate:
    """Turnbull NPMLE of the marginal survival function.

    ``support`` holds the finite innermost intervals ``(p, q]`` in order and
    ``mass`` their probabilities; ``mass_at_infinity`` is the probability
    left beyond every finite limit.  ``time_points`` are the unique finite
    interval limits of the data.
    """

    support: np.ndarray
    mass: np.ndarray
    mass_at_infinity: float
    time_points: np.ndarray
    n_iter: int
    converged: bool

    def survival_at(self, t):
        """``S(t) = P(T > t)`` with unresolved mass in ``(p, q]`` kept above ``t``."""
        t = np.asarray(t, dtype=float)
        q = self.support[:, 1]
        out = self.mass_at_infinity + np.sum(np.where(q[None, :] > t.reshape(-1, 1), self.mass[None, :], 0.0), axis=1)
        out = np.minimum(out, 1.0)
        return out.reshape(t.shape)[()] if t.ndim == 0 else out.reshape(t.shape)

    def survival_points(self):
        """``(t_j, S_j)`` at the unique finite time points."""
        return self.time_points, self.survival_at(self.time_points)


def _innermost_intervals(left, right):
    # rights sort before lefts at equal values because intervals are (l, r]
    vals = np.concatenate([left, right])
    kind = np.concatenate([np.ones(left.size), np.zeros(right.size)])
    order = np.lexsort((kind, vals))
    vals, kind = vals[order], kind[order]
    support = [(vals[k], vals[k + 1]) for k in range(vals.size - 1) if kind[k] == 1 and kind[k + 1] == 0]
    return np.array(support, dtype=float).reshape(-1, 2)


def turnbull_npmle(data: Dataset, tol: float = 1e-8, max_iter: int = 100_000) -> NpmleEstimate:
    """Self-consistency NPMLE for interval-censored data ``(l_i, r_i]``."""
    left, right = data.left, data.right
    if left.size == 0:
        raise DomainError("empty dataset")
    if np.all(np.isinf(right)) and np.all(left == 0):
        raise DomainError("no finite interval limits: every observation is (0, inf)")
    support = _innermost_intervals(left, right)
    compat = (left[:, None] <= support[None, :, 0]) & (support[None, :, 1] <= right[:, None])
    compat = compat.astype(float)
    n, m = compat.shape
    s = np.full(m, 1.0 / m)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        denom = compat @ s
        new = s * (compat.T @ (1.0 / denom)) / n
        change = np.max(np.abs(new - s))
        s = new
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"self-consistency did not reach tol={tol} in {max_iter} iterations", RuntimeWarning)
    s = s / s.sum()
    finite = np.isfinite(support[:, 1])
    limits = np.concatenate([left, right[np.isfinite(right)]])
    return NpmleEstimate(
        support=support[finite],
        mass=s[finite],
        mass_at_infinity=float(s[~finite].sum()),
        time_points=np.unique(limits),
        n_iter=it,
        converged=converged,
    )


def nearest_rows(t, data: Dataset) -> np.ndarray:
    """Index of the observation with a finite limit nearest to each ``t``.

    Ties go to the lowest index.
    """
    t = np.asarray(t, dtype=float)
    dl = np.abs(data.left[None, :] - t[:, None])
    dr = np.abs(data.right[None, :] - t[:, None])
    dist = np.fmin(dl, np.where(np.isfinite(dr), dr, np.inf))
    return np.argmin(dist, axis=1)


def loglog_regression_gamma0(npmle: NpmleEstimate, data: Dataset):
    """Regress ``log(-log S_j)`` on ``x_j`` with an intercept.

    Each ``t_j`` takes the latency row of the observation whose finite limit
    is nearest.  Returns ``(gamma0, intercept)``; the intercept estimates
    ``log(-log S0)``.  Slopes with no variation in the design are set to 0
    and a :class:`NonIdentifiableWarning` is issued.
    """
    t, s = npmle.survival_points()
    return loglog_fit(s, data.X[nearest_rows(t, data)])


def loglog_fit(s, x):
    """Least squares for ``log(-log s) = c + x @ gamma`` on the points with ``0 < s < 1``."""
    s = np.asarray(s, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != s.size:
        x = x.reshape(s.size, -1)
    use = (s > 0) & (s < 1)
    q2 = x.shape[1]
    if use.sum() < q2 + 2:
        raise DomainError(f"need at least {q2 + 2} survival points strictly inside (0, 1), got {int(use.sum())}")
    y = np.log(-np.log(s[use]))
    xs = x[use]
    varying = np.ptp(xs, axis=0) > 0
    if not varying.all():
        warnings.warn(f"latency covariates {np.flatnonzero(~varying).tolist()} do not vary; slopes set to 0", NonIdentifiableWarning)
    design = np.column_stack([np.ones(y.size), xs[:, varying]])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    gamma = np.zeros(q2)
    gamma[varying] = coef[1:]
    return gamma, float(coef[0])


def hazard_curve_from_survival(t, s, lp):
    """Empirical baseline hazard from marginal survival points.

    Removes the PH factor, ``S0_j = S_j ** exp(-lp_j)``, then takes
    ``H_j = -log S0_j`` and forward differences ``h_j``.  Points with
    ``S_j = 0`` are dropped; negative increments are floored at 0 with a
    warning.  Returns ``(t[:-1], h, H)``.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    lp = np.broadcast_to(np.asarray(lp, dtype=float), t.shape)
    keep = s > 0
    t, s, lp = t[keep], s[keep], lp[keep]
    if t.size < 2:
        raise DomainError("need at least two survival points for a hazard curve")
    H = -np.log(s) * np.exp(-lp)
    h = np.diff(H) / np.diff(t)
    if np.any(h < 0):
        warnings.warn(f"{int(np.sum(h < 0))} negative hazard increments floored at 0", RuntimeWarning)
        h = np.maximum(h, 0.0)
    return t[:-1], h, H


def empirical_baseline_hazard(npmle: NpmleEstimate, gamma0, data: Dataset):
    """``(t_j, h_j)`` pairs approximating the baseline hazard."""
    t, s = npmle.survival_points()
    lp = data.X[nearest_rows(t, data)] @ np.asarray(gamma0, dtype=float)
    tt, h, _ = hazard_curve_from_survival(t, s, lp)
    return tt, h


def _inflection_points(t, h, k):
    # change of slope of the piecewise-linear curve through (t, h), at interior points
    if t.size < 3:
        return None
    slope = np.diff(h) / np.diff(t)
    change = np.abs(np.diff(slope))
    scale = max(np.max(np.abs(slope)), 1e-300)
    cand = np.flatnonzero(change > 1e-9 * scale)
    if cand.size < k:
        return None
    top = cand[np.argsort(-change[cand], kind="stable")[:k]]
    return np.sort(t[top + 1])


def suggest_cutpoints(hazard_curve, B: int, mode: str = "inflection", data: Dataset | None = None) -> KnotGrid:
    """Knots from the empirical hazard curve or from limit quantiles.

    Inflection mode keeps ``tau_0 = 0``, puts ``tau_B`` at the largest
    finite limit, and uses the ``B - 1`` interior curve points with the
    largest absolute slope change.  If there are not enough such points it
    falls back to quantile knots with a :class:`CutpointFallbackWarning`.
    """
    if mode not in ("inflection", "quantile"):
        raise DomainError("mode must be 'inflection' or 'quantile'")
    if data is None:
        raise DomainError("data are required to place tau_B and quantile knots")
    if mode == "quantile":
        return select_cutpoints_quantile(data, B)
    t, h = (np.asarray(a, dtype=float) for a in hazard_curve)
    if t.size == 0:
        raise DomainError("empty hazard curve")
    limits = np.concatenate([data.left, data.right])
    tau_b = float(np.max(limits[np.isfinite(limits)]))
    picks = _inflection_points(t, h, B - 1) if B > 1 else np.zeros(0)
    if picks is not None:
        picks = picks[(picks > 0) & (picks < tau_b)]
    if picks is None or picks.size < B - 1:
        warnings.warn("not enough inflection points; using quantile knots", CutpointFallbackWarning)
        return select_cutpoints_quantile(data, B)
    return KnotGrid(np.concatenate([[0.0], picks, [tau_b]]))


def initial_psi_from_curve(hazard_curve, knots: KnotGrid) -> np.ndarray:
    """Linear interpolation of the hazard curve at the knots, floored at 1e-4."""
    t, h = (np.asarray(a, dtype=float) for a in hazard_curve)
    if t.size == 0:
        raise DomainError("empty hazard curve")
    return np.maximum(np.interp(knots.tau, t, h), PSI_FLOOR)


def _lp_for_cure_rate(p, alpha):
    """Linear predictor whose cure rate is ``p``."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("target cure probabilities must lie in (0, 1)")
    if abs(alpha) < ALPHA_EPS:
        return np.log(-np.log(p))
    return np.log(np.expm1(-alpha * np.log(p)) / alpha)


def solve_beta0_system(targets, alpha0: float = 0.5, strict: bool = True) -> np.ndarray:
    """Incidence coefficients matching target cure probabilities at given profiles.

    ``targets`` is a sequence of ``(z_row, p)`` pairs.  The cure rate is
    inverted in closed form to a target linear predictor per profile and the
    linear system is solved by least squares (minimum norm when the profiles
    are rank deficient).  If the fitted cure rates miss a target by more
    than 1e-8, ``strict`` raises :class:`RootFindingError`; otherwise a
    warning is issued.
    """
    Z = np.array([np.asarray(z, dtype=float) for z, _ in targets])
    p = np.array([float(v) for _, v in targets])
    eta = _lp_for_cure_rate(p, alpha0)
    beta, *_ = np.linalg.lstsq(Z, eta, rcond=None)
    fitted = np.exp(log_cure_rate_from_lp(alpha0, Z @ beta))
    residual = float(np.max(np.abs(fitted - p)))
    if residual > 1e-8:
        msg = f"cure-probability targets not attainable; max residual {residual:.3g}"
        if strict:
            raise RootFindingError(msg, residual)
        warnings.warn(msg, RuntimeWarning)
    return beta


def default_beta0_targets(data: Dataset, group: int):
    """Four ``(z, p)`` targets built from a binary arm indicator in ``Z[:, group]``.

    Other covariates sit at their minimum or their mean.  At the minimum the
    target is the arm's censoring proportion; at the mean it is half that.
    """
    Z = data.Z
    if not 1 <= group < Z.shape[1]:
        raise DomainError("group must index a non-intercept incidence column")
    arm = Z[:, group]
    if not np.all(np.isin(arm, (0.0, 1.0))):
        raise DomainError("group column must be binary 0/1")
    others = [j for j in range(1, Z.shape[1]) if j != group]
    lo = Z[:, others].min(axis=0)
    mean = Z[:, others].mean(axis=0)
    targets = []
    for setting, factor in ((lo, 1.0), (mean, 0.5)):
        for a in (1.0, 0.0):
            members = arm == a
            if not members.any():
                raise DomainError(f"no subjects with group value {a:g}")
            cens = float(np.mean(data.delta[members] == 0))
            z = np.empty(Z.shape[1])
            z[0] = 1.0
            z[others] = setting
            z[group] = a
            targets.append((z, factor * cens))
    return targets


@dataclass(frozen=True)
class InitBundle:
    alpha0: float
    beta0: np.ndarray
    gamma0: np.ndarray
    psi0: np.ndarray
    knots: KnotGrid
    baseline_hazard_curve: tuple
    npmle: NpmleEstimate

    def parameters(self) -> BctmParameters:
        return BctmParameters(self.alpha0, self.psi0, self.beta0, self.gamma0)


def npmle_initialize(
    data: Dataset,
    B: int,
    group: int | None = None,
    knot_mode: str = "inflection",
    alpha0: float = 0.5,
    knots: KnotGrid | None = None,
) -> InitBundle:
    """Run the whole initialization pipeline for a ``B``-knot fit.

    Without a binary ``group`` column, ``beta0`` falls back to the intercept
    matching the overall censoring proportion with zero slopes.  ``knots``,
    when given, overrides ``knot_mode``.
    """
    est = turnbull_npmle(data)
    gamma0, _ = loglog_regression_gamma0(est, data)
    curve = empirical_baseline_hazard(est, gamma0, data)
    if knots is None:
        knots = suggest_cutpoints(curve, B, knot_mode, data)
    elif knots.B != B:
        raise DomainError("explicit knots disagree with B")
    psi0 = initial_psi_from_curve(curve, knots)
    if group is None:
        cens = float(np.mean(data.delta == 0))
        if not 0 < cens < 1:
            raise BctmError("cannot match a cure rate when every subject is censored or every subject has an event")
        beta0 = np.zeros(data.Z.shape[1])
        beta0[0] = float(_lp_for_cure_rate(cens, alpha0))
    else:
        beta0 = solve_beta0_system(default_beta0_targets(data, group), alpha0, strict=False)
    params = BctmParameters(alpha0, psi0, beta0, gamma0)
    if not np.isfinite(BctmLikelihood(data, knots).observed(params.to_vector())):
        # a spiky curve can saturate the cumulative hazard before late intervals
        t, h = curve
        level = max(float(np.sum(h * np.diff(np.append(t, t[-1]))) / max(t[-1] - t[0], 1e-12)), PSI_FLOOR)
        warnings.warn(f"interpolated psi0 gives a zero-probability interval; using the average hazard {level:.4g}", RuntimeWarning)
        psi0 = np.full(knots.B + 1, level)
    return InitBundle(alpha0, beta0, gamma0, psi0, knots, curve, est)
