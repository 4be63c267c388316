"""EM estimation with simultaneous maximization over all parameters.

Each M-step maximizes the expected complete-data log-likelihood over
``alpha``, ``psi``, ``beta`` and ``gamma`` jointly, with ``alpha`` boxed to
``[0, 1]`` and the knot hazards kept nonnegative.  Standard errors come from
the inverse of the observed information, computed by finite differences.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize

from .exceptions import BctmError, DomainError, LikelihoodDegenerateError, NumericalDerivativeError
from .likelihood import BctmLikelihood, Dataset, _check_degenerate, aic, numerical_hessian
from .model import BctmParameters, KnotGrid

OPTIMIZERS = ("simplex", "quasi-newton-with-bounds")


@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-3
    max_em_iters: int = 500
    optimizer: str = "simplex"
    optimizer_tol: float = 1e-6
    optimizer_max_evals: int = 5000
    alpha_bounds: tuple[float, float] = (0.0, 1.0)
    psi_lower_bound: float = 0.0

    def __post_init__(self):
        if self.tol <= 0 or self.optimizer_tol <= 0:
            raise DomainError("tolerances must be positive")
        lo, hi = self.alpha_bounds
        if not 0.0 <= lo <= hi <= 1.0:
            raise DomainError("alpha bounds must satisfy 0 <= lo <= hi <= 1")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"optimizer must be one of {OPTIMIZERS}")
        if self.max_em_iters < 1 or self.optimizer_max_evals < 1:
            raise DomainError("iteration limits must be positive")


@dataclass
class FitResult:
    theta_hat: BctmParameters
    se: np.ndarray
    vcov: np.ndarray
    loglik: float
    aic: float
    n_params: int
    n_em_iters: int
    converged: bool
    loglik_trace: list[float]
    knots: KnotGrid
    names: list[str]
    boundary: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    singular: bool = False
    restricted: bool = False
    se_error: str | None = None
    fixed_alpha: float | None = None
    elapsed: float = 0.0


class MStepResult(NamedTuple):
    params: BctmParameters
    progressed: bool
    value: float


class StandardErrors(NamedTuple):
    se: np.ndarray
    vcov: np.ndarray
    boundary: np.ndarray
    singular: bool
    restricted: bool = False


def _bounds(n_psi: int, dim: int, config: EmConfig):
    lo = np.full(dim, -np.inf)
    hi = np.full(dim, np.inf)
    lo[0], hi[0] = config.alpha_bounds
    lo[1 : 1 + n_psi] = config.psi_lower_bound
    return lo, hi


def _default_step(x0):
    # absolute floor on the step so tiny starting hazards still get explored
    return 0.1 * np.maximum(np.abs(x0), 0.05)


def _initial_simplex(x0, lo, hi, step=None):
    step = _default_step(x0) if step is None else step
    sim = np.tile(x0, (x0.size + 1, 1))
    for j in range(x0.size):
        v = x0[j] + step[j]
        if v > hi[j]:
            v = x0[j] - step[j]
        sim[j + 1, j] = np.clip(v, lo[j], hi[j])
    return sim


def _maximize(q, x0, lo, hi, config: EmConfig, free=None, step=None, q_grad=None):
    """Maximize ``q`` over the free coordinates inside the box ``[lo, hi]``.

    ``q_grad``, when given, returns ``(value, gradient)`` and is used by the
    quasi-Newton optimizer; otherwise gradients are taken numerically.
    """
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    free = np.ones(x0.size, dtype=bool) if free is None else np.asarray(free)
    f0 = q(x0)
    if not np.isfinite(f0):
        raise BctmError("M-step objective is not finite at the starting point")

    def full(sub):
        x = x0.copy()
        x[free] = sub
        return x

    penalty = np.inf if config.optimizer == "simplex" else 1e20

    def neg(sub):
        v = q(full(sub))
        return -v if np.isfinite(v) else penalty

    flo, fhi = lo[free], hi[free]
    bounds = list(zip(np.where(np.isfinite(flo), flo, None), np.where(np.isfinite(fhi), fhi, None)))
    if config.optimizer == "simplex":
        res = minimize(
            neg,
            x0[free],
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "xatol": config.optimizer_tol,
                "fatol": config.optimizer_tol,
                "maxfev": config.optimizer_max_evals,
                "initial_simplex": _initial_simplex(x0[free], flo, fhi, None if step is None else step[free]),
                "adaptive": True,
            },
        )
    else:
        # scipy's ftol is relative to |Q|, which is in the hundreds here
        opts = {"ftol": config.optimizer_tol**2, "gtol": config.optimizer_tol, "maxfun": config.optimizer_max_evals}
        if q_grad is None:
            res = minimize(neg, x0[free], method="L-BFGS-B", bounds=bounds, options=opts)
        else:

            def neg_grad(sub):
                v, g = q_grad(full(sub))
                if not np.isfinite(v) or not np.all(np.isfinite(g[free])):
                    return penalty, np.zeros(sub.size)
                return -v, -g[free]

            res = minimize(neg_grad, x0[free], jac=True, method="L-BFGS-B", bounds=bounds, options=opts)
    x = full(np.clip(res.x, flo, fhi))
    fx = q(x)
    if not np.isfinite(fx) or fx < f0:
        return x0, False, f0
    return x, True, fx


def mstep_maximize(q: Callable[[np.ndarray], float], init: BctmParameters, config: EmConfig | None = None) -> MStepResult:
    """Maximize the closure ``q`` (a function of the flat parameter vector) from ``init``."""
    config = config or EmConfig()
    x0 = init.to_vector()
    lo, hi = _bounds(init.psi.size, x0.size, config)
    x, progressed, value = _maximize(q, x0, lo, hi, config)
    return MStepResult(BctmParameters.from_vector(x, init.psi.size, init.beta.size), progressed, value)


def _invert_information(info):
    singular = False
    try:
        cond = np.linalg.cond(info)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned information")
        vcov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        vcov = np.linalg.pinv(info)
        singular = True
    return 0.5 * (vcov + vcov.T), singular


def standard_errors(theta_hat: BctmParameters, data: Dataset, knots: KnotGrid) -> StandardErrors:
    """Covariance from the inverse negative Hessian of the observed log-likelihood.

    Coordinates on the boundary of the parameter box (``alpha`` at 0 or 1,
    a knot hazard at 0) are flagged; their SEs are still reported.  When the
    score pushes a boundary coordinate outward the full information can be
    indefinite; the interior block is then inverted on its own, boundary
    coordinates get ``1 / sqrt(I_jj)`` and ``restricted`` is set.
    """
    lik = BctmLikelihood(data, knots)
    theta = theta_hat.to_vector()
    if not np.isfinite(lik.observed(theta)):
        raise LikelihoodDegenerateError("observed log-likelihood is not finite at theta_hat")
    lo, _ = _bounds(theta_hat.psi.size, theta.size, EmConfig())
    info = -numerical_hessian(lik.observed, theta, lower=lo)
    boundary = np.zeros(theta.size, dtype=bool)
    boundary[0] = theta[0] < 1e-6 or theta[0] > 1 - 1e-6
    boundary[1 : 1 + theta_hat.psi.size] = theta_hat.psi < 1e-6
    vcov, singular = _invert_information(info)
    restricted = False
    if np.any(np.diag(vcov) < 0) and boundary.any() and not boundary.all():
        inner = ~boundary
        sub, singular = _invert_information(info[np.ix_(inner, inner)])
        if np.all(np.diag(sub) >= 0):
            restricted = True
            vcov = np.zeros_like(info)
            vcov[np.ix_(inner, inner)] = sub
            idx = np.flatnonzero(boundary)
            diag_b = info[idx, idx]
            with np.errstate(divide="ignore"):
                vcov[idx, idx] = np.where(diag_b > 0, 1.0 / diag_b, np.nan)
    diag = np.diag(vcov)
    se = np.where(diag >= 0, np.sqrt(np.abs(diag)), np.nan)
    return StandardErrors(se, vcov, boundary, singular, restricted)


def _relative_change(new, old, tol):
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), tol)))


def fit_em(
    data: Dataset,
    knots: KnotGrid,
    init: BctmParameters,
    config: EmConfig | None = None,
    *,
    fix_alpha: float | None = None,
    compute_se: bool = True,
) -> FitResult:
    """Fit the cure model by EM from ``init``.

    With ``fix_alpha`` set, the transformation parameter is held at that
    value and only the remaining coordinates are estimated.
    """
    config = config or EmConfig()
    start = time.perf_counter()
    lik = BctmLikelihood(data, knots)
    if init.psi.size != lik.n_psi or init.beta.size != lik.n_beta or init.gamma.size != lik.n_gamma:
        raise DomainError("initial parameters do not match the data and knot dimensions")
    theta = init.to_vector()
    lo, hi = _bounds(lik.n_psi, lik.dim, config)
    free = np.ones(lik.dim, dtype=bool)
    if fix_alpha is not None:
        if not 0.0 <= fix_alpha <= 1.0:
            raise DomainError("fixed alpha must lie in [0, 1]")
        theta[0] = fix_alpha
        free[0] = False
    theta = np.clip(theta, lo, hi)
    ll = lik.observed(theta)
    if not np.isfinite(ll):
        try:
            _check_degenerate(lik, theta)
        except LikelihoodDegenerateError as exc:
            exc.iteration = 0
            raise
        raise LikelihoodDegenerateError("observed log-likelihood is not finite at the initial values", iteration=0)
    trace = [ll]
    converged = False
    n_iter = 0
    step = None
    for k in range(1, config.max_em_iters + 1):
        n_iter = k
        w = lik.weights(theta)
        new, progressed, _ = _maximize(
            lambda th: lik.q(th, w), theta, lo, hi, config, free, step, lambda th: lik.q_and_grad(th, w, floored=True)
        )
        if not progressed:
            break
        ll_new = lik.observed(new)
        if not np.isfinite(ll_new):
            raise LikelihoodDegenerateError("observed log-likelihood became non-finite", iteration=k)
        trace.append(ll_new)
        change = _relative_change(new, theta, config.tol)
        # EM steps shrink geometrically, so the next simplex can start near the last move
        step = np.clip(4.0 * np.abs(new - theta), 10 * config.optimizer_tol, _default_step(new))
        theta = new
        if change < config.tol:
            converged = True
            break
    params = lik.params(theta)
    p_n = lik.dim
    se_error = None
    if compute_se:
        try:
            se, vcov, boundary, singular, restricted = standard_errors(params, data, knots)
        except NumericalDerivativeError as exc:
            # e.g. a fit drifting along a ridge with near-zero hazards; keep the estimate
            se, vcov = np.full(p_n, np.nan), np.full((p_n, p_n), np.nan)
            boundary, singular, restricted = np.zeros(p_n, dtype=bool), True, False
            se_error = str(exc)
    else:
        se, vcov = np.full(p_n, np.nan), np.full((p_n, p_n), np.nan)
        boundary, singular, restricted = np.zeros(p_n, dtype=bool), False, False
    ll = trace[-1]
    return FitResult(
        theta_hat=params,
        se=se,
        vcov=vcov,
        loglik=ll,
        aic=aic(ll, p_n),
        n_params=p_n,
        n_em_iters=n_iter,
        converged=converged,
        loglik_trace=trace,
        knots=knots,
        names=params.names(),
        boundary=boundary,
        singular=singular,
        restricted=restricted,
        se_error=se_error,
        fixed_alpha=fix_alpha,
        elapsed=time.perf_counter() - start,
    )


@dataclass
class ProfileResult:
    best: FitResult
    table: list[tuple[float, float | None, str | None]]
    fits: dict[float, FitResult]


def profile_fit(
    data: Dataset,
    knots: KnotGrid,
    init: BctmParameters,
    config: EmConfig | None = None,
    alpha_grid=None,
) -> ProfileResult:
    """Profile likelihood over ``alpha``: one EM fit per grid value with alpha frozen."""
    grid = np.round(np.linspace(0, 1, 11), 10) if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    if grid.size == 0 or np.any((grid < 0) | (grid > 1)):
        raise DomainError("alpha grid must be nonempty with values in [0, 1]")
    table = []
    fits = {}
    for a in grid:
        try:
            fit = fit_em(data, knots, init, config, fix_alpha=float(a))
        except BctmError as exc:
            table.append((float(a), None, str(exc)))
            continue
        fits[float(a)] = fit
        table.append((float(a), fit.loglik, None))
    if not fits:
        raise BctmError("every profile grid point failed")
    best = max(fits.values(), key=lambda f: f.loglik)
    return ProfileResult(best, table, fits)
