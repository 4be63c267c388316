"""Observed- and complete-data likelihoods, E-step weights and numeric derivatives.

Interval-censored subjects (``delta = 1``) contribute
``log(S_p(l) - S_p(r))``; right-censored subjects (``delta = 0``) contribute
``log S_p(l)``.  In the complete data the cure status of a right-censored
subject is missing and is replaced by its conditional expectation in the
E-step.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .exceptions import (
    DegenerateIncidenceError,
    DomainError,
    LikelihoodDegenerateError,
    NumericalDerivativeError,
)
from .model import (
    ALPHA_EPS,
    BctmParameters,
    CovariateProfile,
    KnotGrid,
    LP_CLAMP,
    baseline_cum_hazard,
    cum_hazard_basis,
)

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class IntervalObservation:
    l: float
    r: float
    delta: int
    profile: CovariateProfile

    def __post_init__(self):
        if not self.l < self.r:
            raise DomainError(f"need l < r, got ({self.l}, {self.r})")
        if self.l < 0:
            raise DomainError("lower limit must be nonnegative")
        if bool(self.delta) != bool(np.isfinite(self.r)):
            raise DomainError("delta must be 1 exactly when r is finite")


@dataclass(frozen=True)
class Dataset:
    """Interval-censored sample stored column-wise.

    ``Z`` is the ``n x (q1 + 1)`` incidence design (first column all ones)
    and ``X`` the ``n x q2`` latency design.
    """

    left: np.ndarray
    right: np.ndarray
    delta: np.ndarray
    Z: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float).ravel()
        right = np.asarray(self.right, dtype=float).ravel()
        delta = np.asarray(self.delta, dtype=int).ravel()
        n = left.size
        Z = np.asarray(self.Z, dtype=float).reshape(n, -1)
        X = np.asarray(self.X, dtype=float).reshape(n, -1)
        if not (right.size == delta.size == n):
            raise DomainError("left, right and delta must have equal length")
        if n == 0:
            raise DomainError("dataset is empty")
        if Z.shape[1] == 0 or np.any(Z[:, 0] != 1.0):
            raise DomainError("incidence design must start with a column of ones")
        bad = np.flatnonzero(~(left < right) | (left < 0))
        if bad.size:
            raise DomainError(f"rows {bad.tolist()} violate 0 <= l < r")
        bad = np.flatnonzero((delta == 1) != np.isfinite(right))
        if bad.size:
            raise DomainError(f"rows {bad.tolist()} have delta inconsistent with r")
        if delta.all() or not delta.any():
            warnings.warn(
                "cure model fit needs both interval- and right-censored subjects",
                stacklevel=3,
            )
        for name, arr in (("left", left), ("right", right), ("delta", delta), ("Z", Z), ("X", X)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_observations(cls, observations) -> "Dataset":
        obs = list(observations)
        return cls(
            left=[o.l for o in obs],
            right=[o.r for o in obs],
            delta=[o.delta for o in obs],
            Z=np.array([o.profile.z for o in obs]),
            X=np.array([o.profile.x for o in obs]).reshape(len(obs), -1),
        )

    def __len__(self) -> int:
        return self.left.size

    def __iter__(self) -> Iterator[IntervalObservation]:
        for i in range(len(self)):
            yield IntervalObservation(
                float(self.left[i]),
                float(self.right[i]),
                int(self.delta[i]),
                CovariateProfile(self.Z[i], self.X[i]),
            )

    @property
    def q1(self) -> int:
        return self.Z.shape[1] - 1

    @property
    def q2(self) -> int:
        return self.X.shape[1]

    @property
    def censoring_rate(self) -> float:
        return float(np.mean(self.delta == 0))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return Dataset(self.left[idx], self.right[idx], self.delta[idx], self.Z[idx], self.X[idx])


@dataclass(frozen=True)
class EStepWeights:
    """Conditional susceptibility probabilities for the right-censored subjects."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if np.any((w < 0) | (w > 1)):
            raise DomainError("E-step weights must lie in [0, 1]")
        object.__setattr__(self, "w", w)


def _log_diff(log_a, log_b):
    """``log(exp(log_a) - exp(log_b))`` and the raw positive gap factor."""
    gap = -np.expm1(log_b - log_a)
    return log_a + np.log(np.maximum(gap, LOG_FLOOR)), gap


class BctmLikelihood:
    """Likelihood pieces for one dataset and knot grid, evaluated on flat vectors.

    The cumulative baseline hazard is linear in ``psi``, so the basis matrices
    for all lower and upper limits are built once here and every evaluation
    reduces to a few matrix-vector products.
    """

    def __init__(self, data: Dataset, knots: KnotGrid):
        self.data = data
        self.knots = knots
        self.n_psi = knots.tau.size
        self.n_beta = data.Z.shape[1]
        self.n_gamma = data.X.shape[1]
        self.dim = 1 + self.n_psi + self.n_beta + self.n_gamma
        self.ic = np.flatnonzero(data.delta == 1)
        self.rc = np.flatnonzero(data.delta == 0)
        # lower limits of every subject, then upper limits of the Δ1 subjects
        self._n = len(data)
        self._rows = np.concatenate([np.arange(self._n), self.ic])
        self._times = np.concatenate([data.left, data.right[self.ic]])
        self.basis = cum_hazard_basis(self._times, knots)
        self._beyond = np.flatnonzero(self._times > knots.tau_max)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        i = 1 + self.n_psi
        return theta[0], theta[1:i], theta[i : i + self.n_beta], theta[i + self.n_beta :]

    def params(self, theta) -> BctmParameters:
        return BctmParameters.from_vector(theta, self.n_psi, self.n_beta)

    def _basis(self, psi):
        """Basis rows, with times past a zero crossing of the extension pulled back."""
        if not self._beyond.size:
            return self.basis
        tau = self.knots.tau
        slope = (psi[-1] - psi[-2]) / (tau[-1] - tau[-2])
        if slope >= 0:
            return self.basis
        cap = tau[-1] + (max(psi[-1], 0.0) / -slope)
        basis = self.basis.copy()
        basis[self._beyond] = cum_hazard_basis(np.minimum(self._times[self._beyond], cap), self.knots)
        return basis

    def _state(self, theta):
        alpha, psi, beta, gamma = self.unpack(theta)
        data = self.data
        rows = self._rows
        lpz = data.Z @ beta
        lpx = data.X @ gamma
        basis = self._basis(psi)
        hr = np.exp(np.minimum(np.maximum(lpx, -LP_CLAMP), LP_CLAMP))[rows]
        lam = hr * (basis @ psi)
        oms = -np.expm1(-lam)
        e = np.exp(np.minimum(np.maximum(lpz, -LP_CLAMP), LP_CLAMP))
        if abs(alpha) < ALPHA_EPS:
            log_pi = -e
            log_sp = -e[rows] * oms
        else:
            ae = alpha * e
            log_pi = -np.log1p(ae) / alpha
            aer = ae[rows]
            log_sp = np.log1p(-(aer / (1.0 + aer)) * oms) / alpha
        return dict(alpha=alpha, lpz=lpz, lpx=lpx, basis=basis, hr=hr, lam=lam, oms=oms, e=e,
                    log_pi=log_pi, log_sp=log_sp)

    def pieces(self, theta):
        """Return ``log pi``, ``log S_p(l)`` for all subjects and ``log S_p(r)`` for Δ1."""
        st = self._state(theta)
        n = self._n
        return st["log_pi"], st["log_sp"][:n], st["log_sp"][n:]

    def _backprop(self, st, c_sp, d_pi):
        """Gradient of ``sum(c_sp * log S_p) + sum(d_pi * log pi)`` with respect to theta."""
        alpha, e, oms, lam = st["alpha"], st["e"], st["oms"], st["lam"]
        rows = self._rows
        er = e[rows]
        surv = 1.0 - oms
        ers = er * surv
        # log S_p = F(e S) - F(e) and log pi = -F(e), where F(x) = log1p(alpha x) / alpha
        dsp_de = surv / (1.0 + alpha * ers) - 1.0 / (1.0 + alpha * er)
        dsp_ds = er / (1.0 + alpha * ers)
        dsp_da = _dF_dalpha(alpha, ers) - _dF_dalpha(alpha, er)
        dpi_de = -1.0 / (1.0 + alpha * e)
        dpi_da = -_dF_dalpha(alpha, e)

        g_alpha = np.dot(c_sp, dsp_da) + np.dot(d_pi, dpi_da)
        g_e = np.bincount(rows, weights=c_sp * dsp_de, minlength=self._n) + d_pi * dpi_de
        g_lpz = g_e * e * (np.abs(st["lpz"]) < LP_CLAMP)
        g_lam = c_sp * dsp_ds * (-surv)
        g_psi = st["basis"].T @ (g_lam * st["hr"])
        g_lpx = np.bincount(rows, weights=g_lam * lam, minlength=self._n) * (np.abs(st["lpx"]) < LP_CLAMP)
        return np.concatenate([[g_alpha], g_psi, self.data.Z.T @ g_lpz, self.data.X.T @ g_lpx])

    def _interval_parts(self, log_sp, floored=False):
        # ``floored`` swaps -inf for a finite log(LOG_FLOOR) so line searches can back off
        n = self._n
        lsl = log_sp[self.ic]
        ratio = np.exp(log_sp[n:] - lsl)
        gap = -np.expm1(log_sp[n:] - lsl)
        ok = gap > LOG_FLOOR
        terms = lsl + np.log(np.maximum(gap, LOG_FLOOR))
        if not floored:
            terms = np.where(gap > 0, terms, -np.inf)
        return terms, ratio, gap, ok

    def interval_terms(self, log_sp_l, log_sp_r):
        terms, gap = _log_diff(log_sp_l[self.ic], log_sp_r)
        terms = np.where(gap > 0, terms, -np.inf)
        return terms, gap

    def _interval_coeffs(self, c_sp, ratio, gap, ok):
        n = self._n
        safe = np.where(ok, gap, 1.0)
        c_sp[self.ic] = np.where(ok, 1.0 / safe, 1.0)
        c_sp[n:] = np.where(ok, -ratio / safe, 0.0)

    def observed(self, theta) -> float:
        """Observed-data log-likelihood; ``-inf`` when some interval has zero mass."""
        st = self._state(theta)
        terms = self._interval_parts(st["log_sp"])[0]
        return float(np.sum(terms) + np.sum(st["log_sp"][self.rc]))

    def observed_and_grad(self, theta, floored=False):
        """Observed log-likelihood and its gradient in theta."""
        st = self._state(theta)
        log_sp = st["log_sp"]
        terms, ratio, gap, ok = self._interval_parts(log_sp, floored)
        value = float(np.sum(terms) + np.sum(log_sp[self.rc]))
        c_sp = np.zeros(log_sp.size)
        self._interval_coeffs(c_sp, ratio, gap, ok)
        c_sp[self.rc] = 1.0
        return value, self._backprop(st, c_sp, np.zeros(self._n))

    def weights(self, theta) -> np.ndarray:
        log_pi, log_sp_l, _ = self.pieces(theta)
        w = -np.expm1(log_pi[self.rc] - log_sp_l[self.rc])
        return np.clip(w, 0.0, 1.0)

    def _q_parts(self, st, w, floored=False):
        terms, ratio, gap, ok = self._interval_parts(st["log_sp"], floored)
        lpi = st["log_pi"][self.rc]
        lsp = st["log_sp"][self.rc]
        # log((1 - pi) S_u(l)) = log(S_p(l) - pi)
        sgap = -np.expm1(lpi - lsp)
        sok = sgap > LOG_FLOOR
        if floored:
            log_sus = lsp + np.log(np.maximum(sgap, LOG_FLOOR))
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                log_sus = np.where(sgap > 0, lsp + np.log(np.maximum(sgap, 0.0)), -np.inf)
        # 0 * log 0 = 0: the masked branch may be nan
        with np.errstate(invalid="ignore"):
            cured = np.where(w < 1.0, (1.0 - w) * lpi, 0.0)
            sus = np.where(w > 0.0, w * log_sus, 0.0)
        value = float(np.sum(terms) + np.sum(cured) + np.sum(sus))
        return value, (ratio, gap, ok), (sgap, sok)

    def q(self, theta, w) -> float:
        """Expected complete-data log-likelihood for fixed weights ``w``."""
        return self._q_parts(self._state(theta), np.asarray(w, dtype=float))[0]

    def q_and_grad(self, theta, w, floored=False):
        """``q`` and its gradient in theta, holding the weights fixed."""
        w = np.asarray(w, dtype=float)
        st = self._state(theta)
        value, ipart, (sgap, sok) = self._q_parts(st, w, floored)
        c_sp = np.zeros(st["log_sp"].size)
        self._interval_coeffs(c_sp, *ipart)
        d_pi = np.zeros(self._n)
        safe = np.where(sok, sgap, 1.0)
        # d/d(log S_p) and d/d(log pi) of log(S_p - pi)
        c_sp[self.rc] = np.where(sok, w / safe, w)
        d_pi[self.rc] = (1.0 - w) - np.where(sok, w * (1.0 - sgap) / safe, 0.0)
        return value, self._backprop(st, c_sp, d_pi)


def _dF_dalpha(alpha, x):
    """Derivative in alpha of ``log1p(alpha x) / alpha``; equals ``-x**2 / 2`` at 0."""
    x = np.asarray(x, dtype=float)
    u = alpha * x
    out = np.empty_like(u)
    small = np.abs(u) < 1e-3
    us, xs = u[small], x[small]
    out[small] = xs * xs * (-0.5 + us * (2.0 / 3.0 + us * (-0.75 + us * 0.8)))
    ul = u[~small]
    # x**2 * g(u) written as a function of u alone so huge x cannot overflow
    out[~small] = (ul / (1.0 + ul) - np.log1p(ul)) / (alpha * alpha)
    return out


def _check_degenerate(lik: BctmLikelihood, theta):
    log_pi, log_sp_l, log_sp_r = lik.pieces(theta)
    _, gap = lik.interval_terms(log_sp_l, log_sp_r)
    bad = np.flatnonzero(~(gap > 0))
    if bad.size:
        i = int(lik.ic[bad[0]])
        raise LikelihoodDegenerateError(
            f"observation {i} has S_p(l) <= S_p(r): zero-probability interval", index=i
        )
    return log_pi, log_sp_l


def _check_incidence(log_pi):
    if np.any(log_pi == 0.0) or np.any(np.exp(log_pi) == 0.0):
        raise DegenerateIncidenceError("cure rate is numerically 0 or 1 for some subject")


def observed_loglik(params: BctmParameters, data: Dataset, knots: KnotGrid) -> float:
    lik = BctmLikelihood(data, knots)
    theta = params.to_vector()
    _check_degenerate(lik, theta)
    return lik.observed(theta)


def complete_loglik(params: BctmParameters, data: Dataset, knots: KnotGrid, eta) -> float:
    """Complete-data log-likelihood with known cure statuses ``eta`` for Δ0."""
    eta = np.asarray(eta)
    if not np.all(np.isin(eta, (0, 1))):
        raise DomainError("cure statuses must be 0 or 1")
    return q_function(params, data, knots, EStepWeights(eta.astype(float)))


def estep_weights(params: BctmParameters, data: Dataset, knots: KnotGrid) -> EStepWeights:
    lik = BctmLikelihood(data, knots)
    log_pi, log_sp_l, _ = lik.pieces(params.to_vector())
    if np.any(np.exp(log_sp_l[lik.rc]) == 0.0):
        i = int(lik.rc[np.flatnonzero(np.exp(log_sp_l[lik.rc]) == 0.0)[0]])
        raise LikelihoodDegenerateError(f"S_p(l) = 0 for observation {i}", index=i)
    return EStepWeights(lik.weights(params.to_vector()))


def q_function(params: BctmParameters, data: Dataset, knots: KnotGrid, weights: EStepWeights) -> float:
    lik = BctmLikelihood(data, knots)
    if weights.w.size != lik.rc.size:
        raise DomainError(f"expected {lik.rc.size} weights, got {weights.w.size}")
    theta = params.to_vector()
    log_pi, _ = _check_degenerate(lik, theta)
    _check_incidence(log_pi[lik.rc])
    return lik.q(theta, weights.w)


def aic(loglik: float, n_params: int) -> float:
    if n_params < 1:
        raise DomainError("need at least one parameter")
    return 2.0 * n_params - 2.0 * loglik


def entropy(w) -> float:
    """Binary entropy summed over weights, using ``0 log 0 = 0``."""
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(w > 0, w * np.log(w), 0.0)
        b = np.where(w < 1, (1 - w) * np.log1p(-w), 0.0)
    return float(-np.sum(a + b))


def fd_steps(at) -> np.ndarray:
    at = np.asarray(at, dtype=float)
    return 1e-4 * np.maximum(np.abs(at), 1.0)


def _eval(f, x, coords):
    v = f(x)
    if not np.isfinite(v):
        raise NumericalDerivativeError(f"non-finite value at stencil point {coords}", coords)
    return v


def numerical_hessian(f: Callable[[np.ndarray], float], at, lower=None) -> np.ndarray:
    """Finite-difference Hessian with steps ``1e-4 * max(|theta_j|, 1)``.

    Differences are central, except that a coordinate whose backward step
    would cross its entry in ``lower`` uses a forward stencil instead.
    """
    x0 = np.asarray(at, dtype=float)
    p = x0.size
    h = fd_steps(x0)
    fwd = np.zeros(p, dtype=bool) if lower is None else x0 - h < np.asarray(lower, dtype=float)
    # mixed stencils step to +h and lo_off; the diagonal stencil is centred on mid
    lo_off = np.where(fwd, 0.0, -h)
    mid = np.where(fwd, h, 0.0)
    f0 = _eval(f, x0, (-1, -1))
    cache = {}

    def at_offsets(offsets, coords):
        key = tuple(sorted(offsets.items()))
        if key not in cache:
            x = x0.copy()
            for k, d in offsets.items():
                x[k] += d
            cache[key] = f0 if not any(offsets.values()) else _eval(f, x, coords)
        return cache[key]

    H = np.empty((p, p))
    for i in range(p):
        fc = at_offsets({i: mid[i]}, (i, i))
        fp = at_offsets({i: mid[i] + h[i]}, (i, i))
        fm = at_offsets({i: mid[i] - h[i]}, (i, i))
        H[i, i] = (fp - 2.0 * fc + fm) / h[i] ** 2
        ai, bi = h[i], lo_off[i]
        for j in range(i):
            aj, bj = h[j], lo_off[j]
            fpp = at_offsets({i: ai, j: aj}, (i, j))
            fpm = at_offsets({i: ai, j: bj}, (i, j))
            fmp = at_offsets({i: bi, j: aj}, (i, j))
            fmm = at_offsets({i: bi, j: bj}, (i, j))
            H[i, j] = (fpp - fpm - fmp + fmm) / ((ai - bi) * (aj - bj))
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)


def numerical_gradient(f: Callable[[np.ndarray], float], at) -> np.ndarray:
    x0 = np.asarray(at, dtype=float)
    h = fd_steps(x0)
    g = np.empty(x0.size)
    for i in range(x0.size):
        e = np.zeros(x0.size)
        e[i] = h[i]
        g[i] = (_eval(f, x0 + e, (i,)) - _eval(f, x0 - e, (i,))) / (2.0 * h[i])
    return g


def loglik_gradient(params: BctmParameters, data: Dataset, knots: KnotGrid) -> np.ndarray:
    lik = BctmLikelihood(data, knots)
    theta = params.to_vector()
    _check_degenerate(lik, theta)
    return numerical_gradient(lik.observed, theta)
