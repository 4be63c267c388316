"""Box-Cox transformation cure model with a piecewise-linear baseline hazard.

The population survival function is obtained by applying the Box-Cox
transform with parameter ``alpha`` to a proportional-hazards latency
survival function.  ``alpha = 1`` gives the mixture cure model and
``alpha = 0`` the promotion time cure model.

All functions broadcast over the time argument ``y``.  Linear predictors are
clamped to ``[-LP_CLAMP, LP_CLAMP]`` before exponentiation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateIncidenceError, DomainError

ALPHA_EPS = 1e-8
LP_CLAMP = 700.0


@dataclass(frozen=True)
class KnotGrid:
    """Cut-points ``0 = tau[0] < tau[1] < ... < tau[B]``."""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float)
        if tau.ndim != 1 or tau.size < 2:
            raise DomainError("a knot grid needs at least two cut-points (B >= 1)")
        if tau[0] != 0.0:
            raise DomainError(f"first cut-point must be 0, got {tau[0]!r}")
        if not np.all(np.diff(tau) > 0):
            raise DomainError("cut-points must be strictly increasing")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @property
    def B(self) -> int:
        return self.tau.size - 1

    @property
    def tau_max(self) -> float:
        return float(self.tau[-1])


@dataclass(frozen=True)
class CovariateProfile:
    """Incidence row ``z`` (leading 1) and latency row ``x`` for one subject."""

    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.array(self.z, dtype=float))
        x = np.atleast_1d(np.array(self.x, dtype=float))
        if z.size == 0 or z[0] != 1.0:
            raise DomainError("incidence row must start with an intercept 1")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class BctmParameters:
    """Parameter vector ``theta = (alpha, psi, beta, gamma)``.

    ``psi`` holds the baseline hazard at each knot, ``beta`` the incidence
    coefficients (intercept first) and ``gamma`` the latency PH
    coefficients.
    """

    alpha: float
    psi: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        psi = np.atleast_1d(np.array(self.psi, dtype=float))
        beta = np.atleast_1d(np.array(self.beta, dtype=float))
        gamma = np.atleast_1d(np.array(self.gamma, dtype=float))
        alpha = float(self.alpha)
        if not 0.0 <= alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
        if np.any(psi < 0) or not np.all(np.isfinite(psi)):
            raise DomainError("knot hazards psi must be finite and nonnegative")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def size(self) -> int:
        return 1 + self.psi.size + self.beta.size + self.gamma.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.psi, self.beta, self.gamma])

    @classmethod
    def from_vector(cls, theta, n_psi: int, n_beta: int) -> "BctmParameters":
        theta = np.asarray(theta, dtype=float)
        return cls(
            alpha=theta[0],
            psi=theta[1 : 1 + n_psi],
            beta=theta[1 + n_psi : 1 + n_psi + n_beta],
            gamma=theta[1 + n_psi + n_beta :],
        )

    def names(self) -> list[str]:
        return parameter_names(self.psi.size - 1, self.beta.size - 1, self.gamma.size)


def parameter_names(B: int, q1: int, q2: int) -> list[str]:
    return (
        ["alpha"]
        + [f"psi_{b}" for b in range(B + 1)]
        + [f"beta_{j}" for j in range(q1 + 1)]
        + [f"gamma_{j}" for j in range(1, q2 + 1)]
    )


def _clamp(lp):
    return np.clip(lp, -LP_CLAMP, LP_CLAMP)


def box_cox(u, alpha: float):
    """Box-Cox transform ``(u**alpha - 1) / alpha``, ``log(u)`` at ``alpha = 0``."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError("Box-Cox transform requires u > 0")
    if abs(alpha) < ALPHA_EPS:
        out = np.log(u)
    else:
        out = np.expm1(alpha * np.log(u)) / alpha
    return out[()] if out.ndim == 0 else out


# -- linear-predictor level kernels ------------------------------------------
# These accept alpha slightly outside [0, 1] so finite-difference stencils can
# straddle the boundary; the formulas are analytic in alpha around 0 and 1.


def link_from_lp(alpha: float, lp):
    e = np.exp(_clamp(lp))
    if abs(alpha) < ALPHA_EPS:
        return e
    return e / (1.0 + alpha * e)


def log_cure_rate_from_lp(alpha: float, lp):
    """``log pi``; for alpha > 0 the cure rate is ``(1 + alpha e^lp)^(-1/alpha)``."""
    e = np.exp(_clamp(lp))
    if abs(alpha) < ALPHA_EPS:
        return -e
    return -np.log1p(alpha * e) / alpha


def log_population_survival_from_lp(alpha: float, lp, cumhaz):
    """``log S_p`` given the incidence predictor and the latency cumulative hazard."""
    e = np.exp(_clamp(lp))
    one_minus_s = -np.expm1(-np.asarray(cumhaz, dtype=float))
    if abs(alpha) < ALPHA_EPS:
        return -e * one_minus_s
    ae = alpha * e
    return np.log1p(-(ae / (1.0 + ae)) * one_minus_s) / alpha


# -- public model functions ---------------------------------------------------


def transform_link(alpha: float, beta, z) -> float:
    """Incidence link ``exp(z'b) / (1 + alpha exp(z'b))`` (``exp(z'b)`` at 0)."""
    lp = float(np.dot(np.asarray(z, dtype=float), np.asarray(beta, dtype=float)))
    return float(link_from_lp(alpha, lp))


def cure_rate(params: BctmParameters, z) -> float:
    lp = float(np.dot(np.asarray(z, dtype=float), params.beta))
    return float(np.exp(log_cure_rate_from_lp(params.alpha, lp)))


def _check_time(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(np.isnan(y)):
        raise DomainError("time must be nonnegative")
    return y


def _scalarize(a):
    return a[()] if np.ndim(a) == 0 else a


def baseline_hazard(y, knots: KnotGrid, psi):
    """Piecewise-linear baseline hazard through ``(tau_b, psi_b)``.

    Segments are half-open ``[tau_{b-1}, tau_b)`` except the last, which is
    closed.  Past ``tau_B`` the last piece is extended and floored at zero.
    """
    y = _check_time(y)
    tau = knots.tau
    psi = np.asarray(psi, dtype=float)
    B = knots.B
    seg = np.clip(np.searchsorted(tau, y, side="right") - 1, 0, B - 1)
    slope = np.diff(psi) / np.diff(tau)
    h = psi[seg + 1] + slope[seg] * (y - tau[seg + 1])
    h = np.where(y > tau[-1], np.maximum(h, 0.0), h)
    return _scalarize(h)


def baseline_cum_hazard(y, knots: KnotGrid, psi):
    """Exact integral of :func:`baseline_hazard` over ``[0, y]``."""
    y = _check_time(y)
    tau = knots.tau
    psi = np.asarray(psi, dtype=float)
    slope = np.diff(psi) / np.diff(tau)
    total = np.zeros_like(y)
    for b in range(1, knots.B + 1):
        lo, hi = tau[b - 1], tau[b]
        m = np.minimum(y, hi)
        piece = psi[b] * (m - lo) + slope[b - 1] * ((m * m - lo * lo) / 2.0 - hi * (m - lo))
        total = total + np.where(y >= lo, piece, 0.0)
    # extension of the last linear piece beyond tau_B
    d = np.maximum(y - tau[-1], 0.0)
    s = slope[-1]
    if s < 0:
        d = np.minimum(d, -psi[-1] / s) if psi[-1] > 0 else np.zeros_like(d)
    total = total + psi[-1] * d + s * d * d / 2.0
    return _scalarize(total)


def cum_hazard_basis(y, knots: KnotGrid) -> np.ndarray:
    """Matrix ``A`` with ``baseline_cum_hazard(y) == A @ psi``.

    Exact for ``y <= tau_B`` and, past ``tau_B``, whenever the extended last
    piece stays nonnegative.
    """
    y = np.asarray(y, dtype=float).ravel()
    tau = knots.tau
    A = np.zeros((y.size, tau.size))
    for b in range(1, tau.size):
        lo, hi = tau[b - 1], tau[b]
        width = hi - lo
        m = np.clip(y, lo, hi)
        A[:, b - 1] += (width * width - (hi - m) ** 2) / (2.0 * width)
        A[:, b] += (m - lo) ** 2 / (2.0 * width)
    d = np.maximum(y - tau[-1], 0.0)
    width = tau[-1] - tau[-2]
    A[:, -1] += d + d * d / (2.0 * width)
    A[:, -2] -= d * d / (2.0 * width)
    return A


def _lp(vec, row):
    return float(np.dot(np.asarray(row, dtype=float), vec))


def latency_survival(y, profile: CovariateProfile, params: BctmParameters, knots: KnotGrid):
    """Susceptible-latency PH survival ``exp(-exp(x'g) Lambda0(y))``."""
    lam0 = baseline_cum_hazard(y, knots, params.psi)
    return np.exp(-np.exp(_clamp(_lp(params.gamma, profile.x))) * lam0)


def population_survival(y, profile: CovariateProfile, params: BctmParameters, knots: KnotGrid):
    lam = np.exp(_clamp(_lp(params.gamma, profile.x))) * baseline_cum_hazard(y, knots, params.psi)
    lp = _lp(params.beta, profile.z)
    return np.exp(log_population_survival_from_lp(params.alpha, lp, lam))


def susceptible_survival(y, profile: CovariateProfile, params: BctmParameters, knots: KnotGrid):
    """``(S_p(y) - pi) / (1 - pi)``, the survival of a non-cured subject."""
    lp = _lp(params.beta, profile.z)
    log_pi = log_cure_rate_from_lp(params.alpha, lp)
    one_minus_pi = -np.expm1(log_pi)
    if one_minus_pi < 1e-300:  # lp at or below the clamp: incidence indistinguishable from 0
        raise DegenerateIncidenceError("cure rate is numerically 1")
    lam = np.exp(_clamp(_lp(params.gamma, profile.x))) * baseline_cum_hazard(y, knots, params.psi)
    log_sp = log_population_survival_from_lp(params.alpha, lp, lam)
    out = np.exp(log_pi) * np.expm1(log_sp - log_pi) / one_minus_pi
    return np.clip(out, 0.0, 1.0)
