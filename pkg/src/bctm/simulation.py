"""Synthetic interval-censored cure data and the Monte-Carlo study harness."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import EmConfig, FitResult, fit_em
from .exceptions import BctmError, DomainError
from .likelihood import Dataset
from .model import (
    BctmParameters,
    KnotGrid,
    log_cure_rate_from_lp,
    log_population_survival_from_lp,
    parameter_names,
)

GENERATORS = ("paper-exponential", "invert-su")


@dataclass(frozen=True)
class SimScenario:
    """One simulation setting.

    Covariates are ``x1 ~ Bernoulli(0.5)`` and ``x2 ~ Uniform[0.1, 20]``;
    the incidence row is ``(1, x1, x2)`` and the latency row ``(x1, x2)``.
    The true baseline hazard is the constant ``zeta`` and censoring times
    are exponential with rate ``zeta_star``.
    """

    alpha_true: float = 0.0
    n: int = 200
    zeta: float = 0.1
    zeta_star: float = 0.1
    beta_true: tuple = (0.6, -1.5, 0.1)
    gamma_true: tuple = (-1.2, 0.1)
    seed: int = 20240101
    B_fit: int = 1
    reps: int = 400
    generator: str = "paper-exponential"

    def __post_init__(self):
        if not (self.zeta > 0 and self.zeta_star > 0):
            raise DomainError("zeta and zeta_star must be positive")
        if self.n < 2 or self.reps < 1 or self.B_fit < 1:
            raise DomainError("need n >= 2, reps >= 1 and B_fit >= 1")
        if not 0.0 <= self.alpha_true <= 1.0:
            raise DomainError("alpha_true must lie in [0, 1]")
        if self.generator not in GENERATORS:
            raise DomainError(f"generator must be one of {GENERATORS}")

    def truth(self) -> np.ndarray:
        """True parameter vector with every knot hazard equal to ``zeta``."""
        return np.concatenate(
            [[self.alpha_true], np.full(self.B_fit + 1, self.zeta), self.beta_true, self.gamma_true]
        )

    def names(self) -> list[str]:
        return parameter_names(self.B_fit, len(self.beta_true) - 1, len(self.gamma_true))


def rep_rng(seed: int, rep_index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rep_index, stream]))


def interval_from_inspections(t: float, d1: float, d2: float) -> tuple[float, float]:
    """Inspection interval containing ``t``: first visit at ``d2``, then every ``d1``."""
    if t < d2:
        return 0.0, d2
    rho = math.floor((t - d2) / d1) + 1
    return d2 + (rho - 1) * d1, d2 + rho * d1


def _invert_susceptible(v, lp_z, hr, alpha, zeta, tol=1e-10):
    """Solve ``S_u(y) = v`` by vectorized bisection for a constant baseline hazard."""
    log_pi = log_cure_rate_from_lp(alpha, lp_z)
    pi = np.exp(log_pi)
    target = pi + (1 - pi) * v  # S_p(y) = pi + (1 - pi) S_u(y)

    def sp(y):
        return np.exp(log_population_survival_from_lp(alpha, lp_z, hr * zeta * y))

    lo = np.zeros_like(v)
    hi = np.ones_like(v)
    while np.any(sp(hi) > target):
        hi = np.where(sp(hi) > target, hi * 2.0, hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        above = sp(mid) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def generate_dataset(scenario: SimScenario, rep_index: int, return_latent: bool = False):
    """Draw one replication; ``(scenario, rep_index)`` fully determines it."""
    n = scenario.n
    rng = rep_rng(scenario.seed, rep_index)
    x1 = rng.binomial(1, 0.5, n).astype(float)
    x2 = rng.uniform(0.1, 20.0, n)
    u = rng.uniform(0.0, 1.0, n)
    c = rng.exponential(1.0 / scenario.zeta_star, n)
    e = rng.exponential(1.0, n)
    d1 = rng.uniform(0.2, 0.7, n)
    d2 = rng.uniform(0.0, 1.0, n)

    Z = np.column_stack([np.ones(n), x1, x2])
    X = np.column_stack([x1, x2])
    lp_z = Z @ np.asarray(scenario.beta_true, dtype=float)
    hr = np.exp(X @ np.asarray(scenario.gamma_true, dtype=float))
    pi = np.exp(log_cure_rate_from_lp(scenario.alpha_true, lp_z))
    cured = u <= pi
    if scenario.generator == "paper-exponential":
        y = e / (scenario.zeta * hr)
    else:
        y = np.full(n, np.inf)
        sus = ~cured
        v = (u[sus] - pi[sus]) / (1.0 - pi[sus])
        y[sus] = _invert_susceptible(v, lp_z[sus], hr[sus], scenario.alpha_true, scenario.zeta)
    y = np.where(cured, np.inf, y)

    left = np.empty(n)
    right = np.empty(n)
    delta = np.zeros(n, dtype=int)
    for i in range(n):
        if cured[i] or c[i] <= y[i]:
            left[i], right[i] = c[i], np.inf
        else:
            left[i], right[i] = interval_from_inspections(y[i], d1[i], d2[i])
            delta[i] = 1
            assert left[i] <= y[i] <= right[i] and left[i] < right[i]
    data = Dataset(left, right, delta, Z, X)
    if return_latent:
        return data, {"y": y, "c": c, "cured": cured}
    return data


def select_cutpoints_quantile(data: Dataset, B: int) -> KnotGrid:
    """Equi-proportion quantile knots of the pooled finite interval limits.

    The pool holds the lower and upper limits of the interval-censored
    subjects.  ``tau_B`` is the pool maximum and interior knots are the
    ``b / B`` quantiles (linear interpolation between order statistics).
    """
    if B < 1:
        raise DomainError("B must be at least 1")
    ic = data.delta == 1
    pool = np.concatenate([data.left[ic], data.right[ic]])
    pool = pool[np.isfinite(pool)]
    if np.unique(np.concatenate([pool, [0.0]])).size < B + 1:
        raise DomainError(f"need at least {B + 1} distinct finite limits for B = {B}")
    tau = np.empty(B + 1)
    tau[0] = 0.0
    tau[B] = pool.max()
    if B > 1:
        tau[1:B] = np.quantile(pool, np.arange(1, B) / B)
    nudge = 1e-12 * tau[B]
    for b in range(1, B + 1):
        if tau[b] <= tau[b - 1]:
            tau[b] = tau[b - 1] + nudge
    if tau[B - 1] >= pool.max() and B > 1:
        raise DomainError("too many tied limits to place distinct knots")
    return KnotGrid(tau)


def initial_psi(B: int) -> np.ndarray:
    """Start every hazard at 0.001, then grow it as psi_{b-1} + psi_b + psi_b**2."""
    if B < 1:
        raise DomainError("B must be at least 1")
    psi = np.full(B + 1, 0.001)
    for b in range(1, B + 1):
        psi[b] = psi[b - 1] + psi[b] + psi[b] ** 2
    return psi


def initial_coeffs_perturbed(true_vals, seed) -> np.ndarray:
    """Uniform draw within 10% of each true value."""
    v = np.asarray(true_vals, dtype=float)
    rng = np.random.default_rng(seed)
    a, b = np.minimum(0.9 * v, 1.1 * v), np.maximum(0.9 * v, 1.1 * v)
    return rng.uniform(a, b) if v.size else v


def _simulation_init(scenario: SimScenario, rep_index: int) -> BctmParameters:
    seed = np.random.SeedSequence([scenario.seed, rep_index, 1])
    coeffs = initial_coeffs_perturbed(np.concatenate([scenario.beta_true, scenario.gamma_true]), seed)
    nb = len(scenario.beta_true)
    return BctmParameters(0.5, initial_psi(scenario.B_fit), coeffs[:nb], coeffs[nb:])


@dataclass
class ReplicationOutcome:
    rep_index: int
    theta: np.ndarray | None
    se: np.ndarray | None
    loglik: float | None
    aic: float | None
    censoring_rate: float
    converged: bool
    error: str | None = None


def run_replication(scenario: SimScenario, config: EmConfig, rep_index: int, fitter=None) -> ReplicationOutcome:
    fitter = fitter or fit_em
    data = generate_dataset(scenario, rep_index)
    cens = data.censoring_rate
    try:
        knots = select_cutpoints_quantile(data, scenario.B_fit)
        init = _simulation_init(scenario, rep_index)
        fit: FitResult = fitter(data, knots, init, config)
    except BctmError as exc:
        return ReplicationOutcome(rep_index, None, None, None, None, cens, False, str(exc))
    return ReplicationOutcome(
        rep_index, fit.theta_hat.to_vector(), np.asarray(fit.se, dtype=float), fit.loglik, fit.aic, cens, fit.converged
    )


@dataclass
class ParameterRow:
    name: str
    true: float | None
    est: float
    se: float
    bias: float | None
    rmse: float | None
    cp: float | None


@dataclass
class MonteCarloReport:
    rows: list[ParameterRow]
    mean_loglik: float
    mean_aic: float
    n_reps: int
    n_used: int
    n_failed: int
    censoring_rate: float
    failures: list[tuple[int, str]] = field(default_factory=list)

    def row(self, name: str) -> ParameterRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def aggregate(outcomes, truth, names, n_psi: int) -> MonteCarloReport:
    """EST/SE/BIAS/RMSE/CP over the converged replications.

    Knot hazards have no single true value under a misspecified PLA, so only
    their EST and SE are reported.
    """
    outcomes = sorted(outcomes, key=lambda o: o.rep_index)
    used = [o for o in outcomes if o.converged and o.theta is not None]
    failures = [(o.rep_index, o.error or "not converged") for o in outcomes if not (o.converged and o.theta is not None)]
    if not used:
        raise BctmError("every Monte-Carlo replication failed")
    est = np.array([o.theta for o in used])
    se = np.array([o.se for o in used])
    truth = np.asarray(truth, dtype=float)
    rows = []
    for j, name in enumerate(names):
        col = est[:, j]
        se_col = se[:, j]
        finite = np.isfinite(se_col)
        mean_se = float(np.mean(se_col[finite])) if finite.any() else float("nan")
        m = float(np.mean(col))
        if 1 <= j <= n_psi:
            rows.append(ParameterRow(name, None, m, mean_se, None, None, None))
            continue
        t = float(truth[j])
        rmse = float(np.sqrt(np.mean((col - t) ** 2)))
        covered = np.abs(col[finite] - t) <= 1.96 * se_col[finite]
        cp = 100.0 * float(np.mean(covered)) if finite.any() else float("nan")
        rows.append(ParameterRow(name, t, m, mean_se, m - t, rmse, cp))
    return MonteCarloReport(
        rows=rows,
        mean_loglik=float(np.mean([o.loglik for o in used])),
        mean_aic=float(np.mean([o.aic for o in used])),
        n_reps=len(outcomes),
        n_used=len(used),
        n_failed=len(failures),
        censoring_rate=float(np.mean([o.censoring_rate for o in outcomes])),
        failures=failures,
    )


def monte_carlo_study(scenario: SimScenario, config: EmConfig | None = None, *, n_jobs: int = 1, fitter=None) -> MonteCarloReport:
    """Run ``scenario.reps`` generate-knots-initialize-fit pipelines and aggregate."""
    config = config or EmConfig()
    reps = range(scenario.reps)
    if n_jobs > 1 and fitter is None:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(run_replication, [scenario] * scenario.reps, [config] * scenario.reps, reps))
    else:
        outcomes = [run_replication(scenario, config, r, fitter) for r in reps]
    return aggregate(outcomes, scenario.truth(), scenario.names(), scenario.B_fit + 1)
