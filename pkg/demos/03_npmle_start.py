"""
Nonparametric starting values
=============================

The Turnbull estimate of marginal survival, its agreement with the
product-limit estimate when intervals shrink to points, and the starting
values it yields for a fit.
"""

import warnings

import numpy as np

from bctm.em import EmConfig, fit_em
from bctm.likelihood import Dataset
from bctm.npmle import npmle_initialize, turnbull_npmle
from bctm.simulation import SimScenario, _simulation_init, generate_dataset, select_cutpoints_quantile

# %% exact event times written as tiny intervals
rng = np.random.default_rng(1)
t, c = rng.exponential(2.0, 300), rng.exponential(3.0, 300)
event = t <= c
obs = np.where(event, t, c)
left = np.where(event, obs - 1e-9, obs)
right = np.where(event, obs, np.inf)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    exactish = Dataset(left, right, event.astype(int), np.ones((300, 1)), np.zeros((300, 0)))
est = turnbull_npmle(exactish, tol=1e-12)

surv, km = 1.0, []
for ti in np.unique(obs[event]):
    surv *= 1 - np.sum(obs[event] == ti) / np.sum(obs >= ti)
    km.append((ti, surv))
ts, kms = np.array(km).T
print(f"max |Turnbull - Kaplan-Meier| = {np.max(np.abs(est.survival_at(ts) - kms)):.2e}")

# %% starting values for simulated interval-censored data
sc = SimScenario(alpha_true=1.0, n=400)
data = generate_dataset(sc, 2)
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    bundle = npmle_initialize(data, B=2, group=1)
for w in caught:
    print("note:", w.message)
print("knots     ", np.round(bundle.knots.tau, 3))
print("psi0      ", np.round(bundle.psi0, 4))
print("beta0     ", np.round(bundle.beta0, 4))
print("gamma0    ", np.round(bundle.gamma0, 4))

qn = EmConfig(optimizer="quasi-newton-with-bounds")
fit = fit_em(data, bundle.knots, bundle.parameters(), qn)
print(f"\nfit from these values: loglik={fit.loglik:.4f} after {fit.n_em_iters} iterations")
print("estimate  ", np.round(fit.theta_hat.to_vector(), 4))
print("truth     ", np.round(np.r_[sc.alpha_true, sc.beta_true, sc.gamma_true], 4), "(alpha, beta, gamma)")

# %% the simulation rule starts near the truth instead
sim_sc = SimScenario(alpha_true=1.0, n=400, B_fit=2)
ref = fit_em(data, select_cutpoints_quantile(data, 2), _simulation_init(sim_sc, 2), qn, compute_se=False)
print(f"simulation-rule start with quantile knots: loglik={ref.loglik:.4f}")
