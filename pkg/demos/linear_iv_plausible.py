"""Linear IV with a slightly invalid instrument.

The instrument D enters the outcome equation directly with coefficient
gamma, so E[D (Y - X theta*)] = gamma E[D^2] is not zero.  We compare the
dogmatic analysis (mu = 0) with a plausible prior that allows a small
violation, then look at the closed-form local approximation and at a union
interval over a bounded set of violations.

Run from the repository root:  python demos/linear_iv_plausible.py
"""

import numpy as np

import pgmm
from pgmm.inference import hpd_interval

# %%
# Data: theta* = 0.5 and a violation of 0.02 E[D^2], about 0.15 in moment units.
dgp = pgmm.LinearIvLogNormal(theta_star=0.5, gamma=0.02, T=1000)
data = dgp.simulate(np.random.default_rng(7))
model = dgp.model()
print("true moment at theta*:", dgp.mu_star().round(3))

# plug-in weighting at the just-identified IV estimate keeps the tails Gaussian
d, x, y = data.column("d"), data.column("x"), data.column("y")
theta_iv = (d @ y) / (d @ x)
scheme = pgmm.PluginAtPoint([theta_iv])
cfg = pgmm.ChainConfig(n_draws=20_000, burn_in=4000, thin=2, seed=1)

# %%
# Dogmatic prior: the usual quasi-Bayes posterior, centered at the IV estimate.
# With this seed it sits just above theta* = 0.5 and misses it.
ch = pgmm.sample_joint(model, data, scheme, None, pgmm.Dogmatic([0.0]), cfg)
print("dogmatic 95% interval:", np.round(hpd_interval(ch.theta_draws[:, 0]), 3))

# %%
# Plausible prior: mu ~ N(0, 0.1^2).  In a just-identified model theta and mu
# trade off one for one, so the prior on mu becomes prior uncertainty on theta.
prior = pgmm.Gaussian([0.0], [[0.1 ** 2]])
pl = pgmm.sample_joint(model, data, scheme, None, prior, cfg)
print("plausible 95% interval:", np.round(hpd_interval(pl.theta_draws[:, 0]), 3))
print("acceptance rate:", round(pl.accept_rate, 3))

# %%
# The same prior written as Lambda / T gives the local approximation without
# any sampling.  Its interval should be close to the one above.
lam = data.T * prior.Sigma
approx = pgmm.gaussian_approx(model, data, lam, np.zeros(1))
print("local approximation:", np.round(pgmm.local_interval(approx, 0), 3))
print("V (posterior) vs V_bar (sampling):", approx.V.round(3), approx.V_bar.round(3))

# %%
# Frequentist version: union of conditional intervals over |mu| <= 0.2.
box = pgmm.UniformBox([-0.2], [0.2])
union = pgmm.union_interval(model, data, scheme, None, support=box,
                            cfg=pgmm.ChainConfig(n_draws=8000, burn_in=2000, thin=2, seed=2))
print("union over the box:", round(union.lo, 3), round(union.hi, 3),
      f"({union.mu_grid_size} grid points)")
for p in union.details["per_mu"]:
    print("  mu = %+.2f  [%.3f, %.3f]" % (p["mu"][0], p["lo"], p["hi"]))
print("truth:", dgp.true_theta()[0])
