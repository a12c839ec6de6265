"""Monte Carlo coverage of the quasi-posterior sets.

Two kinds of experiment:

* :func:`two_stage_coverage` draws ``mu`` from a prior, builds the design
  that has moment value ``mu`` at its truth, simulates data, samples the joint
  quasi-posterior and checks whether the truth lies in the HPD region.
* :func:`fixed_mu_coverage` keeps one fixed design and records how often
  per-coordinate intervals (dogmatic-prior quantiles, the union over a mu
  grid, or the local Gaussian interval) contain the truth.

Replication ``r`` simulates its data from seed ``base_seed + r``; the chain
seeds of that replication are derived from the same number, so replications
can run in any order or on any worker without changing the result.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .criterion import PluginAtPoint
from .errors import ContractError, PgmmError, SimulationError
from .inference import hpd_interval, hpd_region, posterior_quantile_interval
from .local_approx import gaussian_approx, gmm_estimate, local_interval
from .models import BernoulliTreatment
from .sampler import ChainConfig, sample_conditional_batch, sample_joint

__all__ = [
    "CoverageReport",
    "mc_standard_errors",
    "two_stage_coverage",
    "plugin_at_gmm",
    "fixed_mu_coverage",
    "fixed_mu_coverage_multi",
    "pgmm_mu_grid",
    "default_prior_scale",
    "coverage_table_csv",
    "coverage_table_markdown",
    "replication_seed",
    "chain_seed",
]

MAX_FAILURE_SHARE = 0.02
FIXED_MU_METHODS = ("ch", "pgmm_union", "local")
GRID_LEVELS = tuple(np.round(np.arange(1, 10) / 10.0, 1))

# chain settings used when the caller gives none
TWO_STAGE_CHAIN = ChainConfig(n_draws=10_000, burn_in=2_000, thin=2)
TABLE_CHAIN = ChainConfig(n_draws=20_000, burn_in=4_000, thin=2)


def mc_standard_errors(rates, n_reps) -> np.ndarray:
    """Binomial standard error ``sqrt(rate (1 - rate) / n)`` of each rate."""
    rates = np.asarray(rates, dtype=float)
    if n_reps < 1:
        raise ContractError("n_reps must be positive")
    return np.sqrt(rates * (1.0 - rates) / n_reps)


@dataclass
class CoverageReport:
    """Coverage rates over successful replications."""

    rates: np.ndarray
    mc_standard_errors: np.ndarray
    n_reps: int
    method: str
    parameter_names: tuple
    failures: int = 0
    config: dict = field(default_factory=dict)
    indicators: np.ndarray = field(default=None, repr=False)
    mean_widths: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "n_reps": self.n_reps,
            "failures": self.failures,
            "parameters": list(self.parameter_names),
            "rates": np.asarray(self.rates).tolist(),
            "mc_standard_errors": np.asarray(self.mc_standard_errors).tolist(),
            "config": self.config,
        }
        if self.mean_widths is not None:
            d["mean_widths"] = np.asarray(self.mean_widths).tolist()
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def replication_seed(base_seed, r) -> int:
    return int(base_seed) + int(r)


def chain_seed(base_seed, r) -> int:
    """Base chain seed of replication r, derived from its data seed."""
    ss = np.random.SeedSequence(replication_seed(base_seed, r))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _report(method, names, indicators, failures, n_attempted, config, widths=None):
    if failures > MAX_FAILURE_SHARE * n_attempted:
        raise SimulationError(
            f"{failures} of {n_attempted} replications failed (limit {MAX_FAILURE_SHARE:.0%})",
            failures, n_attempted)
    ind = np.asarray(indicators, dtype=float)
    n = ind.shape[0]
    if n == 0:
        raise SimulationError("no replication succeeded", failures, n_attempted)
    rates = ind.mean(axis=0)
    return CoverageReport(rates, mc_standard_errors(rates, n), n, method, tuple(names),
                          failures, config, ind.astype(bool),
                          None if widths is None else np.asarray(widths).mean(axis=0))


def _map(fn, jobs, workers):
    """Order-preserving map over a process pool (serial when workers == 1)."""
    workers = (os.cpu_count() or 1) if workers is None else max(1, int(workers))
    if workers == 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# -- two-stage coverage ---------------------------------------------------------------

def plugin_at_gmm(model, data) -> PluginAtPoint:
    """Plug-in weighting frozen at the efficient GMM estimate on ``data``.

    Pass as ``scheme`` to :func:`two_stage_coverage` to get a weighting that
    is recomputed for every simulated dataset.
    """
    return PluginAtPoint(gmm_estimate(model, data, None))


def _two_stage_rep(job):
    family, mu_prior, fit_prior, alpha, base_seed, r, cfg, scheme = job
    rng = np.random.default_rng(replication_seed(base_seed, r))
    mu = mu_prior.sample(rng)
    dgp = family.dgp(mu)
    data = dgp.simulate(rng)
    truth = family.truth(mu)
    model = family.model()
    try:
        if callable(scheme):
            scheme = scheme(model, data)
        draws = sample_joint(model, data, scheme, None, fit_prior,
                             cfg.replace(seed=chain_seed(base_seed, r)))
        region = hpd_region(draws, alpha=alpha)
        return r, [region.contains(truth)], None
    except PgmmError as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


def two_stage_coverage(family, mu_prior, alpha=0.05, n_reps=500, base_seed=0,
                       fit_prior=None, cfg=None, scheme=None, workers=1) -> CoverageReport:
    """Coverage of the HPD region when nature first draws mu.

    Parameters
    ----------
    family : object with ``dgp(mu)``, ``model()`` and ``truth(mu)``
        For example :class:`~pgmm.models.LinearIvFamily`.
    mu_prior : MuPrior
        Distribution nature draws mu from.
    fit_prior : MuPrior, optional
        Prior used in the fitted quasi-posterior; defaults to ``mu_prior``.
        Pass a proper prior here with a dogmatic ``mu_prior`` to study a
        correctly specified world analyzed under a plausible prior.
    cfg : ChainConfig, optional
        Its seed is replaced per replication.
    scheme : weighting scheme or callable, optional
        A callable is called as ``scheme(model, data)`` on every simulated
        dataset, e.g. :func:`plugin_at_gmm`.  Continuous updating when None.
    """
    if n_reps < 1:
        raise ContractError("n_reps must be positive")
    fit_prior = mu_prior if fit_prior is None else fit_prior
    cfg = TWO_STAGE_CHAIN if cfg is None else cfg
    jobs = [(family, mu_prior, fit_prior, alpha, base_seed, r, cfg, scheme) for r in range(n_reps)]
    results = sorted(_map(_two_stage_rep, jobs, workers), key=lambda t: t[0])
    ind = [res for _, res, err in results if err is None]
    errors = [(r, err) for r, _, err in results if err is not None]
    config = {
        "experiment": "two_stage", "T": getattr(family, "T", None), "alpha": alpha, "n_reps": n_reps, "base_seed": base_seed,
        "family": type(family).__name__, "family_params": _params(family),
        "mu_prior": type(mu_prior).__name__, "fit_prior": type(fit_prior).__name__,
        "chain": cfg.to_dict(), "failed_reps": errors[:20],
        "weighting": "ContinuousUpdating" if scheme is None
                     else getattr(scheme, "__name__", type(scheme).__name__),
        "seed_rule": "data seed = base_seed + r; chain seed from SeedSequence(data seed)",
    }
    names = getattr(family.model(), "parameter_names", ("theta",))
    return _report("hpd_region", ("theta_region",) if len(names) != 1 else names,
                   ind, len(errors), n_reps, config)


# -- fixed-mu coverage ----------------------------------------------------------------

def default_prior_scale(dgp) -> float:
    """Local prior scale s in ``N(0, s I / T)`` for each shipped design."""
    return 10.0 if isinstance(dgp, BernoulliTreatment) else 1.0


def pgmm_mu_grid(q, T, scale, levels=GRID_LEVELS):
    """mu values whose components all sit at the prior quantiles ``levels``.

    With the prior ``N(0, scale I / T)`` every component (hence the average)
    of the p-th grid point equals the p-quantile ``z_p sqrt(scale / T)``.
    """
    sd = np.sqrt(scale / T)
    return [np.full(q, norm.ppf(p) * sd) for p in levels]


def _params(obj):
    out = {}
    for key, val in getattr(obj, "__dict__", {}).items():
        if isinstance(val, (int, float, str, bool)):
            out[key] = val
        elif isinstance(val, tuple):
            out[key] = list(val)
    return out


def _fixed_rep(job):
    dgp, methods, tau, alpha, base_seed, r, cfg, scale, ch_interval, scheme = job
    data = dgp.simulate(np.random.default_rng(replication_seed(base_seed, r)))
    model = dgp.model(tau)
    truth = dgp.true_theta(tau)
    k, q, T = model.k, model.q, data.T
    out = {}
    try:
        grid = pgmm_mu_grid(q, T, scale) if "pgmm_union" in methods else [np.zeros(q)]
        center = int(np.argmin([np.abs(g).sum() for g in grid]))
        need_chains = "pgmm_union" in methods or "ch" in methods
        if need_chains:
            base = chain_seed(base_seed, r)
            seeds = [base ^ i for i in range(len(grid))]
            chains = sample_conditional_batch(model, data, scheme, None, grid,
                                              cfg.replace(seed=base), seeds)
        if "ch" in methods:
            ch = chains[center]
            ivs = []
            for j in range(k):
                if ch_interval == "hpd":
                    ivs.append(hpd_interval(ch.theta_draws[:, j], alpha))
                else:
                    iv = posterior_quantile_interval(ch, j, alpha)
                    ivs.append((iv.lo, iv.hi))
            out["ch"] = ivs
        if "pgmm_union" in methods:
            ivs = []
            for j in range(k):
                per = [posterior_quantile_interval(c, j, alpha) for c in chains]
                ivs.append((min(p.lo for p in per), max(p.hi for p in per)))
            out["pgmm_union"] = ivs
        if "local" in methods:
            approx = gaussian_approx(model, data, scale * np.eye(q), np.zeros(q))
            out["local"] = [local_interval(approx, j, alpha) for j in range(k)]
    except PgmmError as exc:
        return r, None, f"{type(exc).__name__}: {exc}"
    res = {m: ([lo <= t <= hi for (lo, hi), t in zip(ivs, truth)],
               [hi - lo for lo, hi in ivs]) for m, ivs in out.items()}
    return r, res, None


def fixed_mu_coverage_multi(dgp, methods=FIXED_MU_METHODS, tau=None, alpha=0.05, n_reps=200,
                            base_seed=0, cfg=None, prior_scale=None, ch_interval="hpd",
                            scheme=None, workers=1) -> dict:
    """Several fixed-mu methods on shared replications.

    The dogmatic (CH) chain is the mu = 0 member of the PGMM grid, so running
    both methods together costs one batch of chains per replication.

    Returns
    -------
    dict
        method name -> :class:`CoverageReport`.
    """
    methods = tuple(methods)
    bad = [m for m in methods if m not in FIXED_MU_METHODS]
    if bad or not methods:
        raise ContractError(f"unknown coverage methods {bad}; choose from {FIXED_MU_METHODS}")
    if ch_interval not in ("quantile", "hpd"):
        raise ContractError("ch_interval must be 'quantile' or 'hpd'")
    if n_reps < 1:
        raise ContractError("n_reps must be positive")
    if tau is None:
        tau = 0.5
    scale = default_prior_scale(dgp) if prior_scale is None else float(prior_scale)
    cfg = TABLE_CHAIN if cfg is None else cfg
    jobs = [(dgp, methods, tau, alpha, base_seed, r, cfg, scale, ch_interval, scheme)
            for r in range(n_reps)]
    results = sorted(_map(_fixed_rep, jobs, workers), key=lambda t: t[0])
    errors = [(r, err) for r, _, err in results if err is not None]
    model = dgp.model(tau)
    names = getattr(model, "parameter_names", tuple(f"theta_{j + 1}" for j in range(model.k)))
    base_config = {
        "experiment": "fixed_mu", "dgp": type(dgp).__name__, "dgp_params": _params(dgp),
        "gamma": getattr(dgp, "gamma", None), "T": dgp.T, "tau": tau, "alpha": alpha,
        "n_reps": n_reps, "base_seed": base_seed, "prior_scale": scale,
        "mu_grid_levels": list(GRID_LEVELS), "chain": cfg.to_dict(),
        "ch_interval": ch_interval, "failed_reps": errors[:20],
        "seed_rule": "data seed = base_seed + r; chain seeds SeedSequence(data seed) XOR grid index",
    }
    reports = {}
    for m in methods:
        ind = [res[m][0] for _, res, err in results if err is None]
        widths = [res[m][1] for _, res, err in results if err is None]
        reports[m] = _report(m, names, ind, len(errors), n_reps, dict(base_config), widths)
    return reports


def fixed_mu_coverage(dgp, method, tau=None, alpha=0.05, n_reps=200, base_seed=0, cfg=None,
                      prior_scale=None, ch_interval="hpd", scheme=None,
                      workers=1) -> CoverageReport:
    """Coverage of one fixed-mu method; see :func:`fixed_mu_coverage_multi`."""
    return fixed_mu_coverage_multi(dgp, (method,), tau, alpha, n_reps, base_seed, cfg,
                                   prior_scale, ch_interval, scheme, workers)[method]


# -- tables ---------------------------------------------------------------------------

def _rows(reports):
    rows = []
    for rep in reports:
        c = rep.config
        row = {"gamma": c.get("gamma"), "T": c.get("T"), "tau": c.get("tau"),
               "method": rep.method, "n_reps": rep.n_reps}
        for name, rate, se in zip(rep.parameter_names, rep.rates, rep.mc_standard_errors):
            row[name] = float(rate)
            row[f"{name}_se"] = float(se)
        rows.append(row)
    return rows


def coverage_table_csv(reports, path=None) -> str:
    """CSV with columns gamma, T, tau, method, n_reps and per-parameter rates."""
    rows = _rows(reports)
    cols = []
    for row in rows:
        cols += [c for c in row if c not in cols]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def coverage_table_markdown(reports, path=None) -> str:
    """Markdown table laid out like the published coverage tables."""
    rows = _rows(reports)
    names = []
    for rep in reports:
        names += [n for n in rep.parameter_names if n not in names]
    head = ["gamma", "T", "tau", "method"] + names
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in rows:
        cells = [str(row["gamma"]), str(row["T"]), str(row["tau"]), row["method"]]
        cells += [f"{row[n]:.3f}" if n in row else "" for n in names]
        lines.append("| " + " | ".join(cells) + " |")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text

