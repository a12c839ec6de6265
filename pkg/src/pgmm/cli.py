"""Command-line front end: ``pgmm run`` and ``pgmm validate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error, 5 sampler initialization error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import JOBS, RunConfig, resolve_config
from .coverage_sim import (
    coverage_table_csv,
    coverage_table_markdown,
    fixed_mu_coverage_multi,
    plugin_at_gmm,
    two_stage_coverage,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    EvaluationError,
    InitializationError,
    NumericalError,
    OptimizationError,
    PgmmError,
    SimulationError,
)
from .inference import hpd_interval, hpd_region, posterior_quantile_interval, union_interval
from .local_approx import gaussian_approx
from .models import LinearIvFamily
from .priors import Dogmatic, Gaussian, GaussianLocal, UniformBox, UniformEllipse
from .sampler import PosteriorDraws, sample_joint

log = logging.getLogger("pgmm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_INIT = 0, 2, 3, 4, 5


def exit_code(exc: BaseException) -> int:
    """Map an exception to the documented exit status."""
    if isinstance(exc, InitializationError):
        return EXIT_INIT
    if isinstance(exc, (ConfigError, ContractError)):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (NumericalError, OptimizationError, EvaluationError, SimulationError)):
        return EXIT_NUMERICAL
    return 1


def _clean(obj):
    """Make ``obj`` strict-JSON safe: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _names(model):
    return list(getattr(model, "parameter_names", [f"theta_{j + 1}" for j in range(model.k)]))


# -- jobs ---------------------------------------------------------------------------

def _job_sample(rc: RunConfig, out: Path, workers):
    data, model = rc.data(), rc.model()
    draws = sample_joint(model, data, rc.scheme(), rc.theta_prior(), rc.mu_prior(), rc.chain_config())
    draws.to_csv(out / "draws.csv")
    intervals = {n: posterior_quantile_interval(draws, j, rc.alpha).to_dict()
                 for j, n in enumerate(_names(model))}
    _write_json(out / "summary.json", {"job": "sample", "parameters": _names(model),
                                       "posterior": draws.summary(), "intervals": intervals})


def _local_lambda(rc, spec, q, T):
    if spec["Lambda"] != "from_mu_prior":
        return np.asarray(spec["Lambda"], float), spec["mu0"]
    if "mu_prior" not in rc.resolved:
        return None, spec["mu0"]
    prior = rc.mu_prior()
    mu0 = spec["mu0"] if spec["mu0"] is not None else prior.mean
    if isinstance(prior, Dogmatic):
        return None, mu0
    if isinstance(prior, GaussianLocal):
        return prior.Lambda, mu0
    if isinstance(prior, Gaussian):
        return T * prior.Sigma, mu0
    raise ConfigError("local approximation needs a Gaussian or dogmatic mu prior, or local.Lambda",
                      "local.Lambda")


def _job_local(rc: RunConfig, out: Path, workers):
    data, model = rc.data(), rc.model()
    spec = rc.resolved["local"]
    lam, mu0 = _local_lambda(rc, spec, model.q, data.T)
    approx = gaussian_approx(model, data, lam, mu0, spec["theta_hat"], rc.opt_config())
    summary = approx.to_dict(rc.alpha)
    summary.update({"job": "local-approx", "parameters": _names(model),
                    "Lambda": np.zeros((model.q, model.q)) if lam is None else lam})
    _write_json(out / "summary.json", summary)


def _job_union(rc: RunConfig, out: Path, workers):
    data, model = rc.data(), rc.model()
    spec = rc.resolved["union"]
    grid = None if spec["grid"] == "support" else [np.asarray(g) for g in spec["grid"]]
    support = rc.mu_prior() if "mu_prior" in rc.resolved else None
    if not isinstance(support, (UniformBox, UniformEllipse)):
        if grid is None:
            raise ConfigError("an automatic grid needs a bounded mu_prior (uniform_box or "
                              "uniform_ellipse)", "union.grid")
        support = None
    iv = union_interval(model, data, rc.scheme(), rc.theta_prior(), grid, spec["eta"], rc.alpha,
                        spec["per_mu_method"], rc.chain_config(), support, workers)
    _write_json(out / "summary.json", {"job": "union-ci", "interval": iv.to_dict()})


def _job_hpd(rc: RunConfig, out: Path, workers):
    spec = rc.resolved["hpd"]
    if spec["draws_csv"] is not None:
        draws = PosteriorDraws.from_csv(spec["draws_csv"])
        names = [f"theta_{j + 1}" for j in range(draws.k)]
    else:
        data, model = rc.data(), rc.model()
        draws = sample_joint(model, data, rc.scheme(), rc.theta_prior(), rc.mu_prior(),
                             rc.chain_config())
        draws.to_csv(out / "draws.csv")
        names = _names(model)
    bw = None if spec["bandwidth"] is None else np.asarray(spec["bandwidth"])
    region = hpd_region(draws, alpha=rc.alpha, bandwidth=bw)
    per = {}
    for j, n in enumerate(names):
        lo, hi = hpd_interval(draws.theta_draws[:, j], rc.alpha)
        q = posterior_quantile_interval(draws, j, rc.alpha)
        per[n] = {"hpd": [lo, hi], "quantile": [q.lo, q.hi]}
    points = [{"theta": p, "in_region": region.contains(np.asarray(p))} for p in spec["points"]]
    _write_json(out / "summary.json", {
        "job": "hpd-summary", "level": 1.0 - rc.alpha, "parameters": names,
        "region": {"density_threshold": region.density_threshold, "bandwidth": region.bandwidth,
                   "n_members": len(region.member_draws), "n_draws": draws.n,
                   "degenerate": region.degenerate},
        "coordinates": per, "points": points})


def _job_coverage(rc: RunConfig, out: Path, workers):
    spec = rc.resolved["coverage"]
    cfg = rc.chain_config()
    if spec["experiment"] == "fixed_mu":
        dgp = RunConfig._dgp(spec["dgp"], spec["params"])
        reports = fixed_mu_coverage_multi(dgp, spec["methods"], spec["tau"], rc.alpha, spec["n_reps"],
                                          rc.seed, cfg, spec["prior_scale"], spec["ch_interval"],
                                          None, workers)
        reports = list(reports.values())
    else:
        family = LinearIvFamily(**spec["family"])
        model = family.model()
        fit = rc.mu_prior(q=model.q)
        nat = fit if spec["nature_prior"] == "same_as_mu_prior" else rc.mu_prior(spec["nature_prior"], q=model.q)
        w = spec["weighting"]
        if w["scheme"] == "plugin" and w["theta_ref"] == "gmm":
            scheme = plugin_at_gmm
        else:
            scheme = rc.scheme(w, model=model, data=None)
        reports = [two_stage_coverage(family, nat, rc.alpha, spec["n_reps"], rc.seed, fit, cfg,
                                      scheme, workers)]
    coverage_table_csv(reports, out / "coverage.csv")
    coverage_table_markdown(reports, out / "coverage.md")
    _write_json(out / "summary.json", {"job": "coverage-sim", "reports": [r.to_dict() for r in reports]})


_JOBS = {"sample": _job_sample, "local-approx": _job_local, "union-ci": _job_union,
         "hpd-summary": _job_hpd, "coverage-sim": _job_coverage}


# -- entry points -------------------------------------------------------------------

def run(config_path, out_dir=None, workers=None, job=None) -> int:
    """Execute the job in ``config_path``; returns the exit status."""
    try:
        rc = resolve_config(config_path, job)
        out = Path(out_dir if out_dir is not None else
                   Path(config_path).resolve().parent / rc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(rc.to_json() + "\n", encoding="utf-8")
        workers = (os.cpu_count() or 1) if workers is None else max(1, int(workers))
        log.info("running %s job, seed %d, output in %s", rc.job, rc.seed, out)
        _JOBS[rc.job](rc, out, workers)
    except PgmmError as exc:
        print(f"pgmm: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


def validate(config_path, job=None) -> int:
    """Check a configuration without running it; prints "ok" and the resolved config."""
    try:
        rc = resolve_config(config_path, job)
        if rc.job != "coverage-sim":
            rc.data()
    except PgmmError as exc:
        print(f"pgmm: invalid configuration: {exc}", file=sys.stderr)
        return exit_code(exc)
    print("ok")
    print(rc.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgmm", description="Plausible GMM estimation and inference.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the job described by a JSON config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    r.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    r.add_argument("--job", choices=JOBS, default=None, help="override the config's job kind")
    v = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    v.add_argument("config")
    v.add_argument("--job", choices=JOBS, default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "run":
        return run(args.config, args.out, args.workers, args.job)
    return validate(args.config, args.job)


if __name__ == "__main__":
    sys.exit(main())
