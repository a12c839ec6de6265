"""JSON run configuration: parsing, default resolution and object builders.

A configuration is one JSON object.  Every section is validated eagerly and
every default is materialized into :attr:`RunConfig.resolved`, which the CLI
writes next to its outputs so a job can be rerun from that file alone.

Seeds: the top-level ``seed`` is the only source of randomness.  Simulated
data use it unless ``data.simulate.seed`` is given, chains use it directly,
union grid point ``i`` uses ``seed XOR i``, and coverage replication ``r``
simulates with ``seed + r``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from .criterion import ContinuousUpdating, FixedMatrix, PluginAtPoint
from .errors import ConfigError, ContractError, DataError
from .local_approx import OptConfig, gmm_estimate
from .models import (
    BernoulliTreatment,
    IvqrModel,
    LinearIvFamily,
    LinearIvLogNormal,
    LinearIvModel,
    MedianRegLogNormal,
    two_stage_least_squares,
)
from .moment_model import Dataset
from .priors import (
    Dogmatic,
    FlatOnBox,
    Gaussian,
    GaussianLocal,
    GaussianTheta,
    UniformBox,
    UniformEllipse,
    build_ivqr_delta_prior,
    build_linear_iv_prior,
    chi2_quantile,
)
from .sampler import ChainConfig

__all__ = ["JOBS", "RunConfig", "load_config", "resolve_config", "DGPS"]

JOBS = ("sample", "local-approx", "union-ci", "coverage-sim", "hpd-summary")

DGPS = {
    "linear_iv_lognormal": LinearIvLogNormal,
    "median_reg_lognormal": MedianRegLogNormal,
    "bernoulli_treatment": BernoulliTreatment,
}

_TOP_KEYS = {"job", "seed", "alpha", "output_dir", "data", "model", "theta_prior", "mu_prior",
             "weighting", "chain", "local", "union", "hpd", "coverage"}

# sections each job needs
_NEEDS = {
    "sample": {"data", "model", "mu_prior"},
    "local-approx": {"data", "model"},
    "union-ci": {"data", "model"},
    "hpd-summary": {"data", "model", "mu_prior"},
    "coverage-sim": {"coverage"},
}


def _fail(field, msg):
    raise ConfigError(msg, field)


def _get(d, key, field, kind=None, default=None, required=False):
    if key not in d or d[key] is None:
        if required:
            _fail(f"{field}.{key}" if field else key, "is required")
        return default
    val = d[key]
    if kind is not None and not isinstance(val, kind):
        _fail(f"{field}.{key}" if field else key, f"expected {_kind_name(kind)}, got {type(val).__name__}")
    return val


def _kind_name(kind):
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__


def _check_keys(d, allowed, field):
    if not isinstance(d, dict):
        _fail(field, "must be a JSON object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        _fail(f"{field}.{extra[0]}" if field else extra[0], "unknown key")


def _array(val, field, ndim=None):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        _fail(field, "must be numeric")
    if ndim is not None and arr.ndim != ndim:
        _fail(field, f"must be a {'vector' if ndim == 1 else 'matrix'}")
    if not np.all(np.isfinite(arr)):
        _fail(field, "must be finite")
    return arr


def _names(val, field):
    if val is None:
        return []
    if isinstance(val, str):
        return [val]
    if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
        _fail(field, "must be a column name or a list of column names")
    return list(val)


def load_config(path) -> dict:
    """Read the JSON document at ``path``; raises ConfigError when unparseable."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    return raw


class RunConfig:
    """A validated configuration plus builders for the objects it describes.

    Parameters
    ----------
    raw : dict
        Parsed JSON.
    base_dir : path
        Directory relative file names are resolved against.
    job : str, optional
        Overrides ``raw["job"]``.
    """

    def __init__(self, raw: dict, base_dir=".", job=None):
        self.base_dir = Path(base_dir)
        raw = copy.deepcopy(raw)
        _check_keys(raw, _TOP_KEYS, "")
        if job is not None:
            raw["job"] = job
        self.job = _get(raw, "job", "", str, required=True)
        if self.job not in JOBS:
            _fail("job", f"must be one of {', '.join(JOBS)}")
        seed = _get(raw, "seed", "", int, required=True)
        if isinstance(seed, bool) or not 0 <= seed < 2**63:
            _fail("seed", "must be an integer in [0, 2^63)")
        self.seed = int(seed)
        alpha = _get(raw, "alpha", "", (int, float), 0.05)
        if not 0.0 < alpha < 1.0:
            _fail("alpha", "must lie in (0, 1)")
        self.alpha = float(alpha)
        self.output_dir = _get(raw, "output_dir", "", str, "pgmm_out")
        for section in _NEEDS[self.job]:
            if section not in raw:
                _fail(section, f"is required for job {self.job!r}")

        r = {"job": self.job, "seed": self.seed, "alpha": self.alpha, "output_dir": self.output_dir}
        self._data = None
        self._model = None
        if self.job != "coverage-sim":
            r["data"] = self._resolve_data(raw["data"])
            r["model"] = self._resolve_model(raw["model"], r["data"])
            r["theta_prior"] = self._resolve_theta_prior(raw.get("theta_prior"))
            r["weighting"] = self._resolve_weighting(raw.get("weighting"))
        if "mu_prior" in raw:
            r["mu_prior"] = self._resolve_mu_prior(raw.get("mu_prior"), "mu_prior")
        r["chain"] = self._resolve_chain(raw.get("chain"))
        if self.job == "local-approx":
            r["local"] = self._resolve_local(raw.get("local"))
        if self.job == "union-ci":
            r["union"] = self._resolve_union(raw.get("union"))
            if r["union"]["grid"] == "support" and "mu_prior" not in r:
                _fail("union.grid", "an automatic grid needs a bounded mu_prior (uniform_box or uniform_ellipse)")
        if self.job == "hpd-summary":
            r["hpd"] = self._resolve_hpd(raw.get("hpd"))
        if self.job == "coverage-sim":
            r["coverage"] = self._resolve_coverage(raw["coverage"], raw.get("mu_prior"))
        self.resolved = r
        self._check_dimensions()

    # -- resolution -----------------------------------------------------------------
    def _resolve_data(self, d):
        _check_keys(d, {"csv", "inline", "simulate"}, "data")
        given = [k for k in ("csv", "inline", "simulate") if d.get(k) is not None]
        if len(given) != 1:
            _fail("data", "give exactly one of csv, inline, simulate")
        kind = given[0]
        if kind == "csv":
            path = _get(d, "csv", "data", str)
            full = (self.base_dir / path).resolve()
            if not full.is_file():
                raise DataError(f"data.csv: file {full} does not exist")
            return {"csv": str(full)}
        if kind == "inline":
            inl = d["inline"]
            _check_keys(inl, {"columns", "rows"}, "data.inline")
            cols = _names(_get(inl, "columns", "data.inline", list, required=True), "data.inline.columns")
            rows = _array(_get(inl, "rows", "data.inline", list, required=True), "data.inline.rows", 2)
            if rows.shape[1] != len(cols):
                _fail("data.inline.rows", f"rows need {len(cols)} entries")
            return {"inline": {"columns": cols, "rows": rows.tolist()}}
        sim = d["simulate"]
        _check_keys(sim, {"dgp", "params", "seed"}, "data.simulate")
        name = _get(sim, "dgp", "data.simulate", str, required=True)
        params = self._dgp_params(name, _get(sim, "params", "data.simulate", dict, {}), "data.simulate")
        seed = _get(sim, "seed", "data.simulate", int, self.seed)
        return {"simulate": {"dgp": name, "params": params, "seed": int(seed)}}

    def _dgp_params(self, name, params, field):
        if name not in DGPS:
            _fail(f"{field}.dgp", f"unknown design; choose from {', '.join(DGPS)}")
        cls = DGPS[name]
        allowed = {f.name: f for f in fields(cls)}
        _check_keys(params, allowed, f"{field}.params")
        try:
            dgp = cls(**params)
        except (TypeError, ValueError) as exc:
            _fail(f"{field}.params", str(exc))
        out = {}
        for key in allowed:
            val = getattr(dgp, key)
            out[key] = list(val) if isinstance(val, tuple) else val
        return out

    def _resolve_model(self, m, data_spec):
        _check_keys(m, {"type", "outcome", "endogenous", "treatment", "controls", "instruments",
                        "intercept", "tau", "theta_box", "box_halfwidth"}, "model")
        kind = _get(m, "type", "model", str, required=True)
        box = _get(m, "theta_box", "model", list)
        if box is not None:
            box = _array(box, "model.theta_box", 2).tolist()
        if kind == "from_dgp":
            if "simulate" not in data_spec:
                _fail("model.type", "from_dgp needs simulated data")
            out = {"type": kind, "tau": float(_get(m, "tau", "model", (int, float), 0.5)),
                   "box_halfwidth": float(_get(m, "box_halfwidth", "model", (int, float), 10.0))}
        elif kind == "linear_iv":
            out = {"type": kind,
                   "outcome": _get(m, "outcome", "model", str, required=True),
                   "endogenous": _names(m.get("endogenous"), "model.endogenous"),
                   "controls": _names(m.get("controls"), "model.controls"),
                   "instruments": _names(m.get("instruments"), "model.instruments"),
                   "intercept": bool(_get(m, "intercept", "model", bool, True)),
                   "theta_box": box,
                   "box_halfwidth": float(_get(m, "box_halfwidth", "model", (int, float), 100.0))}
        elif kind == "ivqr":
            tau = _get(m, "tau", "model", (int, float), required=True)
            out = {"type": kind, "tau": float(tau),
                   "outcome": _get(m, "outcome", "model", str, required=True),
                   "treatment": _names(m.get("treatment"), "model.treatment"),
                   "controls": _names(m.get("controls"), "model.controls"),
                   "instruments": _names(m.get("instruments"), "model.instruments"),
                   "theta_box": box,
                   "box_halfwidth": float(_get(m, "box_halfwidth", "model", (int, float), 100.0))}
        else:
            _fail("model.type", "must be linear_iv, ivqr or from_dgp")
        try:
            model = self._build_model(out, data_spec)
        except ContractError as exc:
            raise ConfigError(str(exc), "model") from None
        self._model = model
        return out

    def _resolve_theta_prior(self, p):
        if p is None:
            return {"family": "flat"}
        _check_keys(p, {"family", "mean", "Sigma"}, "theta_prior")
        fam = _get(p, "family", "theta_prior", str, required=True)
        if fam == "flat":
            return {"family": "flat"}
        if fam != "gaussian":
            _fail("theta_prior.family", "must be flat or gaussian")
        mean = _array(_get(p, "mean", "theta_prior", list, required=True), "theta_prior.mean", 1)
        sig = _array(_get(p, "Sigma", "theta_prior", list, required=True), "theta_prior.Sigma")
        sig = np.diag(sig) if sig.ndim == 1 else sig
        return {"family": "gaussian", "mean": mean.tolist(), "Sigma": sig.tolist()}

    def _resolve_weighting(self, w):
        if w is None:
            return {"scheme": "continuous_updating", "ridge": None}
        _check_keys(w, {"scheme", "ridge", "W", "theta_ref"}, "weighting")
        scheme = _get(w, "scheme", "weighting", str, required=True)
        ridge = _get(w, "ridge", "weighting", (int, float))
        if ridge is not None and ridge < 0:
            _fail("weighting.ridge", "must be nonnegative")
        if scheme == "continuous_updating":
            return {"scheme": scheme, "ridge": ridge}
        if scheme == "fixed":
            W = _array(_get(w, "W", "weighting", list, required=True), "weighting.W")
            W = np.diag(W) if W.ndim == 1 else W
            return {"scheme": scheme, "W": W.tolist()}
        if scheme == "plugin":
            ref = _get(w, "theta_ref", "weighting", (list, str), "gmm")
            if isinstance(ref, str) and ref != "gmm":
                _fail("weighting.theta_ref", "must be a vector or \"gmm\"")
            if isinstance(ref, list):
                ref = _array(ref, "weighting.theta_ref", 1).tolist()
            return {"scheme": scheme, "theta_ref": ref, "ridge": ridge}
        _fail("weighting.scheme", "must be continuous_updating, fixed or plugin")

    def _resolve_mu_prior(self, p, field):
        if p is None:
            _fail(field, "is required")
        _check_keys(p, {"family", "mu0", "Sigma", "Lambda", "T", "lo", "hi", "S", "radius2",
                        "level", "instrument_cols", "omega_d", "c", "shape", "constant",
                        "gamma_cap", "effect_col", "residuals"}, field)
        fam = _get(p, "family", field, str, required=True)
        vec = lambda key, req=True: _array(_get(p, key, field, list, required=req), f"{field}.{key}", 1).tolist() \
            if p.get(key) is not None or req else None
        mat = lambda key: _square(_array(_get(p, key, field, list, required=True), f"{field}.{key}"))
        if fam == "dogmatic":
            return {"family": fam, "mu0": vec("mu0", False)}
        if fam == "gaussian":
            return {"family": fam, "mu0": vec("mu0", False), "Sigma": mat("Sigma")}
        if fam == "gaussian_local":
            T = _get(p, "T", field, int)
            return {"family": fam, "mu0": vec("mu0", False), "Lambda": mat("Lambda"), "T": T}
        if fam == "uniform_box":
            return {"family": fam, "lo": vec("lo"), "hi": vec("hi")}
        if fam == "uniform_ellipse":
            r2 = _get(p, "radius2", field, (int, float))
            level = _get(p, "level", field, (int, float), None if r2 is not None else 0.68)
            return {"family": fam, "S": mat("S"), "radius2": r2, "level": level}
        if fam == "linear_iv_calibrated":
            return {"family": fam,
                    "instrument_cols": _names(_get(p, "instrument_cols", field, (list, str), required=True),
                                              f"{field}.instrument_cols"),
                    "omega_d": _array(_get(p, "omega_d", field, (list, int, float), required=True),
                                      f"{field}.omega_d").tolist(),
                    "c": float(_get(p, "c", field, (int, float), 1.0)),
                    "shape": _get(p, "shape", field, str, "gaussian"),
                    "constant": bool(_get(p, "constant", field, bool, False))}
        if fam == "ivqr_delta":
            res = _get(p, "residuals", field, (str, dict), required=True)
            if isinstance(res, dict):
                _check_keys(res, {"outcome", "endogenous", "controls", "instruments", "intercept"},
                            f"{field}.residuals")
                res = {"outcome": _get(res, "outcome", f"{field}.residuals", str, required=True),
                       "endogenous": _names(res.get("endogenous"), f"{field}.residuals.endogenous"),
                       "controls": _names(res.get("controls"), f"{field}.residuals.controls"),
                       "instruments": _names(res.get("instruments"), f"{field}.residuals.instruments"),
                       "intercept": bool(res.get("intercept", True))}
            return {"family": fam,
                    "gamma_cap": float(_get(p, "gamma_cap", field, (int, float), required=True)),
                    "c": float(_get(p, "c", field, (int, float), required=True)),
                    "shape": _get(p, "shape", field, str, "gaussian"),
                    "instrument_cols": _names(p.get("instrument_cols"), f"{field}.instrument_cols"),
                    "effect_col": _get(p, "effect_col", field, str, required=True),
                    "constant": bool(_get(p, "constant", field, bool, True)),
                    "residuals": res}
        _fail(f"{field}.family", "unknown prior family")

    def _resolve_chain(self, c):
        c = {} if c is None else c
        allowed = {f.name for f in fields(ChainConfig)} - {"seed"}
        if "seed" in (c or {}):
            _fail("chain.seed", "chains use the top-level seed")
        _check_keys(c, allowed, "chain")
        try:
            cfg = ChainConfig(seed=self.seed, **c)
        except (TypeError, ValueError) as exc:
            _fail("chain", str(exc))
        out = cfg.to_dict()
        out.pop("seed", None)
        return out

    def _resolve_local(self, loc):
        loc = {} if loc is None else loc
        _check_keys(loc, {"Lambda", "mu0", "theta_hat", "optimizer"}, "local")
        lam = loc.get("Lambda")
        if lam is not None:
            lam = _array(lam, "local.Lambda").tolist()
        opt = _get(loc, "optimizer", "local", dict, {})
        okeys = {f.name for f in fields(OptConfig)}
        _check_keys(opt, okeys, "local.optimizer")
        try:
            oc = OptConfig(**opt)
        except (TypeError, ValueError) as exc:
            _fail("local.optimizer", str(exc))
        odict = {f.name: getattr(oc, f.name) for f in fields(OptConfig)}
        odict["extra_starts"] = [list(map(float, s)) for s in odict["extra_starts"]]
        mu0 = loc.get("mu0")
        th = loc.get("theta_hat")
        return {"Lambda": lam if lam is not None else "from_mu_prior",
                "mu0": None if mu0 is None else _array(mu0, "local.mu0", 1).tolist(),
                "theta_hat": None if th is None else _array(th, "local.theta_hat", 1).tolist(),
                "optimizer": odict}

    def _resolve_union(self, u):
        u = {} if u is None else u
        _check_keys(u, {"eta", "per_mu_method", "grid"}, "union")
        eta = u.get("eta", 0)
        if isinstance(eta, list):
            eta = _array(eta, "union.eta", 1).tolist()
        elif not isinstance(eta, int) or isinstance(eta, bool):
            _fail("union.eta", "must be a coordinate index or a vector")
        meth = _get(u, "per_mu_method", "union", str, "t3")
        if meth not in ("t3", "t4"):
            _fail("union.per_mu_method", "must be t3 or t4")
        grid = u.get("grid", "support")
        if isinstance(grid, list):
            grid = _array(grid, "union.grid", 2).tolist()
        elif grid != "support":
            _fail("union.grid", "must be \"support\" or a list of mu vectors")
        return {"eta": eta, "per_mu_method": meth, "grid": grid}

    def _resolve_hpd(self, h):
        h = {} if h is None else h
        _check_keys(h, {"draws_csv", "bandwidth", "points"}, "hpd")
        path = _get(h, "draws_csv", "hpd", str)
        if path is not None:
            full = (self.base_dir / path).resolve()
            if not full.is_file():
                raise DataError(f"hpd.draws_csv: file {full} does not exist")
            path = str(full)
        bw = h.get("bandwidth")
        if bw is not None:
            bw = _array(bw, "hpd.bandwidth", 1).tolist()
        pts = h.get("points", [])
        pts = _array(pts, "hpd.points", 2).tolist() if pts else []
        return {"draws_csv": path, "bandwidth": bw, "points": pts}

    def _resolve_coverage(self, c, top_prior):
        _check_keys(c, {"experiment", "n_reps", "dgp", "params", "methods", "tau", "prior_scale",
                        "ch_interval", "family", "nature_prior", "weighting"}, "coverage")
        exp = _get(c, "experiment", "coverage", str, "fixed_mu")
        n = _get(c, "n_reps", "coverage", int, 200)
        if n < 1:
            _fail("coverage.n_reps", "must be positive")
        out = {"experiment": exp, "n_reps": n}
        if exp == "fixed_mu":
            name = _get(c, "dgp", "coverage", str, required=True)
            out["dgp"] = name
            out["params"] = self._dgp_params(name, _get(c, "params", "coverage", dict, {}), "coverage")
            methods = _names(c.get("methods", ["ch", "pgmm_union"]), "coverage.methods")
            from .coverage_sim import FIXED_MU_METHODS

            for m in methods:
                if m not in FIXED_MU_METHODS:
                    _fail("coverage.methods", f"unknown method {m!r}")
            out["methods"] = methods
            out["tau"] = float(_get(c, "tau", "coverage", (int, float), 0.5))
            ps = _get(c, "prior_scale", "coverage", (int, float))
            out["prior_scale"] = None if ps is None else float(ps)
            ci = _get(c, "ch_interval", "coverage", str, "hpd")
            if ci not in ("quantile", "hpd"):
                _fail("coverage.ch_interval", "must be quantile or hpd")
            out["ch_interval"] = ci
        elif exp == "two_stage":
            fam = _get(c, "family", "coverage", dict, {})
            allowed = {f.name for f in fields(LinearIvFamily)}
            _check_keys(fam, allowed, "coverage.family")
            try:
                lf = LinearIvFamily(**fam)
            except (TypeError, ValueError) as exc:
                _fail("coverage.family", str(exc))
            out["family"] = {k: getattr(lf, k) for k in allowed}
            if top_prior is None:
                _fail("mu_prior", "two_stage coverage needs the fitted mu_prior")
            nat = c.get("nature_prior")
            out["nature_prior"] = (self._resolve_mu_prior(nat, "coverage.nature_prior")
                                   if nat is not None else "same_as_mu_prior")
            out["weighting"] = self._resolve_weighting(c.get("weighting"))
        else:
            _fail("coverage.experiment", "must be fixed_mu or two_stage")
        return out

    def _check_dimensions(self):
        r = self.resolved
        if self._model is None:
            return
        q, k = self._model.q, self._model.k
        if "mu_prior" in r:
            dim = self._prior_dim(r["mu_prior"])
            if dim is not None and dim != q:
                _fail("mu_prior", f"prior dimension {dim} does not match the model's q={q}")
        tp = r.get("theta_prior", {})
        if tp.get("family") == "gaussian":
            if len(tp["mean"]) != k or np.shape(tp["Sigma"]) != (k, k):
                _fail("theta_prior", f"needs dimension k={k}")
        w = r.get("weighting", {})
        if w.get("scheme") == "fixed" and np.shape(w["W"]) != (q, q):
            _fail("weighting.W", f"must be {q} x {q}")
        if w.get("scheme") == "plugin" and isinstance(w["theta_ref"], list) and len(w["theta_ref"]) != k:
            _fail("weighting.theta_ref", f"needs {k} entries")
        loc = r.get("local")
        if loc:
            if loc["theta_hat"] is not None and len(loc["theta_hat"]) != k:
                _fail("local.theta_hat", f"needs {k} entries")
            if loc["mu0"] is not None and len(loc["mu0"]) != q:
                _fail("local.mu0", f"needs {q} entries")
        un = r.get("union")
        if un:
            if isinstance(un["eta"], int) and not 0 <= un["eta"] < k:
                _fail("union.eta", f"coordinate index must be in [0, {k})")
            if isinstance(un["eta"], list) and len(un["eta"]) != k:
                _fail("union.eta", f"needs {k} entries")
            if isinstance(un["grid"], list) and np.shape(un["grid"])[1] != q:
                _fail("union.grid", f"mu vectors need {q} entries")

    @staticmethod
    def _prior_dim(p):
        fam = p["family"]
        if fam in ("dogmatic", "gaussian", "gaussian_local"):
            if p.get("mu0") is not None:
                return len(p["mu0"])
            if fam != "dogmatic":
                return len(p["Sigma" if fam == "gaussian" else "Lambda"])
            return None
        if fam == "uniform_box":
            return len(p["lo"])
        if fam == "uniform_ellipse":
            return len(p["S"])
        if fam == "linear_iv_calibrated":
            return len(p["instrument_cols"]) + int(p["constant"])
        if fam == "ivqr_delta":
            return len(p["instrument_cols"]) + int(p["constant"])
        return None

    # -- builders -------------------------------------------------------------------
    def data(self) -> Dataset:
        if self._data is None:
            try:
                self._data = self._build_data(self.resolved["data"])
            except ContractError as exc:
                raise DataError(f"data: {exc}") from exc
            self._model.check()
            needed = self._model_columns()
            missing = [c for c in needed if not self._data.has_columns([c])]
            if missing:
                raise DataError(f"data lacks column(s) {missing} named in model")
        return self._data

    def _build_data(self, spec):
        if "csv" in spec:
            return Dataset.from_csv(spec["csv"])
        if "inline" in spec:
            return Dataset(np.array(spec["inline"]["rows"], float), tuple(spec["inline"]["columns"]))
        sim = spec["simulate"]
        dgp = self._dgp(sim["dgp"], sim["params"])
        return dgp.simulate(np.random.default_rng(sim["seed"]))

    @staticmethod
    def _dgp(name, params):
        p = dict(params)
        if isinstance(p.get("beta_star"), list):
            p["beta_star"] = tuple(p["beta_star"])
        return DGPS[name](**p)

    def _model_columns(self):
        m = self._model
        cols = [m.outcome]
        for attr in ("endogenous", "treatment", "controls", "instruments"):
            cols += list(getattr(m, attr, ()))
        return cols

    def _build_model(self, spec, data_spec):
        if spec["type"] == "from_dgp":
            sim = data_spec["simulate"]
            return self._dgp(sim["dgp"], sim["params"]).model(spec["tau"], spec["box_halfwidth"])
        if spec["type"] == "linear_iv":
            return LinearIvModel(spec["outcome"], spec["endogenous"], spec["controls"],
                                 spec["instruments"], spec["intercept"], spec["theta_box"],
                                 spec["box_halfwidth"])
        return IvqrModel(spec["tau"], spec["outcome"], spec["treatment"], spec["controls"],
                         spec["instruments"], spec["theta_box"], spec["box_halfwidth"])

    def model(self):
        return self._model

    def theta_prior(self):
        p = self.resolved.get("theta_prior", {"family": "flat"})
        if p["family"] == "flat":
            return FlatOnBox()
        return GaussianTheta(np.array(p["mean"]), np.array(p["Sigma"]))

    def scheme(self, spec=None, model=None, data=None):
        w = self.resolved["weighting"] if spec is None else spec
        if w["scheme"] == "continuous_updating":
            return ContinuousUpdating(w["ridge"])
        if w["scheme"] == "fixed":
            return FixedMatrix(np.array(w["W"]))
        ref = w["theta_ref"]
        if ref == "gmm":
            model = self._model if model is None else model
            data = self.data() if data is None else data
            ref = gmm_estimate(model, data, None)
        return PluginAtPoint(np.asarray(ref, float), w["ridge"])

    def mu_prior(self, spec=None, data=None, q=None):
        p = self.resolved["mu_prior"] if spec is None else spec
        fam = p["family"]
        q = self._model.q if q is None else q
        field = "mu_prior"
        try:
            if fam == "dogmatic":
                return Dogmatic(np.zeros(q) if p["mu0"] is None else np.array(p["mu0"]))
            if fam == "gaussian":
                return Gaussian(self._mu0(p, q), np.array(p["Sigma"]))
            if fam == "gaussian_local":
                T = p["T"] if p["T"] is not None else (self.data() if data is None else data).T
                return GaussianLocal(self._mu0(p, q), np.array(p["Lambda"]), int(T))
            if fam == "uniform_box":
                return UniformBox(np.array(p["lo"]), np.array(p["hi"]))
            if fam == "uniform_ellipse":
                S = np.array(p["S"])
                r2 = p["radius2"] if p["radius2"] is not None else chi2_quantile(p["level"], len(S))
                return UniformEllipse(S, r2)
            data = self.data() if data is None else data
            if fam == "linear_iv_calibrated":
                return build_linear_iv_prior(data, p["instrument_cols"], np.array(p["omega_d"]),
                                             p["c"], p["shape"], p["constant"])
            res = p["residuals"]
            if isinstance(res, str):
                resid = data.column(res)
            else:
                _, resid = two_stage_least_squares(data, res["outcome"], res["endogenous"],
                                                   res["controls"], res["instruments"],
                                                   res["intercept"])
            tau = getattr(self._model, "tau", 0.5)
            return build_ivqr_delta_prior(data, tau, resid, p["gamma_cap"], p["c"], p["shape"],
                                          p["instrument_cols"], p["effect_col"], p["constant"])
        except ContractError as exc:
            raise ConfigError(str(exc), field) from None

    @staticmethod
    def _mu0(p, q):
        return np.zeros(q) if p["mu0"] is None else np.array(p["mu0"])

    def chain_config(self) -> ChainConfig:
        c = dict(self.resolved["chain"])
        return ChainConfig(seed=self.seed, **c)

    def opt_config(self) -> OptConfig:
        o = dict(self.resolved["local"]["optimizer"])
        o["extra_starts"] = tuple(tuple(s) for s in o["extra_starts"])
        return OptConfig(**o)

    def to_json(self) -> str:
        return json.dumps(self.resolved, indent=2, sort_keys=True)


def _square(a):
    return (np.diag(a) if a.ndim == 1 else np.atleast_2d(a)).tolist()


def resolve_config(path, job=None) -> RunConfig:
    """Load and validate the configuration file at ``path``."""
    raw = load_config(path)
    return RunConfig(raw, Path(path).resolve().parent, job)
