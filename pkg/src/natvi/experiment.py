"""Config-file driven experiments: parsing, presets and the runner that
writes a trace CSV and a summary JSON.

Spec files are TOML with four tables, ``[model]``, ``[approx]``, ``[run]``
and ``[output]``. Unknown keys are errors. See README.md for the grammar.
"""
import csv
import io
import json
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import gauss_vi as gv
from . import mixture_vi as mv
from . import model as md
from . import optim as op

__all__ = [
    "SpecError",
    "ExperimentSpec",
    "PRESETS",
    "OUTPUT_ROOT_ENV",
    "parse_spec",
    "parse_spec_text",
    "load_preset",
    "build_model",
    "build_initial",
    "run_experiment",
    "trace_header",
    "write_trace_csv",
]


OUTPUT_ROOT_ENV = "NATVI_OUTPUT_ROOT"

MODEL_KEYS = {
    "conjugate": {"prior_mean", "prior_cov", "prior_var", "noise_var", "design",
                  "observations", "data", "n_obs", "true_theta", "data_seed"},
    "logistic": {"prior_precision", "design", "labels", "data", "n_obs",
                 "true_theta", "data_seed"},
    "bimodal": {"centers", "scales", "weights"},
}
COMMON_MODEL_KEYS = {"kind", "provide_hessian"}
APPROX_KEYS = {"family", "dim", "components", "init_scale", "init_mean",
               "init_spread", "init_seed"}
RUN_KEYS = {"estimator", "schedule", "base_rate", "decay", "beta1", "beta2", "eps",
            "iterations", "samples_per_iter", "seed", "eval_every", "eval_samples",
            "log_diag", "workers", "logit_baseline", "baseline_decay",
            "convergence_window", "convergence_tol", "min_iterations"}
OUTPUT_KEYS = {"directory", "trace", "summary", "timing"}
SECTIONS = {"model": None, "approx": APPROX_KEYS, "run": RUN_KEYS, "output": OUTPUT_KEYS}


class SpecError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid experiment spec:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class ExperimentSpec:
    model: dict
    approx: dict
    run: op.RunConfig
    output: dict = field(default_factory=dict)

    def to_dict(self):
        return {"model": _jsonable(self.model), "approx": _jsonable(self.approx),
                "run": self.run.to_dict(), "output": dict(self.output)}

    @classmethod
    def from_dict(cls, data):
        return cls(dict(data["model"]), dict(data["approx"]),
                   op.RunConfig.from_dict(data["run"]), dict(data["output"]))


def _jsonable(d):
    return json.loads(json.dumps(d))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _line_of(text, section, key=None):
    if text is None:
        return None
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[\s*([A-Za-z0-9_.-]+)\s*\]", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(
                rf"{re.escape(key)}\s*=", s):
            return i
    return None


def _where(text, section, key=None):
    n = _line_of(text, section, key)
    loc = f"[{section}]" + (f" {key}" if key else "")
    return f"line {n}: {loc}" if n else loc


def parse_spec(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise SpecError([f"cannot read {path}: {err}"]) from None
    return parse_spec_text(text, base_dir=path.parent)


def parse_spec_text(text, base_dir="."):
    """Parse and validate a TOML experiment spec, filling defaults."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise SpecError([f"syntax error: {err}"]) from None
    return _validate(raw, text, Path(base_dir))


_TYPES = {
    "dim": int, "components": int, "init_seed": int, "iterations": int,
    "samples_per_iter": int, "seed": int, "eval_every": int, "eval_samples": int,
    "workers": int, "convergence_window": int, "min_iterations": int,
    "n_obs": int, "data_seed": int,
    "init_scale": float, "init_spread": float, "base_rate": float, "decay": float,
    "beta1": float, "beta2": float, "eps": float, "baseline_decay": float,
    "convergence_tol": float, "noise_var": float, "prior_var": float,
    "prior_precision": float,
    "log_diag": bool, "logit_baseline": bool, "timing": bool, "provide_hessian": bool,
    "family": str, "estimator": str, "schedule": str, "kind": str, "data": str,
    "directory": str, "trace": str, "summary": str,
}


def _check_type(errors, text, section, key, value):
    want = _TYPES.get(key)
    if want is None:
        return value
    ok = (isinstance(value, bool) if want is bool
          else isinstance(value, int) and not isinstance(value, bool) if want is int
          else isinstance(value, (int, float)) and not isinstance(value, bool)
          if want is float else isinstance(value, want))
    if not ok:
        errors.append(f"{_where(text, section, key)}: expected {want.__name__}, "
                      f"got {type(value).__name__} {value!r}")
        return None
    return float(value) if want is float else value


def _validate(raw, text, base_dir):
    errors = []
    for name in raw:
        if name not in SECTIONS:
            errors.append(f"{_where(text, name)}: unknown section")
    for name in ("model", "approx", "run"):
        if name not in raw:
            errors.append(f"missing required section [{name}]")
    if errors:
        raise SpecError(errors)

    # model
    m = dict(raw["model"])
    kind = m.get("kind")
    if kind is None:
        errors.append(f"{_where(text, 'model')}: missing required key 'kind'")
        allowed = COMMON_MODEL_KEYS
    elif kind not in MODEL_KEYS:
        errors.append(f"{_where(text, 'model', 'kind')}: unknown model kind {kind!r}; "
                      f"choose from {', '.join(MODEL_KEYS)}")
        allowed = COMMON_MODEL_KEYS
    else:
        allowed = COMMON_MODEL_KEYS | MODEL_KEYS[kind]
    for key in list(m):
        if key not in allowed and kind in MODEL_KEYS:
            errors.append(f"{_where(text, 'model', key)}: unknown key {key!r} "
                          f"for model kind {kind!r}")
        else:
            m[key] = _check_type(errors, text, "model", key, m[key])
    m.setdefault("provide_hessian", True)
    if isinstance(m.get("data"), str):
        p = Path(m["data"])
        p = p if p.is_absolute() else (base_dir / p)
        if not p.is_file():
            errors.append(f"{_where(text, 'model', 'data')}: data file {str(p)!r} "
                          "does not exist")
        m["data"] = str(p.resolve())

    # approx
    a = {}
    for key, value in raw["approx"].items():
        if key not in APPROX_KEYS:
            errors.append(f"{_where(text, 'approx', key)}: unknown key {key!r}")
        else:
            a[key] = _check_type(errors, text, "approx", key, value)
    a.setdefault("family", "gaussian")
    if a["family"] not in ("gaussian", "mixture"):
        errors.append(f"{_where(text, 'approx', 'family')}: unknown family "
                      f"{a['family']!r}; choose gaussian or mixture")
    a.setdefault("components", 1)
    if a["family"] == "gaussian" and a["components"] != 1:
        errors.append(f"{_where(text, 'approx', 'components')}: a gaussian "
                      "approximation has exactly one component")
    if a["components"] is not None and a["components"] < 1:
        errors.append(f"{_where(text, 'approx', 'components')}: must be at least 1")
    a.setdefault("init_scale", 0.1)
    a.setdefault("init_spread", 1.0)
    a.setdefault("init_seed", 0)

    # run
    r = {}
    for key, value in raw["run"].items():
        if key not in RUN_KEYS:
            errors.append(f"{_where(text, 'run', key)}: unknown key {key!r}")
        else:
            r[key] = _check_type(errors, text, "run", key, value)
    estimator = r.get("estimator", "natgrad-cholesky")
    if estimator not in gv.ESTIMATOR_KINDS:
        errors.append(f"{_where(text, 'run', 'estimator')}: unknown estimator "
                      f"{estimator!r}; choose from {', '.join(gv.ESTIMATOR_KINDS)}")
    sched_kind = r.pop("schedule", "constant")
    default_rate = 0.01 if sched_kind == "adam" else 0.05
    sched_kw = {k: r.pop(k) for k in ("base_rate", "decay", "beta1", "beta2", "eps")
                if k in r}
    sched_kw.setdefault("base_rate", default_rate)
    run_cfg = None
    try:
        run_cfg = op.RunConfig(schedule=op.StepSchedule(sched_kind, **sched_kw), **r)
    except (TypeError, ValueError) as err:
        errors.append(f"{_where(text, 'run')}: {err}")

    # output
    o = {"directory": "natvi-out", "trace": "trace.csv", "summary": "summary.json",
         "timing": False}
    for key, value in raw.get("output", {}).items():
        if key not in OUTPUT_KEYS:
            errors.append(f"{_where(text, 'output', key)}: unknown key {key!r}")
        else:
            o[key] = _check_type(errors, text, "output", key, value)

    if errors:
        raise SpecError(errors)

    spec = ExperimentSpec(m, a, run_cfg, o)
    # cross-section checks need the built model
    try:
        model, _ = build_model(spec)
    except (ValueError, OSError) as err:
        raise SpecError([f"{_where(text, 'model')}: {err}"]) from None
    if a.get("dim") is not None and a["dim"] != model.dim:
        errors.append(f"{_where(text, 'approx', 'dim')}: approximation dimension "
                      f"{a['dim']} does not match model dimension {model.dim}")
    try:
        op.validate_config(run_cfg, model, a["family"])
    except ValueError as err:
        loc = _where(text, "run", "estimator")
        errors.extend(f"{loc}: {msg}" for msg in str(err).split("; "))
    if errors:
        raise SpecError(errors)
    return spec


# ---------------------------------------------------------------------------
# building models and initial approximations
# ---------------------------------------------------------------------------

def _synthetic_design(p, d):
    rng = np.random.default_rng(p.get("data_seed", 0))
    n = p.get("n_obs", 20)
    theta = np.asarray(p.get("true_theta", np.ones(d)), dtype=float)
    return rng, rng.standard_normal((n, theta.size)), theta


def build_model(spec):
    """Return ``(TargetModel, ExactGaussianPosterior or None)``."""
    p = spec.model
    kind = p["kind"]
    posterior = None
    if kind == "conjugate":
        if "data" in p:
            X, y = md.load_regression_csv(p["data"])
        elif "design" in p or "observations" in p:
            X = np.asarray(p.get("design", []), dtype=float)
            y = np.asarray(p.get("observations", []), dtype=float)
        elif "n_obs" in p or "true_theta" in p:
            d = len(p["prior_mean"]) if "prior_mean" in p else len(p["true_theta"])
            rng, X, theta = _synthetic_design(p, d)
            y = X @ theta + np.sqrt(p.get("noise_var", 1.0)) * rng.standard_normal(X.shape[0])
        else:
            X, y = None, None
        if "prior_mean" in p:
            mu0 = np.asarray(p["prior_mean"], dtype=float)
        elif X is not None and np.size(X):
            mu0 = np.zeros(np.atleast_2d(X).shape[1])
        else:
            raise ValueError("conjugate model needs prior_mean or data to fix the dimension")
        d = mu0.size
        if "prior_cov" in p:
            S0 = np.asarray(p["prior_cov"], dtype=float)
        else:
            S0 = p.get("prior_var", 1.0) * np.eye(d)
        model, posterior = md.make_conjugate_gaussian(mu0, S0, X, p.get("noise_var", 1.0), y)
    elif kind == "logistic":
        if "data" in p:
            X, y = md.load_regression_csv(p["data"])
        elif "design" in p:
            X = np.asarray(p["design"], dtype=float)
            y = np.asarray(p.get("labels", []), dtype=float)
        else:
            if "true_theta" not in p:
                raise ValueError("logistic model needs data, design/labels or true_theta")
            rng, X, theta = _synthetic_design(p, len(p["true_theta"]))
            y = (rng.random(X.shape[0]) < 1.0 / (1.0 + np.exp(-X @ theta))).astype(float)
        model = md.make_logistic_regression(X, y, p.get("prior_precision", 1.0))
    elif kind == "bimodal":
        for key in ("centers", "scales", "weights"):
            if key not in p:
                raise ValueError(f"bimodal model needs {key!r}")
        model = md.make_bimodal_target(p["centers"], p["scales"], p["weights"])
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    if not p.get("provide_hessian", True):
        model = md.without_hessian(model)
    return model, posterior


def build_initial(spec, dim):
    a = spec.approx
    if a["family"] == "gaussian":
        mean = a.get("init_mean")
        return gv.GaussianApprox.isotropic(dim, a["init_scale"], mean)
    rng = np.random.default_rng(a["init_seed"])
    return mv.MixtureApprox.initial(dim, a["components"], rng, a["init_scale"],
                                    a["init_spread"])


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_CONJ_D2 = """
[model]
kind = "conjugate"
prior_mean = [0.0, 0.0]
prior_var = 1.0
noise_var = 1.0
n_obs = 20
true_theta = [1.0, -0.5]
data_seed = 2024

[approx]
family = "gaussian"
dim = 2
init_scale = 0.1
"""

PRESETS = {
    "conjugate-d2-ng": _CONJ_D2 + """
[run]
estimator = "natgrad-cholesky"
schedule = "constant"
base_rate = 0.05
iterations = 5000
seed = 42

[output]
directory = "conjugate-d2-ng"
""",
    "conjugate-d2-natural": _CONJ_D2 + """
[run]
estimator = "natgrad-natural"
schedule = "constant"
base_rate = 0.05
iterations = 5000
seed = 42

[output]
directory = "conjugate-d2-natural"
""",
    "conjugate-d2-adam": _CONJ_D2 + """
[run]
estimator = "euclid-reparam"
schedule = "adam"
base_rate = 0.01
iterations = 5000
seed = 42

[output]
directory = "conjugate-d2-adam"
""",
    "logistic-d3-ng": """
[model]
kind = "logistic"
n_obs = 100
true_theta = [0.5, -1.0, 1.5]
data_seed = 7
prior_precision = 1.0

[approx]
family = "gaussian"
dim = 3

[run]
estimator = "natgrad-cholesky"
schedule = "robbins-monro"
base_rate = 0.05
decay = 0.001
iterations = 5000
seed = 42

[output]
directory = "logistic-d3-ng"
""",
    "bimodal-k2": """
[model]
kind = "bimodal"
centers = [[-2.0], [2.0]]
scales = [0.5, 0.5]
weights = [0.3, 0.7]

[approx]
family = "mixture"
dim = 1
components = 2
init_scale = 0.5
init_seed = 0

[run]
estimator = "natgrad-cholesky"
schedule = "constant"
base_rate = 0.05
iterations = 3000
seed = 42

[output]
directory = "bimodal-k2"
""",
    "bimodal-k3-natural": """
[model]
kind = "bimodal"
centers = [[-2.0], [2.0]]
scales = [0.5, 0.5]
weights = [0.3, 0.7]

[approx]
family = "mixture"
dim = 1
components = 3
init_scale = 0.5
init_seed = 2

[run]
estimator = "natgrad-natural"
schedule = "constant"
base_rate = 0.05
iterations = 3000
seed = 42

[output]
directory = "bimodal-k3-natural"
""",
}


def load_preset(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return parse_spec_text(PRESETS[name])


# ---------------------------------------------------------------------------
# running and output
# ---------------------------------------------------------------------------

def trace_header(family, n_components=1):
    cols = ["iteration", "elbo", "elbo_se", "stepsize", "param_norm_mu", "param_norm_c"]
    if family == "mixture":
        for k in range(1, n_components + 1):
            cols += [f"weight_{k}", f"param_norm_mu_{k}", f"param_norm_c_{k}"]
    return cols + ["wall_time_ms"]


def _fmt(x):
    return repr(float(x))


def write_trace_csv(path, trace, family, n_components=1, timing=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(family, n_components))
    for rec in trace:
        row = [str(rec.iteration), _fmt(rec.elbo), _fmt(rec.elbo_se), _fmt(rec.stepsize),
               _fmt(rec.param_norm_mu), _fmt(rec.param_norm_c)]
        if family == "mixture":
            for comp in rec.components:
                row += [_fmt(v) for v in comp]
        row.append(_fmt(rec.wall_time_ms) if timing else "")
        w.writerow(row)
    _atomic_write(path, buf.getvalue())


def _atomic_write(path, content):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _output_dir(spec, out=None):
    d = Path(out) if out is not None else Path(spec.output["directory"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not d.is_absolute():
        d = Path(root) / d
    return d


def _describe(approx):
    if isinstance(approx, mv.MixtureApprox):
        return {"weights": approx.weights.tolist(),
                "component_means": [c.mean.tolist() for c in approx.components],
                "component_covs": [c.cov.tolist() for c in approx.components]}
    return {"mean": approx.mean.tolist(), "cov": approx.cov.tolist()}


def _finite_or_null(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_null(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_null(v) for v in obj]
    return obj


def run_experiment(spec, out=None, stream=None):
    """Run ``spec`` and write its trace and summary. Returns an exit status."""
    stream = sys.stderr if stream is None else stream
    outdir = _output_dir(spec, out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=outdir, delete=True)
        probe.close()
    except OSError as err:
        print(f"error: output directory {str(outdir)!r} is not writable: {err}", file=stream)
        return 2

    model, posterior = build_model(spec)
    initial = build_initial(spec, model.dim)
    family = spec.approx["family"]
    n_comp = spec.approx["components"]
    timing = bool(spec.output.get("timing", False))
    summary = {"status": "ok", "family": family, "seed": spec.run.seed}
    start = time.perf_counter()
    status = 0
    try:
        final, trace = op.run_sga(spec.run, model, initial, timing=timing)
    except op.OptimizationAborted as err:
        print(f"error: {err}", file=stream)
        final, trace, status = err.last_good, err.trace, 1
        summary["status"] = "aborted"
        summary["error"] = str(err)
    summary["wall_time_ms"] = (time.perf_counter() - start) * 1e3
    if trace:
        summary["final_elbo"] = trace[-1].elbo
        summary["final_elbo_se"] = trace[-1].elbo_se
        summary["iterations_run"] = trace[-1].iteration
    with np.errstate(over="ignore", invalid="ignore"):
        if posterior is not None and isinstance(final, gv.GaussianApprox):
            try:
                summary["kl_final"] = gv.gaussian_kl(final, posterior)
            except (ValueError, np.linalg.LinAlgError):
                summary["kl_final"] = None
            summary["posterior"] = {"mean": posterior.mean.tolist(),
                                    "cov": posterior.cov.tolist()}
        summary["approximation"] = _describe(final)
    summary = _finite_or_null(summary)
    summary["config"] = spec.to_dict()

    write_trace_csv(outdir / spec.output["trace"], trace, family, n_comp, timing)
    _atomic_write(outdir / spec.output["summary"],
                  json.dumps(summary, indent=2, allow_nan=False) + "\n")
    return status
