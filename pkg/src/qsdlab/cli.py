"""Config-driven experiment runner.

Usage: qsdlab <task> --config FILE [--seed N] [--threads N] [--out DIR]

Tasks: classify, criteria, qsd, qprocess, coming_down, validate.  The
config is a TOML document with sections [model], [numerics], [output];
command-line flags override the corresponding config entries.  Every
emitted data file is a pure function of (config, seed): timestamps and
wall-clock figures go to the run.log sidecar only, and thread count
changes neither numbers nor bytes.

Exit codes: 0 success, 2 validation failure, 3 numeric error, 4 config
or usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import zoo
from .criteria import (check_condition_C, check_condition_Cprime,
                       check_condition_D, check_drifted_bm,
                       check_logistic_model, check_matsumoto)
from .engine import coming_down_probability, make_tables
from .engine import simulate_qprocess as qprocess_ensemble
from .errors import ConfigError, NumericError, QsdlabError
from .measures import classify_boundaries, natural_scale_form
from .qsd import (estimate_eta, estimate_lambda0, estimate_qsd,
                  eta_profile_fn, evolve_conditioned_ensemble,
                  fit_convergence_rate, sqrt_edges, tv_distance, bin_weights)
from .spectral import discretize_generator, principal_eigenpair

TASKS = ("classify", "criteria", "qsd", "qprocess", "coming_down", "validate")
MODEL_KINDS = ("logistic", "drifted_bm", "natural_scale", "jump_extended")

# fixed key orders for the canonical form
_MODEL_KEYS = ("kind", "kill", "y_max", "preset", "cut", "jump_rate",
               "jump_level")
_NUMERICS_KEYS = ("dt", "n_particles", "n_paths", "grid", "horizon", "seed",
                  "x0", "x_sweep", "x_top", "eta_points", "n_bins")
_OUTPUT_KEYS = ("directory", "formats")

_DEFAULTS = {
    "model": {"kind": "logistic", "kill": None, "y_max": None,
              "preset": None, "cut": None, "jump_rate": None,
              "jump_level": None},
    "numerics": {"dt": 1e-3, "n_particles": 10000, "n_paths": 20000,
                 "grid": 800, "horizon": 10.0, "seed": None, "x0": 1.0,
                 "x_sweep": None, "x_top": None, "eta_points": 12,
                 "n_bins": 48},
    "output": {"directory": "out", "formats": ["json", "csv"]},
}

_POSITIVE = ("dt", "n_particles", "n_paths", "grid", "horizon", "x0",
             "eta_points", "n_bins")


def parse_config(text):
    """TOML text -> validated config dict with defaults materialized."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config does not parse: %s" % e)
    cfg = {}
    for section, defaults in _DEFAULTS.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError("[%s] must be a table" % section)
        known = set(defaults)
        extra = set(given) - known
        if extra:
            raise ConfigError("unknown key(s) in [%s]: %s"
                              % (section, ", ".join(sorted(extra))))
        cfg[section] = dict(defaults)
        cfg[section].update(given)
    kind = cfg["model"]["kind"]
    if kind not in MODEL_KINDS:
        raise ConfigError("unknown model kind: %r (one of %s)"
                          % (kind, ", ".join(MODEL_KINDS)))
    num = cfg["numerics"]
    for key in _POSITIVE:
        v = num[key]
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError("numerics.%s must be positive" % key)
    if num["seed"] is not None and not isinstance(num["seed"], int):
        raise ConfigError("numerics.seed must be an integer")
    if num["x_sweep"] is not None:
        xs = num["x_sweep"]
        if (not isinstance(xs, list) or not xs
                or any(not isinstance(v, (int, float)) or v <= 0 for v in xs)):
            raise ConfigError("numerics.x_sweep must be a list of positive "
                              "numbers (inf allowed)")
    fmts = cfg["output"]["formats"]
    if not isinstance(fmts, list) or any(f not in ("json", "csv") for f in fmts):
        raise ConfigError("output.formats entries must be json or csv")
    return cfg


def _toml_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return repr(v)
    if isinstance(v, str):
        return '"%s"' % v.replace("\\", "\\\\").replace('"', '\\"')
    if isinstance(v, list):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError("cannot serialize config value %r" % (v,))


def canonical_config(cfg):
    """Config dict -> canonical TOML text (fixed key order, no None keys)."""
    out = io.StringIO()
    for section, keys in (("model", _MODEL_KEYS), ("numerics", _NUMERICS_KEYS),
                          ("output", _OUTPUT_KEYS)):
        out.write("[%s]\n" % section)
        for key in keys:
            v = cfg[section].get(key)
            if v is None:
                continue
            out.write("%s = %s\n" % (key, _toml_scalar(v)))
        out.write("\n")
    return out.getvalue()


def build_spec(cfg):
    """Model section -> DiffusionSpec via the zoo builders."""
    m = cfg["model"]
    kind = m["kind"]
    if kind == "logistic":
        return zoo.logistic(kill=m["kill"] or "cap",
                            y_max=m["y_max"] or 8.0)
    if kind == "drifted_bm":
        return zoo.drifted_bm(kill=m["kill"] or "power",
                              y_max=m["y_max"] or 6.0)
    if kind == "jump_extended":
        return zoo.jump_extended(kill=m["kill"] or "cap",
                                 y_max=m["y_max"] or 8.0,
                                 jump_rate=m["jump_rate"] or 1.0,
                                 jump_level=m["jump_level"] or 1.0)
    if kind == "natural_scale":
        return zoo.natural_scale_preset(preset=m["preset"] or "brownian",
                                        cut=m["cut"] or 1.0)
    raise ConfigError("unknown model kind: %r" % (kind,))


def _require_sde(spec, task):
    if spec.sde_form is None:
        raise ConfigError("task %s needs SDE coefficients; this model only "
                          "has (scale, speed, killing) data" % task)
    if spec.killing.atoms.shape[0] > 0:
        raise ConfigError("the path engine handles killing densities only; "
                          "atom killing works with the chain engine and "
                          "coming_down")


def _fmt(v):
    """Shortest round-trip decimal text for a float (deterministic)."""
    return repr(float(v))


def _write_csv(path, header, columns):
    rows = len(columns[0])
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for i in range(rows):
            f.write(",".join(_fmt(c[i]) for c in columns) + "\n")


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _verdict_dict(v):
    return {"status": v.status,
            "evidence": [[e[0], _jsonable(e[1]), _jsonable(e[2]), e[3]]
                         for e in v.evidence],
            "notes": v.notes}


def task_classify(cfg, out_dir, log):
    spec = build_spec(cfg)
    rep = classify_boundaries(spec)
    payload = {"model": spec.label, "report": rep.summary(),
               "evidence": {k: {"status": r.status,
                                "value": _jsonable(r.value)}
                            for k, r in rep.evidence.items()},
               "incomplete": False}
    _write_json(os.path.join(out_dir, "classify.json"), payload)
    return 0, ["classify.json"]


def task_criteria(cfg, out_dir, log):
    spec = build_spec(cfg)
    kind = cfg["model"]["kind"]
    kill = cfg["model"]["kill"]
    verdicts = {}
    if kind in ("logistic", "jump_extended"):
        h, kappa = zoo.logistic_coefficients(kill or "cap")
        verdicts["logistic_model"] = check_logistic_model(h, kappa)
    elif kind == "drifted_bm":
        h, kappa = zoo.drifted_bm_coefficients(kill or "power")
        if kappa is not None:
            verdicts["drifted_bm"] = check_drifted_bm(h, kappa)
    ns = natural_scale_form(spec)
    verdicts["matsumoto"] = check_matsumoto(ns)
    verdicts["condition_C"] = check_condition_C(ns)
    verdicts["condition_Cprime"] = check_condition_Cprime(ns)
    verdicts["condition_D"] = check_condition_D(spec)
    payload = {"model": spec.label,
               "verdicts": {k: _verdict_dict(v) for k, v in verdicts.items()},
               "statuses": {k: v.status for k, v in verdicts.items()},
               "incomplete": False}
    _write_json(os.path.join(out_dir, "criteria.json"), payload)
    return 0, ["criteria.json"]


def _lambda0_grid(horizon):
    n = max(12, min(48, int(round(4 * horizon))))
    return np.linspace(horizon / n, horizon, n)


def _eta_grid(y_top, n_points):
    fracs = np.geomspace(0.00625, 0.75, int(n_points))
    return y_top * fracs


def task_qsd(cfg, out_dir, log):
    spec = build_spec(cfg)
    _require_sde(spec, "qsd")
    num = cfg["numerics"]
    dt, horizon, seed = num["dt"], num["horizon"], num["seed"]
    jumps = spec.meta.get("jumps")
    tables = make_tables(spec)
    files = []

    gen = discretize_generator(spec, n=int(num["grid"]))
    sol = principal_eigenpair(gen)
    log("spectral lambda0 %.8g gap %.6g" % (sol.lambda0, sol.spectral_gap))

    results = {"incomplete": False}
    try:
        lam = estimate_lambda0(spec, num["x0"], _lambda0_grid(horizon),
                               num["n_paths"], dt, seed, tables=tables,
                               jumps=jumps)
        results["lambda0"] = lam.value
        results["ci"] = [lam.ci_low, lam.ci_high]
        log("mc lambda0 %.6g window %s" % (lam.value, lam.window))

        # the interacting system has no jump support; jump models fall back
        # to renormalized independent paths over a horizon the sample size
        # can survive
        mode = "fv" if jumps is None else "renormalize"
        h_alpha = horizon
        if mode == "renormalize":
            h_alpha = min(horizon, max(
                2.0, math.log(num["n_particles"] / 500.0)
                / max(lam.value, 1e-9)))
        ens = evolve_conditioned_ensemble(spec, num["x0"], h_alpha, dt,
                                          num["n_particles"], seed + 1,
                                          mode=mode, tables=tables,
                                          jumps=jumps)
        edges = sqrt_edges(tables.y_top, int(num["n_bins"]))
        est = estimate_qsd(ens, edges)
        alpha_spec = bin_weights(gen.y_nodes, sol.alpha, edges)
        hists = [np.histogram(ens.positions[j], bins=edges)[0]
                 for j in range(len(ens.times))]
        tv_curve = np.array([tv_distance(h / h.sum(), est.alpha_hist)
                             for h in hists])
        # the curve bottoms out at the finite-ensemble noise plateau; read
        # the plateau off the tail so the fit sees only the decay window
        floor = 2.0 * float(np.median(tv_curve[ens.times >=
                                               ens.times[-1] * 2.0 / 3.0]))
        fit = fit_convergence_rate(ens.times, tv_curve, noise_floor=floor)
        results["gamma"] = fit.gamma
        results["C"] = fit.C

        t_star = min(max(lam.window[0], 2.0), 0.5 * horizon)
        eta_hat = estimate_eta(spec, _eta_grid(tables.y_top,
                                               num["eta_points"]),
                               t_star, num["n_paths"], dt, seed + 2,
                               lam.value, alpha=est, tables=tables,
                               jumps=jumps)
        eta_fn = eta_profile_fn(eta_hat.x, eta_hat.value)
        mids = 0.5 * (edges[:-1] + edges[1:])
        eta_spec_fn = eta_profile_fn(gen.y_nodes, sol.eta_nodes)
        _write_csv(os.path.join(out_dir, "alpha.csv"),
                   ["x", "alpha_hat", "alpha_spectral", "eta_hat",
                    "eta_spectral"],
                   [mids, est.alpha_hist, alpha_spec, eta_fn(mids),
                    eta_spec_fn(mids)])
        _write_csv(os.path.join(out_dir, "tv.csv"), ["t", "tv"],
                   [ens.times, tv_curve])
        _write_csv(os.path.join(out_dir, "survival.csv"),
                   ["t", "survival_fraction"], [lam.times, lam.survival])
        files += ["alpha.csv", "tv.csv", "survival.csv"]
        results["diagnostics"] = {
            "lambda0_spectral": sol.lambda0,
            "spectral_gap": sol.spectral_gap,
            "lambda0_rel_err": abs(lam.value - sol.lambda0) / sol.lambda0,
            "tv_fv_vs_spectral": tv_distance(est.alpha_hist, alpha_spec),
            "rate_fit_r2": fit.r2,
            "rate_fit_window": list(fit.window),
            "lambda0_window": list(lam.window),
            "eta_scale": eta_hat.scale,
            "eta_t_star": eta_hat.t_star,
            "qsd_window": list(est.t_window),
            "n_bins": int(num["n_bins"]),
            "alpha_mode": mode,
            "alpha_horizon": h_alpha,
            "jumps": list(jumps) if jumps else None,
        }
    except NumericError as e:
        results["incomplete"] = True
        results["error"] = str(e)
        _write_json(os.path.join(out_dir, "summary.json"), _jsonable(results))
        log("numeric error: %s" % e)
        return 3, files + ["summary.json"]
    _write_json(os.path.join(out_dir, "summary.json"), _jsonable(results))
    return 0, files + ["summary.json"]


def task_qprocess(cfg, out_dir, log):
    spec = build_spec(cfg)
    _require_sde(spec, "qprocess")
    num = cfg["numerics"]
    tables = make_tables(spec)
    gen = discretize_generator(spec, n=int(num["grid"]))
    sol = principal_eigenpair(gen)
    eta_fn = eta_profile_fn(gen.y_nodes, sol.eta_nodes)
    n_paths = min(int(num["n_paths"]), 512)
    res = qprocess_ensemble(spec, eta_fn, num["x0"], num["horizon"],
                            num["dt"], n_paths, num["seed"], tables=tables)
    edges = sqrt_edges(tables.y_top, int(num["n_bins"]))
    burn = res.snapshot_times >= 0.25 * num["horizon"]
    samples = res.snapshots[:, burn].ravel()
    occ, _ = np.histogram(samples, bins=edges)
    occ = occ / occ.sum()
    beta_nodes = sol.eta_nodes * sol.alpha
    beta = bin_weights(gen.y_nodes, beta_nodes / beta_nodes.sum(), edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    _write_csv(os.path.join(out_dir, "occupation.csv"),
               ["x", "occupation", "beta"], [mids, occ, beta])
    results = {"lambda0": sol.lambda0,
               "tv_occupation_vs_beta": tv_distance(occ, beta),
               "stuck_fraction": res.stuck_fraction,
               "n_paths": n_paths, "horizon": num["horizon"],
               "burn_in": 0.25 * num["horizon"],
               "incomplete": False}
    _write_json(os.path.join(out_dir, "summary.json"), _jsonable(results))
    return 0, ["occupation.csv", "summary.json"]


def task_coming_down(cfg, out_dir, log):
    spec = build_spec(cfg)
    num = cfg["numerics"]
    sweep = num["x_sweep"] or [0.5, 1.0, 2.0, 5.0, math.inf]
    rows = {"x": [], "prob": [], "se": [], "tail_bound": []}
    incomplete = False
    err = None
    for x in sweep:
        try:
            r = coming_down_probability(spec, num["horizon"], float(x),
                                        n_paths=int(num["n_paths"]),
                                        seed=int(num["seed"]),
                                        x_top=num["x_top"])
        except (NumericError, ConfigError) as e:
            incomplete = True
            err = str(e)
            log("coming_down stopped at x=%s: %s" % (x, e))
            break
        rows["x"].append(float(x))
        rows["prob"].append(r.prob)
        rows["se"].append(r.se)
        rows["tail_bound"].append(r.tail_bound)
        log("coming_down x=%s prob %.6g se %.3g tail %.3g"
            % (x, r.prob, r.se, r.tail_bound))
    _write_csv(os.path.join(out_dir, "coming_down.csv"),
               ["x", "prob", "se", "tail_bound"],
               [rows["x"], rows["prob"], rows["se"], rows["tail_bound"]])
    results = {"horizon": num["horizon"], "x_sweep": rows["x"],
               "prob": rows["prob"], "incomplete": incomplete}
    if err:
        results["error"] = err
    _write_json(os.path.join(out_dir, "summary.json"), _jsonable(results))
    return (3 if incomplete else 0), ["coming_down.csv", "summary.json"]


def task_validate(cfg, out_dir, log):
    from .validate import run_acceptance
    report = run_acceptance(log=log)
    _write_json(os.path.join(out_dir, "validation.json"), _jsonable(report))
    ok = all(item["passed"] for item in report["criteria"])
    return (0 if ok else 2), ["validation.json"]


_TASK_FNS = {"classify": task_classify, "criteria": task_criteria,
             "qsd": task_qsd, "qprocess": task_qprocess,
             "coming_down": task_coming_down, "validate": task_validate}


def _set_threads(n):
    if n is None:
        n = os.environ.get("QSDLAB_THREADS")
        if n is None:
            return None
    n = int(n)
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    from . import _kernels
    if _kernels.BACKEND == "numba":
        import numba
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n


def run_experiment(task, cfg, out_dir=None, threads=None):
    """Run one task; returns (exit_code, list of written files)."""
    if task not in TASKS:
        raise ConfigError("unknown task: %r" % (task,))
    if cfg["numerics"]["seed"] is None:
        raise ConfigError("numerics.seed is required (no wall-clock seeding)")
    out_dir = out_dir or cfg["output"]["directory"]
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w") as f:
            f.write("")
        os.remove(probe)
    except OSError as e:
        raise ConfigError("output directory not writable: %s" % e)

    log_path = os.path.join(out_dir, "run.log")
    t0 = time.time()
    lines = []

    def log(msg):
        lines.append(msg)

    try:
        code, files = _TASK_FNS[task](cfg, out_dir, log)
    except NumericError as e:
        # partial results still produce a report, flagged incomplete
        _write_json(os.path.join(out_dir, "summary.json"),
                    {"incomplete": True, "error": str(e)})
        log("numeric error: %s" % e)
        code, files = 3, ["summary.json"]
    with open(os.path.join(out_dir, "config.resolved.toml"), "w") as f:
        f.write(canonical_config(cfg))
    files.append("config.resolved.toml")
    # sidecar log is the one place timestamps are allowed
    with open(log_path, "w") as f:
        f.write("started %s\n" % time.strftime("%Y-%m-%dT%H:%M:%S",
                                               time.gmtime(t0)))
        f.write("task %s\n" % task)
        for ln in lines:
            f.write(ln + "\n")
        f.write("wall_seconds %.3f\n" % (time.time() - t0))
    return code, files


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="qsdlab",
        description="quasi-stationary laboratory for killed 1d diffusions")
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", required=True, metavar="FILE")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default=None, metavar="DIR")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as f:
            text = f.read()
        cfg = parse_config(text)
        if args.seed is not None:
            cfg["numerics"]["seed"] = args.seed
        if args.out is not None:
            cfg["output"]["directory"] = args.out
        _set_threads(args.threads)
        code, _files = run_experiment(args.task, cfg)
        return code
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return 4
    except NumericError as e:
        print("numeric error: %s" % e, file=sys.stderr)
        return 3
    except OSError as e:
        print("i/o error: %s" % e, file=sys.stderr)
        return 3
    except QsdlabError as e:
        print("error: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
