"""Command-line front end.

    copfrail fit --input data.csv --model Cg --out outdir [--seed N] [--dump-draws]
    copfrail simulate --config sim.cfg --out data.csv
    copfrail study --config study.cfg --out results.csv

Config files are INI-style ``key = value`` text with one section per
subcommand (``[fit]``, ``[simulate]``, ``[study]``); command-line flags
override file values.  Exit status is 0 on success, 1 on error and 2 when a
fit stops at ``max_iter`` without converging (outputs are still written).
"""

import argparse
import configparser
import os
import sys

import numpy as np

from .errors import CopfrailError, FitError, ParseError
from .event_data import load_dataset, save_dataset
from .frailty import MODEL_LABELS
from .frailty_posterior import MHConfig
from .mcem import FitConfig, PRACTICAL_CONVERGENCE, ConvergenceConfig, fit
from .report import write_fit_outputs
from .simulate import STUDY_SETTINGS, SimConfig, censoring_fraction, generate_dataset, run_study

__all__ = ["main", "build_parser", "load_config", "fit_config_from", "sim_config_from"]

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

# key -> type, for every key a config section may carry
_KEYS = {
    "input": str,
    "out": str,
    "model": str,
    "seed": int,
    "n_burn": int,
    "n_thin": int,
    "n_s": int,
    "step_scale": float,
    "max_iter": int,
    "delta1": float,
    "delta2": float,
    "consecutive_required": int,
    "window": int,
    "floor": float,
    "compute_se": "bool",
    "se_draw_factor": int,
    "dump_draws": "bool",
    "threads": int,
    "n_subjects": int,
    "n_types": int,
    "setting": str,
    "copula_truth": float,
    "alpha_truth": "floats",
    "beta_truth": "floats",
    "censor_rate": float,
    "admin_cutoff": float,
    "n_replicates": int,
    "replicates_out": str,
}


def _convert(key, raw):
    kind = _KEYS[key]
    if kind == "bool":
        v = str(raw).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "floats":
        return tuple(float(x) for x in str(raw).replace(",", " ").split())
    try:
        return kind(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def load_config(path, section):
    """Read one section of an INI config into a dict of typed values."""
    cp = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if not cp.has_section(section):
        return {}
    out = {}
    for key, raw in cp.items(section):
        if key not in _KEYS:
            raise ValueError(f"unknown key {key!r} in section [{section}]")
        out[key] = _convert(key, raw)
    return out


def _merge(args, section):
    opts = load_config(args.config, section) if getattr(args, "config", None) else {}
    for key in _KEYS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            opts[key] = v
    return opts


def fit_config_from(opts):
    """``FitConfig`` from a merged option dict (defaults for missing keys)."""
    base = MHConfig()
    mh = MHConfig(
        n_burn=opts.get("n_burn", base.n_burn),
        n_thin=opts.get("n_thin", base.n_thin),
        n_s=opts.get("n_s", base.n_s),
        step_scale=opts.get("step_scale", base.step_scale),
    )
    conv = ConvergenceConfig(
        delta1=opts.get("delta1", 0.01),
        delta2=opts.get("delta2", 0.003),
        consecutive_required=opts.get("consecutive_required", 3),
        max_iter=opts.get("max_iter", 200),
        window=opts.get("window", PRACTICAL_CONVERGENCE["window"]),
        floor=opts.get("floor", PRACTICAL_CONVERGENCE["floor"]),
    )
    return FitConfig(
        mh=mh,
        convergence=conv,
        compute_se=opts.get("compute_se", True),
        se_draw_factor=opts.get("se_draw_factor", 4),
        seed=opts.get("seed"),
    )


def sim_config_from(opts):
    """``SimConfig`` from a merged option dict.

    ``setting`` (I, II or III) selects the published copula parameter for
    the model's copula family unless ``copula_truth`` is given.
    """
    model = opts.get("model", "Cg")
    if model not in MODEL_LABELS:
        raise ValueError(f"unknown model label {model!r}; expected one of {sorted(MODEL_LABELS)}")
    m = opts.get("n_types", 3)
    setting = opts.get("setting", "II")
    cfam = MODEL_LABELS[model][0]
    if "copula_truth" in opts:
        cop = opts["copula_truth"]
    else:
        try:
            cop = STUDY_SETTINGS[cfam][setting]
        except KeyError:
            raise ValueError(f"unknown setting {setting!r}; expected I, II or III") from None
    kw = dict(
        n_subjects=opts.get("n_subjects", 200),
        n_types=m,
        model=model,
        copula_truth=cop,
        censor_rate=opts.get("censor_rate", 0.5),
        admin_cutoff=opts.get("admin_cutoff", 1.0),
        n_replicates=opts.get("n_replicates", 100),
        seed=opts.get("seed"),
        setting=f"{model} {setting}" if "copula_truth" not in opts else model,
    )
    if "alpha_truth" in opts:
        kw["alpha_truth"] = opts["alpha_truth"]
    elif m != 3:
        kw["alpha_truth"] = (1.0,) * m
    if "beta_truth" in opts:
        kw["beta_truth"] = opts["beta_truth"]
    elif m != 3:
        kw["beta_truth"] = tuple(np.resize([1.0, 0.8, 0.4], m))
    return SimConfig(**kw)


def _seed_or_entropy(opts, err):
    if opts.get("seed") is None:
        opts["seed"] = int(np.random.SeedSequence().entropy % (2**63))
        print(f"seed: {opts['seed']}", file=err)
    return opts["seed"]


def cmd_fit(args, out=sys.stdout, err=sys.stderr):
    opts = _merge(args, "fit")
    for key in ("input", "model", "out"):
        if key not in opts:
            raise ValueError(f"fit needs --{key}")
    if opts["model"] not in MODEL_LABELS:
        raise ValueError(f"unknown model label {opts['model']!r}; expected one of {sorted(MODEL_LABELS)}")
    d = load_dataset(opts["input"])
    _seed_or_entropy(opts, err)
    cfg = fit_config_from(opts)

    def progress(rec):
        print(f"iteration {rec.iteration}: criterion {rec.criterion:.5f}", file=err)

    res = fit(d, opts["model"], cfg, callback=progress if getattr(args, "verbose", False) else None)
    paths = write_fit_outputs(res, d, opts["out"], draws=opts.get("dump_draws", False))
    for p in paths:
        print(p, file=out)
    if not res.converged:
        print(f"not converged after {res.n_iterations} iterations", file=err)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(args, out=sys.stdout, err=sys.stderr):
    opts = _merge(args, "simulate")
    if "out" not in opts:
        raise ValueError("simulate needs --out")
    _seed_or_entropy(opts, err)
    cfg = sim_config_from(opts)
    d = generate_dataset(cfg, np.random.default_rng(cfg.seed))
    save_dataset(d, opts["out"])
    print(f"subjects: {d.n_subjects}  events: {int(d.counts.sum())}  censoring fraction: {censoring_fraction(d):.3f}", file=out)
    return EXIT_OK


def cmd_study(args, out=sys.stdout, err=sys.stderr):
    opts = _merge(args, "study")
    if "out" not in opts:
        raise ValueError("study needs --out")
    if opts.get("seed") is None:
        raise ValueError("study needs a seed")
    cfg = sim_config_from(opts)
    fcfg = fit_config_from(opts)
    workers = opts.get("threads") or os.cpu_count() or 1

    def progress(o):
        state = "ok" if o.converged else f"FAILED ({o.error})"
        print(f"replicate {o.index + 1}/{cfg.n_replicates}: {state}, {o.n_iterations} iterations, {o.runtime:.1f} s", file=err, flush=True)

    res = run_study(cfg, fcfg, progress=progress, workers=workers)
    res.to_csv(opts["out"])
    if opts.get("replicates_out"):
        res.replicates_to_csv(opts["replicates_out"])
    print(f"{len(res.replicates) - res.n_failed} of {cfg.n_replicates} replicates used", file=out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="copfrail", description="Copula-frailty models for multi-type recurrent events.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--model", choices=sorted(MODEL_LABELS))
        sp.add_argument("--out", help="output path")

    def fitting(sp):
        sp.add_argument("--n-burn", dest="n_burn", type=int)
        sp.add_argument("--n-thin", dest="n_thin", type=int)
        sp.add_argument("--n-s", dest="n_s", type=int)
        sp.add_argument("--max-iter", dest="max_iter", type=int)
        sp.add_argument("--delta1", type=float)
        sp.add_argument("--delta2", type=float)
        sp.add_argument("--window", type=int)
        sp.add_argument("--floor", type=float)

    f = sub.add_parser("fit", help="fit a model to an event CSV")
    common(f)
    fitting(f)
    f.add_argument("--input", help="event CSV")
    f.add_argument("--dump-draws", dest="dump_draws", action="store_true", default=None)
    f.add_argument("-v", "--verbose", action="store_true")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate one dataset")
    common(s)
    s.add_argument("--n-subjects", dest="n_subjects", type=int)
    s.add_argument("--setting", choices=["I", "II", "III"])
    s.set_defaults(func=cmd_simulate)

    st = sub.add_parser("study", help="run a simulation study")
    common(st)
    fitting(st)
    st.add_argument("--n-subjects", dest="n_subjects", type=int)
    st.add_argument("--n-replicates", dest="n_replicates", type=int)
    st.add_argument("--setting", choices=["I", "II", "III"])
    st.add_argument("--threads", type=int)
    st.add_argument("--replicates-out", dest="replicates_out")
    st.set_defaults(func=cmd_study)
    return p


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out=out, err=err)
    except ParseError as exc:
        print(f"error: input file: {exc}", file=err)
    except FitError as exc:
        print(f"error: {exc.stage}: {exc}", file=err)
    except (CopfrailError, ValueError, OSError, configparser.Error) as exc:
        print(f"error: {exc}", file=err)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
