"""Files written after a fit: text report, baseline, residual and trace tables.

Column layouts
--------------
baseline.csv
    ``event_type, time, jump, cumulative``: one row per distinct event time
    of each type, in type order then time order.
residuals.csv
    ``subject_id, event_type, n_events, martingale, deviance``.
trace.csv
    ``iteration, criterion, q_value, q_se, q_decrease_flag,
    acceptance_mean, n_acceptance_flags, projected, seconds`` followed by
    one column per monitored parameter.
draws.npz (optional)
    ``b`` (n, n_s, m) log-frailty draws of the last iteration plus
    ``subject_ids`` and ``type_labels``.
"""

import csv
import os

import numpy as np

from .diagnostics import deviance_residuals, relative_risks
from .mcem import BaselineStep

__all__ = [
    "write_fit_outputs",
    "format_report",
    "write_baseline_csv",
    "read_baseline_csv",
    "write_trace_csv",
    "read_trace_csv",
    "read_residuals_csv",
    "dump_draws",
    "FIT_OUTPUTS",
]

FIT_OUTPUTS = ("report.txt", "baseline.csv", "residuals.csv", "trace.csv")

TRACE_COLUMNS = [
    "iteration",
    "criterion",
    "q_value",
    "q_se",
    "q_decrease_flag",
    "acceptance_mean",
    "n_acceptance_flags",
    "projected",
    "seconds",
]


def _fmt(v, spec=".4f"):
    if v is None or not np.isfinite(v):
        return "-"
    return format(v, spec)


def format_report(fit, d=None, residuals=None):
    """Human-readable summary of a :class:`~copfrail.mcem.FitResult`."""
    lines = []
    lines.append(f"model: {fit.model_label}")
    if d is not None:
        lines.append(f"subjects: {d.n_subjects}  event types: {d.n_types}  covariates: {d.n_covariates}")
        lines.append("events per type: " + ", ".join(f"{lab}={int(c)}" for lab, c in zip(d.type_labels, d.counts.sum(axis=0))))
    if fit.type_labels:
        lines.append("type index: " + ", ".join(f"{j + 1}={lab}" for j, lab in enumerate(fit.type_labels)))
    lines.append(f"seed: {fit.seed}")
    status = "converged" if fit.converged else "NOT converged"
    lines.append(f"{status} after {fit.n_iterations} iterations ({fit.runtime:.1f} s)")
    lines.append(f"standard errors: {fit.se_message}")
    lines.append("")
    lines.append(f"{'parameter':<16}{'estimate':>11}{'std.err':>11}{'RR':>10}{'95% RR interval':>22}{'p-value':>10}")
    rr = {r.name: r for r in relative_risks(fit)}
    ses = fit.std_errors or {}
    for name, est in zip(fit.param_names, fit.params.theta):
        se = ses.get(name, np.nan)
        if name in rr:
            r = rr[name]
            ci = f"({_fmt(r.lower, '.3f')}, {_fmt(r.upper, '.3f')})"
            lines.append(f"{name:<16}{est:>11.4f}{_fmt(se):>11}{r.rr:>10.4f}{ci:>22}{_fmt(r.p_value, '.4f'):>10}")
        else:
            lines.append(f"{name:<16}{est:>11.4f}{_fmt(se):>11}")
    if fit.kendall is not None:
        lines.append("")
        k = np.atleast_1d(np.asarray(fit.kendall, dtype=float))
        if k.ndim == 2:
            m = k.shape[0]
            pairs = [f"tau_{a + 1}{b + 1}={k[a, b]:.4f}" for a in range(m) for b in range(a + 1, m)]
            lines.append("Kendall's tau: " + ", ".join(pairs))
        else:
            lines.append(f"Kendall's tau: {float(k[0]):.4f}")
    if residuals is not None:
        lines.append("")
        lines.append("sum of squared deviance residuals by type: " + ", ".join(
            f"{lab}={v:.3f}" for lab, v in zip(residuals.type_labels, residuals.ss_by_type)))
        lines.append(f"total: {residuals.total:.3f}")
    lines.append("")
    lines.append("trace (criterion, Q):")
    for rec in fit.trace:
        lines.append(f"  {rec.iteration:4d}  {_fmt(rec.criterion, '.5f'):>9}  {_fmt(rec.q_value, '.3f'):>12}"
                     + ("  Q decreased" if rec.q_decrease_flag else ""))
    return "\n".join(lines) + "\n"


def write_baseline_csv(fit, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_type", "time", "jump", "cumulative"])
        labels = fit.type_labels or tuple(str(j + 1) for j in range(len(fit.params.baseline)))
        for lab, bl in zip(labels, fit.params.baseline):
            for t, a, c in zip(bl.times, bl.jumps, bl.cumulative):
                w.writerow([lab, repr(float(t)), repr(float(a)), repr(float(c))])


def read_baseline_csv(path):
    """Read ``baseline.csv`` back into ``{type label: BaselineStep}`` (file order of types)."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["event_type"], []).append((float(rec["time"]), float(rec["jump"])))
    return {lab: BaselineStep([r[0] for r in v], [r[1] for r in v]) for lab, v in rows.items()}


def write_trace_csv(fit, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS + list(fit.param_names))
        for rec in fit.trace:
            w.writerow(
                [rec.iteration, repr(float(rec.criterion)), repr(float(rec.q_value)), repr(float(rec.q_se)),
                 int(rec.q_decrease_flag), repr(float(rec.acceptance_mean)), rec.n_acceptance_flags,
                 int(rec.projected), f"{rec.seconds:.4f}"]
                + [repr(float(v)) for v in rec.theta]
            )


def read_trace_csv(path):
    """Read ``trace.csv``; returns ``(names, iterations, theta array, criterion array)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[len(TRACE_COLUMNS):]
        rows = list(reader)
    it = np.array([int(r[0]) for r in rows], dtype=int)
    crit = np.array([float(r[1]) for r in rows])
    theta = np.array([[float(v) for v in r[len(TRACE_COLUMNS):]] for r in rows]).reshape(len(rows), len(names))
    return names, it, theta, crit


def read_residuals_csv(path):
    """Read ``residuals.csv`` into a list of dicts with typed values."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append({
                "subject_id": rec["subject_id"],
                "event_type": rec["event_type"],
                "n_events": int(rec["n_events"]),
                "martingale": float(rec["martingale"]),
                "deviance": float(rec["deviance"]),
            })
    return out


def dump_draws(fit, d, path):
    np.savez_compressed(path, b=fit.draws.b, subject_ids=np.array(d.subject_ids), type_labels=np.array(d.type_labels))


def write_fit_outputs(fit, d, outdir, draws=False):
    """Write the four fit outputs (and optionally ``draws.npz``) into ``outdir``.

    Returns the list of paths written.
    """
    os.makedirs(outdir, exist_ok=True)
    res = deviance_residuals(fit, d)
    paths = [os.path.join(outdir, name) for name in FIT_OUTPUTS]
    with open(paths[0], "w", encoding="utf-8") as fh:
        fh.write(format_report(fit, d, res))
    write_baseline_csv(fit, paths[1])
    res.to_csv(paths[2])
    write_trace_csv(fit, paths[3])
    if draws:
        p = os.path.join(outdir, "draws.npz")
        dump_draws(fit, d, p)
        paths.append(p)
    return paths
