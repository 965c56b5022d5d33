"""Simulated recurrent event data and replication studies.

Data generation for one subject:

1. draw the log-frailty vector from the copula-composed frailty law;
2. draw a binary treatment ``x ~ Bernoulli(1/2)``;
3. draw ``C* ~ Exponential(rate)`` and set ``tau = min(C*, cutoff)``;
4. for every type, accumulate exponential gap times with hazard
   ``w_ij exp(x_i beta_j)`` (unit baseline) while the running time stays
   below ``tau``.

A study repeats generate-and-fit over independent replicates and reports
bias, variance, MSE and Wald coverage per parameter.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CopfrailError, StudyError
from .event_data import Dataset, SubjectData
from .frailty import MODEL_LABELS, FrailtyModel
from .mcem import FitConfig, fit

__all__ = [
    "SimConfig",
    "STUDY_SETTINGS",
    "study_setting",
    "truth_model",
    "truth_vector",
    "generate_dataset",
    "censoring_fraction",
    "ReplicateOutcome",
    "StudyResult",
    "run_study",
    "summarize_replicates",
    "read_study_csv",
]

Z95 = 1.959963984540054

# copula parameter for settings I, II, III
STUDY_SETTINGS = {
    "clayton": {"I": 0.1, "II": 1.333, "III": 8.0},
    "gaussian": {"I": 0.0, "II": 0.4, "III": 0.8},
}


@dataclass
class SimConfig:
    """Truth and design of a simulation.

    ``copula_truth`` is the Clayton ``alpha`` or a common Gaussian
    correlation (a full matrix is accepted as well).
    """

    n_subjects: int = 200
    n_types: int = 3
    model: str = "Cg"
    copula_truth: object = 1.333
    alpha_truth: tuple = (1.0, 1.0, 1.0)
    beta_truth: tuple = (1.0, 0.8, 0.4)
    censor_rate: float = 0.5
    admin_cutoff: float = 1.0
    n_replicates: int = 100
    seed: int = None
    setting: str = ""

    def __post_init__(self):
        if self.model not in MODEL_LABELS:
            raise ValueError(f"unknown model label {self.model!r}; expected one of {sorted(MODEL_LABELS)}")
        if self.n_subjects < 1 or self.n_types < 1:
            raise ValueError("n_subjects and n_types must be positive")
        self.alpha_truth = tuple(float(a) for a in np.broadcast_to(np.asarray(self.alpha_truth, float), (self.n_types,)))
        self.beta_truth = tuple(float(b) for b in np.broadcast_to(np.asarray(self.beta_truth, float), (self.n_types,)))
        if not self.censor_rate > 0:
            raise ValueError("censor_rate must be positive")
        if not self.admin_cutoff > 0:
            raise ValueError("admin_cutoff must be positive")
        if self.n_replicates < 0:
            raise ValueError("n_replicates must be nonnegative")


def study_setting(label, setting, n_subjects=200, **kw):
    """Configuration of the published simulation: ``setting`` is "I", "II" or "III"."""
    cfam = MODEL_LABELS[label][0]
    try:
        cop = STUDY_SETTINGS[cfam][setting]
    except KeyError:
        raise ValueError(f"unknown setting {setting!r}; expected I, II or III") from None
    return SimConfig(n_subjects=n_subjects, model=label, copula_truth=cop, setting=f"{label} {setting}", **kw)


def truth_model(cfg):
    return FrailtyModel.from_label(cfg.model, cfg.n_types, alphas=cfg.alpha_truth, copula_param=cfg.copula_truth)


def truth_vector(cfg):
    """True values in ``ParameterVector.theta`` order (one covariate)."""
    return np.concatenate([np.asarray(cfg.beta_truth, float), truth_model(cfg).params])


def generate_dataset(cfg, rng):
    """Simulate one dataset from ``cfg``; returns a validated :class:`Dataset`."""
    n, m = cfg.n_subjects, cfg.n_types
    b = truth_model(cfg).sample(n, rng)
    w = np.exp(b)
    x = (rng.random(n) < 0.5).astype(float)
    c_star = rng.exponential(1.0 / cfg.censor_rate, n)
    tau = np.minimum(c_star, cfg.admin_cutoff)
    beta = np.asarray(cfg.beta_truth)
    rate = w * np.exp(np.outer(x, beta))
    subjects = []
    width = len(str(n))
    for i in range(n):
        events = []
        for j in range(m):
            times = []
            t = rng.exponential(1.0 / rate[i, j])
            while t < tau[i]:
                times.append(t)
                t += rng.exponential(1.0 / rate[i, j])
            events.append(times)
        subjects.append(SubjectData(str(i + 1).zfill(width), np.array([x[i]]), tau[i], tuple(events)))
    return Dataset(subjects, type_labels=[str(j + 1) for j in range(m)], covariate_names=["x1"])


def censoring_fraction(d):
    """Fraction of subjects censored without any event."""
    return float(np.mean(d.censored_without_events()))


@dataclass
class ReplicateOutcome:
    index: int
    converged: bool
    n_iterations: int
    runtime: float
    estimates: np.ndarray
    std_errors: np.ndarray
    censoring_fraction: float
    error: str = ""


@dataclass
class StudyResult:
    """Per-parameter summaries over the usable (converged) replicates."""

    setting: str
    names: list
    truth: np.ndarray
    mean: np.ndarray
    bias: np.ndarray
    var: np.ndarray
    mse: np.ndarray
    cp: np.ndarray
    n_used: np.ndarray
    replicates: list = field(default_factory=list)

    @property
    def n_failed(self):
        return sum(not r.converged for r in self.replicates)

    def rows(self):
        for k, name in enumerate(self.names):
            yield {
                "setting": self.setting,
                "parameter": name,
                "truth": self.truth[k],
                "mean": self.mean[k],
                "bias": self.bias[k],
                "var": self.var[k],
                "mse": self.mse[k],
                "cp": self.cp[k],
                "n_used": int(self.n_used[k]),
            }

    def to_csv(self, path, append=False):
        """Write the summary table (one row per parameter)."""
        cols = ["setting", "parameter", "truth", "mean", "bias", "var", "mse", "cp", "n_used"]
        with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            if not append:
                wr.writeheader()
            for row in self.rows():
                wr.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})

    def replicates_to_csv(self, path):
        """Per-replicate estimates and standard errors."""
        cols = ["replicate", "converged", "n_iterations", "runtime", "censoring_fraction", "error"]
        cols += [f"est_{nm}" for nm in self.names] + [f"se_{nm}" for nm in self.names]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(cols)
            for r in self.replicates:
                wr.writerow(
                    [r.index, int(r.converged), r.n_iterations, f"{r.runtime:.3f}", repr(r.censoring_fraction), r.error]
                    + [repr(float(v)) for v in r.estimates]
                    + [repr(float(v)) for v in r.std_errors]
                )


def read_study_csv(path):
    """Read a summary table written by :meth:`StudyResult.to_csv` into a list of dicts."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = dict(row)
            for k in ("truth", "mean", "bias", "var", "mse", "cp"):
                rec[k] = float(rec[k])
            rec["n_used"] = int(rec["n_used"])
            out.append(rec)
    return out


def summarize_replicates(setting, names, truth, replicates):
    """Aggregate replicate outcomes; only converged replicates are used.

    ``var`` divides by the number of replicates (not minus one) so that
    ``mse = bias**2 + var`` holds exactly.  ``cp`` is the fraction of
    replicates with a standard error whose 95% Wald interval covers the truth.
    """
    truth = np.asarray(truth, dtype=float)
    k = truth.size
    used = [r for r in replicates if r.converged]
    if used:
        est = np.array([r.estimates for r in used])
        se = np.array([r.std_errors for r in used])
        mean = est.mean(axis=0)
        var = np.mean((est - mean) ** 2, axis=0)
        bias = mean - truth
        mse = bias**2 + var
        ok = np.isfinite(se)
        cover = np.abs(est - truth) <= Z95 * np.where(ok, se, np.nan)
        n_se = ok.sum(axis=0)
        with np.errstate(invalid="ignore"):
            cp = np.where(n_se > 0, np.sum(cover & ok, axis=0) / np.maximum(n_se, 1), np.nan)
        n_used = np.full(k, len(used))
    else:
        mean = bias = var = mse = cp = np.full(k, np.nan)
        n_used = np.zeros(k, dtype=int)
    return StudyResult(setting, list(names), truth, mean, bias, var, mse, cp, n_used, list(replicates))


def _replicate_seeds(seed, n):
    return np.random.SeedSequence(seed).spawn(n)


def _run_one(args):
    cfg, fit_cfg, index, seq = args
    data_seq, fit_seq = seq.spawn(2)
    t0 = time.perf_counter()
    d = generate_dataset(cfg, np.random.default_rng(data_seq))
    k = truth_vector(cfg).size
    try:
        res = fit(d, cfg.model, fit_cfg, rng=np.random.default_rng(fit_seq))
    except CopfrailError as exc:
        return ReplicateOutcome(index, False, 0, time.perf_counter() - t0, np.full(k, np.nan), np.full(k, np.nan), censoring_fraction(d), str(exc))
    se = np.full(k, np.nan)
    if res.std_errors is not None:
        se = np.array([res.std_errors[nm] for nm in res.param_names])
    return ReplicateOutcome(
        index, res.converged, res.n_iterations, time.perf_counter() - t0, res.params.theta, se, censoring_fraction(d),
        "" if res.converged else "did not converge",
    )


MAX_FAILED_SHARE = 0.2


def run_study(cfg, fit_cfg=None, progress=None, workers=1):
    """Generate and fit ``cfg.n_replicates`` datasets and summarize the estimates.

    Replicate ``r`` uses the ``r``-th child of ``SeedSequence(cfg.seed)``, so
    results do not depend on ``workers``.

    Raises
    ------
    StudyError
        With no replicates, or when more than 20% of replicates fail to
        converge; the partial result is attached as ``exc.result``.
    """
    if cfg.n_replicates < 1:
        raise StudyError("study needs at least one replicate")
    fit_cfg = fit_cfg or FitConfig()
    seeds = _replicate_seeds(cfg.seed, cfg.n_replicates)
    jobs = [(cfg, fit_cfg, r, seeds[r]) for r in range(cfg.n_replicates)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = []
            for out in ex.map(_run_one, jobs):
                outcomes.append(out)
                if progress:
                    progress(out)
    else:
        outcomes = []
        for job in jobs:
            out = _run_one(job)
            outcomes.append(out)
            if progress:
                progress(out)
    names = [f"beta_{j + 1}" for j in range(cfg.n_types)] + truth_model(cfg).param_names
    res = summarize_replicates(cfg.setting or cfg.model, names, truth_vector(cfg), outcomes)
    if res.n_failed > MAX_FAILED_SHARE * cfg.n_replicates:
        err = StudyError(f"{res.n_failed} of {cfg.n_replicates} replicates did not converge")
        err.result = res
        raise err
    return res
