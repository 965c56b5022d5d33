"""Multi-type recurrent event data: containers, CSV ingest and risk sets.

A subject ``i`` is followed over ``[0, tau_i]`` and may experience any number
of events of each of ``m`` types.  Covariates are fixed per subject.  The CSV
layout is one row per event plus censoring rows::

    subject_id,event_type,time,status,x1,...,xp

``status`` is 1 for an event and 0 for censoring.  Censoring is given either
as one ``status=0`` row per subject and type, or as a single row per subject
with ``event_type`` equal to ``*``.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "EventRecord",
    "SubjectData",
    "Dataset",
    "RiskSetIndex",
    "load_dataset",
    "save_dataset",
    "build_risk_sets",
]

ALL_TYPES = "*"


@dataclass(frozen=True)
class EventRecord:
    """One row of the input file.  ``event_type`` is 1-based."""

    subject_id: str
    event_type: int
    time: float
    status: int


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SubjectData:
    subject_id: str
    covariates: np.ndarray
    censoring_time: float
    events: tuple  # one sorted float array per event type

    def __post_init__(self):
        object.__setattr__(self, "covariates", _readonly(self.covariates))
        object.__setattr__(self, "censoring_time", float(self.censoring_time))
        object.__setattr__(
            self, "events", tuple(_readonly(np.asarray(e, dtype=float).ravel()) for e in self.events)
        )

    @property
    def n_events(self):
        """Number of events of each type."""
        return np.array([len(e) for e in self.events], dtype=int)

    def to_records(self):
        recs = []
        for j, times in enumerate(self.events, start=1):
            recs.extend(EventRecord(self.subject_id, j, float(t), 1) for t in times)
            recs.append(EventRecord(self.subject_id, j, self.censoring_time, 0))
        return recs


def _subject_sort_key(ids):
    try:
        keys = [float(s) for s in ids]
        if all(math.isfinite(k) for k in keys):
            return lambda s: (float(s), s)
    except ValueError:
        pass
    return lambda s: s


class Dataset:
    """Validated, immutable collection of subjects.

    Parameters
    ----------
    subjects : sequence of SubjectData
    type_labels : sequence of str, optional
        External labels of the event types, in 1..m order.
    covariate_names : sequence of str, optional

    Notes
    -----
    Array views used by the estimation code are built once here:
    ``X`` (n, p), ``tau`` (n,), ``counts`` (n, m) and, per type, the
    ordered distinct event times with their tie counts and the subject index
    of every event.
    """

    def __init__(self, subjects, type_labels=None, covariate_names=None):
        subjects = list(subjects)
        if not subjects:
            raise ValidationError("dataset has no subjects")
        m = len(subjects[0].events)
        p = len(subjects[0].covariates)
        if m < 1:
            raise ValidationError("dataset needs at least one event type")
        self.type_labels = tuple(str(t) for t in (type_labels or range(1, m + 1)))
        self.covariate_names = tuple(covariate_names or (f"x{k}" for k in range(1, p + 1)))
        if len(self.type_labels) != m:
            raise ValidationError("type_labels length does not match the number of event types")
        if len(self.covariate_names) != p:
            raise ValidationError("covariate_names length does not match the covariate dimension")
        seen = set()
        for s in subjects:
            if s.subject_id in seen:
                raise ValidationError(f"duplicate subject {s.subject_id!r}")
            seen.add(s.subject_id)
            _validate_subject(s, m, p)
        self.subjects = tuple(subjects)

        n = len(subjects)
        self.X = _readonly(np.array([s.covariates for s in subjects]).reshape(n, p))
        self.tau = _readonly([s.censoring_time for s in subjects])
        counts = np.array([s.n_events for s in subjects], dtype=int).reshape(n, m)
        counts.setflags(write=False)
        self.counts = counts

        distinct, ties, ev_subj, ev_time, ev_idx = [], [], [], [], []
        for j in range(m):
            times = np.concatenate([s.events[j] for s in subjects]) if n else np.empty(0)
            who = np.concatenate([np.full(len(s.events[j]), i) for i, s in enumerate(subjects)]).astype(int)
            order = np.lexsort((who, times))
            times, who = times[order], who[order]
            uniq, inverse, cnt = np.unique(times, return_inverse=True, return_counts=True)
            distinct.append(_readonly(uniq))
            c = cnt.astype(int)
            c.setflags(write=False)
            ties.append(c)
            who.setflags(write=False)
            ev_subj.append(who)
            ev_time.append(_readonly(times))
            inverse = inverse.astype(int)
            inverse.setflags(write=False)
            ev_idx.append(inverse)
        self.distinct_times = tuple(distinct)
        self.tie_counts = tuple(ties)
        self.event_subjects = tuple(ev_subj)
        self.event_times = tuple(ev_time)
        self.event_time_index = tuple(ev_idx)

    @property
    def n_subjects(self):
        return len(self.subjects)

    @property
    def n_types(self):
        return len(self.type_labels)

    @property
    def n_covariates(self):
        return len(self.covariate_names)

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]

    def censored_without_events(self):
        """Boolean mask of subjects with no event of any type."""
        return self.counts.sum(axis=1) == 0

    def records(self):
        out = []
        for s in self.subjects:
            out.extend(s.to_records())
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (
            self.type_labels != other.type_labels
            or self.covariate_names != other.covariate_names
            or self.n_subjects != other.n_subjects
        ):
            return False
        for a, b in zip(self.subjects, other.subjects):
            if a.subject_id != b.subject_id or a.censoring_time != b.censoring_time:
                return False
            if not np.array_equal(a.covariates, b.covariates):
                return False
            if any(not np.array_equal(x, y) for x, y in zip(a.events, b.events)):
                return False
        return True

    __hash__ = None

    def __repr__(self):
        return (
            f"Dataset(n_subjects={self.n_subjects}, n_types={self.n_types}, "
            f"n_covariates={self.n_covariates}, events={self.counts.sum(axis=0).tolist()})"
        )


def _validate_subject(s, m, p):
    if len(s.events) != m:
        raise ValidationError(f"subject {s.subject_id!r}: expected {m} event types, got {len(s.events)}")
    if len(s.covariates) != p:
        raise ValidationError(f"subject {s.subject_id!r}: expected {p} covariates, got {len(s.covariates)}")
    if not np.all(np.isfinite(s.covariates)):
        raise ValidationError(f"subject {s.subject_id!r}: non-finite covariate")
    tau = s.censoring_time
    if not (math.isfinite(tau) and tau > 0):
        raise ValidationError(f"subject {s.subject_id!r}: censoring time must be positive and finite")
    for j, ev in enumerate(s.events, start=1):
        if len(ev) == 0:
            continue
        if not np.all(np.isfinite(ev)) or ev[0] <= 0:
            raise ValidationError(f"subject {s.subject_id!r}, type {j}: event times must be positive")
        if np.any(np.diff(ev) <= 0):
            raise ValidationError(
                f"subject {s.subject_id!r}, type {j}: duplicate or unsorted event times"
            )
        if ev[-1] >= tau:
            raise ValidationError(
                f"subject {s.subject_id!r}, type {j}: event at {ev[-1]!r} not before censoring time {tau!r}"
            )


@dataclass(frozen=True)
class RiskSetIndex:
    """Risk sets ``R(t) = {i : tau_i >= t}`` at every distinct event time.

    ``at_risk[j]`` is a boolean matrix of shape ``(k_j, n)``.
    """

    times: tuple
    at_risk: tuple
    _sizes: tuple = field(repr=False, default=())

    def members(self, j, l):
        """Subject indices (0-based) at risk at the ``l``-th distinct time of type ``j`` (0-based)."""
        return np.flatnonzero(self.at_risk[j][l])

    def sizes(self, j):
        return self._sizes[j]


def build_risk_sets(d):
    """Index the risk set of every type at each of its distinct event times."""
    at_risk, sizes = [], []
    for j in range(d.n_types):
        mat = d.tau[None, :] >= d.distinct_times[j][:, None]
        mat.setflags(write=False)
        at_risk.append(mat)
        sz = mat.sum(axis=1)
        sz.setflags(write=False)
        sizes.append(sz)
    return RiskSetIndex(tuple(d.distinct_times), tuple(at_risk), tuple(sizes))


DEFAULT_SCHEMA = {"subject_id": "subject_id", "event_type": "event_type", "time": "time", "status": "status"}


def load_dataset(path, schema=None):
    """Read and validate a recurrent event CSV file.

    Parameters
    ----------
    path : str or path-like
    schema : dict, optional
        Maps ``subject_id``, ``event_type``, ``time`` and ``status`` to the
        column names used in the file, and optionally ``covariates`` to a list
        of covariate columns.  By default every column after the four core
        columns is a covariate.

    Returns
    -------
    Dataset
        Subjects sorted by id; ``type_labels`` records the mapping of file
        labels to types ``1..m`` (first-appearance order).
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file (header row required)", line=1) from None
        rows = list(enumerate(reader, start=2))
    return _dataset_from_rows(header, rows, schema)


def _dataset_from_rows(header, rows, schema):
    pos = {}
    for key in ("subject_id", "event_type", "time", "status"):
        col = schema[key]
        if col not in header:
            raise ParseError(f"missing column {col!r}", line=1)
        pos[key] = header.index(col)
    core = set(pos.values())
    cov_cols = schema.get("covariates")
    if cov_cols is None:
        cov_idx = [k for k in range(len(header)) if k not in core]
    else:
        missing = [c for c in cov_cols if c not in header]
        if missing:
            raise ParseError(f"missing covariate column(s) {missing}", line=1)
        cov_idx = [header.index(c) for c in cov_cols]
    cov_names = [header[k] for k in cov_idx]

    type_labels = []
    type_of = {}
    per_subject = {}
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        sid = row[pos["subject_id"]].strip()
        if not sid:
            raise ParseError("empty subject_id", line=lineno)
        label = row[pos["event_type"]].strip()
        try:
            time = float(row[pos["time"]])
            status = int(row[pos["status"]])
            cov = tuple(float(row[k]) for k in cov_idx)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if status not in (0, 1):
            raise ParseError(f"status must be 0 or 1, got {status}", line=lineno)
        if not (math.isfinite(time) and time > 0):
            raise ParseError(f"time must be positive and finite, got {time!r}", line=lineno)
        if label == ALL_TYPES:
            if status != 0:
                raise ParseError("event_type '*' is only allowed on censoring rows", line=lineno)
        elif label not in type_of:
            type_labels.append(label)
            type_of[label] = len(type_labels)
        ent = per_subject.setdefault(sid, {"cov": cov, "events": {}, "censor": {}, "star": None, "line": lineno})
        if ent["cov"] != cov:
            raise ValidationError(f"subject {sid!r}: covariates change between rows (line {lineno})")
        if status == 1:
            ent["events"].setdefault(label, []).append(time)
        elif label == ALL_TYPES:
            if ent["star"] is not None:
                raise ValidationError(f"subject {sid!r}: duplicate censoring record (line {lineno})")
            ent["star"] = time
        else:
            if label in ent["censor"]:
                raise ValidationError(f"subject {sid!r}: duplicate censoring record for type {label!r} (line {lineno})")
            ent["censor"][label] = time

    if not per_subject:
        raise ValidationError("no data rows")
    if not type_labels:
        raise ValidationError("no event types could be identified (only '*' rows)")

    subjects = []
    key = _subject_sort_key(list(per_subject))
    for sid in sorted(per_subject, key=key):
        ent = per_subject[sid]
        if ent["star"] is not None and ent["censor"]:
            raise ValidationError(f"subject {sid!r}: duplicate censoring record ('*' and per-type rows)")
        if ent["star"] is not None:
            tau = ent["star"]
        else:
            missing = [lab for lab in type_labels if lab not in ent["censor"]]
            if missing:
                raise ValidationError(f"subject {sid!r}: no censoring record for type(s) {missing}")
            taus = set(ent["censor"].values())
            if len(taus) != 1:
                raise ValidationError(f"subject {sid!r}: censoring times differ across types {sorted(taus)}")
            tau = taus.pop()
        events = []
        for lab in type_labels:
            ev = sorted(ent["events"].get(lab, []))
            if len(set(ev)) != len(ev):
                raise ValidationError(f"subject {sid!r}, type {lab!r}: duplicate event time")
            if ev and ev[-1] >= tau:
                raise ValidationError(
                    f"subject {sid!r}, type {lab!r}: event at {ev[-1]!r} not before censoring time {tau!r}"
                )
            events.append(ev)
        subjects.append(SubjectData(sid, np.array(ent["cov"], dtype=float), tau, tuple(events)))
    return Dataset(subjects, type_labels=type_labels, covariate_names=cov_names)


def save_dataset(d, path):
    """Write ``d`` in canonical order (subjects by id, events ascending, per-type censoring rows)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "event_type", "time", "status", *d.covariate_names])
        for s in d.subjects:
            cov = [repr(float(v)) for v in s.covariates]
            for j, times in enumerate(s.events):
                label = d.type_labels[j]
                for t in times:
                    w.writerow([s.subject_id, label, repr(float(t)), 1, *cov])
                w.writerow([s.subject_id, label, repr(s.censoring_time), 0, *cov])
