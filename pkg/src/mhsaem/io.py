"""File formats: parameter checkpoints, resumable run state, data and
metrics CSVs, summary documents.

Floats are written with ``repr`` (shortest round-trip form), so every
writer/reader pair round-trips finite values bit-exactly.
"""

import csv
import json
import os
from pathlib import Path

import numpy as np

from .diagnostics import METRIC_COLUMNS, IterationRecord
from .errors import ValidationError
from .families import get_family
from .mh import ChainState, ProposalModel
from .model import MixtureParams
from .trainers import AdamState, StatsTable, TrainState

FORMAT_VERSION = 1


def _dump(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def _load(path):
    with open(path) as fh:
        return json.load(fh)


# -- parameter checkpoints ---------------------------------------------------

def theta_to_dict(theta):
    return {
        "family_id": theta.family_id,
        "K": theta.K,
        "D": theta.dim,
        "nu": theta.nu.tolist(),
        "components": theta.components.tolist(),
    }


def theta_from_dict(doc):
    try:
        theta = MixtureParams(np.array(doc["nu"], dtype=float),
                              np.array(doc["components"], dtype=float),
                              doc["family_id"], int(doc["D"]))
    except KeyError as exc:
        raise ValidationError(f"checkpoint is missing field {exc}") from None
    if theta.K != int(doc["K"]):
        raise ValidationError("checkpoint K does not match nu")
    return theta


def save_checkpoint(theta, path):
    _dump(theta_to_dict(theta), path)


def load_checkpoint(path):
    return theta_from_dict(_load(path))


# -- resumable run state -----------------------------------------------------

def _opt(a):
    return None if a is None else np.asarray(a).tolist()


def state_to_dict(state, config_doc=None):
    doc = {"version": FORMAT_VERSION, "t": state.t, "elapsed": state.elapsed,
           "theta": theta_to_dict(state.theta), "config": config_doc}
    if state.stats is not None:
        doc["stats"] = {"s0": _opt(state.stats.s0), "s1": _opt(state.stats.s1),
                        "s2": _opt(state.stats.s2)}
    if state.chain is not None:
        doc["chain"] = {"z": _opt(state.chain.z), "last_log_joint": _opt(state.chain.last_log_joint),
                        "fresh": _opt(state.chain.fresh)}
    if state.proposal is not None:
        p = state.proposal
        doc["proposal"] = {"kind": p.kind, "K": p.K, "floor": p.floor, "table": _opt(p.table)}
    if state.adam is not None:
        a = state.adam
        doc["adam"] = {"m_nu": _opt(a.m_nu), "v_nu": _opt(a.v_nu), "m_eta": _opt(a.m_eta),
                       "v_eta": _opt(a.v_eta), "steps": _opt(a.steps)}
    return doc


def state_from_dict(doc):
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError("unsupported run-state version")
    state = TrainState(int(doc["t"]), theta_from_dict(doc["theta"]), elapsed=float(doc["elapsed"]))
    if "stats" in doc:
        s = doc["stats"]
        state.stats = StatsTable(np.array(s["s0"], dtype=float), np.array(s["s1"], dtype=float),
                                 np.array(s["s2"], dtype=float))
    if "chain" in doc:
        c = doc["chain"]
        state.chain = ChainState(np.array(c["z"], dtype=np.int64),
                                 np.array(c["last_log_joint"], dtype=float),
                                 np.array(c["fresh"], dtype=bool))
        state.chain.validate(state.theta.K)
    if "proposal" in doc:
        p = doc["proposal"]
        table = None if p["table"] is None else np.array(p["table"], dtype=float)
        state.proposal = ProposalModel(p["kind"], int(p["K"]), table, float(p["floor"]))
    if "adam" in doc:
        a = doc["adam"]
        state.adam = AdamState(np.array(a["m_nu"], dtype=float), np.array(a["v_nu"], dtype=float),
                               np.array(a["m_eta"], dtype=float), np.array(a["v_eta"], dtype=float),
                               np.array(a["steps"], dtype=np.int64))
    return state


def save_state(state, path, config_doc=None):
    _dump(state_to_dict(state, config_doc), path)


def load_state(path):
    doc = _load(path)
    return state_from_dict(doc), doc.get("config")


# -- data --------------------------------------------------------------------

def write_data(path, X, labels=None):
    """One row per datapoint; optional trailing ``label`` column (1-based)
    with a header row naming it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if labels is not None:
            w.writerow([f"x{d + 1}" for d in range(X.shape[1])] + ["label"])
            for row, lab in zip(X, labels):
                w.writerow([repr(float(v)) for v in row] + [int(lab)])
        else:
            for row in X:
                w.writerow([repr(float(v)) for v in row])


def read_data(path):
    """Return ``(X, labels or None)``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    labels = None
    if rows[0] and rows[0][-1] == "label":
        rows = rows[1:]
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
        rows = [r[:-1] for r in rows]
    try:
        X = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError(f"{path}: ragged or empty data")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{path}: non-finite values")
    return X, labels


# -- metrics -----------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics(path, records, include_time=True):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            row = r.as_row()
            if not include_time:
                row[1] = None
            w.writerow([_cell(v) for v in row])


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise ValidationError(f"{path}: unexpected metrics header")
        out = []
        for row in reader:
            vals = [None if c == "" else c for c in row]
            out.append(IterationRecord(
                int(vals[0]),
                *(None if v is None else float(v) for v in vals[1:5]),
                int(vals[5]),
                *(None if v is None else float(v) for v in vals[6:8])))
    return out


def write_timing(path, records):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "wall_time_s"])
        for r in records:
            w.writerow([r.t, _cell(r.wall_time_s)])


def read_timing(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return {int(t): (None if v == "" else float(v)) for t, v in reader}


def write_json(path, doc):
    _dump(doc, path)


def read_json(path):
    return _load(path)


def family_for(doc_or_theta):
    if isinstance(doc_or_theta, MixtureParams):
        return doc_or_theta.family
    return get_family(doc_or_theta["family_id"], int(doc_or_theta["D"]))
