"""Evaluation quantities: gradient-estimator bias, acceptance averages,
time-to-95% and absolute error."""

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ValidationError
from .objective import exact_e_step, q_gradient, samples_to_weights

METRIC_COLUMNS = ("t", "wall_time_s", "loglik", "aar", "bias", "eval_count", "beta", "gamma")


@dataclass
class IterationRecord:
    t: int
    wall_time_s: Optional[float] = None
    loglik: Optional[float] = None
    aar: Optional[float] = None
    bias: Optional[float] = None
    eval_count: int = 0
    beta: Optional[float] = None
    gamma: Optional[float] = None

    def as_row(self):
        return [getattr(self, f.name) for f in fields(self)]


def gradient_bias(theta, Xb, samples, M=None, beta=1.0):
    """Squared l2 distance between the sampled and the exact gradient of the
    minibatch EM objective.

    ``samples`` is (B, M) with 1-based components drawn for the rows of
    ``Xb``; the exact term weights every component by its tempered
    responsibility.
    """
    samples = np.asarray(samples)
    if M is not None and samples.shape[1] != M:
        raise ValidationError("samples must have M columns")
    R, _ = exact_e_step(theta, Xb, beta)
    W = samples_to_weights(samples, theta.K) - R
    g_nu, g_eta = q_gradient(theta, Xb, W)
    return float(g_nu @ g_nu + np.sum(g_eta * g_eta))


def average_acceptance(alphas):
    a = np.asarray(alphas, dtype=float)
    if a.size == 0:
        raise ValidationError("no acceptance ratios to average")
    return float(a.mean())


def t95_and_ae(records, loglik_true=None):
    """First iteration whose log-likelihood reaches 95% of the trace's
    min-max range.

    ``records`` is a sequence of :class:`IterationRecord` (entries without a
    log-likelihood are skipped).  Returns ``(t95, time95, ae)``; ``ae`` is
    ``None`` unless ``loglik_true`` is given.
    """
    pts = [r for r in records if r.loglik is not None and np.isfinite(r.loglik)]
    if not pts:
        raise ValidationError("trace has no log-likelihood values")
    L = np.array([r.loglik for r in pts])
    lo, hi = L.min(), L.max()
    if hi == lo:
        hit = 0
    else:
        hit = int(np.argmax(L >= lo + 0.95 * (hi - lo)))
    rec = pts[hit]
    ae = None if loglik_true is None else abs(rec.loglik - loglik_true)
    return rec.t, rec.wall_time_s, ae


def summarize(records, loglik_true=None, n_points=None):
    t95, time95, ae = t95_and_ae(records, loglik_true)
    final = next((r.loglik for r in reversed(records) if r.loglik is not None), None)
    out = {
        "t95": t95,
        "time95_s": time95,
        "ae": ae,
        "final_loglik": final,
        "total_evals": int(sum(r.eval_count for r in records)),
    }
    if n_points:
        out["final_loglik_per_point"] = None if final is None else final / n_points
    return out
