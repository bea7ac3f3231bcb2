"""Training algorithms over a common iteration loop.

Each iteration: read-only theta snapshot -> E-step (exact, sampled or
selected) producing a (B, K) weight matrix -> M-step (sufficient-statistics
SA blend or a gradient step) -> new snapshot.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from . import rng as streams
from .diagnostics import IterationRecord, gradient_bias
from .errors import (NumericalAbort, ParameterError,
                     UnsupportedAlgorithmError, ValidationError)
from .families import GaussianFamily
from .mh import ChainState, ProposalModel, mh_sweep, proposal_kind, update_table
from . import _kernels
from .model import (COV_ABS_FLOOR, COV_REL_EPS, MixtureParams, SufficientStats, dataset_loglik, gaussian_params_batch,
                    log_joint_matrix, log_joint_pairs, stats_from_params)
from .objective import exact_e_step, q_gradient, samples_to_weights
from .schedules import AnnealSchedule, Schedule, constant_anneal

log = logging.getLogger(__name__)

ALGORITHMS = ("em", "saem", "mcsaem", "ssaem", "tsaem", "mhsaem")
SPARSE = ("mcsaem", "ssaem", "tsaem", "mhsaem")
SAMPLING = ("mcsaem", "mhsaem")
LOGLIK_DENSE_LIMIT = 20_000


@dataclass
class TrainerConfig:
    algorithm: str = "mhsaem"
    B: int = 100
    M: int = 1
    T: int = 1000
    Mbar: Optional[int] = None
    proposal: str = "uniform"
    m_step: str = "suffstats"
    optimizer: str = "plain"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule: Schedule = field(default_factory=Schedule)
    anneal: Optional[AnnealSchedule] = None
    seed: int = 0
    loglik_every: Optional[int] = None
    bias_every: int = 0
    record_time: bool = True
    proposal_floor: float = 1e-6
    accelerate: bool = True

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}")
        self.proposal = proposal_kind(self.proposal)
        if self.m_step not in ("suffstats", "gradient"):
            raise ValidationError("m_step must be 'suffstats' or 'gradient'")
        if self.optimizer not in ("plain", "adam"):
            raise ValidationError("optimizer must be 'plain' or 'adam'")
        if self.T < 1 or self.B < 1 or self.M < 1:
            raise ValidationError("T, B and M must be >= 1")
        if self.Mbar is None:
            self.Mbar = self.M
        if self.anneal is not None and self.anneal.T != self.T:
            raise ValidationError("anneal schedule length must equal T")

    def validate_for(self, family, N, K):
        if self.algorithm != "em" and not 1 <= self.B <= N:
            raise ValidationError(f"B={self.B} must lie in 1..N={N}")
        if not 1 <= self.M <= K:
            raise ValidationError(f"M={self.M} must lie in 1..K={K}")
        if self.m_step == "suffstats" and not family.has_suffstats:
            raise UnsupportedAlgorithmError(
                f"family {family.family_id!r} has no sufficient statistics; use m_step='gradient'")
        if self.algorithm in ("ssaem", "tsaem"):
            if not isinstance(family, GaussianFamily) or self.m_step != "suffstats":
                raise UnsupportedAlgorithmError(
                    f"{self.algorithm} is implemented for the Gaussian sufficient-statistics path only")

    def beta(self, t):
        return 1.0 if self.anneal is None else self.anneal(t)


@dataclass
class AdamState:
    m_nu: np.ndarray
    v_nu: np.ndarray
    m_eta: np.ndarray
    v_eta: np.ndarray
    steps: np.ndarray

    @classmethod
    def zeros(cls, K, P):
        return cls(np.zeros(K), np.zeros(K), np.zeros((K, P)), np.zeros((K, P)),
                   np.zeros(K, dtype=np.int64))


@dataclass
class StatsTable:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def component(self, k):
        return SufficientStats(self.s0[k], self.s1[k], self.s2[k])


@dataclass
class TrainState:
    t: int
    theta: MixtureParams
    stats: Optional[StatsTable] = None
    chain: Optional[ChainState] = None
    proposal: Optional[ProposalModel] = None
    adam: Optional[AdamState] = None
    elapsed: float = 0.0


@dataclass
class RunResult:
    theta: MixtureParams
    records: list
    state: TrainState
    completed: bool = True


def default_init(family_id, K, dim, seed):
    """Means uniform in the unit cube, identity covariances (or identity
    flows), weights uniform on (0, 1) then normalized."""
    from .families import get_family

    fam = get_family(family_id, dim)
    gen = streams.CounterRNG(seed).generator(streams.INIT_PARAMS, 0)
    comps = np.stack([fam.default_eta(gen) for _ in range(K)])
    w = gen.uniform(0.0, 1.0, K)
    w = np.maximum(w, 1e-12)
    return MixtureParams.from_weights(w, comps, family_id, dim)


def init_state(config, X, theta_init):
    N = X.shape[0]
    K = theta_init.K
    config.validate_for(theta_init.family, N, K)
    rng = streams.CounterRNG(config.seed)
    state = TrainState(0, theta_init)
    if config.m_step == "suffstats":
        state.stats = StatsTable(*stats_from_params(theta_init, N))
    if config.algorithm == "mhsaem":
        state.chain = ChainState.initial(N, K, rng)
        state.proposal = ProposalModel.create(config.proposal, N, K, config.proposal_floor)
    if config.m_step == "gradient" and config.optimizer == "adam":
        state.adam = AdamState.zeros(K, theta_init.family.n_params)
    return state


# ---------------------------------------------------------------------------
# selection rules
# ---------------------------------------------------------------------------

def ssaem_select(row, M):
    """Top-M responsibilities (ties -> lowest index); returns 1-based
    indices and weights renormalized over the selection."""
    row = np.asarray(row, dtype=float)
    if not 1 <= M <= row.size:
        raise ValidationError("M must lie in 1..K")
    idx = np.argsort(-row, kind="stable")[:M]
    w = row[idx]
    return idx + 1, w / w.sum()


def _top_m(R, M):
    return np.argsort(-R, axis=1, kind="stable")[:, :M]


def _gaussian_means(theta):
    D = theta.dim
    return theta.components[:, :D]


def _tsaem_candidates(means, Xb, M, Mbar):
    """Boolean (B, K) mask: Mbar nearest means to each x, united with the M
    nearest other means of the single closest component."""
    K = means.shape[0]
    d_x = ((Xb[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    near = np.argsort(d_x, axis=1, kind="stable")
    mask = np.zeros((Xb.shape[0], K), dtype=bool)
    rows = np.arange(Xb.shape[0])
    mask[rows[:, None], near[:, :min(Mbar, K)]] = True
    d_mm = ((means[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d_mm, np.inf)
    nbrs = np.argsort(d_mm, axis=1, kind="stable")[:, :min(M, K - 1)]
    if nbrs.shape[1]:
        mask[rows[:, None], nbrs[near[:, 0]]] = True
    return mask


def tsaem_select(theta, x_i, M, Mbar):
    """Candidate set (1-based, sorted) for one datapoint."""
    if not isinstance(theta.family, GaussianFamily):
        raise UnsupportedAlgorithmError("tsaem selection needs Gaussian components")
    x = np.asarray(x_i, dtype=float).reshape(1, -1)
    mask = _tsaem_candidates(_gaussian_means(theta), x, M, Mbar)
    return np.flatnonzero(mask[0]) + 1


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------

def sa_update_stats(prev, batch, gamma):
    """(1 - gamma) * prev + gamma * batch for one component's stats."""
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must lie in [0, 1]")
    return SufficientStats((1.0 - gamma) * prev.s0 + gamma * batch.s0,
                           (1.0 - gamma) * prev.s1 + gamma * batch.s1,
                           (1.0 - gamma) * prev.s2 + gamma * batch.s2)


def _suffstats_from_samples(state, Xb, samples, scale, gamma):
    """Compiled equivalent of :func:`_suffstats_step` for sampled Gaussian E-steps."""
    theta = state.theta
    fam = theta.family
    st = state.stats
    s0, s1, s2 = st.s0.copy(), st.s1.copy(), st.s2.copy()
    comps = theta.components.copy()
    _kernels.suffstats_from_samples(np.ascontiguousarray(Xb), np.ascontiguousarray(samples, dtype=np.int64),
                                    float(scale), float(gamma), s0, s1, s2, comps, fam._rows,
                                    fam._cols, fam._diag_flag, COV_REL_EPS, COV_ABS_FLOOR)
    nu = np.log(np.maximum(s0, 1e-300) / s0.sum())
    state.stats = StatsTable(s0, s1, s2)
    return theta.replace(nu=nu, components=comps)


def _suffstats_step(state, Xb, W, touched, scale, gamma):
    theta = state.theta
    st = state.stats
    fam = theta.family
    touched = np.asarray(touched, dtype=np.int64)
    comps = theta.components.copy()
    s0 = st.s0.copy()
    s1 = st.s1.copy()
    s2 = st.s2.copy()
    Wt = W[:, touched]
    b0 = scale * Wt.sum(axis=0)
    b1 = scale * (Wt.T @ Xb)
    D = Xb.shape[1]
    xx = (Xb[:, :, None] * Xb[:, None, :]).reshape(Xb.shape[0], D * D)
    b2 = scale * (Wt.T @ xx).reshape(-1, D, D)
    s0[touched] = (1.0 - gamma) * s0[touched] + gamma * b0
    s1[touched] = (1.0 - gamma) * s1[touched] + gamma * b1
    s2[touched] = (1.0 - gamma) * s2[touched] + gamma * 0.5 * (b2 + b2.transpose(0, 2, 1))
    means, L, ok = gaussian_params_batch(s0[touched], s1[touched], s2[touched])
    # components without usable statistics keep their previous parameters
    comps[touched[ok]] = fam.pack_rows(means[ok], L[ok])
    nu = np.log(np.maximum(s0, 1e-300) / s0.sum())
    state.stats = StatsTable(s0, s1, s2)
    return theta.replace(nu=nu, components=comps)


def _apply_gradient(theta, g_nu, g_eta, touched, gamma, adam=None, cfg=None):
    nu = theta.nu.copy()
    comps = theta.components.copy()
    touched = np.asarray(touched)
    if adam is None:
        nu[touched] += gamma * g_nu[touched]
        comps[touched] += gamma * g_eta[touched]
    else:
        b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        adam.steps[touched] += 1
        n = adam.steps[touched].astype(float)
        adam.m_nu[touched] = b1 * adam.m_nu[touched] + (1 - b1) * g_nu[touched]
        adam.v_nu[touched] = b2 * adam.v_nu[touched] + (1 - b2) * g_nu[touched] ** 2
        adam.m_eta[touched] = b1 * adam.m_eta[touched] + (1 - b1) * g_eta[touched]
        adam.v_eta[touched] = b2 * adam.v_eta[touched] + (1 - b2) * g_eta[touched] ** 2
        c1 = 1.0 - b1 ** n
        c2 = 1.0 - b2 ** n
        nu[touched] += gamma * (adam.m_nu[touched] / c1) / (np.sqrt(adam.v_nu[touched] / c2) + eps)
        comps[touched] += gamma * (adam.m_eta[touched] / c1[:, None]) / (
            np.sqrt(adam.v_eta[touched] / c2[:, None]) + eps)
    return nu, comps


def gradient_m_step(theta, Xb, samples, gamma, beta=1.0, scale=1.0, adam=None, config=None):
    """One stochastic-approximation gradient step on the sampled objective.

    ``samples`` is (B, M) with 1-based components for the rows of ``Xb``.
    Only components present in ``samples`` move; all other blocks of
    ``nu`` and ``components`` are returned bit-identical.
    """
    samples = np.asarray(samples)
    if np.any(samples < 1) or np.any(samples > theta.K):
        raise IndexError("sampled component outside 1..K")
    W = samples_to_weights(samples, theta.K)
    touched = np.unique(samples) - 1
    g_nu, g_eta = q_gradient(theta, Xb, W, touched, scale, beta)
    if not (np.all(np.isfinite(g_nu)) and np.all(np.isfinite(g_eta))):
        raise NumericalAbort("non-finite gradient")
    nu, comps = _apply_gradient(theta, g_nu, g_eta, touched, gamma, adam, config or TrainerConfig())
    return theta.replace(nu=nu, components=comps)


# ---------------------------------------------------------------------------
# E-steps
# ---------------------------------------------------------------------------

@dataclass
class EStepResult:
    W: Optional[np.ndarray]
    touched: Optional[np.ndarray]
    evals: int
    samples: Optional[np.ndarray] = None
    aar: Optional[float] = None


def _e_step(config, state, X, I, beta, gamma, rng, t):
    theta = state.theta
    K = theta.K
    Xb = X[I]
    alg = config.algorithm
    B = I.size
    if alg in ("em", "saem"):
        R, _ = exact_e_step(theta, Xb, beta)
        return EStepResult(R, np.arange(K), B * K)
    if alg == "mcsaem":
        R, _ = exact_e_step(theta, Xb, beta)
        samples = np.empty((B, config.M), dtype=np.int64)
        for j in range(config.M):
            samples[:, j] = streams.categorical(R, rng.uniform(streams.CATEGORICAL, t, I, j)) + 1
        W = samples_to_weights(samples, K)
        # iid draws from the target are an MH chain whose ratio is always one
        return EStepResult(W, np.unique(samples) - 1, B * K, samples, 1.0)
    if alg == "ssaem":
        R, _ = exact_e_step(theta, Xb, beta)
        top = _top_m(R, config.M)
        W = np.zeros_like(R)
        rows = np.arange(B)[:, None]
        W[rows, top] = R[rows, top]
        W /= W.sum(axis=1, keepdims=True)
        return EStepResult(W, np.unique(top), B * K)
    if alg == "tsaem":
        mask = _tsaem_candidates(_gaussian_means(theta), Xb, config.M, config.Mbar)
        r_idx, c_idx = np.nonzero(mask)
        lj = np.full((B, K), -np.inf)
        lj[r_idx, c_idx] = log_joint_pairs(theta, Xb, r_idx, c_idx)
        W = softmax(beta * lj, axis=1)
        return EStepResult(W, np.unique(c_idx), int(r_idx.size))
    # mhsaem
    sweep = mh_sweep(state.chain, theta, X, I, config.M, state.proposal, beta, rng, t,
                     compiled=config.accelerate)
    update_table(state.proposal, I, sweep.samples, gamma)
    return EStepResult(None, None, sweep.eval_count, sweep.samples, float(sweep.alphas.mean()))


def _minibatch(config, N, rng, t):
    if config.algorithm == "em" or config.B >= N:
        return np.arange(N)
    return _kernels.floyd_subset(rng.stream_base(streams.BATCH, t), N, config.B)


def _loglik_due(config, N, t):
    every = config.loglik_every
    if every is None:
        every = 1 if N <= LOGLIK_DENSE_LIMIT else 10
    return every > 0 and (t % every == 0 or t == 1 or t == config.T)


def run(config, family, X, theta_init=None, callbacks=(), state=None, stop_at=None):
    """Run ``config.T`` iterations (or resume ``state``) and return a
    :class:`RunResult`.

    ``family`` may be a family object or id; it must match ``theta_init``.
    ``stop_at`` ends the run early after that iteration, leaving a
    resumable ``state``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("data must be a nonempty (N, D) array")
    if not np.all(np.isfinite(X)):
        raise ValidationError("data must be finite")
    if state is None:
        if theta_init is None:
            raise ValidationError("need theta_init or a state to resume")
        state = init_state(config, X, theta_init)
    fam_id = family if isinstance(family, str) else getattr(family, "family_id", None)
    if fam_id is not None and fam_id != state.theta.family_id:
        raise ValidationError(f"family {fam_id!r} does not match theta ({state.theta.family_id!r})")
    if state.theta.dim != X.shape[1]:
        raise ValidationError("data dimension does not match theta")
    config.validate_for(state.theta.family, X.shape[0], state.theta.K)

    N = X.shape[0]
    rng = streams.CounterRNG(config.seed)
    compiled = config.accelerate and isinstance(state.theta.family, GaussianFamily)
    _kernels.warmup()
    records = []
    last = config.T if stop_at is None else min(stop_at, config.T)
    for t in range(state.t + 1, last + 1):
        gamma = config.schedule(t) if config.algorithm != "em" else 1.0
        beta = config.beta(t)
        tic = time.perf_counter()
        I = _minibatch(config, N, rng, t)
        est = _e_step(config, state, X, I, beta, gamma, rng, t)
        split = time.perf_counter()

        bias = None
        if config.bias_every and est.samples is not None and t % config.bias_every == 0:
            bias = gradient_bias(state.theta, X[I], est.samples, beta=beta)

        resume = time.perf_counter()
        scale = N / I.size
        if est.W is None and not (compiled and config.m_step == "suffstats"):
            est.W = samples_to_weights(est.samples, state.theta.K)
            est.touched = np.unique(est.samples) - 1
        try:
            if config.m_step == "suffstats":
                touched = np.arange(state.theta.K) if config.algorithm in ("em", "saem") else est.touched
                if compiled and est.samples is not None:
                    new_theta = _suffstats_from_samples(state, X[I], est.samples, scale, gamma)
                else:
                    new_theta = _suffstats_step(state, X[I], est.W, touched, scale,
                                                1.0 if config.algorithm == "em" else gamma)
            else:
                touched = np.arange(state.theta.K) if config.algorithm in ("em", "saem") else est.touched
                g_nu, g_eta = q_gradient(state.theta, X[I], est.W, touched, scale, beta)
                if not (np.all(np.isfinite(g_nu)) and np.all(np.isfinite(g_eta))):
                    raise ParameterError("non-finite gradient")
                nu, comps = _apply_gradient(state.theta, g_nu, g_eta, touched, gamma, state.adam, config)
                new_theta = state.theta.replace(nu=nu, components=comps)
        except ParameterError as exc:
            rec = IterationRecord(t, None, float("nan"), est.aar, bias, est.evals, beta, gamma)
            records.append(rec)
            raise NumericalAbort(f"iteration {t}: {exc}", records, t) from exc
        toc = time.perf_counter()
        state.elapsed += (split - tic) + (toc - resume)
        state.theta = new_theta
        state.t = t
        if state.chain is not None:
            state.chain.invalidate()

        loglik = dataset_loglik(new_theta, X) if _loglik_due(config, N, t) else None
        if loglik is not None and not np.isfinite(loglik):
            rec = IterationRecord(t, None, loglik, est.aar, bias, est.evals, beta, gamma)
            records.append(rec)
            raise NumericalAbort(f"iteration {t}: non-finite log-likelihood", records, t)
        rec = IterationRecord(t, state.elapsed if config.record_time else None, loglik,
                              est.aar, bias, est.evals, beta, gamma)
        records.append(rec)
        for cb in callbacks:
            cb(rec, state)
    return RunResult(state.theta, records, state, state.t == config.T)


def exact_loglik_per_point(theta, X):
    return dataset_loglik(theta, X) / np.asarray(X).shape[0]


__all__ = [
    "ALGORITHMS", "TrainerConfig", "TrainState", "RunResult", "AdamState", "StatsTable",
    "run", "init_state", "default_init", "exact_e_step", "sa_update_stats",
    "gradient_m_step", "ssaem_select", "tsaem_select", "Schedule", "AnnealSchedule",
    "constant_anneal",
]
