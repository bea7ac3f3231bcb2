"""Per-datapoint Metropolis-Hastings kernel over component indices.

The chain for datapoint i persists across iterations: each sweep starts
from the state the previous sweep left behind.  All randomness comes from
:class:`~mhsaem.rng.CounterRNG` keyed by (t, i, j), so the result of a
sweep does not depend on the order in which datapoints are processed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from . import _kernels
from . import rng as streams
from .errors import ValidationError
from .families import GaussianFamily
from .model import log_joint, log_joint_matrix, log_joint_pairs

UNIFORM = "uniform"
OPTIMAL = "optimal"
TABULAR = "tabular"
TABULAR_FORGETTING = "tabular_forgetting"
PROPOSAL_KINDS = (UNIFORM, OPTIMAL, TABULAR, TABULAR_FORGETTING)
_ALIASES = {"u": UNIFORM, "o": OPTIMAL, "t": TABULAR, "tf": TABULAR_FORGETTING}

DEFAULT_FLOOR = 1e-6


def proposal_kind(name):
    key = str(name).lower()
    key = _ALIASES.get(key, key)
    if key not in PROPOSAL_KINDS:
        raise ValidationError(f"unknown proposal {name!r}; choose from {PROPOSAL_KINDS}")
    return key


@dataclass
class ChainState:
    """Current assignment z_i (1-based) and cached log p(x_i, z_i)."""

    z: np.ndarray
    last_log_joint: np.ndarray
    fresh: np.ndarray

    @classmethod
    def initial(cls, n, K, rng):
        u = rng.uniform(streams.INIT_CHAIN, 0, np.arange(n))
        z = np.minimum((u * K).astype(np.int64), K - 1) + 1
        return cls(z, np.zeros(n), np.zeros(n, dtype=bool))

    def invalidate(self):
        """Mark every cached log-joint stale (theta changed)."""
        self.fresh[:] = False

    def refresh(self, theta, X):
        self.last_log_joint = log_joint_pairs(theta, X, np.arange(self.z.size), self.z - 1)
        self.fresh[:] = True

    def validate(self, K):
        if np.any(self.z < 1) or np.any(self.z > K):
            raise ValidationError("chain state outside 1..K")


@dataclass
class ProposalModel:
    kind: str
    K: int
    table: np.ndarray = None
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        self.kind = proposal_kind(self.kind)
        if self.tabular and self.table is None:
            raise ValidationError("tabular proposals need an N x K table")

    @classmethod
    def create(cls, kind, n, K, floor=DEFAULT_FLOOR):
        kind = proposal_kind(kind)
        table = None
        if kind in (TABULAR, TABULAR_FORGETTING):
            table = np.full((n, K), 1.0 / K)
        return cls(kind, K, table, floor)

    @property
    def tabular(self):
        return self.kind in (TABULAR, TABULAR_FORGETTING)

    def row_probs(self, rows):
        """Floored, normalized proposal weights for the given datapoints."""
        n = np.asarray(self.table[rows], dtype=float)
        n = np.atleast_2d(n)
        tot = n.sum(axis=1, keepdims=True)
        p = np.where(tot > 0, n / np.where(tot > 0, tot, 1.0), 1.0 / self.K)
        p = np.maximum(p, self.floor / self.K)
        return p / p.sum(axis=1, keepdims=True)


def _propose_batch(proposal, rows, zbar, u, lj_all=None, beta=1.0):
    """Vectorized proposal draw; indices are 0-based.

    Returns ``(z, log_q_forward, log_q_backward)``.  The optimal proposal
    needs the (B, K) log-joint matrix ``lj_all``.
    """
    K = proposal.K
    if proposal.kind == UNIFORM:
        z = np.minimum((u * K).astype(np.int64), K - 1)
        lq = np.full(z.shape, -np.log(K))
        return z, lq, lq.copy()
    if proposal.kind == OPTIMAL:
        # same probabilities (bit for bit) as the exact E-step, so O and
        # MCSAEM draw identical samples from identical uniforms
        p = softmax(beta * lj_all, axis=1)
    else:
        p = proposal.row_probs(rows)
    with np.errstate(divide="ignore"):
        logq = np.log(p)
    z = streams.categorical(p, u)
    ar = np.arange(z.size)
    return z, logq[ar, z], logq[ar, zbar]


def propose(proposal, i, zbar, theta, x_i, rng, t=0, j=0, beta=1.0):
    """Draw one candidate for datapoint ``i`` (0-based) from 1-based ``zbar``.

    Returns ``(z, log_q_forward, log_q_backward)`` with 1-based ``z``.
    """
    if not 1 <= int(zbar) <= proposal.K:
        raise IndexError(f"zbar {zbar} outside 1..{proposal.K}")
    stream = streams.CATEGORICAL if proposal.kind == OPTIMAL else streams.PROPOSAL
    u = rng.uniform(stream, t, [i], j)
    lj_all = None
    if proposal.kind == OPTIMAL:
        lj_all = log_joint_matrix(theta, np.atleast_2d(x_i))
    z, lqf, lqb = _propose_batch(proposal, np.array([i]), np.array([int(zbar) - 1]), u, lj_all, beta)
    return int(z[0]) + 1, float(lqf[0]), float(lqb[0])


def _alpha(log_ratio):
    return np.exp(np.minimum(log_ratio, 0.0))


def acceptance_ratio(theta, x_i, zbar, z, log_q_forward, log_q_backward, beta=1.0):
    """min{1, (p(x,z)/p(x,zbar))^beta * q(zbar|z) / q(z|zbar)}."""
    if not beta > 0:
        raise ValidationError("inverse temperature must be positive")
    if int(z) == int(zbar):
        return 1.0
    log_ratio = (beta * (log_joint(theta, x_i, z) - log_joint(theta, x_i, zbar))
                 + log_q_backward - log_q_forward)
    return float(_alpha(log_ratio))


@dataclass
class SweepResult:
    samples: np.ndarray  # (B, M), 1-based
    alphas: np.ndarray  # (B, M)
    accept_count: int
    eval_count: int


def _compiled_sweep(chain, theta, X, I, M, proposal, beta, rng, t):
    fam = theta.family
    means, Linv, logdet = _kernels.unpack_gaussians(theta.components, fam.dim, fam._rows,
                                                 fam._cols, fam._diag_flag)
    B = I.size
    if proposal.kind == UNIFORM:
        kind = _kernels.KIND_UNIFORM
        cdf = logq = np.zeros((1, 1))
    else:
        kind = _kernels.KIND_TABLE
        p = proposal.row_probs(I)
        cdf = np.cumsum(p, axis=1)
        cdf /= cdf[:, -1:]
        with np.errstate(divide="ignore"):
            logq = np.log(p)
    samples = np.empty((B, M), dtype=np.int64)
    alphas = np.empty((B, M))
    accepted, evals = _kernels.gaussian_sweep(
        chain.z, chain.last_log_joint, chain.fresh, I, np.ascontiguousarray(X, dtype=float),
        means, Linv, logdet, theta.log_weights, float(beta), int(M), kind, cdf, logq,
        rng.stream_base(streams.PROPOSAL, t), rng.stream_base(streams.ACCEPT, t), samples, alphas)
    return SweepResult(samples, alphas, int(accepted), int(evals))


def mh_sweep(chain, theta, X, I, M, proposal, beta, rng, t=1, compiled=True):
    """Run M MH steps for every datapoint in ``I`` and advance the chain.

    ``eval_count`` counts fresh family evaluations: one per proposed state,
    one per stale incumbent, or K per datapoint for the optimal proposal.
    With ``compiled`` set, Gaussian mixtures under a state-independent
    proposal (U, T, TF) run the compiled kernel; draws are identical.
    """
    I = np.asarray(I, dtype=np.int64)
    if M < 1:
        raise ValidationError("M must be >= 1")
    if I.size == 0:
        raise ValidationError("minibatch is empty")
    if not beta > 0:
        raise ValidationError("inverse temperature must be positive")
    if compiled and proposal.kind != OPTIMAL and isinstance(theta.family, GaussianFamily):
        return _compiled_sweep(chain, theta, X, I, M, proposal, beta, rng, t)
    B = I.size
    zbar = chain.z[I] - 1
    lj_bar = chain.last_log_joint[I].copy()
    samples = np.empty((B, M), dtype=np.int64)
    alphas = np.empty((B, M))
    evals = 0
    accepted = 0

    js = np.arange(M)
    accept_u = rng.uniform_grid(streams.ACCEPT, t, I, js)
    rows = np.arange(B)
    if proposal.kind == OPTIMAL:
        lj_all = log_joint_matrix(theta, X[I])
        evals += B * theta.K
        lj_bar = lj_all[rows, zbar]
        u = rng.uniform_grid(streams.CATEGORICAL, t, I, js)
        props = [_propose_batch(proposal, I, zbar, u[:, j], lj_all, beta)[0] for j in range(M)]
        lj_props = [lj_all[rows, z] for z in props]
    else:
        # independent proposals: every candidate can be drawn and scored
        # up front, together with the incumbents whose cache went stale
        u = rng.uniform_grid(streams.PROPOSAL, t, I, js)
        if proposal.kind == UNIFORM:
            logq = None
            props = [np.minimum((u[:, j] * proposal.K).astype(np.int64), proposal.K - 1) for j in range(M)]
        else:
            p = proposal.row_probs(I)
            with np.errstate(divide="ignore"):
                logq = np.log(p)
            props = [streams.categorical(p, u[:, j]) for j in range(M)]
        stale = np.flatnonzero(~chain.fresh[I])
        lj = log_joint_pairs(theta, X, np.concatenate([I[stale], np.tile(I, M)]),
                             np.concatenate([zbar[stale]] + props))
        lj_bar[stale] = lj[:stale.size]
        lj_props = np.split(lj[stale.size:], M)
        evals += stale.size + B * M

    for j in range(M):
        z, lj_z = props[j], lj_props[j]
        if proposal.kind == OPTIMAL:
            # target and proposal coincide, so the ratio is identically one
            alpha = np.ones(B)
        else:
            log_ratio = beta * (lj_z - lj_bar)
            if logq is not None:
                log_ratio = log_ratio + logq[rows, zbar] - logq[rows, z]
            alpha = np.where(z == zbar, 1.0, _alpha(log_ratio))
        acc = accept_u[:, j] < alpha
        accepted += int(acc.sum())
        zbar = np.where(acc, z, zbar)
        lj_bar = np.where(acc, lj_z, lj_bar)
        samples[:, j] = zbar
        alphas[:, j] = alpha

    chain.z[I] = zbar + 1
    chain.last_log_joint[I] = lj_bar
    chain.fresh[I] = True
    return SweepResult(samples + 1, alphas, accepted, evals)


def update_table(proposal, rows, samples, gamma):
    """Fold the sweep's samples (B, M; 1-based) into the proposal table."""
    if not proposal.tabular:
        return proposal
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must lie in [0, 1]")
    rows = np.asarray(rows)
    for j in range(samples.shape[1]):
        cols = samples[:, j] - 1
        if proposal.kind == TABULAR:
            proposal.table[rows, cols] += 1.0
        else:
            proposal.table[rows, cols] = (1.0 - gamma) * proposal.table[rows, cols] + gamma
    return proposal


def tf_update(proposal, i, z_new, gamma):
    """n_i <- (1 - e_z * gamma) (.) n_i + gamma * e_z   (``z_new`` 1-based).

    The cumulative tabular variant ignores ``gamma`` and adds e_z.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must lie in [0, 1]")
    if not 1 <= int(z_new) <= proposal.K:
        raise IndexError(f"component index {z_new} outside 1..{proposal.K}")
    return update_table(proposal, np.array([i]), np.array([[int(z_new)]]), gamma)
