"""Mixture parameterization and exact probabilistic primitives.

Component indices are 1-based at every public entry point; arrays are
0-based internally.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import EmptyComponentError, ParameterError, ValidationError
from .families import GaussianParams, get_family

COV_REL_EPS = 1e-6
COV_ABS_FLOOR = 1e-9


@dataclass(frozen=True)
class MixtureParams:
    """Immutable snapshot of theta = (nu, eta_1..eta_K).

    ``nu`` holds unconstrained log-weights; ``components`` is a (K, P)
    array, one flat parameter block per component.
    """

    nu: np.ndarray
    components: np.ndarray
    family_id: str
    dim: int
    family: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float).reshape(-1)
        comps = np.array(self.components, dtype=float)
        if comps.ndim == 1:
            comps = comps[None, :]
        fam = get_family(self.family_id, self.dim)
        if nu.size < 1:
            raise ValidationError("a mixture needs K >= 1 components")
        if comps.shape != (nu.size, fam.n_params):
            raise ValidationError(
                f"components must be ({nu.size}, {fam.n_params}), got {comps.shape}")
        if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(comps))):
            raise ParameterError("mixture parameters must be finite")
        nu.flags.writeable = False
        comps.flags.writeable = False
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "family", fam)
        shift = nu.max()
        lw = nu - (shift + np.log(np.sum(np.exp(nu - shift))))
        lw.flags.writeable = False
        object.__setattr__(self, "_log_weights", lw)

    @property
    def K(self):
        return self.nu.size

    @property
    def weights(self):
        return softmax(self.nu)

    @property
    def log_weights(self):
        return self._log_weights

    def replace(self, nu=None, components=None):
        return MixtureParams(self.nu if nu is None else nu,
                             self.components if components is None else components,
                             self.family_id, self.dim)

    @classmethod
    def from_weights(cls, weights, components, family_id, dim):
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValidationError("weights must be strictly positive")
        return cls(np.log(w / w.sum()), components, family_id, dim)


def _check_x(theta, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != theta.dim:
        raise ValidationError(f"expected data dimension {theta.dim}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("data must be finite")
    return x


def _check_z(theta, z):
    z = int(z)
    if not 1 <= z <= theta.K:
        raise IndexError(f"component index {z} outside 1..{theta.K}")
    return z - 1


def log_joint_matrix(theta, X):
    """(N, K) matrix of log p(x_n, z=k); K family evaluations per row."""
    X = np.atleast_2d(X)
    lw = theta.log_weights
    out = np.empty((X.shape[0], theta.K))
    for k in range(theta.K):
        out[:, k] = theta.family.logpdf(theta.components[k], X) + lw[k]
    return out


def log_joint_pairs(theta, X, rows, comps):
    """log p(x_rows[n], comps[n]) for 0-based component indices."""
    rows = np.asarray(rows)
    comps = np.asarray(comps)
    if rows.size == 0:
        return np.empty(0)
    return theta.family.logpdf_pairs(theta.components, comps, X[rows]) + theta.log_weights[comps]


def log_joint(theta, x, z):
    """log p_eta_z(x | z) + log pi_z for a single point and 1-based ``z``."""
    x = _check_x(theta, x).reshape(1, -1)
    k = _check_z(theta, z)
    return float(theta.family.logpdf(theta.components[k], x)[0] + theta.log_weights[k])


def log_marginal(theta, x):
    x = _check_x(theta, x).reshape(1, -1)
    return float(logsumexp(log_joint_matrix(theta, x)[0]))


def responsibilities(theta, x, beta=1.0):
    """Posterior p(z | x), optionally tempered: softmax(beta * log p(x, z))."""
    x = _check_x(theta, x).reshape(1, -1)
    return softmax(beta * log_joint_matrix(theta, x)[0])


def dataset_loglik(theta, X):
    """Sum over rows of log p(x_n)."""
    X = _check_x(theta, np.atleast_2d(X))
    if X.shape[0] == 0:
        raise ValidationError("dataset is empty")
    return float(np.sum(logsumexp(log_joint_matrix(theta, X), axis=1)))


def family_log_density(family, eta, x):
    eta = family.validate(eta)
    return float(family.logpdf(eta, np.asarray(x, dtype=float).reshape(1, -1))[0])


def family_grad_log_density(family, eta, x):
    eta = family.validate(eta)
    return family.grad_logpdf(eta, np.asarray(x, dtype=float).reshape(1, -1))[0]


@dataclass
class SufficientStats:
    """Expected count, first and second moments of one component."""

    s0: float
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        self.s0 = float(self.s0)
        self.s1 = np.asarray(self.s1, dtype=float)
        self.s2 = np.asarray(self.s2, dtype=float)
        if self.s0 < 0:
            raise ValidationError("s0 must be nonnegative")


def gaussian_stats_of(x, weights=None):
    """Sufficient statistics of one point (D,) or weighted rows (N, D)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    s2 = (X * w[:, None]).T @ X
    return SufficientStats(w.sum(), w @ X, 0.5 * (s2 + s2.T))


def regularized_cov(S):
    """Symmetrize and add eps*I, eps = max(1e-6 * trace/D, 1e-9)."""
    D = S.shape[-1]
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    eps = np.maximum(COV_REL_EPS * np.trace(S, axis1=-2, axis2=-1) / D, COV_ABS_FLOOR)
    return S + np.asarray(eps)[..., None, None] * np.eye(D)


def gaussian_params_from(stats):
    """Return (GaussianParams, s0); s0 is the unnormalized weight share."""
    if not stats.s0 > 0:
        raise EmptyComponentError("component has no statistical mass")
    mean = stats.s1 / stats.s0
    cov = regularized_cov(stats.s2 / stats.s0 - np.outer(mean, mean))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ParameterError("regularized covariance is not positive definite") from None
    return GaussianParams(mean, L), stats.s0


def gaussian_params_batch(s0, s1, s2):
    """Vectorized :func:`gaussian_params_from` over a stack of components.

    Returns ``(means (n, D), L (n, D, D), ok (n,))``; rows with no mass or a
    failed factorization have ``ok`` False and meaningless parameters.
    """
    s0 = np.asarray(s0, dtype=float)
    n, D = np.asarray(s1).shape
    ok = s0 > 0
    safe = np.where(ok, s0, 1.0)
    means = s1 / safe[:, None]
    cov = regularized_cov(s2 / safe[:, None, None] - means[:, :, None] * means[:, None, :])
    cov[~ok] = np.eye(D)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        L = np.tile(np.eye(D), (n, 1, 1))
        for k in np.flatnonzero(ok):
            try:
                L[k] = np.linalg.cholesky(cov[k])
            except np.linalg.LinAlgError:
                ok[k] = False
    diag = np.diagonal(L, axis1=1, axis2=2)
    ok &= np.all(np.isfinite(L), axis=(1, 2)) & np.all(diag > 0, axis=1) & np.all(np.isfinite(means), axis=1)
    return means, L, ok


def stats_from_params(theta, total):
    """Stats table consistent with ``theta`` for a dataset of size ``total``."""
    fam = theta.family
    K, D = theta.K, theta.dim
    s0 = total * theta.weights
    s1 = np.empty((K, D))
    s2 = np.empty((K, D, D))
    for k in range(K):
        mean, L = fam.unpack(theta.components[k])
        s1[k] = s0[k] * mean
        s2[k] = s0[k] * (L @ L.T + np.outer(mean, mean))
    return s0, s1, s2
