"""Component families.

Each family maps a flat, unconstrained parameter vector ``eta`` to a
density on R^D and supplies its hand-derived gradient.  Trainers only ever
see flat vectors, so gradient steps are layout-agnostic.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ParameterError, ValidationError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianParams:
    """Mean and lower Cholesky factor of the covariance (Sigma = L L^T)."""

    mean: np.ndarray
    chol_cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        L = np.asarray(self.chol_cov, dtype=float)
        if mean.ndim != 1 or L.shape != (mean.size, mean.size):
            raise ValidationError("mean must be (D,) and chol_cov (D, D)")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(L))):
            raise ParameterError("non-finite Gaussian parameters")
        if np.any(np.diag(L) <= 0.0):
            raise ParameterError("Cholesky factor must have a strictly positive diagonal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol_cov", np.tril(L))

    @property
    def cov(self):
        L = self.chol_cov
        S = L @ L.T
        return 0.5 * (S + S.T)


@dataclass(frozen=True)
class ElementwiseFlowParams:
    """Per-dimension sinh-arcsinh transform of a standard normal."""

    mu: np.ndarray
    log_scale: np.ndarray
    skew: np.ndarray
    log_tail: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, f), dtype=float) for f in ("mu", "log_scale", "skew", "log_tail")]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise ValidationError("flow parameter vectors must share one (D,) shape")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ParameterError("non-finite flow parameters")
        for f, a in zip(("mu", "log_scale", "skew", "log_tail"), arrs):
            object.__setattr__(self, f, a)


class GaussianFamily:
    """Full-covariance Gaussian.

    Layout: ``[mean (D), tril(L) row-major with the diagonal stored as log]``.
    """

    family_id = "gaussian"
    has_suffstats = True

    def __init__(self, dim):
        self.dim = int(dim)
        self._rows, self._cols = np.tril_indices(self.dim)
        self._diag_flag = self._rows == self._cols
        self._diag_pos = np.flatnonzero(self._diag_flag)
        self.n_params = self.dim + self._rows.size

    def unpack(self, eta):
        eta = np.asarray(eta, dtype=float)
        D = self.dim
        vals = eta[D:].copy()
        vals[self._diag_pos] = np.exp(vals[self._diag_pos])
        L = np.zeros((D, D))
        L[self._rows, self._cols] = vals
        return eta[:D], L

    def pack(self, params):
        if not isinstance(params, GaussianParams):
            params = GaussianParams(*params)
        if params.mean.size != self.dim:
            raise ValidationError(f"expected dimension {self.dim}, got {params.mean.size}")
        vals = params.chol_cov[self._rows, self._cols].copy()
        vals[self._diag_pos] = np.log(vals[self._diag_pos])
        return np.concatenate([params.mean, vals])

    def pack_rows(self, means, L):
        """Batched :meth:`pack` for ``means (n, D)`` and factors ``L (n, D, D)``."""
        vals = L[:, self._rows, self._cols].copy()
        vals[:, self._diag_pos] = np.log(vals[:, self._diag_pos])
        return np.concatenate([means, vals], axis=1)

    def to_params(self, eta):
        return GaussianParams(*self.unpack(eta))

    def validate(self, eta):
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.n_params,):
            raise ValidationError(f"gaussian eta must have length {self.n_params}")
        if not np.all(np.isfinite(eta)):
            raise ParameterError("non-finite Gaussian parameters")
        return eta

    def default_eta(self, rng):
        """Mean uniform in the unit cube, identity covariance."""
        return np.concatenate([rng.uniform(0.0, 1.0, self.dim), np.zeros(self._rows.size)])

    def logpdf(self, eta, X):
        mean, L = self.unpack(eta)
        v = solve_triangular(L, (X - mean).T, lower=True, check_finite=False)
        logdet = np.sum(np.log(np.diag(L)))
        return -0.5 * np.sum(v * v, axis=0) - logdet - 0.5 * self.dim * LOG_2PI

    def grad_logpdf(self, eta, X):
        """Rows are d log p(x_n) / d eta."""
        mean, L = self.unpack(eta)
        v = solve_triangular(L, (X - mean).T, lower=True, check_finite=False)
        w = solve_triangular(L, v, lower=True, trans="T", check_finite=False)
        # d/dL of -0.5|L^{-1} r|^2 is w v^T; d/dL of -log det L is -diag(1/L)
        gL = w[self._rows, :] * v[self._cols, :]
        gL[self._diag_pos, :] -= (1.0 / np.diag(L))[:, None]
        # chain rule for the log-stored diagonal
        gL[self._diag_pos, :] *= np.diag(L)[:, None]
        return np.concatenate([w, gL], axis=0).T

    def unpack_rows(self, etas):
        """Per-row parameters: ``(means (n, D), L (n, D, D))``."""
        etas = np.asarray(etas, dtype=float)
        D = self.dim
        vals = etas[:, D:].copy()
        vals[:, self._diag_pos] = np.exp(vals[:, self._diag_pos])
        L = np.zeros((etas.shape[0], D, D))
        L[:, self._rows, self._cols] = vals
        return etas[:, :D], L

    @staticmethod
    def _forward_sub(L, r):
        # row-batched solve of L v = r by forward substitution
        v = np.empty_like(r)
        for d in range(r.shape[1]):
            v[:, d] = (r[:, d] - np.einsum("nj,nj->n", L[:, d, :d], v[:, :d])) / L[:, d, d]
        return v

    @staticmethod
    def _back_sub(L, v):
        # row-batched solve of L^T w = v
        w = np.empty_like(v)
        D = v.shape[1]
        for d in range(D - 1, -1, -1):
            w[:, d] = (v[:, d] - np.einsum("nj,nj->n", L[:, d + 1:, d], w[:, d + 1:])) / L[:, d, d]
        return w

    def logpdf_rows(self, etas, X):
        """log-density of X[n] under parameters etas[n]."""
        mean, L = self.unpack_rows(etas)
        v = self._forward_sub(L, X - mean)
        logdet = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        return -0.5 * np.sum(v * v, axis=1) - logdet - 0.5 * self.dim * LOG_2PI

    def logpdf_pairs(self, components, comps, X):
        """log-density of X[n] under component comps[n] (0-based); each
        component is unpacked once rather than once per row."""
        mean, L = self.unpack_rows(components)
        mean, L = mean[comps], L[comps]
        v = self._forward_sub(L, X - mean)
        logdet = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        return -0.5 * np.sum(v * v, axis=1) - logdet - 0.5 * self.dim * LOG_2PI

    def grad_logpdf_rows(self, etas, X):
        mean, L = self.unpack_rows(etas)
        v = self._forward_sub(L, X - mean)
        w = self._back_sub(L, v)
        diag = np.diagonal(L, axis1=1, axis2=2)
        gL = w[:, self._rows] * v[:, self._cols]
        gL[:, self._diag_pos] = (gL[:, self._diag_pos] - 1.0 / diag) * diag
        return np.concatenate([w, gL], axis=1)


class SinhArcsinhFamily:
    """Element-wise sinh-arcsinh flow over a standard normal base.

    With y = (x - mu) / exp(s) the base variable is
    eps = sinh(exp(b) * asinh(y) - a), eps ~ N(0, 1) per dimension.
    Layout: ``[mu (D), log_scale s (D), skew a (D), log_tail b (D)]``.
    At s = a = b = 0 the density is N(mu, I).
    """

    family_id = "sinh_arcsinh"
    has_suffstats = False

    def __init__(self, dim):
        self.dim = int(dim)
        self.n_params = 4 * self.dim

    def unpack(self, eta):
        eta = np.asarray(eta, dtype=float)
        return eta.reshape(4, self.dim)

    def pack(self, params):
        if not isinstance(params, ElementwiseFlowParams):
            params = ElementwiseFlowParams(*params)
        return np.concatenate([params.mu, params.log_scale, params.skew, params.log_tail])

    def to_params(self, eta):
        return ElementwiseFlowParams(*self.unpack(eta))

    def validate(self, eta):
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.n_params,):
            raise ValidationError(f"sinh_arcsinh eta must have length {self.n_params}")
        if not np.all(np.isfinite(eta)):
            raise ParameterError("non-finite flow parameters")
        return eta

    def default_eta(self, rng):
        return np.concatenate([rng.uniform(0.0, 1.0, self.dim), np.zeros(3 * self.dim)])

    def _forward(self, eta, X):
        eta = np.asarray(eta, dtype=float)
        # a single block (P,) or one block per row (n, P)
        mu, s, a, b = np.moveaxis(eta.reshape(eta.shape[:-1] + (4, self.dim)), -2, 0)
        y = (X - mu) * np.exp(-s)
        u = np.arcsinh(y)
        tail = np.exp(b)
        w = tail * u - a
        return y, u, w, tail, s

    @staticmethod
    def _log_cosh(w):
        aw = np.abs(w)
        return aw + np.log1p(np.exp(-2.0 * aw)) - np.log(2.0)

    def logpdf(self, eta, X):
        y, u, w, tail, s = self._forward(eta, X)
        eps = np.sinh(w)
        terms = (-0.5 * eps * eps - 0.5 * LOG_2PI + np.log(tail) + self._log_cosh(w)
                 - 0.5 * np.log1p(y * y) - s)
        return terms.sum(axis=1)

    def grad_logpdf(self, eta, X):
        y, u, w, tail, s = self._forward(eta, X)
        gw = np.tanh(w) - np.sinh(w) * np.cosh(w)
        gy = gw * tail / np.sqrt(1.0 + y * y) - y / (1.0 + y * y)
        g_mu = -gy * np.exp(-s)
        g_s = -gy * y - 1.0
        g_a = -gw
        g_b = 1.0 + gw * tail * u
        return np.concatenate([g_mu, g_s, g_a, g_b], axis=1)

    def logpdf_rows(self, etas, X):
        return self.logpdf(etas, X)

    def grad_logpdf_rows(self, etas, X):
        return self.grad_logpdf(etas, X)

    def logpdf_pairs(self, components, comps, X):
        return self.logpdf(components[comps], X)


FAMILIES = {
    GaussianFamily.family_id: GaussianFamily,
    SinhArcsinhFamily.family_id: SinhArcsinhFamily,
}


@lru_cache(maxsize=None)
def get_family(family_id, dim):
    try:
        return FAMILIES[family_id](int(dim))
    except KeyError:
        raise ValidationError(f"unknown component family {family_id!r}") from None
