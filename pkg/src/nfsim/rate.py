"""Rates, MSE matrices and the WMMSE surrogate.

Everything here works on the end-to-end cross channel ``T = H G W1`` of
shape ``(K*M, K*M)``: block ``(k, i)`` is ``H_k G W1_i``, the path from the
streams of user ``i`` to the antennas of user ``k``.  Stream amplitudes are
an array ``p`` of shape ``(K, M)``; rates are in bits/s/Hz.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, NumericalError

LN2 = math.log(2.0)


def block(t: np.ndarray, k: int, i: int, m: int) -> np.ndarray:
    return t[k * m:(k + 1) * m, i * m:(i + 1) * m]


def effective_direct(h_k, g, w1_k) -> np.ndarray:
    """``H_k G W1_k``, the channel seen by the streams of user ``k``."""
    h_k, g, w1_k = (np.atleast_2d(np.asarray(a, dtype=complex)) for a in (h_k, g, w1_k))
    if h_k.shape[1] != g.shape[0] or g.shape[1] != w1_k.shape[0]:
        raise ConfigurationError(f"cannot chain shapes {h_k.shape}, {g.shape}, {w1_k.shape}")
    return h_k @ g @ w1_k


def effective_channels(users: np.ndarray, g: np.ndarray, feed: np.ndarray) -> np.ndarray:
    """Cross channel ``T`` from ``(K, M, N)`` user channels, ``G`` and the feed matrix."""
    h = users.reshape(-1, users.shape[-1])
    if h.shape[0] != feed.shape[1]:
        raise ConfigurationError("feed matrix must have K*M columns")
    return h @ g @ feed


def logdet_hpd(a: np.ndarray) -> float:
    """Natural log-determinant of a Hermitian positive-definite matrix."""
    try:
        c = sla.cholesky(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"matrix is not Hermitian positive definite: {exc}") from exc
    return 2.0 * float(np.sum(np.log(np.abs(np.diag(c)))))


def _check_noise(noise_var):
    if not noise_var > 0:
        raise ConfigurationError(f"noise variance must be positive, got {noise_var}")


def interference_covariance(t, p, k, noise_var) -> np.ndarray:
    """Interference-plus-noise covariance ``Q_k`` at user ``k``."""
    _check_noise(noise_var)
    n_users, m = p.shape
    rows = t[k * m:(k + 1) * m]
    pw = (p ** 2).ravel().copy()
    pw[k * m:(k + 1) * m] = 0.0
    q = (rows * pw) @ rows.conj().T
    q = 0.5 * (q + q.conj().T)
    return q + noise_var * np.eye(m)


def user_rate(t, p, k, noise_var) -> float:
    """``log2 det(I + T_kk P_k^2 T_kk^H Q_k^{-1})``, via ``logdet(Q + S) - logdet(Q)``."""
    m = p.shape[1]
    q = interference_covariance(t, p, k, noise_var)
    tk = block(t, k, k, m) * p[k]
    s = tk @ tk.conj().T
    try:
        r = (logdet_hpd(q + 0.5 * (s + s.conj().T)) - logdet_hpd(q)) / LN2
    except NumericalError as exc:
        raise NumericalError(f"rate of user {k}: {exc}") from exc
    return max(r, 0.0)


def user_rates(t, p, noise_var) -> np.ndarray:
    return np.array([user_rate(t, p, k, noise_var) for k in range(p.shape[0])])


def weighted_sum_rate(t, p, noise_var, eta=None) -> float:
    rates = user_rates(t, p, noise_var)
    eta = np.ones_like(rates) if eta is None else np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise ConfigurationError("user weights must be nonnegative")
    return float(eta @ rates)


def mse_matrix(u_k, t, p, k, noise_var) -> np.ndarray:
    """MSE matrix of user ``k`` under combiner ``u_k``."""
    m = p.shape[1]
    rows = u_k.conj().T @ t[k * m:(k + 1) * m]
    own = rows[:, k * m:(k + 1) * m] * p[k] - np.eye(m)
    pw = (p ** 2).ravel().copy()
    pw[k * m:(k + 1) * m] = 0.0
    e = own @ own.conj().T + (rows * pw) @ rows.conj().T + noise_var * (u_k.conj().T @ u_k)
    return 0.5 * (e + e.conj().T)


def mse_matrices(u, t, p, noise_var) -> np.ndarray:
    return np.stack([mse_matrix(u[k], t, p, k, noise_var) for k in range(p.shape[0])])


def wmmse_objective(z, u, t, p, noise_var, eta=None) -> float:
    """``Σ_k η_k (log det Z_k - tr(Z_k E_k) + M)``, scaled to bits.

    With the optimal combiners and ``Z_k = E_k^{-1}`` this equals
    :func:`weighted_sum_rate`.
    """
    n_users, m = p.shape
    eta = np.ones(n_users) if eta is None else np.asarray(eta, dtype=float)
    total = 0.0
    for k in range(n_users):
        if eta[k] == 0:
            continue
        e = mse_matrix(u[k], t, p, k, noise_var)
        try:
            ld = logdet_hpd(0.5 * (z[k] + z[k].conj().T))
        except NumericalError as exc:
            raise NumericalError(f"auxiliary matrix of user {k}: {exc}") from exc
        total += eta[k] * (ld - np.trace(z[k] @ e).real + m)
    return total / LN2
