"""Pilot-observation statistics and channel estimators (LMMSE, EW-LMMSE, LS).

Pilots are orthogonal within a cell and reused across cells, so the
per-(BS, pilot) sufficient statistic z superimposes the channels of every
pilot-sharing user.  All estimators are linear in z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericError
from .scenario import ChannelRealization, ChannelStatistics

LMMSE = "lmmse"
EW_LMMSE = "ew_lmmse"
LS = "ls"

_ESTIMATOR_KINDS = (LMMSE, EW_LMMSE, LS)


def _norm_kind(kind: str) -> str:
    k = kind.strip().lower().replace("-", "_")
    if k not in _ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}; expected one of {_ESTIMATOR_KINDS}")
    return k


@dataclass
class PilotStatistics:
    """Per-(BS l, pilot k) observation statistics.

    Psi[l, k]     covariance of the pilot sufficient statistic (M, M), PD
    Lambda[l, k]  its diagonal (M,)
    Dbar[l, k]    diagonal of Rbar of the own-cell user on that pilot (M,)
    """

    Psi: np.ndarray
    Lambda: np.ndarray
    Dbar: np.ndarray
    _cho: np.ndarray
    _cho_lower: bool

    def solve(self, l: int, k: int, B: np.ndarray) -> np.ndarray:
        """Psi_{lk}^{-1} @ B via the cached Cholesky factor."""
        return cho_solve((self._cho[l, k], self._cho_lower), B)


def psi_matrix(k: int, l: int, stats: ChannelStatistics, config) -> np.ndarray:
    """Covariance of the pilot-k sufficient statistic at BS l."""
    acc = stats.Rbar[:, k, l].sum(axis=0)
    out = config.tau_p * config.eta * acc + config.sigma2 * np.eye(stats.M)
    return 0.5 * (out + out.conj().T)


def pilot_statistics(stats: ChannelStatistics, config) -> PilotStatistics:
    """Build the full (L, K) table of pilot statistics with cached factorizations."""
    L, K, M = stats.L, stats.K, stats.M
    Psi = np.empty((L, K, M, M), dtype=complex)
    cho = np.empty((L, K, M, M), dtype=complex)
    lower = True
    for l in range(L):
        for k in range(K):
            Psi[l, k] = psi_matrix(k, l, stats, config)
            try:
                c, lower = cho_factor(Psi[l, k], lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"Psi[{l},{k}] is numerically singular") from exc
            cho[l, k] = c
    Lambda = np.diagonal(Psi, axis1=-2, axis2=-1).real.copy()
    Dbar = np.empty((L, K, M))
    for l in range(L):
        for k in range(K):
            Dbar[l, k] = np.diag(stats.Rbar[l, k, l]).real
    return PilotStatistics(Psi=Psi, Lambda=Lambda, Dbar=Dbar, _cho=cho, _cho_lower=lower)


def pilot_observation(realization: ChannelRealization, l: int, k: int, config,
                      rng) -> np.ndarray:
    """Noisy pilot sufficient statistic for pilot k at BS l.

    Only pilot-k channels enter; orthogonality to the other pilots is already
    applied in the de-spreading that produces this statistic.
    """
    M = realization.g.shape[-1]
    noise = (rng.standard_normal(M) + 1j * rng.standard_normal(M)) / np.sqrt(2.0)
    signal = realization.g[:, k, l, :].sum(axis=0)
    return np.sqrt(config.tau_p * config.eta) * signal + np.sqrt(config.sigma2) * noise


@dataclass
class ChannelEstimate:
    """A channel estimate with its second-order description."""

    kind: str
    ghat: np.ndarray
    est_cov: np.ndarray
    err_cov: np.ndarray


def channel_estimate(kind: str, z: np.ndarray, l: int, k: int,
                     pilot_stats: PilotStatistics, stats: ChannelStatistics,
                     config) -> ChannelEstimate:
    """Estimate the own-cell channel of pilot-k's user at BS l from z.

    LMMSE whitens through Psi, EW-LMMSE uses only the diagonals, and LS
    returns z itself (any scaling is absorbed downstream by the precoding
    weights).
    """
    kind = _norm_kind(kind)
    te = config.tau_p * config.eta
    Rbar = stats.Rbar[l, k, l]

    if kind == LMMSE:
        sol = pilot_stats.solve(l, k, np.column_stack([z, Rbar]))
        ghat = np.sqrt(te) * (Rbar @ sol[:, 0])
        est_cov = te * (Rbar @ sol[:, 1:])
        est_cov = 0.5 * (est_cov + est_cov.conj().T)
        err_cov = Rbar - est_cov
        err_cov = 0.5 * (err_cov + err_cov.conj().T)
        return ChannelEstimate(kind=kind, ghat=ghat, est_cov=est_cov, err_cov=err_cov)

    if kind == EW_LMMSE:
        c = np.sqrt(te) * pilot_stats.Dbar[l, k] / pilot_stats.Lambda[l, k]
        ghat = c * z
        Psi = pilot_stats.Psi[l, k]
        est_cov = (c[:, None] * Psi) * c[None, :]
        cross = np.sqrt(te) * (c[:, None] * Rbar)
        err_cov = Rbar - cross - cross.conj().T + est_cov
        return ChannelEstimate(kind=kind, ghat=ghat,
                               est_cov=0.5 * (est_cov + est_cov.conj().T),
                               err_cov=0.5 * (err_cov + err_cov.conj().T))

    # LS: the unscaled observation serves directly as the MR precoder
    est_cov = pilot_stats.Psi[l, k]
    cross = np.sqrt(te) * Rbar
    err_cov = Rbar - cross - cross.conj().T + est_cov
    return ChannelEstimate(kind=LS, ghat=z.copy(), est_cov=est_cov.copy(),
                           err_cov=0.5 * (err_cov + err_cov.conj().T))
