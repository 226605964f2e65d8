"""SINR/SE evaluation from link statistics and LSFP weight vectors.

Everything here is a deterministic function of the long-term statistics: the
desired-signal, beamforming-uncertainty, pilot-contamination, and
non-coherent-interference powers, the resulting SINR and spectral efficiency,
the per-BS transmit power, and the scalar-receiver MSE used by the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError
from .linkstats import LinkStatistics

BU_CLAMP = 1e-10  # PSD quadratics may dip this far below zero in floating point


@dataclass
class LsfpWeights:
    """Per-user combining weights across all BSs.

    a[l, k, r] is the weight BS r applies to user (l, k)'s symbol; entries
    where support_mask is False are identically zero (single-layer and
    partial schemes).
    """

    a: np.ndarray
    support_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.support_mask is None:
            self.support_mask = np.ones(self.a.shape, dtype=bool)
        if np.any(self.a[~self.support_mask] != 0):
            raise InvariantError("weights outside the support mask must be exactly zero")


def full_mask(L: int, K: int) -> np.ndarray:
    return np.ones((L, K, L), dtype=bool)


def slp_mask(L: int, K: int) -> np.ndarray:
    """Single-layer support: each user is served only by its own BS."""
    m = np.zeros((L, K, L), dtype=bool)
    for l in range(L):
        m[l, :, l] = True
    return m


def partial_mask(L: int, K: int, pairs) -> np.ndarray:
    """Full support for the selected (l, k) pairs, single-layer elsewhere."""
    m = slp_mask(L, K)
    for l, k in pairs:
        m[l, k, :] = True
    return m


@dataclass
class SinrBreakdown:
    """Term powers of the effective downlink SINR for one user."""

    ds_power: float
    bu_power: float
    pc_power: float
    ni_power: float
    sinr: float


def _quad_all(weights: LsfpWeights, ls: LinkStatistics) -> np.ndarray:
    """q[l, k, k', r] = a_{rk'}^H C_{lkk'} a_{rk'} for every combination."""
    return np.einsum("rpm,lkpmn,rpn->lkpr", weights.a.conj(), ls.C, weights.a,
                     optimize=True).real


def _signal_all(weights: LsfpWeights, ls: LinkStatistics) -> np.ndarray:
    """ab[l, k] = a_{lk}^H b_{lk}."""
    return np.einsum("lkr,lkr->lk", weights.a.conj(), ls.b)


def sinr_breakdown(l: int, k: int, weights: LsfpWeights, ls: LinkStatistics,
                   sigma2: float) -> SinrBreakdown:
    """Decompose user (l, k)'s SINR into its interference mechanisms."""
    a = weights.a
    ab = np.vdot(a[l, k], ls.b[l, k])
    ds = abs(ab) ** 2

    def quad(r, kp):
        return float(np.real(a[r, kp].conj() @ ls.C[l, k, kp] @ a[r, kp]))

    L, K = ls.L, ls.K
    own = quad(l, k)
    bu = own - ds
    if bu < -BU_CLAMP * max(own, 1.0):
        raise InvariantError(
            f"beamforming-uncertainty power is negative ({bu:.3e}); "
            "weights and statistics are inconsistent"
        )
    bu = max(bu, 0.0)
    pc = sum(quad(r, k) for r in range(L) if r != l)
    ni = sum(quad(r, kp) for r in range(L) for kp in range(K) if kp != k)
    sinr = ds / (bu + pc + ni + sigma2)
    return SinrBreakdown(ds_power=ds, bu_power=bu, pc_power=pc, ni_power=ni, sinr=sinr)


def sinr_all(weights: LsfpWeights, ls: LinkStatistics, sigma2: float) -> np.ndarray:
    """Vectorized SINR of every user; same quantity as `sinr_breakdown().sinr`."""
    q = _quad_all(weights, ls)
    ds = np.abs(_signal_all(weights, ls)) ** 2
    denom = q.sum(axis=(2, 3)) - ds + sigma2
    return ds / denom


def spectral_efficiency(sinr: float, tau_c: int, tau_p: int) -> float:
    """Ergodic SE lower bound in bit/s/Hz, including the pilot-overhead pre-log."""
    if tau_p >= tau_c:
        raise ValueError("tau_p must be < tau_c")
    if np.any(np.asarray(sinr) < 0):
        raise ValueError("sinr must be >= 0")
    return (tau_c - tau_p) / tau_c * np.log2(1.0 + sinr)


def mse_value(u: complex, l: int, k: int, weights: LsfpWeights, ls: LinkStatistics,
              sigma2: float) -> float:
    """Mean-square decoding error of user (l, k) under scalar receiver weight u."""
    q = np.einsum("rpm,pmn,rpn->", weights.a.conj(), ls.C[l, k], weights.a,
                  optimize=True).real
    ab = np.vdot(weights.a[l, k], ls.b[l, k])
    e = abs(u) ** 2 * (q + sigma2) - 2.0 * np.real(np.conj(u) * ab) + 1.0
    if e < -1e-12:
        return float(e)
    return float(max(e, 0.0))


def power_used(l: int, weights: LsfpWeights, ls: LinkStatistics) -> float:
    """Long-term transmit power of BS l in watts."""
    return float(np.einsum("k,rk->", ls.omega[l], np.abs(weights.a[:, :, l]) ** 2))
