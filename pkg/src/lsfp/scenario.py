"""Network geometry, long-term channel statistics, and channel sampling.

A scenario is an L-cell grid with K single-antenna users per cell and an
M-antenna uniform linear array at each base station.  Every (user, BS) link
carries a Rician channel whose line-of-sight part has a random phase that
changes per coherence block, plus a spatially correlated Gaussian part.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, StatisticsError

RICIAN_CORRELATED = "rician_correlated"
RAYLEIGH_UNCORRELATED = "rayleigh_uncorrelated"

# Eigenvalues of a covariance may only dip below zero by round-off; anything
# below -PSD_TOL * trace is treated as a genuinely indefinite matrix.
PSD_TOL = 1e-10


@dataclass(frozen=True)
class ScenarioConfig:
    """Static description of the network and channel model.

    Defaults correspond to the large urban setup used throughout the
    experiments (16 cells of 250 m, 200 antennas, 8 users per cell).
    Distances are meters, powers are watts, angles in config are degrees.
    """

    L: int = 16
    K: int = 8
    M: int = 200
    tau_c: int = 200
    tau_p: int | None = None  # defaults to K (one orthogonal pilot per in-cell user)
    eta: float = 0.1
    rho_d: float = 10.0
    sigma2: float = 10.0 ** (-96 / 10) / 1000.0  # -96 dBm
    cell_side: float = 250.0
    min_bs_distance: float = 20.0
    asd_deg: float = 15.0
    pathloss_exponent_db_per_decade: float = 36.7
    pathloss_intercept_db: float = 30.5
    rician_k_intercept_db: float = 13.0
    rician_k_slope_db_per_m: float = 0.03
    height_diff_m: float = 11.0
    fading_kind: str = RICIAN_CORRELATED
    shadow_std_db: float = 0.0
    seed: int = 0
    bs_positions: tuple | None = None  # ((x, y), ...) overrides the square grid

    def __post_init__(self):
        if self.tau_p is None:
            object.__setattr__(self, "tau_p", self.K)
        if self.bs_positions is not None:
            object.__setattr__(
                self, "bs_positions", tuple((float(x), float(y)) for x, y in self.bs_positions)
            )
        self.validate()

    def validate(self):
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.tau_p != self.K:
            raise ConfigError("tau_p must equal K")
        if self.tau_p > self.tau_c:
            raise ConfigError("tau_c must be >= tau_p")
        if self.eta <= 0:
            raise ConfigError("eta must be > 0")
        if self.rho_d <= 0:
            raise ConfigError("rho_d must be > 0")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be > 0")
        if self.cell_side <= 0:
            raise ConfigError("cell_side must be > 0")
        if self.min_bs_distance <= 0:
            raise ConfigError("min_bs_distance must be > 0")
        if self.asd_deg < 0:
            raise ConfigError("asd_deg must be >= 0")
        if self.height_diff_m < 0:
            raise ConfigError("height_diff_m must be >= 0")
        if self.shadow_std_db < 0:
            raise ConfigError("shadow_std_db must be >= 0")
        if self.fading_kind not in (RICIAN_CORRELATED, RAYLEIGH_UNCORRELATED):
            raise ConfigError(f"fading_kind must be one of "
                              f"{RICIAN_CORRELATED!r}, {RAYLEIGH_UNCORRELATED!r}")
        if self.bs_positions is None:
            n = math.isqrt(self.L)
            if n * n != self.L:
                raise ConfigError(
                    "L must be a perfect square for the default grid layout; "
                    "otherwise provide bs_positions"
                )
        elif len(self.bs_positions) != self.L:
            raise ConfigError("bs_positions must list exactly L coordinates")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if d["bs_positions"] is not None:
            d["bs_positions"] = [list(p) for p in d["bs_positions"]]
        return d


@dataclass
class ChannelStatistics:
    """Long-term state of every (cell l, user k, BS r) link.

    gbar[l, k, r]    LOS mean vector (M,), includes the LOS gain
    R[l, k, r]       Hermitian PSD NLOS covariance (M, M)
    Rbar[l, k, r]    R + gbar gbar^H
    azimuth[l, k, r], elevation[l, k, r]  angles in radians
    """

    L: int
    K: int
    M: int
    gbar: np.ndarray
    R: np.ndarray
    Rbar: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray
    bs_xy: np.ndarray
    user_xy: np.ndarray


@dataclass
class ChannelRealization:
    """One coherence block: g[l, k, r] channel vectors and theta[l, k, r] LOS phases."""

    g: np.ndarray
    theta: np.ndarray


def steering_vector(M: int, azimuth: float, elevation: float = 0.0,
                    los_gain: float = 1.0) -> np.ndarray:
    """Half-wavelength ULA response scaled to carry `los_gain` power per antenna."""
    if M < 1:
        raise ConfigError("M must be >= 1")
    if los_gain < 0:
        raise ConfigError("los_gain must be >= 0")
    m = np.arange(M)
    phase = np.pi * m * np.sin(azimuth) * np.cos(elevation)
    return np.sqrt(los_gain) * np.exp(1j * phase)


def local_scattering_covariance(M: int, nominal_azimuth_effective: float, asd: float,
                                nlos_gain: float) -> np.ndarray:
    """Gaussian local-scattering covariance for a half-wavelength ULA.

    Entry (m, n) is nlos_gain * exp(j*pi*(m-n)*sin(phi)) damped by the
    small-angle Gaussian spread `asd` (radians) around the nominal effective
    azimuth; consistent with the phase convention of `steering_vector`, so
    asd = 0 collapses to the rank-1 steering outer product.
    """
    if asd < 0:
        raise ConfigError("asd must be >= 0")
    if nlos_gain < 0:
        raise ConfigError("nlos_gain must be >= 0")
    diff = np.subtract.outer(np.arange(M), np.arange(M)).astype(float)
    s, c = np.sin(nominal_azimuth_effective), np.cos(nominal_azimuth_effective)
    return nlos_gain * np.exp(1j * np.pi * diff * s - 0.5 * (asd * np.pi * diff * c) ** 2)


def _grid_positions(config: ScenarioConfig) -> np.ndarray:
    if config.bs_positions is not None:
        return np.asarray(config.bs_positions, dtype=float)
    n = math.isqrt(config.L)
    s = config.cell_side
    pos = np.empty((config.L, 2))
    for l in range(config.L):
        row, col = divmod(l, n)
        pos[l] = ((col + 0.5) * s, (row + 0.5) * s)
    return pos


def _drop_users(config: ScenarioConfig, bs_xy: np.ndarray, rng) -> np.ndarray:
    user_xy = np.empty((config.L, config.K, 2))
    h = config.cell_side / 2.0
    for l in range(config.L):
        # users are dropped in the square cell around their own BS
        x0, x1 = bs_xy[l, 0] - h, bs_xy[l, 0] + h
        y0, y1 = bs_xy[l, 1] - h, bs_xy[l, 1] + h
        for k in range(config.K):
            for _ in range(10000):
                p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
                d2 = np.linalg.norm(bs_xy - p, axis=1)
                if np.all(d2 >= config.min_bs_distance):
                    user_xy[l, k] = p
                    break
            else:
                raise ConfigError(
                    "min_bs_distance leaves no room to place users inside the cell"
                )
    return user_xy


def generate_network(config: ScenarioConfig, rng=None) -> ChannelStatistics:
    """Drop users and build the long-term statistics of every link.

    Pure function of (config, seed): with rng omitted a fresh generator is
    seeded from config.seed.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    L, K, M = config.L, config.K, config.M
    bs_xy = _grid_positions(config)
    user_xy = _drop_users(config, bs_xy, rng)

    gbar = np.zeros((L, K, L, M), dtype=complex)
    R = np.zeros((L, K, L, M, M), dtype=complex)
    azimuth = np.zeros((L, K, L))
    elevation = np.zeros((L, K, L))
    asd = math.radians(config.asd_deg)

    for l in range(L):
        for k in range(K):
            for r in range(L):
                dx, dy = user_xy[l, k] - bs_xy[r]
                d2d = math.hypot(dx, dy)
                d3d = math.hypot(d2d, config.height_diff_m)
                gain_db = -(config.pathloss_intercept_db
                            + config.pathloss_exponent_db_per_decade * math.log10(d3d))
                if config.shadow_std_db > 0:
                    gain_db += rng.normal(0.0, config.shadow_std_db)
                gain = 10.0 ** (gain_db / 10.0)

                az = math.atan2(dy, dx)
                el = math.atan2(config.height_diff_m, d2d)
                azimuth[l, k, r] = az
                elevation[l, k, r] = el

                if config.fading_kind == RAYLEIGH_UNCORRELATED:
                    R[l, k, r] = gain * np.eye(M)
                    continue

                k_db = (config.rician_k_intercept_db
                        - config.rician_k_slope_db_per_m * d2d)
                kappa = 10.0 ** (k_db / 10.0)
                los_frac = min(max(kappa / (1.0 + kappa), 0.0), 1.0)
                gbar[l, k, r] = steering_vector(M, az, el, gain * los_frac)
                eff = math.asin(min(max(math.sin(az) * math.cos(el), -1.0), 1.0))
                R[l, k, r] = local_scattering_covariance(M, eff, asd, gain * (1.0 - los_frac))

    Rbar = R + gbar[..., :, None] * gbar[..., None, :].conj()
    return ChannelStatistics(L=L, K=K, M=M, gbar=gbar, R=R, Rbar=Rbar,
                             azimuth=azimuth, elevation=elevation,
                             bs_xy=bs_xy, user_xy=user_xy)


def covariance_sqrt_factors(stats: ChannelStatistics) -> np.ndarray:
    """Hermitian square roots of every R, for drawing correlated NLOS vectors.

    Eigenvalues below -PSD_TOL * trace raise; smaller negative round-off is
    clipped to zero.
    """
    shape = stats.R.shape
    Rflat = stats.R.reshape(-1, stats.M, stats.M)
    vals, vecs = np.linalg.eigh(Rflat)
    traces = np.maximum(np.trace(Rflat, axis1=-2, axis2=-1).real, 0.0)
    floor = -PSD_TOL * np.maximum(traces, np.finfo(float).tiny)
    if np.any(vals[:, 0] < floor):
        worst = float(np.min(vals[:, 0] / np.maximum(traces, np.finfo(float).tiny)))
        raise StatisticsError(
            f"NLOS covariance is indefinite beyond tolerance (min eig/trace = {worst:.3e})"
        )
    vals = np.clip(vals, 0.0, None)
    fac = (vecs * np.sqrt(vals)[:, None, :]) @ np.swapaxes(vecs.conj(), -1, -2)
    return fac.reshape(shape)


def _sample_batch(stats: ChannelStatistics, factors: np.ndarray, rng,
                  n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw n independent realizations; returns (g, theta) with leading axis n."""
    L, K, M = stats.L, stats.K, stats.M
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(n, L, K, L))
    noise = (rng.standard_normal((n, L, K, L, M)) + 1j * rng.standard_normal((n, L, K, L, M)))
    noise /= np.sqrt(2.0)
    nlos = np.einsum("lkrmn,slkrn->slkrm", factors, noise)
    g = np.exp(1j * theta)[..., None] * stats.gbar[None] + nlos
    return g, theta


def sample_channels(stats: ChannelStatistics, rng,
                    factors: np.ndarray | None = None) -> ChannelRealization:
    """Draw one coherence block of channels: g = e^{j theta} gbar + correlated noise."""
    if factors is None:
        factors = covariance_sqrt_factors(stats)
    g, theta = _sample_batch(stats, factors, rng, 1)
    return ChannelRealization(g=g[0], theta=theta[0])
