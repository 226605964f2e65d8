"""LSFP weight design: WMMSE block coordinate descent with a consensus-ADMM
inner solver, plus the single-layer baselines and partial-support selection.

The rate objective (sum of log-rates, or sum of log-log-rates for
proportional fairness) is lifted to a weighted-MMSE problem over scalar
receivers u, MSE weights d, and the weight vectors a.  The u and d blocks
have closed-form minimizers; the a block is a strongly convex QCQP with one
quadratic power constraint per BS, solved by consensus ADMM in whitened
coordinates where the projection is a per-BS Euclidean ball.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, ConvergenceError, NumericError
from .linkstats import LinkStatistics
from .se_eval import LsfpWeights, _quad_all, _signal_all, full_mask, slp_mask

SUM_SE = "sum_se"
PROP_FAIR = "prop_fair"

E_CLAMP = 1e-12  # keeps the MSE strictly inside (0, 1) ahead of the d-update
POWER_SLACK = 1e-9  # consensus gap tolerated before re-projecting the final iterate


@dataclass
class SolverOptions:
    objective: str = SUM_SE
    eps_admm: float = 1e-5
    eps_wmmse: float = 1e-5
    rho_admm: float = 0.2
    max_outer_iters: int = 500
    max_inner_iters: int = 5000
    # carry the ADMM primal copy / dual across outer iterations (large speedup;
    # the inner problem is convex so the optimum is unchanged).  False restores
    # a fresh random primal-copy initialization at every outer iteration.
    admm_warm_start: bool = True

    def __post_init__(self):
        if self.objective not in (SUM_SE, PROP_FAIR):
            raise ConfigError(f"objective must be {SUM_SE!r} or {PROP_FAIR!r}")
        if min(self.eps_admm, self.eps_wmmse, self.rho_admm) <= 0:
            raise ConfigError("eps_admm, eps_wmmse, and rho_admm must be > 0")
        if min(self.max_outer_iters, self.max_inner_iters) < 1:
            raise ConfigError("iteration caps must be >= 1")


@dataclass
class SolverState:
    """Variables of one WMMSE solve, in both natural and whitened coordinates."""

    u: np.ndarray          # (L, K) scalar receivers
    d: np.ndarray          # (L, K) MSE weights
    e: np.ndarray          # (L, K) MSEs at the optimal receivers
    a_tilde: np.ndarray    # (L, K, L) whitened weights, Omega_k a_lk
    a_bar: np.ndarray      # (L, K, L) feasible ADMM copy
    a_hat: np.ndarray      # (L, K, L) scaled duals
    Omega: np.ndarray      # (K, L) sqrt of omega per BS, the whitening diagonal
    F: np.ndarray          # (K, L, L) quadratic forms (shared by all l)
    f: np.ndarray          # (L, K, L) linear forms


@dataclass
class SolverDiagnostics:
    objective: str
    objective_trace: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    final_admm_residual: float = float("nan")
    outer_iterations: int = 0
    converged: bool = False
    inner_failures: int = 0

    def to_jsonable(self) -> dict:
        return {
            "objective": self.objective,
            "objective_trace": [float(v) for v in self.objective_trace],
            "inner_iterations": [int(n) for n in self.inner_iterations],
            "final_admm_residual": float(self.final_admm_residual),
            "outer_iterations": int(self.outer_iterations),
            "converged": bool(self.converged),
            "inner_failures": int(self.inner_failures),
        }


@dataclass
class PartialSelection:
    """(l, k) pairs granted full support; everyone else stays single-layer."""

    D: frozenset
    N_D: int

    def __post_init__(self):
        self.D = frozenset((int(l), int(k)) for l, k in self.D)
        if len(self.D) != self.N_D:
            raise ConfigError("N_D must equal the number of selected pairs")


def optimal_receiver_u(l: int, k: int, weights: LsfpWeights, ls: LinkStatistics,
                       sigma2: float) -> complex:
    """Scalar receiver minimizing user (l, k)'s MSE for fixed weights."""
    q = np.einsum("rpm,pmn,rpn->", weights.a.conj(), ls.C[l, k], weights.a,
                  optimize=True).real
    ab = np.vdot(weights.a[l, k], ls.b[l, k])
    return complex(ab / (q + sigma2))


def weight_update_d(objective: str, e: float) -> float:
    """MSE-weight update: 1/e for sum-SE, -1/(e ln e) for proportional fairness."""
    e = min(max(float(e), E_CLAMP), 1.0 - E_CLAMP)
    if objective == SUM_SE:
        return 1.0 / e
    if objective == PROP_FAIR:
        return -1.0 / (e * np.log(e))
    raise ConfigError(f"objective must be {SUM_SE!r} or {PROP_FAIR!r}")


def build_quadratic(state: SolverState, ls: LinkStatistics) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic/linear forms of the weight subproblem in whitened coordinates.

    F depends only on the pilot index, so it is built once per k and shared by
    all L users on that pilot.
    """
    w = state.d * np.abs(state.u) ** 2
    Fk = np.einsum("rp,rpkmn->kmn", w, ls.C, optimize=True)
    inv_omega = 1.0 / state.Omega  # (K, L)
    Fk = inv_omega[:, :, None] * Fk * inv_omega[:, None, :]
    Fk = 0.5 * (Fk + np.swapaxes(Fk.conj(), -1, -2))
    f = (state.d * state.u.conj())[:, :, None] * (ls.b * inv_omega[None, :, :])
    state.F, state.f = Fk, f
    return Fk, f


def _project_per_bs(v: np.ndarray, rho_d: float) -> np.ndarray:
    """Scale each BS's coordinate slice onto its power ball (no-op inside)."""
    per_bs = np.einsum("rkl->l", np.abs(v) ** 2)
    with np.errstate(divide="ignore"):
        scale = np.minimum(1.0, np.sqrt(rho_d / np.maximum(per_bs, np.finfo(float).tiny)))
    return v * scale[None, None, :]


class _MaskedSolver:
    """Factorizations of (F_k + rho I) restricted to each distinct support pattern."""

    def __init__(self, F: np.ndarray, rho: float, mask: np.ndarray):
        K, Ldim, _ = F.shape
        L = mask.shape[0]
        self.groups = []  # (k, idx array, users array, factor or scalar)
        for k in range(K):
            M = F[k] + rho * np.eye(Ldim)
            patterns = {}
            for l in range(L):
                patterns.setdefault(tuple(mask[l, k]), []).append(l)
            for pattern, users in patterns.items():
                idx = np.flatnonzero(np.array(pattern))
                if idx.size == 0:
                    continue
                sub = M[np.ix_(idx, idx)]
                if idx.size == 1:
                    fac = sub[0, 0].real
                else:
                    try:
                        fac = cho_factor(sub, lower=True)
                    except np.linalg.LinAlgError as exc:
                        raise NumericError("F + rho I failed to factorize") from exc
                self.groups.append((k, idx, np.array(users), fac))

    def solve(self, rhs: np.ndarray, out: np.ndarray):
        """out[l, k, idx] = (F_k + rho I)[idx, idx]^{-1} rhs[l, k, idx], zero elsewhere."""
        out.fill(0.0)
        for k, idx, users, fac in self.groups:
            r = rhs[users[:, None], k, idx[None, :]]
            if idx.size == 1:
                sol = r / fac
            else:
                sol = cho_solve(fac, r.T).T
            out[users[:, None], k, idx[None, :]] = sol


@dataclass
class AdmmResult:
    a_tilde: np.ndarray
    a_bar: np.ndarray
    a_hat: np.ndarray
    iterations: int
    residual_ratio: float
    residuals: list = field(default_factory=list)  # consensus ratio per iteration


def admm_qcqp_solve(F: np.ndarray, f: np.ndarray, rho_d: float, options: SolverOptions,
                    mask: np.ndarray | None = None,
                    a_bar0: np.ndarray | None = None,
                    a_hat0: np.ndarray | None = None) -> AdmmResult:
    """Solve the whitened weight QCQP by consensus ADMM.

    minimize   sum_lk  a~^H F_k a~ - 2 Re(a~^H f_lk)
    subject to sum_rk |abar_rk^l|^2 <= rho_d per BS l,   abar = a~.

    All three updates are closed-form: a ridge solve, a per-BS ball
    projection, and a dual addition.  Stops when both the consensus residual
    ratio and the dual residual ratio drop below eps_admm; the primal test
    alone is blind to interior optima (a feasible iterate with zero duals has
    abar == a~ exactly while the solve is still far from stationary).  Raises
    ConvergenceError (carrying the last iterate) if max_inner_iters is hit
    first.
    """
    L, K, Ldim = f.shape
    if mask is None:
        mask = full_mask(L, K)
    solver = _MaskedSolver(F, options.rho_admm, mask)
    a_bar = np.zeros_like(f) if a_bar0 is None else a_bar0.copy()
    a_hat = np.zeros_like(f) if a_hat0 is None else a_hat0.copy()
    a_tilde = np.zeros_like(f)
    rho = options.rho_admm

    residual = np.inf
    residuals = []
    for it in range(1, options.max_inner_iters + 1):
        solver.solve(f + rho * (a_bar + a_hat), a_tilde)
        a_bar_prev = a_bar
        a_bar = _project_per_bs(a_tilde - a_hat, rho_d)
        a_hat += a_bar - a_tilde
        num_primal = float(np.sum(np.abs(a_bar - a_tilde) ** 2))
        num_dual = float(np.sum(np.abs(a_bar - a_bar_prev) ** 2))
        den = float(np.sum(np.abs(a_tilde) ** 2))
        num = max(num_primal, num_dual)
        residual = num / den if den > 0 else 0.0
        residuals.append(residual)
        if num <= options.eps_admm * den:
            return AdmmResult(a_tilde=a_tilde, a_bar=a_bar, a_hat=a_hat,
                              iterations=it, residual_ratio=residual,
                              residuals=residuals)
    raise ConvergenceError(
        f"ADMM did not reach eps_admm={options.eps_admm:g} within "
        f"{options.max_inner_iters} iterations (residual ratio {residual:.3e})",
        residual=residual,
        iterate=AdmmResult(a_tilde=a_tilde, a_bar=a_bar, a_hat=a_hat,
                           iterations=options.max_inner_iters, residual_ratio=residual,
                           residuals=residuals),
    )


def initial_weights(ls: LinkStatistics, config, mask: np.ndarray | None = None) -> LsfpWeights:
    """Identical positive weights per BS meeting every power constraint with equality."""
    L, K = ls.L, ls.K
    if mask is None:
        mask = full_mask(L, K)
    if np.any(ls.omega <= 0):
        raise ConfigError("omega must be positive for every (BS, pilot) pair")
    counts = mask.sum(axis=0)  # (K, L): supported entries at BS l on pilot k
    denom = np.einsum("lk,kl->l", ls.omega, counts)
    if np.any(denom <= 0):
        bs = int(np.flatnonzero(denom <= 0)[0])
        raise ConfigError(f"BS {bs} has an empty support set")
    v = np.sqrt(config.rho_d / denom)  # (L,) per-BS value
    a = np.where(mask, v[None, None, :], 0.0).astype(complex)
    return LsfpWeights(a=a, support_mask=mask)


def lpa_weights(ls: LinkStatistics, config) -> LsfpWeights:
    """Single-layer heuristic: per-user BS power proportional to sqrt(omega)."""
    if np.any(ls.omega <= 0):
        raise ConfigError("omega must be positive for every (BS, pilot) pair")
    L, K = ls.L, ls.K
    mask = slp_mask(L, K)
    a = np.zeros((L, K, L), dtype=complex)
    root = np.sqrt(ls.omega)  # (L, K)
    for l in range(L):
        share = config.rho_d * root[l] / root[l].sum()
        a[l, :, l] = np.sqrt(share / ls.omega[l])
    return LsfpWeights(a=a, support_mask=mask)


DS = "ds"
DS_INT = "ds_int"


def select_partial_indices(method: str, ls: LinkStatistics, N_D: int) -> PartialSelection:
    """Pick the N_D users that benefit most from multi-BS support.

    Both heuristics rank users by how little of their (actual or idealized)
    combining energy sits at the own BS and select the smallest ratios; ties
    break lexicographically on (l, k).
    """
    method = method.strip().lower().replace("+", "_").replace("-", "_")
    if method not in (DS, DS_INT):
        raise ConfigError(f"selection method must be {DS!r} or {DS_INT!r}")
    L, K = ls.L, ls.K
    if not 0 <= N_D <= L * K:
        raise ConfigError("N_D must lie in [0, L*K]")

    if method == DS:
        num = np.abs(ls.b[np.arange(L), :, np.arange(L)]) ** 2  # |b_lk^l|^2, (L, K)
        den = np.einsum("lkr,lkr->lk", ls.b.conj(), ls.b).real
        metric = num / den
    else:
        G = ls.C.sum(axis=(0, 1))  # (K, L, L): sum over all users, per pilot
        metric = np.empty((L, K))
        for k in range(K):
            try:
                astar = np.linalg.solve(G[k], ls.b[:, k, :].T)  # (L, L): columns per l
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"summed interference matrix for pilot {k} "
                                   "is singular") from exc
            num = np.abs(astar[np.arange(L), np.arange(L)]) ** 2
            den = np.einsum("rl,rl->l", astar.conj(), astar).real
            metric[:, k] = num / den

    order = sorted(((metric[l, k], l, k) for l in range(L) for k in range(K)))
    chosen = frozenset((l, k) for _, l, k in order[:N_D])
    return PartialSelection(D=chosen, N_D=N_D)


def _objective_value(objective: str, sinr: np.ndarray, degenerate: np.ndarray) -> float:
    rates = np.log2(1.0 + sinr)
    if objective == SUM_SE:
        return float(rates.sum())
    active = rates[~degenerate]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(active)))


def wmmse_solve(ls: LinkStatistics, config, options: SolverOptions | None = None,
                mask: np.ndarray | None = None, rng=None,
                init: LsfpWeights | None = None) -> tuple[LsfpWeights, SolverDiagnostics]:
    """Block coordinate descent over (u, d, a) from the equal-power start.

    Alternates the closed-form receiver and MSE-weight updates with the
    consensus-ADMM weight solve until the relative change of sum(log2 d)
    falls below eps_wmmse.  Returns feasible weights (per-BS power within
    rho_d) and per-iteration diagnostics; if an iteration cap is hit, the
    last iterate is returned with converged=False.  `init` replaces the
    equal-power start, e.g. to warm-start the full problem from a converged
    single-layer solution.
    """
    options = options or SolverOptions()
    L, K = ls.L, ls.K
    if mask is None:
        mask = full_mask(L, K)
    sigma2, rho_d = config.sigma2, config.rho_d

    if init is None:
        weights = initial_weights(ls, config, mask)
    else:
        if np.any(init.a[~mask] != 0):
            raise ConfigError("init weights must vanish outside the support mask")
        weights = LsfpWeights(a=init.a.astype(complex), support_mask=mask)
    Omega = np.sqrt(ls.omega).T.copy()  # (K, L), whitening diagonal per pilot
    degenerate = np.einsum("lkr,lkr->lk", ls.b.conj(), ls.b).real == 0.0
    if np.any(degenerate) and options.objective == PROP_FAIR:
        warnings.warn("users with zero expected effective channel are excluded "
                      "from the proportional-fairness objective")

    a_tilde0 = weights.a * Omega[None, :, :]
    state = SolverState(
        u=np.zeros((L, K), dtype=complex),
        d=np.ones((L, K)),
        e=np.ones((L, K)),
        a_tilde=a_tilde0,
        a_bar=_project_per_bs(a_tilde0, rho_d),
        a_hat=np.zeros((L, K, L), dtype=complex),
        Omega=Omega,
        F=np.zeros((K, L, L), dtype=complex),
        f=np.zeros((L, K, L), dtype=complex),
    )
    diag = SolverDiagnostics(objective=options.objective)

    def current_sinr() -> np.ndarray:
        q = _quad_all(weights, ls)
        ds = np.abs(_signal_all(weights, ls)) ** 2
        return ds / (q.sum(axis=(2, 3)) - ds + sigma2)

    sinr = current_sinr()
    diag.objective_trace.append(_objective_value(options.objective, sinr, degenerate))
    best_obj, best_weights = diag.objective_trace[0], weights

    prev_sum_logd = None
    for outer in range(1, options.max_outer_iters + 1):
        # u- and d-updates; at the optimal receiver e = 1/(1 + SINR)
        q_total = _quad_all(weights, ls).sum(axis=(2, 3)) + sigma2
        ab = _signal_all(weights, ls)
        state.u = ab / q_total
        state.e = np.clip(1.0 / (1.0 + sinr), E_CLAMP, 1.0 - E_CLAMP)
        d = np.empty((L, K))
        for l in range(L):
            for k in range(K):
                d[l, k] = 1.0 if degenerate[l, k] else \
                    weight_update_d(options.objective, state.e[l, k])
        state.d = d
        state.u[degenerate] = 0.0

        build_quadratic(state, ls)

        if not options.admm_warm_start:
            if rng is None:
                rng = np.random.default_rng(0)
            raw = (rng.standard_normal((L, K, L))
                   + 1j * rng.standard_normal((L, K, L))) * np.sqrt(rho_d / (L * K))
            state.a_bar = _project_per_bs(np.where(mask, raw, 0.0), rho_d)
            state.a_hat = np.zeros_like(state.a_hat)

        try:
            res = admm_qcqp_solve(state.F, state.f, rho_d, options, mask,
                                  a_bar0=state.a_bar, a_hat0=state.a_hat)
        except ConvergenceError as exc:
            res = exc.iterate
            diag.inner_failures += 1
        state.a_tilde, state.a_bar, state.a_hat = res.a_tilde, res.a_bar, res.a_hat
        diag.inner_iterations.append(res.iterations)
        diag.final_admm_residual = res.residual_ratio

        # back to natural coordinates; re-project if the consensus gap left a
        # per-BS violation beyond the tolerated slack
        per_bs = np.einsum("rkl->l", np.abs(state.a_tilde) ** 2)
        if np.any(per_bs > rho_d * (1.0 + POWER_SLACK)):
            state.a_tilde = _project_per_bs(state.a_tilde, rho_d)
        a = state.a_tilde / Omega[None, :, :]
        a[~mask] = 0.0
        weights = LsfpWeights(a=a, support_mask=mask)

        sinr = current_sinr()
        diag.objective_trace.append(_objective_value(options.objective, sinr, degenerate))
        diag.outer_iterations = outer
        if diag.objective_trace[-1] >= best_obj:
            best_obj, best_weights = diag.objective_trace[-1], weights

        sum_logd = float(np.sum(np.log2(state.d)))
        if prev_sum_logd is not None:
            if (sum_logd - prev_sum_logd) ** 2 <= options.eps_wmmse * prev_sum_logd ** 2:
                diag.converged = True
                break
        prev_sum_logd = sum_logd

    return (weights if diag.converged else best_weights), diag
