"""Experiment runner: setups -> statistics -> schemes -> per-user SE -> files.

A scheme is an (estimator, precoding, objective) combination, optionally with
partial multi-BS support.  All schemes within a run share each setup's
channel statistics, so differences in output reflect the precoding design
only.  Outputs are deterministic byte-for-byte given (config, seed, schemes).
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimation import LS, _norm_kind, pilot_statistics
from .linkstats import closed_form_linkstats
from .optimizer import (DS, DS_INT, PROP_FAIR, SUM_SE, SolverOptions, lpa_weights,
                        select_partial_indices, wmmse_solve)
from .scenario import ScenarioConfig, generate_network
from .se_eval import full_mask, partial_mask, sinr_all, slp_mask, spectral_efficiency

LSFP = "lsfp"
SLP = "slp"
LPA = "lpa"

_OBJ_NAMES = {"sumse": SUM_SE, "propfair": PROP_FAIR}
_OBJ_LABELS = {SUM_SE: "SumSE", PROP_FAIR: "PropFair"}


@dataclass(frozen=True)
class SchemeSpec:
    """One precoding/power-allocation scheme to evaluate."""

    estimator: str
    precoding: str
    objective: str | None = None
    partial: str | None = None
    n_d: int | None = None

    def __post_init__(self):
        if self.precoding == LPA and self.objective is not None:
            raise ConfigError("LPA takes no optimization objective")
        if self.precoding != LPA and self.objective not in (SUM_SE, PROP_FAIR):
            raise ConfigError("LSFP/SLP schemes need a SumSE or PropFair objective")
        if self.partial is not None and self.precoding != LSFP:
            raise ConfigError("partial support is only valid with LSFP")
        if (self.partial is None) != (self.n_d is None):
            raise ConfigError("partial method and N_D go together")

    @property
    def name(self) -> str:
        est = self.estimator.upper().replace("_", "-")
        if self.precoding == LPA:
            return f"{est}:LPA"
        obj = _OBJ_LABELS[self.objective]
        if self.precoding == SLP:
            return f"{est}:SLP-{obj}"
        if self.partial is None:
            return f"{est}:LSFP-{obj}"
        method = "P-DS" if self.partial == DS else "P-DS+Int"
        return f"{est}:{method}-LSFP-{obj}@{self.n_d}"


def parse_scheme(text: str, L: int, K: int) -> SchemeSpec:
    """Parse a scheme string such as ``LSFP-SumSE`` or ``LMMSE:P-DS-LSFP-SumSE@8``.

    The estimator prefix defaults to LS; partial schemes default to
    N_D = L*K/2 unless given an explicit ``@N`` suffix.
    """
    s = text.strip()
    estimator = LS
    if ":" in s:
        prefix, s = s.split(":", 1)
        estimator = _norm_kind(prefix)
    n_d = None
    m = re.fullmatch(r"(.*)@(\d+)", s)
    if m:
        s, n_d = m.group(1), int(m.group(2))
    body = s.lower()
    if body == "lpa":
        if n_d is not None:
            raise ConfigError(f"scheme {text!r}: LPA takes no @N suffix")
        return SchemeSpec(estimator=estimator, precoding=LPA)
    partial = None
    if body.startswith("p-ds+int-"):
        partial, body = DS_INT, body[len("p-ds+int-"):]
    elif body.startswith("p-ds-"):
        partial, body = DS, body[len("p-ds-"):]
    m = re.fullmatch(r"(lsfp|slp)-(sumse|propfair)", body)
    if not m:
        raise ConfigError(f"unrecognized scheme {text!r}")
    precoding = m.group(1)
    objective = _OBJ_NAMES[m.group(2)]
    if partial is not None:
        if precoding != LSFP:
            raise ConfigError(f"scheme {text!r}: partial support requires LSFP")
        if n_d is None:
            n_d = (L * K) // 2
    elif n_d is not None:
        raise ConfigError(f"scheme {text!r}: @N is only valid for partial schemes")
    return SchemeSpec(estimator=estimator, precoding=precoding, objective=objective,
                      partial=partial, n_d=n_d)


def fronthaul_symbols(scheme: SchemeSpec, config: ScenarioConfig) -> int:
    """Downlink symbols shared with the central controller per coherence block."""
    if scheme.precoding != LSFP:
        return 0
    n_full = scheme.n_d if scheme.partial is not None else config.L * config.K
    return (config.tau_c - config.tau_p) * n_full


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    schemes: list
    n_setups: int
    seed: int
    se: np.ndarray             # (n_setups, n_schemes, L, K)
    converged: np.ndarray      # (n_setups, n_schemes) bool
    solver_stats: list         # per scheme: dict of iteration totals
    debug: list | None = None  # per setup: jsonable dump when requested

    def sorted_se(self, scheme_index: int) -> np.ndarray:
        return np.sort(self.se[:, scheme_index].ravel())


def percentile(sorted_values, p: float) -> float:
    """Lower-interpolated empirical quantile of an ascending-sorted sample."""
    v = np.asarray(sorted_values, dtype=float)
    if v.size == 0:
        raise ValueError("percentile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    idx = min(max(math.ceil(p * v.size) - 1, 0), v.size - 1)
    return float(v[idx])


def _scheme_mask(scheme: SchemeSpec, ls):
    L, K = ls.L, ls.K
    if scheme.precoding == SLP:
        return slp_mask(L, K)
    if scheme.partial is not None:
        sel = select_partial_indices(scheme.partial, ls, scheme.n_d)
        return partial_mask(L, K, sel.D)
    return full_mask(L, K)


def _run_setup(config: ScenarioConfig, schemes, entropy) -> tuple:
    rng_net, rng_solver = (np.random.default_rng(s) for s in entropy.spawn(2))
    stats = generate_network(config, rng_net)
    ps = pilot_statistics(stats, config)
    ls_by_kind = {est: closed_form_linkstats(est, stats, ps, config)
                  for est in sorted({s.estimator for s in schemes})}

    se = np.zeros((len(schemes), config.L, config.K))
    conv = np.ones(len(schemes), dtype=bool)
    iters = []
    debug_schemes = {}
    for j, scheme in enumerate(schemes):
        ls = ls_by_kind[scheme.estimator]
        diag = None
        if scheme.precoding == LPA:
            weights = lpa_weights(ls, config)
            iters.append({"outer": 0, "inner": 0, "inner_failures": 0})
        else:
            mask = _scheme_mask(scheme, ls)
            options = SolverOptions(objective=scheme.objective)
            weights, diag = wmmse_solve(ls, config, options, mask, rng=rng_solver)
            conv[j] = diag.converged and diag.inner_failures == 0
            iters.append({"outer": diag.outer_iterations,
                          "inner": int(sum(diag.inner_iterations)),
                          "inner_failures": diag.inner_failures})
        se[j] = spectral_efficiency(sinr_all(weights, ls, config.sigma2),
                                    config.tau_c, config.tau_p)
        debug_schemes[scheme.name] = {
            "a_re": weights.a.real.tolist(),
            "a_im": weights.a.imag.tolist(),
            "support_mask": weights.support_mask.astype(int).tolist(),
            "solver": None if diag is None else diag.to_jsonable(),
        }
    debug = {"linkstats": {k: v.to_jsonable() for k, v in ls_by_kind.items()},
             "schemes": debug_schemes}
    return se, conv, iters, debug


def run_experiment(config: ScenarioConfig, schemes, n_setups: int,
                   seed: int | None = None, threads: int = 1,
                   collect_debug: bool = False) -> ExperimentResult:
    """Evaluate every scheme on n_setups independent network drops.

    Setups run in a thread pool but are reduced in setup order, so the result
    is a pure function of (config, schemes, n_setups, seed).
    """
    if n_setups < 1:
        raise ConfigError("n_setups must be >= 1")
    if not schemes:
        raise ConfigError("schemes must be non-empty")
    seed = config.seed if seed is None else int(seed)
    root = np.random.SeedSequence(seed)
    streams = root.spawn(n_setups)

    def job(i):
        return _run_setup(config, schemes, streams[i])

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, range(n_setups)))
    else:
        outcomes = [job(i) for i in range(n_setups)]

    se = np.stack([o[0] for o in outcomes])
    converged = np.stack([o[1] for o in outcomes])
    solver_stats = []
    for j, scheme in enumerate(schemes):
        totals = {"solves": n_setups,
                  "converged": int(converged[:, j].sum()),
                  "total_outer_iterations": int(sum(o[2][j]["outer"] for o in outcomes)),
                  "total_inner_iterations": int(sum(o[2][j]["inner"] for o in outcomes)),
                  "inner_failures": int(sum(o[2][j]["inner_failures"] for o in outcomes))}
        solver_stats.append(totals)
    debug = [o[3] for o in outcomes] if collect_debug else None
    return ExperimentResult(config=config, schemes=list(schemes), n_setups=n_setups,
                            seed=seed, se=se, converged=converged,
                            solver_stats=solver_stats, debug=debug)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _round_floats(obj):
    if isinstance(obj, float):
        return float(_fmt(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def summary_dict(result: ExperimentResult, extra: dict | None = None) -> dict:
    schemes = {}
    for j, scheme in enumerate(result.schemes):
        v = result.sorted_se(j)
        schemes[scheme.name] = {
            "estimator": scheme.estimator,
            "precoding": scheme.precoding,
            "objective": scheme.objective,
            "partial": scheme.partial,
            "n_d": scheme.n_d,
            "median_se_bps_hz": percentile(v, 0.5),
            "p10_se_bps_hz": percentile(v, 0.1),
            "p05_se_bps_hz": percentile(v, 0.05),
            "mean_se_bps_hz": float(v.mean()),
            "sum_se_bps_hz": float(result.se[:, j].sum()),
            "fronthaul_symbols_per_block": fronthaul_symbols(scheme, result.config),
            "solver": result.solver_stats[j],
        }
    out = {
        "seed": result.seed,
        "n_setups": result.n_setups,
        "config": result.config.to_dict(),
        "schemes": schemes,
    }
    if extra:
        out.update(extra)
    return out


def _cdf_svg(result: ExperimentResult) -> str:
    """Minimal standalone SVG rendering of the per-scheme SE CDFs."""
    width, height, pad = 640, 420, 50
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
               "#17becf", "#7f7f7f"]
    xmax = max(float(result.se.max()), 1e-9)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
             f'height="{height - 2 * pad}" fill="none" stroke="black"/>']

    def sx(x):
        return pad + x / xmax * (width - 2 * pad)

    def sy(y):
        return height - pad - y * (height - 2 * pad)

    for j, scheme in enumerate(result.schemes):
        v = result.sorted_se(j)
        cdf = np.arange(1, v.size + 1) / v.size
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(v, cdf))
        color = palette[j % len(palette)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{pad + 8}" y="{pad + 16 + 14 * j}" fill="{color}" '
                     f'font-size="11">{scheme.name}</text>')
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="12" '
                 f'text-anchor="middle">SE per user (bit/s/Hz)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_outputs(result: ExperimentResult, out_dir, svg: bool = False,
                 extra_summary: dict | None = None) -> list:
    """Write per-user CSV, per-scheme CDF CSV, and the summary JSON.

    Floats carry 12 significant digits so re-runs with the same seed diff
    clean.  Returns the list of written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []

    per_user = out / "per_user_se.csv"
    lines = ["setup,scheme,cell,user,se_bps_hz"]
    for s in range(result.n_setups):
        for j, scheme in enumerate(result.schemes):
            for l in range(result.config.L):
                for k in range(result.config.K):
                    lines.append(f"{s},{scheme.name},{l},{k},{_fmt(result.se[s, j, l, k])}")
    per_user.write_text("\n".join(lines) + "\n")
    written.append(per_user)

    cdf_path = out / "cdf.csv"
    lines = ["scheme,se_bps_hz,cdf"]
    for j, scheme in enumerate(result.schemes):
        v = result.sorted_se(j)
        for i, x in enumerate(v):
            lines.append(f"{scheme.name},{_fmt(x)},{_fmt((i + 1) / v.size)}")
    cdf_path.write_text("\n".join(lines) + "\n")
    written.append(cdf_path)

    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(_round_floats(summary_dict(result, extra_summary)), indent=2) + "\n")
    written.append(summary_path)

    if svg:
        svg_path = out / "cdf.svg"
        svg_path.write_text(_cdf_svg(result))
        written.append(svg_path)

    if result.debug is not None:
        dbg_dir = out / "debug"
        dbg_dir.mkdir(exist_ok=True)
        for i, dump in enumerate(result.debug):
            p = dbg_dir / f"setup_{i:04d}.json"
            p.write_text(json.dumps(_round_floats(dump)) + "\n")
            written.append(p)

    return written
