"""Command-line entry points: `lsfp run` and `lsfp validate`.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 solver non-convergence under --strict.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import ConfigError
from .estimation import LMMSE, LS, pilot_statistics
from .harness import emit_outputs, parse_scheme, run_experiment
from .linkstats import closed_form_linkstats, mc_linkstats, oracle_comparison
from .scenario import ScenarioConfig, generate_network

B_OMEGA_TOL = 0.02
C_TOL = 0.03
# sanity bound on the Monte-Carlo magnitude of structurally-zero C entries;
# their defining check is exactness of the closed form
C_ZERO_MC_TOL = 1e-2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsfp",
        description="Two-layer downlink precoding simulator and optimizer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scheme-comparison experiment")
    run_p.add_argument("--config", required=True, help="scenario JSON file")
    run_p.add_argument("--schemes", required=True,
                       help="comma list, e.g. LSFP-SumSE,SLP-SumSE,LPA "
                            "(optional LMMSE:/LS: prefix, @N for partial)")
    run_p.add_argument("--setups", type=int, default=100)
    run_p.add_argument("--seed", type=int, default=None,
                       help="root seed (defaults to the config seed)")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--threads", type=int, default=None,
                       help="worker threads (LSFP_THREADS env overrides; "
                            "default: available parallelism)")
    run_p.add_argument("--mc-validate", type=int, default=0, metavar="N",
                       help="also compare closed-form vs Monte-Carlo link "
                            "statistics on the first setup with N samples")
    run_p.add_argument("--svg", action="store_true", help="emit a CDF rendering")
    run_p.add_argument("--strict", action="store_true",
                       help="exit 3 if any solve failed to converge")
    run_p.add_argument("--dump-debug", action="store_true",
                       help="dump link statistics and weights per setup as JSON")

    val_p = sub.add_parser("validate",
                           help="closed-form vs Monte-Carlo oracle check")
    val_p.add_argument("--config", required=True)
    val_p.add_argument("--samples", type=int, required=True)
    val_p.add_argument("--seed", type=int, default=None)
    return parser


def _resolve_threads(arg_threads) -> int:
    env = os.environ.get("LSFP_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"LSFP_THREADS must be an integer, got {env!r}") from exc
    if arg_threads is not None:
        return max(1, arg_threads)
    return os.cpu_count() or 1


def _cmd_run(args) -> int:
    config = ScenarioConfig.from_json(args.config)
    schemes = [parse_scheme(s, config.L, config.K)
               for s in args.schemes.split(",") if s.strip()]
    if not schemes:
        raise ConfigError("--schemes is empty")
    threads = _resolve_threads(args.threads)

    extra = None
    if args.mc_validate > 0:
        extra = {"mc_validation": _mc_validation(config, args.seed, args.mc_validate)}

    result = run_experiment(config, schemes, args.setups, seed=args.seed,
                            threads=threads, collect_debug=args.dump_debug)
    written = emit_outputs(result, args.out, svg=args.svg, extra_summary=extra)
    for p in written:
        print(p)

    if args.strict and not bool(result.converged.all()):
        bad = int((~result.converged).sum())
        print(f"{bad} solve(s) did not converge", file=sys.stderr)
        return 3
    return 0


def _mc_validation(config: ScenarioConfig, seed, n_samples: int) -> dict:
    seed = config.seed if seed is None else int(seed)
    root = np.random.SeedSequence(seed)
    stats = generate_network(config, np.random.default_rng(root.spawn(1)[0]))
    ps = pilot_statistics(stats, config)
    mc_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4D43]))
    report = {"n_samples": n_samples}
    for kind in (LMMSE, LS):
        cf = closed_form_linkstats(kind, stats, ps, config)
        mc = mc_linkstats(kind, stats, ps, config, n_samples, mc_rng)
        report[kind] = oracle_comparison(cf, mc)
    return report


def _cmd_validate(args) -> int:
    config = ScenarioConfig.from_json(args.config)
    seed = config.seed if args.seed is None else args.seed
    stats = generate_network(config, np.random.default_rng(seed))
    ps = pilot_statistics(stats, config)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4D43]))

    rows = []
    all_pass = True
    for kind in (LMMSE, LS):
        cf = closed_form_linkstats(kind, stats, ps, config)
        mc = mc_linkstats(kind, stats, ps, config, args.samples, rng)
        cmp = oracle_comparison(cf, mc)
        checks = [
            (f"{kind}.b", cmp["b_max_rel"], B_OMEGA_TOL),
            (f"{kind}.omega", cmp["omega_max_rel"], B_OMEGA_TOL),
            (f"{kind}.C", cmp["C_max_rel"], C_TOL),
            (f"{kind}.C_zero_mc", cmp["C_near_zero_mc_max_over_cmax"], C_ZERO_MC_TOL),
        ]
        for name, value, tol in checks:
            ok = value <= tol
            all_pass &= ok
            rows.append((name, value, tol, ok))
        if not cmp["C_near_zero_exact"]:
            rows.append((f"{kind}.C_zero_exact", 1.0, 0.0, False))
            all_pass = False

    print(f"{'quantity':<16}{'max error':>14}{'tolerance':>12}  result")
    for name, value, tol, ok in rows:
        print(f"{name:<16}{value:>14.3e}{tol:>12.0e}  {'PASS' if ok else 'FAIL'}")
    return 0 if all_pass else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_validate(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
