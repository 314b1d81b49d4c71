"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical error. Failures
print a machine-readable JSON payload to stderr. All stochastic commands
require --seed and rerunning with the same seed produces byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, io as iomod
from .cascade import (
    BlockSpec,
    VacancyMatrix,
    block_weights,
    cascade_solve,
    conditional_entrant_effect,
    group_outcome_decomposition,
    neumann_solve,
)
from .errors import CascadeIVError, DataError, FixtureMismatch, NumericalError
from .estimator import (
    cluster_bootstrap,
    estimate_all,
    first_stage_f,
    fit_first_stage,
    fit_reduced_form,
    partial_out,
)
from .fixtures import fixture_checks
from .mechanism import MechanismConfig, balance_check, simulate_run, slot_expansion_oracle

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_f = iomod.fmt_float


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = iomod.load_run_config(args.config)
    pop, capacities, _ = iomod.build_scenario(cfg, args.seed)
    mech = MechanismConfig(capacities=capacities, lottery_seed=args.seed)
    label = args.group_col if args.group_col else cfg.get("label")
    run = simulate_run(
        pop, mech, reps=args.reps, master_seed=args.seed, label=label, log_events=True
    )
    out = _out_dir(args)
    iomod.write_dataset_csv(out / "dataset.csv", run.dataset, "simulate", args.seed)
    iomod.write_covariates_csv(out / "covariates.csv", run.covariates, "simulate", args.seed)
    iomod.write_events_jsonl(out / "events.jsonl", run.events)
    iomod.write_population_csv(out / "population.csv", pop, "simulate", args.seed)
    print(
        f"wrote {run.dataset.n_obs} rows ({run.dataset.n_clusters} clusters) to "
        f"{out / 'dataset.csv'}"
    )
    return EXIT_OK


def cmd_estimate(args) -> int:
    data = iomod.load_dataset_csv(args.data)
    est = estimate_all(data)
    out = _out_dir(args)
    iomod.write_estimates_csv(out / "estimates.csv", est, "estimate", None)
    table = iomod.format_estimates_table(est, f_stats=first_stage_f(data))
    (out / "estimates.txt").write_text(table)
    print(table, end="")
    if args.blocks:
        spec = _parse_blocks(args.blocks, data.n_treatments)
        fs = fit_first_stage(partial_out(data))
        weighted = block_weights(fs, spec)
        with open(out / "blocks.csv", "w", newline="") as fh:
            fh.write(iomod.provenance_line("estimate", None) + "\n")
            fh.write("block,program,weight,implied_coefficient\n")
            for name, members in weighted.blocks.items():
                w = weighted.weights[name]
                implied = float(w @ est.beta[list(members)])
                for m, wm in zip(members, w):
                    fh.write(f"{name},{m + 1},{_f(wm)},{_f(implied)}\n")
    if args.group_col or data.group_label is not None:
        parts = group_outcome_decomposition(data)
        beta_full = est.beta
        with open(out / "groups.csv", "w", newline="") as fh:
            fh.write(iomod.provenance_line("estimate", None) + "\n")
            fh.write("group,treatment,beta_group_outcome,conditional_entrant\n")
            for lev, bg in parts.items():
                sub = data.take(np.flatnonzero(data.group_label == lev))
                subp = partial_out(sub)
                t_g = conditional_entrant_effect(
                    fit_reduced_form(subp), fit_first_stage(subp), beta_full
                )
                for j in range(data.n_treatments):
                    fh.write(f"{lev},{j + 1},{_f(bg[j])},{_f(t_g[j])}\n")
    return EXIT_OK


def cmd_cascade(args) -> int:
    if args.data:
        data = iomod.load_dataset_csv(args.data)
        d = partial_out(data)
        fs = fit_first_stage(d)
        rf = fit_reduced_form(d)
    elif args.pi and args.rf:
        from .estimator import FirstStage

        fs = FirstStage(iomod.load_matrix_csv(args.pi))
        rf = iomod.load_matrix_csv(args.rf).ravel()
    else:
        print("cascade needs either --data or both --pi and --rf", file=sys.stderr)
        return EXIT_USAGE
    vm = VacancyMatrix.from_first_stage(fs)
    wald = rf / fs.diag
    sol = neumann_solve(vm, wald, tol=args.tol, max_rounds=args.max_rounds)
    direct = cascade_solve(fs, rf)
    out = _out_dir(args)
    iomod.write_trace_csv(out / "cascade_trace.csv", sol.rounds, "cascade", None)
    gap = float(np.max(np.abs(sol.T - direct.T)))
    print(
        f"rounds={len(sol.rounds)} rho(|M|)={sol.rho_estimate:.6f} "
        f"max|neumann - direct|={gap:.3e}"
    )
    for j in range(fs.k):
        print(f"T_{j + 1} = {_f(sol.T[j])}  (delta {_f(sol.delta[j])})")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = iomod.load_run_config(args.config)
    pop, capacities, scenario = iomod.build_scenario(cfg, args.seed)
    mech = MechanismConfig(capacities=capacities, lottery_seed=args.seed)
    run = simulate_run(pop, mech, reps=args.reps, master_seed=args.seed)
    est = estimate_all(run.dataset)
    out = _out_dir(args)
    lines = []
    worst = 0.0
    with open(out / "verify.csv", "w", newline="") as fh:
        fh.write(iomod.provenance_line("verify", args.seed) + "\n")
        fh.write("program,oracle,oracle_se,beta,beta_se,z\n")
        for k in range(1, pop.n_programs + 1):
            orc = slot_expansion_oracle(
                pop, mech, k, reps=args.oracle_reps or args.reps, master_seed=args.seed
            )
            if orc.undersubscribed:
                lines.append(f"program {k}: undersubscribed, oracle 0 (skipped)")
                fh.write(
                    f"{k},0.0,0.0,{_f(est.beta[k - 1])},{_f(est.se_beta[k - 1])},\n"
                )
                continue
            comb = float(np.hypot(est.se_beta[k - 1], orc.mc_se))
            z = abs(orc.value - est.beta[k - 1]) / comb if comb > 0 else float("inf")
            worst = max(worst, z)
            fh.write(
                f"{k},{_f(orc.value)},{_f(orc.mc_se)},{_f(est.beta[k - 1])},"
                f"{_f(est.se_beta[k - 1])},{_f(z)}\n"
            )
            lines.append(
                f"program {k}: oracle {orc.value:+.5f} (se {orc.mc_se:.5f})  "
                f"2sls {est.beta[k - 1]:+.5f} (se {est.se_beta[k - 1]:.5f})  "
                f"|diff|/se = {z:.2f}"
            )
    if scenario is not None:
        lines.append(f"scenario predicted beta2 = {_f(scenario.predicted_beta2)}")
    lines.append(f"worst agreement: {worst:.2f} combined standard errors")
    print("\n".join(lines))
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    data = iomod.load_dataset_csv(args.data)
    res = cluster_bootstrap(data, args.statistic, reps=args.bootstrap_reps, seed=args.seed)
    out = _out_dir(args)
    if args.statistic in ("beta", "wald", "cascade_delta"):
        est = estimate_all(data)
        iomod.write_estimates_csv(
            out / "estimates.csv", est, "bootstrap", args.seed,
            bootstrap={args.statistic: res},
        )
    with open(out / "bootstrap.csv", "w", newline="") as fh:
        fh.write(iomod.provenance_line("bootstrap", args.seed) + "\n")
        fh.write("component,se,ci_lower,ci_upper\n")
        for name, se, lo, hi in zip(res.components, res.se, res.ci_lower, res.ci_upper):
            fh.write(f"{name},{_f(se)},{_f(lo)},{_f(hi)}\n")
    print(
        f"{args.statistic}: {res.reps - res.n_failed}/{res.reps} replications, "
        f"se = {np.array2string(res.se, precision=5)}"
    )
    return EXIT_OK


def cmd_balance(args) -> int:
    data = iomod.load_dataset_csv(args.data)
    cov, names = iomod.load_covariates_csv(args.covariates)
    res = balance_check(data, cov, names)
    out = _out_dir(args)
    with open(out / "balance.csv", "w", newline="") as fh:
        fh.write(iomod.provenance_line("balance", None) + "\n")
        fh.write("covariate,coef,se,t\n")
        for name, c, s, t in zip(res.names, res.coef, res.se, res.tstat):
            fh.write(f"{name},{_f(c)},{_f(s)},{_f(t)}\n")
        fh.write(f"joint,{_f(res.joint_f)},,{_f(res.p_value)}\n")
    for name, c, s, t in zip(res.names, res.coef, res.se, res.tstat):
        print(f"{name}: coef {c:+.6f} (se {s:.6f}, t {t:+.2f})")
    print(
        f"joint F({res.df}, {res.n_clusters - 1}) = {res.joint_f:.3f}, "
        f"p = {res.p_value:.4f}"
    )
    return EXIT_OK


def cmd_fixtures(_args) -> int:
    report = fixture_checks()
    print("\n".join(report.lines()))
    return EXIT_OK


def _parse_blocks(spec: str, k: int) -> BlockSpec:
    path = Path(spec)
    raw = json.loads(path.read_text()) if path.exists() else json.loads(spec)
    if not isinstance(raw, dict):
        raise DataError("--blocks must be a JSON object {name: [program ids]}")
    blocks = {name: tuple(int(m) - 1 for m in members) for name, members in raw.items()}
    return BlockSpec(blocks=blocks, k=k)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadeiv",
        description="Multi-treatment IV and slot-expansion effects for "
        "capacity-constrained allocation systems",
    )
    parser.add_argument("--version", action="version", version=f"cascadeiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a lottery dataset from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--group-col", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit estimates on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blocks", default=None, help="JSON (file or inline) block spec")
    p.add_argument("--group-col", default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("cascade", help="round-by-round solve with a trace CSV")
    p.add_argument("--data", default=None)
    p.add_argument("--pi", default=None, help="first-stage matrix CSV")
    p.add_argument("--rf", default=None, help="reduced-form vector CSV")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-rounds", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("verify", help="oracle vs 2SLS agreement, side by side")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--oracle-reps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bootstrap", help="cluster bootstrap SE/CI columns")
    p.add_argument("--data", required=True)
    p.add_argument("--statistic", default="beta",
                   choices=["beta", "wald", "cascade_delta", "conditional_entrant"])
    p.add_argument("--bootstrap-reps", type=int, default=1000)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("balance", help="predetermined-covariate balance checks")
    p.add_argument("--data", required=True)
    p.add_argument("--covariates", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("fixtures", help="verify the embedded reference tables")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, FixtureMismatch) as exc:
        _emit_error(exc)
        return EXIT_NUMERICAL
    except CascadeIVError as exc:
        _emit_error(exc)
        return EXIT_DATA
    except OSError as exc:
        _emit_error(exc)
        return EXIT_DATA


def _emit_error(exc: Exception):
    payload = {
        "error": {
            "code": type(exc).__name__,
            "module": type(exc).__module__,
            "message": str(exc),
        }
    }
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
