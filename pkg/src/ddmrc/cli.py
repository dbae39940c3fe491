"""Command-line interface.

Exit codes: 0 success, 1 infeasible synthesis / uncertified verdict,
2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench
from . import certificates as certs
from . import snapshots as snaps
from . import synthesis as synth
from .lti import (
    ControllerGains,
    NoiseSpec,
    ReferenceModel,
    StateSpaceModel,
    simulate_closed_loop,
    simulate_open_loop,
    write_trajectory_csv,
    read_trajectory_csv,
)


class CliError(Exception):
    """Input problem attributable to the invocation (exit code 2)."""


def _load_model(path) -> StateSpaceModel:
    data = _load_json(path)
    try:
        return StateSpaceModel(np.array(data["A"]), np.array(data["B"]))
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad model file {path}: {exc}") from exc


def _load_ref(path) -> ReferenceModel:
    data = _load_json(path)
    try:
        return ReferenceModel(np.array(data["A_M"]), np.array(data["B_M"]))
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad reference-model file {path}: {exc}") from exc


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc}") from exc


def _cmd_simulate(args) -> int:
    model = _load_model(args.model)
    rng = np.random.default_rng(args.seed)
    noise = NoiseSpec(sigma=args.sigma, seed=args.seed)
    x0 = np.zeros(model.n) if args.x0 is None else np.array(json.loads(args.x0), float)
    if args.gains:
        gdata = _load_json(args.gains)
        gains = ControllerGains(np.array(gdata["K_x"]), np.array(gdata["K_r"]))
        refs = rng.uniform(args.ref_lo, args.ref_hi, size=(args.steps, model.n))
        record = simulate_closed_loop(model, gains, refs, x0, noise)
    else:
        inputs = rng.uniform(args.input_lo, args.input_hi, size=(args.steps, model.m))
        record = simulate_open_loop(model, inputs, x0, noise)
    write_trajectory_csv(record, args.out, oracle=args.oracle)
    print(f"wrote {args.out} ({record.T} steps, sigma={args.sigma})")
    return 0


def _load_snapshots(args) -> snaps.SnapshotMatrices:
    paths = [Path(p) for p in args.data]
    if len(paths) == 1 and paths[0].is_dir():
        entries = sorted(paths[0].glob("*.csv"))
        if not entries:
            raise CliError(f"no trajectory CSVs found in {paths[0]}")
        paths = entries
    records = [read_trajectory_csv(p) for p in paths]
    try:
        blocks = [snaps.build_snapshots(rec, detrend=args.detrend) for rec in records]
        return snaps.average_snapshots(blocks)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _cmd_synthesize(args) -> int:
    ref = _load_ref(args.ref)
    snap = _load_snapshots(args)
    report = snaps.check_rank_condition(snap)
    if not report.satisfied and not args.force:
        print(
            f"error: rank condition violated: rank([U0;X0]) = {report.stacked_rank}, "
            f"required {report.required}; re-run with --force to override",
            file=sys.stderr,
        )
        return 1
    opts = synth.SynthesisOptions(
        mode=args.mode,
        lam=getattr(args, "lambda"),
        lam1=args.lambda1,
        dc_gain_weight=args.dc_gain_weight,
        norm=args.norm,
        lmi_margin=args.lmi_margin,
    )
    if args.mode == "exact":
        try:
            outcome = synth.solve_exact(snap, ref, require_rank=not args.force)
        except synth.MatchingInfeasibleError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    elif args.mode == "relaxed_unstab":
        outcome = synth.solve_relaxed(snap, ref, opts)
    else:
        outcome = synth.solve_sdp(snap, ref, opts)
    with open(args.out, "w") as fh:
        fh.write(outcome.to_json())
    print(f"status: {outcome.status}; wrote {args.out}")
    if outcome.status != "optimal":
        print(
            f"error: synthesis did not return a controller (status {outcome.status})",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_verify(args) -> int:
    outcome = synth.SynthesisOutcome.from_json(Path(args.outcome).read_text())
    if outcome.Qx is None or outcome.P is None:
        raise CliError("outcome file carries no (Qx, P) blocks; run an SDP mode first")
    snap_data = _load_json(args.snapshots)
    snap = snaps.snapshots_from_json(json.dumps(snap_data))
    if not snap.has_oracle:
        raise CliError("snapshot file carries no oracle noise blocks V0/V1")
    report = certs.check_noise_energy(snap)
    try:
        partial = certs.compute_alpha_beta(snap.X1, outcome.Qx, outcome.P)
    except certs.CertificateUnavailableError as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        return 1
    cert = certs.theorem4_certificate(report, partial)
    with open(args.out, "w") as fh:
        fh.write(cert.to_json())
    print(
        f"gamma1={report.gamma1:.4g} gamma2={report.gamma2:.4g} "
        f"alpha={cert.alpha:.4g} beta={cert.beta:.4g}"
    )
    if cert.certified:
        print(f"CERTIFIED: lhs={cert.lhs:.4g} < rhs={cert.rhs:.4g}")
        return 0
    print(f"NOT certified: {cert.reason}", file=sys.stderr)
    return 1


def _cmd_benchmark(args) -> int:
    config = bench.ScenarioConfig.from_json(Path(args.config).read_text())
    if args.runs is not None:
        config.runs = args.runs
    report = bench.run_monte_carlo(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench.write_report_csv(report, out_dir / f"{config.name}_report.csv")
    bench.write_report_summary_json(report, out_dir / f"{config.name}_summary.json")
    bench.write_trend_csv(report, out_dir / f"{config.name}_trend.csv")
    print(f"wrote report files for scenario {config.name!r} to {out_dir}")
    return 0


def _cmd_scenarios(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for config in bench.builtin_scenarios():
        path = out_dir / f"{config.name}.json"
        path.write_text(config.to_json())
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddmrc",
        description="data-driven model-reference controller synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment and write a trajectory CSV")
    p.add_argument("--model", required=True, help="plant JSON file with A, B")
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", help="initial state as a JSON list (default zeros)")
    p.add_argument("--input-lo", type=float, default=-2.0)
    p.add_argument("--input-hi", type=float, default=2.0)
    p.add_argument("--gains", help="gains JSON (K_x, K_r) for closed-loop collection")
    p.add_argument("--ref-lo", type=float, default=-5.0)
    p.add_argument("--ref-hi", type=float, default=10.0)
    p.add_argument("--oracle", action="store_true", help="export clean states and noise")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("synthesize", help="design gains from trajectory data")
    p.add_argument(
        "--data",
        nargs="+",
        required=True,
        help="trajectory CSV files (or one directory of them); several files "
        "are averaged as repeated experiments",
    )
    p.add_argument("--ref", required=True, help="reference model JSON with A_M, B_M")
    p.add_argument(
        "--mode",
        choices=["exact", "relaxed_unstab", "sdp", "averaged_sdp"],
        default="sdp",
    )
    p.add_argument("--lambda", dest="lambda", type=float, default=1.0)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--dc-gain-weight", type=float, default=0.0)
    p.add_argument("--norm", choices=["l1", "fro"], default="l1")
    p.add_argument("--lmi-margin", type=float, default=1e-10)
    p.add_argument("--detrend", action="store_true")
    p.add_argument("--force", action="store_true", help="proceed despite rank failure")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("verify", help="stability certificate for an SDP outcome")
    p.add_argument("--outcome", required=True, help="synthesis outcome JSON")
    p.add_argument(
        "--snapshots", required=True, help="snapshot JSON with oracle noise blocks"
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("benchmark", help="Monte Carlo sweep from a scenario config")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int, help="override the configured run count")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("scenarios", help="dump the two built-in scenario configs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_scenarios)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
