"""Command-line surface: fit calibrations, emit plans, simulate iterations,
compare schemes, and run the multi-worker equivalence check.

Exit codes: 0 on success, 1 on validation failure, 2 on I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import emulator, perfmodel, planner, profiles, simulator

_BUNDLED_PARAMS_NAME = "synthetic-64gpu"


class _ValidationFailure(Exception):
    pass


def _resolve_profile(ref: str) -> profiles.ModelProfile:
    if Path(ref).exists():
        return profiles.load_profile(ref)
    name = ref.removesuffix(".json")
    if name in profiles.BUNDLED_MODELS:
        return profiles.bundled_profile(name)
    raise _ValidationFailure(
        f"profile {ref!r} is neither a file nor a bundled name ({', '.join(profiles.BUNDLED_MODELS)})"
    )


def _resolve_params(ref: str) -> perfmodel.PerfParams:
    if Path(ref).exists():
        return perfmodel.read_params(ref)
    if ref.removesuffix(".params") == _BUNDLED_PARAMS_NAME:
        return profiles.bundled_params()
    raise _ValidationFailure(f"params {ref!r} is neither a file nor the bundled calibration name")


def _seed_from(args) -> int:
    env = os.environ.get("KFACSCHED_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise _ValidationFailure(f"KFACSCHED_SEED must be an integer, got {env!r}") from None
    return args.seed


def _cmd_fit(args) -> int:
    ar = perfmodel.fit_linear(perfmodel.read_bench_csv(args.allreduce))
    # Broadcast samples are keyed by matrix dimension; the model is affine in
    # the packed element count, so refit against d(d+1)/2.
    bc_samples = perfmodel.read_bench_csv(args.bcast)
    packed = [perfmodel.BenchSample(size=s.size * (s.size + 1) // 2, time=s.time) for s in bc_samples]
    bc = perfmodel.fit_linear(packed)
    inv = perfmodel.fit_exponential(perfmodel.read_bench_csv(args.inverse))
    if ar.beta <= 0 or bc.beta <= 0:
        raise _ValidationFailure("fitted per-element cost is nonpositive; benchmark data looks degenerate")
    params = perfmodel.PerfParams(
        allreduce=perfmodel.AllReduceParams(max(ar.alpha, 0.0), ar.beta),
        bcast=perfmodel.BcastParams(max(bc.alpha, 0.0), bc.beta),
        inverse=inv,
        fitted_world_size=args.world_size,
    )
    perfmodel.write_params(args.output, params)
    print(f"wrote {args.output} (all-reduce R^2 {ar.r_squared:.6f}, broadcast R^2 {bc.r_squared:.6f})")
    return 0


def _cmd_plan_fusion(args) -> int:
    profile = _resolve_profile(args.profile)
    perf = _resolve_params(args.params)
    policy = planner.FusionPolicy(args.fusion)
    fwd = simulator.factor_tasks(profile, planner.FactorKind.A)
    bwd = simulator.factor_tasks(profile, planner.FactorKind.G)
    fwd_plan = planner.plan_fusion(
        fwd, [l.t_ff for l in profile.layers], perf.allreduce, policy, threshold_bytes=args.threshold_bytes
    )
    bwd_plan = planner.plan_fusion(
        bwd, [l.t_bp for l in reversed(profile.layers)], perf.allreduce, policy, threshold_bytes=args.threshold_bytes
    )
    payload = {
        "model": profile.model,
        "policy": policy.value,
        "forward": json.loads(fwd_plan.to_json())["groups"],
        "backward": json.loads(bwd_plan.to_json())["groups"],
    }
    Path(args.output).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {args.output} ({len(fwd_plan.groups)} forward groups, {len(bwd_plan.groups)} backward groups)")
    return 0


def _cmd_plan_placement(args) -> int:
    profile = _resolve_profile(args.profile)
    perf = _resolve_params(args.params)
    tasks = simulator.inverse_tasks(profile)
    if args.placement == "none":
        plan = planner.local_place(tasks, args.world_size)
    elif args.placement == "seq":
        plan = planner.seq_place(tasks, args.world_size)
    else:
        plan = planner.lbp_place(tasks, args.world_size, perf.inverse, perf.bcast, balance=args.balance)
    Path(args.output).write_text(plan.to_json() + "\n")
    print(f"wrote {args.output} ({len(plan.nct)} of {len(plan.tasks)} tensors non-communicated)")
    return 0


def _scheme_config(args, perf) -> simulator.SchemeConfig:
    world = args.world_size if args.world_size is not None else perf.fitted_world_size
    cfg = simulator.SchemeConfig.for_scheme(simulator.Scheme(args.scheme), world)
    overrides = {}
    if getattr(args, "fusion", None):
        overrides["fusion_policy"] = planner.FusionPolicy(args.fusion)
    if getattr(args, "placement", None):
        overrides["placement_mode"] = args.placement
    if getattr(args, "interval", None):
        overrides["kfac_update_interval"] = args.interval
    if overrides:
        cfg = simulator.SchemeConfig(
            scheme=cfg.scheme,
            world_size=cfg.world_size,
            fusion_policy=overrides.get("fusion_policy", cfg.fusion_policy),
            placement_mode=overrides.get("placement_mode", cfg.placement_mode),
            overlap_factor_comm=cfg.overlap_factor_comm,
            kfac_update_interval=overrides.get("kfac_update_interval", cfg.kfac_update_interval),
        )
    return cfg


def _cmd_simulate(args) -> int:
    profile = _resolve_profile(args.profile)
    perf = _resolve_params(args.params)
    cfg = _scheme_config(args, perf)
    timeline = simulator.simulate_iteration(profile, cfg, perf, iteration=args.iteration)
    simulator.validate_timeline(timeline)
    Path(args.timeline).write_text(simulator.timeline_to_csv(timeline))
    Path(args.breakdown).write_text(simulator.breakdown_to_csv(timeline.breakdown))
    print(f"simulated {cfg.display_label} on {profile.model}: {timeline.total_time:.6f} s")
    return 0


def _cmd_compare(args) -> int:
    profile = _resolve_profile(args.profile)
    perf = _resolve_params(args.params)
    names = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if len(names) < 2:
        raise _ValidationFailure("pass at least two comma-separated schemes")
    try:
        schemes = [simulator.Scheme(n) for n in names]
    except ValueError as exc:
        raise _ValidationFailure(str(exc)) from None
    rows = simulator.compare_schemes(profile, perf, schemes, world_size=args.world_size)
    Path(args.output).write_text(simulator.comparison_to_csv(rows))
    for row in rows:
        print(f"{row.label}: {row.total_time:.6f} s")
    return 0


def _cmd_emulate(args) -> int:
    seed = _seed_from(args)
    if args.fixture and Path(args.fixture).exists():
        fixture = emulator.load_fixture(args.fixture)
    else:
        fixture = emulator.make_fixture(seed=seed, workers=args.workers)
        if args.fixture:
            emulator.save_fixture(args.fixture, fixture)
    deviation = emulator.run_fixture(fixture)
    print(f"max weight deviation from centralized step: {deviation:.3e}")
    if deviation >= args.tolerance:
        print(f"FAIL: deviation exceeds tolerance {args.tolerance:.3e}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kfacsched",
        description="Scheduling, placement, and iteration-time simulation for distributed K-FAC training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the three cost models from benchmark CSVs")
    p.add_argument("--allreduce", required=True, help="CSV of all-reduce samples (size=elements)")
    p.add_argument("--bcast", required=True, help="CSV of broadcast samples (size=matrix dimension)")
    p.add_argument("--inverse", required=True, help="CSV of inversion samples (size=matrix dimension)")
    p.add_argument("--world-size", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("plan-fusion", help="emit a factor-fusion plan as JSON")
    p.add_argument("--profile", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--fusion", choices=[pol.value for pol in planner.FusionPolicy], required=True)
    p.add_argument("--threshold-bytes", type=int, default=planner.DEFAULT_FUSION_THRESHOLD_BYTES)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_plan_fusion)

    p = sub.add_parser("plan-placement", help="emit an inverse-placement plan as JSON")
    p.add_argument("--profile", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--placement", choices=["none", "seq", "lbp"], required=True)
    p.add_argument("--world-size", type=int, required=True)
    p.add_argument("--balance", choices=["dim_sq", "dim"], default="dim_sq")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_plan_placement)

    p = sub.add_parser("simulate", help="simulate one iteration; write timeline and breakdown CSVs")
    p.add_argument("--profile", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--scheme", choices=[s.value for s in simulator.Scheme], required=True)
    p.add_argument("--world-size", type=int, default=None)
    p.add_argument("--fusion", choices=[pol.value for pol in planner.FusionPolicy], default=None)
    p.add_argument("--placement", choices=["none", "seq", "lbp"], default=None)
    p.add_argument("--interval", type=int, default=None, help="curvature update interval")
    p.add_argument("--iteration", type=int, default=0, help="iteration index (off-interval ones skip curvature work)")
    p.add_argument("--timeline", required=True, help="output CSV for the event timeline")
    p.add_argument("--breakdown", required=True, help="output CSV for the category breakdown")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("compare", help="simulate several schemes and tabulate speedups")
    p.add_argument("--profile", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--schemes", required=True, help="comma-separated: dkfac,mpdkfac,spdkfac")
    p.add_argument("--world-size", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("emulate", help="check the P-worker step against the centralized oracle")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--seed", type=int, default=0, help="overridden by KFACSCHED_SEED when set")
    p.add_argument("--fixture", default=None, help="fixture JSON to load, or to create when missing")
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.set_defaults(func=_cmd_emulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
