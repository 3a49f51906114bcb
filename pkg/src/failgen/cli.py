"""Command-line entry point.

Machine-readable results go to stdout as JSON; progress and diagnostics go to
stderr.  Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cem import cem_train, save_proposal
from .config import RunConfig, config_hash, load_config
from .diffusion import DiffusionModel
from .geometry import Branch
from .mc import McRunSpec, load_failure_dataset, mc_search, replay
from .metrics import embed, fidelity_report
from .plotting import save_plot
from .prior import sample_initial_state
from .records import read_jsonl, validate_header, write_jsonl
from .rng import draw_seed, stream
from .simulator import export_trajectory, run_simulation
from .trainer import train_scenario


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True), flush=True)


def cmd_mc(args) -> int:
    cfg = load_config(args.config)
    spec = McRunSpec(scenario=Branch.parse(args.scenario),
                     episodes=args.episodes, master_seed=args.seed,
                     out_path=args.out, checkpoint_interval=args.checkpoint_interval,
                     workers=args.workers)

    def progress(done, total, fails):
        _log(f"mc: {done}/{total} episodes, {fails} failures")

    summary, _ = mc_search(spec, cfg, resume=args.resume, progress=progress)
    _emit(summary.as_dict())
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    scenario = Branch.parse(args.scenario)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = scenario.name.lower()

    def log(report):
        _log(f"train[{name}] stage {report['stage']}: "
             f"rho_tilde={report['rho_tilde']:.5f} "
             f"fail_rate={report['batch_failure_rate']:.4f} "
             f"elites={report['elite_count']}")

    if args.kind == "diffusion":
        model, reports, converged = train_scenario(
            scenario, cfg, args.seed, out_dir=out_dir, resume=args.resume,
            log=log)
        final_ckpt = out_dir / f"{name}-stage{reports[-1]['stage']}.ckpt"
        if not converged:
            _log(f"train[{name}]: stopped at max_stages without convergence; "
                 "latest checkpoint is still usable")
        _emit({"kind": "diffusion", "scenario": name, "stages": len(reports),
               "converged": converged, "rho_tilde": reports[-1]["rho_tilde"],
               "checkpoint": str(final_ckpt),
               "report": str(out_dir / f"{name}-report.jsonl")})
    else:
        proposal, reports, converged = cem_train(scenario, cfg, args.seed,
                                                 log=log)
        out_path = out_dir / f"{name}-cem.json"
        save_proposal(proposal, out_path, cfg, scenario,
                      extra={"stages": len(reports), "converged": converged,
                             "master_seed": args.seed})
        write_jsonl(out_dir / f"{name}-cem-report.jsonl",
                    {"format": "failgen/training-report", "version": 1,
                     "config_hash": config_hash(cfg), "scenario": name,
                     "master_seed": args.seed}, reports)
        if not converged:
            _log(f"train[{name}]: CEM stopped at max_stages without convergence")
        _emit({"kind": "cem", "scenario": name, "stages": len(reports),
               "converged": converged, "rho_tilde": reports[-1]["rho_tilde"],
               "proposal": str(out_path)})
    return 0


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    model = DiffusionModel.load(args.ckpt, expected_config_hash=chash)
    scenario = model.scenario
    n = args.count

    st_rng = stream(args.seed, int(scenario), 9001)
    sp_rng = stream(args.seed, int(scenario), 9002)
    bh_rng = stream(args.seed, int(scenario), 9003)
    s0s = np.stack([sample_initial_state(scenario, cfg.world, st_rng)
                    for _ in range(n)])
    epss = model.sample(args.threshold, s0s, sp_rng)

    rows = []
    failures = 0
    for j in range(n):
        seed = draw_seed(bh_rng)
        res = run_simulation(s0s[j], epss[j], scenario, seed, cfg.world)
        failures += res.collided
        rows.append({"scenario": scenario.name.lower(), "sample_index": j,
                     "s0": [float(v) for v in s0s[j]],
                     "epsilon": [float(v) for v in epss[j].reshape(-1)],
                     "behavior_seed": seed, "rho": res.rho,
                     "rho_threshold": float(args.threshold)})
        if (j + 1) % 100 == 0:
            _log(f"sample: {j + 1}/{n} simulated, {failures} failures")
    write_jsonl(args.out, {"format": "failgen/samples", "config_hash": chash,
                           "scenario": scenario.name.lower(),
                           "master_seed": args.seed,
                           "rho_threshold": float(args.threshold)}, rows)
    _emit({"count": n, "failures": failures, "failure_rate": failures / n,
           "out": str(args.out)})
    return 0


def _failure_features(path, cfg, chash):
    """Embed the failure subset of a samples / failure-dataset file."""
    header, rows = read_jsonl(path)
    validate_header(header, path, config_hash=chash)
    if header.get("format") not in ("failgen/samples", "failgen/failure-dataset"):
        raise ValueError(f"{path}: unsupported file format {header.get('format')}")
    feats = []
    rhos = []
    for rec in rows:
        rhos.append(float(rec["rho"]))
        if rec["rho"] == 0.0:
            feats.append(embed(replay(rec, cfg)))
    return np.array(feats), np.array(rhos)


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    chash = config_hash(cfg)
    real_feats, _ = _failure_features(args.real, cfg, chash)
    gen_feats, gen_rhos = _failure_features(args.generated, cfg, chash)
    if len(real_feats) <= args.k:
        raise ValueError(f"need more than k={args.k} real failure samples, "
                         f"got {len(real_feats)}")
    if len(gen_feats) == 0:
        raise ValueError("generated file contains no failures to compare")
    report = fidelity_report(real_feats, gen_feats, gen_rhos, args.k)
    _log(report.as_table())
    _emit(report.as_dict())
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report.as_dict(), f, sort_keys=True)
    return 0


def cmd_replay(args) -> int:
    cfg = load_config(args.config)
    header, rows = read_jsonl(args.dataset)
    validate_header(header, args.dataset, config_hash=config_hash(cfg))
    if not (0 <= args.index < len(rows)):
        raise ValueError(f"record index {args.index} out of range "
                         f"(file has {len(rows)} records)")
    res = replay(rows[args.index], cfg)
    if args.out:
        export_trajectory(res, args.out)
    _emit({"index": args.index, "rho": res.rho, "collided": res.collided,
           "scenario": res.scenario.name.lower()})
    return 0


def cmd_plot(args) -> int:
    cfg = load_config(args.config)
    header, rows = read_jsonl(args.samples)
    validate_header(header, args.samples, config_hash=config_hash(cfg))
    trajectories = []
    for rec in rows:
        if rec["rho"] == 0.0 or not args.failures_only:
            trajectories.append(replay(rec, cfg).relative_positions())
        if len(trajectories) >= args.max_trajectories:
            break
    if not trajectories:
        raise ValueError(f"{args.samples}: no trajectories to plot")
    save_plot(trajectories, args.out, lane_width=cfg.world.lane_width,
              max_trajectories=args.max_trajectories)
    _emit({"out": str(args.out), "trajectories": len(trajectories)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="failgen",
                                description="Collision-causing sensor-noise "
                                            "toolkit for a four-way intersection")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", default=None, help="YAML config file")
        sp.add_argument("--seed", type=int, default=0, help="master seed")

    mc = sub.add_parser("mc", help="Monte Carlo failure search")
    add_common(mc)
    mc.add_argument("--scenario", required=True,
                    choices=["south", "north", "west", "east"])
    mc.add_argument("--episodes", type=int, required=True)
    mc.add_argument("--out", default=None, help="failure dataset JSONL")
    mc.add_argument("--workers", type=int, default=1)
    mc.add_argument("--checkpoint-interval", type=int, default=100_000)
    mc.add_argument("--resume", action="store_true")
    mc.set_defaults(func=cmd_mc)

    tr = sub.add_parser("train", help="train the failure sampler")
    tr_sub = tr.add_subparsers(dest="kind", required=True)
    for kind in ("diffusion", "cem"):
        t = tr_sub.add_parser(kind)
        add_common(t)
        t.add_argument("--scenario", required=True,
                       choices=["south", "north", "west", "east"])
        t.add_argument("--out-dir", required=True)
        t.add_argument("--resume", action="store_true")
        t.set_defaults(func=cmd_train, kind=kind)

    sa = sub.add_parser("sample", help="draw noise sequences from a checkpoint")
    add_common(sa)
    sa.add_argument("--ckpt", required=True)
    sa.add_argument("--count", type=int, required=True)
    sa.add_argument("--threshold", type=float, default=0.0,
                    help="robustness threshold conditioning (0 = collisions)")
    sa.add_argument("--out", required=True)
    sa.set_defaults(func=cmd_sample)

    ev = sub.add_parser("evaluate", help="density/coverage/failure-rate report")
    add_common(ev)
    ev.add_argument("--real", required=True, help="reference failure file")
    ev.add_argument("--generated", required=True, help="generated sample file")
    ev.add_argument("--k", type=int, default=5)
    ev.add_argument("--out", default=None, help="write the JSON report here too")
    ev.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("replay", help="re-run a persisted record")
    add_common(rp)
    rp.add_argument("--dataset", required=True)
    rp.add_argument("--index", type=int, default=0)
    rp.add_argument("--out", default=None, help="trajectory JSONL")
    rp.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="render failure trajectories as SVG")
    add_common(pl)
    pl.add_argument("--samples", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--max-trajectories", type=int, default=200)
    pl.add_argument("--failures-only", action="store_true", default=True)
    pl.add_argument("--all-trajectories", dest="failures_only",
                    action="store_false")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
