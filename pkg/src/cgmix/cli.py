"""Command-line front end.

Subcommands: ``run``, ``sweep``, ``truth``, ``models list``,
``validate-config``.  Exit codes: 0 success, 1 configuration problem
(including unknown flags), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ConfigError,
    available_configs,
    compare_kde_vs_mc,
    resolve_config,
    run_experiment,
    sweep_experiment,
    truth_states,
    validate_config,
    _grid_for,
    _marginal_requests,
)
from .kde import bandwidth_diag, kde_on_grid
from .models import build_model, model_ids

log = logging.getLogger("cgmix")


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration problems: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="config file path or packaged name")
    p.add_argument("--model", help="override the model id")
    p.add_argument("--regime", help="triad regime (I, II or III); implies --model triad3:R")
    p.add_argument("-L", dest="L", help="ensemble size (run) or comma list (sweep)")
    p.add_argument("--mc-particles", type=int, help="override the truth ensemble size")
    p.add_argument("--dt", type=float, help="override the integration step")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--snapshots", help="comma-separated snapshot times")
    p.add_argument("--out", help="override the output directory")
    p.add_argument(
        "--grid",
        help="'auto' or per-variable 'min:max:n' specs, comma separated in "
        "model variable order",
    )
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def _apply_overrides(cfg, args, allow_L_list=False):
    try:
        if args.regime:
            cfg = replace(cfg, model=f"triad3:{args.regime}")
        if args.model:
            cfg = replace(cfg, model=args.model)
        if args.L:
            if allow_L_list:
                values = tuple(int(v) for v in args.L.split(","))
                cfg = replace(cfg, sweep_L=values)
            else:
                cfg = replace(cfg, L=int(args.L))
        if args.mc_particles:
            cfg = replace(cfg, L_mc=args.mc_particles)
        if args.dt:
            cfg = replace(cfg, dt=args.dt)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.snapshots:
            cfg = replace(
                cfg, snapshots=tuple(float(t) for t in args.snapshots.split(","))
            )
        if args.out:
            cfg = replace(cfg, out=args.out)
        if args.no_figures:
            cfg = replace(cfg, figures=False)
        if args.grid:
            if args.grid == "auto":
                cfg = replace(cfg, grid_mode="auto", grid_axes=())
            else:
                spec = build_model(cfg.model, dict(cfg.overrides))
                axes = []
                for label, spec_str in zip(spec.labels, args.grid.split(",")):
                    if not spec_str:
                        continue
                    lo, hi, n = spec_str.split(":")
                    axes.append((label, float(lo), float(hi), int(n)))
                cfg = replace(cfg, grid_mode="explicit", grid_axes=tuple(axes))
    except ValueError as exc:
        raise ConfigError(f"bad flag value: {exc}") from exc
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="cgmix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment end to end")
    _add_common(p_run)
    p_run.add_argument("--save-paths", action="store_true", help="persist trajectories")
    p_run.add_argument(
        "--kde-vs-mc",
        action="store_true",
        help="also compare kernel estimate against a raw histogram",
    )

    p_sweep = sub.add_parser("sweep", help="rerun recovery across ensemble sizes")
    _add_common(p_sweep)

    p_truth = sub.add_parser("truth", help="precompute and cache the Monte Carlo truth")
    _add_common(p_truth)

    p_models = sub.add_parser("models", help="model registry")
    models_sub = p_models.add_subparsers(dest="models_command", required=True)
    models_sub.add_parser("list", help="list model ids and dimensions")

    p_val = sub.add_parser("validate-config", help="check a config without running")
    p_val.add_argument("--config", required=True)
    return parser


def _cmd_run(args) -> int:
    cfg = _apply_overrides(resolve_config(args.config), args)
    report = run_experiment(cfg, threads=args.threads, save_paths=args.save_paths)
    if args.kde_vs_mc:
        compare_kde_vs_mc(cfg, threads=args.threads)
    print(f"report written to {Path(cfg.out) / 'report.json'}")
    for snap in report.snapshots:
        for variables, value in snap.get("kl", {}).items():
            print(f"  t={snap['t']:g} {variables}: KL={value:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _apply_overrides(resolve_config(args.config), args, allow_L_list=True)
    rows = sweep_experiment(cfg, threads=args.threads)
    print(f"sweep table written to {Path(cfg.out) / 'sweep.csv'}")
    for row in rows:
        print(f"  L={row.L} {row.metric} {row.variables}: {row.value:.4f}")
    return 0


def _cmd_truth(args) -> int:
    cfg = _apply_overrides(resolve_config(args.config), args)
    validate_config(cfg)
    states = truth_states(cfg, threads=args.threads)
    spec = build_model(cfg.model, dict(cfg.overrides))
    out = Path(cfg.out) / "truth_densities"
    written = []
    density_times = set(cfg.density_at if cfg.density_at is not None else cfg.snapshots)
    for s, t in enumerate(cfg.snapshots):
        if t not in density_times:
            continue
        for _, labs, dims in _marginal_requests(cfg, spec.labels):
            samples = states[s][:, dims]
            grid = _grid_for(cfg, dims, labs, samples)
            fld = kde_on_grid(samples, bandwidth_diag(samples), grid)
            written.append(fld.to_csv(out / f"t{t:g}_{'-'.join(labs)}.csv"))
    print(f"truth cached ({states.shape[1]} members, {states.shape[0]} snapshots)")
    for path in written:
        print(f"  {path}")
    return 0


def _cmd_models(args) -> int:
    for mid in model_ids():
        spec = build_model(mid)
        print(
            f"{mid:12s} obs={spec.n_obs} ({', '.join(spec.obs_labels)}) "
            f"hid={spec.n_hid} ({', '.join(spec.hid_labels)})"
        )
    print("\npackaged configs:", ", ".join(available_configs()))
    return 0


def _cmd_validate(args) -> int:
    cfg = resolve_config(args.config)
    validate_config(cfg)
    print(f"config {cfg.name} ok (hash {cfg.config_hash()})")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "truth":
            return _cmd_truth(args)
        if args.command == "models":
            return _cmd_models(args)
        if args.command == "validate-config":
            return _cmd_validate(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except Exception as exc:  # runtime failure: distinct exit code per contract
        sys.stderr.write(f"runtime error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
