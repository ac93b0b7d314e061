"""Command-line surface: reproducible figure-generating sweeps.

Every command reads an optional key=value config file, lets flags override
individual keys, embeds the resolved-config hash in its output header, and is
deterministic given (config, seed).  Exit codes: 0 success, 2 config error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from multiprocessing import Pool

import numpy as np

from . import __version__, output
from .channel import ChannelPoint, InfeasibleRayError, QuadratureError, mac_acpr_boundary
from .coupled import coupled_run, coupled_threshold, profile_csv_rows
from .densities import DensityGrid, default_grid
from .ensembles import (
    CoupledSpec,
    EnsembleSpec,
    coupled_design_rate,
    design_rate,
    named_ensemble,
    parse_ensemble_config,
)
from .gexit import MapBoundError, bp_gexit_curve, coupled_bp_gexit_curve, map_bound_sweep, map_boundary
from .jointde import BracketError, bp_acpr, bp_threshold
from .mcsim import build_coupled, build_joint, build_regular, simulate_joint

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


HASH_EXCLUDED = {"output", "config", "no_timestamp", "func", "command", "jobs"}


def _hashable(args, config: dict) -> dict:
    merged = {**{k: v for k, v in vars(args).items() if k not in HASH_EXCLUDED}, **config}
    return merged


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    fields = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            fields[key.strip().replace("-", "_")] = value.strip()
    return fields


def _apply_config(args: argparse.Namespace, config: dict, subparser: argparse.ArgumentParser):
    """Fill flags the user left at their defaults from the config file; a flag
    given on the command line always wins over its config key."""
    actions = {a.dest: a for a in subparser._actions}
    for key, raw in config.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r} for command {args.command}")
        if getattr(args, key) != action.default:
            continue  # flag explicitly set
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes")
        elif action.type is not None:
            try:
                value = action.type(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        else:
            value = raw
        setattr(args, key, value)


def _ensemble(spec_str: str):
    if spec_str is None:
        raise ConfigError("an ensemble is required (name like reg36, or a config file)")
    if os.path.exists(spec_str):
        try:
            return parse_ensemble_config(open(spec_str).read())
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad ensemble file {spec_str}: {exc}") from exc
    try:
        return named_ensemble(spec_str)
    except KeyError:
        pass
    if spec_str.count(",") == 3:
        l, r, L, w = (int(t) for t in spec_str.split(","))
        return CoupledSpec(l, r, L, w)
    raise ConfigError(f"cannot resolve ensemble {spec_str!r}")


def _grid(args) -> DensityGrid:
    if args.half_range is None and args.grid_bins is None:
        return default_grid()
    half = args.half_range if args.half_range is not None else 30.0
    bins = args.grid_bins if args.grid_bins is not None else 4097
    if bins < 3 or bins % 2 == 0:
        raise ConfigError("grid-bins must be an odd integer >= 3")
    return DensityGrid(bin_width=2.0 * half / (bins - 1), half_range=half)


def _rays(args) -> list[float]:
    if args.ray_list:
        rays = [float(t) for t in args.ray_list.split(",") if t]
    else:
        count = args.rays or 16
        # tangent-spaced angles cover both asymptotes of the boundary
        angles = np.linspace(0.06, np.pi / 2 - 0.06, count)
        rays = list(np.tan(angles))
    if not rays or any(r <= 0 for r in rays):
        raise ConfigError("rays must be positive ratios h2/h1")
    return rays


def _alpha_grid(spec: str) -> list[float]:
    try:
        lo, hi, step = (float(t) for t in spec.split(":"))
    except ValueError as exc:
        raise ConfigError(f"bad alpha grid {spec!r}, expected lo:hi:step") from exc
    if step <= 0 or hi <= lo:
        raise ConfigError("alpha grid needs hi > lo and step > 0")
    return list(np.round(np.arange(lo, hi + step / 2, step), 10))


def _pool_map(jobs: int):
    if jobs <= 1:
        return None, map
    pool = Pool(processes=jobs)
    return pool, pool.map


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_threshold(args, config) -> int:
    ens = _ensemble(args.ensemble)
    if isinstance(ens, CoupledSpec):
        raise ConfigError("threshold expects an uncoupled ensemble; see coupled-threshold")
    grid = _grid(args)
    res = bp_threshold(ens, args.ratio, tol=args.tol, grid=grid, genie=args.genie)
    meta = {
        "config_hash": output.config_hash(_hashable(args, config)),
        "grid_bins": grid.n_bins,
        "design_rate": round(design_rate(ens), 6),
    }
    output.emit(output.json_record(res.as_record(str(ens)), meta, args.no_timestamp), args.output)
    return 0


def cmd_coupled_threshold(args, config) -> int:
    spec = _ensemble(args.ensemble)
    if not isinstance(spec, CoupledSpec):
        raise ConfigError("coupled-threshold expects an (l,r,L,w) ensemble")
    grid = _grid(args)
    if args.profile_out and args.profile_alpha is None:
        raise ConfigError("--profile-out needs --profile-alpha")
    res = coupled_threshold(spec, args.ratio, tol=args.tol, grid=grid)
    if args.profile_out:
        rows = []
        coupled_run(
            ChannelPoint(args.profile_alpha, args.ratio),
            spec,
            grid,
            profile=lambda it, ea, eb: rows.append((it, ea, eb)),
        )
        lines = ["iteration,position,entropy_a,entropy_b"]
        for it, pos, ea, eb in profile_csv_rows(rows):
            lines.append(f"{it},{pos},{ea:.8e},{eb:.8e}")
        output.emit("\n".join(lines) + "\n", args.profile_out)
    meta = {
        "config_hash": output.config_hash(_hashable(args, config)),
        "grid_bins": grid.n_bins,
        "design_rate": round(coupled_design_rate(spec), 6),
    }
    output.emit(output.json_record(res.as_record(str(spec)), meta, args.no_timestamp), args.output)
    return 0


def cmd_capacity(args, config) -> int:
    rates = tuple(float(t) for t in args.rates.split(","))
    if len(rates) != 2:
        raise ConfigError("rates must be R1,R2")
    pool, pmap = _pool_map(args.jobs)
    try:
        pts = mac_acpr_boundary(rates, _rays(args), tol=args.tol, pmap=pmap)
    finally:
        if pool:
            pool.close()
    bnd = output.AcprBoundary(
        "mac", pts, {"rates": args.rates, "config_hash": output.config_hash(_hashable(args, config))}
    )
    text = bnd.json(args.no_timestamp) if args.json else bnd.csv(args.no_timestamp)
    output.emit(text, args.output)
    return 0


def cmd_acpr(args, config) -> int:
    ens = _ensemble(args.ensemble)
    grid = _grid(args)
    pool, pmap = _pool_map(args.jobs)
    try:
        if isinstance(ens, CoupledSpec):
            rays = _rays(args)
            alphas = [coupled_threshold(ens, a, tol=args.tol, grid=grid).alpha for a in rays]
            pts = [(al, a * al) for a, al in zip(rays, alphas)]
        else:
            pts = bp_acpr(ens, _rays(args), tol=args.tol, grid=grid, pmap=pmap)
    finally:
        if pool:
            pool.close()
    bnd = output.AcprBoundary(
        "bp",
        pts,
        {
            "ensemble": str(ens),
            "grid_bins": grid.n_bins,
            "config_hash": output.config_hash(_hashable(args, config)),
        },
    )
    text = bnd.json(args.no_timestamp) if args.json else bnd.csv(args.no_timestamp)
    output.emit(text, args.output)
    return 0


def cmd_gexit(args, config) -> int:
    ens = _ensemble(args.ensemble)
    grid = _grid(args)
    alphas = _alpha_grid(args.alphas)
    if isinstance(ens, CoupledSpec):
        curve = coupled_bp_gexit_curve(ens, args.ratio, alphas, grid=grid, bins=args.lattice)
    else:
        curve = bp_gexit_curve(ens, args.ratio, alphas, grid=grid, bins=args.lattice)
    curve.metadata["config_hash"] = output.config_hash(_hashable(args, config))
    output.emit(output.gexit_csv(curve, args.no_timestamp), args.output)
    return 0


def cmd_map_bound(args, config) -> int:
    ens = _ensemble(args.ensemble)
    if isinstance(ens, CoupledSpec):
        raise ConfigError("map-bound applies to uncoupled ensembles")
    grid = _grid(args)
    if args.ray_list:
        rays = [float(t) for t in args.ray_list.split(",") if t]
        pool, pmap = _pool_map(args.jobs)
        try:
            pts = map_boundary(ens, rays, grid=grid, pmap=pmap, step=args.step, bins=args.lattice)
        finally:
            if pool:
                pool.close()
        bnd = output.AcprBoundary(
            "map",
            pts,
            {
                "ensemble": str(ens),
                "grid_bins": grid.n_bins,
                "config_hash": output.config_hash(_hashable(args, config)),
            },
        )
        output.emit(bnd.csv(args.no_timestamp), args.output)
        return 0
    bound, curve = map_bound_sweep(
        ens, args.ratio, grid=grid, step=args.step, bins=args.lattice
    )
    meta = {
        "config_hash": output.config_hash(_hashable(args, config)),
        "grid_bins": grid.n_bins,
        "lattice": args.lattice,
    }
    rec = {
        "ensemble": str(ens),
        "A": args.ratio,
        "alpha_bar": round(bound, 6),
        "area_target": round(2 * design_rate(ens), 6),
        "samples": len(curve.samples),
    }
    output.emit(output.json_record(rec, meta, args.no_timestamp), args.output)
    return 0


def cmd_simulate(args, config) -> int:
    ens = _ensemble(args.ensemble)
    ch = ChannelPoint(args.alpha, args.ratio)
    if isinstance(ens, CoupledSpec):
        spec = CoupledSpec(ens.l, ens.r, ens.L, ens.w, M=args.m_per_position or 60)
        g1 = build_coupled(spec, args.seed)
        g2 = build_coupled(spec, args.seed + 1)
    else:
        lam = np.nonzero(ens.lambda_coeffs)[0]
        rho = np.nonzero(ens.rho_coeffs)[0]
        if lam.size != 1 or rho.size != 1:
            raise ConfigError("simulate supports regular ensembles")
        g1 = build_regular(args.n, int(lam[0]), int(rho[0]), args.seed)
        g2 = build_regular(args.n, int(lam[0]), int(rho[0]), args.seed + 1)
    inst = build_joint(g1, g2, args.seed + 2)
    pool, pmap = _pool_map(args.jobs)
    try:
        res = simulate_joint(
            inst,
            ch,
            mode=args.mode,
            max_iters=args.iters,
            num_frames=args.frames,
            seed=args.seed,
            pmap=pmap,
        )
    finally:
        if pool:
            pool.close()

    lines = []
    for fr in res.frames:
        for user in (1, 2):
            lines.append(
                json.dumps(
                    {
                        "frame": fr.frame,
                        "user": user,
                        "bit_errors": fr.bit_errors[user - 1],
                        "iters": fr.iterations,
                        "decoded": fr.decoded,
                    }
                )
            )
    summary = {
        "ber": [res.ber(1), res.ber(2)],
        "ci1": list(res.ber_confidence(1)),
        "ci2": list(res.ber_confidence(2)),
        "mode": res.mode,
        "frames": len(res.frames),
        "n": res.n_bits,
        "config_hash": output.config_hash(_hashable(args, config)),
    }
    text = "\n".join(lines) + "\n# " + json.dumps(summary) + "\n"
    output.emit(text, args.output)
    if args.summary_out:
        rows = ["user,ber,ci_lo,ci_hi,frames,n"]
        for user in (1, 2):
            lo, hi = res.ber_confidence(user)
            rows.append(f"{user},{res.ber(user):.6e},{lo:.6e},{hi:.6e},{len(res.frames)},{res.n_bits}")
        output.emit("\n".join(rows) + "\n", args.summary_out)
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file; flags override")
    p.add_argument("--output", "-o", help="output path (default stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker pool size for sweeps")
    p.add_argument("--no-timestamp", action="store_true", help="byte-stable headers")
    p.add_argument("--half-range", type=float, default=None, help="grid LLR half range")
    p.add_argument("--grid-bins", type=int, default=None, help="odd number of LLR bins")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="macsat", description=__doc__)
    ap.add_argument("--version", action="version", version=f"macsat {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("threshold", help="BP threshold of an uncoupled ensemble")
    p.add_argument("--ensemble", default="reg36")
    p.add_argument("--ratio", type=float, default=1.0, help="A = h2/h1")
    p.add_argument("--tol", type=float, default=5e-3)
    p.add_argument("--genie", action="store_true", help="pin the partner to +inf (single-user)")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("coupled-threshold", help="BP threshold of an (l,r,L,w) ensemble")
    p.add_argument("--ensemble", required=True, help="file or l,r,L,w")
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=5e-3)
    p.add_argument("--profile-out", help="also write a per-position entropy profile CSV")
    p.add_argument("--profile-alpha", type=float, default=None, help="alpha for the profile run")
    p.set_defaults(func=cmd_coupled_threshold)

    p = sub.add_parser("capacity", help="MAC-ACPR boundary for a rate pair")
    p.add_argument("--rates", default="0.5,0.5")
    p.add_argument("--rays", type=int, default=None, help="number of rays")
    p.add_argument("--ray-list", help="explicit comma-separated ratios")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--json", action="store_true", help="emit a JSON array instead of CSV")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("acpr", help="BP-ACPR boundary of an ensemble")
    p.add_argument("--ensemble", default="reg36")
    p.add_argument("--rays", type=int, default=None)
    p.add_argument("--ray-list")
    p.add_argument("--tol", type=float, default=5e-3)
    p.add_argument("--json", action="store_true", help="emit a JSON array instead of CSV")
    p.set_defaults(func=cmd_acpr)

    p = sub.add_parser("gexit", help="BP-GEXIT curve along one ray")
    p.add_argument("--ensemble", default="reg36")
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--alphas", default="0:2:0.01", help="lo:hi:step")
    p.add_argument("--lattice", type=int, default=128, help="kernel lattice half-width")
    p.set_defaults(func=cmd_gexit)

    p = sub.add_parser("map-bound", help="area-theorem MAP bound along one ray")
    p.add_argument("--ensemble", default="reg36")
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--ray-list", help="emit the MAP boundary over these rays as CSV")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--lattice", type=int, default=128)
    p.set_defaults(func=cmd_map_bound)

    p = sub.add_parser("simulate", help="finite-length joint BP Monte-Carlo")
    p.add_argument("--ensemble", default="reg36")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--m-per-position", type=int, default=None)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--mode", choices=("all_plus_one", "random"), default="random")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--summary-out", help="also write a summary CSV")
    p.set_defaults(func=cmd_simulate)

    for sp in sub.choices.values():
        _add_common(sp)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        config = _load_config(args.config)
        sub = ap._subparsers._group_actions[0].choices[args.command]
        _apply_config(args, config, sub)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BracketError, MapBoundError, QuadratureError, InfeasibleRayError) as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
