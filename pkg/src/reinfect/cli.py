"""Command-line entry point: ``reinfect VERB --scenario FILE [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import errors
from .scenario import Scenario, grid_every, load_scenario, write_scenario

VERBS = ("simulate", "limit", "equilibrium", "pde", "converge", "crosscheck")


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def cmd_simulate(scn: Scenario, out: Path, seed_offset: int = 0, threads: int = 1) -> list[Path]:
    from .abm import init_population, run

    law = scn.law()
    init = scn.initial_law(law)
    T = scn.abm.T or scn.T
    grid, log = run(init_population(scn.abm.n, law, init, scn.seed + seed_offset), T, scn.abm.grid_dt)
    paths = [out / "trajectory.csv", out / "events.csv"]
    grid.write_csv(paths[0])
    log.write_csv(paths[1])
    return paths


def cmd_limit(scn: Scenario, out: Path, seed_offset: int = 0, threads: int = 1) -> list[Path]:
    from .limit import solve_limit

    law = scn.law()
    grid = solve_limit(law, scn.initial_law(law), scn.T, scn.dt, M=scn.M, seed=scn.seed + seed_offset,
                       method=scn.method)
    path = out / "limit.csv"
    grid.write_csv(path)
    return [path]


def cmd_equilibrium(scn: Scenario, out: Path, seed_offset: int = 0, threads: int = 1) -> list[Path]:
    from .equilibrium import solve_endemic

    path = out / "equilibrium.json"
    path.write_text(solve_endemic(scn.law()).to_json())
    return [path]


def cmd_pde(scn: Scenario, out: Path, seed_offset: int = 0, threads: int = 1) -> list[Path]:
    from .pde import solve_pde

    sol = solve_pde(scn.pde_scenario(), scn.T, scn.dt)
    paths = [out / "pde.csv"]
    sol.write_csv(paths[0])
    if sol.snapshots:
        paths.append(out / "pde_snapshots.csv")
        sol.write_snapshots(paths[1])
    return paths


def cmd_converge(scn: Scenario, out: Path, seed_offset: int = 0, threads: int = 1) -> list[Path]:
    from .harness import converge

    grid_every(scn, scn.abm.grid_dt)
    path = out / "converge.json"
    _json(path, converge(scn, seed_offset, threads))
    return [path]


def cmd_crosscheck(scn: Scenario, out: Path, seed_offset: int = 0, threads: int = 1) -> list[Path]:
    from .harness import crosscheck

    path = out / "crosscheck.json"
    _json(path, crosscheck(scn, seed_offset))
    return [path]


COMMANDS = {"simulate": cmd_simulate, "limit": cmd_limit, "equilibrium": cmd_equilibrium, "pde": cmd_pde,
            "converge": cmd_converge, "crosscheck": cmd_crosscheck}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reinfect", description="Reinfection epidemic model toolkit.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, help=COMMANDS[verb].__name__.replace("cmd_", ""))
        p.add_argument("--scenario", required=True, type=Path, help="scenario YAML file")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: scenario 'out')")
        p.add_argument("--seed-offset", type=int, default=0, help="added to the scenario seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise errors.ConfigError("--threads must be >= 1")
        scn = load_scenario(args.scenario)
        out = args.out if args.out is not None else Path(scn.out)
        out.mkdir(parents=True, exist_ok=True)
        # echo the resolved scenario, derived fields included
        write_scenario(scn, out / "scenario.resolved.yaml")
        paths = COMMANDS[args.verb](scn, out, args.seed_offset, args.threads)
    except errors.ConfigError as err:
        print(f"reinfect {args.verb}: configuration error: {err}", file=sys.stderr)
        return 2
    except (errors.InvariantViolation, errors.SolverDivergence, errors.HorizonTooShort,
            errors.GridMismatch) as err:
        print(f"reinfect {args.verb}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"reinfect {args.verb}: I/O error: {err}", file=sys.stderr)
        return 3
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
