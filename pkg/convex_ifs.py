#!/usr/bin/env python3

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import convex_ifs_constants as constants
from codespace import CodeStream, project
from config_loader import ConfigLoader, SystemConfig, default_config_path
from geometry import PointSet, hausdorff, read_csv, write_csv
from ifs_errors import BudgetExceededError, ConfigError, IFSError, NonConvergenceError
from ifs_system import (
    MAX_CLOUD_POINTS,
    attractor,
    check_proof_inequalities,
    diagnostics_xy,
    falsify_beta,
    hutchinson,
    iterate,
    iterate_gaps,
    rate_certificate,
    tail_bound,
)
from maps import lipschitz_report
from render import chaos_game, parse_size, rasterize, to_grayscale, write_pgm

logger = logging.getLogger(__name__)

# Largest number of points per random diagnose cloud.
DIAGNOSE_CLOUD_MAX = 8


def _emit(payload: Dict[str, Any]) -> None:
    """Command results go to stdout as JSON; logs stay on stderr."""
    print(json.dumps(payload, indent=2))


def _write_json(path: str, payload: Dict[str, Any]) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)
    logger.info(f"Wrote report to {path}")


def _resolve_threads(cli_value: Optional[int]) -> int:
    if cli_value is not None:
        threads = cli_value
    else:
        env = os.environ.get(constants.THREADS_ENV_VAR, '1')
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"expected an integer, got {env!r}", constants.THREADS_ENV_VAR) from None
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}", '--threads')
    return threads


def _load(args: argparse.Namespace) -> SystemConfig:
    path = args.config
    if not os.path.exists(path):
        shipped = default_config_path(path)
        if shipped:
            logger.debug(f"Using shipped fixture {shipped} for '{path}'")
            path = shipped
    return ConfigLoader().load_and_validate_config(path, threads=_resolve_threads(args.threads))


def cmd_validate(args: argparse.Namespace) -> int:
    config = _load(args)
    system = config.system
    seed = config.defaults.seed if args.seed is None else args.seed
    counterexample = falsify_beta(system, args.samples, seed)
    lipschitz = {}
    for s in system.symbols:
        bound = lipschitz_report(system.maps[s], system.box)
        if not bound.exact:
            logger.warning(f"Lipschitz constant of map '{s}' is a sampled estimate")
        lipschitz[s] = {'value': bound.value, 'exact': bound.exact}
    _emit({
        'name': system.name,
        'alpha': {'d': system.d},
        'beta': {'samples': args.samples, 'seed': seed,
                 'counterexample': None if counterexample is None else counterexample.to_dict()},
        'lipschitz': lipschitz,
    })
    if counterexample is not None:
        logger.error(f"Condition beta fails for ({counterexample.i}, {counterexample.j})")
        return constants.EXIT_BETA_COUNTEREXAMPLE
    return constants.EXIT_OK


def _initial_cloud(args: argparse.Namespace, config: SystemConfig) -> PointSet:
    if getattr(args, 'initial', None):
        return read_csv(args.initial)
    return config.initial


def cmd_attract(args: argparse.Namespace) -> int:
    config = _load(args)
    d = config.defaults
    tol = d.tol if args.tol is None else args.tol
    eps = d.eps_decimate if args.eps is None else args.eps
    max_iter = d.max_iter if args.max_iter is None else args.max_iter
    result = attractor(config.system, _initial_cloud(args, config), tol, eps, max_iter)
    if args.output:
        write_csv(args.output, result.cloud)
    report = result.to_report(args.output)
    report['points'] = len(result.cloud)
    if args.report:
        _write_json(args.report, report)
    _emit(report)
    return constants.EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    config = _load(args)
    system = config.system
    B0 = _initial_cloud(args, config)
    reference = read_csv(args.against) if args.against else None
    bounds: List[float] = []
    measured: List[Optional[float]] = []
    cloud: Optional[PointSet] = B0
    for n in range(args.n + 1):
        bounds.append(rate_certificate(system, B0, n))
        if reference is None:
            continue
        if cloud is not None and n > 0:
            try:
                cloud = iterate(system, cloud, 1, max_points=args.max_points)
            except BudgetExceededError as e:
                logger.warning(f"Stopping exact measurement at n = {n}: {e}")
                cloud = None
        measured.append(None if cloud is None else hausdorff(cloud, reference, workers=system.threads))
    payload: Dict[str, Any] = {'name': system.name, 'd': system.d, 'n': list(range(args.n + 1)),
                               'rate_certificate': bounds}
    if reference is not None:
        payload['measured'] = measured
        payload['violations'] = [n for n, (b, m) in enumerate(zip(bounds, measured))
                                 if m is not None and m > b + 1e-12]
    _emit(payload)
    return constants.EXIT_OK


def cmd_project(args: argparse.Namespace) -> int:
    config = _load(args)
    omega = CodeStream.parse(args.word)
    tol = config.defaults.picard_tol if args.tol is None else args.tol
    result = project(config.system, omega, tol=tol)
    _emit({'word': str(omega), 'point': result.point.tolist(), 'depth': result.depth,
           'residual': result.residual_diam})
    return constants.EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    config = _load(args)
    system = config.system
    width, height = parse_size(args.size)
    if args.deterministic:
        d = config.defaults
        points = attractor(system, config.initial, d.tol, d.eps_decimate, d.max_iter).cloud
    else:
        seed = config.defaults.seed if args.seed is None else args.seed
        points = chaos_game(system, args.iters, args.burn_in, seed)
    raster = rasterize(points, width, height, system.box)
    write_pgm(args.output, to_grayscale(raster))
    if args.csv:
        write_csv(args.csv, points)
    _emit({'output': args.output, 'width': width, 'height': height, 'points': len(points),
           'plotted': raster.total, 'dropped': raster.dropped, 'pixel_pitch': raster.pixel_pitch})
    return constants.EXIT_OK


def _random_cloud(config: SystemConfig, rng: np.random.Generator) -> PointSet:
    size = int(rng.integers(1, DIAGNOSE_CLOUD_MAX + 1))
    return PointSet(config.system.box.sample(size, rng))


def cmd_diagnose(args: argparse.Namespace) -> int:
    config = _load(args)
    system = config.system
    seed = config.defaults.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    pairs = []
    passed = True
    for _ in range(args.pairs):
        Y, Z = _random_cloud(config, rng), _random_cloud(config, rng)
        diag = diagnostics_xy(system, Y, Z, args.depth)
        gaps = iterate_gaps(system, Y, Z, args.depth) if args.hausdorff else None
        check = check_proof_inequalities(diag, system.d, hausdorff_gaps=gaps)
        passed = passed and check.passed
        entry = {'sizes': [len(Y), len(Z)], **diag.to_dict(), 'checks': check.to_dict()}
        if gaps is not None:
            entry['hausdorff'] = gaps
        pairs.append(entry)

    # x_k for (B0, F_S(B0)) controls the distance of F_S^[n](B0) to the attractor.
    B0 = config.initial
    base = diagnostics_xy(system, B0, hutchinson(system, B0), args.depth)
    _emit({
        'name': system.name,
        'd': system.d,
        'depth': args.depth,
        'seed': seed,
        'pairs': pairs,
        'initial': {**base.to_dict(), 'tail_bound': [tail_bound(base, n, system.d) for n in range(args.depth + 1)]},
        'passed': passed,
    })
    if not passed:
        logger.error("Some inequalities of the convergence argument failed")
        return constants.EXIT_FAILURE
    return constants.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Attractors of iterated function systems of convex contractions (config v1)")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"Worker threads for map images and neighbour queries (env {constants.THREADS_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=str, help="Path to a system configuration (.json/.yaml) or a shipped fixture name")
        p.set_defaults(func=func)
        return p

    p = add("validate", cmd_validate, "Check condition alpha and search for beta counterexamples")
    p.add_argument("--samples", type=int, default=constants.DEFAULT_FALSIFIER_SAMPLES, help="Random pairs per (i, j)")
    p.add_argument("--seed", type=int, default=None, help="Falsifier seed (default: config seed)")

    p = add("attract", cmd_attract, "Compute the attractor cloud")
    p.add_argument("-o", "--output", type=str, default=None, help="CSV file for the cloud")
    p.add_argument("--report", type=str, default=None, help="JSON file for the run report")
    p.add_argument("--tol", type=float, default=None, help="Step gap tolerance")
    p.add_argument("--eps", type=float, default=None, help="Decimation radius")
    p.add_argument("--max-iter", type=int, default=None, help="Iteration limit")
    p.add_argument("--initial", type=str, default=None, help="CSV file with the starting cloud")

    p = add("certify", cmd_certify, "Print the a-priori error bound for n = 0..N")
    p.add_argument("-n", type=int, required=True, help="Largest n")
    p.add_argument("--against", type=str, default=None, help="Reference cloud CSV to measure exact errors against")
    p.add_argument("--initial", type=str, default=None, help="CSV file with the starting cloud")
    p.add_argument("--max-points", type=int, default=MAX_CLOUD_POINTS, help="Size cap for undecimated clouds")

    p = add("project", cmd_project, "Project an eventually periodic word onto the attractor")
    p.add_argument("--word", type=str, required=True, help="Word as 'preamble|cycle', e.g. '1|2'")
    p.add_argument("--tol", type=float, default=None, help="Diameter tolerance")

    p = add("render", cmd_render, "Render the attractor to a PGM image")
    p.add_argument("-o", "--output", type=str, required=True, help="PGM output file")
    p.add_argument("--size", type=str, default=constants.DEFAULT_RENDER_SIZE, help="WIDTHxHEIGHT")
    p.add_argument("--iters", type=int, default=constants.DEFAULT_RENDER_ITERS, help="Chaos game steps")
    p.add_argument("--burn-in", type=int, default=constants.DEFAULT_RENDER_BURN_IN, help="Discarded leading steps")
    p.add_argument("--seed", type=int, default=None, help="Chaos game seed (default: config seed)")
    p.add_argument("--deterministic", action="store_true", help="Rasterize the attractor cloud instead")
    p.add_argument("--csv", type=str, default=None, help="Also write the plotted points as CSV")

    p = add("diagnose", cmd_diagnose, "Tabulate x_k, y_k and check the convergence inequalities")
    p.add_argument("--depth", type=int, default=constants.DEFAULT_DIAGNOSE_DEPTH, help="Largest word length")
    p.add_argument("--pairs", type=int, default=constants.DEFAULT_DIAGNOSE_PAIRS, help="Random (Y, Z) pairs")
    p.add_argument("--seed", type=int, default=None, help="Seed for the random pairs (default: config seed)")
    p.add_argument("--no-hausdorff", dest="hausdorff", action="store_false",
                   help="Skip the h(F^k Y, F^k Z) <= x_k check")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, dispatch the subcommand and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    log_level = logging.DEBUG if args.debug else logging.INFO
    logging.basicConfig(level=log_level, format="%(asctime)s [%(levelname)s] %(message)s", force=True)

    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return constants.EXIT_CONFIG_ERROR
    except NonConvergenceError as e:
        logger.error(f"No convergence after {e.iterations} iterations: {e}")
        return constants.EXIT_NON_CONVERGENCE
    except (IFSError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return constants.EXIT_FAILURE
    except Exception as e:
        logger.exception(f"An unexpected error occurred: {e}")
        return constants.EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
