# cli.py
"""
Command-line entry point.

    python cli.py simulate   --D @D.json --n 256 --paths 10 --seed 7 --out p.csv
    python cli.py covariance --D 0.75 --grid 0.25,0.5,0.75,1.0
    python cli.py verify     --D @D.json --check self-similarity --c 0.5
    python cli.py mds-check  --n 1024 --d 2 --generator predictable-sign
    python cli.py bench      --D @D.json --n 256,1024,4096

Exit status: 0 ok, 1 a check failed, 2 usage error, 3 invalid input.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # python-dotenv is optional

import numpy as np

import mds
import verify
from errors import (EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION,
                    InvalidInputError, OFBMError)
from export_utils import (BENCH_HEADER, COVARIANCE_HEADER, INCREMENT_HEADER, WEIGHT_HEADER,
                          path_header, write_csv, write_json)
from kernel import QuadratureConfig, covariance_rows, get_covariance_oracle
from matfun import HurstOperator
from mds import MDSConfig
from simulate import SimulationPlan, benchmark, simulate_batch
from verify import LinearFunctional, TestConfig

logger = logging.getLogger(__name__)

CHECKS = ("power-bound", "properness", "lemma6", "corollary", "fdd", "covariance",
          "self-similarity", "tightness", "lindeberg", "donsker")


# ══════════════════════════════════════════════════════════════════════════════
# Argument parsing
# ══════════════════════════════════════════════════════════════════════════════

def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser(defaults: Optional[Dict[str, Any]] = None) -> argparse.ArgumentParser:
    """Parser for all subcommands; `defaults` (from --config) replace built-in flag defaults."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file of defaults (flags override it)')
    common.add_argument('--out', default='-', help="output path ('-' for stdout)")
    common.add_argument('--format', choices=('csv', 'json'), default=None)
    common.add_argument('--seed', type=int, default=0, help='master seed (unsigned 64-bit)')
    common.add_argument('--threads', type=int, default=None, help='cap on worker threads')
    common.add_argument('--verbose', action='store_true')

    hurst = argparse.ArgumentParser(add_help=False)
    hurst.add_argument('--D', dest='D', default=None,
                       help='Hurst operator as inline JSON (array of rows or a scalar) or @file')

    generator = argparse.ArgumentParser(add_help=False)
    generator.add_argument('--generator', default='rademacher',
                           choices=('rademacher', 'iid-rademacher', 'predictable-sign', 'violating-spike'))
    generator.add_argument('--bound', type=float, default=1.0, help='bound constant C ≥ 1')

    parser = argparse.ArgumentParser(prog='cli.py', description='RL operator fractional Brownian motion '
                                     'via martingale-difference approximation')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common, hurst, generator], help='emit approximation paths')
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--d', type=int, default=None)
    p.add_argument('--paths', type=int, default=1)
    p.add_argument('--method', choices=('naive', 'fft'), default=None)
    p.add_argument('--weights', default=None, help='CSV path for the Toeplitz weight table')

    p = sub.add_parser('covariance', parents=[common, hurst], help='emit the covariance oracle table')
    p.add_argument('--grid', type=_float_list, default=None)

    p = sub.add_parser('verify', parents=[common, hurst, generator], help='run named checks')
    p.add_argument('--check', action='append', choices=CHECKS + ('all',), default=None)
    p.add_argument('--n', type=int, default=512)
    p.add_argument('--d', type=int, default=None)
    p.add_argument('--paths', type=int, default=None, help='Monte Carlo replications')
    p.add_argument('--method', choices=('naive', 'fft'), default=None)
    p.add_argument('--c', type=float, default=0.5, help='self-similarity scale')
    p.add_argument('--grid', type=_float_list, default=None, help='t-grid')
    p.add_argument('--times', type=_float_list, default=None, help='functional times')
    p.add_argument('--a', type=_float_list, default=None, help='functional coefficients')
    p.add_argument('--b', type=_float_list, default=None, help='functional direction')
    p.add_argument('--curves', default=None, help='CSV path for per-n error curves')

    p = sub.add_parser('mds-check', parents=[common, generator], help='martingale-difference conditions')
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--d', type=int, default=1)
    p.add_argument('--epsilon', type=float, default=None)
    p.add_argument('--replication', type=int, default=0)
    p.add_argument('--increments', default=None, help='CSV path for the generated increments')

    p = sub.add_parser('bench', parents=[common, hurst], help='naive vs FFT timing')
    p.add_argument('--n', type=_int_list, default=[256, 1024, 4096])
    p.add_argument('--repeats', type=int, default=3)

    if defaults:
        sections = defaults.get('commands') or {}
        flat = {k: v for k, v in defaults.items() if k != 'commands'}
        for name, command in sub.choices.items():
            command.set_defaults(**_scoped_defaults(command, {**flat, **sections.get(name, {})}))
    return parser


def _scoped_defaults(command: argparse.ArgumentParser, values: Dict[str, Any]) -> Dict[str, Any]:
    """Keep only keys this subcommand defines, coerced the way its flag would parse them."""
    actions = {a.dest: a for a in command._actions}
    scoped: Dict[str, Any] = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None:
            continue
        if action.type in (_int_list, _float_list):
            if isinstance(value, str):
                value = action.type(value)
            elif not isinstance(value, (list, tuple)):
                value = [value]
        elif action.type is not None and isinstance(value, str):
            value = action.type(value)
        elif action.type is None and isinstance(value, (list, int, float)) and not isinstance(value, bool):
            value = json.dumps(value)  # e.g. D given as a JSON matrix
        scoped[key] = value
    return scoped


def _missing_flags(args) -> List[str]:
    return [f'--{dest}' for dest in ('D', 'n') if hasattr(args, dest) and getattr(args, dest) is None]


def parse_hurst(text: str) -> HurstOperator:
    """Inline JSON or @path; a bare number is a 1×1 operator."""
    source = text
    if text.startswith('@'):
        try:
            with open(text[1:], encoding='utf-8') as f:
                source = f.read()
        except OSError as e:
            raise InvalidInputError(f"cannot read D from {text[1:]}: {e}") from e
    try:
        value = json.loads(source)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"D is not valid JSON: {e}") from e
    return HurstOperator.from_matrix(value)


def _load_config(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"cannot load config {path}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidInputError(f"config {path} must hold a JSON object")
    return data


# ══════════════════════════════════════════════════════════════════════════════
# Subcommands
# ══════════════════════════════════════════════════════════════════════════════

def _summary(message: str) -> None:
    print(message, file=sys.stderr)


def _plan(args, D: HurstOperator, replications: int) -> SimulationPlan:
    return SimulationPlan(
        n=args.n, d=args.d or D.d, D=D,
        generator=MDSConfig(kind=args.generator, C=args.bound),
        replications=replications, seed=args.seed, method=args.method,
    )


def cmd_simulate(args, settings: Dict[str, Any]) -> int:
    D = parse_hurst(args.D)
    plan = _plan(args, D, args.paths)
    paths = simulate_batch(plan, mode="paths", threads=args.threads)

    if (args.format or 'csv') == 'json':
        write_json(args.out, {
            "plan": plan.to_dict(),
            "paths": [{"replication": p.replication, "values": p.values} for p in paths],
        })
    else:
        rows = ((p.replication, *row) for p in paths for row in p.to_rows())
        write_csv(args.out, ["path", *path_header(plan.d)], rows)
    if args.weights:
        write_csv(args.weights, WEIGHT_HEADER, plan.weights.to_rows())
    _summary(f"✓ {len(paths)} path(s), n={plan.n}, d={plan.d}, method={plan.method} → {args.out}")
    return EXIT_OK


def cmd_covariance(args, settings: Dict[str, Any]) -> int:
    D = parse_hurst(args.D)
    quadrature = settings['quadrature']
    grid = args.grid or list(settings['test'].t_grid)

    if (args.format or 'csv') == 'json':
        oracle = get_covariance_oracle(D, quadrature)
        table = [{"t": t, "s": s, "C": oracle(t, s)} for t in grid for s in grid]
        write_json(args.out, {"D": D.to_list(), "grid": grid, "table": table})
    else:
        write_csv(args.out, COVARIANCE_HEADER, covariance_rows(D, grid, quadrature))
    _summary(f"✓ covariance table on {len(grid)} times → {args.out}")
    return EXIT_OK


def _default_functional(d: int, args) -> LinearFunctional:
    times = args.times or [0.5, 1.0]
    a = args.a or ([1.0, -0.5] if len(times) == 2 else [1.0] * len(times))
    b = args.b or [1.0] * d
    return LinearFunctional(times=tuple(times), a=tuple(a), b=np.array(b))


def run_check(name: str, D: HurstOperator, args, config: TestConfig) -> verify.VerificationReport:
    if name == "power-bound":
        return verify.power_bound_check(D, config=config)
    if name == "properness":
        return verify.properness_report(D, args.grid, config)
    if name == "lemma6":
        return verify.lemma6_check(D, config=config)
    if name == "corollary":
        return verify.corollary_check(D, b=args.b, config=config)
    if name == "self-similarity":
        return verify.self_similarity_check(D, c=args.c, config=config)
    if name == "donsker":
        return verify.donsker_check(D.d, args.n, config=config,
                                    generator=MDSConfig(kind=args.generator, C=args.bound, seed=args.seed))

    plan = _plan(args, D, args.paths or config.replications)
    if name == "fdd":
        return verify.fdd_test(plan, _default_functional(plan.d, args), config)
    if name == "lindeberg":
        return verify.lindeberg_check(plan, _default_functional(plan.d, args), config)
    if name == "covariance":
        return verify.covariance_convergence(plan, args.grid, config)
    if name == "tightness":
        return verify.tightness_check(plan, config=config)
    raise InvalidInputError(f"unknown check {name!r}")


def cmd_verify(args, settings: Dict[str, Any]) -> int:
    D = parse_hurst(args.D)
    config: TestConfig = settings['test']
    names = args.check or ['all']
    if 'all' in names:
        names = list(CHECKS)

    reports = []
    for name in dict.fromkeys(names):
        reports.append(run_check(name, D, args, config))

    payload = reports[0].to_dict() if len(reports) == 1 else [r.to_dict() for r in reports]
    write_json(args.out, payload)
    if args.curves:
        rows = [(r.name, *row) for r in reports for row in r.curve_rows()]
        write_csv(args.curves, ("check", "series", "n", "error"), rows)

    failed = [r.name for r in reports if not r.passed]
    if failed:
        _summary(f"❌ failed checks: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    _summary(f"✅ {len(reports)} check(s) passed")
    return EXIT_OK


def cmd_mds_check(args, settings: Dict[str, Any]) -> int:
    config = MDSConfig(kind=args.generator, C=args.bound, seed=args.seed)
    inc = mds.generate(args.n, args.d, config, args.replication)
    epsilon = args.epsilon if args.epsilon is not None else settings['test'].epsilon
    report = mds.check_conditions(inc, epsilon)
    write_json(args.out, report.to_dict())
    if args.increments:
        write_csv(args.increments, INCREMENT_HEADER, inc.to_rows())
    _summary(f"{'✅' if report.passed else '❌'} {config.kind} conditions (n={args.n}, d={args.d})")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_bench(args, settings: Dict[str, Any]) -> int:
    D = parse_hurst(args.D)
    rows = benchmark(D, args.n, repeats=args.repeats, seed=args.seed)
    if (args.format or 'csv') == 'json':
        write_json(args.out, rows)
    else:
        write_csv(args.out, BENCH_HEADER, ([row[k] for k in BENCH_HEADER] for row in rows))
    _summary(f"✓ benchmark over n={args.n} → {args.out}")
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'covariance': cmd_covariance,
    'verify': cmd_verify,
    'mds-check': cmd_mds_check,
    'bench': cmd_bench,
}


# ══════════════════════════════════════════════════════════════════════════════
# Entry point
# ══════════════════════════════════════════════════════════════════════════════

def _parse(parser: argparse.ArgumentParser, argv: Optional[Sequence[str]]):
    try:
        return parser.parse_args(argv), None
    except SystemExit as e:
        return None, EXIT_USAGE if e.code not in (0, None) else EXIT_OK


def _config_path(argv: Optional[Sequence[str]]) -> Optional[str]:
    peek = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    peek.add_argument('--config')
    known, _ = peek.parse_known_args(argv)
    return known.config


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, validate and execute one subcommand; returns the exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        path = _config_path(argv)
        file_config: Dict[str, Any] = _load_config(path) if path else {}
    except OFBMError as e:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"❌ {e}")
        return EXIT_VALIDATION

    # flat keys act as flag defaults where a subcommand defines them; "commands" scopes per subcommand
    defaults = {k: v for k, v in file_config.items() if k not in ('verify', 'quadrature')}
    try:
        parser = build_parser(defaults)
    except (argparse.ArgumentTypeError, AttributeError, TypeError, ValueError) as e:
        logging.basicConfig(level=logging.INFO)
        logger.error(f"❌ invalid config value: {e}")
        return EXIT_VALIDATION
    args, code = _parse(parser, argv)
    if args is None:
        return code

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s')

    missing = _missing_flags(args)
    if missing:
        logger.error(f"❌ {args.command}: missing {', '.join(missing)} (flag or --config)")
        return EXIT_USAGE

    try:
        verify_overrides = dict(file_config.get('verify', {}))
        if args.threads:
            verify_overrides['threads'] = args.threads
        verify_overrides['seed'] = args.seed
        if file_config.get('quadrature'):
            verify_overrides['quadrature'] = file_config['quadrature']
        settings = {
            'test': TestConfig.from_dict(verify_overrides),
            'quadrature': QuadratureConfig.from_dict(file_config.get('quadrature')),
        }
        return COMMANDS[args.command](args, settings)
    except OFBMError as e:
        logger.error(f"❌ {e}")
        return EXIT_VALIDATION
    except (TypeError, ValueError) as e:
        logger.error(f"❌ invalid input: {e}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\n\n⚠️  Interrupted by user")
        sys.exit(1)
