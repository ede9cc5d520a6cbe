"""
Command Line Interface
check, simulate, verify, gamma, sector and regress subcommands
"""
from pathlib import Path
from typing import Callable, Dict, List, Optional
import argparse
import logging
import math
import sys

from dampspde import __version__
from dampspde.config import config
from dampspde.core.analysis import holder_regression
from dampspde.core.damped_semigroup import certify_sector
from dampspde.core.gamma_calculus import equivalence_bench, equivalence_constants
from dampspde.core.reporting import Reporter, write_bundle, write_frame
from dampspde.database import RunRegistry
from dampspde.exceptions import ArtifactError, ConfigurationError, DampSpdeError, DomainError
from dampspde.processor import SimulationProcessor, load_run
from dampspde.scenario import load_scenario
from dampspde.verifier import RunVerifier

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def _banner():
    print(Reporter.banner(f"{config.app_name} v{__version__}"))


def cmd_check(args) -> int:
    """Print windows and the admissibility verdict of a scenario"""
    scenario = load_scenario(args.config)
    report = scenario.admissibility()
    print(Reporter.admissibility(report))
    return EXIT_OK if report.verdict else EXIT_FAILED


def cmd_simulate(args) -> int:
    """Run all paths of a scenario and write the run directory"""
    _banner()
    scenario = load_scenario(args.config).with_run(args.seed, args.paths, args.persist_increments)
    processor = SimulationProcessor(scenario, out_dir=args.out, threads=args.threads, registry=RunRegistry())
    result = processor.run()
    print(f"  digest      {result.digest}")
    print(f"  scheme      {result.scheme}")
    print(f"  paths       {result.paths} (seed {result.seed})")
    print(f"  output      {result.out_dir}")
    print(f"  wall clock  {result.wall_clock:.2f}s")
    return EXIT_OK


def cmd_verify(args) -> int:
    """Run the invariant suite against a run directory"""
    _banner()
    outcome = RunVerifier(args.run_dir, out_dir=args.out, registry=RunRegistry()).verify()
    for r in outcome.results:
        status = 'pass' if r.passed else ('FAIL' if r.required else 'info')
        print(f"  {r.name:<44} {status}")
    print(f"  report: {outcome.report_path}")
    return EXIT_OK if outcome.passed else EXIT_FAILED


def cmd_gamma(args) -> int:
    """Square-function vs Monte-Carlo gamma norms on random operators"""
    bench = equivalence_bench(args.q, operators=args.operators, rank=args.rank,
                              samples=args.samples, seed=args.seed)
    constants = equivalence_constants(bench)
    registry = RunRegistry()
    print(Reporter.banner("Square-function equivalence"))
    for row in constants.itertuples(index=False):
        print(f"  q = {row.q:<5g} ratio in [{row.ratio_min:.4f}, {row.ratio_max:.4f}]  K_q = {row.K_q:.4f}")
        registry.log_metric('gamma_K_q', row.K_q, {'q': row.q, 'ratio_min': row.ratio_min, 'ratio_max': row.ratio_max,
                                                   'operators': args.operators, 'rank': args.rank,
                                                   'samples': args.samples, 'seed': args.seed})
    if args.out:
        write_frame(bench, Path(args.out) / 'gamma_bench.csv')
        write_frame(constants, Path(args.out) / 'gamma_constants.csv')
    return EXIT_OK if all(math.isfinite(k) for k in constants['K_q']) else EXIT_FAILED


def cmd_sector(args) -> int:
    """Resolvent sector scan for the operator of a scenario"""
    scenario = load_scenario(args.config)
    report = certify_sector(scenario.domain, scenario.kind, scenario.rho, phi=args.phi, cutoffs=args.cutoffs)
    print(Reporter.sector(report))
    if args.out:
        write_frame(report.to_frame(), Path(args.out) / 'sector.csv')
    return EXIT_OK if report.bounded else EXIT_FAILED


def cmd_regress(args) -> int:
    """Hölder regression of one component on a stored run"""
    scenario, trajectory = load_run(args.run_dir)
    lambda_max = args.lambda_max
    if lambda_max is None:
        admissibility = scenario.admissibility()
        if admissibility.lambda_max is None:
            raise ConfigurationError("scenario is inadmissible: " + "; ".join(admissibility.violations))
        lambda_max = float(admissibility.lambda_max)
    report = holder_regression(trajectory, args.delta, args.component, lambda_max=lambda_max,
                               subtract_flow=not args.keep_flow)
    text = Reporter.regularity([report])
    print(text)
    if args.out:
        write_bundle(Path(args.out), [text], {f'holder_{args.component}_{args.delta:g}': report.plot_data()},
                     name='regression')
    return EXIT_OK if report.passed else EXIT_FAILED


COMMANDS: Dict[str, Callable] = {
    'check': cmd_check,
    'simulate': cmd_simulate,
    'verify': cmd_verify,
    'gamma': cmd_gamma,
    'sector': cmd_sector,
    'regress': cmd_regress,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='dampspde', description=config.app_name)
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    check = sub.add_parser('check', help='admissibility windows and verdict')
    check.add_argument('--config', required=True, type=Path, help='scenario TOML file')

    simulate = sub.add_parser('simulate', help='run the paths of a scenario')
    simulate.add_argument('--config', required=True, type=Path, help='scenario TOML file')
    simulate.add_argument('--seed', type=int, help='override run.seed')
    simulate.add_argument('--paths', type=int, help='override run.paths')
    simulate.add_argument('--out', type=Path, help='run directory (default runs/<digest>)')
    simulate.add_argument('--threads', type=int, help='worker threads (default DAMPSPDE_THREADS)')
    simulate.add_argument('--persist-increments', action='store_true', default=None,
                          help='store per-step functionals for the weak residual')

    verify = sub.add_parser('verify', help='invariant suite on a run directory')
    verify.add_argument('run_dir', type=Path)
    verify.add_argument('--out', type=Path, help='report directory (default <run_dir>/verify)')

    gamma = sub.add_parser('gamma', help='square-function vs Monte-Carlo gamma norms')
    gamma.add_argument('--q', type=float, nargs='+', default=[1.2, 1.5, 2.0, 4.0])
    gamma.add_argument('--operators', type=int, default=200)
    gamma.add_argument('--rank', type=int, default=8)
    gamma.add_argument('--samples', type=int, default=10_000)
    gamma.add_argument('--seed', type=int, default=0)
    gamma.add_argument('--out', type=Path)

    sector = sub.add_parser('sector', help='resolvent sector scan')
    sector.add_argument('--config', required=True, type=Path, help='scenario TOML file')
    sector.add_argument('--phi', type=float, default=math.pi / 4)
    sector.add_argument('--cutoffs', type=int, nargs='+', default=[64, 128, 256])
    sector.add_argument('--out', type=Path)

    regress = sub.add_parser('regress', help='Hölder regression on a run directory')
    regress.add_argument('run_dir', type=Path)
    regress.add_argument('--delta', type=float, default=0.0)
    regress.add_argument('--component', choices=('u', 'v'), default='v')
    regress.add_argument('--lambda-max', type=float, help='default: from the admissibility report')
    regress.add_argument('--keep-flow', action='store_true', help='do not subtract S(t)U0')
    regress.add_argument('--out', type=Path)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch, and map errors to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DomainError, ArtifactError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DampSpdeError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
