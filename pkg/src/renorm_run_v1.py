#!/usr/bin/env python3
"""
Neumann renormalized-solution runner (v1).

Flow:
1) Read the sectioned run config (configs/*.cfg); the subcommand picks the
   experiment, --out overrides output.directory.
2) Build the mesh, coefficient c, datum f and the operator family.
3) Run the experiment:
   - solve:      validate assumptions, one Picard/Newton solve at experiment.epsilon
                 (0 = the unregularized operator with the projected datum)
   - continue:   epsilon-continuation with estimate curves and the saturation check
   - stability:  perturbed data (or convection) members against the reference
   - zero-order: the problem with lambda, no compatibility condition, median reported
   - diagnose:   assumption report, datum compatibility, mesh summary, Poincare ratios
4) Write <experiment>_<hash12>.json and the curve CSVs into the output directory.

Exit codes: 0 ok, 1 unexpected, 2 config, 3 invalid parameter, 4 validation,
5 compatibility, 6 non-convergence, 7 numeric, 8 report I/O. Failures also
print a JSON error block on stderr.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np

# Ensure the script directory is on sys.path so `import neumann_renorm` works both when
# executed as a script (`python src/renorm_run_v1.py`) and when imported as a module.
_TOOLS_DIR = Path(__file__).resolve().parent
if str(_TOOLS_DIR) not in sys.path:
    sys.path.insert(0, str(_TOOLS_DIR))

from neumann_renorm import __version__
from neumann_renorm.calculus import lp_norm, median, nodal_gap, poincare_ratio, truncate_field, w1p_seminorm
from neumann_renorm.config import (
    RunConfig,
    build_problem,
    config_to_dict,
    format_config,
    load_config,
)
from neumann_renorm.data import build_field
from neumann_renorm.errors import NeumannError, ValidationError
from neumann_renorm.logs import LOG_FORMAT, STAGE_LABELS, level_from_verbosity, log_stage
from neumann_renorm.mesh import Mesh, quadrature_rule, write_snapshot
from neumann_renorm.model import (
    OperatorSpec,
    RegularizedSpec,
    SampleGrid,
    prepare_datum,
    project_datum,
    regularize,
    unregularized,
    validate_assumptions,
)
from neumann_renorm.renorm import (
    DataMember,
    apriori_report,
    epsilon_continuation,
    stability_experiment,
    weak_upgrade_check,
)
from neumann_renorm.report import RunReport, config_hash, emit_report
from neumann_renorm.solver import WeakSolution, fixed_point_solve, zero_order_solve

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    'solve': 'solve',
    'continue': 'continuation',
    'stability': 'stability',
    'zero-order': 'zero_order',
    'diagnose': 'diagnose',
}


def _format_param_value(value: Any) -> str:
    return repr(value)


def log_stage_labels() -> None:
    logger.info("Stage labels (short -> long):")
    for short, long_name in STAGE_LABELS:
        logger.info("  %s = %s", short, long_name)


def log_effective_params(args: argparse.Namespace, config: RunConfig) -> None:
    logger.info("Effective parameters:")
    for section, values in config_to_dict(config).items():
        for key, value in values.items():
            logger.info("  %s.%s = %s", section, key, value)
    logger.info("CLI arguments (post-defaults):")
    for key, value in sorted(vars(args).items()):
        logger.info("  %s = %s", key, _format_param_value(value))


class RenormRun:
    """One experiment of one config; produces a RunReport."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.experiment = config.experiment
        self.mesh: Optional[Mesh] = None
        self.spec: Optional[OperatorSpec] = None
        self.final_field = None
        self._started = time.perf_counter()

    def run(self) -> RunReport:
        with log_stage('INIT'):
            self.mesh, self.spec = build_problem(self.config)
        runners = {
            'solve': self.run_solve,
            'continuation': self.run_continuation,
            'stability': self.run_stability,
            'zero_order': self.run_zero_order,
            'diagnose': self.run_diagnose,
        }
        blocks, curves, timings = runners[self.experiment.kind]()
        if self.config.output.wall_clock:
            timings['wall_seconds'] = time.perf_counter() - self._started
        echo = config_to_dict(self.config)
        echo['output'].pop('directory', None)
        return RunReport(
            experiment=self.experiment.kind,
            config=echo,
            config_hash=config_hash(format_config(self.config, include_output_directory=False)),
            version=__version__,
            seed=self.experiment.seed,
            blocks=blocks,
            timings=timings,
            curves=curves,
        )

    def _assumptions(self, strict: bool) -> dict[str, Any]:
        report = validate_assumptions(self.spec, SampleGrid(seed=self.experiment.seed))
        # raw data are made compatible by the datum projection
        failed = [name for name in report.failed() if name != 'compatibility']
        if strict and failed:
            raise ValidationError(f"Operator assumptions failed: {', '.join(failed)}", failed=failed)
        return report.to_dict()

    def _regularized(self, require_compat: bool) -> RegularizedSpec:
        epsilon = self.experiment.epsilon
        if epsilon == 0.0:
            return unregularized(self.spec, datum=project_datum(self.spec.f, self.mesh, require_compat))
        datum = prepare_datum(self.spec.f, self.mesh, epsilon, require_compat)
        return regularize(self.spec, epsilon, datum=datum)

    def _solution_block(self, solution: WeakSolution, rspec: RegularizedSpec) -> dict[str, Any]:
        field = solution.field
        self.final_field = field
        block = solution.to_dict()
        block.update({
            'epsilon': rspec.epsilon,
            'delta': rspec.delta,
            'nodal_gap': nodal_gap(field),
            'lp_norm': lp_norm(field, rspec.p),
            'w1p_seminorm': w1p_seminorm(field, rspec.p),
            'max_abs': lp_norm(field, float('inf')),
            'datum_integral': rspec.f.integral(),
            'datum_l1': lp_norm(rspec.f, 1.0),
        })
        return block

    @staticmethod
    def _timings(solution: WeakSolution, stages: int = 1) -> dict[str, Any]:
        return {
            'stages': stages,
            'picard_iterations': solution.iterations,
            'newton_iterations': int(sum(solution.inner_newton_counts)),
        }

    def _solve(self) -> tuple[dict[str, Any], RegularizedSpec, WeakSolution]:
        assumptions = self._assumptions(strict=True)
        rspec = self._regularized(require_compat=not self.spec.has_lambda)
        with log_stage(f"EPS_{rspec.epsilon:.0e}"):
            if self.spec.has_lambda:
                solution = zero_order_solve(self.mesh, rspec, self.config.solver)
            else:
                solution = fixed_point_solve(self.mesh, rspec, self.config.solver)
        return assumptions, rspec, solution

    def _solve_blocks(self, assumptions: dict[str, Any], rspec: RegularizedSpec, solution: WeakSolution) -> dict:
        estimates = apriori_report(solution.field, rspec, self.config.continuation)
        return {
            'assumptions': assumptions,
            'solution': self._solution_block(solution, rspec),
            'estimates': estimates.summary(),
        }

    def run_solve(self) -> tuple[dict, dict, dict]:
        assumptions, rspec, solution = self._solve()
        return self._solve_blocks(assumptions, rspec, solution), {}, self._timings(solution)

    def run_zero_order(self) -> tuple[dict, dict, dict]:
        """
        Solve with the zero-order terms and report the median (no shift is
        applied) and the balance int (eps|u|^{p-2}u + lambda(u)) = int f_eps
        obtained by testing with the constant 1.
        """
        assumptions, rspec, solution = self._solve()
        blocks = self._solve_blocks(assumptions, rspec, solution)
        field = solution.field
        rule = quadrature_rule(self.mesh.dimension, self.config.solver.quadrature_order)
        X = self.mesh.quadrature_points(rule).reshape(-1, self.mesh.dimension)
        U = field.at_quadrature(rule).reshape(-1)
        weights = self.mesh.quadrature_weights(rule)
        reaction = float(np.sum(weights * rspec.zero_order(X, U).reshape(weights.shape)))
        datum = rspec.f.integral()
        blocks['zero_order'] = {
            'median': solution.median,
            'median_strict': median(field, strict=True),
            'reaction_integral': reaction,
            'datum_integral': datum,
            'balance_residual': abs(reaction - datum),
        }
        logger.info(f"zero-order: median={solution.median:.6g} balance residual={abs(reaction - datum):.3e}")
        return blocks, {}, self._timings(solution)

    def run_continuation(self) -> tuple[dict, dict, dict]:
        assumptions = self._assumptions(strict=True)
        renorm = epsilon_continuation(self.mesh, self.spec, self.config.continuation, self.config.solver)
        final = renorm.final_stage
        upgrade = weak_upgrade_check(renorm, final.rspec, self.experiment.upgrade_levels)
        blocks = {
            'assumptions': assumptions,
            'continuation': renorm.to_dict(),
            'solution': self._solution_block(final.solution, final.rspec),
            'estimates': final.estimates.summary(),
            'upgrade': upgrade.to_dict(),
        }
        timings = {
            'stages': len(renorm.stages),
            'picard_iterations': sum(stage.solution.iterations for stage in renorm.stages),
            'newton_iterations': int(sum(sum(stage.solution.inner_newton_counts) for stage in renorm.stages)),
        }
        return blocks, dict(final.estimates.curves()), timings

    def _members(self) -> list[DataMember]:
        members = []
        if self.experiment.stability_mode == 'datum':
            g = build_field(self.experiment.stability_perturbation, self.mesh, self.spec.p, base_dir=self.config.base_dir)
            g = project_datum(g, self.mesh, require_compat=not self.spec.has_lambda)
            for j in self.experiment.stability_members:
                members.append(DataMember(self.spec.f + g.scaled(1.0 / j), label=f"f+g/{j}"))
        else:
            phi = self.spec.phi
            dphi = self.spec.convection_ds
            for j in self.experiment.stability_members:
                weight = 1.0 - 1.0 / j
                members.append(DataMember(
                    self.spec.f,
                    phi=lambda x, s, w=weight: w * phi(x, s),
                    dphi_ds=lambda x, s, w=weight: w * dphi(x, s),
                    label=f"(1-1/{j})Phi",
                ))
        return members

    def run_stability(self) -> tuple[dict, dict, dict]:
        assumptions = self._assumptions(strict=True)
        table = stability_experiment(
            self.mesh, self.spec, self._members(),
            schedule=self.config.continuation, options=self.config.solver,
        )
        blocks = {'assumptions': assumptions, 'stability': table.to_dict()}
        timings = {
            'members': len(table.rows),
            'picard_iterations': sum(row.iterations for row in table.rows),
        }
        return blocks, table.curves(), timings

    def run_diagnose(self) -> tuple[dict, dict, dict]:
        mesh, spec = self.mesh, self.spec
        f = spec.f
        ratios = {'datum': poincare_ratio(f, spec.p)}
        for k in self.config.continuation.k_levels:
            ratios[f"datum k={k:g}"] = poincare_ratio(truncate_field(f, k), spec.p)
        blocks = {
            'assumptions': self._assumptions(strict=False),
            'datum': {
                'integral': f.integral(),
                'l1': lp_norm(f, 1.0),
                'compatible': spec.is_compatible(),
                'median': median(f),
            },
            'mesh': {
                'dimension': mesh.dimension,
                'nodes': mesh.n_nodes,
                'elements': mesh.n_elements,
                'total_measure': mesh.total_measure,
                'diameter': mesh.diameter,
            },
            'poincare_ratio': ratios,
        }
        return blocks, {}, {'stages': 0}


def run_config(
    path: Path,
    experiment: Optional[str] = None,
    out: Optional[Path] = None,
) -> int:
    """
    Run one config file; returns the process exit status.

    Errors are logged and echoed as a JSON block on stderr.
    """
    try:
        config = load_config(path)
        if experiment is not None:
            config = config.with_experiment(experiment)
        if out is not None:
            config = config.with_output_directory(out)
        runner = RenormRun(config)
        report = runner.run()
        with log_stage('REPORT'):
            written = emit_report(report, config.output.directory, config.output.formats)
            if config.output.snapshot and runner.final_field is not None:
                written.append(write_snapshot(Path(config.output.directory) / f"{report.stem}_field.snap", runner.mesh, runner.final_field))
        for item in written:
            logger.info("Saved to: %s", item)
        return 0
    except NeumannError as exc:
        logger.error("Error: %s", exc.message)
        sys.stderr.write(json.dumps({'error': exc.to_dict()}, sort_keys=True) + '\n')
        return exc.exit_code
    except Exception as exc:
        logger.exception("Unexpected error: %s", exc)
        block = {'type': exc.__class__.__name__, 'code': 1, 'message': str(exc), 'details': {}}
        sys.stderr.write(json.dumps({'error': block}, sort_keys=True) + '\n')
        return 1


def main(argv: Optional[list[str]] = None) -> int:
    def configure_logging(verbosity: int) -> None:
        logging.basicConfig(level=level_from_verbosity(verbosity), format=LOG_FORMAT, force=True)

    parser = argparse.ArgumentParser(
        description='Weak and renormalized solutions of nonlinear Neumann problems (v1)',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest='command', required=True)
    for name in (*SUBCOMMANDS, 'validate-config'):
        cmd = sub.add_parser(name, help=f"{name} experiment" if name in SUBCOMMANDS else 'parse and echo a config')
        cmd.add_argument('--config', required=True, type=Path, help='Run config path')
        cmd.add_argument('--out', type=Path, default=None, help='Output directory (overrides output.directory)')
        cmd.add_argument('-v', '--verbose', action='count', default=0, help='Verbose output; repeat for more (-vv)')

    args = parser.parse_args(argv)
    configure_logging(int(args.verbose))

    if args.command == 'validate-config':
        try:
            config = load_config(args.config)
        except NeumannError as exc:
            logger.error("Error: %s", exc.message)
            sys.stderr.write(json.dumps({'error': exc.to_dict()}, sort_keys=True) + '\n')
            return exc.exit_code
        sys.stdout.write(format_config(config))
        return 0

    log_stage_labels()
    try:
        preview = load_config(args.config)
        log_effective_params(args, preview)
    except NeumannError:
        pass   # reported by run_config
    try:
        return run_config(args.config, SUBCOMMANDS[args.command], args.out)
    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return 1


if __name__ == '__main__':
    sys.exit(main())
