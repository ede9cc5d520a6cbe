"""
Run Verifier
Binds the invariant suite to a run directory and collects the verdicts
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional
import logging

import numpy as np
import pandas as pd

from dampspde.core.analysis import (
    MIN_SCALES, derivative_consistency, exponent_plan, holder_regression, slope_monotone,
    truncation_cauchy, weak_residual
)
from dampspde.core.damped_semigroup import certify_sector, extrapolation_scale_check, scale_identification_check
from dampspde.core.integrator import Trajectory
from dampspde.core.noise_model import validate_covariance
from dampspde.core.reporting import Reporter, write_bundle
from dampspde.database import RunRegistry
from dampspde.exceptions import ArtifactError
from dampspde.processor import load_run
from dampspde.scenario import Scenario

logger = logging.getLogger(__name__)

SECTOR_CUTOFFS = {1: (64, 128, 256), 2: (8, 16, 32)}
NEGATIVE_CONTROL_FLOOR = 1e-2
CAUCHY_MIN_CUTOFF = 512
DERIVATIVE_MIN_OUTPUTS = 9


@dataclass
class CheckResult:
    """One verdict of the suite"""
    name: str
    passed: bool
    required: bool = True
    value: Optional[float] = None
    details: Dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.required and not self.passed


@dataclass
class VerificationOutcome:
    results: List[CheckResult]
    report_path: Path

    @property
    def passed(self) -> bool:
        return not any(r.failed for r in self.results)


def verdict_frame(results: List[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame([{
        'check': r.name, 'passed': r.passed, 'required': r.required, 'value': r.value
    } for r in results])


class RunVerifier:
    """
    Invariant suite for one run directory

    Checks are selected from the scenario: distributed noise adds the
    covariance conditions, persisted increments add the weak residual,
    Hölder output times add the regressions and high linear additive
    cutoffs add the truncation tails.
    """

    def __init__(self, run_dir: Path, out_dir: Optional[Path] = None, registry: Optional[RunRegistry] = None):
        self.run_dir = Path(run_dir)
        self.out_dir = Path(out_dir) if out_dir else self.run_dir / 'verify'
        self.registry = registry
        self.texts: List[str] = []
        self.tables: Dict[str, pd.DataFrame] = {}
        self.results: List[CheckResult] = []

    def _record(self, result: CheckResult):
        self.results.append(result)
        level = logging.INFO if result.passed or not result.required else logging.ERROR
        logger.log(level, f"Check {result.name}: {'pass' if result.passed else 'FAIL'}"
                          f"{'' if result.required else ' (informational)'}")

    def verify(self) -> VerificationOutcome:
        scenario, trajectory = load_run(self.run_dir)
        if scenario.persist_increments and trajectory.increments is None:
            raise ArtifactError(f"scenario persists increments but {self.run_dir} holds none")

        admissibility = self._admissibility(scenario)
        if scenario.distributed is not None:
            self._covariance(scenario)
        self._sector(scenario)
        self._scales(scenario)
        if admissibility.weak_formulation:
            self._weak_residual(scenario, trajectory)
        if scenario.output.kind == 'holder' and admissibility.verdict:
            self._holder(scenario, trajectory, admissibility)
        elif scenario.output.kind == 'uniform' and len(trajectory.steps) >= DERIVATIVE_MIN_OUTPUTS:
            self._derivative(trajectory)
        if scenario.coefficient_set().linear_additive and scenario.d == 1 \
                and scenario.cutoff >= CAUCHY_MIN_CUTOFF:
            self._cauchy(trajectory)

        self.tables['verdicts'] = verdict_frame(self.results)
        report_path = write_bundle(self.out_dir, self.texts, self.tables)
        self._register(scenario)
        outcome = VerificationOutcome(self.results, report_path)
        logger.info(f"Verification of {self.run_dir}: {'pass' if outcome.passed else 'FAIL'} "
                    f"({sum(r.failed for r in self.results)} required checks failed)")
        return outcome

    # -- individual checks -----------------------------------------------

    def _admissibility(self, scenario: Scenario):
        report = scenario.admissibility()
        self.texts.append(Reporter.admissibility(report))
        self._record(CheckResult('admissibility', report.verdict, details=report.summary()))
        return report

    def _covariance(self, scenario: Scenario):
        report = validate_covariance(scenario.noise, scenario.truncation())
        self.texts.append(Reporter.covariance(report))
        self.tables['covariance'] = report.to_frame()
        kind = scenario.distributed.kind
        if kind == 'compact':
            passed, required = report.summable, True
        elif kind == 'lr':
            passed, required = bool(report.lr_square_function), True
        else:
            # White noise has an unbounded square function by construction
            passed, required = True, False
        self._record(CheckResult('covariance', passed, required, report.sup_norm))

    def _sector(self, scenario: Scenario):
        cutoffs = SECTOR_CUTOFFS.get(scenario.d, (4, 8, 16))
        report = certify_sector(scenario.domain, scenario.kind, scenario.rho, cutoffs=cutoffs)
        self.texts.append(Reporter.sector(report))
        self.tables['sector'] = report.to_frame()
        self._record(CheckResult('sector', report.bounded, value=report.variation,
                                 details={str(k): v for k, v in report.sup_by_cutoff.items()}))

    def _scales(self, scenario: Scenario):
        trunc = scenario.truncation()
        reports = [
            scale_identification_check(trunc, scenario.rho, 0.25),
            extrapolation_scale_check(trunc, scenario.rho, 0.5),
            extrapolation_scale_check(trunc, scenario.rho, 1.0),
        ]
        for report in reports:
            self.texts.append(Reporter.scale(report))
            self.tables[f'scale_{report.label}'] = report.to_frame()
            self._record(CheckResult(f'scale {report.label}', report.passed, value=report.spread))

    def _weak_residual(self, scenario: Scenario, trajectory: Trajectory):
        if trajectory.increments is None:
            logger.warning("Weak residual not evaluable: increments were not persisted")
            return
        exact = scenario.coefficient_set().linear_additive
        report = weak_residual(trajectory)
        self.texts.append(Reporter.weak_residual(report))
        self.tables['weak_residual'] = report.to_frame()
        self._record(CheckResult('weak residual', report.passed, exact, report.max_relative))
        if exact and np.any(trajectory.u != 0):
            control = weak_residual(trajectory, damping=False)
            self.texts.append(Reporter.weak_residual(control))
            self._record(CheckResult('weak residual without damping',
                                     control.max_relative >= NEGATIVE_CONTROL_FLOOR, value=control.max_relative))

    def _holder(self, scenario: Scenario, trajectory: Trajectory, admissibility):
        plan = exponent_plan(admissibility, scenario.initial.eta)
        self.texts.append(Reporter.plan(plan))
        self.tables['exponent_plan'] = plan.to_frame()
        lambda_max = float(plan.lambda_max)
        reports = []
        for delta in scenario.output.deltas:
            for component in ('u', 'v'):
                report = holder_regression(trajectory, delta, component, lambda_max=lambda_max,
                                           required=delta < lambda_max)
                reports.append(report)
                self.tables[f'holder_{component}_{delta:g}'] = report.plot_data()
                self._record(CheckResult(f'holder {component} delta={delta:g}', report.passed,
                                         report.required, report.exponent, report.summary()))
        self.texts.append(Reporter.regularity(reports))
        self.tables['holder'] = pd.DataFrame([r.summary() for r in reports])
        for component in ('u', 'v'):
            series = [r for r in reports if r.component == component]
            if len(series) > 1:
                self._record(CheckResult(f'holder {component} slopes non-increasing in delta',
                                         slope_monotone(series), required=False))
        logger.info(f"Hölder regressions over at least {MIN_SCALES} scales: {len(reports)} reports")

    def _derivative(self, trajectory: Trajectory):
        report = derivative_consistency(trajectory)
        self.texts.append(Reporter.derivative(report))
        self.tables['derivative'] = report.to_frame()
        # Second order holds only in the drift-dominated regime
        self._record(CheckResult("u' = v", report.passed, False, report.observed_order))

    def _cauchy(self, trajectory: Trajectory):
        report = truncation_cauchy(trajectory)
        self.texts.append(Reporter.cauchy(report))
        self.tables['cauchy'] = report.to_frame()
        self._record(CheckResult('truncation tails', report.passed, value=report.slope))

    def _register(self, scenario: Scenario):
        if self.registry is None:
            return
        digest = scenario.digest()
        run_dir = self.run_dir.resolve()
        run_id = next((r['id'] for r in self.registry.get_recent_runs(limit=100)
                       if r['digest'] == digest and Path(r['out_dir']).resolve() == run_dir), None)
        if run_id is None:
            logger.warning(f"No registered run for {self.run_dir}; reports are stored without a run id")
        for r in self.results:
            self.registry.log_report(r.name, r.passed, r.value, r.details, run_id)
