"""
Reporting Module
Renders verification reports as text blocks and CSV tables
"""
from pathlib import Path
from typing import Dict, Iterable, List, Optional
import logging

import pandas as pd

from dampspde.config import config
from dampspde.core.analysis import (
    PATHWISE_NOTE, CauchyReport, DerivativeReport, ExponentPlan, RegularityReport, WeakResidualReport
)
from dampspde.core.damped_semigroup import ScaleReport, SectorReport
from dampspde.core.noise_model import AdmissibilityReport, CovarianceReport

logger = logging.getLogger(__name__)

RULE = "=" * 80


class Reporter:
    """
    Static renderers for reports

    Every text block starts with a title line; regression blocks carry
    the pathwise note in their header.
    """

    @staticmethod
    def banner(title: str) -> str:
        return "\n".join([RULE, f"  {title}", RULE])

    @staticmethod
    def admissibility(report: AdmissibilityReport) -> str:
        lines = [Reporter.banner("Admissibility")]
        for key, value in report.summary().items():
            lines.append(f"  {key:<24} {value}")
        for key, ok in report.verdicts.items():
            lines.append(f"  {key:<24} {'ok' if ok else 'violated'}")
        for violation in report.violations:
            lines.append(f"  ! {violation}")
        for note in report.notes:
            lines.append(f"  note: {note}")
        return "\n".join(lines)

    @staticmethod
    def sector(report: SectorReport) -> str:
        lines = [Reporter.banner(f"Resolvent sector scan (phi = {report.phi:.4f}, rho = {report.rho:g})")]
        for cutoff, value in sorted(report.sup_by_cutoff.items()):
            limit = report.limit_at_infinity.get(cutoff, float('nan'))
            lines.append(f"  N = {cutoff:<6} sup = {value:.6g}   lambda -> inf: {limit:.6g}")
        lines.append(f"  variation {report.variation:.3%} (tolerance {report.tolerance:.0%})")
        lines.append(f"  verdict: {'bounded' if report.bounded else 'NOT bounded'}")
        lines.extend(f"  note: {n}" for n in report.notes)
        return "\n".join(lines)

    @staticmethod
    def scale(report: ScaleReport) -> str:
        return "\n".join([
            Reporter.banner(f"Scale check: {report.label}"),
            f"  ratio range [{report.lower:.6g}, {report.upper:.6g}], spread {report.spread:.6g}",
            f"  verdict: {'pass' if report.passed else 'FAIL'}",
        ])

    @staticmethod
    def covariance(report: CovarianceReport) -> str:
        lines = [Reporter.banner("Covariance conditions")]
        lines.append(f"  sup square function  {report.sup_norm:.6g}")
        lines.append(f"  summable             {report.summable}")
        lines.append(f"  bounded square fn    {report.bounded_square_function}")
        if report.lr_square_function is not None:
            lines.append(f"  L^r square fn        {report.lr_square_function}")
        return "\n".join(lines)

    @staticmethod
    def regularity(reports: Iterable[RegularityReport]) -> str:
        lines = [Reporter.banner("Hölder regressions"), f"  {PATHWISE_NOTE}"]
        for r in reports:
            status = 'pass' if r.passed else ('FAIL' if r.required else 'info')
            lines.append(
                f"  {r.component} delta={r.delta:<6g} slope/2={r.exponent:7.4f} "
                f"[{r.slope_ci[0] / 2:7.4f}, {r.slope_ci[1] / 2:7.4f}] "
                f"predicted {r.predicted_bound:7.4f}  {status}"
            )
        return "\n".join(lines)

    @staticmethod
    def weak_residual(report: WeakResidualReport) -> str:
        return "\n".join([
            Reporter.banner("Weak residual"),
            f"  modes {len(report.modes)}, checkpoints {len(report.times)}, quadrature: {report.quadrature}",
            f"  damping term {'included' if report.damping else 'dropped'}",
            f"  max relative residual {report.max_relative:.3e} (tolerance {report.tolerance:g})",
            f"  verdict: {'pass' if report.passed else 'FAIL'}",
        ])

    @staticmethod
    def plan(plan: ExponentPlan) -> str:
        lines = [Reporter.banner(f"Exponent plan (lambda_max = {plan.lambda_max})")]
        for probe in plan.probes:
            tag = 'required' if probe.required else 'informational'
            lines.append(f"  delta={str(probe.delta):<8} lambda={str(probe.lam):<8} "
                         f"alpha={probe.alpha} p={probe.p}  {tag} ({probe.label})")
        return "\n".join(lines)

    @staticmethod
    def cauchy(report: CauchyReport) -> str:
        lines = [Reporter.banner("Truncation tails")]
        for n, e in zip(report.cutoffs, report.tail_energies):
            lines.append(f"  N = {n:<6} E|u(2N) - u(N)|^2 = {e:.6g}")
        lines.append(f"  log-log slope {report.slope:.4f}; verdict {'pass' if report.passed else 'FAIL'}")
        return "\n".join(lines)

    @staticmethod
    def derivative(report: DerivativeReport) -> str:
        lines = [Reporter.banner("u' = v consistency")]
        for h, e in zip(report.spacings, report.errors):
            lines.append(f"  h = {h:.6g}  rms error {e:.6g}")
        lines.append(f"  observed order {report.observed_order:.3f}; verdict {'pass' if report.passed else 'FAIL'}")
        return "\n".join(lines)


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    """Write a report table as CSV with the configured float format"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=config.output.float_format)
    logger.debug(f"Wrote {path}")
    return path


def write_bundle(directory: Path, texts: List[str], tables: Dict[str, pd.DataFrame],
                 name: Optional[str] = "report") -> Path:
    """Text report plus one CSV per table in a directory"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    text_path = directory / f"{name}.txt"
    text_path.write_text("\n\n".join(texts) + "\n", encoding="utf-8")
    for key, frame in tables.items():
        write_frame(frame, directory / f"{key}.csv")
    logger.info(f"Report bundle written to {directory}")
    return text_path
