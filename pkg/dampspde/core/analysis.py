"""
Analysis Module
Verification of simulated ensembles: weak-form residuals, Hölder
regressions of second moments, exponent plans, truncation Cauchy decay
and the u' = v consistency check
"""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd
from scipy import stats

from dampspde.config import config
from dampspde.core.damped_semigroup import adjoint_matrix, mode_matrix, propagators
from dampspde.core.integrator import Trajectory
from dampspde.core.noise_model import AdmissibilityReport, HALF
from dampspde.exceptions import ArtifactError, ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

PATHWISE_NOTE = (
    "Second-moment regressions stand in for pathwise Hölder constants; "
    "no per-realization (Kolmogorov-type) estimate is made."
)

MIN_SCALES = 5
MIN_PATHS = 100


# ---------------------------------------------------------------------------
# Weak residual
# ---------------------------------------------------------------------------

@dataclass
class WeakResidualReport:
    """
    Residuals of the tested weak identity per test mode and checkpoint

    residuals and relative have shape (modes, checkpoints, paths).
    """
    modes: List[Tuple[int, ...]]
    times: np.ndarray
    residuals: np.ndarray = field(repr=False)
    relative: np.ndarray = field(repr=False)
    quadrature: str = "exact per-step time functionals"
    damping: bool = True
    tolerance: float = config.tolerances.weak_residual

    @property
    def max_relative(self) -> float:
        return float(np.max(self.relative)) if self.relative.size else 0.0

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.residuals))) and self.max_relative <= self.tolerance

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, mode in enumerate(self.modes):
            for j, t in enumerate(self.times):
                rows.append({
                    'mode': 'x'.join(str(n) for n in mode),
                    't': float(t),
                    'max_abs_residual': float(np.max(np.abs(self.residuals[i, j]))),
                    'max_relative': float(np.max(self.relative[i, j])),
                })
        return pd.DataFrame(rows)


def _mode_positions(trajectory: Trajectory, test_modes) -> Tuple[List[Tuple[int, ...]], np.ndarray]:
    trunc = trajectory.trunc
    if test_modes is None:
        positions = np.arange(min(trunc.size, 20))
    else:
        positions = []
        for mode in test_modes:
            key = (int(mode),) if np.isscalar(mode) else tuple(int(n) for n in mode)
            if len(key) != trunc.d or key not in trunc.position:
                raise ConfigurationError(f"test mode {key} is not retained by the truncation")
            positions.append(trunc.position[key])
        positions = np.asarray(positions, dtype=int)
    modes = [tuple(int(n) for n in trunc.indices[k]) for k in positions]
    return modes, positions


def weak_residual(
    trajectory: Trajectory,
    test_modes: Optional[Sequence] = None,
    t_checks: Optional[Sequence[float]] = None,
    damping: bool = True,
    tolerance: Optional[float] = None
) -> WeakResidualReport:
    """
    Residual of the weak identity tested against eigenmodes

    For phi = e_k the identity reads
        u(t) - u0 - t v0 + a int_0^t (t - r) u dr + rho sqrt(a) int_0^t (u - u0) dr
            - int_0^t (t - r) F dr - int_0^t (t - r) dN(r) = 0
    with all time integrals re-summed from the recorded per-step
    functionals of the same realization.

    Args:
        trajectory: Trajectory with persisted increments
        test_modes: Multi-indices (or 1D indices); default the first 20 modes
        t_checks: Output times to check; default every stored time after 0
        damping: Include the damping term (False gives the negative control)
        tolerance: Pass threshold on the relative residual

    Returns:
        WeakResidualReport
    """
    record = trajectory.increments
    if record is None:
        raise ArtifactError("weak residual requires persisted increments (run with --persist-increments)")
    tolerance = config.tolerances.weak_residual if tolerance is None else tolerance
    modes, positions = _mode_positions(trajectory, test_modes)
    h = trajectory.dt
    if t_checks is None:
        checks = [i for i, s in enumerate(trajectory.steps) if s > 0]
    else:
        checks = [trajectory.time_index(t) for t in t_checks]
    if not checks:
        raise ConfigurationError("no checkpoint after t = 0")

    # Testing against (e_k, 0): the test pair moves by A_k^*, whose second column carries -a and -rho sqrt(a)
    adjoints = np.stack([adjoint_matrix(mode_matrix(x, trajectory.rho)) for x in trajectory.trunc.a[positions]])
    a = -adjoints[:, 0, 1]
    c = -adjoints[:, 1, 1]
    u0 = trajectory.initial.u[:, positions]
    v0 = trajectory.initial.v[:, positions]
    p = record.p[:, :, positions]
    q = record.q[:, :, positions]
    F = record.forcing[:, :, positions]
    L = record.L[:, :, positions]
    M = record.M[:, :, positions]

    residuals = np.zeros((len(modes), len(checks), trajectory.paths))
    relative = np.zeros_like(residuals)
    for j, index in enumerate(checks):
        n = int(trajectory.steps[index])
        if n > record.n_steps:
            raise ArtifactError(f"checkpoint step {n} beyond the {record.n_steps} recorded steps")
        t = n * h
        lag = t - h * np.arange(1, n + 1)
        I1 = p[:n].sum(axis=0)
        I2 = np.einsum('j,jpm->pm', lag, p[:n]) + q[:n].sum(axis=0)
        D = np.einsum('j,jpm->pm', h * lag + 0.5 * h * h, F[:n])
        N = np.einsum('j,jpm->pm', lag, L[:n]) + M[:n].sum(axis=0)
        u_t = trajectory.u[index][:, positions]
        terms = [u_t, -u0, -t * v0, a * I2, (c * (I1 - t * u0)) if damping else np.zeros_like(u_t), -D, -N]
        R = sum(terms)
        scale = np.max(np.abs(np.stack(terms)), axis=0)
        residuals[:, j, :] = R.T
        relative[:, j, :] = np.divide(np.abs(R), scale, out=np.zeros_like(R), where=scale > 0).T

    report = WeakResidualReport(modes, trajectory.times[checks], residuals, relative,
                                damping=damping, tolerance=tolerance)
    logger.info(f"Weak residual: max relative {report.max_relative:.3e} over {len(modes)} modes "
                f"x {len(checks)} checkpoints (damping={'on' if damping else 'off'})")
    return report


# ---------------------------------------------------------------------------
# Hölder regression
# ---------------------------------------------------------------------------

def holder_output_times(T: float, dt: float, base_points: int = 8, scales: int = 7) -> Tuple[List[int], List[int], List[int]]:
    """
    Output steps for Hölder regressions

    Base points t0 = T/4 + i T/32 snapped to the step grid, offsets
    dt 2^j kept below T/4.

    Returns:
        (all output steps, base steps, offset steps)
    """
    n_steps = int(round(T / dt))
    bases = sorted({int(round((T / 4 + i * T / 32) / dt)) for i in range(base_points)})
    offsets = [2 ** j for j in range(scales) if 2 ** j * dt < T / 4]
    steps = {0, n_steps}
    for b in bases:
        steps.add(b)
        for o in offsets:
            if b + o <= n_steps:
                steps.add(b + o)
    return sorted(steps), bases, offsets


@dataclass
class RegularityReport:
    """Second-moment Hölder regression of one component in one space"""
    component: str
    delta: float
    measured_slope: float
    slope_ci: Tuple[float, float]
    predicted_bound: float
    h_values: np.ndarray = field(repr=False)
    moments: np.ndarray = field(repr=False)
    path_count: int = 0
    base_points: int = 0
    required: bool = True
    tolerance: float = config.tolerances.holder
    band_margin: float = config.tolerances.holder_band
    note: str = PATHWISE_NOTE

    @property
    def exponent(self) -> float:
        return self.measured_slope / 2.0

    @property
    def h_range(self) -> Tuple[float, float]:
        return float(self.h_values.min()), float(self.h_values.max())

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.measured_slope)) and self.exponent >= self.predicted_bound - self.tolerance

    @property
    def band_ok(self) -> bool:
        """Lower 95% bound of slope/2 stays above predicted - band margin"""
        return self.slope_ci[0] / 2.0 > self.predicted_bound - self.band_margin

    def plot_data(self) -> pd.DataFrame:
        return pd.DataFrame({'log2_h': np.log2(self.h_values), 'log2_moment': np.log2(self.moments)})

    def summary(self) -> dict:
        return {
            'component': self.component,
            'delta': self.delta,
            'slope': self.measured_slope,
            'exponent': self.exponent,
            'predicted': self.predicted_bound,
            'ci_low': self.slope_ci[0] / 2.0,
            'ci_high': self.slope_ci[1] / 2.0,
            'paths': self.path_count,
            'required': self.required,
            'passed': self.passed,
            'band_ok': self.band_ok,
        }


def _space_weights(trajectory: Trajectory, component: str, delta: float) -> np.ndarray:
    """X_delta = E_{1/2 + delta/2} x E_{delta/2}: per-mode weights of the component"""
    if component == 'u':
        return trajectory.trunc.weights(0.5 + delta / 2.0)
    if component == 'v':
        return trajectory.trunc.weights(delta / 2.0)
    raise ConfigurationError(f"component must be 'u' or 'v', got {component!r}")


def _flow(trajectory: Trajectory, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """S(t) U0 per mode, batched over paths"""
    E = propagators(trajectory.trunc.a, trajectory.rho, t - trajectory.initial.t)
    u0, v0 = trajectory.initial.u, trajectory.initial.v
    return E[:, 0, 0] * u0 + E[:, 0, 1] * v0, E[:, 1, 0] * u0 + E[:, 1, 1] * v0


def holder_regression(
    ensemble: Trajectory,
    delta: float,
    component: str = 'v',
    lambda_max: float = 0.5,
    h_range: Optional[Tuple[float, float]] = None,
    subtract_flow: bool = True,
    required: bool = True,
    tolerance: Optional[float] = None
) -> RegularityReport:
    """
    Slope of log2 E||X(t0 + h) - X(t0)||^2 against log2 h

    Moments are averaged over paths and the stored base points. With
    subtract_flow the deterministic part S(t)U0 is removed first.

    Args:
        ensemble: Trajectory stored at Hölder output times
        delta: Space index of X_delta
        component: 'u' (in E_{1/2 + delta/2}) or 'v' (in E_{delta/2})
        lambda_max: Largest admissible exponent at delta = 0
        h_range: Optional (h_min, h_max) restriction of the offsets
        subtract_flow: Remove S(t)U0 before differencing
        required: False marks informational probes
        tolerance: Slack on the predicted exponent

    Returns:
        RegularityReport
    """
    tolerance = config.tolerances.holder if tolerance is None else tolerance
    weights = _space_weights(ensemble, component, delta)
    steps = ensemble.steps
    step_set = {int(s): i for i, s in enumerate(steps)}
    dt = ensemble.dt
    _, bases, offsets = holder_output_times(int(steps[-1]) * dt, dt)
    bases = [b for b in bases if b in step_set]
    if h_range is not None:
        offsets = [o for o in offsets if h_range[0] - 1e-15 <= o * dt <= h_range[1] + 1e-15]
    offsets = [o for o in offsets if all(b + o in step_set for b in bases)]
    if len(offsets) < MIN_SCALES or not bases:
        raise ConfigurationError(f"Hölder regression needs at least {MIN_SCALES} dyadic scales, found {len(offsets)}")
    pairs = {o: [(step_set[b], step_set[b + o]) for b in bases] for o in offsets}
    if ensemble.paths < MIN_PATHS:
        logger.warning(f"Hölder regression over {ensemble.paths} paths (< {MIN_PATHS})")

    data = ensemble.u if component == 'u' else ensemble.v
    slot = 0 if component == 'u' else 1
    moments = []
    for o in offsets:
        values = []
        for i, j in pairs[o]:
            diff = data[j] - data[i]
            if subtract_flow:
                diff = diff - (_flow(ensemble, ensemble.times[j])[slot] - _flow(ensemble, ensemble.times[i])[slot])
            values.append(np.sum((weights * diff) ** 2, axis=-1))
        moments.append(float(np.mean(values)))
    moments = np.asarray(moments)
    h_values = np.asarray(offsets, dtype=float) * dt
    if np.any(moments <= 0) or not np.all(np.isfinite(moments)):
        raise NumericalError(f"increment moments of {component} are not positive: {moments}")

    fit = stats.linregress(np.log2(h_values), np.log2(moments))
    quantile = stats.t.ppf(0.975, len(h_values) - 2)
    ci = (fit.slope - quantile * fit.stderr, fit.slope + quantile * fit.stderr)
    report = RegularityReport(
        component=component, delta=float(delta), measured_slope=float(fit.slope), slope_ci=ci,
        predicted_bound=float(lambda_max) - float(delta), h_values=h_values, moments=moments,
        path_count=ensemble.paths, base_points=len(bases), required=required, tolerance=tolerance,
    )
    logger.info(
        f"Hölder {component} delta={delta:g}: slope/2 = {report.exponent:.3f} "
        f"(predicted {report.predicted_bound:.3f}, {'pass' if report.passed else 'FAIL'})"
    )
    return report


def slope_monotone(reports: Sequence[RegularityReport]) -> bool:
    """Measured slopes do not increase with delta beyond the confidence bands"""
    ordered = sorted(reports, key=lambda r: r.delta)
    return all(later.slope_ci[0] <= earlier.slope_ci[1] for earlier, later in zip(ordered, ordered[1:]))


# ---------------------------------------------------------------------------
# Exponent plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Probe:
    """One (alpha, p, delta, lambda) combination to regress"""
    delta: Fraction
    lam: Fraction
    alpha: Fraction
    p: Fraction
    required: bool = True
    label: str = ""


@dataclass
class ExponentPlan:
    """Probes derived from an admissibility report"""
    lambda_max: Fraction
    theta_max: Fraction
    probes: List[Probe] = field(default_factory=list)

    def contains(self, delta, lam) -> bool:
        return any(p.delta == Fraction(delta) and p.lam == Fraction(lam) for p in self.probes)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            'delta': str(p.delta), 'lambda': str(p.lam), 'alpha': str(p.alpha), 'p': str(p.p),
            'required': p.required, 'label': p.label,
        } for p in self.probes])


def exponent_plan(report: AdmissibilityReport, eta: Optional[Fraction] = None) -> ExponentPlan:
    """
    Test matrix of (delta, lambda) probes

    With lambda_max = 1/2 - max(theta_B, theta_C) (capped by eta when
    given), required probes sit inside delta + lambda < lambda_max and two
    informational probes lie beyond it.

    Raises:
        ConfigurationError: Report verdict is false; names the violated condition
    """
    if not report.verdict:
        failed = list(report.violations) or [f"{k} fails" for k, ok in report.verdicts.items() if not ok]
        raise ConfigurationError("inadmissible exponents: " + "; ".join(failed))
    theta = max(report.theta_B, report.theta_C)
    lam = HALF - theta
    if eta is not None:
        lam = min(lam, Fraction(eta))
    p = 2 / (HALF - theta)
    alpha = (HALF + theta) / 2 + 1 / (2 * p)
    beyond = Fraction(1, 10)

    def probe(delta, lam_, required, label):
        return Probe(Fraction(delta), Fraction(lam_), alpha, p, required, label)

    probes = [
        probe(0, 3 * lam / 4, True, "time midpoint"),
        probe(3 * lam / 4, 0, True, "space midpoint"),
        probe(lam / 4, lam / 2, True, "interior"),
        probe(0, lam / 2, True, "time half"),
        probe(lam / 2, 0, True, "space half"),
        probe(lam + beyond, Fraction(1, 20), False, "beyond window (space)"),
        probe(0, lam + beyond, False, "beyond window (time)"),
    ]
    logger.info(f"Exponent plan: lambda_max = {lam}, {len(probes)} probes")
    return ExponentPlan(lambda_max=lam, theta_max=theta, probes=probes)


# ---------------------------------------------------------------------------
# Truncation and derivative checks
# ---------------------------------------------------------------------------

@dataclass
class CauchyReport:
    """Tail energies E||u^(2N)(T) - u^(N)(T)||^2 for nested cutoffs"""
    cutoffs: List[int]
    tail_energies: np.ndarray
    slope: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.tail_energies) < 0))

    @property
    def passed(self) -> bool:
        return self.monotone and self.slope < 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'N': self.cutoffs, 'tail_energy': self.tail_energies})


def truncation_cauchy(trajectory: Trajectory, cutoffs: Sequence[int] = (64, 128, 256), index: int = -1) -> CauchyReport:
    """
    Tail energies of one high-cutoff ensemble at an output time

    Modes decouple in the linear additive case, so the difference of the
    2N and N truncations is the energy of the modes N < k <= 2N.
    """
    trunc = trajectory.trunc
    if 2 * max(cutoffs) > trunc.cutoff:
        raise ConfigurationError(f"cutoff {trunc.cutoff} cannot resolve tails up to {2 * max(cutoffs)}")
    u = trajectory.u[index]
    energies = []
    for n in cutoffs:
        inner = set(trunc.sub_truncation(n).tolist())
        tail = [k for k in trunc.sub_truncation(2 * n) if k not in inner]
        energies.append(float(np.mean(np.sum(u[:, tail] ** 2, axis=-1))))
    energies = np.asarray(energies)
    slope = float(stats.linregress(np.log2(cutoffs), np.log2(energies)).slope) if np.all(energies > 0) else float('nan')
    report = CauchyReport(list(cutoffs), energies, slope)
    logger.info(f"Truncation tails {energies.tolist()} (log-log slope {slope:.3f})")
    return report


@dataclass
class DerivativeReport:
    """Central-difference error of u against v at several spacings"""
    spacings: np.ndarray
    errors: np.ndarray
    observed_order: float
    expected_order: float = 2.0
    slack: float = 0.2

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.observed_order)) and self.observed_order >= self.expected_order - self.slack

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'h': self.spacings, 'rms_error': self.errors})


def derivative_consistency(trajectory: Trajectory, multiples: Sequence[int] = (1, 2, 4)) -> DerivativeReport:
    """
    Check u' = v by central differences on uniformly spaced outputs

    Errors are root-mean-square L^2 distances between
    (u(t + mH) - u(t - mH)) / (2 mH) and v(t) over interior outputs.
    """
    steps = trajectory.steps
    gaps = np.diff(steps)
    if len(gaps) == 0 or np.any(gaps != gaps[0]):
        raise ConfigurationError("derivative consistency needs uniformly spaced output times")
    spacing = gaps[0] * trajectory.dt
    reach = max(multiples)
    centers = np.arange(reach, len(steps) - reach)
    if not len(centers):
        raise ConfigurationError(f"need more than {2 * reach} output times")
    errors = []
    for m in multiples:
        slope = (trajectory.u[centers + m] - trajectory.u[centers - m]) / (2 * m * spacing)
        errors.append(float(np.sqrt(np.mean(np.sum((slope - trajectory.v[centers]) ** 2, axis=-1)))))
    errors = np.asarray(errors)
    spacings = np.asarray(multiples, dtype=float) * spacing
    if np.all(errors > 0):
        order = float(stats.linregress(np.log(spacings), np.log(errors)).slope)
    else:
        order = float('inf')
    report = DerivativeReport(spacings, errors, order)
    logger.info(f"u' = v: errors {errors.tolist()}, observed order {order:.3f}")
    return report
