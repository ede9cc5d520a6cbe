"""
Noise Model Module
Driving noises (point channel at s0, distributed channel with diagonal
covariance), exact admissibility arithmetic and increment sampling
"""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd

from dampspde.config import config
from dampspde.core.spectral_domain import (
    EquationKind,
    PartialSumReport,
    SpectralTruncation,
    dyadic_partial_sums,
    eigenfunction_values,
)
from dampspde.core.streams import Channel, NormalBlockStream, path_generator
from dampspde.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

HALF = Fraction(1, 2)


@dataclass(frozen=True)
class PointChannel:
    """Scalar Brownian motion w2 acting through delta(s - s0)"""
    s0: Tuple[float, ...]


@dataclass(frozen=True)
class CompactCovariance:
    """
    Q1 = sum lambda_n e_n (x) e_n over listed sine modes

    basis holds multi-indices; with basis omitted the lambdas are read
    along the 1D indices 1, 2, ...
    """
    lambdas: Tuple[float, ...]
    basis: Optional[Tuple[Tuple[int, ...], ...]] = None

    def __post_init__(self):
        _validate_lambdas(self.lambdas, self.basis)


@dataclass(frozen=True)
class WhiteNoise1D:
    """Space-time white noise on an interval (lambda_n = 1 up to the cutoff)"""


@dataclass(frozen=True)
class LrValued:
    """Covariance whose square function lies in L^r rather than L^infinity"""
    r: float
    lambdas: Tuple[float, ...]
    basis: Optional[Tuple[Tuple[int, ...], ...]] = None

    def __post_init__(self):
        if not self.r >= 1:
            raise ConfigurationError(f"r must be at least 1, got {self.r}", field="noise.distributed.r")
        _validate_lambdas(self.lambdas, self.basis)


DistributedChannel = Union[CompactCovariance, WhiteNoise1D, LrValued]


def _validate_lambdas(lambdas, basis):
    if any(lam < 0 for lam in lambdas):
        raise ConfigurationError("covariance eigenvalues must be non-negative", field="noise.distributed.lambdas")
    if basis is not None and len(basis) != len(lambdas):
        raise ConfigurationError(
            f"{len(lambdas)} lambdas for {len(basis)} basis functions",
            field="noise.distributed.basis"
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Both noise channels; they are driven by independent streams"""
    point: Optional[PointChannel] = None
    distributed: Optional[DistributedChannel] = None

    def lambdas(self, trunc: SpectralTruncation) -> np.ndarray:
        """
        Covariance eigenvalues aligned with the truncation's mode positions

        Listed modes outside the truncation are dropped with a warning.
        """
        out = np.zeros(trunc.size)
        channel = self.distributed
        if channel is None:
            return out
        if isinstance(channel, WhiteNoise1D):
            if trunc.d != 1:
                raise ConfigurationError("white noise requires a one-dimensional domain", field="noise.distributed")
            return np.ones(trunc.size)
        basis = channel.basis
        if basis is None:
            if trunc.d != 1:
                raise ConfigurationError("basis multi-indices are required when d > 1", field="noise.distributed.basis")
            basis = tuple((n,) for n in range(1, len(channel.lambdas) + 1))
        dropped = 0
        for index, lam in zip(basis, channel.lambdas):
            position = trunc.position.get(tuple(int(n) for n in index))
            if position is None:
                dropped += 1
                continue
            out[position] = lam
        if dropped:
            logger.warning(f"{dropped} covariance modes lie outside the truncation and were dropped")
        return out


def decaying_lambdas(trunc: SpectralTruncation, decay: float) -> CompactCovariance:
    """lambda_n = |n|^(-decay) for every retained mode"""
    norms = np.sqrt(np.sum(trunc.indices.astype(float) ** 2, axis=1))
    return CompactCovariance(
        tuple(float(x) for x in norms ** (-decay)),
        tuple(tuple(int(n) for n in idx) for idx in trunc.indices)
    )


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------

def exact(value) -> Fraction:
    """Exact rational of a user-facing number (decimal text is respected)"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


@dataclass(frozen=True)
class Window:
    """Interval (lower, upper), closed at lower when closed_lower; upper None means infinity"""
    lower: Fraction
    upper: Optional[Fraction]
    closed_lower: bool = False

    @property
    def empty(self) -> bool:
        return self.upper is not None and self.lower >= self.upper

    def contains(self, value) -> bool:
        value = exact(value)
        above = value >= self.lower if self.closed_lower else value > self.lower
        return above and (self.upper is None or value < self.upper)

    def default(self) -> Fraction:
        """Midpoint; a window closed on the left selects its left end"""
        if self.empty:
            raise ConfigurationError(f"empty window {self}")
        if self.closed_lower:
            return self.lower
        if self.upper is None:
            return self.lower + 1
        return (self.lower + self.upper) / 2

    def intersect(self, other: 'Window') -> 'Window':
        if self.lower > other.lower:
            lower, closed = self.lower, self.closed_lower
        elif other.lower > self.lower:
            lower, closed = other.lower, other.closed_lower
        else:
            lower, closed = self.lower, self.closed_lower and other.closed_lower
        uppers = [u for u in (self.upper, other.upper) if u is not None]
        return Window(lower, min(uppers) if uppers else None, closed)

    def __str__(self) -> str:
        left = '[' if self.closed_lower else '('
        right = 'inf' if self.upper is None else _fmt(self.upper)
        return f"{left}{_fmt(self.lower)}, {right})"


def _fmt(value: Fraction) -> str:
    return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


@dataclass
class AdmissibilityReport:
    """
    Exponent windows and verdicts for one (equation, d, q, noise) choice

    Verdict keys: drift_point (G through the point mass, theta_G),
    noise_distributed (B through the distributed channel, theta_B),
    noise_point (C through the point mass, theta_C) and existence
    (exponent arithmetic with a = 0).
    """
    kind: EquationKind
    d: int
    q: Fraction
    q_window: Window
    theta_B_window: Window
    theta_C_window: Window
    theta_G_window: Window
    tau: Fraction
    verdicts: Dict[str, bool] = field(default_factory=dict)
    violations: List[str] = field(default_factory=list)
    theta_B: Optional[Fraction] = None
    theta_C: Optional[Fraction] = None
    theta_G: Optional[Fraction] = None
    weak_formulation: bool = False
    recorded_theta_B_window: Optional[Window] = None
    notes: List[str] = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return not self.violations and all(self.verdicts.values())

    @property
    def lambda_max(self) -> Optional[Fraction]:
        """Largest time-Hölder exponent 1/2 - max(theta_B, theta_C) at delta = 0"""
        if self.theta_B is None or self.theta_C is None:
            return None
        return HALF - max(self.theta_B, self.theta_C)

    def summary(self) -> Dict[str, str]:
        """Flat printable view"""
        out = {
            'equation': self.kind.value,
            'd': str(self.d),
            'q': _fmt(self.q),
            'q_window': str(self.q_window),
            'theta_B_window': str(self.theta_B_window),
            'theta_C_window': str(self.theta_C_window),
            'theta_G_window': str(self.theta_G_window),
            'tau': _fmt(self.tau),
            'theta_B': _fmt(self.theta_B) if self.theta_B is not None else '-',
            'theta_C': _fmt(self.theta_C) if self.theta_C is not None else '-',
            'weak_formulation': str(self.weak_formulation),
            'verdict': 'admissible' if self.verdict else 'inadmissible',
        }
        if self.recorded_theta_B_window is not None:
            out['theta_B_window_recorded'] = str(self.recorded_theta_B_window)
        return out


def q_window(kind: EquationKind, d: int) -> Window:
    """Integrability window of q for the equation kind"""
    if kind is EquationKind.PLATE:
        return Window(Fraction(1), None if d == 1 else Fraction(d, d - 1))
    return Window(Fraction(1), Fraction(2 * d, 2 * d - 1))


def point_mass_window(kind: EquationKind, d: int, q: Fraction) -> Window:
    """theta window for delta(. - s0) in X_{-theta}"""
    q_dual = q / (q - 1)
    lower = Fraction(d) / (2 * q_dual) if kind is EquationKind.PLATE else Fraction(d) / q_dual
    return Window(lower, HALF)


def weak_formulation_available(kind: EquationKind, d: int, q: Fraction) -> bool:
    """Whether D(A*) embeds into continuous functions"""
    order = 4 if kind is EquationKind.PLATE else 2
    return d <= order or q < Fraction(d, d - order)


def check_admissibility(
    kind,
    d: int,
    q,
    noise: NoiseSpec,
    theta_B=None,
    theta_C=None
) -> AdmissibilityReport:
    """
    Windows and verdicts by exact rational arithmetic

    Args:
        kind: Equation kind
        d: Spatial dimension (>= 1)
        q: Integrability exponent
        noise: Noise specification
        theta_B, theta_C: Optional overrides of the default (midpoint) choices

    Returns:
        AdmissibilityReport; inadmissible inputs give verdict False with
        the violated condition named
    """
    kind = EquationKind.parse(kind)
    if int(d) < 1:
        raise ConfigurationError(f"dimension must be at least 1, got {d}", field="domain.lengths")
    d = int(d)
    q = exact(q)
    violations: List[str] = []
    notes: List[str] = []

    qwin = q_window(kind, d)
    if q <= 1:
        violations.append(f"q = {_fmt(q)} violates q > 1")
    elif not qwin.contains(q):
        bound = "d/(d−1)" if kind is EquationKind.PLATE else "2d/(2d−1)"
        violations.append(f"q-window {qwin} violated: q ≥ {bound} (q = {_fmt(q)}, d = {d})")
    q_ok = not violations
    tau = min(q, Fraction(2)) if q > 1 else Fraction(1)

    # Point channel: Lambda = delta(. - s0) lives in X_{-theta_C}
    if noise.point is not None and q_ok:
        theta_C_window = point_mass_window(kind, d, q)
    elif noise.point is not None:
        theta_C_window = Window(HALF, HALF)
    else:
        theta_C_window = Window(Fraction(0), HALF, closed_lower=True)
    theta_G_window = theta_C_window

    recorded = None
    channel = noise.distributed
    if channel is None or isinstance(channel, CompactCovariance):
        theta_B_window = Window(Fraction(0), HALF, closed_lower=True)
    elif isinstance(channel, WhiteNoise1D):
        if kind is EquationKind.WAVE:
            violations.append("white noise is not admissible for the wave equation")
            theta_B_window = Window(HALF, HALF)
        elif d != 1:
            violations.append(f"white noise requires d = 1 (d = {d})")
            theta_B_window = Window(HALF, HALF)
        else:
            theta_B_window = Window(Fraction(1, 4) + 1 / (2 * q), HALF)
            if q <= 2:
                violations.append(f"white noise requires q > 2 (q = {_fmt(q)})")
    else:
        r = exact(channel.r)
        if kind is EquationKind.PLATE:
            if r <= d:
                violations.append(f"L^r covariance requires r > d (r = {_fmt(r)}, d = {d})")
            theta_B_window = Window(Fraction(d) / (2 * r), HALF)
        else:
            if r <= 2 * d:
                violations.append(f"L^r covariance requires r > 2d (r = {_fmt(r)}, d = {d})")
            recorded = Window(Fraction(d) / r, Fraction(1))
            theta_B_window = recorded.intersect(Window(Fraction(0), HALF, closed_lower=True))
            notes.append(f"theta_B window {recorded} recorded; weak solutions restrict it to {theta_B_window}")

    verdicts = {
        'drift_point': not theta_G_window.empty,
        'noise_distributed': not theta_B_window.empty,
        'noise_point': not theta_C_window.empty,
    }

    chosen_B = chosen_C = None
    if verdicts['noise_distributed']:
        chosen_B = _choose(theta_B_window, theta_B, 'theta_B', violations)
    if verdicts['noise_point']:
        chosen_C = _choose(theta_C_window, theta_C, 'theta_C', violations)
        limit = Fraction(3, 2) - 1 / tau
        if chosen_C is not None and not chosen_C < limit:
            violations.append(f"theta_G = {_fmt(chosen_C)} violates theta_G < 3/2 − 1/tau = {_fmt(limit)}")

    existence = chosen_B is not None and chosen_C is not None and max(chosen_B, chosen_C) < HALF
    verdicts['existence'] = existence and q_ok

    report = AdmissibilityReport(
        kind=kind, d=d, q=q, q_window=qwin,
        theta_B_window=theta_B_window, theta_C_window=theta_C_window, theta_G_window=theta_G_window,
        tau=tau, verdicts=verdicts, violations=violations,
        theta_B=chosen_B, theta_C=chosen_C, theta_G=chosen_C,
        weak_formulation=weak_formulation_available(kind, d, q),
        recorded_theta_B_window=recorded, notes=notes,
    )
    if report.verdict:
        logger.info(f"Admissible: {kind.value} d={d} q={_fmt(q)} theta_B={_fmt(chosen_B)} theta_C={_fmt(chosen_C)}")
    else:
        logger.info(f"Inadmissible: {kind.value} d={d} q={_fmt(q)}: {'; '.join(violations)}")
    return report


def _choose(window: Window, override, name: str, violations: List[str]) -> Optional[Fraction]:
    if override is None:
        return window.default()
    value = exact(override)
    if not window.contains(value):
        violations.append(f"{name} = {_fmt(value)} lies outside its window {window}")
        return None
    return value


# ---------------------------------------------------------------------------
# Covariance conditions
# ---------------------------------------------------------------------------

@dataclass
class CovarianceReport:
    """Square-function norms of the truncated covariance and summability proxies"""
    cutoffs: List[int]
    sup_norms: List[float]
    lr_norms: List[float]
    partial_sums: PartialSumReport
    r: Optional[float] = None

    @property
    def sup_norm(self) -> float:
        return self.sup_norms[-1]

    @property
    def summable(self) -> bool:
        """sum lambda_n ||e_n||_inf^2 converges across dyadic truncations"""
        return self.partial_sums.converging

    @property
    def bounded_square_function(self) -> bool:
        """Squared sup norms grow by shrinking dyadic increments"""
        return _tails_shrink(np.square(self.sup_norms))

    @property
    def lr_square_function(self) -> Optional[bool]:
        if self.r is None:
            return None
        return _tails_shrink(np.asarray(self.lr_norms) ** self.r)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'cutoff': self.cutoffs,
            'sup_norm': self.sup_norms,
            'lr_norm': self.lr_norms if self.lr_norms else [np.nan] * len(self.cutoffs),
            'partial_sum': self.partial_sums.partial_sums,
        })


def _tails_shrink(values: np.ndarray) -> bool:
    tails = np.diff(values)
    if len(tails) < 2:
        return True
    if tails[-2] <= 0:
        return bool(tails[-1] <= 0)
    return bool(tails[-1] / tails[-2] < 0.9)


def dyadic_cutoffs(cutoff: int) -> List[int]:
    cutoffs = []
    c = int(cutoff)
    while c >= 1:
        cutoffs.append(c)
        c //= 2
    return sorted(cutoffs)


def covariance_square_function(trunc: SpectralTruncation, lambdas: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """(sum_n lambda_n e_n(s)^2)^{1/2} on the grid nodes"""
    mesh = trunc.transform.mesh()
    points = np.stack([c.ravel() for c in mesh], axis=1)
    out = np.empty(len(points))
    active = lambdas > 0
    for start in range(0, len(points), chunk):
        values = eigenfunction_values(trunc, points[start:start + chunk])[:, active]
        out[start:start + chunk] = np.sqrt(values ** 2 @ lambdas[active])
    return out


def validate_covariance(noise: NoiseSpec, trunc: SpectralTruncation, cutoffs: Optional[Sequence[int]] = None) -> CovarianceReport:
    """
    Grid sup (and L^r) norms of the covariance square function plus the
    dyadic partial sums of sum lambda_n ||e_n||_inf^2

    Args:
        noise: Noise specification (its distributed channel is examined)
        trunc: Truncation providing the grid
        cutoffs: Dyadic cutoffs (default N, N/2, N/4, ...)

    Returns:
        CovarianceReport
    """
    lambdas = noise.lambdas(trunc)
    cutoffs = sorted(int(c) for c in cutoffs) if cutoffs else dyadic_cutoffs(trunc.cutoff)
    sup_bound = float(np.prod(2.0 / np.asarray(trunc.domain.lengths)))
    r = float(noise.distributed.r) if isinstance(noise.distributed, LrValued) else None

    sup_norms, lr_norms = [], []
    for c in cutoffs:
        restricted = np.zeros_like(lambdas)
        keep = trunc.sub_truncation(c)
        restricted[keep] = lambdas[keep]
        values = covariance_square_function(trunc, restricted)
        sup_norms.append(float(values.max()) if values.size else 0.0)
        if r is not None:
            lr_norms.append(float(trunc.transform.lq_norm(values.reshape(trunc.transform.shape), r)))
    partial = dyadic_partial_sums(trunc, lambdas * sup_bound, cutoffs)
    report = CovarianceReport(cutoffs, sup_norms, lr_norms, partial, r)
    logger.info(
        f"Covariance check: sup norm {report.sup_norm:.6g}, summable={report.summable}, "
        f"bounded square function={report.bounded_square_function}"
    )
    return report


# ---------------------------------------------------------------------------
# Increment sampling
# ---------------------------------------------------------------------------

@dataclass
class NoiseIncrements:
    """Per-step increments: dw2 (n,), dbeta (n, N)"""
    dw2: np.ndarray
    dbeta: np.ndarray


class IncrementStream:
    """
    Increments of one path: dw2 ~ N(0, dt) from the point stream and
    dbeta_n ~ N(0, lambda_n dt) from the distributed stream
    """

    def __init__(self, noise: NoiseSpec, trunc: SpectralTruncation, dt: float, seed: int, path_id: int = 0,
                 block: Optional[int] = None):
        if not dt > 0:
            raise ConfigurationError(f"dt must be positive, got {dt}", field="time.dt")
        block = block or config.simulation.draw_block
        self.dt = float(dt)
        self.lambdas = noise.lambdas(trunc)
        self.scales = np.sqrt(self.lambdas * self.dt)
        self._point = NormalBlockStream(path_generator(seed, path_id, Channel.POINT), 1, block) \
            if noise.point is not None else None
        self._distributed = NormalBlockStream(path_generator(seed, path_id, Channel.DISTRIBUTED), trunc.size, block) \
            if noise.distributed is not None else None

    def draw(self, n_steps: int) -> NoiseIncrements:
        if self._point is not None:
            dw2 = np.sqrt(self.dt) * self._point.take(n_steps)[:, 0]
        else:
            dw2 = np.zeros(n_steps)
        if self._distributed is not None:
            dbeta = self.scales * self._distributed.take(n_steps)
        else:
            dbeta = np.zeros((n_steps, len(self.lambdas)))
        return NoiseIncrements(dw2, dbeta)


def sample_increments(
    noise: NoiseSpec,
    dt: float,
    n_steps: int,
    trunc: SpectralTruncation,
    seed: int,
    path_id: int = 0
) -> NoiseIncrements:
    """All increments of one path for n_steps steps"""
    return IncrementStream(noise, trunc, dt, seed, path_id).draw(n_steps)
