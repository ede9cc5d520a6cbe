"""
Spectral Domain Module
Dirichlet-Laplacian eigenstructure on boxes, sine transforms and
fractional-space norms
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import product
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd
from scipy import fft, integrate

from dampspde.exceptions import ConfigurationError, DomainError, NumericalError

logger = logging.getLogger(__name__)


class EquationKind(Enum):
    """Equation family; the value names the scenario keyword"""
    PLATE = "plate"
    WAVE = "wave"

    @property
    def power(self) -> int:
        """Exponent p in a = mu^p"""
        return 2 if self is EquationKind.PLATE else 1

    @classmethod
    def parse(cls, value) -> 'EquationKind':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown equation kind '{value}' (expected plate or wave)")


@dataclass(frozen=True)
class BoxDomain:
    """
    Rectangular box (0, L_1) x ... x (0, L_d)

    grid_points_per_axis = None selects the minimum resolving grid.
    """
    lengths: Tuple[float, ...]
    grid_points_per_axis: Optional[int] = None

    def __post_init__(self):
        lengths = tuple(float(length) for length in self.lengths)
        object.__setattr__(self, 'lengths', lengths)
        if len(lengths) < 1:
            raise ConfigurationError("box needs at least one axis", field="domain.lengths")
        if any(not np.isfinite(length) or length <= 0 for length in lengths):
            raise ConfigurationError(f"box lengths must be positive, got {lengths}", field="domain.lengths")
        if self.grid_points_per_axis is not None and self.grid_points_per_axis < 1:
            raise ConfigurationError("grid points must be positive", field="domain.grid_points")

    @property
    def d(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, point: Sequence[float]) -> bool:
        """Strict interior membership"""
        return all(0.0 < s < length for s, length in zip(point, self.lengths))


@dataclass(frozen=True)
class Mode:
    """A single sine eigenmode"""
    index: Tuple[int, ...]
    mu: float
    a: float


@dataclass(frozen=True)
class FractionalNormSpec:
    """Norm of E_theta realized in L^q"""
    theta: float
    q: float = 2.0

    def __post_init__(self):
        if not -1.0 <= self.theta <= 1.0:
            raise ConfigurationError(f"theta must lie in [-1, 1], got {self.theta}")
        if not self.q > 1.0:
            raise ConfigurationError(f"q must exceed 1, got {self.q}")


@dataclass(frozen=True, eq=False)
class SpectralTruncation:
    """
    Retained sine modes of one box, sorted by mu ascending

    Arrays are indexed by mode position; indices[k] is the multi-index
    of position k.
    """
    kind: EquationKind
    domain: BoxDomain
    cutoff: int
    indices: np.ndarray
    mu: np.ndarray
    a: np.ndarray
    w_shift: float = 1.0

    def __post_init__(self):
        if self.cutoff < 1:
            raise ConfigurationError("cutoff must be at least 1", field="truncation.cutoff")
        if self.w_shift <= 0:
            raise ConfigurationError("w_shift must be positive", field="truncation.w_shift")
        for arr in (self.indices, self.mu, self.a):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.mu)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def modes(self) -> List[Mode]:
        return [
            Mode(tuple(int(n) for n in idx), float(mu), float(a))
            for idx, mu, a in zip(self.indices, self.mu, self.a)
        ]

    @cached_property
    def position(self) -> dict:
        """Multi-index -> mode position"""
        return {tuple(int(n) for n in idx): k for k, idx in enumerate(self.indices)}

    @cached_property
    def transform(self) -> 'SineTransform':
        """Grid transform at the configured (or minimum) resolution"""
        return SineTransform(self)

    @cached_property
    def dealiased_transform(self) -> 'SineTransform':
        """Grid transform at twice the minimum resolution, for pointwise maps"""
        points = 2 * minimum_grid_points(self.cutoff) + 1
        if self.domain.grid_points_per_axis:
            points = max(points, self.domain.grid_points_per_axis)
        return SineTransform(self, points)

    def weights(self, theta: float) -> np.ndarray:
        """Per-mode weights a_k^theta of E_theta"""
        return self.a ** theta

    def sub_truncation(self, cutoff: int) -> np.ndarray:
        """Positions of modes whose largest index component is <= cutoff"""
        return np.flatnonzero(self.indices.max(axis=1) <= cutoff)


def minimum_grid_points(cutoff: int) -> int:
    """Smallest per-axis grid resolving modes up to cutoff"""
    return 2 * cutoff + 1


def enumerate_modes(
    domain: BoxDomain,
    kind,
    cutoff: int,
    w_shift: float = 1.0
) -> SpectralTruncation:
    """
    Enumerate all sine modes with index components in 1..cutoff

    Args:
        domain: Box domain
        kind: Equation kind (plate: a = mu^2, wave: a = mu)
        cutoff: Per-axis cutoff N
        w_shift: Shift w used for fractional powers of w - A

    Returns:
        Truncation sorted by mu ascending
    """
    if not isinstance(domain, BoxDomain):
        raise ConfigurationError(f"only box domains are supported, got {type(domain).__name__}")
    if int(cutoff) < 1:
        raise ConfigurationError(f"cutoff must be at least 1, got {cutoff}", field="truncation.cutoff")
    kind = EquationKind.parse(kind)
    cutoff = int(cutoff)

    if domain.grid_points_per_axis and domain.grid_points_per_axis < minimum_grid_points(cutoff):
        raise ConfigurationError(
            f"grid with {domain.grid_points_per_axis} points per axis does not resolve cutoff {cutoff} "
            f"(needs {minimum_grid_points(cutoff)})",
            field="domain.grid_points"
        )

    indices = np.array(list(product(range(1, cutoff + 1), repeat=domain.d)), dtype=np.int64)
    lengths = np.asarray(domain.lengths)
    mu = np.sum((np.pi * indices / lengths) ** 2, axis=1)
    order = np.argsort(mu, kind='stable')
    indices, mu = indices[order], mu[order]
    a = mu ** kind.power

    logger.debug(f"Enumerated {len(mu)} {kind.value} modes (d={domain.d}, cutoff={cutoff})")
    return SpectralTruncation(kind, domain, cutoff, indices, mu, a, float(w_shift))


def eigenfunction_values(trunc: SpectralTruncation, points: np.ndarray) -> np.ndarray:
    """
    Evaluate e_k at points

    Args:
        trunc: Truncation
        points: Array of shape (P, d)

    Returns:
        Array of shape (P, N) with e_k(points[p])
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lengths = np.asarray(trunc.domain.lengths)
    norm = np.prod(np.sqrt(2.0 / lengths))
    phases = np.pi * points[:, None, :] * trunc.indices[None, :, :] / lengths
    return norm * np.prod(np.sin(phases), axis=2)


def point_mass_coefficients(trunc: SpectralTruncation, s0: Sequence[float]) -> np.ndarray:
    """
    Spectral coefficients <delta_{s0}, e_k> = e_k(s0)

    Args:
        trunc: Truncation
        s0: Point strictly inside the box

    Returns:
        Coefficient vector over the retained modes
    """
    s0 = tuple(float(s) for s in np.atleast_1d(s0))
    if len(s0) != trunc.d:
        raise DomainError(f"point {s0} has dimension {len(s0)}, box has {trunc.d}")
    if not trunc.domain.contains(s0):
        raise DomainError(f"point {s0} is not strictly inside the box {trunc.domain.lengths}")
    return eigenfunction_values(trunc, np.array([s0]))[0]


@dataclass
class PartialSumReport:
    """Dyadic partial sums of a nonnegative mode series"""
    cutoffs: List[int]
    partial_sums: List[float]
    tail_ratios: List[float] = field(default_factory=list)

    @property
    def converging(self) -> bool:
        """Consecutive dyadic tails shrink"""
        return bool(self.tail_ratios) and self.tail_ratios[-1] < 0.9


def dyadic_partial_sums(trunc: SpectralTruncation, terms: np.ndarray, cutoffs: Sequence[int]) -> PartialSumReport:
    """Partial sums over the sub-truncations of each cutoff, with tail ratios"""
    cutoffs = sorted(int(c) for c in cutoffs)
    if cutoffs[-1] > trunc.cutoff:
        raise ConfigurationError(f"cutoff {cutoffs[-1]} exceeds truncation cutoff {trunc.cutoff}")
    sums = [float(np.sum(terms[trunc.sub_truncation(c)])) for c in cutoffs]
    tails = np.diff(sums)
    ratios = [float(tails[i + 1] / tails[i]) if tails[i] > 0 else float('inf') for i in range(len(tails) - 1)]
    return PartialSumReport(cutoffs, sums, ratios)


def point_mass_partial_sums(
    trunc: SpectralTruncation,
    s0: Sequence[float],
    theta: float,
    cutoffs: Sequence[int]
) -> PartialSumReport:
    """
    Partial sums of sum_k e_k(s0)^2 a_k^{-2 theta}

    The series is finite exactly when the point mass lies in E_{-theta}.
    """
    coeffs = point_mass_coefficients(trunc, s0)
    return dyadic_partial_sums(trunc, coeffs ** 2 * trunc.a ** (-2.0 * theta), cutoffs)


class SineTransform:
    """
    Discrete sine synthesis/analysis on the interior nodes of a box

    Nodes are s_j = j L / (M + 1), j = 1..M per axis. Leading axes of
    the inputs are treated as batch axes.
    """

    def __init__(self, trunc: SpectralTruncation, points_per_axis: Optional[int] = None):
        minimum = minimum_grid_points(trunc.cutoff)
        if points_per_axis is None:
            points_per_axis = trunc.domain.grid_points_per_axis or minimum
        if points_per_axis < minimum:
            raise ConfigurationError(
                f"grid with {points_per_axis} points per axis does not resolve cutoff {trunc.cutoff}"
            )
        self.trunc = trunc
        self.points = int(points_per_axis)
        self.d = trunc.d
        lengths = np.asarray(trunc.domain.lengths)
        self._axes = tuple(range(-self.d, 0))
        self._index = tuple(trunc.indices[:, i] - 1 for i in range(self.d))
        self._synth_scale = float(np.prod(np.sqrt(2.0 / lengths) / 2.0))
        self._analyse_scale = float(np.prod(np.sqrt(2.0 / lengths) * lengths / (self.points + 1) / 2.0))
        self.cell_volume = float(np.prod(lengths / (self.points + 1)))

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points,) * self.d

    def axes(self) -> List[np.ndarray]:
        """Node coordinates per axis"""
        return [
            np.arange(1, self.points + 1) * length / (self.points + 1)
            for length in self.trunc.domain.lengths
        ]

    def mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing='ij'))

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients (..., N) -> grid values (..., M, ..., M)"""
        coeffs = np.asarray(coeffs, dtype=float)
        dense = np.zeros(coeffs.shape[:-1] + self.shape)
        dense[(Ellipsis,) + self._index] = coeffs
        return self._synth_scale * fft.dstn(dense, type=1, axes=self._axes)

    def analyse(self, values: np.ndarray) -> np.ndarray:
        """Grid values (..., M, ..., M) -> coefficients (..., N)"""
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise NumericalError("non-finite grid values in sine analysis")
        spectrum = fft.dstn(values, type=1, axes=self._axes)
        return self._analyse_scale * spectrum[(Ellipsis,) + self._index]

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Quadrature of grid values over the box (batched)"""
        return np.sum(values, axis=self._axes) * self.cell_volume

    def integrate_closed(self, values: np.ndarray, boundary_value: float = 0.0) -> np.ndarray:
        """
        Simpson quadrature over the closed box

        Interior values are padded with the boundary value on every face;
        integrands built from fields vanishing on the boundary take it
        there exactly.
        """
        values = np.asarray(values, dtype=float)
        pad = [(0, 0)] * (values.ndim - self.d) + [(1, 1)] * self.d
        padded = np.pad(values, pad, constant_values=boundary_value)
        for length in reversed(self.trunc.domain.lengths):
            nodes = np.linspace(0.0, length, self.points + 2)
            padded = integrate.simpson(padded, x=nodes, axis=-1)
        return padded

    def lq_norm(self, values: np.ndarray, q: float) -> np.ndarray:
        """Discrete L^q norm of grid values (batched)"""
        return self.integrate(np.abs(values) ** q) ** (1.0 / q)

    def to_frame(self, values: np.ndarray) -> pd.DataFrame:
        """Grid values as a table with one column per coordinate"""
        coords = self.mesh()
        data = {f"s{i + 1}": c.ravel() for i, c in enumerate(coords)}
        data['value'] = np.asarray(values).ravel()
        return pd.DataFrame(data)


def fractional_norm(
    coeffs: np.ndarray,
    spec: FractionalNormSpec,
    trunc: SpectralTruncation,
    transform: Optional[SineTransform] = None
) -> np.ndarray:
    """
    ||A^theta x|| in L^q for coefficient vectors (batched over leading axes)

    q = 2 is evaluated exactly by weighted Parseval; other q by synthesis
    on the grid and quadrature.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != trunc.size:
        raise ConfigurationError(f"coefficient length {coeffs.shape[-1]} does not match truncation size {trunc.size}")
    weighted = coeffs * trunc.weights(spec.theta)
    if spec.q == 2.0:
        return np.sqrt(np.sum(weighted ** 2, axis=-1))
    transform = transform or trunc.transform
    return transform.lq_norm(transform.synthesize(weighted), spec.q)
