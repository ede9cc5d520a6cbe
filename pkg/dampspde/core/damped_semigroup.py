"""
Damped Semigroup Module
Per-mode companion matrices of the structurally damped operator matrix,
closed-form exponentials, resolvent scans and fractional powers
"""
from dataclasses import dataclass, field
import math
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from dampspde.config import config
from dampspde.core.spectral_domain import BoxDomain, SpectralTruncation, enumerate_modes
from dampspde.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# Below this |z| the phi_1 series replaces (e^z - 1)/z
_PHI1_SERIES_RADIUS = 1e-5


@dataclass(frozen=True)
class ModeMatrix:
    """
    Companion matrix A_k = [[0, 1], [-a, -rho sqrt(a)]] of one mode

    The damping coefficient is stored as rho*sqrt(a) so only the weights
    change if a different damping power is introduced.
    """
    a: float
    rho: float
    sqrt_a: float
    damping: float
    lambda_plus: complex
    lambda_minus: complex
    jordan: bool

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[0.0, 1.0], [-self.a, -self.damping]])


def eigenvalues(a: np.ndarray, rho: float):
    """
    Eigenvalues (lambda_plus, lambda_minus) of the companion matrices

    lambda_plus is the slower one (larger real part). Real pairs are
    computed through lambda_plus = a / lambda_minus to avoid cancellation.
    """
    a = np.asarray(a, dtype=float)
    sqrt_a = np.sqrt(a)
    disc = rho * rho - 4.0
    if disc > 0:
        lam_minus = 0.5 * sqrt_a * (-rho - np.sqrt(disc)) + 0j
        lam_plus = a / lam_minus
    elif disc == 0:
        lam_minus = -sqrt_a + 0j
        lam_plus = lam_minus
    else:
        lam_minus = 0.5 * sqrt_a * (-rho - 1j * np.sqrt(-disc))
        lam_plus = np.conj(lam_minus)
    return lam_plus, lam_minus


def mode_matrix(a: float, rho: float) -> ModeMatrix:
    """
    Build the companion data of one mode

    Args:
        a: Eigenvalue of the elastic operator (positive)
        rho: Damping constant (positive)

    Returns:
        ModeMatrix with eigenvalues and Jordan flag
    """
    if not a > 0:
        raise ConfigurationError(f"mode eigenvalue must be positive, got {a}")
    if not rho > 0:
        raise ConfigurationError(f"damping constant must be positive, got {rho}", field="equation.rho")
    lam_plus, lam_minus = eigenvalues(np.float64(a), rho)
    sqrt_a = float(np.sqrt(a))
    return ModeMatrix(
        a=float(a),
        rho=float(rho),
        sqrt_a=sqrt_a,
        damping=rho * sqrt_a,
        lambda_plus=complex(lam_plus),
        lambda_minus=complex(lam_minus),
        jordan=(rho == 2.0)
    )


def companion_matrices(a: np.ndarray, rho: float) -> np.ndarray:
    """Stack of A_k, shape (N, 2, 2)"""
    a = np.asarray(a, dtype=float)
    out = np.zeros(a.shape + (2, 2))
    out[..., 0, 1] = 1.0
    out[..., 1, 0] = -a
    out[..., 1, 1] = -rho * np.sqrt(a)
    return out


def phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z for complex arrays, with the series near zero"""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < _PHI1_SERIES_RADIUS
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(safe) / safe)


def propagators(a: np.ndarray, rho: float, t) -> np.ndarray:
    """
    exp(t A_k) for all modes (Putzer form)

    e^{tA} = e^{lambda_+ t} [I + t phi1(t (lambda_- - lambda_+)) (A - lambda_+ I)]
    reduces exactly to e^{-sqrt(a) t}(I + t(A + sqrt(a) I)) at rho = 2.

    Args:
        a: Mode eigenvalues, shape (N,)
        rho: Damping constant
        t: Time (scalar or array broadcastable against a)

    Returns:
        Real array of shape broadcast(a, t) + (2, 2)
    """
    if np.any(np.asarray(t) < 0):
        raise ConfigurationError("semigroup time must be non-negative")
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    a, t = np.broadcast_arrays(a, t)
    lam_plus, lam_minus = eigenvalues(a, rho)
    weight = t * phi1(t * (lam_minus - lam_plus))
    shifted = companion_matrices(a, rho).astype(complex)
    shifted[..., 0, 0] -= lam_plus
    shifted[..., 1, 1] -= lam_plus
    result = weight[..., None, None] * shifted
    result[..., 0, 0] += 1.0
    result[..., 1, 1] += 1.0
    result *= np.exp(lam_plus * t)[..., None, None]
    return result.real


def mode_exp(m: ModeMatrix, t: float) -> np.ndarray:
    """Closed-form exp(t A_k) of one mode"""
    return propagators(np.array([m.a]), m.rho, t)[0]


def decay_rate(m: ModeMatrix) -> float:
    """Spectral abscissa -max Re(lambda); equals rho sqrt(a)/2 when rho <= 2"""
    return -max(m.lambda_plus.real, m.lambda_minus.real)


def energy(a: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-mode energy a u^2 + v^2 (squared X-norm contribution)"""
    return a * u ** 2 + v ** 2


def energy_dissipation(m: ModeMatrix, state: Sequence[float], times: Sequence[float]) -> bool:
    """Whether a u^2 + v^2 is non-increasing along mode_exp over the given times"""
    times = np.sort(np.asarray(times, dtype=float))
    path = propagators(np.full(times.shape, m.a), m.rho, times) @ np.asarray(state, dtype=float)
    levels = energy(m.a, path[:, 0], path[:, 1])
    return bool(np.all(np.diff(levels) <= 1e-12 * max(levels[0], 1e-300)))


def mode_inverse(m: ModeMatrix) -> np.ndarray:
    """A_k^{-1} = [[-rho a^{-1/2}, -a^{-1}], [1, 0]]"""
    return np.array([[-m.rho / m.sqrt_a, -1.0 / m.a], [1.0, 0.0]])


def adjoint_matrix(m: ModeMatrix) -> np.ndarray:
    """Per-mode adjoint [[0, -a], [1, -rho sqrt(a)]] for the L^2 duality pairing"""
    return np.array([[0.0, -m.a], [1.0, -m.damping]])


def phi_matrices(a: np.ndarray, rho: float, h: float):
    """
    Exponential-integrator matrices of one step h

    E = e^{hA}, Phi1 = int_0^h e^{sA} ds, Phi2 = int_0^h (h - s) e^{sA} ds,
    Phi3 = int_0^h (h - s)^2/2 e^{sA} ds. Non-stiff modes use the Taylor
    series of the balanced matrix h sqrt(a) K (A = D^{-1} sqrt(a) K D with
    D = diag(sqrt(a), 1)); stiff modes use Phi_{k+1} = A^{-1}(Phi_k - h^k/k! I).

    Returns:
        Tuple (E, Phi1, Phi2, Phi3), each of shape (N, 2, 2)
    """
    a = np.asarray(a, dtype=float)
    sqrt_a = np.sqrt(a)
    eye = np.eye(2)
    E = propagators(a, rho, h)
    phis = [np.empty_like(E) for _ in range(3)]

    series = h * sqrt_a * (1.0 + rho) <= 1.0
    if np.any(series):
        s_a = sqrt_a[series]
        K = np.zeros((len(s_a), 2, 2))
        K[:, 0, 1] = 1.0
        K[:, 1, 0] = -1.0
        K[:, 1, 1] = -rho
        B = (h * s_a)[:, None, None] * K
        sums = [np.zeros_like(B) for _ in range(3)]
        power = np.broadcast_to(eye, B.shape).copy()
        for n in range(32):
            for k in range(3):
                sums[k] += power / math.factorial(n + k + 1)
            power = power @ B
        # Undo the balancing: entry (i, j) scales by d_j / d_i
        scale = np.ones((len(s_a), 2, 2))
        scale[:, 0, 1] = 1.0 / s_a
        scale[:, 1, 0] = s_a
        for k in range(3):
            phis[k][series] = h ** (k + 1) * sums[k] * scale

    stiff = ~series
    if np.any(stiff):
        inv = np.zeros((int(np.sum(stiff)), 2, 2))
        inv[:, 0, 0] = -rho / sqrt_a[stiff]
        inv[:, 0, 1] = -1.0 / a[stiff]
        inv[:, 1, 0] = 1.0
        previous = E[stiff] - eye
        phis[0][stiff] = inv @ previous
        phis[1][stiff] = inv @ (phis[0][stiff] - h * eye)
        phis[2][stiff] = inv @ (phis[1][stiff] - 0.5 * h * h * eye)

    return E, phis[0], phis[1], phis[2]



# ---------------------------------------------------------------------------
# Resolvent and sectoriality
# ---------------------------------------------------------------------------

def resolvent_matrix(m: ModeMatrix, lam: complex) -> np.ndarray:
    """(lambda - A_k)^{-1} in plain coordinates"""
    return np.linalg.inv(lam * np.eye(2) - m.matrix.astype(complex))


def weighted_resolvent(a: np.ndarray, rho: float, lam: np.ndarray):
    """
    lambda W (lambda - A_k)^{-1} W^{-1} with W = diag(sqrt(a), 1)

    Args:
        a: Mode eigenvalues, shape (N,)
        rho: Damping constant
        lam: Spectral points, shape (R,)

    Returns:
        (matrices of shape (N, R, 2, 2), mask of points on the spectrum)
    """
    a = np.asarray(a, dtype=float)[:, None]
    lam = np.asarray(lam, dtype=complex)[None, :]
    sqrt_a = np.sqrt(a)
    c = rho * sqrt_a
    det = lam * lam + c * lam + a
    singular = np.abs(det) == 0.0
    scale = lam / np.where(singular, 1.0, det)
    out = np.empty(np.broadcast(a, lam).shape + (2, 2), dtype=complex)
    out[..., 0, 0] = scale * (lam + c)
    out[..., 0, 1] = scale * sqrt_a
    out[..., 1, 0] = -scale * sqrt_a
    out[..., 1, 1] = scale * lam
    return out, singular


def spectral_norms(matrices: np.ndarray) -> np.ndarray:
    """Largest singular value of stacked 2x2 matrices"""
    return np.linalg.svd(matrices, compute_uv=False)[..., 0]


def default_radii(trunc: SpectralTruncation, rho: float, per_decade: int = 24) -> np.ndarray:
    """Log-spaced radii over [1e-3 sqrt(a_min), 1e3 max(a_max, rho sqrt(a_max))]"""
    low = 1e-3 * np.sqrt(trunc.a[0])
    high = 1e3 * max(trunc.a[-1], rho * np.sqrt(trunc.a[-1]))
    decades = np.log10(high / low)
    return np.logspace(np.log10(low), np.log10(high), int(np.ceil(decades * per_decade)) + 1)


@dataclass
class SectorReport:
    """
    Resolvent bound along the rays arg(lambda) = +-(pi - phi)

    sup_by_cutoff maps the per-axis cutoff to the sup over both rays and
    all retained modes of ||lambda (lambda - A_k)^{-1}|| in X-weights.
    """
    phi: float
    rho: float
    radii: Dict[int, np.ndarray] = field(default_factory=dict)
    sup_by_cutoff: Dict[int, float] = field(default_factory=dict)
    profiles: Dict[int, np.ndarray] = field(default_factory=dict)
    limit_at_infinity: Dict[int, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    tolerance: float = config.tolerances.sector_variation

    @property
    def variation(self) -> float:
        values = np.array(list(self.sup_by_cutoff.values()))
        if len(values) < 2:
            return 0.0
        return float((values.max() - values.min()) / values.min())

    @property
    def bounded(self) -> bool:
        """Heuristic verdict: finite sups that are stable across cutoffs"""
        values = np.array(list(self.sup_by_cutoff.values()))
        return bool(len(values) > 0 and np.all(np.isfinite(values)) and self.variation < self.tolerance)

    def to_frame(self) -> pd.DataFrame:
        """Plot-ready table: cutoff, radius, sup norm over modes and rays"""
        rows = []
        for cutoff, profile in self.profiles.items():
            rows.append(pd.DataFrame({
                'cutoff': cutoff,
                'radius': self.radii[cutoff],
                'norm': profile
            }))
        return pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=['cutoff', 'radius', 'norm'])


def resolvent_scan(
    trunc: SpectralTruncation,
    rho: float,
    phi: float,
    radii: Optional[Sequence[float]] = None
) -> SectorReport:
    """
    Scan ||lambda (lambda - A_k)^{-1}|| along arg(lambda) = +-(pi - phi)

    Args:
        trunc: Truncation whose modes are scanned
        rho: Damping constant
        phi: Ray angle in (0, pi/2)
        radii: |lambda| samples (default: 24 per decade, see default_radii)

    Returns:
        SectorReport for this truncation
    """
    if not 0.0 < phi < np.pi / 2:
        raise ConfigurationError(f"phi must lie in (0, pi/2), got {phi}")
    if not rho > 0:
        raise ConfigurationError(f"damping constant must be positive, got {rho}", field="equation.rho")
    radii = default_radii(trunc, rho) if radii is None else np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ConfigurationError("radii must be positive")
    if np.log10(radii.max() / radii.min()) < 6:
        logger.warning("Resolvent scan radii span fewer than 6 decades")

    report = SectorReport(phi=phi, rho=rho)
    report.radii[trunc.cutoff] = radii
    angle = np.pi - phi
    profile = np.zeros(len(radii))
    for sign in (1.0, -1.0):
        lam = radii * np.exp(1j * sign * angle)
        matrices, singular = weighted_resolvent(trunc.a, rho, lam)
        norms = spectral_norms(matrices)
        if np.any(singular):
            report.notes.append(f"{int(np.sum(singular))} points on the spectrum skipped")
            norms = np.where(singular, 0.0, norms)
        profile = np.maximum(profile, norms.max(axis=0))

    far = np.array([1e4 * max(trunc.a[-1], rho * np.sqrt(trunc.a[-1]))])
    matrices, _ = weighted_resolvent(trunc.a, rho, far)
    report.limit_at_infinity[trunc.cutoff] = float(spectral_norms(matrices).max())
    report.sup_by_cutoff[trunc.cutoff] = float(profile.max())
    report.profiles[trunc.cutoff] = profile
    return report


def certify_sector(
    domain: BoxDomain,
    kind,
    rho: float,
    phi: float = np.pi / 4,
    cutoffs: Sequence[int] = (64, 128, 256)
) -> SectorReport:
    """
    Run resolvent_scan for each cutoff and combine the results

    The verdict compares the ray sups across cutoffs.
    """
    combined: Optional[SectorReport] = None
    for cutoff in sorted(cutoffs):
        trunc = enumerate_modes(domain, kind, cutoff)
        single = resolvent_scan(trunc, rho, phi)
        if combined is None:
            combined = single
            continue
        combined.radii.update(single.radii)
        combined.sup_by_cutoff.update(single.sup_by_cutoff)
        combined.profiles.update(single.profiles)
        combined.limit_at_infinity.update(single.limit_at_infinity)
        combined.notes.extend(single.notes)

    logger.info(
        f"Sector scan rho={rho} phi={phi:.4f}: sups {combined.sup_by_cutoff}, "
        f"variation {combined.variation:.3%}, bounded={combined.bounded}"
    )
    return combined


# ---------------------------------------------------------------------------
# Fractional powers and scale identifications
# ---------------------------------------------------------------------------

def fractional_power_matrices(a: np.ndarray, rho: float, w: float, theta: float) -> np.ndarray:
    """
    (w - A_k)^theta for all modes, principal branch

    Uses f(M) = f(mu_1) I + (M - mu_1 I) dd with the divided difference
    dd = mu_1^{theta-1} theta phi1(theta L) / phi1(L), L = log(mu_2/mu_1),
    which is exact at the double eigenvalue (binomial form).
    """
    if not -1.0 <= theta <= 1.0:
        raise ConfigurationError(f"theta must lie in [-1, 1], got {theta}")
    a = np.asarray(a, dtype=float)
    lam_plus, lam_minus = eigenvalues(a, rho)
    if w <= np.max(np.maximum(lam_plus.real, lam_minus.real)):
        raise ConfigurationError(f"w = {w} must lie to the right of the spectrum")
    mu1 = w - lam_plus
    mu2 = w - lam_minus
    log1 = np.log(mu1)
    L = np.log(mu2) - log1
    f1 = np.exp(theta * log1)
    dd = np.exp((theta - 1.0) * log1) * theta * phi1(theta * L) / phi1(L)

    M = -companion_matrices(a, rho).astype(complex)
    M[..., 0, 0] += w
    M[..., 1, 1] += w
    shifted = M.copy()
    shifted[..., 0, 0] -= mu1
    shifted[..., 1, 1] -= mu1
    result = dd[..., None, None] * shifted
    result[..., 0, 0] += f1
    result[..., 1, 1] += f1
    return result.real


def fractional_power_apply(m: ModeMatrix, w: float, theta: float, vec: Sequence[float]) -> np.ndarray:
    """Apply (w - A_k)^theta to a 2-vector"""
    if w <= 0:
        raise ConfigurationError(f"w must be positive, got {w}")
    matrix = fractional_power_matrices(np.array([m.a]), m.rho, w, theta)[0]
    return matrix @ np.asarray(vec, dtype=float)


@dataclass
class ScaleReport:
    """Uniform equivalence constants of a per-mode weighted identification"""
    label: str
    rho: float
    a: np.ndarray
    ratio_min: np.ndarray
    ratio_max: np.ndarray
    tolerance: float = config.tolerances.scale_spread

    @property
    def lower(self) -> float:
        return float(self.ratio_min.min())

    @property
    def upper(self) -> float:
        return float(self.ratio_max.max())

    @property
    def spread(self) -> float:
        return self.upper / self.lower

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.spread) and self.spread < self.tolerance)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'a': self.a,
            'ratio_min': self.ratio_min,
            'ratio_max': self.ratio_max
        })


def _sweep(trunc: SpectralTruncation, mu_range, samples: int) -> np.ndarray:
    mu = np.logspace(np.log10(mu_range[0]), np.log10(mu_range[1]), samples)
    return np.unique(np.concatenate([mu ** trunc.kind.power, trunc.a]))


def _ratio_bounds(T: np.ndarray):
    singular = np.linalg.svd(T, compute_uv=False)
    return singular[..., -1], singular[..., 0]


def scale_identification_check(
    trunc: SpectralTruncation,
    rho: float,
    theta: float,
    w: Optional[float] = None,
    mu_range=(1.0, 1e6),
    samples: int = 61
) -> ScaleReport:
    """
    Compare ||(w - A_k)^theta v||_X with the weights of E_{1/2+theta/2} x E_{theta/2}

    The extremes over all unit vectors are the singular values of
    W (w - A_k)^theta D_theta^{-1}, W = diag(sqrt(a), 1) and
    D_theta = diag(sqrt(a)^{1+theta}, sqrt(a)^theta).
    """
    if not 0.0 <= theta <= 0.5:
        raise ConfigurationError(f"theta must lie in [0, 1/2], got {theta}")
    w = trunc.w_shift if w is None else w
    a = _sweep(trunc, mu_range, samples)
    root = np.sqrt(a)
    power = fractional_power_matrices(a, rho, w, theta)
    T = power * (root[:, None, None] ** np.array([[1.0], [0.0]]))
    T = T / (root[:, None, None] ** np.array([[1.0 + theta, theta]]))
    lo, hi = _ratio_bounds(T)
    report = ScaleReport(f"X_{theta:g}", rho, a, lo, hi)
    logger.info(f"Scale identification theta={theta}: ratios in [{report.lower:.4g}, {report.upper:.4g}]")
    return report


def extrapolation_scale_check(
    trunc: SpectralTruncation,
    rho: float,
    order: float = 0.5,
    mu_range=(1.0, 1e6),
    samples: int = 61
) -> ScaleReport:
    """
    Uniform equivalence behind the extrapolated scale identifications

    order = 1/2: ||A_k^{-1} v|| in X_{1/2} weights (a^{3/4}, a^{1/4}) vs v in
    E_{1/4} x E_{-1/4} weights (a^{1/4}, a^{-1/4}).
    order = 1: ||A_k^{-1} v||_X vs v in E x E_{-1/2} weights (1, a^{-1/2}).
    """
    if order not in (0.5, 1.0):
        raise ConfigurationError(f"order must be 1/2 or 1, got {order}")
    a = _sweep(trunc, mu_range, samples)
    inverse = np.zeros((len(a), 2, 2))
    inverse[:, 0, 0] = -rho / np.sqrt(a)
    inverse[:, 0, 1] = -1.0 / a
    inverse[:, 1, 0] = 1.0
    if order == 0.5:
        target = np.stack([a ** 0.75, a ** 0.25], axis=1)
        source = np.stack([a ** 0.25, a ** -0.25], axis=1)
    else:
        target = np.stack([np.sqrt(a), np.ones_like(a)], axis=1)
        source = np.stack([np.ones_like(a), a ** -0.5], axis=1)
    T = target[:, :, None] * inverse / source[:, None, :]
    lo, hi = _ratio_bounds(T)
    return ScaleReport(f"X_-{order:g}", rho, a, lo, hi)
