"""
Integrator Module
Time stepping of the truncated mild solution: exact per-mode propagation,
exponential Euler for the drift, exact Gaussian convolutions for additive
noise and left-point kicks for multiplicative noise
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence
import logging

import numpy as np
from scipy import linalg

from dampspde.config import config
from dampspde.core.coefficients import CoefficientSet, apply_functional, apply_nemytskii
from dampspde.core.damped_semigroup import ModeMatrix, companion_matrices, phi_matrices, propagators
from dampspde.core.noise_model import IncrementStream, NoiseSpec
from dampspde.core.spectral_domain import SpectralTruncation, point_mass_coefficients
from dampspde.core.streams import Channel, NormalBlockStream, path_generator
from dampspde.exceptions import ConfigurationError, IntegrationError, NumericalError

logger = logging.getLogger(__name__)

_GAUSS_NODES = 16


class Scheme(Enum):
    """Time-stepping scheme selected from the coefficients"""
    EXACT_LINEAR_ADDITIVE = "exact_linear_additive"
    EXPONENTIAL_EULER = "exponential_euler"


@dataclass
class StateField:
    """
    Coefficients of U = (u, v) at time t

    u and v have shape (N,) for one path or (P, N) for a batch.
    """
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        self.v = np.array(self.v, dtype=float)
        if self.u.shape != self.v.shape:
            raise ConfigurationError(f"u and v shapes differ: {self.u.shape} vs {self.v.shape}")

    @property
    def size(self) -> int:
        return self.u.shape[-1]

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))

    @classmethod
    def zeros(cls, size: int, paths: Optional[int] = None, t: float = 0.0) -> 'StateField':
        shape = (size,) if paths is None else (paths, size)
        return cls(np.zeros(shape), np.zeros(shape), t)

    def broadcast(self, paths: int) -> 'StateField':
        """Same state repeated over a batch of paths"""
        return StateField(np.broadcast_to(self.u, (paths, self.size)).copy(),
                          np.broadcast_to(self.v, (paths, self.size)).copy(), self.t)


# ---------------------------------------------------------------------------
# Stochastic convolution covariance
# ---------------------------------------------------------------------------

def _batched_kron(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.einsum('nij,nkl->nikjl', left, right).reshape(len(left), 4, 4)


def convolution_cross_covariance(a1, a2, rho: float, b1, b2, dt: float) -> np.ndarray:
    """
    int_0^dt e^{s A_1} b1 b2^T e^{s A_2^T} ds for stacks of mode pairs

    Pairs that are not stiff at dt use Gauss-Legendre quadrature of the
    closed-form propagators; stiff pairs use the stationary Sylvester
    solution P of A_1 P + P A_2^T = -b1 b2^T and P - E_1 P E_2^T.

    Args:
        a1, a2: Mode eigenvalues, shape (K,)
        rho: Damping constant
        b1, b2: Forcing directions, shape (K, 2)
        dt: Step (positive)

    Returns:
        Array of shape (K, 2, 2)
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    a1 = np.atleast_1d(np.asarray(a1, dtype=float))
    a2 = np.atleast_1d(np.asarray(a2, dtype=float))
    b1 = np.atleast_2d(np.asarray(b1, dtype=float))
    b2 = np.atleast_2d(np.asarray(b2, dtype=float))
    out = np.zeros((len(a1), 2, 2))

    stiff = dt * np.sqrt(np.maximum(a1, a2)) * (1.0 + rho) > 1.0
    smooth = ~stiff
    if np.any(smooth):
        nodes, weights = np.polynomial.legendre.leggauss(_GAUSS_NODES)
        for x, w in zip(nodes, weights):
            s = 0.5 * dt * (x + 1.0)
            left = np.einsum('nij,nj->ni', propagators(a1[smooth], rho, s), b1[smooth])
            right = np.einsum('nij,nj->ni', propagators(a2[smooth], rho, s), b2[smooth])
            out[smooth] += 0.5 * dt * w * left[:, :, None] * right[:, None, :]

    if np.any(stiff):
        A1 = companion_matrices(a1[stiff], rho)
        A2 = companion_matrices(a2[stiff], rho)
        eye = np.broadcast_to(np.eye(2), A1.shape)
        system = _batched_kron(A1, eye) + _batched_kron(eye, A2)
        rhs = -(b1[stiff][:, :, None] * b2[stiff][:, None, :]).reshape(-1, 4)
        P = np.linalg.solve(system, rhs[..., None])[..., 0].reshape(-1, 2, 2)
        E1 = propagators(a1[stiff], rho, dt)
        E2 = propagators(a2[stiff], rho, dt)
        out[stiff] = P - E1 @ P @ np.swapaxes(E2, -1, -2)
    return out


def stochastic_convolution_covariance(m: ModeMatrix, forcing_direction: Sequence[float], dt: float) -> np.ndarray:
    """
    Covariance of int_0^dt e^{(dt - r)A} b dw(r) for one mode

    Args:
        m: Mode data
        forcing_direction: b (2-vector)
        dt: Step

    Returns:
        Symmetric positive semidefinite 2x2 matrix
    """
    b = np.asarray(forcing_direction, dtype=float)[None, :]
    cov = convolution_cross_covariance([m.a], [m.a], m.rho, b, b, dt)[0]
    return 0.5 * (cov + cov.T)


def accumulated_covariance(m: ModeMatrix, forcing_direction: Sequence[float], dt: float, n_steps: int) -> np.ndarray:
    """sum_{j<n} e^{j dt A} Q_dt e^{j dt A^T}, the covariance after n exact steps from rest"""
    Q = stochastic_convolution_covariance(m, forcing_direction, dt)
    E = propagators(np.array([m.a]), m.rho, dt)[0]
    total = np.zeros((2, 2))
    power = np.eye(2)
    for _ in range(n_steps):
        total += power @ Q @ power.T
        power = E @ power
    return total


class GaussianSampler:
    """
    Factor of a covariance matrix for drawing joint Gaussian vectors

    The covariance is rescaled to a correlation matrix, factored by a
    symmetric eigendecomposition and eigenvalues below clip * max are
    discarded, so singular directions stay exact.
    """

    def __init__(self, cov: np.ndarray, clip: Optional[float] = None, label: str = "covariance"):
        clip = config.tolerances.covariance_clip if clip is None else clip
        cov = 0.5 * (cov + cov.T)
        dim = cov.shape[0]
        scale = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        active = scale > 0
        factor = np.zeros((dim, 0))
        if np.any(active):
            s = scale[active]
            corr = cov[np.ix_(active, active)] / np.outer(s, s)
            w, V = linalg.eigh(corr)
            top = w[-1]
            if w[0] < -1e-8 * top:
                logger.warning(f"{label}: negative eigenvalue {w[0]:.3g} (max {top:.3g}) clipped")
            keep = w > clip * top
            factor = np.zeros((dim, int(np.sum(keep))))
            factor[active] = s[:, None] * V[:, keep] * np.sqrt(w[keep])
            logger.debug(f"{label}: rank {factor.shape[1]} of {dim}")
        self.factor = factor
        self.dim = dim

    @property
    def rank(self) -> int:
        return self.factor.shape[1]

    def transform(self, normals: np.ndarray) -> np.ndarray:
        """Standard normals (..., rank) -> correlated draws (..., dim)"""
        return normals @ self.factor.T


def _block_factors(cov: np.ndarray, clip: float) -> np.ndarray:
    """Per-mode 2x2 factors F with F F^T = cov (clipped)"""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    scale = np.sqrt(np.clip(np.diagonal(cov, axis1=-2, axis2=-1), 0.0, None))
    safe = np.where(scale > 0, scale, 1.0)
    corr = cov / (safe[:, :, None] * safe[:, None, :])
    w, V = np.linalg.eigh(corr)
    w = np.where(w > clip * w[:, -1:], w, 0.0)
    return (scale[:, :, None] * V) * np.sqrt(w)[:, None, :]


# ---------------------------------------------------------------------------
# Augmented exact discretization (increment persistence)
# ---------------------------------------------------------------------------

def _step_kernels(a: np.ndarray, rho: float, s: float) -> np.ndarray:
    """
    Step kernels at lag s, shape (N, 6)

    Columns: e^{sA}_{01}, e^{sA}_{11}, int_0^s e^{rA}_{01} dr,
    int_0^s (s - r) e^{rA}_{01} dr, 1 and s.
    """
    E, Phi1, Phi2, _ = phi_matrices(a, rho, s)
    return np.stack([E[:, 0, 1], E[:, 1, 1], Phi1[:, 0, 1], Phi2[:, 0, 1],
                     np.ones_like(a), np.full_like(a, s)], axis=1)


def augmented_cross_blocks(a: np.ndarray, rho: float, dt: float, k: np.ndarray, l: np.ndarray) -> np.ndarray:
    """
    int_0^dt K_k(s) K_l(s)^T ds for unit forcing of the v equation

    Every component of (u, v, int u, int (dt - r) u, L, M) over one step is
    int_0^dt K(dt - r) dw(r). Pairs of non-stiff modes integrate the kernels
    by Gauss-Legendre. A stiff mode k is written as K_k = C_k z_k + D_k (1, s)
    with z_k = e^{sA_k} e_2, so only A_k^{-1}, the step matrices and the
    Sylvester cross covariance of (z_k, z_l) enter.

    Args:
        a: Mode eigenvalues, shape (N,)
        rho: Damping constant
        dt: Step
        k, l: Mode index pairs, shape (K,)

    Returns:
        Array of shape (K, 6, 6) in the component order [u, v, p, q, L, M]
    """
    a = np.asarray(a, dtype=float)
    k = np.asarray(k, dtype=int)
    l = np.asarray(l, dtype=int)
    sqrt_a = np.sqrt(a)
    stiff = dt * sqrt_a * (1.0 + rho) > 1.0
    E, Phi1, Phi2, _ = phi_matrices(a, rho, dt)
    out = np.zeros((len(k), 6, 6))

    nodes, weights = np.polynomial.legendre.leggauss(_GAUSS_NODES)
    lags = 0.5 * dt * (nodes + 1.0)
    kernels = np.stack([_step_kernels(a, rho, s) for s in lags])
    polynomial = np.stack([np.ones_like(lags), lags], axis=1)
    w = 0.5 * dt * weights

    # int (1, s)^T K(s) ds per mode, shape (N, 2, 6)
    omega = np.einsum('g,gi,gnj->nij', w, polynomial, kernels)

    inv = np.zeros((len(a), 2, 2))
    inv[:, 0, 0] = -rho / sqrt_a
    inv[:, 0, 1] = -1.0 / a
    inv[:, 1, 0] = 1.0
    inv2 = inv @ inv
    z_end = E[:, :, 1]
    y0 = Phi1[:, :, 1]
    y1 = np.einsum('nij,nj->ni', inv, dt * z_end - y0)
    C = np.zeros((len(a), 6, 2))
    C[:, 0, 0] = 1.0
    C[:, 1, 1] = 1.0
    C[:, 2] = inv[:, 0]
    C[:, 3] = inv2[:, 0]
    D = np.zeros((len(a), 6, 2))
    D[:, 2, 0] = -inv[:, 0, 1]
    D[:, 3, 0] = -inv2[:, 0, 1]
    D[:, 3, 1] = -inv[:, 0, 1]
    D[:, 4, 0] = 1.0
    D[:, 5, 1] = 1.0
    if np.any(stiff):
        moments = np.array([[dt, dt ** 2 / 2.0], [dt ** 2 / 2.0, dt ** 3 / 3.0]])
        Yt = np.stack([y0[stiff], y1[stiff]], axis=1)
        omega[stiff] = Yt @ np.swapaxes(C[stiff], -1, -2) + moments @ np.swapaxes(D[stiff], -1, -2)

    smooth = ~stiff[k] & ~stiff[l]
    if np.any(smooth):
        out[smooth] = np.einsum('g,gpi,gpj->pij', w, kernels[:, k[smooth]], kernels[:, l[smooth]])

    swap = ~stiff[k] & stiff[l]
    rows = stiff[k] | swap
    if np.any(rows):
        first = np.where(swap, l, k)[rows]
        second = np.where(swap, k, l)[rows]
        e2 = np.tile([0.0, 1.0], (len(first), 1))
        Z = convolution_cross_covariance(a[first], a[second], rho, e2, e2, dt)
        zk = z_end[first]
        I1 = np.einsum('rij,rj->ri', inv[first], zk * Phi1[second, 0, 1][:, None] - Z[:, :, 0])
        I2 = np.einsum('rij,rj->ri', inv[first], zk * Phi2[second, 0, 1][:, None] - I1)
        T = np.concatenate([Z, I1[:, :, None], I2[:, :, None], y0[first][:, :, None], y1[first][:, :, None]], axis=2)
        blocks = C[first] @ T + D[first] @ omega[second]
        flipped = swap[rows]
        blocks[flipped] = np.swapaxes(blocks[flipped], -1, -2)
        out[rows] = blocks
    return out


def augmented_covariance(trunc: SpectralTruncation, rho: float, dt: float,
                         point_direction: np.ndarray, distributed_direction: np.ndarray) -> np.ndarray:
    """
    Joint covariance of (u, v, int u, int (dt - r) u, L, M) over one step

    L is the forcing-weighted noise increment and M = int (dt - r) dL(r),
    per mode. The point channel couples every pair of active modes; the
    distributed channel only couples a mode with itself.

    Returns:
        (6N, 6N) covariance in the layout [u, v, p, q, L, M] x modes
    """
    n = trunc.size
    cov = np.zeros((6, n, 6, n))
    active = np.flatnonzero(point_direction != 0)
    if len(active):
        k, l = np.meshgrid(active, active, indexing='ij')
        k, l = k.ravel(), l.ravel()
        blocks = augmented_cross_blocks(trunc.a, rho, dt, k, l)
        blocks *= (point_direction[k] * point_direction[l])[:, None, None]
        for i in range(6):
            for j in range(6):
                cov[i, k, j, l] += blocks[:, i, j]
    active = np.flatnonzero(distributed_direction != 0)
    if len(active):
        blocks = augmented_cross_blocks(trunc.a, rho, dt, active, active)
        blocks *= (distributed_direction[active] ** 2)[:, None, None]
        for i in range(6):
            for j in range(6):
                cov[i, active, j, active] += blocks[:, i, j]
    cov = cov.reshape(6 * n, 6 * n)
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# Step plan
# ---------------------------------------------------------------------------

@dataclass
class StepPlan:
    """Per-mode caches of one step size"""
    trunc: SpectralTruncation
    rho: float
    dt: float
    scheme: Scheme
    noise: NoiseSpec
    coefficients: CoefficientSet
    E: np.ndarray = field(repr=False)
    Phi1: np.ndarray = field(repr=False)
    Phi2: np.ndarray = field(repr=False)
    Phi3: np.ndarray = field(repr=False)
    profile: np.ndarray = field(repr=False)
    lambdas: np.ndarray = field(repr=False)
    persist: bool = False
    multiplicative_point: bool = False
    multiplicative_distributed: bool = False
    point_sampler: Optional[GaussianSampler] = field(default=None, repr=False)
    distributed_factor: Optional[np.ndarray] = field(default=None, repr=False)
    augmented_sampler: Optional[GaussianSampler] = field(default=None, repr=False)

    @property
    def convolution_width(self) -> int:
        """Standard normals per step on the convolution stream"""
        if self.augmented_sampler is not None:
            return self.augmented_sampler.rank
        width = self.point_sampler.rank if self.point_sampler is not None else 0
        if self.distributed_factor is not None:
            width += 2 * self.trunc.size
        return width

    @property
    def auxiliary_width(self) -> int:
        """Standard normals per step for the time integrals of multiplicative kicks"""
        if not self.persist:
            return 0
        return int(self.multiplicative_point) + self.trunc.size * int(self.multiplicative_distributed)


def build_step_plan(
    trunc: SpectralTruncation,
    rho: float,
    dt: float,
    noise: NoiseSpec,
    coefficients: CoefficientSet,
    persist: bool = False
) -> StepPlan:
    """
    Precompute the propagators, integrator matrices and noise factors

    Args:
        trunc: Truncation
        rho: Damping constant
        dt: Step size
        noise: Noise channels
        coefficients: f, b, G, C
        persist: Record the per-step time functionals for weak residuals

    Returns:
        StepPlan
    """
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}", field="time.dt")
    clip = config.tolerances.covariance_clip
    E, Phi1, Phi2, Phi3 = phi_matrices(trunc.a, rho, dt)
    profile = point_mass_coefficients(trunc, noise.point.s0) if noise.point is not None else np.zeros(trunc.size)
    lambdas = noise.lambdas(trunc)

    if noise.point is None and coefficients.G.constant != 0.0:
        raise ConfigurationError("a point functional G requires a point s0", field="noise.point.s0")

    scheme = Scheme.EXACT_LINEAR_ADDITIVE if coefficients.linear_additive else Scheme.EXPONENTIAL_EULER
    point_live = noise.point is not None and coefficients.C.constant != 0.0
    dist_live = noise.distributed is not None and coefficients.b.constant != 0.0 and np.any(lambdas > 0)

    point_direction = np.zeros(trunc.size)
    dist_direction = np.zeros(trunc.size)
    if point_live and coefficients.additive_point:
        point_direction = coefficients.C.constant * profile
    if dist_live and coefficients.additive_distributed:
        dist_direction = coefficients.b.constant * np.sqrt(lambdas)

    plan = StepPlan(
        trunc=trunc, rho=float(rho), dt=float(dt), scheme=scheme, noise=noise, coefficients=coefficients,
        E=E, Phi1=Phi1, Phi2=Phi2, Phi3=Phi3, profile=profile, lambdas=lambdas, persist=persist,
        multiplicative_point=point_live and not coefficients.additive_point,
        multiplicative_distributed=dist_live and not coefficients.additive_distributed,
    )

    additive = np.any(point_direction != 0) or np.any(dist_direction != 0)
    if additive and persist:
        cov = augmented_covariance(trunc, rho, dt, point_direction, dist_direction)
        plan.augmented_sampler = GaussianSampler(cov, clip, label="augmented covariance")
    elif additive:
        if np.any(point_direction != 0):
            plan.point_sampler = GaussianSampler(_point_covariance(trunc, rho, dt, point_direction), clip,
                                                 label="point convolution covariance")
        if np.any(dist_direction != 0):
            directions = np.stack([np.zeros(trunc.size), dist_direction], axis=1)
            blocks = convolution_cross_covariance(trunc.a, trunc.a, rho, directions, directions, dt)
            plan.distributed_factor = _block_factors(blocks, clip)

    logger.info(
        f"Step plan: {scheme.value}, dt={dt:.6g}, {trunc.size} modes, "
        f"convolution width {plan.convolution_width}, persist={persist}"
    )
    return plan


def _point_covariance(trunc: SpectralTruncation, rho: float, dt: float, direction: np.ndarray) -> np.ndarray:
    """Joint (2N, 2N) covariance of the point-driven convolution, layout [u, v] x modes"""
    n = trunc.size
    active = np.flatnonzero(direction != 0)
    k, l = np.meshgrid(active, active, indexing='ij')
    k, l = k.ravel(), l.ravel()
    b1 = np.stack([np.zeros(len(k)), direction[k]], axis=1)
    b2 = np.stack([np.zeros(len(l)), direction[l]], axis=1)
    blocks = convolution_cross_covariance(trunc.a[k], trunc.a[l], rho, b1, b2, dt)
    cov = np.zeros((2, n, 2, n))
    for i in range(2):
        for j in range(2):
            cov[i, k, j, l] = blocks[:, i, j]
    return cov.reshape(2 * n, 2 * n)


# ---------------------------------------------------------------------------
# Noise for a batch of paths
# ---------------------------------------------------------------------------

@dataclass
class StepIncrements:
    """Everything random that enters one step of a batch of P paths"""
    dw2: Optional[np.ndarray] = None
    dbeta: Optional[np.ndarray] = None
    convolution: Optional[np.ndarray] = None
    jw: Optional[np.ndarray] = None
    jbeta: Optional[np.ndarray] = None


class BatchNoise:
    """
    Per-path streams of a batch, drawn in blocks of steps

    Each path owns its generators (seed, path_id, channel), so a path's
    increments do not depend on the batch it runs in.
    """

    def __init__(self, plan: StepPlan, seed: int, path_ids: Sequence[int]):
        self.plan = plan
        self.path_ids = list(path_ids)
        block = config.simulation.draw_block
        self._raw = [IncrementStream(plan.noise, plan.trunc, plan.dt, seed, pid, block) for pid in self.path_ids] \
            if plan.multiplicative_point or plan.multiplicative_distributed else None
        width = plan.convolution_width
        self._conv = [NormalBlockStream(path_generator(seed, pid, Channel.CONVOLUTION), width, block)
                      for pid in self.path_ids] if width else None
        aux = plan.auxiliary_width
        self._aux = [NormalBlockStream(path_generator(seed, pid, Channel.AUXILIARY), aux, block)
                     for pid in self.path_ids] if aux else None

    def draw(self, n_steps: int) -> List[StepIncrements]:
        plan = self.plan
        n = plan.trunc.size
        dw2 = dbeta = conv = jw = jbeta = None
        if self._raw is not None:
            raw = [stream.draw(n_steps) for stream in self._raw]
            dw2 = np.stack([r.dw2 for r in raw], axis=1)
            dbeta = np.stack([r.dbeta for r in raw], axis=1)
        if self._conv is not None:
            normals = np.stack([stream.take(n_steps) for stream in self._conv], axis=1)
            conv = self._convolution(normals)
        if self._aux is not None:
            normals = np.stack([stream.take(n_steps) for stream in self._aux], axis=1)
            h = plan.dt
            offset = 0
            if plan.multiplicative_point:
                jw = 0.5 * h * dw2 + np.sqrt(h ** 3 / 12.0) * normals[..., 0]
                offset = 1
            if plan.multiplicative_distributed:
                jbeta = 0.5 * h * dbeta + np.sqrt(plan.lambdas * h ** 3 / 12.0) * normals[..., offset:offset + n]
        return [
            StepIncrements(
                dw2=None if dw2 is None else dw2[j],
                dbeta=None if dbeta is None else dbeta[j],
                convolution=None if conv is None else conv[j],
                jw=None if jw is None else jw[j],
                jbeta=None if jbeta is None else jbeta[j],
            )
            for j in range(n_steps)
        ]

    def _convolution(self, normals: np.ndarray) -> np.ndarray:
        plan = self.plan
        n = plan.trunc.size
        if plan.augmented_sampler is not None:
            return plan.augmented_sampler.transform(normals)
        out = np.zeros(normals.shape[:-1] + (2 * n,))
        offset = 0
        if plan.point_sampler is not None:
            offset = plan.point_sampler.rank
            out += plan.point_sampler.transform(normals[..., :offset])
        if plan.distributed_factor is not None:
            z = normals[..., offset:offset + 2 * n].reshape(normals.shape[:-1] + (n, 2))
            draws = np.einsum('nij,...nj->...ni', plan.distributed_factor, z)
            out[..., :n] += draws[..., 0]
            out[..., n:] += draws[..., 1]
        return out


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    """Per-step time functionals of one step (shape (P, N) each)"""
    forcing: np.ndarray
    p: np.ndarray
    q: np.ndarray
    L: np.ndarray
    M: np.ndarray


def _kick(plan: StepPlan, t: float, state: StateField, dw2, dbeta) -> np.ndarray:
    """Left-point multiplicative impulse C(U) e(s0) dw2 + P_N[b(U) i1 dbeta]"""
    kick = np.zeros_like(state.u)
    coefficients = plan.coefficients
    if plan.multiplicative_point and dw2 is not None:
        level = np.asarray(apply_functional(coefficients.C, t, state, plan.trunc))
        kick += (level * dw2)[..., None] * plan.profile
    if plan.multiplicative_distributed and dbeta is not None:
        transform = plan.trunc.dealiased_transform
        values = coefficients.b.func(t, transform.mesh(), transform.synthesize(state.u), transform.synthesize(state.v))
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"coefficient '{coefficients.b.name}' produced non-finite values at t={t:.6g}")
        kick += transform.analyse(values * transform.synthesize(dbeta))
    return kick


def step(state: StateField, plan: StepPlan, increments: StepIncrements, coefficients: Optional[CoefficientSet] = None,
         record: bool = False):
    """
    Advance a (batched) state by one step

    U_{n+1} = e^{dt A}(U_n + kick) + Phi1 F(U_n) + additive convolution draw

    Args:
        state: Current state, u and v of shape (P, N) or (N,)
        plan: Step plan
        increments: Random inputs of the step
        coefficients: Override of the plan's coefficients
        record: Also return the StepRecord of the time functionals

    Returns:
        New StateField, or (StateField, StepRecord) when record is set
    """
    if state.size != plan.trunc.size:
        raise ConfigurationError(f"state has {state.size} modes, plan has {plan.trunc.size}")
    if coefficients is not None and coefficients is not plan.coefficients:
        plan = _with_coefficients(plan, coefficients)
    coefficients = plan.coefficients
    t = state.t
    trunc = plan.trunc
    n = trunc.size

    forcing = apply_nemytskii(coefficients.f, t, state, trunc)
    if coefficients.G.constant != 0.0:
        level = np.asarray(apply_functional(coefficients.G, t, state, trunc))
        forcing = forcing + level[..., None] * plan.profile

    kick = _kick(plan, t, state, increments.dw2, increments.dbeta)
    X = np.stack([state.u, state.v + kick], axis=-1)
    new = np.einsum('nij,...nj->...ni', plan.E, X) + plan.Phi1[:, :, 1] * forcing[..., None]

    conv = increments.convolution
    if conv is not None:
        new[..., 0] += conv[..., :n]
        new[..., 1] += conv[..., n:2 * n]

    result = StateField(new[..., 0], new[..., 1], t + plan.dt)
    if not record:
        return result

    p = np.einsum('nj,...nj->...n', plan.Phi1[:, 0, :], X) + plan.Phi2[:, 0, 1] * forcing
    q = np.einsum('nj,...nj->...n', plan.Phi2[:, 0, :], X) + plan.Phi3[:, 0, 1] * forcing
    L = kick.copy()
    M = _kick(plan, t, state, increments.jw, increments.jbeta)
    if conv is not None and plan.augmented_sampler is not None:
        p += conv[..., 2 * n:3 * n]
        q += conv[..., 3 * n:4 * n]
        L += conv[..., 4 * n:5 * n]
        M += conv[..., 5 * n:6 * n]
    return result, StepRecord(forcing, p, q, L, M)


def _with_coefficients(plan: StepPlan, coefficients: CoefficientSet) -> StepPlan:
    return build_step_plan(plan.trunc, plan.rho, plan.dt, plan.noise, coefficients, plan.persist)


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

@dataclass
class IncrementRecord:
    """Persisted per-step functionals, arrays of shape (n_steps, P, N)"""
    dt: float
    forcing: np.ndarray
    p: np.ndarray
    q: np.ndarray
    L: np.ndarray
    M: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.p.shape[0]


@dataclass
class Trajectory:
    """
    Snapshots of a batch of paths at the output times

    u and v have shape (n_out, P, N).
    """
    trunc: SpectralTruncation
    rho: float
    dt: float
    scheme: Scheme
    path_ids: np.ndarray
    times: np.ndarray
    steps: np.ndarray
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    initial: StateField = field(repr=False)
    increments: Optional[IncrementRecord] = field(default=None, repr=False)

    @property
    def paths(self) -> int:
        return len(self.path_ids)

    def snapshot(self, index: int) -> StateField:
        return StateField(self.u[index], self.v[index], float(self.times[index]))

    def time_index(self, t: float) -> int:
        """Position of an output time (matched to a step)"""
        step = int(round(t / self.dt))
        hits = np.flatnonzero(self.steps == step)
        if not len(hits):
            raise ConfigurationError(f"t={t} is not an output time")
        return int(hits[0])


def integrate(
    plan: StepPlan,
    initial: StateField,
    n_steps: int,
    output_steps: Sequence[int],
    seed: int,
    path_ids: Sequence[int]
) -> Trajectory:
    """
    Run a batch of paths and keep snapshots at the output steps

    Args:
        plan: Step plan
        initial: Initial state (single, broadcast to the batch, or batched)
        n_steps: Number of steps
        output_steps: Step indices to store (0 stores the initial state)
        seed: Run seed
        path_ids: Path identifiers; each selects its own streams

    Returns:
        Trajectory of the batch
    """
    path_ids = np.asarray(list(path_ids), dtype=np.int64)
    paths = len(path_ids)
    state = initial.broadcast(paths) if initial.u.ndim == 1 else StateField(initial.u, initial.v, initial.t)
    outputs = np.array(sorted({int(s) for s in output_steps}), dtype=np.int64)
    if len(outputs) and (outputs[0] < 0 or outputs[-1] > n_steps):
        raise ConfigurationError(f"output steps must lie in [0, {n_steps}]")

    n = plan.trunc.size
    u_out = np.zeros((len(outputs), paths, n))
    v_out = np.zeros((len(outputs), paths, n))
    slot = {int(s): i for i, s in enumerate(outputs)}
    if 0 in slot:
        u_out[slot[0]], v_out[slot[0]] = state.u, state.v

    records = None
    if plan.persist:
        records = {name: np.zeros((n_steps, paths, n)) for name in ('forcing', 'p', 'q', 'L', 'M')}

    noise = BatchNoise(plan, seed, path_ids)
    block = config.simulation.draw_block
    done = 0
    while done < n_steps:
        count = min(block, n_steps - done)
        for offset, increments in enumerate(noise.draw(count)):
            index = done + offset
            try:
                if records is not None:
                    state, rec = step(state, plan, increments, record=True)
                    for name in records:
                        records[name][index] = getattr(rec, name)
                else:
                    state = step(state, plan, increments)
            except NumericalError as e:
                bad = _locate_failure(plan, state, increments, path_ids)
                logger.error(f"Step {index} failed: {e}")
                raise IntegrationError(str(e), path_id=bad, step=index) from e
            if not state.finite:
                bad = _first_bad_path(state, path_ids)
                logger.error(f"Non-finite state at step {index} (path {bad})")
                raise IntegrationError("non-finite state", path_id=bad, step=index)
            if index + 1 in slot:
                u_out[slot[index + 1]], v_out[slot[index + 1]] = state.u, state.v
        done += count

    increments = IncrementRecord(plan.dt, **records) if records is not None else None
    return Trajectory(
        trunc=plan.trunc, rho=plan.rho, dt=plan.dt, scheme=plan.scheme, path_ids=path_ids,
        times=outputs * plan.dt + initial.t, steps=outputs, u=u_out, v=v_out,
        initial=state_at_start(initial, paths), increments=increments,
    )


def state_at_start(initial: StateField, paths: int) -> StateField:
    return initial.broadcast(paths) if initial.u.ndim == 1 else initial


def _first_bad_path(state: StateField, path_ids: np.ndarray) -> Optional[int]:
    bad = ~(np.isfinite(state.u) & np.isfinite(state.v))
    if bad.ndim == 1:
        return int(path_ids[0]) if np.any(bad) else None
    rows = np.flatnonzero(np.any(bad, axis=-1))
    return int(path_ids[rows[0]]) if len(rows) else None


def _locate_failure(plan: StepPlan, state: StateField, increments: StepIncrements,
                    path_ids: np.ndarray) -> Optional[int]:
    """Re-run a failed batched step path by path and return the first failing path id"""
    if state.u.ndim == 1:
        return int(path_ids[0])
    for row, pid in enumerate(path_ids):
        single = StepIncrements(**{
            name: None if value is None else value[row:row + 1]
            for name, value in vars(increments).items()
        })
        try:
            step(StateField(state.u[row:row + 1], state.v[row:row + 1], state.t), plan, single)
        except NumericalError:
            return int(pid)
    return None


def run_paths(scenario, seed: int, path_ids: Sequence[int], plan: Optional[StepPlan] = None) -> Trajectory:
    """
    Run the given paths of a scenario

    Args:
        scenario: Scenario (see dampspde.scenario)
        seed: Run seed
        path_ids: Paths to run
        plan: Prebuilt step plan (shared by workers)

    Returns:
        Trajectory of these paths
    """
    trunc = scenario.truncation()
    if plan is None:
        plan = build_step_plan(trunc, scenario.rho, scenario.dt, scenario.noise,
                               scenario.coefficient_set(), scenario.persist_increments)
    initial = scenario.initial_state(trunc)
    return integrate(plan, initial, scenario.n_steps, scenario.output_steps(), seed, path_ids)


def run_path(scenario, seed: int, path_id: int = 0) -> Trajectory:
    """Single path of a scenario; deterministic per (seed, path_id)"""
    return run_paths(scenario, seed, [path_id])
