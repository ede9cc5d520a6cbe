"""
Coefficients Module
Nemytskii nonlinearities f, b and scalar functionals G, C with declared
Lipschitz and growth constants, evaluated pseudo-spectrally
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional
import logging

import numpy as np
from numpy.polynomial import Polynomial

from dampspde.core.spectral_domain import SineTransform, SpectralTruncation
from dampspde.core.streams import Channel, derive_generator
from dampspde.exceptions import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NemytskiiMap:
    """
    Pointwise map phi(t, s, u, v) with declared constants

    Lipschitz in the sense |phi(x, x') - phi(y, y')| <= L (|x - y| + |x' - y'|).
    """
    name: str
    func: Callable = field(repr=False, compare=False)
    lipschitz: float
    growth: float
    params: Dict[str, Any] = field(default_factory=dict)
    state_independent: bool = False
    constant: Optional[float] = None

    def evaluate(self, u, v=None, t: float = 0.0, s=None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = np.zeros_like(u) if v is None else np.asarray(v, dtype=float)
        return self.func(t, s, u, v)

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, **self.params}


@dataclass(frozen=True)
class ScalarFunctional:
    """Map (t, u(.), v(.)) -> R with a Lipschitz constant against ||u||_L2 + ||v||_L2"""
    name: str
    func: Callable = field(repr=False, compare=False)
    lipschitz: float
    growth: float
    params: Dict[str, Any] = field(default_factory=dict)
    state_independent: bool = False
    constant: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, **self.params}


# ---------------------------------------------------------------------------
# Catalogue
# ---------------------------------------------------------------------------

def _component(params: Mapping[str, Any]) -> str:
    component = params.get('component', 'u')
    if component not in ('u', 'v'):
        raise ConfigurationError(f"component must be 'u' or 'v', got {component!r}")
    return component


def _zero_map(params):
    return NemytskiiMap('zero', lambda t, s, u, v: np.zeros_like(u), 0.0, 0.0, {},
                        state_independent=True, constant=0.0)


def _constant_map(params):
    value = float(params.get('value', 1.0))
    return NemytskiiMap('constant', lambda t, s, u, v: np.full_like(u, value), 0.0, abs(value),
                        {'value': value}, state_independent=True, constant=value)


def _linear_map(params):
    alpha = float(params.get('alpha', 1.0))
    beta = float(params.get('beta', 0.0))
    lipschitz = max(abs(alpha), abs(beta))
    return NemytskiiMap('linear', lambda t, s, u, v: alpha * u + beta * v, lipschitz, lipschitz,
                        {'alpha': alpha, 'beta': beta})


def _sin_map(params):
    amplitude = float(params.get('amplitude', 1.0))
    frequency = float(params.get('frequency', 1.0))
    component = _component(params)

    def func(t, s, u, v):
        x = u if component == 'u' else v
        return amplitude * np.sin(frequency * x)

    return NemytskiiMap('sin', func, abs(amplitude * frequency), abs(amplitude),
                        {'amplitude': amplitude, 'frequency': frequency, 'component': component})


def _clipped_polynomial_map(params):
    coefficients = [float(c) for c in params.get('coefficients', [0.0, 1.0])]
    clip = float(params.get('clip', 1.0))
    if clip <= 0:
        raise ConfigurationError(f"clip must be positive, got {clip}", field="coefficients.clip")
    component = _component(params)
    poly = Polynomial(coefficients)
    slope = poly.deriv()

    # max |p'| on [-clip, clip] sits at an endpoint or a critical point of p'
    candidates = [-clip, clip]
    if slope.degree() >= 1:
        candidates += [r.real for r in slope.deriv().roots() if abs(r.imag) < 1e-12 and abs(r.real) <= clip]
    lipschitz = float(max(abs(slope(x)) for x in candidates))
    growth = float(max(abs(poly(x)) for x in np.linspace(-clip, clip, 257))) + lipschitz

    def func(t, s, u, v):
        x = u if component == 'u' else v
        return poly(np.clip(x, -clip, clip))

    return NemytskiiMap('clipped_polynomial', func, lipschitz, growth,
                        {'coefficients': coefficients, 'clip': clip, 'component': component})


NEMYTSKII_CATALOGUE: Dict[str, Callable[[Mapping[str, Any]], NemytskiiMap]] = {
    'zero': _zero_map,
    'constant': _constant_map,
    'linear': _linear_map,
    'sin': _sin_map,
    'clipped_polynomial': _clipped_polynomial_map,
}


_PROFILES = {
    'identity': (lambda x: x, 1.0),
    'sin': (np.sin, 1.0),
    'tanh': (np.tanh, 1.0),
}


def _zero_functional(params, volume):
    return ScalarFunctional('zero', lambda t, u, v, tr: np.zeros(u.shape[:-tr.d]), 0.0, 0.0, {},
                            state_independent=True, constant=0.0)


def _constant_functional(params, volume):
    value = float(params.get('value', 1.0))
    return ScalarFunctional('constant', lambda t, u, v, tr: np.full(u.shape[:-tr.d], value), 0.0, abs(value),
                            {'value': value}, state_independent=True, constant=value)


def _integral_functional(params, volume):
    """C(x) = amplitude * int phi(x(s)) ds"""
    amplitude = float(params.get('amplitude', 1.0))
    phi = params.get('phi', 'sin')
    component = _component(params)
    extra: Dict[str, Any] = {}
    if phi == 'constant':
        value = float(params.get('value', 1.0))
        extra['value'] = value

        def profile(x):
            return np.full_like(x, value)
        phi_lipschitz, phi_zero = 0.0, value
    elif phi in _PROFILES:
        profile, phi_lipschitz = _PROFILES[phi]
        phi_zero = 0.0
    else:
        raise ConfigurationError(f"unknown profile {phi!r}", field="coefficients.phi")

    def func(t, u, v, transform: SineTransform):
        x = u if component == 'u' else v
        return amplitude * transform.integrate_closed(profile(x), boundary_value=phi_zero)

    # |int phi(x) - phi(y)| <= L_phi |S|^{1/2} ||x - y||_L2
    lipschitz = abs(amplitude) * phi_lipschitz * np.sqrt(volume)
    growth = lipschitz + abs(amplitude) * abs(phi_zero) * volume
    constant = amplitude * phi_zero * volume if phi == 'constant' else None
    return ScalarFunctional(
        'integral', func, float(lipschitz), float(growth),
        {'phi': phi, 'amplitude': amplitude, 'component': component, **extra},
        state_independent=phi == 'constant', constant=constant,
    )


FUNCTIONAL_CATALOGUE: Dict[str, Callable[[Mapping[str, Any], float], ScalarFunctional]] = {
    'zero': _zero_functional,
    'constant': _constant_functional,
    'integral': _integral_functional,
}


def build_nemytskii(spec: Optional[Mapping[str, Any]]) -> NemytskiiMap:
    """Build a catalogue map from {name = ..., <params>}; None gives zero"""
    if spec is None:
        return _zero_map({})
    spec = dict(spec)
    name = spec.pop('name', None)
    if name not in NEMYTSKII_CATALOGUE:
        raise ConfigurationError(f"unknown pointwise coefficient {name!r}; "
                                 f"choose from {sorted(NEMYTSKII_CATALOGUE)}", field="coefficients")
    return NEMYTSKII_CATALOGUE[name](spec)


def build_functional(spec: Optional[Mapping[str, Any]], volume: float = 1.0) -> ScalarFunctional:
    """
    Build a catalogue functional from {name = ..., <params>}

    Args:
        spec: Catalogue entry; None gives zero
        volume: Domain volume |S| entering the declared constants
    """
    if spec is None:
        return _zero_functional({}, volume)
    spec = dict(spec)
    name = spec.pop('name', None)
    if name not in FUNCTIONAL_CATALOGUE:
        raise ConfigurationError(f"unknown functional {name!r}; "
                                 f"choose from {sorted(FUNCTIONAL_CATALOGUE)}", field="coefficients")
    return FUNCTIONAL_CATALOGUE[name](spec, volume)


@dataclass(frozen=True)
class CoefficientSet:
    """f, b (pointwise) and G, C (functionals) of one scenario"""
    f: NemytskiiMap = field(default_factory=lambda: _zero_map({}))
    b: NemytskiiMap = field(default_factory=lambda: _zero_map({}))
    G: ScalarFunctional = field(default_factory=lambda: _zero_functional({}, 1.0))
    C: ScalarFunctional = field(default_factory=lambda: _zero_functional({}, 1.0))

    @property
    def additive_point(self) -> bool:
        return self.C.constant is not None

    @property
    def additive_distributed(self) -> bool:
        return self.b.constant is not None

    @property
    def linear_additive(self) -> bool:
        """Drift independent of the state and both noises additive"""
        return (self.f.state_independent and self.G.state_independent
                and self.additive_point and self.additive_distributed)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {'f': self.f.to_dict(), 'b': self.b.to_dict(), 'G': self.G.to_dict(), 'C': self.C.to_dict()}


# ---------------------------------------------------------------------------
# Pseudo-spectral evaluation
# ---------------------------------------------------------------------------

def apply_nemytskii(mapping: NemytskiiMap, t: float, state, trunc: SpectralTruncation) -> np.ndarray:
    """
    Coefficients of the second-slot forcing s -> phi(t, s, u(s), v(s))

    Fields are synthesized on the dealiased grid, mapped pointwise and
    analysed back onto the retained modes.

    Args:
        mapping: Pointwise map
        t: Time
        state: Object with coefficient arrays ``u`` and ``v`` (..., N)
        trunc: Truncation

    Returns:
        Coefficient array of the same shape as state.u
    """
    u = np.asarray(state.u, dtype=float)
    if mapping.constant == 0.0:
        return np.zeros_like(u)
    transform = trunc.dealiased_transform
    u_grid = transform.synthesize(u)
    v_grid = transform.synthesize(np.asarray(state.v, dtype=float))
    values = mapping.func(t, transform.mesh(), u_grid, v_grid)
    values = np.broadcast_to(values, u_grid.shape)
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"coefficient '{mapping.name}' produced non-finite values at t={t:.6g}")
    return transform.analyse(values)


def apply_functional(functional: ScalarFunctional, t: float, state, trunc: SpectralTruncation):
    """
    Scalar value (batched over leading axes) of a functional on the state

    Returns:
        float for a single state, array for a batch
    """
    u = np.asarray(state.u, dtype=float)
    if functional.constant is not None:
        value = np.full(u.shape[:-1], functional.constant)
    else:
        transform = trunc.dealiased_transform
        value = functional.func(t, transform.synthesize(u),
                                transform.synthesize(np.asarray(state.v, dtype=float)), transform)
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"functional '{functional.name}' produced non-finite values at t={t:.6g}")
    return float(value) if np.ndim(value) == 0 else value


# ---------------------------------------------------------------------------
# Spot checks
# ---------------------------------------------------------------------------

@dataclass
class SpotCheck:
    """Observed Lipschitz ratios against the declared constant"""
    name: str
    declared: float
    max_ratio: float
    trials: int
    slack: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.declared * (1.0 + self.slack) + 1e-14


class _Pair:
    def __init__(self, u, v):
        self.u, self.v = u, v


def _random_states(trunc: SpectralTruncation, trials: int, seed: int):
    gen = derive_generator(seed, int(Channel.MONTE_CARLO), trials)
    scale = trunc.mu ** -0.75

    def draw():
        return gen.standard_normal((trials, trunc.size)) * scale

    return _Pair(draw(), draw()), _Pair(draw(), draw())


def _distance(first: _Pair, second: _Pair) -> np.ndarray:
    return np.linalg.norm(first.u - second.u, axis=-1) + np.linalg.norm(first.v - second.v, axis=-1)


def spot_check_lipschitz(mapping: NemytskiiMap, trunc: SpectralTruncation, trials: int = 100, seed: int = 0) -> SpotCheck:
    """||apply(U1) - apply(U2)||_L2 against L (||u1 - u2|| + ||v1 - v2||) on random pairs"""
    first, second = _random_states(trunc, trials, seed)
    diff = apply_nemytskii(mapping, 0.0, first, trunc) - apply_nemytskii(mapping, 0.0, second, trunc)
    ratios = np.linalg.norm(diff, axis=-1) / _distance(first, second)
    check = SpotCheck(mapping.name, mapping.lipschitz, float(ratios.max()), trials)
    logger.info(f"Lipschitz spot check '{mapping.name}': {check.max_ratio:.6g} <= {check.declared:.6g}: {check.passed}")
    return check


def spot_check_functional(functional: ScalarFunctional, trunc: SpectralTruncation, trials: int = 100,
                          seed: int = 0) -> SpotCheck:
    """|F(U1) - F(U2)| against L (||u1 - u2|| + ||v1 - v2||) on random pairs"""
    first, second = _random_states(trunc, trials, seed)
    diff = np.abs(apply_functional(functional, 0.0, first, trunc) - apply_functional(functional, 0.0, second, trunc))
    ratios = diff / _distance(first, second)
    check = SpotCheck(functional.name, functional.lipschitz, float(np.max(ratios)), trials)
    logger.info(f"Functional spot check '{functional.name}': {check.max_ratio:.6g} <= {check.declared:.6g}: {check.passed}")
    return check
