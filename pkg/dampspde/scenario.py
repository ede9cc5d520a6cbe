"""
Scenario Module
TOML scenario files: parsing with field diagnostics, canonical
serialization, content digest and the derived simulation inputs
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
from hashlib import sha256
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union
import logging
import tomllib

import numpy as np
import tomli_w

from dampspde.config import config
from dampspde.core.analysis import holder_output_times
from dampspde.core.coefficients import CoefficientSet, build_functional, build_nemytskii
from dampspde.core.integrator import StateField
from dampspde.core.noise_model import (
    AdmissibilityReport, CompactCovariance, LrValued, NoiseSpec, PointChannel, WhiteNoise1D,
    check_admissibility, decaying_lambdas, exact
)
from dampspde.core.spectral_domain import BoxDomain, EquationKind, SpectralTruncation, enumerate_modes
from dampspde.exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

Number = Union[int, float]
PROFILES = ('zero', 'mode', 'parabola')
COEFFICIENT_SLOTS = ('f', 'b', 'G', 'C')


# ---------------------------------------------------------------------------
# Field access with dotted-path diagnostics
# ---------------------------------------------------------------------------

def _table(data: Mapping[str, Any], key: str, path: str, required: bool = True) -> Dict[str, Any]:
    value = data.get(key)
    where = f"{path}.{key}" if path else key
    if value is None:
        if required:
            raise ConfigurationError("missing table", field=where)
        return {}
    if not isinstance(value, dict):
        raise ConfigurationError(f"expected a table, got {type(value).__name__}", field=where)
    return value


def _number(data: Mapping[str, Any], key: str, path: str, default: Optional[Number] = None) -> float:
    where = f"{path}.{key}"
    if key not in data:
        if default is None:
            raise ConfigurationError("missing field", field=where)
        return float(default)
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"expected a number, got {value!r}", field=where)
    return float(value)


def _integer(data: Mapping[str, Any], key: str, path: str, default: Optional[int] = None) -> int:
    where = f"{path}.{key}"
    if key not in data:
        if default is None:
            raise ConfigurationError("missing field", field=where)
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"expected an integer, got {value!r}", field=where)
    return value


def _numbers(data: Mapping[str, Any], key: str, path: str) -> Tuple[float, ...]:
    where = f"{path}.{key}"
    value = data.get(key)
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise ConfigurationError(f"expected a list of numbers, got {value!r}", field=where)
    return tuple(float(x) for x in value)


def _multi_indices(data: Mapping[str, Any], key: str, path: str) -> Optional[Tuple[Tuple[int, ...], ...]]:
    if key not in data:
        return None
    value = data[key]
    try:
        return tuple(tuple(int(n) for n in idx) for idx in value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"expected a list of integer lists, got {value!r}", field=f"{path}.{key}")


# ---------------------------------------------------------------------------
# Scenario pieces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistributedSpec:
    """Distributed noise as written in the scenario (decay is resolved per truncation)"""
    kind: str
    lambdas: Optional[Tuple[float, ...]] = None
    decay: Optional[float] = None
    basis: Optional[Tuple[Tuple[int, ...], ...]] = None
    r: Optional[float] = None

    def build(self, trunc: SpectralTruncation):
        if self.kind == 'white':
            return WhiteNoise1D()
        if self.lambdas is not None:
            compact = CompactCovariance(self.lambdas, self.basis)
        else:
            compact = decaying_lambdas(trunc, self.decay)
        if self.kind == 'lr':
            return LrValued(self.r, compact.lambdas, compact.basis)
        return compact

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {'kind': self.kind}
        if self.lambdas is not None:
            out['lambdas'] = list(self.lambdas)
        if self.decay is not None:
            out['decay'] = self.decay
        if self.basis is not None:
            out['basis'] = [list(idx) for idx in self.basis]
        if self.r is not None:
            out['r'] = self.r
        return out


def _parse_distributed(data: Mapping[str, Any]) -> DistributedSpec:
    path = "noise.distributed"
    kind = data.get('kind', 'compact')
    if kind not in ('compact', 'white', 'lr'):
        raise ConfigurationError(f"kind must be compact, white or lr, got {kind!r}", field=f"{path}.kind")
    if kind == 'white':
        return DistributedSpec('white')
    lambdas = _numbers(data, 'lambdas', path) if 'lambdas' in data else None
    decay = _number(data, 'decay', path) if 'decay' in data else None
    if (lambdas is None) == (decay is None):
        raise ConfigurationError("give exactly one of lambdas or decay", field=path)
    r = _number(data, 'r', path) if kind == 'lr' else None
    return DistributedSpec(kind, lambdas, decay, _multi_indices(data, 'basis', path), r)


@dataclass(frozen=True)
class InitialData:
    """
    Initial position and velocity

    Each slot is a coefficient list (mode positions in ascending mu) or a
    named profile table; eta tags the regularity of the data.
    """
    u0: Any = 'zero'
    u1: Any = 'zero'
    eta: float = 0.5

    def __post_init__(self):
        for slot in ('u0', 'u1'):
            value = getattr(self, slot)
            if isinstance(value, str):
                object.__setattr__(self, slot, {'profile': value})
            elif isinstance(value, list):
                object.__setattr__(self, slot, tuple(float(x) for x in value))

    def coefficients(self, slot: str, trunc: SpectralTruncation) -> np.ndarray:
        spec = getattr(self, slot)
        where = f"initial.{slot}"
        if isinstance(spec, tuple):
            if len(spec) > trunc.size:
                raise ConfigurationError(f"{len(spec)} coefficients for {trunc.size} modes", field=where)
            out = np.zeros(trunc.size)
            out[:len(spec)] = spec
            return out
        spec = dict(spec) if isinstance(spec, Mapping) else {'profile': spec}
        profile = spec.get('profile', 'zero')
        amplitude = float(spec.get('amplitude', 1.0))
        if profile == 'zero':
            return np.zeros(trunc.size)
        if profile == 'mode':
            index = tuple(int(n) for n in spec.get('index', [1] * trunc.d))
            position = trunc.position.get(index)
            if position is None:
                raise ConfigurationError(f"mode {index} is not retained", field=f"{where}.index")
            out = np.zeros(trunc.size)
            out[position] = amplitude
            return out
        if profile == 'parabola':
            transform = trunc.transform
            values = amplitude * np.ones(transform.shape)
            for coords, length in zip(transform.mesh(), trunc.domain.lengths):
                values = values * coords * (length - coords)
            return transform.analyse(values)
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {PROFILES}", field=f"{where}.profile")

    def to_dict(self) -> Dict[str, Any]:
        def slot(value):
            return list(value) if isinstance(value, tuple) else value
        return {'u0': slot(self.u0), 'u1': slot(self.u1), 'eta': self.eta}


def _parse_initial_slot(value, where: str):
    if isinstance(value, list):
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
            raise ConfigurationError("coefficient lists must hold numbers", field=where)
        return tuple(float(x) for x in value)
    if isinstance(value, str):
        if value not in PROFILES:
            raise ConfigurationError(f"unknown profile {value!r}", field=where)
        return {'profile': value}
    if isinstance(value, dict):
        if value.get('profile', 'zero') not in PROFILES:
            raise ConfigurationError(f"unknown profile {value.get('profile')!r}", field=f"{where}.profile")
        out = dict(value)
        if 'amplitude' in out:
            out['amplitude'] = _number(out, 'amplitude', where)
        return out
    raise ConfigurationError(f"expected a list, a profile name or a table, got {value!r}", field=where)


@dataclass(frozen=True)
class OutputSpec:
    """Which steps are stored"""
    kind: str = 'uniform'
    spacing: Optional[float] = None
    deltas: Tuple[float, ...] = (0.0,)
    raw_coefficients: bool = False

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {'kind': self.kind, 'deltas': list(self.deltas), 'raw_coefficients': self.raw_coefficients}
        if self.spacing is not None:
            out['spacing'] = self.spacing
        return out


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """
    One simulation setup

    Derived objects (truncation, noise, coefficients) are built on demand;
    equality and the digest follow the canonical serialization.
    """
    kind: EquationKind
    rho: float
    q: Union[float, str]
    domain: BoxDomain
    cutoff: int
    T: float
    dt: float
    seed: int
    w_shift: float = 1.0
    point: Optional[Tuple[float, ...]] = None
    distributed: Optional[DistributedSpec] = None
    coefficients: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    initial: InitialData = field(default_factory=InitialData)
    output: OutputSpec = field(default_factory=OutputSpec)
    paths: int = 1
    persist_increments: bool = False
    theta_B: Optional[Union[float, str]] = None
    theta_C: Optional[Union[float, str]] = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigurationError(f"rho must be positive, got {self.rho}", field="equation.rho")
        if not (self.T > 0 and self.dt > 0):
            raise ConfigurationError("T and dt must be positive", field="time")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigurationError(f"dt = {self.dt} does not divide T = {self.T}", field="time.dt")
        if self.output.spacing is not None:
            ratio = self.output.spacing / self.dt
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ConfigurationError(f"dt does not divide output spacing {self.output.spacing}",
                                         field="output.spacing")
        if self.paths < 1:
            raise ConfigurationError("at least one path is required", field="run.paths")
        if self.point is not None and not self.domain.contains(self.point):
            raise DomainError(f"s0 = {self.point} must lie inside the open box {self.domain.lengths}")
        for slot in self.coefficients:
            if slot not in COEFFICIENT_SLOTS:
                raise ConfigurationError(f"unknown coefficient slot {slot!r}", field=f"coefficients.{slot}")

    # -- derived inputs --------------------------------------------------

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def d(self) -> int:
        return self.domain.d

    def truncation(self) -> SpectralTruncation:
        return self._truncation

    @cached_property
    def _truncation(self) -> SpectralTruncation:
        return enumerate_modes(self.domain, self.kind, self.cutoff, self.w_shift)

    @property
    def noise(self) -> NoiseSpec:
        return self._noise

    @cached_property
    def _noise(self) -> NoiseSpec:
        point = PointChannel(tuple(self.point)) if self.point is not None else None
        distributed = self.distributed.build(self.truncation()) if self.distributed is not None else None
        return NoiseSpec(point, distributed)

    def coefficient_set(self) -> CoefficientSet:
        volume = self.domain.volume
        return CoefficientSet(
            f=build_nemytskii(self.coefficients.get('f')),
            b=build_nemytskii(self.coefficients.get('b')),
            G=build_functional(self.coefficients.get('G'), volume),
            C=build_functional(self.coefficients.get('C'), volume),
        )

    def initial_state(self, trunc: Optional[SpectralTruncation] = None) -> StateField:
        trunc = trunc or self.truncation()
        return StateField(self.initial.coefficients('u0', trunc), self.initial.coefficients('u1', trunc), 0.0)

    def output_steps(self) -> List[int]:
        n = self.n_steps
        if self.output.kind == 'holder':
            return holder_output_times(self.T, self.dt)[0]
        every = int(round(self.output.spacing / self.dt)) if self.output.spacing else n
        steps = list(range(0, n + 1, every))
        if steps[-1] != n:
            steps.append(n)
        return steps

    def admissibility(self) -> AdmissibilityReport:
        return check_admissibility(self.kind, self.d, self.q, self.noise, self.theta_B, self.theta_C)

    def with_run(self, seed: Optional[int] = None, paths: Optional[int] = None,
                 persist_increments: Optional[bool] = None) -> 'Scenario':
        """Copy with command-line overrides of the run section"""
        return replace(
            self,
            seed=self.seed if seed is None else int(seed),
            paths=self.paths if paths is None else int(paths),
            persist_increments=self.persist_increments if persist_increments is None else bool(persist_increments),
        )

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        """Canonical nested mapping (TOML has no null, so unset fields are omitted)"""
        domain: Dict[str, Any] = {'lengths': list(self.domain.lengths)}
        if self.domain.grid_points_per_axis:
            domain['grid_points'] = self.domain.grid_points_per_axis
        noise: Dict[str, Any] = {}
        if self.point is not None:
            noise['point'] = {'s0': list(self.point)}
        if self.distributed is not None:
            noise['distributed'] = self.distributed.to_dict()
        exponents = {k: v for k, v in (('theta_B', self.theta_B), ('theta_C', self.theta_C)) if v is not None}
        out = {
            'schema': config.schema_version,
            'equation': {'kind': self.kind.value, 'rho': self.rho, 'q': self.q},
            'domain': domain,
            'truncation': {'cutoff': self.cutoff, 'w_shift': self.w_shift},
            'noise': noise,
            'coefficients': {k: dict(self.coefficients[k]) for k in sorted(self.coefficients)},
            'initial': self.initial.to_dict(),
            'time': {'T': self.T, 'dt': self.dt},
            'output': self.output.to_dict(),
            'run': {'paths': self.paths, 'seed': self.seed, 'persist_increments': self.persist_increments},
        }
        if exponents:
            out['exponents'] = exponents
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        """sha256 of the canonical serialization"""
        return sha256(self.to_toml().encode('utf-8')).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, Scenario) and self.to_dict() == other.to_dict()

    __hash__ = None


def _fraction_text(data: Mapping[str, Any], key: str, path: str, required: bool = True):
    """Number or rational text such as "4/3" (kept exact)"""
    where = f"{path}.{key}"
    if key not in data:
        if required:
            raise ConfigurationError("missing field", field=where)
        return None
    value = data[key]
    if isinstance(value, str):
        try:
            exact(value)
        except (ValueError, ZeroDivisionError):
            raise ConfigurationError(f"not a number: {value!r}", field=where)
        return value
    return _number(data, key, path)


def scenario_from_dict(data: Mapping[str, Any]) -> Scenario:
    """
    Build a Scenario from parsed TOML

    Raises:
        ConfigurationError: Missing or ill-typed fields, named by dotted path
    """
    schema = data.get('schema')
    if schema != config.schema_version:
        raise ConfigurationError(f"unsupported schema {schema!r} (expected {config.schema_version})", field="schema")
    equation = _table(data, 'equation', '')
    domain = _table(data, 'domain', '')
    truncation = _table(data, 'truncation', '')
    noise = _table(data, 'noise', '', required=False)
    time = _table(data, 'time', '')
    run = _table(data, 'run', '')
    output = _table(data, 'output', '', required=False)
    exponents = _table(data, 'exponents', '', required=False)

    point_table = _table(noise, 'point', 'noise', required=False)
    point = _numbers(point_table, 's0', 'noise.point') if point_table else None
    dist_table = _table(noise, 'distributed', 'noise', required=False)
    distributed = _parse_distributed(dist_table) if dist_table else None

    coefficients = {}
    for slot, spec in _table(data, 'coefficients', '', required=False).items():
        if not isinstance(spec, dict) or 'name' not in spec:
            raise ConfigurationError("expected a table with a name", field=f"coefficients.{slot}")
        coefficients[slot] = dict(spec)

    initial_table = _table(data, 'initial', '', required=False)
    initial = InitialData(
        u0=_parse_initial_slot(initial_table.get('u0', 'zero'), 'initial.u0'),
        u1=_parse_initial_slot(initial_table.get('u1', 'zero'), 'initial.u1'),
        eta=_number(initial_table, 'eta', 'initial', default=0.5),
    )

    kind = output.get('kind', 'uniform')
    if kind not in ('uniform', 'holder'):
        raise ConfigurationError(f"kind must be uniform or holder, got {kind!r}", field="output.kind")
    out_spec = OutputSpec(
        kind=kind,
        spacing=_number(output, 'spacing', 'output') if 'spacing' in output else None,
        deltas=_numbers(output, 'deltas', 'output') if 'deltas' in output else (0.0,),
        raw_coefficients=bool(output.get('raw_coefficients', False)),
    )

    if 'kind' not in equation:
        raise ConfigurationError("missing field", field="equation.kind")
    if 'lengths' not in domain:
        raise ConfigurationError("missing field", field="domain.lengths")
    if 'seed' not in run:
        raise ConfigurationError("missing field", field="run.seed")

    scenario = Scenario(
        kind=EquationKind.parse(equation['kind']),
        rho=_number(equation, 'rho', 'equation'),
        q=_fraction_text(equation, 'q', 'equation'),
        domain=BoxDomain(_numbers(domain, 'lengths', 'domain'),
                         _integer(domain, 'grid_points', 'domain') if 'grid_points' in domain else None),
        cutoff=_integer(truncation, 'cutoff', 'truncation'),
        w_shift=_number(truncation, 'w_shift', 'truncation', default=1.0),
        T=_number(time, 'T', 'time'),
        dt=_number(time, 'dt', 'time'),
        seed=_integer(run, 'seed', 'run'),
        paths=_integer(run, 'paths', 'run', default=1),
        persist_increments=bool(run.get('persist_increments', False)),
        point=point,
        distributed=distributed,
        coefficients=coefficients,
        initial=initial,
        output=out_spec,
        theta_B=_fraction_text(exponents, 'theta_B', 'exponents', required=False),
        theta_C=_fraction_text(exponents, 'theta_C', 'exponents', required=False),
    )
    # Catalogue names are checked here so a bad name fails at load time
    scenario.coefficient_set()
    return scenario


def parse_scenario(text: str) -> Scenario:
    """Parse TOML text; syntax errors keep the decoder's line and column"""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"malformed TOML: {e}") from e
    return scenario_from_dict(data)


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read a scenario file"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigurationError(f"cannot read scenario {path}: {e}") from e
    scenario = parse_scenario(text)
    logger.info(f"Loaded scenario {path} ({scenario.kind.value}, d={scenario.d}, cutoff={scenario.cutoff})")
    return scenario


def save_scenario(scenario: Scenario, path: Union[str, Path]) -> Path:
    """Write the canonical serialization"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scenario.to_toml(), encoding='utf-8')
    return path
