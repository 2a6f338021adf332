#!/usr/bin/env python3
"""
Run configuration: a minimal sectioned key/value reader (no external dependencies).

    [problem]
    operator = prototype
    p = 1.6
    f = dipole(0.25 0.5, 0.75 0.5, 0.1, 1)

Lines are ``key = value`` under ``[section]`` headers, ``#`` starts a comment
line, values may be quoted. Floats are decimal literals only.
"""

import dataclasses
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

from . import create_operator, OPERATOR_NAMES
from .data import FieldSpec, build_field, parse_field_spec
from .errors import ConfigError, InvalidParameterError
from .mesh import DomainSpec, Mesh, build_mesh, parse_domain
from .model import OperatorSpec
from .renorm import DELTA_MODES, ContinuationSchedule
from .solver import GAUGES, SolveOptions

logger = logging.getLogger(__name__)

EXPERIMENTS = ('solve', 'continuation', 'stability', 'zero_order', 'diagnose')
STABILITY_MODES = ('datum', 'convection')
REPORT_FORMATS = ('json', 'csv')
SECTIONS = ('problem', 'mesh', 'solver', 'continuation', 'experiment', 'output')
DEFAULT_DELTA = 1e-6

_DECIMAL_RE = re.compile(r'^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$')
_LAMBDA_RE = re.compile(r'^\s*power\s*\(\s*([^,]+?)\s*,\s*([^)]+?)\s*\)\s*$')


@dataclass(frozen=True, slots=True)
class ProblemConfig:
    operator: str = 'prototype'
    p: float = 2.0
    delta: Optional[float] = None
    c: FieldSpec = FieldSpec('zero')
    f: FieldSpec = FieldSpec('zero')
    direction: Optional[tuple[float, ...]] = None
    gamma: float = 1.0
    lambda_power: Optional[tuple[float, float]] = None

    @property
    def has_lambda(self) -> bool:
        return self.lambda_power is not None

    def resolved_delta(self, mesh: Mesh) -> float:
        """``delta``, or 1e-6 over the domain diameter when left on auto."""
        return self.delta if self.delta is not None else DEFAULT_DELTA / mesh.diameter


@dataclass(frozen=True, slots=True)
class MeshConfig:
    domain: DomainSpec = DomainSpec('interval', (0.0, 1.0))
    resolution: int = 32


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    kind: str = 'solve'
    epsilon: float = 0.0
    seed: int = 0
    allow_lambda: bool = False
    stability_members: tuple[int, ...] = (1, 2, 4, 8)
    stability_mode: str = 'datum'
    stability_perturbation: FieldSpec = FieldSpec('cosine', ((1.0,),))
    upgrade_levels: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0)


@dataclass(frozen=True, slots=True)
class OutputConfig:
    directory: str = 'reports'
    formats: tuple[str, ...] = REPORT_FORMATS
    wall_clock: bool = False
    snapshot: bool = False


@dataclass(frozen=True, slots=True)
class RunConfig:
    problem: ProblemConfig = ProblemConfig()
    mesh: MeshConfig = MeshConfig()
    solver: SolveOptions = SolveOptions()
    continuation: ContinuationSchedule = ContinuationSchedule()
    experiment: ExperimentConfig = ExperimentConfig()
    output: OutputConfig = OutputConfig()
    base_dir: Path = field(default=Path('.'), compare=False, repr=False)

    def with_experiment(self, kind: str) -> 'RunConfig':
        if kind not in EXPERIMENTS:
            raise ConfigError(f"Unknown experiment {kind!r}", key='experiment.kind')
        updated = dataclasses.replace(self, experiment=dataclasses.replace(self.experiment, kind=kind))
        _cross_check(updated)
        return updated

    def with_output_directory(self, directory: Union[str, Path]) -> 'RunConfig':
        return dataclasses.replace(self, output=dataclasses.replace(self.output, directory=str(directory)))


def _parse_line(line: str) -> Optional[tuple[str, str]]:
    stripped = line.strip()
    if not stripped or stripped.startswith('#'):
        return None
    if stripped.startswith('[') and stripped.endswith(']'):
        return '[', stripped[1:-1].strip()
    if '=' not in stripped:
        return '', stripped
    key, value = stripped.split('=', 1)
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in ('"', "'"):
        value = value[1:-1]
    return key.strip(), value


def _float(value: str, key: str) -> float:
    if not _DECIMAL_RE.match(value.strip()):
        raise ConfigError(f"{key}: expected a decimal number, got {value!r}", key=key)
    result = float(value)
    if not math.isfinite(result):
        raise ConfigError(f"{key}: value must be finite", key=key)
    return result


def _int(value: str, key: str) -> int:
    if not re.match(r'^[+-]?\d+$', value.strip()):
        raise ConfigError(f"{key}: expected an integer, got {value!r}", key=key)
    return int(value)


def _bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ('true', 'yes', '1'):
        return True
    if lowered in ('false', 'no', '0'):
        return False
    raise ConfigError(f"{key}: expected true or false, got {value!r}", key=key)


def _floats(value: str, key: str) -> tuple[float, ...]:
    return tuple(_float(token, key) for token in value.replace(',', ' ').split())


def _ints(value: str, key: str) -> tuple[int, ...]:
    return tuple(_int(token, key) for token in value.replace(',', ' ').split())


def _choice(options: tuple[str, ...]) -> Callable[[str, str], str]:
    def parse(value: str, key: str) -> str:
        if value not in options:
            raise ConfigError(f"{key}: {value!r} is not one of {', '.join(options)}", key=key)
        return value
    return parse


def _domain(value: str, key: str) -> DomainSpec:
    try:
        return parse_domain(value)
    except InvalidParameterError as exc:
        raise ConfigError(f"{key}: {exc.message}", key=key) from None


def _lambda(value: str, key: str) -> Optional[tuple[float, float]]:
    if value.strip() == 'none':
        return None
    match = _LAMBDA_RE.match(value)
    if not match:
        raise ConfigError(f"{key}: expected none or power(mu, r), got {value!r}", key=key)
    return _float(match.group(1), key), _float(match.group(2), key)


def _delta(value: str, key: str) -> Optional[float]:
    return None if value.strip() == 'auto' else _float(value, key)


def _direction(value: str, key: str) -> Optional[tuple[float, ...]]:
    return None if value.strip() == 'none' else _floats(value, key)


def _formats(value: str, key: str) -> tuple[str, ...]:
    formats = tuple(value.replace(',', ' ').split())
    for item in formats:
        _choice(REPORT_FORMATS)(item, key)
    if 'json' not in formats:
        raise ConfigError(f"{key}: the json document is always written", key=key)
    return formats


# section -> key -> (parser, formatter)
_Field = tuple[Callable[[str, str], Any], Callable[[Any], str]]


def _fmt_float(value: float) -> str:
    return repr(float(value))


def _fmt_floats(values: Optional[tuple[float, ...]]) -> str:
    return 'none' if values is None else ' '.join(_fmt_float(v) for v in values)


def _fmt_bool(value: bool) -> str:
    return 'true' if value else 'false'


_SCHEMA: dict[str, dict[str, _Field]] = {
    'problem': {
        'operator': (_choice(OPERATOR_NAMES), str),
        'p': (_float, _fmt_float),
        'delta': (_delta, lambda v: 'auto' if v is None else _fmt_float(v)),
        'c': (lambda v, k: parse_field_spec(v, k), str),
        'f': (lambda v, k: parse_field_spec(v, k), str),
        'direction': (_direction, _fmt_floats),
        'gamma': (_float, _fmt_float),
        'lambda': (_lambda, lambda v: 'none' if v is None else f"power({_fmt_float(v[0])}, {_fmt_float(v[1])})"),
    },
    'mesh': {
        'domain': (_domain, str),
        'resolution': (_int, str),
    },
    'solver': {
        'newton_tol': (_float, _fmt_float),
        'newton_max_iter': (_int, str),
        'damping': (_float, _fmt_float),
        'min_step': (_float, _fmt_float),
        'picard_tol': (_float, _fmt_float),
        'picard_max_iter': (_int, str),
        'relaxation': (_float, _fmt_float),
        'gauge': (_choice(GAUGES), str),
        'pin_node': (_int, str),
        'quadrature_order': (_int, str),
    },
    'continuation': {
        'epsilons': (_floats, _fmt_floats),
        'k_levels': (_floats, _fmt_floats),
        'n_levels': (_floats, _fmt_floats),
        'a_levels': (_floats, _fmt_floats),
        'stop_tol': (_float, _fmt_float),
        'delta_mode': (_choice(DELTA_MODES), str),
        'warm_start': (_bool, _fmt_bool),
    },
    'experiment': {
        'kind': (_choice(EXPERIMENTS), str),
        'epsilon': (_float, _fmt_float),
        'seed': (_int, str),
        'allow_lambda': (_bool, _fmt_bool),
        'stability_members': (_ints, lambda v: ' '.join(str(i) for i in v)),
        'stability_mode': (_choice(STABILITY_MODES), str),
        'stability_perturbation': (lambda v, k: parse_field_spec(v, k), str),
        'upgrade_levels': (_floats, _fmt_floats),
    },
    'output': {
        'directory': (lambda v, k: v, str),
        'formats': (_formats, lambda v: ' '.join(v)),
        'wall_clock': (_bool, _fmt_bool),
        'snapshot': (_bool, _fmt_bool),
    },
}

# config key -> dataclass attribute where they differ
_ATTRIBUTES = {('problem', 'lambda'): 'lambda_power'}
_SECTION_TYPES = {
    'problem': ProblemConfig,
    'mesh': MeshConfig,
    'solver': SolveOptions,
    'continuation': ContinuationSchedule,
    'experiment': ExperimentConfig,
    'output': OutputConfig,
}


def _attribute(section: str, key: str) -> str:
    return _ATTRIBUTES.get((section, key), key)


def parse_config(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    """
    Parse configuration text.

    Raises:
        ConfigError: unknown section or key, malformed value or failed cross-check;
            ``key`` names the offending ``section.key``
    """
    values: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    section: Optional[str] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parsed = _parse_line(line)
        if parsed is None:
            continue
        key, value = parsed
        if key == '[':
            if value not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{value}]", key=value)
            section = value
            continue
        if not key:
            raise ConfigError(f"line {lineno}: expected key = value, got {value!r}", key=value)
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside of a section", key=key)
        full_key = f"{section}.{key}"
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {full_key!r}", key=full_key)
        if _attribute(section, key) in values[section]:
            raise ConfigError(f"line {lineno}: duplicate key {full_key!r}", key=full_key)
        values[section][_attribute(section, key)] = _SCHEMA[section][key][0](value, full_key)

    built = {}
    for name in SECTIONS:
        try:
            built[name] = _SECTION_TYPES[name](**values[name])
        except InvalidParameterError as exc:
            option = exc.details.get('option')
            raise ConfigError(f"[{name}] {exc.message}", key=f"{name}.{option}" if option else name) from None
    config = RunConfig(**built, base_dir=base_dir or Path('.'))
    _cross_check(config)
    return config


def _cross_check(config: RunConfig) -> None:
    problem, experiment = config.problem, config.experiment
    wants_lambda = experiment.kind == 'zero_order' or experiment.allow_lambda
    if problem.has_lambda and not wants_lambda:
        raise ConfigError(
            "problem.lambda is set but the experiment is not zero_order (set experiment.allow_lambda)",
            key='problem.lambda',
        )
    if experiment.kind == 'zero_order' and not problem.has_lambda:
        raise ConfigError("zero_order experiments need problem.lambda", key='problem.lambda')
    if problem.operator == 'power-lambda' and not problem.has_lambda:
        raise ConfigError("operator power-lambda needs problem.lambda", key='problem.lambda')
    if problem.has_lambda and problem.operator == 'linear-diffusion':
        raise ConfigError("problem.lambda combines with the prototype operator only", key='problem.lambda')
    if experiment.epsilon < 0.0:
        raise ConfigError("experiment.epsilon must be >= 0", key='experiment.epsilon')
    if not config.mesh.resolution >= 1:
        raise ConfigError("mesh.resolution must be >= 1", key='mesh.resolution')
    if problem.delta is not None and not problem.delta >= 0.0:
        raise ConfigError("problem.delta must be >= 0", key='problem.delta')
    if not problem.p > 1.0:
        raise ConfigError("problem.p must be > 1", key='problem.p')
    if experiment.kind == 'stability' and not experiment.stability_members:
        raise ConfigError("stability experiments need members", key='experiment.stability_members')
    for key, spec in (('problem.c', problem.c), ('problem.f', problem.f),
                      ('experiment.stability_perturbation', experiment.stability_perturbation)):
        if spec.kind == 'nodal':
            path = Path(spec.path or '')
            if not path.is_absolute():
                path = config.base_dir / path
            if not path.is_file():
                raise ConfigError(f"{key}: snapshot file not found: {path}", key=key)


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}", key=None) from None
    return parse_config(text, base_dir=path.resolve().parent)


def format_config(config: RunConfig, include_output_directory: bool = True) -> str:
    """Canonical text: every section and key, schema order."""
    lines: list[str] = []
    for section in SECTIONS:
        block = getattr(config, section)
        lines.append(f"[{section}]")
        for key, (_, formatter) in _SCHEMA[section].items():
            if section == 'output' and key == 'directory' and not include_output_directory:
                continue
            lines.append(f"{key} = {formatter(getattr(block, _attribute(section, key)))}")
        lines.append('')
    return '\n'.join(lines)


def config_to_dict(config: RunConfig) -> dict[str, dict[str, str]]:
    """Resolved config echo for reports (canonical string values)."""
    return {
        section: {
            key: formatter(getattr(getattr(config, section), _attribute(section, key)))
            for key, (_, formatter) in _SCHEMA[section].items()
        }
        for section in SECTIONS
    }


def build_problem(config: RunConfig) -> tuple[Mesh, OperatorSpec]:
    """Mesh and operator described by the [problem] and [mesh] sections."""
    problem = config.problem
    mesh = build_mesh(config.mesh.domain, config.mesh.resolution)
    c_field = build_field(problem.c, mesh, problem.p, base_dir=config.base_dir)
    f = build_field(problem.f, mesh, problem.p, reaction=problem.lambda_power, base_dir=config.base_dir)
    mu, r = problem.lambda_power if problem.lambda_power is not None else (None, None)
    operator = 'power-lambda' if problem.has_lambda else problem.operator
    family = create_operator(operator, gamma=problem.gamma, mu=mu, r=r)
    delta = problem.resolved_delta(mesh)
    spec = family.build(problem.p, c_field, f, delta, problem.direction)
    logger.info(f"Problem: {family.describe()} p={problem.p:g} delta={delta:g} mesh={mesh.tag}")
    return mesh, spec
