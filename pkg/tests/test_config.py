import math

import pytest

from neumann_renorm.config import (
    SECTIONS,
    build_problem,
    config_to_dict,
    format_config,
    load_config,
    parse_config,
)
from neumann_renorm.data import FieldSpec
from neumann_renorm.errors import ConfigError
from neumann_renorm.mesh import build_mesh, write_snapshot

BUNDLED = [
    'poisson_1d.cfg',
    'plap_1d.cfg',
    'dipole_2d_continuation.cfg',
    'stability_1d.cfg',
    'zero_order_1d.cfg',
    'diagnose_1d.cfg',
]


@pytest.mark.parametrize('name', BUNDLED)
def test_bundled_configs_round_trip(config_dir, name):
    config = load_config(config_dir / name)
    assert parse_config(format_config(config)) == config
    assert list(config_to_dict(config)) == list(SECTIONS)


def test_bundled_configs_build(config_dir):
    mesh, spec = build_problem(load_config(config_dir / 'poisson_1d.cfg'))
    assert mesh.n_nodes == 65
    assert spec.p == 2.0
    mesh, spec = build_problem(load_config(config_dir / 'zero_order_1d.cfg'))
    assert spec.has_lambda
    assert spec.name == 'power-lambda'
    mesh, spec = build_problem(load_config(config_dir / 'dipole_2d_continuation.cfg'))
    assert mesh.dimension == 2
    assert spec.delta == 1e-6


def test_defaults_fill_missing_sections():
    config = parse_config("[problem]\np = 3.0\n")
    assert config.problem.p == 3.0
    assert config.problem.f == FieldSpec('zero')
    assert config.experiment.kind == 'solve'
    assert config.solver.newton_tol == 1e-10
    assert config.output.formats == ('json', 'csv')
    assert config.problem.delta is None


def test_auto_delta_scales_with_domain_diameter():
    config = parse_config("[problem]\np = 1.6\n[mesh]\ndomain = unit_square\nresolution = 4\n")
    assert 'delta = auto' in format_config(config)
    _, spec = build_problem(config)
    assert spec.delta == pytest.approx(1e-6 / math.sqrt(2.0), rel=1e-12)
    _, spec = build_problem(parse_config("[problem]\np = 1.6\ndelta = 0.0\n"))
    assert spec.delta == 0.0


@pytest.mark.parametrize('text, key', [
    ("[problem]\nprobelm = 1\n", 'problem.probelm'),
    ("[probelm]\np = 2.0\n", 'probelm'),
    ("p = 2.0\n", 'p'),
    ("[problem]\np = 2.0\np = 3.0\n", 'problem.p'),
    ("[problem]\np = 0x10\n", 'problem.p'),
    ("[problem]\np = inf\n", 'problem.p'),
    ("[problem]\np = 1_000\n", 'problem.p'),
    ("[problem]\np = 1.0\n", 'problem.p'),
    ("[problem]\ndelta = -1.0\n", 'problem.delta'),
    ("[mesh]\nresolution = 2.5\n", 'mesh.resolution'),
    ("[solver]\ndamping = 1.5\n", 'solver.damping'),
    ("[solver]\ngauge = none\n", 'solver.gauge'),
    ("[continuation]\nepsilons = 1e-2 1e-1\n", 'continuation'),
    ("[continuation]\nwarm_start = maybe\n", 'continuation.warm_start'),
    ("[output]\nformats = csv\n", 'output.formats'),
    ("[problem]\nf = gaussian(1)\n", 'problem.f'),
])
def test_schema_violations_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key
    assert info.value.exit_code == 2


def test_lambda_needs_zero_order_experiment():
    with pytest.raises(ConfigError) as info:
        parse_config("[problem]\nlambda = power(1.0, 2.0)\n")
    assert info.value.key == 'problem.lambda'
    config = parse_config("[problem]\nlambda = power(1.0, 2.0)\n[experiment]\nallow_lambda = true\n")
    assert config.problem.lambda_power == (1.0, 2.0)


def test_zero_order_needs_lambda():
    with pytest.raises(ConfigError) as info:
        parse_config("[experiment]\nkind = zero_order\n")
    assert info.value.key == 'problem.lambda'


def test_lambda_rejects_linear_diffusion():
    text = "[problem]\noperator = linear-diffusion\nlambda = power(1.0, 2.0)\n[experiment]\nkind = zero_order\n"
    with pytest.raises(ConfigError):
        parse_config(text)


def test_nodal_field_must_exist(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config("[problem]\nf = nodal(missing.snap)\n", base_dir=tmp_path)
    assert info.value.key == 'problem.f'
    write_snapshot(tmp_path / 'f.snap', build_mesh('interval(0, 1)', 4))
    config = parse_config("[problem]\nf = nodal(f.snap)\n", base_dir=tmp_path)
    assert config.problem.f.kind == 'nodal'


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'absent.cfg')


def test_comments_and_quotes_are_accepted():
    text = "# run\n[problem]\n# exponent\np = '1.6'\nf = \"cosine(2.0)\"\n"
    config = parse_config(text)
    assert config.problem.p == 1.6
    assert config.problem.f == FieldSpec('cosine', ((2.0,),))


def test_with_experiment(config_dir):
    config = load_config(config_dir / 'poisson_1d.cfg')
    assert config.with_experiment('diagnose').experiment.kind == 'diagnose'
    with pytest.raises(ConfigError) as info:
        config.with_experiment('zero_order')
    assert info.value.key == 'problem.lambda'
    with pytest.raises(ConfigError) as info:
        config.with_experiment('sweep')
    assert info.value.key == 'experiment.kind'


def test_canonical_text_without_output_directory(config_dir):
    config = load_config(config_dir / 'stability_1d.cfg')
    moved = config.with_output_directory('/tmp/elsewhere')
    assert moved.output.directory == '/tmp/elsewhere'
    assert 'directory =' not in format_config(config, include_output_directory=False)
    assert format_config(config, False) == format_config(moved, False)
    assert format_config(config) != format_config(moved)
