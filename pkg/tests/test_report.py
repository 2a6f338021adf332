import json
import math

import polars as pl
import pytest

from neumann_renorm.errors import NumericError, ReportIOError
from neumann_renorm.report import REPORT_SCHEMA_VERSION, RunReport, config_hash, emit_report, find_non_finite


def _report(**overrides):
    values = dict(
        experiment='continuation',
        config={'problem': {'p': '1.6'}},
        config_hash=config_hash('[problem]\np = 1.6\n'),
        version='0.1.0',
        seed=3,
        blocks={'solution': {'iterations': 4, 'median': 0.0}},
        timings={'stages': 2},
        curves={
            'energy_decay': ((1.0, 0.5), (2.0, 0.25)),
            'measure_decay': ((1.0, 1.0 / 3.0),),
        },
    )
    values.update(overrides)
    return RunReport(**values)


def test_config_hash_is_sha256():
    digest = config_hash('abc')
    assert digest == 'ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad'


def test_emit_report_writes_document_and_curves(tmp_path):
    report = _report()
    written = emit_report(report, tmp_path / 'out')
    names = [path.name for path in written]
    assert names == [
        f"{report.stem}.json",
        f"{report.stem}_energy_decay.csv",
        f"{report.stem}_measure_decay.csv",
    ]
    assert report.stem == f"continuation_{report.config_hash[:12]}"
    doc = json.loads(written[0].read_text())
    assert doc['schema_version'] == REPORT_SCHEMA_VERSION
    assert doc['solution']['iterations'] == 4
    assert doc['curves'] == ['energy_decay', 'measure_decay']
    assert doc['seed'] == 3


def test_curve_csv_layout(tmp_path):
    written = emit_report(_report(), tmp_path)
    text = written[2].read_text()
    assert text.splitlines()[0] == 'parameter,value'
    frame = pl.read_csv(written[2])
    assert frame.columns == ['parameter', 'value']
    # 17 significant digits survive the CSV
    assert frame['value'][0] == 1.0 / 3.0


def test_json_only_format(tmp_path):
    written = emit_report(_report(), tmp_path, formats=('json',))
    assert len(written) == 1
    assert sorted(p.name for p in tmp_path.iterdir()) == [written[0].name]


def test_reports_are_byte_identical(tmp_path):
    first = emit_report(_report(), tmp_path / 'a')
    second = emit_report(_report(), tmp_path / 'b')
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()


def test_non_finite_numbers_are_rejected(tmp_path):
    with pytest.raises(NumericError) as info:
        emit_report(_report(blocks={'solution': {'residual': math.nan}}), tmp_path)
    assert info.value.details['path'] == '$.solution.residual'
    assert info.value.exit_code == 7
    with pytest.raises(NumericError):
        emit_report(_report(curves={'flux_decay': ((1.0, math.inf),)}), tmp_path)
    assert not any(tmp_path.iterdir())


def test_find_non_finite_paths():
    assert find_non_finite({'a': [1.0, {'b': 2.0}]}) is None
    assert find_non_finite({'a': [1.0, {'b': -math.inf}]}) == '$.a[1].b'


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x')
    with pytest.raises(ReportIOError) as info:
        emit_report(_report(), blocker)
    assert info.value.exit_code == 8
