import json

import numpy as np
import pytest

from pivot_align.evaluation.report import (
    RetrievalReport,
    asymmetry_matrix,
    merge_reports,
    read_matrix_csv,
    read_report,
    report_stem,
    write_report,
)
from pivot_align.exceptions import DataError, ShapeError


def test_asymmetry_matrix():
    assert np.allclose(asymmetry_matrix([[0.0, 0.6], [0.4, 0.0]]), [[0.0, 0.2], [-0.2, 0.0]])
    with pytest.raises(ShapeError, match='asymmetry_matrix'):
        asymmetry_matrix(np.zeros((2, 3)))


def test_build():
    report = RetrievalReport.build(
        'sentence', {'accuracy': np.float32(0.5)}, ['a', 'b'], np.array([[1.0, 0.6], [0.4, 1.0]]), {'n': np.int64(3)}
    )
    assert report.metrics == {'accuracy': 0.5}
    assert report.asymmetry == pytest.approx([[0.0, 0.2], [-0.2, 0.0]])
    assert report.meta['n'] == 3
    assert 'created' in report.meta
    assert np.array_equal(report.matrix_array(), [[1.0, 0.6], [0.4, 1.0]])

    plain = RetrievalReport.build('probe', {'acc_seen': 0.8})
    assert plain.matrix is None and plain.asymmetry is None and plain.matrix_array() is None

    with pytest.raises(ShapeError, match='RetrievalReport'):
        RetrievalReport.build('sentence', {}, ['a', 'b', 'c'], np.eye(2))


def test_write_and_read(tmp_path):
    report = RetrievalReport.build('word', {'recall@10': 0.25}, ['a', 'b'], [[1.0, np.nan], [0.5, 1.0]])
    path = write_report(report, tmp_path / 'reports', 'abc123')
    assert path.name == 'word-abc123.json'
    assert json.loads(path.read_text())['protocol'] == 'word'
    assert read_report(path).metrics == report.metrics
    matrix = read_matrix_csv(tmp_path / 'reports' / 'word-abc123.matrix.csv')
    assert matrix[1, 0] == 0.5 and np.isnan(matrix[0, 1])
    assert (tmp_path / 'reports' / 'word-abc123.asymmetry.csv').exists()


def test_report_without_matrix_writes_json_only(tmp_path):
    write_report(RetrievalReport.build('cluster', {'semantic_ratio': 0.6}), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ['cluster.json']


def test_report_stem():
    assert report_stem('sentence') == 'sentence'
    assert report_stem('sentence', 'ff00') == 'sentence-ff00'


def test_read_errors(tmp_path):
    with pytest.raises(DataError, match='Cannot read report'):
        read_report(tmp_path / 'missing.json')
    (tmp_path / 'bad.json').write_text('{"protocol": "x"}')
    with pytest.raises(DataError, match='Cannot read report'):
        read_report(tmp_path / 'bad.json')


def test_merge(tmp_path):
    first = write_report(RetrievalReport.build('sentence', {'accuracy': 0.1}), tmp_path, 'run1')
    second = write_report(RetrievalReport.build('sentence', {'accuracy': 0.3}), tmp_path, 'run2')
    third = write_report(RetrievalReport.build('probe', {'acc_seen': 0.7}), tmp_path)
    summary = merge_reports([third, second, first])
    assert sorted(summary) == ['probe', 'sentence']
    assert list(summary['sentence']) == ['sentence-run1', 'sentence-run2']
    assert summary['sentence']['sentence-run2']['metrics'] == {'accuracy': 0.3}
    with pytest.raises(DataError, match='No reports'):
        merge_reports([])


def test_merge_keeps_reports_sharing_a_stem(tmp_path):
    first = write_report(RetrievalReport.build('word', {'recall@10': 0.1}), tmp_path / 'run-a', 'abc')
    second = write_report(RetrievalReport.build('word', {'recall@10': 0.2}), tmp_path / 'run-b', 'abc')
    summary = merge_reports([first, second])
    assert sorted(summary['word']) == ['run-b/word-abc', 'word-abc']


def test_merge_is_repeatable(tmp_path):
    path = write_report(RetrievalReport.build('probe', {'acc_seen': 0.7}, meta={'seed': 1}), tmp_path)
    first = json.dumps(merge_reports([path]), sort_keys=True)
    raw = json.loads(path.read_text())
    raw['meta']['created'] = '1999-01-01T00:00:00+00:00'
    path.write_text(json.dumps(raw))
    assert json.dumps(merge_reports([path]), sort_keys=True) == first
    assert merge_reports([path])['probe']['probe']['meta'] == {'seed': 1}
