import numpy as np
import pytest

from pivot_align.evaluation.cluster import cluster_entropy, cluster_report, kmeans_labels, semantic_ratio
from pivot_align.exceptions import ConfigError, DataError, ShapeError

LANGUAGES = ['a', 'b', 'c']


def _points(by_concept: bool):
    """Four concepts in three languages, tightly grouped either by concept or by language."""
    rng = np.random.default_rng(0)
    centres = 10.0 * np.eye(4)
    embeddings, languages, concepts = [], [], []
    for concept in range(4):
        for i, lang in enumerate(LANGUAGES):
            centre = centres[concept] if by_concept else centres[i]
            for _ in range(2):
                embeddings.append(centre + 0.01 * rng.standard_normal(4))
                languages.append(lang)
                concepts.append(concept)
    return np.array(embeddings), languages, concepts


def test_cluster_entropy():
    mean_entropy, purity = cluster_entropy(np.array([0, 0, 1, 1]), ['a', 'b', 'a', 'a'])
    assert mean_entropy == pytest.approx(np.log(2) / 2)
    assert purity == pytest.approx(0.75)


def test_semantic_clusters():
    embeddings, languages, concepts = _points(by_concept=True)
    report = cluster_report(embeddings, languages, concepts, k=4, restarts=3)
    assert report.metrics['concept_purity'] == 1.0
    assert report.metrics['concept_entropy'] == pytest.approx(0.0)
    assert report.metrics['language_entropy_ratio'] == pytest.approx(1.0)
    assert report.metrics['language_purity'] == pytest.approx(1 / 3)
    assert report.metrics['semantic_ratio'] == pytest.approx(0.75)
    assert report.meta['driver'] == 'semantic'
    assert report.meta['smallest_cluster'] == report.meta['largest_cluster'] == 6
    assert report.languages == LANGUAGES


def test_language_clusters():
    embeddings, languages, concepts = _points(by_concept=False)
    report = cluster_report(embeddings, languages, concepts, k=3, restarts=3)
    assert report.metrics['language_purity'] == 1.0
    assert report.metrics['language_entropy'] == pytest.approx(0.0)
    assert report.meta['driver'] == 'language'


def test_kmeans_is_seeded():
    embeddings, _, _ = _points(by_concept=True)
    assert np.array_equal(kmeans_labels(embeddings, 4, 2, seed=5), kmeans_labels(embeddings, 4, 2, seed=5))


def test_semantic_ratio():
    assert semantic_ratio(0.25, 0.75) == 0.75
    assert np.isnan(semantic_ratio(0.0, 0.0))


def test_errors():
    embeddings = np.zeros((3, 2))
    with pytest.raises(ConfigError, match='k >= 2'):
        kmeans_labels(embeddings, 1)
    with pytest.raises(ConfigError, match='restart'):
        kmeans_labels(embeddings, 2, restarts=0)
    with pytest.raises(ShapeError):
        kmeans_labels(np.zeros(3), 2)
    with pytest.raises(DataError, match='Cannot form 4 clusters from 3 points'):
        kmeans_labels(embeddings, 4)
    with pytest.raises(DataError, match='one language and one concept per embedding'):
        cluster_report(embeddings, ['a'] * 3, [0, 1], k=2)
