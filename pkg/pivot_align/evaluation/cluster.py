"""K-means over sentence embeddings, scored by how much clusters mix languages and how well they keep concepts apart."""
import logging
from typing import Dict, Hashable, Sequence, Tuple

import numpy as np
from scipy.stats import entropy
from sklearn.cluster import KMeans
from sklearn.metrics.cluster import contingency_matrix

from pivot_align.evaluation.report import RetrievalReport
from pivot_align.exceptions import ConfigError, DataError, ShapeError

_logger = logging.getLogger(__name__)


def kmeans_labels(embeddings: np.ndarray, k: int, restarts: int = 20, seed: int = 0) -> np.ndarray:
    """Cluster assignment per row: k-means++ seeding, best of ``restarts`` runs."""
    if k < 2:
        raise ConfigError(f'Clustering needs k >= 2, got {k}')
    if restarts < 1:
        raise ConfigError(f'Clustering needs at least one restart, got {restarts}')
    if embeddings.ndim != 2:
        raise ShapeError('kmeans', embeddings.shape)
    if k > embeddings.shape[0]:
        raise DataError(f'Cannot form {k} clusters from {embeddings.shape[0]} points')
    model = KMeans(n_clusters=k, init='k-means++', n_init=restarts, random_state=seed)
    return model.fit_predict(np.asarray(embeddings, dtype=np.float64))


def cluster_entropy(clusters: np.ndarray, labels: Sequence[Hashable]) -> Tuple[float, float]:
    """Size-weighted mean entropy (nats) of ``labels`` within each cluster, and the purity of the clustering.

    Purity is the share of points that carry their cluster's most frequent label.
    """
    table = contingency_matrix(np.asarray(labels), clusters)  # (labels, clusters)
    sizes = table.sum(axis=0)
    per_cluster = np.array([entropy(table[:, c]) if sizes[c] else 0.0 for c in range(table.shape[1])])
    mean_entropy = float(np.sum(per_cluster * sizes) / sizes.sum())
    purity = float(table.max(axis=0).sum() / sizes.sum())
    return mean_entropy, purity


def semantic_ratio(language_purity: float, concept_purity: float) -> float:
    """Concept purity as a share of concept plus language purity; above 0.5 the clusters follow meaning."""
    total = language_purity + concept_purity
    return concept_purity / total if total else float('nan')


def cluster_report(
    embeddings: np.ndarray,
    languages: Sequence[str],
    concepts: Sequence[Hashable],
    k: int = 50,
    restarts: int = 20,
    seed: int = 0,
) -> RetrievalReport:
    """Cluster ``embeddings`` and report language and concept mixing.

    A language-agnostic space spreads each language over all clusters (high language entropy, low language purity)
    while keeping each cluster about one meaning (low concept entropy). The language entropy is also reported as a
    share of its maximum, log of the number of languages.
    """
    if not len(embeddings) == len(languages) == len(concepts):
        raise DataError(
            f'Clustering needs one language and one concept per embedding, got {len(embeddings)} embeddings, '
            f'{len(languages)} languages and {len(concepts)} concepts'
        )
    clusters = kmeans_labels(np.asarray(embeddings), k, restarts, seed)
    language_entropy, language_purity = cluster_entropy(clusters, languages)
    concept_entropy, concept_purity = cluster_entropy(clusters, concepts)
    distinct = sorted(set(languages))
    ceiling = np.log(len(distinct)) if len(distinct) > 1 else 0.0
    metrics: Dict[str, float] = {
        'language_entropy': language_entropy,
        'language_entropy_ratio': language_entropy / ceiling if ceiling else float('nan'),
        'language_purity': language_purity,
        'concept_entropy': concept_entropy,
        'concept_purity': concept_purity,
        'semantic_ratio': semantic_ratio(language_purity, concept_purity),
    }
    _logger.info(f'Clustering with k={k}: {metrics}')
    sizes = np.bincount(clusters, minlength=k)
    return RetrievalReport.build(
        'cluster',
        metrics,
        distinct,
        meta={
            'k': k,
            'restarts': restarts,
            'seed': seed,
            'driver': 'semantic' if metrics['semantic_ratio'] > 0.5 else 'language',
            'points': len(embeddings),
            'smallest_cluster': int(sizes.min()),
            'largest_cluster': int(sizes.max()),
        },
    )
