"""Retrieval protocols, the correspondence probe, clustering and report files."""

from pivot_align.evaluation.cluster import cluster_report
from pivot_align.evaluation.diagnostics import alpha_gap, gt_precision
from pivot_align.evaluation.ground_truth import read_ground_truth, supervised_pairs, word_map_gt
from pivot_align.evaluation.probe import build_probe_task, probe_correspondence, relative_decrease
from pivot_align.evaluation.report import (
    RetrievalReport,
    asymmetry_matrix,
    merge_reports,
    read_report,
    write_report,
)
from pivot_align.evaluation.retrieval import (
    crossmodal_retrieval_eval,
    sentence_retrieval_eval,
    word_retrieval_eval,
)

__all__ = [
    'RetrievalReport',
    'alpha_gap',
    'asymmetry_matrix',
    'build_probe_task',
    'cluster_report',
    'crossmodal_retrieval_eval',
    'gt_precision',
    'merge_reports',
    'probe_correspondence',
    'read_ground_truth',
    'read_report',
    'relative_decrease',
    'sentence_retrieval_eval',
    'supervised_pairs',
    'word_map_gt',
    'write_report',
]
