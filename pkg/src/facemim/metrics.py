"""Binary-detection metrics: rank-based AUC, video-level AUC, HTER.

Scores follow the convention that larger means more likely positive
(label 1). AUC is the probability that a random positive outranks a random
negative, with ties counted half, computed from average ranks. HTER is
(FAR + FRR) / 2 at the equal-error threshold unless a fixed threshold is
supplied; a sample is accepted (predicted positive) when score >= threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError


def _check_binary(labels: np.ndarray) -> tuple[int, int]:
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be binary 0/1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("metric needs both classes present")
    return n_pos, n_neg


def compute_auc(scores, labels) -> float:
    """Rank-based AUC: P(score_pos > score_neg), ties counted half.

    Computed from average ranks, which makes it exactly equal to the
    pairwise win-count formulation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_binary(labels)
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def video_auc(scores, labels, video_ids) -> float:
    """AUC over per-video scores, each video scored by its frame mean."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    video_ids = np.asarray(video_ids)
    v_scores, v_labels = [], []
    for vid in np.unique(video_ids):
        sel = video_ids == vid
        group_labels = np.unique(labels[sel])
        if group_labels.size != 1:
            raise ValidationError(f"video {vid!r} mixes labels {group_labels}")
        v_scores.append(scores[sel].mean())
        v_labels.append(int(group_labels[0]))
    return compute_auc(np.asarray(v_scores), np.asarray(v_labels))


def far_frr(scores, labels, threshold: float) -> tuple[float, float]:
    """False accept and false reject rates at one decision threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_binary(labels)
    accepted = scores >= threshold
    far = float(np.count_nonzero(accepted & (labels == 0)) / n_neg)
    frr = float(np.count_nonzero(~accepted & (labels == 1)) / n_pos)
    return far, frr


def _eer_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Candidate threshold minimizing |FAR - FRR|; ties broken by smaller
    HTER, then by smaller threshold."""
    candidates = np.concatenate([np.unique(scores), [np.inf]])
    best = None
    for t in candidates:
        far, frr = far_frr(scores, labels, t)
        key = (abs(far - frr), (far + frr) / 2.0, t)
        if best is None or key < best[0]:
            best = (key, t)
    return float(best[1])


def compute_hter(scores, labels, threshold: float | None = None) -> float:
    """Half total error rate at the given (or equal-error) threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    if threshold is None:
        threshold = _eer_threshold(scores, labels)
    far, frr = far_frr(scores, labels, threshold)
    return (far + frr) / 2.0


@dataclass(frozen=True)
class EvalReport:
    frame_auc: float
    video_auc: float | None
    hter: float
    eer_threshold: float
    far_frr_table: list[dict]

    def to_json(self) -> dict:
        return {
            "frame_auc": self.frame_auc,
            "video_auc": self.video_auc,
            "hter": self.hter,
            "eer_threshold": self.eer_threshold,
            "far_frr_table": self.far_frr_table,
        }


def evaluate_scores(records: list[dict], group_by_video: bool = False) -> EvalReport:
    """Full report from score records {id, video_id?, score, label}."""
    if not records:
        raise ValidationError("no score records to evaluate")
    scores = np.asarray([r["score"] for r in records], dtype=np.float64)
    labels = np.asarray([r["label"] for r in records])
    frame = compute_auc(scores, labels)
    video = None
    if group_by_video:
        missing = [r for r in records if "video_id" not in r]
        if missing:
            raise ValidationError("video grouping requested but records lack video_id")
        video = video_auc(scores, labels, [r["video_id"] for r in records])
    threshold = _eer_threshold(scores, labels)
    table = []
    for t in np.unique(scores):
        far, frr = far_frr(scores, labels, float(t))
        table.append({"threshold": float(t), "far": far, "frr": frr})
    far, frr = far_frr(scores, labels, threshold)
    return EvalReport(
        frame_auc=frame,
        video_auc=video,
        hter=(far + frr) / 2.0,
        eer_threshold=threshold,
        far_frr_table=table,
    )
