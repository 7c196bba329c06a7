"""Clustering-quality and diarization-quality metrics.

Entropies use natural logarithms; any base cancels in the ratios the scores
are built from. The noise label (-1) is treated as an ordinary cluster so
unclustered points lower the scores instead of silently disappearing.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

from scipy.optimize import linear_sum_assignment

from .errors import EmptyReference, KeyMismatch, LengthMismatch


# --- label-based clustering scores ---------------------------------------------

def _check_lengths(truth, pred) -> int:
    if len(truth) != len(pred):
        raise LengthMismatch(len(truth), len(pred))
    if len(truth) == 0:
        raise LengthMismatch(0, 0)
    return len(truth)


def _entropy(counts, total: int) -> float:
    h = 0.0
    for count in counts:
        if count > 0:
            p = count / total
            h -= p * math.log(p)
    return h


def _conditional_entropy(pairs, outer_counts, total: int) -> float:
    """H(inner | outer) from joint (outer, inner) pair counts."""
    h = 0.0
    for (outer, _), joint in pairs.items():
        if joint > 0:
            h -= (joint / total) * math.log(joint / outer_counts[outer])
    return h


def homogeneity(truth_labels, pred_labels) -> float:
    """1 - H(truth|pred) / H(truth); 1.0 when every cluster is single-class."""
    n = _check_lengths(truth_labels, pred_labels)
    truth_counts = Counter(truth_labels)
    pred_counts = Counter(pred_labels)
    joint = Counter(zip(pred_labels, truth_labels))
    h_truth = _entropy(truth_counts.values(), n)
    if h_truth == 0.0:
        return 1.0
    h_cond = _conditional_entropy(joint, pred_counts, n)
    return 1.0 - h_cond / h_truth


def completeness(truth_labels, pred_labels) -> float:
    """1 - H(pred|truth) / H(pred); 1.0 when every class stays in one cluster."""
    return homogeneity(pred_labels, truth_labels)


def v_from_scores(h: float, c: float) -> float:
    """Harmonic mean of a homogeneity and a completeness value."""
    if h + c == 0.0:
        return 0.0
    return 2.0 * h * c / (h + c)


def v_measure(truth_labels, pred_labels) -> float:
    return v_from_scores(
        homogeneity(truth_labels, pred_labels), completeness(truth_labels, pred_labels)
    )


def assignment_accuracy(video_truth: dict, video_pred: dict) -> float:
    """Fraction of videos whose predicted cluster maps to the right person.

    Each cluster is mapped to its plurality person over the videos it was
    predicted for (several clusters may map to the same person); a video is
    correct when the mapping of its predicted cluster equals its true person.
    Plurality ties resolve to the smallest person id under sort order.
    """
    if set(video_truth.keys()) != set(video_pred.keys()):
        raise KeyMismatch("video_truth and video_pred cover different videos")
    if not video_truth:
        raise KeyMismatch("no videos to score")
    by_cluster: dict = defaultdict(Counter)
    for video, cluster in video_pred.items():
        by_cluster[cluster][video_truth[video]] += 1
    mapped = {}
    for cluster, persons in by_cluster.items():
        best = max(persons.values())
        mapped[cluster] = sorted(p for p, c in persons.items() if c == best)[0]
    correct = sum(
        1 for video, cluster in video_pred.items() if mapped[cluster] == video_truth[video]
    )
    return correct / len(video_truth)


# --- diarization error rate ------------------------------------------------------

@dataclass(frozen=True)
class SpeakerInterval:
    start_s: float
    end_s: float
    speaker: str


def _as_intervals(timeline) -> list[SpeakerInterval]:
    out = []
    for entry in timeline:
        if isinstance(entry, SpeakerInterval):
            out.append(entry)
        else:
            start, end, speaker = entry
            out.append(SpeakerInterval(float(start), float(end), str(speaker)))
    return out


def _active_sets(intervals, boundaries):
    """Speaker set per elementary interval of the boundary grid."""
    sets = [set() for _ in range(len(boundaries) - 1)]
    for iv in intervals:
        for k in range(len(boundaries) - 1):
            if iv.start_s < boundaries[k + 1] and iv.end_s > boundaries[k]:
                sets[k].add(iv.speaker)
    return sets


def der(reference, hypothesis) -> float:
    """Diarization error rate with a zero-length collar.

    (missed speech + false alarm + speaker confusion) / total reference
    speech time, under the overlap-maximizing one-to-one speaker mapping
    (solved exactly with the Hungarian method).
    """
    ref = _as_intervals(reference)
    hyp = _as_intervals(hypothesis)
    if not ref:
        raise EmptyReference("reference timeline is empty")

    boundaries = sorted({iv.start_s for iv in ref + hyp} | {iv.end_s for iv in ref + hyp})
    ref_sets = _active_sets(ref, boundaries)
    hyp_sets = _active_sets(hyp, boundaries)
    widths = [boundaries[k + 1] - boundaries[k] for k in range(len(boundaries) - 1)]

    ref_speakers = sorted({iv.speaker for iv in ref})
    hyp_speakers = sorted({iv.speaker for iv in hyp})
    overlap = [[0.0] * len(hyp_speakers) for _ in ref_speakers]
    for k, width in enumerate(widths):
        for i, r in enumerate(ref_speakers):
            if r not in ref_sets[k]:
                continue
            for j, h in enumerate(hyp_speakers):
                if h in hyp_sets[k]:
                    overlap[i][j] += width

    mapping: dict[str, str] = {}
    if ref_speakers and hyp_speakers:
        cost = [[-overlap[i][j] for j in range(len(hyp_speakers))] for i in range(len(ref_speakers))]
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if overlap[i][j] > 0.0:
                mapping[hyp_speakers[j]] = ref_speakers[i]

    total_ref = 0.0
    error = 0.0
    for k, width in enumerate(widths):
        n_ref = len(ref_sets[k])
        n_hyp = len(hyp_sets[k])
        matched = sum(
            1 for h in hyp_sets[k] if h in mapping and mapping[h] in ref_sets[k]
        )
        total_ref += n_ref * width
        error += (
            max(0, n_ref - n_hyp) + max(0, n_hyp - n_ref) + (min(n_ref, n_hyp) - matched)
        ) * width
    if total_ref == 0.0:
        raise EmptyReference("reference timeline has zero speech time")
    return error / total_ref


# --- plain-text report -------------------------------------------------------------

def format_evaluation_table(evaluation: dict) -> str:
    """Fixed-width table over the evaluation dict a pipeline run produces."""
    headers = ["Scope", "Correct", "Incorrect", "Homogeneity", "Completeness", "V-Measure"]
    rows = []
    accuracy = evaluation.get("assignment_accuracy")
    for scope, key in (("Faces", "face_clustering"), ("Speakers", "speaker_clustering")):
        scores = evaluation.get(key)
        if not scores:
            continue
        correct = f"{accuracy:.0%}" if scope == "Speakers" and accuracy is not None else "-"
        incorrect = f"{1 - accuracy:.0%}" if scope == "Speakers" and accuracy is not None else "-"
        rows.append(
            [
                scope,
                correct,
                incorrect,
                f"{scores['homogeneity']:.2f}",
                f"{scores['completeness']:.2f}",
                f"{scores['v_measure']:.2f}",
            ]
        )
    lines = [_align_row(headers, headers)]
    lines += [_align_row(row, headers) for row in rows]

    collab = evaluation.get("collaborations")
    if collab:
        lines.append("")
        headers2 = ["Nodes", "Edges", "Collaborations", "Correct", "Incorrect"]
        row2 = [
            str(collab["node_count"]),
            str(collab["edge_count"]),
            str(collab["collaboration_count"]),
            str(collab.get("correct", "-")),
            str(collab.get("incorrect", "-")),
        ]
        lines.append(_align_row(headers2, headers2))
        lines.append(_align_row(row2, headers2))
    if "mean_der" in evaluation:
        lines.append("")
        lines.append(f"Mean DER: {evaluation['mean_der']:.4f}")
    if "growth_factor" in evaluation:
        lines.append(f"Collaboration view-growth factor: {evaluation['growth_factor']:.4f}")
    return "\n".join(lines) + "\n"


def _align_row(cells, headers) -> str:
    widths = [max(12, len(h) + 2) for h in headers]
    out = [f"{cells[0]:<{widths[0]}}"]
    out += [f"{cell:>{width}}" for cell, width in zip(cells[1:], widths[1:])]
    return "".join(out)
