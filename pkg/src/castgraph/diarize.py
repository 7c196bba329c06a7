"""Per-video speaker clustering over voice-activity segments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import SpeechSegment
from .distcluster import (
    CondensedDistanceMatrix,
    DbscanConfig,
    HdbscanParams,
    cluster_with_fallback,
    distance_matrix,
)
from .errors import NoSegments

DEFAULT_MIN_SEGMENT_S = 1.0


@dataclass(frozen=True)
class RejectedSegment:
    segment_id: str
    reason: str  # TooShort or NoEmbedding


def filter_segments(
    segments, min_duration_s: float = DEFAULT_MIN_SEGMENT_S
) -> tuple[list[SpeechSegment], list[RejectedSegment]]:
    """Keep segments long enough to carry a usable speaker embedding.

    The duration bound is inclusive: a segment of exactly min_duration_s
    passes. Everything else lands in the rejection list with a reason.
    """
    kept: list[SpeechSegment] = []
    rejected: list[RejectedSegment] = []
    for segment in segments:
        if segment.duration_s < min_duration_s:
            rejected.append(RejectedSegment(segment.segment_id, "TooShort"))
        elif segment.embedding is None:
            rejected.append(RejectedSegment(segment.segment_id, "NoEmbedding"))
        else:
            kept.append(segment)
    return kept, rejected


@dataclass
class DiarizationSummary:
    video_id: str
    clusters_found: int
    noise_count: int
    avg_segment_s: float
    used_fallback: bool
    rejected: list[RejectedSegment] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "clusters_found": self.clusters_found,
            "noise_count": self.noise_count,
            "avg_segment_s": self.avg_segment_s,
            "used_fallback": self.used_fallback,
            "rejected": [{"segment_id": r.segment_id, "reason": r.reason} for r in self.rejected],
        }


def diarize_video(
    segments,
    params: HdbscanParams,
    fallback: DbscanConfig | None = None,
    rejected: list[RejectedSegment] | None = None,
) -> tuple[dict[str, int], DiarizationSummary]:
    """Cluster one video's retained segments into speaker labels.

    Returns (segment_id -> label, summary). The summary carries the number of
    found clusters, the number of unclustered (noise) segments, and the mean
    retained segment length in seconds.
    """
    ordered = sorted(segments, key=lambda s: (s.start_s, s.segment_id))
    if not ordered:
        raise NoSegments("no retained segments to diarize")
    video_id = ordered[0].video_id

    points = np.stack([s.embedding for s in ordered])
    if len(ordered) >= 2:
        matrix = distance_matrix(points)
    else:
        matrix = CondensedDistanceMatrix(1, np.empty(0, dtype=np.float64))
    labels, used_fallback = cluster_with_fallback(matrix, params, fallback)

    assignment = {s.segment_id: int(l) for s, l in zip(ordered, labels.labels)}
    durations = [s.duration_s for s in ordered]
    summary = DiarizationSummary(
        video_id=video_id,
        clusters_found=labels.n_clusters,
        noise_count=labels.n_noise,
        avg_segment_s=float(sum(durations) / len(durations)),
        used_fallback=used_fallback,
        rejected=list(rejected) if rejected else [],
    )
    return assignment, summary


@dataclass(frozen=True)
class ReconciledSegment:
    segment_id: str
    speaker_label: int
    paired_track_id: str | None = None
    pair_confidence: float | None = None


def reconcile(labels: dict[str, int], av_pairs) -> list[ReconciledSegment]:
    """Attach active-speaker pairings on top of diarization labels.

    Diarization always runs for every segment; a segment claimed by an AV
    pair keeps that pairing alongside its label so the cross-modal bridge can
    vote with both. When several pairs claim one segment the most confident
    one wins (earlier track id on ties).
    """
    best_pair: dict[str, tuple[float, str]] = {}
    for pair in av_pairs:
        if pair.segment_id not in labels:
            continue
        key = (-pair.confidence, pair.track_id)
        if pair.segment_id not in best_pair or key < best_pair[pair.segment_id]:
            best_pair[pair.segment_id] = key
    out = []
    for segment_id in sorted(labels):
        if segment_id in best_pair:
            neg_conf, track_id = best_pair[segment_id]
            out.append(ReconciledSegment(segment_id, labels[segment_id], track_id, -neg_conf))
        else:
            out.append(ReconciledSegment(segment_id, labels[segment_id]))
    return out
