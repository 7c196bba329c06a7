"""Face-track splitting, active-speaker pairing, and track merging."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import groupby

import numpy as np

from .catalog import FRAME_RATE, AVPair, FaceTrack, SpeechSegment, normalize
from .distcluster import (
    CondensedDistanceMatrix,
    DbscanConfig,
    HdbscanParams,
    cluster_with_fallback,
    distance_matrix,
)


@dataclass(frozen=True)
class TrackPolicy:
    max_len_frames: int = 50
    min_len_frames: int = 25
    speaker_conf_threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.min_len_frames <= self.max_len_frames:
            raise ValueError("need 0 < min_len_frames <= max_len_frames")


@dataclass
class TrackEntity:
    """A group of track pieces resolved to one on-screen person."""

    entity_id: str
    video_id: str
    member_track_ids: tuple[str, ...]
    representative_face: np.ndarray
    paired_segments: tuple[str, ...] = ()
    total_frames: int = 0


def split_tracks(tracks, policy: TrackPolicy) -> list[FaceTrack]:
    """Cut tracks into pieces of at most max_len_frames.

    Pieces partition the parent frame range in order; each embedding follows
    its source frame into the piece that covers it. Pieces that end up shorter
    than min_len_frames, or with no embeddings at all, are dropped.
    """
    return split_tracks_with_sources(tracks, policy)[0]


def split_tracks_with_sources(
    tracks, policy: TrackPolicy
) -> tuple[list[FaceTrack], dict[str, str]]:
    """split_tracks plus a piece-id to source-track-id map for checkpoints."""
    sources: dict[str, str] = {}
    out: list[FaceTrack] = []
    for track in sorted(tracks, key=lambda t: (t.video_id, t.start_frame, t.track_id)):
        starts = list(range(track.start_frame, track.end_frame + 1, policy.max_len_frames))
        single = len(starts) == 1
        for k, piece_start in enumerate(starts):
            piece_end = min(piece_start + policy.max_len_frames - 1, track.end_frame)
            if piece_end - piece_start + 1 < policy.min_len_frames:
                continue
            keep = [
                idx
                for idx, frame in enumerate(track.embedding_frames)
                if piece_start <= frame <= piece_end
            ]
            if not keep:
                continue
            piece_id = track.track_id if single else f"{track.track_id}#{k}"
            sources[piece_id] = track.track_id
            out.append(
                FaceTrack(
                    track_id=piece_id,
                    video_id=track.video_id,
                    start_frame=piece_start,
                    end_frame=piece_end,
                    embeddings=track.embeddings[keep],
                    embedding_frames=tuple(track.embedding_frames[i] for i in keep),
                    speaker_confidence=track.speaker_confidence,
                )
            )
    return out, sources


def track_time_span(track: FaceTrack) -> tuple[float, float]:
    # frame f covers [f/25, (f+1)/25) seconds
    return track.start_frame / FRAME_RATE, (track.end_frame + 1) / FRAME_RATE


def _overlap(a_start, a_end, b_start, b_end) -> float:
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def assign_active_speakers(tracks, segments, policy: TrackPolicy) -> list[AVPair]:
    """Pair each confidently speaking track with its best-covered segment.

    A track qualifies when it carries a speaker confidence at or above the
    threshold and covers at least half of some speech segment. Each track
    emits at most one pair: the segment with the largest overlap wins, ties
    going to the earlier segment start.
    """
    by_video: dict[str, list[SpeechSegment]] = {}
    for segment in segments:
        by_video.setdefault(segment.video_id, []).append(segment)
    for video_segments in by_video.values():
        video_segments.sort(key=lambda s: (s.start_s, s.segment_id))

    pairs: list[AVPair] = []
    for track in sorted(tracks, key=lambda t: (t.video_id, t.start_frame, t.track_id)):
        conf = track.speaker_confidence
        if conf is None or conf < policy.speaker_conf_threshold:
            continue
        t_start, t_end = track_time_span(track)
        best: tuple[float, float, str] | None = None
        best_segment = None
        for segment in by_video.get(track.video_id, []):
            overlap = _overlap(t_start, t_end, segment.start_s, segment.end_s)
            if overlap < 0.5 * segment.duration_s:
                continue
            key = (-overlap, segment.start_s, segment.segment_id)
            if best is None or key < best:
                best = key
                best_segment = segment
        if best_segment is not None:
            pairs.append(AVPair(track.track_id, best_segment.segment_id, conf))
    return pairs


def representative_embedding(track: FaceTrack) -> np.ndarray:
    """Normalized mean of the per-frame embeddings; order independent."""
    mean = np.mean(np.asarray(track.embeddings, dtype=np.float64), axis=0)
    return normalize(mean)


# fallback radius for regrouping pieces: one person's pieces sit near zero
# cosine distance while two co-present people sit near 1, so a data-derived
# eps (which for two tracks equals their mutual distance) would glue them
MERGE_FALLBACK = DbscanConfig(eps=0.5, min_pts=2)


def merge_tracks(
    tracks,
    params: HdbscanParams,
    pairs=(),
    fallback: DbscanConfig | None = None,
) -> list[TrackEntity]:
    """Cluster track pieces by face embedding and merge shared labels.

    Merging is per video. Tracks sharing a cluster label form one entity;
    noise tracks become singleton entities. Every AV pair travels with its
    track into the owning entity, untouched. Entities come back ordered by
    (video, first frame, first track id) and are labeled e0, e1, ... within
    their video.
    """
    ordered = sorted(tracks, key=lambda t: (t.video_id, t.start_frame, t.track_id))
    if not ordered:
        return []
    if fallback is None:
        fallback = MERGE_FALLBACK
    pairs_by_track: dict[str, list[AVPair]] = {}
    for pair in pairs:
        pairs_by_track.setdefault(pair.track_id, []).append(pair)

    entities: list[TrackEntity] = []
    for video_id, members_iter in groupby(ordered, key=lambda t: t.video_id):
        members = list(members_iter)
        reps = np.stack([representative_embedding(t) for t in members])
        if len(members) >= 2:
            matrix = distance_matrix(reps)
        else:
            matrix = CondensedDistanceMatrix(1, np.empty(0, dtype=np.float64))
        labels, _ = cluster_with_fallback(matrix, params, fallback)

        groups: dict[int, list[int]] = {}
        singleton_key = -1
        for idx, label in enumerate(labels.labels):
            if label == -1:
                groups[singleton_key] = [idx]
                singleton_key -= 1
            else:
                groups.setdefault(int(label), []).append(idx)

        for seq, idxs in enumerate(sorted(groups.values(), key=min)):
            group = [members[i] for i in idxs]
            rep = normalize(np.mean([reps[i] for i in idxs], axis=0))
            segment_ids = []
            for member in group:
                for pair in pairs_by_track.get(member.track_id, []):
                    segment_ids.append(pair.segment_id)
            entities.append(
                TrackEntity(
                    entity_id=f"{video_id}/e{seq}",
                    video_id=video_id,
                    member_track_ids=tuple(m.track_id for m in group),
                    representative_face=rep,
                    paired_segments=tuple(sorted(set(segment_ids))),
                    total_frames=sum(m.n_frames for m in group),
                )
            )
    return entities
