"""Deterministic synthetic datasets with known ground truth.

Embeddings are sampled on the unit sphere: each identity owns one face
centroid and one speaker centroid, and every observation is the centroid
rotated by an angle drawn uniformly from [0, angular_noise_deg] about a
random orthogonal direction. Cosine distance depends only on angles, so the
noise level reads directly as expected pairwise distance. The RNG is numpy's
PCG64; one seed fixes the dataset byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from .catalog import (
    DEFAULT_FACE_DIM,
    DEFAULT_SPEAKER_DIM,
    FRAME_RATE,
    AVPair,
    Channel,
    Dataset,
    FaceTrack,
    SpeechSegment,
    Video,
)
from .errors import InfeasibleConfig

EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)
VIDEO_DURATION_S = 120.0
BASE_VIEWS = 10_000


@dataclass(frozen=True)
class SynthConfig:
    n_channels: int = 9
    n_videos: int = 72
    n_identities: int = 9
    face_dim: int = DEFAULT_FACE_DIM
    speaker_dim: int = DEFAULT_SPEAKER_DIM
    angular_noise_deg: float = 0.0
    offscreen_speaker_fraction: float = 0.0
    collaboration_rate: float = 0.0
    planted_growth_ratio: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.n_channels, self.n_videos, self.n_identities) < 1:
            raise InfeasibleConfig("channels, videos and identities must all be positive")
        if not 0.0 <= self.offscreen_speaker_fraction <= 1.0:
            raise InfeasibleConfig("offscreen_speaker_fraction must be in [0, 1]")
        if not 0.0 <= self.collaboration_rate <= 1.0:
            raise InfeasibleConfig("collaboration_rate must be in [0, 1]")
        if self.angular_noise_deg < 0.0:
            raise InfeasibleConfig("angular_noise_deg must be >= 0")


@dataclass
class GroundTruth:
    identity_homes: dict[int, str] = field(default_factory=dict)
    track_identity: dict[str, int] = field(default_factory=dict)
    segment_identity: dict[str, int] = field(default_factory=dict)
    video_identities: dict[str, list[int]] = field(default_factory=dict)
    video_hosts: dict[str, int | None] = field(default_factory=dict)
    # (from_channel, to_channel, video_id, identity)
    planted_events: list[tuple[str, str, str, int]] = field(default_factory=list)
    offscreen_videos: list[str] = field(default_factory=list)
    planted_growth_ratio: float | None = None

    def event_triples(self) -> set[tuple[str, str, str]]:
        return {(a, b, v) for a, b, v, _ in self.planted_events}

    def to_json(self) -> dict:
        return {
            "identity_homes": {str(k): v for k, v in self.identity_homes.items()},
            "track_identity": self.track_identity,
            "segment_identity": self.segment_identity,
            "video_identities": self.video_identities,
            "video_hosts": {k: v for k, v in self.video_hosts.items()},
            "planted_events": [list(e) for e in self.planted_events],
            "offscreen_videos": self.offscreen_videos,
            "planted_growth_ratio": self.planted_growth_ratio,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "GroundTruth":
        truth = cls()
        truth.identity_homes = {int(k): v for k, v in payload["identity_homes"].items()}
        truth.track_identity = {k: int(v) for k, v in payload["track_identity"].items()}
        truth.segment_identity = {k: int(v) for k, v in payload["segment_identity"].items()}
        truth.video_identities = {
            k: [int(i) for i in v] for k, v in payload["video_identities"].items()
        }
        truth.video_hosts = {
            k: (None if v is None else int(v)) for k, v in payload.get("video_hosts", {}).items()
        }
        truth.planted_events = [
            (a, b, v, int(i)) for a, b, v, i in payload["planted_events"]
        ]
        truth.offscreen_videos = list(payload["offscreen_videos"])
        truth.planted_growth_ratio = payload.get("planted_growth_ratio")
        return truth

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# --- sphere sampling ----------------------------------------------------------

def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def rotate_within(rng: np.random.Generator, centroid: np.ndarray, max_angle_deg: float) -> np.ndarray:
    """Rotate the centroid by a uniform angle about a random orthogonal axis."""
    if max_angle_deg == 0.0:
        return centroid.copy()
    angle = math.radians(rng.uniform(0.0, max_angle_deg))
    while True:
        raw = rng.standard_normal(centroid.shape[0])
        ortho = raw - np.dot(raw, centroid) * centroid
        norm = np.linalg.norm(ortho)
        if norm > 1e-12:
            ortho /= norm
            break
    rotated = math.cos(angle) * centroid + math.sin(angle) * ortho
    return rotated / np.linalg.norm(rotated)


def sample_blobs(
    n_points: int,
    n_identities: int,
    dim: int,
    noise_deg: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Labeled points on the sphere, identities round-robin. Returns (points, labels)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = [random_unit(rng, dim) for _ in range(n_identities)]
    points = np.empty((n_points, dim), dtype=np.float64)
    labels = np.empty(n_points, dtype=np.int64)
    for i in range(n_points):
        identity = i % n_identities
        points[i] = rotate_within(rng, centroids[identity], noise_deg)
        labels[i] = identity
    return points, labels


# --- dataset generation ----------------------------------------------------------

def _onscreen_allocation(per_channel_videos: dict[str, list[str]], n_onscreen: int):
    """Pick which videos show faces: never exactly one per channel.

    A channel with a single on-screen appearance of its creator would put a
    lone face point into the global clustering, which density clustering
    cannot keep apart from its nearest blob; zero or at-least-two keeps the
    ground truth recoverable.
    """
    chosen: list[str] = []
    remaining = n_onscreen
    channels = sorted(per_channel_videos)
    # first pass: two per channel while supply lasts
    for channel in channels:
        videos = per_channel_videos[channel]
        if remaining >= 2 and len(videos) >= 2:
            chosen.extend(videos[:2])
            remaining -= 2
    # second pass: top up channels that already show faces
    for channel in channels:
        videos = per_channel_videos[channel]
        if len(videos) < 2 or videos[0] not in chosen:
            continue
        for video in videos[2:]:
            if remaining == 0:
                break
            chosen.append(video)
            remaining -= 1
    return set(chosen)


def generate(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    """Build a dataset and the ground truth that a perfect pipeline recovers.

    Every identity hosts the videos of its home channel; collaborations plant
    a guest from another channel into a video. On-screen appearances emit a
    face track with per-frame embeddings, a co-timed speech segment, and an
    AV pair at confidence 1.0; off-screen appearances emit speech segments
    only. The same seed always produces the identical dataset.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    ds = Dataset(face_dim=cfg.face_dim, speaker_dim=cfg.speaker_dim)
    truth = GroundTruth(planted_growth_ratio=cfg.planted_growth_ratio)

    channel_ids = [f"ch{idx:02d}" for idx in range(cfg.n_channels)]
    for idx, channel_id in enumerate(channel_ids):
        ds.channels[channel_id] = Channel(channel_id, f"Channel {idx:02d}")

    face_centroids = {i: random_unit(rng, cfg.face_dim) for i in range(cfg.n_identities)}
    voice_centroids = {i: random_unit(rng, cfg.speaker_dim) for i in range(cfg.n_identities)}
    for identity in range(cfg.n_identities):
        truth.identity_homes[identity] = channel_ids[identity % cfg.n_channels]

    # videos round-robin over channels; host identity round-robin per channel
    per_channel_videos: dict[str, list[str]] = {c: [] for c in channel_ids}
    video_ids = []
    for idx in range(cfg.n_videos):
        channel_id = channel_ids[idx % cfg.n_channels]
        video_id = f"v{idx:04d}"
        video_ids.append(video_id)
        per_channel_videos[channel_id].append(video_id)

    channel_identities: dict[str, list[int]] = {c: [] for c in channel_ids}
    for identity, home in truth.identity_homes.items():
        channel_identities[home].append(identity)
    for identity, home in truth.identity_homes.items():
        if not per_channel_videos[home]:
            raise InfeasibleConfig(
                f"identity {identity} has no videos to host on channel {home}"
            )

    hosts: dict[str, int | None] = {}
    for channel_id, videos in per_channel_videos.items():
        owners = channel_identities[channel_id]
        for k, video_id in enumerate(videos):
            hosts[video_id] = owners[k % len(owners)] if owners else None

    n_onscreen = cfg.n_videos - round(cfg.offscreen_speaker_fraction * cfg.n_videos)
    hosted = {c: [v for v in vids if hosts[v] is not None] for c, vids in per_channel_videos.items()}
    onscreen = _onscreen_allocation(hosted, n_onscreen)
    truth.offscreen_videos = sorted(v for v in video_ids if v not in onscreen)

    # plant collaborations: at most one guest per video, never tipping the
    # guest's appearance count on a foreign channel up to its home count
    n_collab = round(cfg.collaboration_rate * cfg.n_videos)
    if n_collab > cfg.n_videos:
        raise InfeasibleConfig("cannot plant more collaborations than videos")
    home_counts = {
        identity: sum(1 for v in video_ids if hosts[v] == identity)
        for identity in range(cfg.n_identities)
    }
    foreign_counts: dict[tuple[int, str], int] = {}
    guests: dict[str, int] = {}
    video_channel = {
        video_id: channel_ids[idx % cfg.n_channels] for idx, video_id in enumerate(video_ids)
    }
    video_order = list(video_ids)
    rng.shuffle(video_order)
    rotation = 0
    for video_id in video_order:
        if len(guests) == n_collab:
            break
        host_channel = video_channel[video_id]
        for offset in range(cfg.n_identities):
            identity = (rotation + offset) % cfg.n_identities
            home = truth.identity_homes[identity]
            if home == host_channel:
                continue
            used = foreign_counts.get((identity, host_channel), 0)
            if used + 1 >= home_counts[identity]:
                continue
            guests[video_id] = identity
            foreign_counts[(identity, host_channel)] = used + 1
            rotation = identity + 1
            break
    if len(guests) < n_collab:
        raise InfeasibleConfig(
            f"could only plant {len(guests)} of {n_collab} collaborations"
        )

    collab_videos = set(guests)
    for idx, video_id in enumerate(video_ids):
        channel_id = channel_ids[idx % cfg.n_channels]
        published = EPOCH + timedelta(days=idx)
        history = None
        if cfg.planted_growth_ratio is not None:
            growth = cfg.planted_growth_ratio if video_id in collab_videos else 1.0
            final = BASE_VIEWS + round(BASE_VIEWS * growth)
            history = (
                (published, BASE_VIEWS),
                (published + timedelta(days=30), final),
            )
        ds.videos[video_id] = Video(
            video_id=video_id,
            channel_id=channel_id,
            published_at=published,
            duration_s=VIDEO_DURATION_S,
            view_history=history,
        )

    def emit_onscreen(video_id: str, identity: int, slot: int) -> None:
        base_frame = 25 + slot * 150
        length = int(rng.integers(26, 51))
        track_id = f"{video_id}/t{slot}"
        frames = (base_frame, base_frame + 25)
        # one observation per track: frames of a two-second face track are
        # near-duplicates, so noise is drawn across tracks, not within one
        face = rotate_within(rng, face_centroids[identity], cfg.angular_noise_deg)
        emb = np.tile(face.astype(np.float32), (len(frames), 1))
        ds.tracks[track_id] = FaceTrack(
            track_id=track_id,
            video_id=video_id,
            start_frame=base_frame,
            end_frame=base_frame + length - 1,
            embeddings=emb,
            embedding_frames=frames,
            speaker_confidence=1.0,
        )
        truth.track_identity[track_id] = identity
        segment_id = f"{video_id}/s{slot}"
        start_s = base_frame / FRAME_RATE
        end_s = (base_frame + length) / FRAME_RATE
        voice = rotate_within(rng, voice_centroids[identity], cfg.angular_noise_deg)
        ds.segments[segment_id] = SpeechSegment(
            segment_id=segment_id,
            video_id=video_id,
            start_s=start_s,
            end_s=end_s,
            origin="active_speaker",
            embedding=voice.astype(np.float32),
        )
        truth.segment_identity[segment_id] = identity
        ds.pairs.append(AVPair(track_id, segment_id, 1.0))

    def emit_voice_only(video_id: str, identity: int, slot: int) -> None:
        base_s = 1.0 + slot * 6.0
        for part in range(2):
            segment_id = f"{video_id}/s{slot}.{part}"
            start_s = base_s + part * 2.5
            voice = rotate_within(rng, voice_centroids[identity], cfg.angular_noise_deg)
            ds.segments[segment_id] = SpeechSegment(
                segment_id=segment_id,
                video_id=video_id,
                start_s=start_s,
                end_s=start_s + 2.0,
                origin="vad",
                embedding=voice.astype(np.float32),
            )
            truth.segment_identity[segment_id] = identity

    for video_id in video_ids:
        participants: list[int] = []
        host = hosts[video_id]
        visible = video_id in onscreen
        if host is not None:
            participants.append(host)
            if visible:
                emit_onscreen(video_id, host, slot=0)
            else:
                emit_voice_only(video_id, host, slot=0)
        guest = guests.get(video_id)
        if guest is not None:
            participants.append(guest)
            if visible:
                emit_onscreen(video_id, guest, slot=1)
            else:
                emit_voice_only(video_id, guest, slot=1)
            host_channel = ds.videos[video_id].channel_id
            truth.planted_events.append(
                (truth.identity_homes[guest], host_channel, video_id, guest)
            )
        truth.video_identities[video_id] = sorted(set(participants))
        truth.video_hosts[video_id] = host
    truth.planted_events.sort()
    return ds, truth


def corrupt(
    ds: Dataset, dropout_rate: float, confidence_noise: float, seed: int = 0
) -> Dataset:
    """Drop embeddings and jitter AV confidences, reproducibly.

    Each face embedding row and each segment embedding is dropped
    independently with probability dropout_rate; a track that loses every row
    disappears along with its AV pairs. Confidences shift by a uniform draw
    from [-confidence_noise, +confidence_noise], clipped to [0, 1]. The input
    dataset is never mutated.
    """
    if not 0.0 <= dropout_rate <= 1.0 or confidence_noise < 0.0:
        raise ValueError("dropout_rate in [0,1] and confidence_noise >= 0 required")
    rng = np.random.Generator(np.random.PCG64(seed))
    out = Dataset(face_dim=ds.face_dim, speaker_dim=ds.speaker_dim)
    out.channels = dict(ds.channels)
    out.videos = dict(ds.videos)

    for track_id in sorted(ds.tracks):
        track = ds.tracks[track_id]
        keep = [i for i in range(track.embeddings.shape[0]) if rng.random() >= dropout_rate]
        if not keep:
            continue
        conf = track.speaker_confidence
        if conf is not None and confidence_noise > 0.0:
            conf = float(np.clip(conf + rng.uniform(-confidence_noise, confidence_noise), 0.0, 1.0))
        out.tracks[track_id] = FaceTrack(
            track_id=track.track_id,
            video_id=track.video_id,
            start_frame=track.start_frame,
            end_frame=track.end_frame,
            embeddings=track.embeddings[keep].copy(),
            embedding_frames=tuple(track.embedding_frames[i] for i in keep),
            speaker_confidence=conf,
        )

    for segment_id in sorted(ds.segments):
        segment = ds.segments[segment_id]
        embedding = segment.embedding
        if embedding is not None and rng.random() < dropout_rate:
            embedding = None
        out.segments[segment_id] = replace(
            segment, embedding=None if embedding is None else embedding.copy()
        )

    for pair in ds.pairs:
        if pair.track_id in out.tracks and pair.segment_id in out.segments:
            out.pairs.append(pair)
    return out
