"""Staged pipeline with restartable checkpoints.

Stage order: split -> pair -> merge -> diarize -> global face clustering ->
global speaker clustering -> bridge -> graph. Each stage writes one artifact
into the output directory and consumes only earlier artifacts plus the
dataset, so a run can resume from any point. All artifacts are serialized
with sorted keys; for a fixed dataset and configuration the bytes are
identical no matter how many worker threads are used.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bridge as bridge_mod
from . import collabgraph, metrics
from .catalog import AVPair, Dataset, FaceTrack
from .diarize import DiarizationSummary, diarize_video, filter_segments, reconcile
from .distcluster import (
    ClusterLabels,
    CondensedDistanceMatrix,
    DbscanConfig,
    HdbscanParams,
    cluster_with_fallback,
    distance_matrix,
    labels_from_csv,
)
from .errors import PipelineStageError
from .synth import GroundTruth
from .tracks import TrackEntity, TrackPolicy, assign_active_speakers, merge_tracks, split_tracks_with_sources

CHECKPOINTS = {
    "split": "01_tracks_split.jsonl",
    "pair": "02_av_pairs.jsonl",
    "merge": "03_entities.jsonl",
    "diarize": "04_diarization.jsonl",
    "cluster_faces": "05_face_labels.csv",
    "cluster_speakers": "06_speaker_labels.csv",
    "bridge": "07_identities.json",
    "graph": "08_graph.json",
}


@dataclass
class PipelineConfig:
    min_cluster_size: int = 2
    min_samples: int | None = None
    dbscan_eps: float | None = None
    conf_threshold: float = 0.5
    min_votes: int = 1
    min_segment_s: float = 1.0
    max_len_frames: int = 50
    min_len_frames: int = 25
    threads: int = 1
    resume: bool = False

    @property
    def hdbscan_params(self) -> HdbscanParams:
        return HdbscanParams(self.min_cluster_size, self.min_samples)

    @property
    def dbscan_config(self) -> DbscanConfig:
        return DbscanConfig(eps=self.dbscan_eps)

    @property
    def track_policy(self) -> TrackPolicy:
        return TrackPolicy(self.max_len_frames, self.min_len_frames, self.conf_threshold)


def _dump_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class PipelineRun:
    """One pipeline execution over a dataset, writing into out_dir."""

    def __init__(self, ds: Dataset, out_dir: str | Path, config: PipelineConfig | None = None):
        self.ds = ds
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config or PipelineConfig()

        self.pieces: list[FaceTrack] = []
        self.piece_sources: dict[str, str] = {}
        self.av_pairs: list[AVPair] = []
        self.entities: list[TrackEntity] = []
        self.diarization: dict[str, dict] = {}
        self.face_labels: dict[str, int] = {}
        self.speaker_labels: dict[str, int] = {}
        self.face_fallback = False
        self.speaker_fallback = False
        self.identities = []
        self.association = None
        self.conflicts = []
        self.edges = []
        self.creators: dict[int, str] = {}

    def _checkpoint(self, stage: str) -> Path:
        return self.out / CHECKPOINTS[stage]

    def _reusable(self, stage: str) -> bool:
        return self.config.resume and self._checkpoint(stage).is_file()

    # --- stages ---------------------------------------------------------------

    def stage_split(self) -> None:
        path = self._checkpoint("split")
        if self._reusable("split"):
            self.pieces, self.piece_sources = self._load_split(path)
            return
        self.pieces, self.piece_sources = split_tracks_with_sources(
            self.ds.tracks.values(), self.config.track_policy
        )
        rows = []
        for piece in self.pieces:
            source = self.ds.tracks[self.piece_sources[piece.track_id]]
            source_rows = [
                idx
                for idx, frame in enumerate(source.embedding_frames)
                if piece.start_frame <= frame <= piece.end_frame
            ]
            rows.append(
                {
                    "piece_id": piece.track_id,
                    "source_track_id": source.track_id,
                    "video_id": piece.video_id,
                    "start_frame": piece.start_frame,
                    "end_frame": piece.end_frame,
                    "source_rows": source_rows,
                    "speaker_confidence": piece.speaker_confidence,
                }
            )
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def _load_split(self, path: Path):
        pieces: list[FaceTrack] = []
        sources: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                source = self.ds.tracks[row["source_track_id"]]
                idxs = row["source_rows"]
                pieces.append(
                    FaceTrack(
                        track_id=row["piece_id"],
                        video_id=row["video_id"],
                        start_frame=row["start_frame"],
                        end_frame=row["end_frame"],
                        embeddings=source.embeddings[idxs],
                        embedding_frames=tuple(source.embedding_frames[i] for i in idxs),
                        speaker_confidence=row["speaker_confidence"],
                    )
                )
                sources[row["piece_id"]] = row["source_track_id"]
        return pieces, sources

    def stage_pair(self) -> None:
        path = self._checkpoint("pair")
        if self._reusable("pair"):
            self.av_pairs = []
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        r = json.loads(line)
                        self.av_pairs.append(AVPair(r["track_id"], r["segment_id"], r["confidence"]))
            return
        self.av_pairs = assign_active_speakers(
            self.pieces, self.ds.segments.values(), self.config.track_policy
        )
        with open(path, "w", encoding="utf-8") as fh:
            for pair in self.av_pairs:
                fh.write(
                    json.dumps(
                        {
                            "track_id": pair.track_id,
                            "segment_id": pair.segment_id,
                            "confidence": pair.confidence,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    def stage_merge(self) -> None:
        path = self._checkpoint("merge")
        if self._reusable("merge"):
            self.entities = []
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    row = json.loads(line)
                    self.entities.append(
                        TrackEntity(
                            entity_id=row["entity_id"],
                            video_id=row["video_id"],
                            member_track_ids=tuple(row["member_track_ids"]),
                            representative_face=np.asarray(
                                row["representative_face"], dtype=np.float32
                            ),
                            paired_segments=tuple(row["paired_segments"]),
                            total_frames=row["total_frames"],
                        )
                    )
            return
        self.entities = merge_tracks(
            self.pieces,
            self.config.hdbscan_params,
            self.av_pairs,
            # an explicit --dbscan-eps overrides the merge-specific default
            self.config.dbscan_config if self.config.dbscan_eps is not None else None,
        )
        with open(path, "w", encoding="utf-8") as fh:
            for entity in self.entities:
                fh.write(
                    json.dumps(
                        {
                            "entity_id": entity.entity_id,
                            "video_id": entity.video_id,
                            "member_track_ids": list(entity.member_track_ids),
                            "representative_face": [float(x) for x in entity.representative_face],
                            "paired_segments": list(entity.paired_segments),
                            "total_frames": entity.total_frames,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    def stage_diarize(self) -> None:
        path = self._checkpoint("diarize")
        if self._reusable("diarize"):
            self.diarization = {}
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    row = json.loads(line)
                    self.diarization[row["video_id"]] = row
            return

        by_video: dict[str, list] = {}
        for segment in self.ds.segments.values():
            by_video.setdefault(segment.video_id, []).append(segment)

        def run_one(video_id: str) -> dict:
            kept, rejected = filter_segments(by_video[video_id], self.config.min_segment_s)
            if not kept:
                summary = DiarizationSummary(video_id, 0, 0, 0.0, False, rejected)
                return {
                    "video_id": video_id,
                    "labels": {},
                    "reconciled": [],
                    "summary": summary.to_json(),
                }
            labels, summary = diarize_video(
                kept, self.config.hdbscan_params, self.config.dbscan_config, rejected
            )
            summary.video_id = video_id
            rec = reconcile(labels, self.av_pairs)
            return {
                "video_id": video_id,
                "labels": {k: int(v) for k, v in labels.items()},
                "reconciled": [
                    {
                        "segment_id": r.segment_id,
                        "speaker_label": r.speaker_label,
                        "paired_track_id": r.paired_track_id,
                        "pair_confidence": r.pair_confidence,
                    }
                    for r in rec
                ],
                "summary": summary.to_json(),
            }

        video_ids = sorted(by_video)
        if self.config.threads > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                results = list(pool.map(run_one, video_ids))
        else:
            results = [run_one(v) for v in video_ids]
        self.diarization = {r["video_id"]: r for r in results}
        with open(path, "w", encoding="utf-8") as fh:
            for video_id in video_ids:
                fh.write(json.dumps(self.diarization[video_id], sort_keys=True) + "\n")

    def _cluster_points(self, ids: list[str], points: np.ndarray, path: Path) -> tuple[dict[str, int], bool]:
        if not ids:
            ClusterLabels(np.empty(0, dtype=np.int64)).to_csv(path, [])
            return {}, False
        if len(ids) >= 2:
            matrix = distance_matrix(points, workers=self.config.threads)
        else:
            matrix = CondensedDistanceMatrix(1, np.empty(0, dtype=np.float64))
        labels, used_fallback = cluster_with_fallback(
            matrix, self.config.hdbscan_params, self.config.dbscan_config
        )
        labels.to_csv(path, ids)
        return {i: int(l) for i, l in zip(ids, labels.labels)}, used_fallback

    def stage_cluster_faces(self) -> None:
        path = self._checkpoint("cluster_faces")
        if self._reusable("cluster_faces"):
            ids, labels = labels_from_csv(path)
            self.face_labels = {i: int(l) for i, l in zip(ids, labels.labels)}
            return
        ids = [e.entity_id for e in self.entities]
        points = (
            np.stack([e.representative_face.astype(np.float64) for e in self.entities])
            if self.entities
            else np.empty((0, self.ds.face_dim))
        )
        self.face_labels, self.face_fallback = self._cluster_points(ids, points, path)

    def stage_cluster_speakers(self) -> None:
        path = self._checkpoint("cluster_speakers")
        if self._reusable("cluster_speakers"):
            ids, labels = labels_from_csv(path)
            self.speaker_labels = {i: int(l) for i, l in zip(ids, labels.labels)}
            return
        kept, _ = filter_segments(
            sorted(self.ds.segments.values(), key=lambda s: s.segment_id),
            self.config.min_segment_s,
        )
        ids = [s.segment_id for s in kept]
        points = (
            np.stack([s.embedding.astype(np.float64) for s in kept])
            if kept
            else np.empty((0, self.ds.speaker_dim))
        )
        self.speaker_labels, self.speaker_fallback = self._cluster_points(ids, points, path)

    def stage_bridge(self) -> None:
        path = self._checkpoint("bridge")
        track_to_entity = {
            track_id: entity.entity_id
            for entity in self.entities
            for track_id in entity.member_track_ids
        }
        if self._reusable("bridge"):
            payload = _load_json(path)
            self.identities = bridge_mod.identities_from_json(payload["identities"])
            self.association = bridge_mod.AssociationGraph(
                tuple(payload["association"]["face_nodes"]),
                tuple(payload["association"]["speaker_nodes"]),
                tuple(
                    bridge_mod.AssociationEdge(e["face"], e["speaker"], e["votes"])
                    for e in payload["association"]["edges"]
                ),
            )
            self.conflicts = bridge_mod.conflict_report(
                self.association, self.identities, self.config.min_votes
            )
            return
        usable_pairs = [p for p in self.av_pairs if p.segment_id in self.speaker_labels]
        self.association = bridge_mod.build_graph(
            self.face_labels, self.speaker_labels, usable_pairs, track_to_entity
        )
        self.identities = bridge_mod.resolve_identities(self.association, self.config.min_votes)
        self.conflicts = bridge_mod.conflict_report(
            self.association, self.identities, self.config.min_votes
        )
        _dump_json(
            path,
            {
                "association": bridge_mod.graph_to_json(self.association),
                "identities": bridge_mod.identities_to_json(self.identities),
                "conflicts": [
                    {
                        "identity_id": c.identity_id,
                        "face_clusters": list(c.face_clusters),
                        "speaker_clusters": list(c.speaker_clusters),
                        "edges": [
                            {"face": e.face_cluster, "speaker": e.speaker_cluster, "votes": e.vote_count}
                            for e in c.merging_edges
                        ],
                    }
                    for c in self.conflicts
                ],
            },
        )

    def stage_graph(self) -> None:
        path = self._checkpoint("graph")
        index = collabgraph.build_appearance_index(
            self.ds, self.identities, self.entities, self.face_labels, self.speaker_labels
        )
        self.creators = collabgraph.assign_creators(index)
        self.edges = collabgraph.detect_collaborations(index, self.creators)
        stats = collabgraph.graph_stats(self.edges, channels=self.ds.channels.keys())
        _dump_json(
            path,
            {
                "creators": {str(k): v for k, v in self.creators.items()},
                "edges": collabgraph.edges_to_json(self.edges),
                "stats": stats.to_json(),
            },
        )
        with open(self.out / "graph.dot", "w", encoding="utf-8") as fh:
            fh.write(collabgraph.collab_graph_dot(self.ds, self.edges))

    # --- evaluation -------------------------------------------------------------

    def evaluate(self, truth: GroundTruth) -> dict:
        """Score the run against generator ground truth."""
        report: dict = {}

        entity_truth: list[int] = []
        entity_pred: list[int] = []
        for entity in self.entities:
            identities = [
                truth.track_identity[self.piece_sources[t]] for t in entity.member_track_ids
            ]
            entity_truth.append(max(set(identities), key=identities.count))
            entity_pred.append(self.face_labels[entity.entity_id])
        if entity_truth:
            report["face_clustering"] = {
                "homogeneity": metrics.homogeneity(entity_truth, entity_pred),
                "completeness": metrics.completeness(entity_truth, entity_pred),
                "v_measure": metrics.v_measure(entity_truth, entity_pred),
            }

        seg_truth = []
        seg_pred = []
        for segment_id, label in sorted(self.speaker_labels.items()):
            seg_truth.append(truth.segment_identity[segment_id])
            seg_pred.append(label)
        if seg_truth:
            report["speaker_clustering"] = {
                "homogeneity": metrics.homogeneity(seg_truth, seg_pred),
                "completeness": metrics.completeness(seg_truth, seg_pred),
                "v_measure": metrics.v_measure(seg_truth, seg_pred),
            }

        video_truth: dict[str, int] = {}
        video_pred: dict[str, int] = {}
        by_video: dict[str, list[int]] = {}
        for segment_id, label in self.speaker_labels.items():
            by_video.setdefault(self.ds.segments[segment_id].video_id, []).append(label)
        for video_id, labels in by_video.items():
            host = truth.video_hosts.get(video_id)
            if host is None:
                continue
            counts: dict[int, int] = {}
            for label in labels:
                counts[label] = counts.get(label, 0) + 1
            best = max(counts.values())
            video_pred[video_id] = min(l for l, c in counts.items() if c == best)
            video_truth[video_id] = host
        if video_truth:
            report["assignment_accuracy"] = metrics.assignment_accuracy(video_truth, video_pred)

        ders = []
        for video_id in sorted(self.ds.videos):
            ref = [
                (s.start_s, s.end_s, str(truth.segment_identity[s.segment_id]))
                for s in self.ds.segments.values()
                if s.video_id == video_id and s.segment_id in truth.segment_identity
            ]
            hyp = [
                (s.start_s, s.end_s, str(self.speaker_labels[s.segment_id]))
                for s in self.ds.segments.values()
                if s.video_id == video_id and s.segment_id in self.speaker_labels
            ]
            if ref:
                ders.append(metrics.der(ref, hyp))
        if ders:
            report["mean_der"] = sum(ders) / len(ders)

        stats = collabgraph.graph_stats(
            self.edges, channels=self.ds.channels.keys(), ground_truth=truth.event_triples()
        )
        report["collaborations"] = stats.to_json()
        if truth.planted_growth_ratio is not None:
            report["growth_factor"] = collabgraph.growth_factor(
                self.ds.videos.values(), self.edges
            )
        return report

    # --- driver -------------------------------------------------------------------

    STAGES = (
        ("split", stage_split),
        ("pair", stage_pair),
        ("merge", stage_merge),
        ("diarize", stage_diarize),
        ("cluster_faces", stage_cluster_faces),
        ("cluster_speakers", stage_cluster_speakers),
        ("bridge", stage_bridge),
        ("graph", stage_graph),
    )

    def run_until(self, last_stage: str) -> None:
        for name, stage in self.STAGES:
            try:
                stage(self)
            except Exception as exc:
                raise PipelineStageError(name, exc) from exc
            if name == last_stage:
                return
        raise ValueError(f"unknown stage {last_stage!r}")

    def run(self, truth: GroundTruth | None = None) -> dict:
        for name, stage in self.STAGES:
            try:
                stage(self)
            except Exception as exc:
                raise PipelineStageError(name, exc) from exc
        stats = collabgraph.graph_stats(self.edges, channels=self.ds.channels.keys())
        report = {
            "videos": len(self.ds.videos),
            "tracks": len(self.ds.tracks),
            "track_pieces": len(self.pieces),
            "av_pairs": len(self.av_pairs),
            "entities": len(self.entities),
            "segments": len(self.ds.segments),
            "face_clusters": len({l for l in self.face_labels.values() if l != -1}),
            "speaker_clusters": len({l for l in self.speaker_labels.values() if l != -1}),
            "identities": len(self.identities),
            "conflicts": len(self.conflicts),
            "graph": stats.to_json(),
        }
        if truth is not None:
            try:
                report["evaluation"] = self.evaluate(truth)
            except Exception as exc:
                raise PipelineStageError("eval", exc) from exc
            with open(self.out / "report_table.txt", "w", encoding="utf-8") as fh:
                fh.write(metrics.format_evaluation_table(report["evaluation"]))
        _dump_json(self.out / "report.json", report)
        return report


def run_pipeline(
    ds: Dataset,
    out_dir: str | Path,
    config: PipelineConfig | None = None,
    truth: GroundTruth | None = None,
) -> dict:
    return PipelineRun(ds, out_dir, config).run(truth)
