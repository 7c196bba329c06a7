"""Cross-modal identity resolution.

Face clusters and speaker clusters are nodes of a bipartite association
graph; every AV pair whose track landed in a face cluster and whose segment
landed in a speaker cluster casts one vote on the edge between them.
Connected components over sufficiently voted edges are the resolved
identities: a component with both modalities is a person seen and heard, a
bare speaker cluster is an off-screen voice, a bare face cluster someone who
never speaks on camera.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DanglingReference


@dataclass(frozen=True)
class AssociationEdge:
    face_cluster: int
    speaker_cluster: int
    vote_count: int


@dataclass
class AssociationGraph:
    face_nodes: tuple[int, ...]
    speaker_nodes: tuple[int, ...]
    edges: tuple[AssociationEdge, ...]


@dataclass
class IdentityComponent:
    identity_id: int
    face_clusters: frozenset[int]
    speaker_clusters: frozenset[int]

    @property
    def bimodal(self) -> bool:
        return bool(self.face_clusters) and bool(self.speaker_clusters)


def build_graph(
    face_labels: dict[str, int],
    speaker_labels: dict[str, int],
    av_pairs,
    track_to_entity: dict[str, str],
) -> AssociationGraph:
    """Aggregate AV-pair votes between face and speaker clusters.

    ``face_labels`` maps entity ids to global face cluster labels and
    ``speaker_labels`` maps segment ids to global speaker cluster labels;
    noise items (label -1) contribute no nodes and no votes.
    """
    face_nodes = tuple(sorted({l for l in face_labels.values() if l != -1}))
    speaker_nodes = tuple(sorted({l for l in speaker_labels.values() if l != -1}))

    votes: dict[tuple[int, int], int] = {}
    for pair in av_pairs:
        entity_id = track_to_entity.get(pair.track_id)
        if entity_id is None:
            raise DanglingReference(pair.track_id, "av pair track has no entity")
        if entity_id not in face_labels:
            raise DanglingReference(entity_id, "entity missing from face labels")
        if pair.segment_id not in speaker_labels:
            raise DanglingReference(pair.segment_id, "segment missing from speaker labels")
        face = face_labels[entity_id]
        speaker = speaker_labels[pair.segment_id]
        if face == -1 or speaker == -1:
            continue
        votes[(face, speaker)] = votes.get((face, speaker), 0) + 1

    edges = tuple(
        AssociationEdge(face, speaker, count)
        for (face, speaker), count in sorted(votes.items())
    )
    return AssociationGraph(face_nodes, speaker_nodes, edges)


class _UnionFind:
    def __init__(self, items):
        self.parent = {item: item for item in items}

    def find(self, item):
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller key as root so component ids are stable
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def resolve_identities(graph: AssociationGraph, min_votes: int = 1) -> list[IdentityComponent]:
    """Connected components over edges carrying at least min_votes votes.

    Clusters left isolated (including by the vote threshold) become
    single-modality identities. Identity ids are assigned in ascending order
    of each component's smallest member, faces ordering before speakers.
    """
    if min_votes < 1:
        raise ValueError("min_votes must be >= 1")
    nodes = [("face", f) for f in graph.face_nodes] + [
        ("speaker", s) for s in graph.speaker_nodes
    ]
    uf = _UnionFind(nodes)
    for edge in graph.edges:
        if edge.vote_count >= min_votes:
            uf.union(("face", edge.face_cluster), ("speaker", edge.speaker_cluster))

    components: dict[tuple, list[tuple]] = {}
    for node in nodes:
        components.setdefault(uf.find(node), []).append(node)

    out = []
    for _, members in sorted(components.items(), key=lambda item: min(item[1])):
        faces = frozenset(m[1] for m in members if m[0] == "face")
        speakers = frozenset(m[1] for m in members if m[0] == "speaker")
        out.append(IdentityComponent(len(out), faces, speakers))
    return out


@dataclass(frozen=True)
class ConflictEntry:
    identity_id: int
    face_clusters: tuple[int, ...]
    speaker_clusters: tuple[int, ...]
    merging_edges: tuple[AssociationEdge, ...]


def conflict_report(
    graph: AssociationGraph, components: list[IdentityComponent], min_votes: int = 1
) -> list[ConflictEntry]:
    """Components that merged several clusters of one modality, with causes."""
    report = []
    for component in components:
        if len(component.face_clusters) <= 1 and len(component.speaker_clusters) <= 1:
            continue
        edges = tuple(
            e
            for e in graph.edges
            if e.vote_count >= min_votes
            and e.face_cluster in component.face_clusters
            and e.speaker_cluster in component.speaker_clusters
        )
        report.append(
            ConflictEntry(
                component.identity_id,
                tuple(sorted(component.face_clusters)),
                tuple(sorted(component.speaker_clusters)),
                edges,
            )
        )
    return report


# --- serialization --------------------------------------------------------------

def graph_to_json(graph: AssociationGraph) -> dict:
    return {
        "face_nodes": list(graph.face_nodes),
        "speaker_nodes": list(graph.speaker_nodes),
        "edges": [
            {"face": e.face_cluster, "speaker": e.speaker_cluster, "votes": e.vote_count}
            for e in graph.edges
        ],
    }


def identities_to_json(components: list[IdentityComponent]) -> list[dict]:
    return [
        {
            "identity_id": c.identity_id,
            "face_clusters": sorted(c.face_clusters),
            "speaker_clusters": sorted(c.speaker_clusters),
        }
        for c in components
    ]


def identities_from_json(payload) -> list[IdentityComponent]:
    return [
        IdentityComponent(
            int(entry["identity_id"]),
            frozenset(entry["face_clusters"]),
            frozenset(entry["speaker_clusters"]),
        )
        for entry in payload
    ]


def graph_to_dot(graph: AssociationGraph, min_votes: int = 1) -> str:
    """Association graph in DOT form: faces on top, speakers below."""
    lines = ["graph associations {", "  rankdir=TB;"]
    for f in graph.face_nodes:
        lines.append(f'  face_{f} [label="face {f}", shape=circle];')
    for s in graph.speaker_nodes:
        lines.append(f'  spk_{s} [label="speaker {s}", shape=box];')
    for e in graph.edges:
        style = "" if e.vote_count >= min_votes else " style=dashed"
        lines.append(f'  face_{e.face_cluster} -- spk_{e.speaker_cluster} [label="{e.vote_count}"{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_graph_json(graph: AssociationGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_json(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")
