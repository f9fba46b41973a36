"""Graph data model for facial-attribute time series.

A reaction clip is an I x T grid of attribute intensities. Clips become
I-node graphs by projecting each attribute's series onto an orthonormal
temporal basis (node features) and wiring directed edges from attention maps
(see mefl); decoding inverts the projection and clamps back to [0, 1].
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .numeric import DomainError


def _frozen(a):
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ReactionClip:
    """Multi-channel facial-attribute series: values[i, t] in [0, 1] by convention."""

    clip_id: str
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise DomainError("clip values must be a 2-D (attributes x frames) grid")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise DomainError("a clip needs at least 2 attributes and 2 frames")
        if not np.all(np.isfinite(v)):
            raise DomainError(f"clip {self.clip_id!r} has non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def attributes(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class TemporalBasis:
    """D orthonormal rows over T frames, mapping series to coefficient features."""

    basis: np.ndarray

    def __post_init__(self):
        b = _frozen(self.basis)
        if b.ndim != 2:
            raise DomainError("basis must be 2-D (coefficients x frames)")
        d, t = b.shape
        if d > t:
            raise DomainError("coefficient count may not exceed frame count")
        if not np.allclose(b @ b.T, np.eye(d), atol=1e-10):
            raise DomainError("basis rows are not orthonormal to 1e-10")
        object.__setattr__(self, "basis", b)

    @property
    def coeffs(self):
        return self.basis.shape[0]

    @property
    def frames(self):
        return self.basis.shape[1]

    @classmethod
    def dct(cls, frames, coeffs):
        """Orthonormal type-II cosine rows; invertible when coeffs == frames,
        a low-pass truncation otherwise."""
        if coeffs < 1 or frames < 2:
            raise DomainError("need coeffs >= 1 and frames >= 2")
        t = np.arange(frames)
        rows = np.empty((coeffs, frames))
        for d in range(coeffs):
            amp = np.sqrt((1.0 if d == 0 else 2.0) / frames)
            rows[d] = amp * np.cos(np.pi * (2 * t + 1) * d / (2.0 * frames))
        return cls(rows)


@dataclass(frozen=True)
class AttributeGraph:
    """I nodes with D-dim features plus D-dim directed edge features.

    edge_features maps (source, target) -> D-vector for every retained edge;
    adjacency[i, j] is True exactly when (i, j) is retained.
    """

    node_features: np.ndarray
    edge_features: dict = field(default_factory=dict)
    adjacency: np.ndarray = None

    def __post_init__(self):
        nodes = _frozen(self.node_features)
        if nodes.ndim != 2:
            raise DomainError("node features must be a 2-D (nodes x dims) grid")
        if not np.all(np.isfinite(nodes)):
            raise DomainError("node features have non-finite entries")
        object.__setattr__(self, "node_features", nodes)
        n = nodes.shape[0]
        adj = self.adjacency
        if adj is None:
            adj = np.zeros((n, n), dtype=bool)
            for (i, j) in self.edge_features:
                adj[i, j] = True
        adj = np.asarray(adj, dtype=bool)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        if adj.shape != (n, n):
            raise DomainError("adjacency shape does not match node count")
        keys = set(self.edge_features)
        marked = {(int(i), int(j)) for i, j in zip(*np.nonzero(adj))}
        if keys != marked:
            raise DomainError("adjacency and edge_features disagree")
        for key, vec in self.edge_features.items():
            if not np.all(np.isfinite(vec)):
                raise DomainError(f"edge {key} has non-finite features")

    @property
    def nodes(self):
        return self.node_features.shape[0]

    @property
    def dims(self):
        return self.node_features.shape[1]

    def with_nodes(self, node_features):
        return replace(self, node_features=node_features)


def top_k_prune(edge_tensor, k):
    """Keep, per source node, the k outgoing edges with largest feature norm.

    Self-edges are never retained. Ties break toward the smaller target index
    so pruning is deterministic. Returns (adjacency, edge map).
    """
    e = np.asarray(edge_tensor, dtype=np.float64)
    if e.ndim != 3 or e.shape[0] != e.shape[1]:
        raise DomainError("edge tensor must be I x I x D")
    n = e.shape[0]
    if k < 1:
        raise DomainError("k must be >= 1")
    if k > n - 1:
        raise DomainError(f"k={k} exceeds the {n - 1} candidate edges per node")
    norms = np.linalg.norm(e, axis=2)
    adjacency = np.zeros((n, n), dtype=bool)
    edges = {}
    for i in range(n):
        candidates = [j for j in range(n) if j != i]
        candidates.sort(key=lambda j: (-norms[i, j], j))
        for j in candidates[:k]:
            adjacency[i, j] = True
            edges[(i, j)] = e[i, j].copy()
    return adjacency, edges


def dense_edges(graph_or_edges, node_count=None, dims=None):
    """Dense (I, I, D) edge tensor plus float mask from an edge map."""
    if isinstance(graph_or_edges, AttributeGraph):
        edges = graph_or_edges.edge_features
        node_count = graph_or_edges.nodes
        dims = graph_or_edges.dims
    else:
        edges = graph_or_edges
        if node_count is None or dims is None:
            raise DomainError("node_count and dims are required with a raw edge map")
    e0 = np.zeros((node_count, node_count, dims))
    mask = np.zeros((node_count, node_count))
    for (i, j), vec in edges.items():
        e0[i, j] = vec
        mask[i, j] = 1.0
    return e0, mask


def clip_to_graph(clip, basis, block, k):
    """Encode a clip: basis projection per attribute, attention edges, top-k prune."""
    from .mefl import mefl_edges

    if clip.frames != basis.frames:
        raise DomainError(
            f"clip has {clip.frames} frames but basis expects {basis.frames}")
    nodes = clip.values @ basis.basis.T
    full = mefl_edges(nodes, block)
    adjacency, edges = top_k_prune(full, k)
    return AttributeGraph(nodes, edges, adjacency)


def graph_to_clip(graph, basis, clip_id="decoded"):
    """Decode node features back to an attribute series, clamped to [0, 1]."""
    if graph.dims != basis.coeffs:
        raise DomainError(
            f"graph feature dim {graph.dims} does not match basis coeffs {basis.coeffs}")
    series = graph.node_features @ basis.basis
    return ReactionClip(clip_id, np.clip(series, 0.0, 1.0))


# -- clip file format (JSON Lines, shared with the CLI) ----------------------

def clip_to_record(clip):
    return {
        "clip_id": clip.clip_id,
        "attributes": clip.attributes,
        "frames": clip.frames,
        "values": [[float(x) for x in row] for row in clip.values],
    }


def clip_from_record(record):
    try:
        values = np.asarray(record["values"], dtype=np.float64)
        clip = ReactionClip(str(record["clip_id"]), values)
        if clip.attributes != int(record["attributes"]) or clip.frames != int(record["frames"]):
            raise DomainError(
                f"clip {record['clip_id']!r}: declared shape "
                f"({record['attributes']}x{record['frames']}) does not match values")
    except KeyError as missing:
        raise DomainError(f"clip record is missing field {missing}") from None
    return clip


def write_clips(path, clips):
    with open(path, "w", encoding="utf-8") as fh:
        for clip in clips:
            fh.write(json.dumps(clip_to_record(clip), sort_keys=True))
            fh.write("\n")


def read_clips(path):
    clips = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DomainError(f"{path}:{lineno}: invalid JSON ({err.msg})") from None
            clips.append(clip_from_record(record))
    return clips
