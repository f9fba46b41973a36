"""Multi-dimensional edge feature learning.

The block runs D independent scaled dot-product attention operations over the
node features; attention map d contributes dimension d of every directed edge
feature, so edge (i, j) carries the D-vector of map values at row i, column j.
Rows are softmax-normalized, which keeps every entry strictly positive and
each row summing to one per dimension.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .numeric import DomainError, Rng, derive_seed


@dataclass
class MeflBlock:
    """D pairs of query/key projections (node_dim x att_dim each)."""

    queries: list
    keys: list

    def __post_init__(self):
        if len(self.queries) != len(self.keys) or not self.queries:
            raise DomainError("need matching, non-empty query/key weight lists")
        shape = self.queries[0].shape
        for w in (*self.queries, *self.keys):
            if w.shape != shape:
                raise DomainError("all attention projections must share one shape")
            if not np.all(np.isfinite(w)):
                raise DomainError("attention weights must be finite")

    @property
    def edge_dims(self):
        return len(self.queries)

    @property
    def node_dim(self):
        return self.queries[0].shape[0]

    @property
    def att_dim(self):
        return self.queries[0].shape[1]


def init_block(node_dim, edge_dims, att_dim=None, seed=0, scale=None):
    """Seeded Gaussian init; scale defaults to 1/sqrt(node_dim)."""
    att_dim = node_dim if att_dim is None else att_dim
    scale = 1.0 / np.sqrt(node_dim) if scale is None else scale
    rng = Rng(derive_seed(seed, "mefl-init"))
    queries = [rng.normal(0.0, scale, (node_dim, att_dim)) for _ in range(edge_dims)]
    keys = [rng.normal(0.0, scale, (node_dim, att_dim)) for _ in range(edge_dims)]
    return MeflBlock(queries, keys)


def attention_maps(nodes, queries, keys):
    """Stack of row-softmax attention maps as an (I, I, D) tensor.

    Generic over ndarray/Tensor weights so the trainer can differentiate
    through it; `nodes` may be a constant array in either case.
    """
    att_dim = ad.value(queries[0]).shape[1]
    inv_sqrt = 1.0 / np.sqrt(att_dim)
    n = ad.value(nodes).shape[0]
    maps = []
    for w_q, w_k in zip(queries, keys):
        q = nodes @ w_q
        k = nodes @ w_k
        scores = (q @ k.T) * inv_sqrt
        shift = ad.value(scores).max(axis=1, keepdims=True)
        e = ad.exp(scores - shift)
        row = e / e.sum(axis=1, keepdims=True)
        maps.append(row.reshape((n, n, 1)))
    return ad.concat(maps, axis=2)


def mefl_edges(nodes, block):
    """Full (pre-pruning) I x I x D edge tensor for the given node features."""
    feats = np.asarray(nodes, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise DomainError("need a 2-D node grid with at least 2 nodes")
    if feats.shape[1] != block.node_dim:
        raise DomainError(
            f"node dim {feats.shape[1]} does not match block dim {block.node_dim}")
    return attention_maps(feats, block.queries, block.keys)
