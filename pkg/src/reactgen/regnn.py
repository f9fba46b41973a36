"""Reversible edge-graph layer stack.

Each layer adds a contraction-bounded message to every node feature:

    v_i' = v_i + phi(V)_i

where phi first standardizes and squashes the node features (fixed affine
normalization then sigmoid), computes softmax relationship coefficients over
each target's in-neighbourhood, renormalizes the initial edge features with
them, contracts the edge dimensions with a learnable combination vector, and
finally divides by the recorded contraction scale 1 + 2*||W_q W_k^T||_2.

Because phi is Lipschitz with constant < 1 after enforcement, the update is
invertible: the input features are the unique fixed point of
x = v' - phi(x), recovered by seeded fixed-point iteration. All layers of a
stack consume the *initial* edge feature set of the input graph.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import numeric
from .graphs import dense_edges
from .numeric import DomainError, NumericError, Rng, derive_seed

# power-iteration settings shared by enforcement, freshness checks and the
# differentiable training path, so all three see the same scale value
SCALE_TOL = 1e-10
SCALE_MAX_ITER = 100000


class ContractViolationError(RuntimeError):
    """A layer was used without a fresh Lipschitz enforcement."""


class FixedPointError(NumericError):
    """Reverse iteration failed to converge; signals a contraction violation."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class RegnnLayer:
    """Learnable weights of one layer plus its recorded contraction scale.

    w_query/w_key project (preprocessed) node features to relationship
    scores; w_combine contracts the edge dimensions of each message.
    norm_mean/norm_scale are the frozen standardization constants of the
    pre-activation step. message_scale is None until enforcement.
    """

    w_query: np.ndarray
    w_key: np.ndarray
    w_combine: np.ndarray
    norm_mean: np.ndarray = None
    norm_scale: np.ndarray = None
    message_scale: float = None

    def __post_init__(self):
        dim = self.w_query.shape[0]
        if self.w_query.shape != self.w_key.shape:
            raise DomainError("w_query and w_key must share a shape")
        if self.w_combine.shape != (dim,):
            raise DomainError("w_combine must be a vector over the edge dimensions")
        if self.norm_mean is None:
            self.norm_mean = np.zeros(dim)
        if self.norm_scale is None:
            self.norm_scale = np.ones(dim)
        if np.any(np.asarray(self.norm_scale) <= 0):
            raise DomainError("normalization scale must be positive")

    @property
    def dim(self):
        return self.w_query.shape[0]


@dataclass
class RegnnModel:
    """Ordered stack of layers; at least one."""

    layers: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise DomainError("a model needs at least one layer")
        dims = {layer.dim for layer in self.layers}
        if len(dims) != 1:
            raise DomainError("all layers must share the feature dimension")

    @property
    def depth(self):
        return len(self.layers)

    @property
    def dim(self):
        return self.layers[0].dim


def init_layer(dim, rng, query_scale=None, combine_scale=None):
    query_scale = 0.5 / np.sqrt(dim) if query_scale is None else query_scale
    combine_scale = 1.0 / dim if combine_scale is None else combine_scale
    return RegnnLayer(
        w_query=rng.normal(0.0, query_scale, (dim, dim)),
        w_key=rng.normal(0.0, query_scale, (dim, dim)),
        w_combine=rng.normal(0.0, combine_scale, dim),
    )


def init_model(dim, n_layers, seed=0, enforce=True, **scales):
    if n_layers < 1:
        raise DomainError("a model needs at least one layer")
    layers = [init_layer(dim, Rng(derive_seed(seed, "layer-init", n)), **scales)
              for n in range(n_layers)]
    model = RegnnModel(layers)
    if enforce:
        enforce_model(model)
    return model


# -- generic math core (ndarray or autodiff.Tensor weights) ------------------

def coefficient_matrix(feats, mask, w_query, w_key):
    """Relationship coefficients a[j, i], softmax-normalized per target column.

    scores[j, i] = (feats_i @ w_query) . (feats_j @ w_key); the softmax runs
    over each target i's in-neighbourhood (mask[j, i] == 1). Targets with no
    in-edges get an all-zero column.
    """
    q = feats @ w_query
    k = feats @ w_key
    scores = k @ q.T
    raw = ad.value(scores)
    masked_max = np.where(mask > 0, raw, -np.inf).max(axis=0, keepdims=True)
    shift = np.where(np.isfinite(masked_max), masked_max, 0.0)
    # exponent forced to 0 off-mask so stray large scores cannot overflow
    e = ad.exp((scores - shift) * mask) * mask
    empty = (mask.sum(axis=0, keepdims=True) == 0).astype(np.float64)
    return e / (e.sum(axis=0, keepdims=True) + empty)


def normalized_edge_tensor(coeff, e0, mask):
    """Coefficient-weighted edges, renormalized so each target's incoming
    edges sum to one per dimension."""
    n = mask.shape[0]
    weighted = coeff.reshape((n, n, 1)) * e0
    denom = weighted.sum(axis=0, keepdims=True)
    occupied = mask.sum(axis=0) > 0
    dvals = ad.value(denom)[0]
    if occupied.any() and float(dvals[occupied].min()) < 1e-300:
        raise NumericError("incoming-edge normalization denominator underflow")
    empty3 = (~occupied).astype(np.float64)[None, :, None]
    return weighted / (denom + empty3)


def _preactivation(x, norm_mean, norm_scale):
    return ad.sigmoid((x - norm_mean) / norm_scale)


def layer_message(x, e0, mask, w_query, w_key, w_combine, norm_mean, norm_scale,
                  scale):
    """The contraction map phi applied to raw node features x."""
    u = _preactivation(x, norm_mean, norm_scale)
    coeff = coefficient_matrix(u, mask, w_query, w_key)
    edges = normalized_edge_tensor(coeff, e0, mask)
    dims = ad.value(e0).shape[2]
    gate = (edges * w_combine.reshape((1, 1, dims))).sum(axis=2)
    return (gate.T @ u) / scale


def _layer_phi(x, e0, mask, layer):
    return layer_message(x, e0, mask, layer.w_query, layer.w_key,
                         layer.w_combine, layer.norm_mean, layer.norm_scale,
                         layer.message_scale)


# -- public layer operations --------------------------------------------------

def _dense_for(edges, node_count, dims):
    return dense_edges(edges, node_count=node_count, dims=dims)


def coefficients(nodes, edges, layer):
    """Per-edge relationship coefficients for the node features as given."""
    feats = np.asarray(nodes, dtype=np.float64)
    if not edges:
        return {}
    _, mask = _dense_for(edges, feats.shape[0], layer.dim)
    coeff = coefficient_matrix(feats, mask, layer.w_query, layer.w_key)
    return {(j, i): float(coeff[j, i]) for (j, i) in edges}


def edge_update(nodes, edges, layer):
    """Coefficient-renormalized edge features for the node features as given.

    Each target's incoming updated edges sum to one elementwise.
    """
    feats = np.asarray(nodes, dtype=np.float64)
    if not edges:
        return {}
    e0, mask = _dense_for(edges, feats.shape[0], layer.dim)
    if min(float(np.min(vec)) for vec in edges.values()) <= 0.0:
        raise DomainError("edge_update expects strictly positive initial edges")
    coeff = coefficient_matrix(feats, mask, layer.w_query, layer.w_key)
    updated = normalized_edge_tensor(coeff, e0, mask)
    return {(j, i): updated[j, i].copy() for (j, i) in edges}


def contraction_scale(layer):
    """Freshly computed 1 + 2*||w_query @ w_key^T||_2."""
    for w in (layer.w_query, layer.w_key, layer.w_combine):
        if not np.all(np.isfinite(w)):
            raise NumericError("layer weights are non-finite")
    s = numeric.spectral_norm(layer.w_query @ layer.w_key.T,
                              tol=SCALE_TOL, max_iter=SCALE_MAX_ITER)
    if not np.isfinite(s):
        raise NumericError("spectral norm of the score product is non-finite")
    return 1.0 + 2.0 * s


def enforce_lipschitz(layer):
    """Record the contraction scale the layer's messages are divided by.

    Recomputing from unchanged weights reproduces the identical scale, so
    enforcement is idempotent. Must be re-run after any weight change.
    """
    layer.message_scale = contraction_scale(layer)
    return layer


def enforce_model(model):
    for layer in model.layers:
        enforce_lipschitz(layer)
    return model


def is_enforced(layer, rtol=1e-9):
    """Whether the recorded scale matches the current weights."""
    if layer.message_scale is None:
        return False
    fresh = contraction_scale(layer)
    return abs(layer.message_scale - fresh) <= rtol * fresh


def _require_enforced(layer):
    if not is_enforced(layer):
        raise ContractViolationError(
            "layer weights changed since the last Lipschitz enforcement "
            "(or it was never enforced); call enforce_lipschitz first")


def forward_layer(nodes, edges, layer):
    """One residual update; requires a fresh enforcement."""
    _require_enforced(layer)
    feats = np.asarray(nodes, dtype=np.float64)
    e0, mask = _dense_for(edges, feats.shape[0], layer.dim)
    return feats + _layer_phi(feats, e0, mask, layer)


def reverse_layer(nodes_next, edges, layer, tol=1e-8, max_iter=500, seed=0,
                  return_info=False):
    """Recover the layer input as the fixed point of x = nodes_next - phi(x).

    x0 is a seeded uniform draw from (0.1, 1.1); iteration stops when the
    max-abs step falls below tol. Non-convergence raises FixedPointError,
    which signals a broken contraction bound.
    """
    _require_enforced(layer)
    if not tol > 0:
        raise DomainError("tol must be positive")
    target = np.asarray(nodes_next, dtype=np.float64)
    e0, mask = _dense_for(edges, target.shape[0], layer.dim)
    rng = Rng(derive_seed(seed, "fixed-point-start"))
    x = rng.uniform(0.1, 1.1, target.shape)
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        nxt = target - _layer_phi(x, e0, mask, layer)
        residual = float(np.max(np.abs(nxt - x)))
        x = nxt
        if residual < tol:
            if return_info:
                return x, {"iterations": iteration, "residual": residual}
            return x
    raise FixedPointError(
        f"fixed-point iteration stalled at residual {residual:.3g} "
        f"after {max_iter} iterations",
        residual=residual, iterations=max_iter)


def forward(model, graph):
    """Propagate through all layers; every layer reads the graph's initial edges."""
    nodes = graph.node_features
    for layer in model.layers:
        nodes = forward_layer(nodes, graph.edge_features, layer)
    return graph.with_nodes(nodes)


def reverse(model, graph, tol=1e-8, max_iter=500, seed=0, return_info=False):
    """Invert forward(): peel layers in reverse order by fixed-point iteration."""
    nodes = graph.node_features
    info = {"iterations": 0, "residual": 0.0}
    for index in reversed(range(model.depth)):
        nodes, layer_info = reverse_layer(
            nodes, graph.edge_features, model.layers[index],
            tol=tol, max_iter=max_iter,
            seed=derive_seed(seed, "reverse-layer", index), return_info=True)
        info["iterations"] = max(info["iterations"], layer_info["iterations"])
        info["residual"] = max(info["residual"], layer_info["residual"])
    out = graph.with_nodes(nodes)
    if return_info:
        return out, info
    return out


def empirical_lipschitz(layer, edges, node_count, n_pairs=1000, seed=0,
                        spread=2.0):
    """Sampled Lipschitz estimate of phi: max ||phi(a)-phi(b)|| / ||a-b||
    (Frobenius) over seeded input pairs. After enforcement this must be < 1."""
    _require_enforced(layer)
    e0, mask = _dense_for(edges, node_count, layer.dim)
    rng = Rng(derive_seed(seed, "lipschitz-pairs"))
    worst = 0.0
    for _ in range(n_pairs):
        a = rng.normal(0.0, spread, (node_count, layer.dim))
        b = rng.normal(0.0, spread, (node_count, layer.dim))
        gap = float(np.linalg.norm(a - b))
        if gap == 0.0:
            continue
        step = float(np.linalg.norm(
            _layer_phi(a, e0, mask, layer) - _layer_phi(b, e0, mask, layer)))
        worst = max(worst, step / gap)
    return worst
