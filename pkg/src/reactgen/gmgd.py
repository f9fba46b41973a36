"""Gaussian mixture graph distribution.

Every node of an I-node graph carries an M-component isotropic GMM over
D-dim latent node features. Component means come directly from the node
features of M latent graphs; standard deviations are configured, not fitted.
"""

import json
from dataclasses import dataclass

import numpy as np

from .graphs import AttributeGraph
from .numeric import DomainError


@dataclass(frozen=True)
class GaussianMixtureGraphDistribution:
    """means[i, m] is component m's mean at node i; sigmas[i, m] its scalar
    (isotropic) standard deviation; weights are the shared mixture weights."""

    means: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if means.ndim != 3:
            raise DomainError("means must be (nodes, components, dims)")
        nodes, components, _ = means.shape
        if sigmas.shape != (nodes, components):
            raise DomainError("sigmas must be (nodes, components)")
        if weights.shape != (components,):
            raise DomainError("weights must have one entry per component")
        if not np.all(np.isfinite(means)):
            raise DomainError("means must be finite")
        # sigma == 0 is allowed: a degenerate component samples its mean exactly
        if np.any(sigmas < 0):
            raise DomainError("sigmas must be >= 0")
        if abs(weights.sum() - 1.0) > 1e-12 or np.any(weights < 0):
            raise DomainError("weights must be non-negative and sum to 1")
        for name, a in (("means", means), ("sigmas", sigmas), ("weights", weights)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def nodes(self):
        return self.means.shape[0]

    @property
    def components(self):
        return self.means.shape[1]

    @property
    def dims(self):
        return self.means.shape[2]


def summarize(latents, sigma):
    """Distribution whose component m mean at node i is latent m's node-i feature.

    Mixture weights are uniform; every sigma is the configured scalar.
    """
    if not latents:
        raise DomainError("need at least one latent graph")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    feats = [g.node_features if isinstance(g, AttributeGraph) else np.asarray(g)
             for g in latents]
    shape = feats[0].shape
    if any(f.shape != shape for f in feats):
        raise DomainError("latent graphs must share (nodes, dims)")
    means = np.stack(feats, axis=1)
    nodes, components, _ = means.shape
    return GaussianMixtureGraphDistribution(
        means=means,
        sigmas=np.full((nodes, components), float(sigma)),
        weights=np.full(components, 1.0 / components),
    )


def _pick_components(dist, rng, count):
    cumulative = np.cumsum(dist.weights)
    draws = rng.uniform(0.0, 1.0, count)
    return np.minimum(np.searchsorted(cumulative, draws), dist.components - 1)


def sample(dist, rng, component_mode="per_node"):
    """Draw one latent graph: a component per node (or one shared component
    with component_mode="global"), then Gaussian noise around its mean.

    Deterministic for a given rng state; the draw order is components first,
    then one (nodes x dims) noise grid.
    """
    if component_mode not in ("per_node", "global"):
        raise DomainError(f"unknown component_mode {component_mode!r}")
    n = dist.nodes
    if component_mode == "global":
        picks = np.full(n, _pick_components(dist, rng, 1)[0])
    else:
        picks = _pick_components(dist, rng, n)
    noise = rng.normal(0.0, 1.0, (n, dist.dims))
    rows = np.arange(n)
    features = dist.means[rows, picks] + dist.sigmas[rows, picks, None] * noise
    return AttributeGraph(features)


def to_flat(dist):
    """Pack means into the (I, M*D) grid the cognitive predictor emits;
    column m*D + d holds component m, dimension d."""
    return dist.means.reshape(dist.nodes, dist.components * dist.dims).copy()


def from_flat(grid, components, dims, sigma, weights=None):
    """Unpack an (I, P) grid back into a distribution; P must equal M*D."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DomainError("flat grid must be 2-D")
    nodes, p = grid.shape
    if p % dims != 0 or p != components * dims:
        raise DomainError(
            f"grid width {p} is not components*dims = {components}*{dims}")
    means = grid.reshape(nodes, components, dims)
    if weights is None:
        weights = np.full(components, 1.0 / components)
    return GaussianMixtureGraphDistribution(
        means=means,
        sigmas=np.full((nodes, components), float(sigma)),
        weights=np.asarray(weights, dtype=np.float64),
    )


def log_density(dist, latent):
    """Log-density of latent node features under the per-node mixtures."""
    feats = latent.node_features if isinstance(latent, AttributeGraph) else np.asarray(latent)
    if feats.shape != (dist.nodes, dist.dims):
        raise DomainError("latent shape does not match the distribution")
    if np.any(dist.sigmas == 0):
        raise DomainError("log_density is undefined for degenerate components")
    total = 0.0
    d = dist.dims
    for i in range(dist.nodes):
        diff = feats[i][None, :] - dist.means[i]
        sig = dist.sigmas[i]
        comp = (np.log(dist.weights)
                - 0.5 * d * np.log(2.0 * np.pi)
                - d * np.log(sig)
                - 0.5 * (diff * diff).sum(axis=1) / (sig * sig))
        peak = comp.max()
        total += peak + np.log(np.exp(comp - peak).sum())
    return float(total)


def to_json(dist):
    """Standalone serialization; requires the uniform sigma/weights this
    pipeline produces: {"I", "D", "M", "sigma", "means"}."""
    sigma = float(dist.sigmas.flat[0])
    if not np.all(dist.sigmas == sigma):
        raise DomainError("standalone JSON requires a single shared sigma")
    if not np.allclose(dist.weights, 1.0 / dist.components):
        raise DomainError("standalone JSON requires uniform weights")
    return json.dumps({
        "I": dist.nodes,
        "D": dist.dims,
        "M": dist.components,
        "sigma": sigma,
        "means": [[[float(x) for x in comp] for comp in node] for node in dist.means],
    }, sort_keys=True)


def from_json(text):
    try:
        doc = json.loads(text)
        means = np.asarray(doc["means"], dtype=np.float64)
        nodes, components, dims = int(doc["I"]), int(doc["M"]), int(doc["D"])
        sigma = float(doc["sigma"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise DomainError(f"malformed distribution document: {err}") from None
    if means.shape != (nodes, components, dims):
        raise DomainError("distribution means do not match declared I/M/D")
    return GaussianMixtureGraphDistribution(
        means=means,
        sigmas=np.full((nodes, components), sigma),
        weights=np.full(components, 1.0 / components),
    )
