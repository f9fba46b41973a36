"""Reaction-distribution training pipeline.

Training turns the one-to-many supervision problem (one speaker behaviour,
M appropriate listener reactions) into a one-to-one problem: the reversible
stack encodes the M reactions into latent graphs that a pairwise L1 loss
pulls toward a shared distribution, and the cognitive predictor regresses
the flattened per-node mixture means of that distribution with an MSE loss.
Inference runs the predictor, samples latent graphs from the predicted
mixture, and reverse-decodes them into clips.
"""

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import gmgd, mefl, regnn
from .graphs import (AttributeGraph, TemporalBasis, clip_to_graph,
                     graph_to_clip, top_k_prune)
from .numeric import DomainError, NumericError, Rng, derive_seed

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 100
    decay_epochs: tuple = (20, 50)
    decay_factor: float = 0.1
    sigma: float = 0.6
    seed: int = 0
    align_weight: float = 1.0
    dist_weight: float = 1.0
    alternate: bool = False
    component_mode: str = "per_node"

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if self.learning_rate <= 0 or self.decay_factor <= 0:
            raise DomainError("rates must be positive")
        if self.weight_decay < 0 or self.align_weight < 0 or self.dist_weight < 0:
            raise DomainError("weights must be non-negative")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if any(e >= self.epochs for e in self.decay_epochs):
            raise DomainError("decay epochs must lie before the final epoch")
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")


@dataclass
class CognitivePredictor:
    """Shared tanh trunk plus one projection head per graph node."""

    w_hidden: np.ndarray
    b_hidden: np.ndarray
    head_weights: list
    head_biases: list

    @property
    def heads(self):
        return len(self.head_weights)

    @property
    def out_dim(self):
        return self.head_weights[0].shape[1]


def init_predictor(in_dim, heads, out_dim, hidden_dim, seed=0):
    rng = Rng(derive_seed(seed, "predictor-init"))
    return CognitivePredictor(
        w_hidden=rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, hidden_dim)),
        b_hidden=np.zeros(hidden_dim),
        head_weights=[rng.normal(0.0, 0.1 / np.sqrt(hidden_dim), (hidden_dim, out_dim))
                      for _ in range(heads)],
        head_biases=[np.zeros(out_dim) for _ in range(heads)],
    )


def _predictor_grid(w_hidden, b_hidden, head_weights, head_biases, features):
    """(heads, out_dim) grid; generic over ndarray/Tensor weights."""
    x = np.asarray(features, dtype=np.float64).reshape(1, -1)
    hidden = ad.tanh(x @ w_hidden + b_hidden)
    rows = [hidden @ w + b for w, b in zip(head_weights, head_biases)]
    return ad.concat(rows, axis=0)


def predictor_grid(predictor, features):
    return _predictor_grid(predictor.w_hidden, predictor.b_hidden,
                           predictor.head_weights, predictor.head_biases,
                           features)


@dataclass
class PipelineState:
    """Everything the pipeline trains or needs to decode: temporal basis,
    edge-attention block(s), reversible stack, predictor, and the shape
    bookkeeping (top_k, reactions per behaviour)."""

    basis: TemporalBasis
    encode_block: mefl.MeflBlock
    decode_block: object  # MeflBlock or None (None -> shared with encode)
    model: regnn.RegnnModel
    predictor: CognitivePredictor
    top_k: int
    reactions: int
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def coeffs(self):
        return self.basis.coeffs

    @property
    def attributes(self):
        return self.predictor.heads

    def block_for_decode(self):
        return self.decode_block if self.decode_block is not None else self.encode_block


def init_pipeline(attributes, frames, coeffs, top_k, n_layers, reactions,
                  config=None, att_dim=None, hidden_dim=48, shared_mefl=True,
                  seed=None):
    config = config or TrainConfig()
    seed = config.seed if seed is None else seed
    if reactions < 2:
        raise DomainError("need at least 2 appropriate reactions per behaviour")
    if not 1 <= top_k <= attributes - 1:
        raise DomainError(f"top_k must be in [1, {attributes - 1}]")
    basis = TemporalBasis.dct(frames, coeffs)
    encode_block = mefl.init_block(coeffs, coeffs, att_dim,
                                   seed=derive_seed(seed, "encode-block"))
    decode_block = None if shared_mefl else mefl.init_block(
        coeffs, coeffs, att_dim, seed=derive_seed(seed, "decode-block"))
    model = regnn.init_model(coeffs, n_layers, seed=derive_seed(seed, "stack"))
    predictor = init_predictor(attributes * coeffs, attributes,
                               reactions * coeffs, hidden_dim,
                               seed=derive_seed(seed, "predictor"))
    return PipelineState(basis, encode_block, decode_block, model, predictor,
                         top_k, reactions, config)


def speaker_features(clip, basis):
    """Fixed featurizer: temporal-basis coefficients concatenated across
    attributes (stands in for pretrained perceptual encoders)."""
    if clip.frames != basis.frames:
        raise DomainError("speaker clip frame count does not match the basis")
    return (clip.values @ basis.basis.T).reshape(-1)


def encode_reaction(state, clip):
    """Listener clip -> latent graph (basis projection, edges, forward pass)."""
    graph = clip_to_graph(clip, state.basis, state.encode_block, state.top_k)
    return regnn.forward(state.model, graph)


# -- losses -------------------------------------------------------------------

def pairwise_l1_loss(latents):
    """Sum of elementwise L1 distances over all latent graph pairs."""
    arrays = [g.node_features if isinstance(g, AttributeGraph) else np.asarray(g)
              for g in latents]
    if len(arrays) < 2:
        raise DomainError("need at least two latent graphs")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise DomainError("latent graphs must share a shape")
    total = 0.0
    for m1 in range(len(arrays)):
        for m2 in range(m1 + 1, len(arrays)):
            total += float(np.abs(arrays[m2] - arrays[m1]).sum())
    return total


def distribution_mse_loss(predicted, target):
    """Mean squared error between flattened distribution grids."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DomainError(f"grid shapes differ: {p.shape} vs {t.shape}")
    d = p - t
    return float((d * d).mean())


# -- parameter registry -------------------------------------------------------

def collect_params(state):
    """Name -> live ndarray for every trainable tensor (stable order)."""
    params = {}
    for d, (q, k) in enumerate(zip(state.encode_block.queries,
                                   state.encode_block.keys)):
        params[f"encode_block.q{d}"] = q
        params[f"encode_block.k{d}"] = k
    if state.decode_block is not None:
        for d, (q, k) in enumerate(zip(state.decode_block.queries,
                                       state.decode_block.keys)):
            params[f"decode_block.q{d}"] = q
            params[f"decode_block.k{d}"] = k
    for n, layer in enumerate(state.model.layers):
        params[f"model.layer{n}.w_query"] = layer.w_query
        params[f"model.layer{n}.w_key"] = layer.w_key
        params[f"model.layer{n}.w_combine"] = layer.w_combine
    params["predictor.w_hidden"] = state.predictor.w_hidden
    params["predictor.b_hidden"] = state.predictor.b_hidden
    for i, (w, b) in enumerate(zip(state.predictor.head_weights,
                                   state.predictor.head_biases)):
        params[f"predictor.head{i}.w"] = w
        params[f"predictor.head{i}.b"] = b
    return params


def trainable_params(state):
    """collect_params minus the decode-side attention block: no loss touches
    it (it only wires inference-time decode graphs), and decay-only updates
    would erode it."""
    return {name: a for name, a in collect_params(state).items()
            if not name.startswith("decode_block.")}


def param_groups(params):
    """Group parameter names by component for gradient-check reporting."""
    groups = {}
    for name in params:
        prefix = name.split(".")[0]
        groups.setdefault(prefix, []).append(name)
    return groups


def pack_params(params):
    vector = np.concatenate([params[name].reshape(-1) for name in params])
    layout = [(name, params[name].shape, params[name].size) for name in params]
    return vector, layout


def unpack_params(vector, layout):
    out = {}
    offset = 0
    for name, shape, size in layout:
        out[name] = np.asarray(vector[offset:offset + size],
                               dtype=np.float64).reshape(shape).copy()
        offset += size
    return out


# -- differentiable loss ------------------------------------------------------

def _layer_weight_tensors(tensors, n_layers):
    return ([tensors[f"model.layer{n}.w_query"] for n in range(n_layers)],
            [tensors[f"model.layer{n}.w_key"] for n in range(n_layers)],
            [tensors[f"model.layer{n}.w_combine"] for n in range(n_layers)])


def batch_losses(tensors, state, batch, config):
    """Alignment and distribution losses for a batch of behaviours, written
    on whatever backend `tensors` holds (Tensors for training, ndarrays for
    value-only evaluation)."""
    n_layers = state.model.depth
    w_queries, w_keys, w_combines = _layer_weight_tensors(tensors, n_layers)
    scales = [1.0 + 2.0 * ad.spectral_norm2(wq @ wk.T, tol=regnn.SCALE_TOL,
                                            max_iter=regnn.SCALE_MAX_ITER)
              for wq, wk in zip(w_queries, w_keys)]
    enc_q = [tensors[f"encode_block.q{d}"] for d in range(state.encode_block.edge_dims)]
    enc_k = [tensors[f"encode_block.k{d}"] for d in range(state.encode_block.edge_dims)]
    basis = state.basis.basis
    align_total = 0.0
    dist_total = 0.0
    for behavior in batch:
        if len(behavior.listeners) < 2:
            raise DomainError(
                f"behaviour {behavior.behavior_id!r} has fewer than 2 reactions")
        latents = []
        for clip in behavior.listeners:
            nodes = clip.values @ basis.T
            full = mefl.attention_maps(nodes, enc_q, enc_k)
            adjacency, _ = top_k_prune(ad.value(full), state.top_k)
            mask = adjacency.astype(np.float64)
            masked = full * mask[:, :, None]
            x = nodes
            for n, layer in enumerate(state.model.layers):
                x = x + regnn.layer_message(
                    x, masked, mask, w_queries[n], w_keys[n], w_combines[n],
                    layer.norm_mean, layer.norm_scale, scales[n])
            latents.append(x)
        align = 0.0
        for m1 in range(len(latents)):
            for m2 in range(m1 + 1, len(latents)):
                align = align + ad.absolute(latents[m2] - latents[m1]).sum()
        if config.alternate:
            target = np.concatenate([ad.value(z) for z in latents], axis=1)
        else:
            target = ad.concat(latents, axis=1)
        pred = _predictor_grid(
            tensors["predictor.w_hidden"], tensors["predictor.b_hidden"],
            [tensors[f"predictor.head{i}.w"] for i in range(state.predictor.heads)],
            [tensors[f"predictor.head{i}.b"] for i in range(state.predictor.heads)],
            speaker_features(behavior.speaker, state.basis))
        diff = pred - target
        align_total = align_total + align
        dist_total = dist_total + (diff * diff).mean()
    scale = 1.0 / len(batch)
    return align_total * scale, dist_total * scale


def loss_values(state, batch, config=None):
    """Value-only (align, dist) pair; the function finite differences probe."""
    config = config or state.config
    params = trainable_params(state)
    align, dist = batch_losses(params, state, batch, config)
    return float(ad.value(align)), float(ad.value(dist))


# -- optimizer ----------------------------------------------------------------

class Adam:
    """Adam with coupled weight decay (decay added to the raw gradient)."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, weight_decay=0.0):
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads[name] + weight_decay * p
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "step_count": self.step_count,
                "m": dict(self.m), "v": dict(self.v)}

    @classmethod
    def from_state_dict(cls, doc):
        opt = cls(doc["lr"], doc["beta1"], doc["beta2"], doc["eps"])
        opt.step_count = doc["step_count"]
        opt.m = dict(doc["m"])
        opt.v = dict(doc["v"])
        return opt


# -- training -----------------------------------------------------------------

def train_step(state, batch, optimizer, config=None):
    """One optimizer step over a batch of behaviours.

    Requires every layer to be freshly enforced, applies the (joint or
    decoupled) gradients, then re-enforces the contraction bound.
    """
    config = config or state.config
    for layer in state.model.layers:
        if not regnn.is_enforced(layer):
            raise regnn.ContractViolationError(
                "train_step requires freshly enforced layers")
    params = trainable_params(state)
    tensors = {name: ad.Tensor(a) for name, a in params.items()}
    align_t, dist_t = batch_losses(tensors, state, batch, config)
    total_t = config.align_weight * align_t + config.dist_weight * dist_t
    record = {"align": float(ad.value(align_t)),
              "dist": float(ad.value(dist_t)),
              "total": float(ad.value(total_t))}
    if not np.isfinite(record["total"]):
        err = NumericError(f"non-finite training loss: {record}")
        err.record = record
        raise err
    total_t.backward()
    grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for name, t in tensors.items()}
    optimizer.step(params, grads, config.weight_decay)
    regnn.enforce_model(state.model)
    return record


def train(state, corpus, config=None, optimizer=None, start_epoch=0,
          on_epoch=None):
    """Train over a corpus of behaviours; one step per behaviour, shuffled
    per epoch from the config seed. Returns one loss record per epoch.

    Resuming from (state, optimizer, start_epoch) restored from a checkpoint
    reproduces the unbroken run exactly: epoch order, decay schedule and step
    order depend only on the seed and epoch index.
    """
    config = config or state.config
    if not corpus:
        raise DomainError("corpus is empty")
    optimizer = optimizer or Adam(config.learning_rate)
    history = []
    for epoch in range(start_epoch + 1, config.epochs + 1):
        if epoch in config.decay_epochs:
            optimizer.lr *= config.decay_factor
        order = Rng(derive_seed(config.seed, "epoch-order", epoch)).permutation(len(corpus))
        records = [train_step(state, [corpus[i]], optimizer, config)
                   for i in order]
        entry = {
            "epoch": epoch,
            "align": float(np.mean([r["align"] for r in records])),
            "dist": float(np.mean([r["dist"] for r in records])),
        }
        entry["total"] = (config.align_weight * entry["align"]
                          + config.dist_weight * entry["dist"])
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return history


# -- inference ----------------------------------------------------------------

def predicted_distribution(state, speaker_clip, sigma=None):
    """Predictor output for one speaker clip, unpacked into a distribution."""
    sigma = state.config.sigma if sigma is None else sigma
    grid = ad.value(predictor_grid(state.predictor, speaker_features(speaker_clip, state.basis)))
    return gmgd.from_flat(grid, state.reactions, state.coeffs, sigma=sigma)


def decode_latent(state, latent_nodes, seed=0, tol=1e-8, max_iter=500,
                  clip_id="decoded"):
    """Latent node features -> clip: attach decode-side edges, reverse, decode."""
    block = state.block_for_decode()
    full = mefl.mefl_edges(latent_nodes, block)
    adjacency, edges = top_k_prune(full, state.top_k)
    latent_graph = AttributeGraph(latent_nodes, edges, adjacency)
    recovered = regnn.reverse(state.model, latent_graph, tol=tol,
                              max_iter=max_iter, seed=seed)
    return graph_to_clip(recovered, state.basis, clip_id=clip_id)


def predict_reactions(state, speaker_clip, n_samples, rng, sigma=None,
                      tol=1e-8, max_iter=500, clip_id_prefix="gen"):
    """Sample n reactions for one speaker behaviour.

    Each sample draws a latent graph from the predicted distribution and
    reverse-decodes it. Fixed-point failures are re-raised with the sample
    index attached.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    dist = predicted_distribution(state, speaker_clip, sigma=sigma)
    clips = []
    for s in range(n_samples):
        latent = gmgd.sample(dist, rng, component_mode=state.config.component_mode)
        try:
            clips.append(decode_latent(
                state, latent.node_features,
                seed=int(rng.integers(0, 1 << 62)), tol=tol, max_iter=max_iter,
                clip_id=f"{clip_id_prefix}_{s:03d}"))
        except regnn.FixedPointError as err:
            raise regnn.FixedPointError(
                f"sample {s}: {err}", residual=err.residual,
                iterations=err.iterations) from err
    return clips


# -- checkpoints ---------------------------------------------------------------

def _encode_array(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")}


def _decode_array(doc):
    a = np.frombuffer(base64.b64decode(doc["data"]), dtype="<f8")
    return a.reshape(doc["shape"]).copy()


def save_checkpoint(path, state, optimizer=None, epoch=0, rng_state=None):
    """Single JSON document with every parameter as base64 little-endian
    float64 bytes; save-then-load is bitwise exact."""
    shapes = {
        "attributes": state.attributes,
        "frames": state.basis.frames,
        "coeffs": state.coeffs,
        "top_k": state.top_k,
        "layers": state.model.depth,
        "reactions": state.reactions,
        "att_dim": state.encode_block.att_dim,
        "hidden_dim": state.predictor.b_hidden.shape[0],
        "shared_mefl": state.decode_block is None,
    }
    constants = {"basis": _encode_array(state.basis.basis)}
    for n, layer in enumerate(state.model.layers):
        constants[f"layer{n}.norm_mean"] = _encode_array(layer.norm_mean)
        constants[f"layer{n}.norm_scale"] = _encode_array(layer.norm_scale)
        constants[f"layer{n}.message_scale"] = layer.message_scale
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "shapes": shapes,
        "train_config": {**asdict(state.config),
                         "decay_epochs": list(state.config.decay_epochs)},
        "params": {name: _encode_array(a)
                   for name, a in collect_params(state).items()},
        "constants": constants,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "optimizer": None,
    }
    if optimizer is not None:
        od = optimizer.state_dict()
        doc["optimizer"] = {
            "lr": od["lr"], "beta1": od["beta1"], "beta2": od["beta2"],
            "eps": od["eps"], "step_count": od["step_count"],
            "m": {k: _encode_array(v) for k, v in od["m"].items()},
            "v": {k: _encode_array(v) for k, v in od["v"].items()},
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (state, optimizer_or_None, epoch, rng_state)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DomainError(
            f"unsupported checkpoint format: {doc.get('format_version')!r}")
    shapes = doc["shapes"]
    cfg_doc = dict(doc["train_config"])
    cfg_doc["decay_epochs"] = tuple(cfg_doc["decay_epochs"])
    config = TrainConfig(**cfg_doc)
    state = init_pipeline(
        shapes["attributes"], shapes["frames"], shapes["coeffs"],
        shapes["top_k"], shapes["layers"], shapes["reactions"], config,
        att_dim=shapes["att_dim"], hidden_dim=shapes["hidden_dim"],
        shared_mefl=shapes["shared_mefl"])
    params = collect_params(state)
    for name, enc in doc["params"].items():
        if name not in params:
            raise DomainError(f"checkpoint has unknown parameter {name!r}")
        params[name][...] = _decode_array(enc)
    constants = doc["constants"]
    object.__setattr__(state.basis, "basis", _decode_array(constants["basis"]))
    state.basis.basis.setflags(write=False)
    for n, layer in enumerate(state.model.layers):
        layer.norm_mean = _decode_array(constants[f"layer{n}.norm_mean"])
        layer.norm_scale = _decode_array(constants[f"layer{n}.norm_scale"])
        layer.message_scale = constants[f"layer{n}.message_scale"]
    optimizer = None
    if doc.get("optimizer"):
        od = doc["optimizer"]
        optimizer = Adam.from_state_dict({
            "lr": od["lr"], "beta1": od["beta1"], "beta2": od["beta2"],
            "eps": od["eps"], "step_count": od["step_count"],
            "m": {k: _decode_array(v) for k, v in od["m"].items()},
            "v": {k: _decode_array(v) for k, v in od["v"].items()},
        })
    return state, optimizer, int(doc.get("epoch", 0)), doc.get("rng_state")
