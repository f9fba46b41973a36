"""Invariant suite behind the `check` command.

Every check returns a CheckResult; the CLI turns any failure into exit code
3. The same functions back the test suite so the command and CI agree on
what "healthy" means: round-trip reconstruction, fixed-point budget and
uniqueness, contraction estimates, normalization sums, and the
finite-difference gradient oracle.
"""

from dataclasses import dataclass

import numpy as np

from . import afrdl, mefl, regnn
from .graphs import ReactionClip, clip_to_graph
from .numeric import Rng, derive_seed, finite_diff_grad
from .synth import Behavior


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def seeded_clip(attributes, frames, seed, clip_id="probe"):
    rng = Rng(derive_seed(seed, "probe-clip"))
    return ReactionClip(clip_id, rng.uniform(0.0, 1.0, (attributes, frames)))


def seeded_graphs(state, count, seed=0):
    return [clip_to_graph(seeded_clip(state.attributes, state.basis.frames,
                                      derive_seed(seed, "graph", i)),
                          state.basis, state.encode_block, state.top_k)
            for i in range(count)]


def check_attention_rows(state, count=10, seed=0, tol=1e-10):
    worst = 0.0
    positive = True
    for i in range(count):
        rng = Rng(derive_seed(seed, "attention-nodes", i))
        nodes = rng.normal(0.0, 1.0, (state.attributes, state.coeffs))
        maps = mefl.mefl_edges(nodes, state.encode_block)
        worst = max(worst, float(np.abs(maps.sum(axis=1) - 1.0).max()))
        positive = positive and bool((maps > 0).all())
    ok = worst <= tol and positive
    return CheckResult("attention_row_stochastic", ok,
                       f"max row-sum error {worst:.2e}, positive={positive}")


def check_coefficient_sums(state, count=10, seed=0, tol=1e-12):
    worst = 0.0
    for i, graph in enumerate(seeded_graphs(state, count, seed)):
        rng = Rng(derive_seed(seed, "coefficient-nodes", i))
        nodes = rng.normal(0.0, 1.0, graph.node_features.shape)
        for layer in state.model.layers:
            coeff = regnn.coefficients(nodes, graph.edge_features, layer)
            per_target = {}
            for (_, tgt), value in coeff.items():
                per_target[tgt] = per_target.get(tgt, 0.0) + value
            for total in per_target.values():
                worst = max(worst, abs(total - 1.0))
    return CheckResult("coefficient_sums", worst <= tol,
                       f"max neighbourhood-sum error {worst:.2e}")


def check_edge_update_sums(state, count=10, seed=0, tol=1e-10):
    worst = 0.0
    for i, graph in enumerate(seeded_graphs(state, count, seed)):
        rng = Rng(derive_seed(seed, "edge-update-nodes", i))
        nodes = rng.normal(0.0, 1.0, graph.node_features.shape)
        for layer in state.model.layers:
            updated = regnn.edge_update(nodes, graph.edge_features, layer)
            sums = {}
            for (_, tgt), vec in updated.items():
                sums[tgt] = sums.get(tgt, 0.0) + vec
            for total in sums.values():
                worst = max(worst, float(np.abs(total - 1.0).max()))
    return CheckResult("edge_update_sums", worst <= tol,
                       f"max incoming-sum error {worst:.2e}")


def check_round_trip(state, count=10, seed=0, tol=1e-8, bound=1e-5):
    worst = 0.0
    for graph in seeded_graphs(state, count, seed):
        latent = regnn.forward(state.model, graph)
        recovered = regnn.reverse(state.model, latent, tol=tol,
                                  seed=derive_seed(seed, "round-trip"))
        worst = max(worst, float(np.abs(
            recovered.node_features - graph.node_features).max()))
    return CheckResult("round_trip", worst < bound,
                       f"max node recovery error {worst:.2e}")


def check_fixed_point(state, count=5, seed=0, tol=1e-6, budget=100):
    worst_iters = 0
    worst_gap = 0.0
    for graph in seeded_graphs(state, count, seed):
        latent = regnn.forward(state.model, graph)
        first, info = regnn.reverse(state.model, latent, tol=tol,
                                    max_iter=budget,
                                    seed=derive_seed(seed, "start-a"),
                                    return_info=True)
        second = regnn.reverse(state.model, latent, tol=tol, max_iter=budget,
                               seed=derive_seed(seed, "start-b"))
        worst_iters = max(worst_iters, info["iterations"])
        worst_gap = max(worst_gap, float(np.abs(
            first.node_features - second.node_features).max()))
    ok = worst_iters <= budget and worst_gap < 2.0 * tol
    return CheckResult(
        "fixed_point", ok,
        f"max iterations {worst_iters} (budget {budget}), "
        f"two-start gap {worst_gap:.2e} (bound {2.0 * tol:.0e})")


def check_contraction(state, seed=0, n_pairs=1000):
    graph = seeded_graphs(state, 1, seed)[0]
    worst = 0.0
    for layer in state.model.layers:
        if not regnn.is_enforced(layer):
            return CheckResult("contraction", False,
                               "a layer is stale or was never enforced")
        worst = max(worst, regnn.empirical_lipschitz(
            layer, graph.edge_features, graph.nodes,
            n_pairs=n_pairs, seed=seed))
    return CheckResult("contraction", worst < 1.0,
                       f"max empirical Lipschitz estimate {worst:.4f}")


def toy_gradient_errors(seed=0, h=1e-5):
    """Relative backprop-vs-finite-difference error per parameter group on
    the smallest end-to-end shape (2 nodes, 2 dims, 2 reactions, 1 layer).

    A group whose true gradient is structurally zero (with one in-neighbour
    per node, the attention block cancels out of the loss) measures as pure
    central-difference roundoff; the denominator is therefore floored at the
    method's own noise level, 10 * sqrt(n) * eps * |f| / h, so "zero matches
    zero" scores as agreement instead of noise/noise.
    """
    cfg = afrdl.TrainConfig(seed=seed)
    state = afrdl.init_pipeline(attributes=2, frames=8, coeffs=2, top_k=1,
                                n_layers=1, reactions=2, config=cfg,
                                att_dim=2, hidden_dim=3,
                                seed=derive_seed(seed, "toy-state"))
    behavior = Behavior(
        "toy", seeded_clip(2, 8, derive_seed(seed, "toy-speaker")),
        [seeded_clip(2, 8, derive_seed(seed, "toy-listener", m))
         for m in range(2)])
    batch = [behavior]
    params = afrdl.trainable_params(state)
    vector, layout = afrdl.pack_params(params)
    base = vector.copy()

    def loss_at(vec):
        probe = afrdl.unpack_params(vec, layout)
        for name, arr in params.items():
            arr[...] = probe[name]
        align, dist = afrdl.loss_values(state, batch, cfg)
        return cfg.align_weight * align + cfg.dist_weight * dist

    fd = finite_diff_grad(loss_at, base, h=h)
    loss_value = loss_at(base)  # also restores parameters
    from . import autodiff as ad
    tensors = {name: ad.Tensor(a) for name, a in params.items()}
    align_t, dist_t = afrdl.batch_losses(tensors, state, batch, cfg)
    total = cfg.align_weight * align_t + cfg.dist_weight * dist_t
    total.backward()
    grads = np.concatenate(
        [(tensors[name].grad if tensors[name].grad is not None
          else np.zeros(size)).reshape(-1)
         for name, _, size in layout])
    errors = {}
    offset = 0
    slices = {}
    for name, _, size in layout:
        slices[name] = slice(offset, offset + size)
        offset += size
    eps = np.finfo(np.float64).eps
    for group, names in afrdl.param_groups(params).items():
        fd_g = np.concatenate([fd[slices[n]] for n in names])
        bp_g = np.concatenate([grads[slices[n]] for n in names])
        noise = 10.0 * np.sqrt(fd_g.size) * eps * abs(loss_value) / h
        scale = max(float(np.linalg.norm(fd_g)), noise, 1e-12)
        errors[group] = float(np.linalg.norm(bp_g - fd_g)) / scale
    return errors


def check_gradients(seed=0, tol=1e-4):
    errors = toy_gradient_errors(seed=seed)
    worst = max(errors.values())
    detail = ", ".join(f"{g}={e:.2e}" for g, e in sorted(errors.items()))
    return CheckResult("gradient_oracle", worst < tol, detail)


def run_checks(state, seed=0, graphs=10, pairs=1000):
    """The full invariant suite on one pipeline state.

    A check that raises (stale enforcement, fixed-point failure) is reported
    as a failed result so the remaining checks still run.
    """
    planned = [
        ("attention_row_stochastic", lambda: check_attention_rows(state, seed=seed)),
        ("coefficient_sums", lambda: check_coefficient_sums(state, seed=seed)),
        ("edge_update_sums", lambda: check_edge_update_sums(state, seed=seed)),
        ("round_trip", lambda: check_round_trip(state, count=graphs, seed=seed)),
        ("fixed_point", lambda: check_fixed_point(state, seed=seed)),
        ("contraction", lambda: check_contraction(state, seed=seed, n_pairs=pairs)),
        ("gradient_oracle", lambda: check_gradients(seed=seed)),
    ]
    results = []
    for name, runner in planned:
        try:
            results.append(runner())
        except (regnn.ContractViolationError, regnn.FixedPointError) as err:
            results.append(CheckResult(name, False, str(err)))
    return results
