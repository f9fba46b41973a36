"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest -s tests/test_acceptance.py` to see the lines as they pass.
Everything is seeded; the end-to-end criterion trains the desk-scale defaults
(8 attributes x 64 frames, 8 coefficients, top-3 edges, 4 layers, 4 reactions
per behaviour, 2 latent modes) for 50 epochs.
"""

import time

import numpy as np
import pytest

from reactgen import afrdl, diagnostics, metrics, regnn
from reactgen.afrdl import (TrainConfig, init_pipeline, load_checkpoint,
                            predict_reactions, save_checkpoint, train)
from reactgen.cli import main as cli_main
from reactgen.graphs import AttributeGraph, ReactionClip, top_k_prune
from reactgen.mefl import init_block, mefl_edges
from reactgen.numeric import Rng, derive_seed
from reactgen.synth import SynthSpec, generate_corpus

SEED = 7


def report(number, name, ok, detail):
    print(f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})",
          flush=True)
    assert ok, f"criterion {number} {name}: {detail}"


def random_case(index):
    """Seeded random enforced model plus a matching pruned graph."""
    rng = Rng(derive_seed(SEED, "case", index))
    nodes_count = int(rng.integers(3, 17))
    dim = int(rng.integers(2, 9))
    depth = int(rng.integers(1, 7))
    k = int(rng.integers(1, min(nodes_count - 1, 4) + 1))
    model = regnn.init_model(dim, depth, seed=derive_seed(SEED, "model", index))
    nodes = rng.normal(0.0, 1.0, (nodes_count, dim))
    block = init_block(dim, dim, seed=derive_seed(SEED, "block", index))
    adjacency, edges = top_k_prune(mefl_edges(nodes, block), k)
    return model, AttributeGraph(nodes, edges, adjacency)


@pytest.fixture(scope="module")
def random_cases():
    return [random_case(i) for i in range(100)]


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """Criterion 7's shared artefacts: corpus, untrained/trained metrics."""
    spec = SynthSpec(attributes=8, frames=64, behaviors=6, reactions=4,
                     modes=2, noise=0.03, seed=SEED)
    corpus = generate_corpus(spec)
    config = TrainConfig(learning_rate=0.05, weight_decay=1e-4, epochs=50,
                         decay_epochs=(30,), decay_factor=0.1, sigma=0.6,
                         seed=SEED)
    state = init_pipeline(8, 64, 8, 3, 4, 4, config)

    def corpus_report(sigma, samples, tag):
        pairs = []
        for behavior in corpus:
            rng = Rng(derive_seed(SEED, "eval", tag, behavior.behavior_id))
            generated = predict_reactions(state, behavior.speaker, samples,
                                          rng, sigma=sigma)
            pairs.append(metrics.EvalPair(behavior.behavior_id,
                                          behavior.speaker, generated,
                                          behavior.listeners))
        return metrics.evaluate(pairs).values

    started = time.perf_counter()
    untrained = corpus_report(sigma=0.15, samples=10, tag="before")
    train(state, corpus, config)
    trained = corpus_report(sigma=0.15, samples=10, tag="after")
    paper_sigma = corpus_report(sigma=0.6, samples=10, tag="diversity")
    elapsed = time.perf_counter() - started
    return {"state": state, "corpus": corpus, "untrained": untrained,
            "trained": trained, "paper_sigma": paper_sigma,
            "elapsed": elapsed}


def test_criterion_1_reversibility(random_cases):
    started = time.perf_counter()
    worst = 0.0
    for index, (model, graph) in enumerate(random_cases):
        latent = regnn.forward(model, graph)
        recovered = regnn.reverse(model, latent, tol=1e-8,
                                  seed=derive_seed(SEED, "reverse", index))
        worst = max(worst, float(np.abs(
            recovered.node_features - graph.node_features).max()))
    elapsed = time.perf_counter() - started
    report(1, "reversibility", worst < 1e-5 and elapsed < 60.0,
           f"max error {worst:.2e} over 100 models in {elapsed:.1f}s")


def test_criterion_2_contraction(random_cases):
    worst = 0.0
    layers_checked = 0
    for model, graph in random_cases[:12]:
        for layer in model.layers:
            assert regnn.is_enforced(layer)
            worst = max(worst, regnn.empirical_lipschitz(
                layer, graph.edge_features, graph.nodes, n_pairs=1000,
                seed=SEED))
            layers_checked += 1
    # an optimizer step that skips re-enforcement must fail check
    stale_state = init_pipeline(4, 16, 4, 2, 2, 2, TrainConfig(seed=SEED))
    stale_state.model.layers[0].w_query += 0.05
    stale = diagnostics.check_contraction(stale_state, seed=SEED, n_pairs=10)
    report(2, "contraction", worst < 1.0 and not stale.ok,
           f"max empirical Lipschitz {worst:.3f} over {layers_checked} layers; "
           f"stale layer detected={not stale.ok}")


def test_criterion_3_fixed_point(random_cases):
    worst_iters = 0
    worst_gap = 0.0
    tol = 1e-6
    for index, (model, graph) in enumerate(random_cases):
        latent = regnn.forward(model, graph)
        first, info = regnn.reverse(model, latent, tol=tol, max_iter=100,
                                    seed=derive_seed(SEED, "fp-a", index),
                                    return_info=True)
        second = regnn.reverse(model, latent, tol=tol, max_iter=100,
                               seed=derive_seed(SEED, "fp-b", index))
        worst_iters = max(worst_iters, info["iterations"])
        worst_gap = max(worst_gap, float(np.abs(
            first.node_features - second.node_features).max()))
    report(3, "fixed_point", worst_iters <= 100 and worst_gap < 2.0 * tol,
           f"max iterations {worst_iters}, two-start gap {worst_gap:.2e}")


def test_criterion_4_normalization():
    worst_coeff = worst_edge = worst_row = 0.0
    for i in range(50):
        rng = Rng(derive_seed(SEED, "norm-graph", i))
        nodes_count = int(rng.integers(4, 10))
        dim = int(rng.integers(2, 9))
        nodes = rng.normal(0.0, 1.5, (nodes_count, dim))
        block = init_block(dim, dim, seed=derive_seed(SEED, "norm-block", i))
        full = mefl_edges(nodes, block)
        worst_row = max(worst_row, float(np.abs(full.sum(axis=1) - 1.0).max()))
        k = int(rng.integers(1, nodes_count - 1))
        _, edges = top_k_prune(full, k)
        layer = regnn.enforce_lipschitz(regnn.init_layer(
            dim, Rng(derive_seed(SEED, "norm-layer", i))))
        coeff = regnn.coefficients(nodes, edges, layer)
        sums = {}
        for (_, tgt), value in coeff.items():
            sums[tgt] = sums.get(tgt, 0.0) + value
        worst_coeff = max(worst_coeff,
                          max(abs(s - 1.0) for s in sums.values()))
        updated = regnn.edge_update(nodes, edges, layer)
        vec_sums = {}
        for (_, tgt), vec in updated.items():
            vec_sums[tgt] = vec_sums.get(tgt, 0.0) + vec
        worst_edge = max(worst_edge, max(float(np.abs(v - 1.0).max())
                                         for v in vec_sums.values()))
    ok = worst_coeff <= 1e-12 and worst_edge <= 1e-10 and worst_row <= 1e-10
    report(4, "normalization", ok,
           f"coefficient {worst_coeff:.1e} (<=1e-12), "
           f"edge {worst_edge:.1e} (<=1e-10), "
           f"attention row {worst_row:.1e} (<=1e-10) on 50 graphs")


def test_criterion_5_gradients():
    errors = diagnostics.toy_gradient_errors(seed=SEED)
    worst = max(errors.values())
    report(5, "gradient_correctness", worst < 1e-4,
           "rel err per group: " + ", ".join(
               f"{g}={e:.2e}" for g, e in sorted(errors.items())))


def test_criterion_6_loss_semantics():
    rng = Rng(derive_seed(SEED, "loss"))
    base = rng.normal(0.0, 1.0, (3, 4))
    identical = [base.copy() for _ in range(3)]
    zero_when_identical = afrdl.pairwise_l1_loss(identical) == 0.0
    perturbed = [base.copy() for _ in range(3)]
    perturbed[1][0, 0] += 1e-9
    nonzero_when_different = afrdl.pairwise_l1_loss(perturbed) > 0.0
    grid = rng.normal(0.0, 1.0, (3, 8))
    mse_zero = afrdl.distribution_mse_loss(grid, grid.copy()) == 0.0
    bumped = grid.copy()
    bumped[2, 5] += 1e-9
    mse_nonzero = afrdl.distribution_mse_loss(grid, bumped) > 0.0
    ok = (zero_when_identical and nonzero_when_different
          and mse_zero and mse_nonzero)
    report(6, "loss_semantics", ok,
           f"pairwise zero-iff-identical={zero_when_identical and nonzero_when_different}, "
           f"mse zero-iff-equal={mse_zero and mse_nonzero}")


def test_criterion_7_end_to_end(desk_run):
    before = desk_run["untrained"]["FRDist"]
    after = desk_run["trained"]["FRDist"]
    diversity = desk_run["paper_sigma"]["FRDiv"]
    reduction = 1.0 - after / before
    ok = (reduction >= 0.5 and diversity > 0.0
          and desk_run["elapsed"] < 600.0)
    report(7, "end_to_end_learning", ok,
           f"FRDist {before:.1f} -> {after:.1f} ({reduction:.0%} reduction, "
           f"need >=50%), FRDiv@0.6 {diversity:.3f} (>0), "
           f"runtime {desk_run['elapsed']:.0f}s (<600s)")


def test_criterion_8_metric_sanity():
    clip = diagnostics.seeded_clip(4, 60, derive_seed(SEED, "metric-clip"))
    rng = Rng(derive_seed(SEED, "metric-smooth"))
    t = np.arange(60) / 60.0
    smooth = ReactionClip("smooth", np.clip(np.array(
        [0.5 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t
                            + rng.uniform(0.0, 2 * np.pi))
         for _ in range(4)]), 0.0, 1.0))
    pair = metrics.EvalPair("sanity", clip, [clip], [clip])
    dist_zero = metrics.fr_dist(pair) == 0.0
    pcc_one = metrics.pcc(pair)[0] == pytest.approx(1.0, abs=1e-12)
    delayed = np.concatenate([smooth.values[:, :1].repeat(5, axis=1),
                              smooth.values[:, :-5]], axis=1)
    lag, _ = metrics.synchrony_tlcc(smooth, ReactionClip("lagged", delayed),
                                    window=6)
    div_zero = metrics.fr_div([clip, clip, clip]) == 0.0
    ok = dist_zero and pcc_one and lag == 5.0 and div_zero
    report(8, "metric_sanity", ok,
           f"FRDist(x,{{x}})={metrics.fr_dist(pair)}, PCC(x,x)={metrics.pcc(pair)[0]}, "
           f"TLCC shift-5 lag={lag}, FRDiv identical={metrics.fr_div([clip, clip])}")


def test_criterion_9_determinism(tmp_path):
    config_text = (
        "attributes = 4\nframes = 16\nbehaviors = 2\nreactions = 3\n"
        "modes = 2\nnoise = 0.02\ncoeffs = 4\ntop_k = 2\nlayers = 2\n"
        "att_dim = 4\nhidden_dim = 8\nlearning_rate = 0.02\n"
        "weight_decay = 0.0001\nepochs = 2\ndecay_epochs =\nsigma = 0.6\n"
        f"seed = {SEED}\n")
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(config_text)
    digests = []
    for name in ("one", "two"):
        corpus_dir = tmp_path / name / "corpus"
        run_dir = tmp_path / name / "run"
        assert cli_main(["synth", "--config", str(cfg_path),
                         "--out", str(corpus_dir)]) == 0
        assert cli_main(["train", "--config", str(cfg_path),
                         "--corpus", str(corpus_dir),
                         "--out", str(run_dir), "--no-plots"]) == 0
        corpus_bytes = b"".join(
            path.read_bytes()
            for path in sorted((corpus_dir / "clips").iterdir()))
        corpus_bytes += (corpus_dir / "manifest.json").read_bytes()
        digests.append({
            "corpus": corpus_bytes,
            "log": (run_dir / "loss_log.csv").read_bytes(),
            "ckpt": (run_dir / "checkpoint.json").read_bytes(),
        })
    same_corpus = digests[0]["corpus"] == digests[1]["corpus"]
    same_log = digests[0]["log"] == digests[1]["log"]
    same_ckpt = digests[0]["ckpt"] == digests[1]["ckpt"]
    # checkpoint save -> load -> save is byte-stable
    state, opt, epoch, rng_state = load_checkpoint(tmp_path / "one" / "run"
                                                   / "checkpoint.json")
    resaved = tmp_path / "resaved.json"
    save_checkpoint(resaved, state, opt, epoch=epoch, rng_state=rng_state)
    round_trip = (resaved.read_bytes()
                  == (tmp_path / "one" / "run" / "checkpoint.json").read_bytes())
    ok = same_corpus and same_log and same_ckpt and round_trip
    report(9, "determinism", ok,
           f"corpus={same_corpus}, loss log={same_log}, "
           f"checkpoint={same_ckpt}, save/load/save byte-stable={round_trip}")
