"""reactgen: dyadic facial-reaction distribution learning at desk scale.

The pipeline encodes listener reaction clips as attribute graphs, pushes
them through a reversible edge-graph network to summarize per-behaviour
reaction distributions, trains a predictor against those distributions, and
reverse-decodes sampled latents into new reaction clips. A metric suite
scores appropriateness, diversity and synchrony of generated sets.
"""

from .afrdl import (Adam, CognitivePredictor, PipelineState, TrainConfig,
                    distribution_mse_loss, encode_reaction, init_pipeline,
                    load_checkpoint, pairwise_l1_loss, predict_reactions,
                    save_checkpoint, speaker_features, train, train_step)
from .gmgd import (GaussianMixtureGraphDistribution, from_flat, log_density,
                   sample, summarize, to_flat)
from .graphs import (AttributeGraph, ReactionClip, TemporalBasis,
                     clip_to_graph, graph_to_clip, read_clips, top_k_prune,
                     write_clips)
from .mefl import MeflBlock, init_block, mefl_edges
from .metrics import (EvalPair, MetricReport, dtw_distance, evaluate, fr_corr,
                      fr_dist, fr_div, fr_dvs, fr_var, pcc, synchrony_tlcc)
from .numeric import (ConvergenceError, DomainError, NumericError, Rng,
                      derive_seed, finite_diff_grad, softmax, spectral_norm)
from .regnn import (ContractViolationError, FixedPointError, RegnnLayer,
                    RegnnModel, coefficients, edge_update, empirical_lipschitz,
                    enforce_lipschitz, enforce_model, forward, forward_layer,
                    init_model, reverse, reverse_layer)
from .synth import Behavior, SynthSpec, generate_corpus, read_corpus, write_corpus

__version__ = "0.1.0"
