"""fedbreg: deterministic personalized federated learning on a Bregman proximal core.

Layering, bottom to top:

    param_space   flat float64 vectors, named deterministic RNG streams
    bregman       generator families, divergence, prox, envelope
    backend       numba/numpy gradient kernel selection (FEDBREG_BACKEND)
    models        linear softmax and one-hidden-layer classifiers
    data          IDX loading, synthetic blobs, non-iid partitioners
    algorithms    local update rules (prox family + baselines)
    federation    sampling, damped aggregation, the round loop
    metrics       per-client / global tests, per-class loss deviation
    config, cli   experiment schema and the run/sweep/validate commands
"""

__version__ = "0.1.0"

from .algorithms import STRATEGIES, LocalTrainer, TrainerConfig
from .bregman import ConvexGenerator, PriorSpec, bregman_prox, divergence
from .config import ExperimentConfig, parse_config, serialize_config
from .data import Dataset, Partition, load_idx, partition_dirichlet, partition_label_skew, synth_generate
from .federation import ClientState, RoundConfig, ServerState, run_round, run_training
from .metrics import EvalReport, global_test, local_test, loss_deviation
from .models import Batch, ModelSpec, forward_loss, gradient, predict
from .param_space import RngStream, linear_combine, norm_sq, seeded_init

__all__ = [
    "Batch",
    "ClientState",
    "ConvexGenerator",
    "Dataset",
    "EvalReport",
    "ExperimentConfig",
    "LocalTrainer",
    "ModelSpec",
    "Partition",
    "PriorSpec",
    "RngStream",
    "RoundConfig",
    "STRATEGIES",
    "ServerState",
    "TrainerConfig",
    "bregman_prox",
    "divergence",
    "forward_loss",
    "global_test",
    "gradient",
    "linear_combine",
    "load_idx",
    "local_test",
    "loss_deviation",
    "norm_sq",
    "parse_config",
    "partition_dirichlet",
    "partition_label_skew",
    "predict",
    "run_round",
    "run_training",
    "seeded_init",
    "serialize_config",
    "synth_generate",
]
