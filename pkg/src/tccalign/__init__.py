"""Temporal cycle-consistency learning for per-frame feature sequences.

Train an embedder so that videos (as sequences of per-frame feature vectors)
of the same action align by nearest-neighbor matching, then evaluate and
apply the embeddings: phase classification, phase progression, Kendall's
Tau, NN/DTW alignment, anomaly scoring and label transfer.
"""

from .diff import (Tape, Tensor, ShapeError, ContractError, backward,
                   grad_check, pairwise_sq_dist, softmax)
from .embedder import (EmbedderConfig, EmbedderParams, init_params,
                       embed_sequence, embed_array, save_checkpoint,
                       load_checkpoint)
from .losses import (TccConfig, soft_nearest_neighbor, cycle_back_classification,
                     cycle_back_regression, cycle_back_regression_mse,
                     tcc_batch_loss)
from .baselines import BaselineConfig, tcn_npairs_loss, sal_loss, combined_loss
from .metrics import (cycle_consistency_fraction, kendalls_tau,
                      phase_progression_targets, r_squared,
                      fit_linear_classifier, classify_accuracy,
                      fit_linear_regressor)
from .align import (AlignmentResult, nn_align, dtw_align, similarity_matrix,
                    anomaly_score, transfer_labels)
from .data import (FeatureSequence, PhaseAnnotation, SyntheticConfig,
                   generate_synthetic, load_dataset, save_dataset,
                   jitter_augment, split_dataset)
from .train import TrainConfig, adam_step, train, evaluate

__version__ = "0.1.0"
