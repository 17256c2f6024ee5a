"""Comparison self-supervised losses: frame-order classification and n-pairs.

Both operate on a single sequence at a time (unlike the cycle losses, which
couple two sequences) and share the embedder, so they can also be added to a
cycle loss with a weight to form combined objectives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diff
from .diff import ContractError, Tensor
from .embedder import MlpParams, embed_sequence, init_mlp, mlp_forward


@dataclass(frozen=True)
class BaselineConfig:
    tcn_window: int = 5
    tcn_anchors: int = 4  # anchors per sequence; not pinned by the method
    sal_fraction_shuffled: float = 0.75
    sal_head_sizes: tuple[int, ...] = (128, 64)
    sal_triplets: int = 4
    combine_weight: float = 0.5

    def __post_init__(self):
        if self.tcn_window < 1:
            raise ContractError("tcn_window must be >= 1")
        if not 0.0 < self.sal_fraction_shuffled < 1.0:
            raise ContractError("sal_fraction_shuffled must lie in (0, 1)")
        object.__setattr__(self, "sal_head_sizes",
                           tuple(int(h) for h in self.sal_head_sizes))


def tcn_npairs_loss(params, seq, n_anchors: int, window: int, seed: int) -> Tensor:
    """n-pairs contrastive loss with positives drawn near each anchor.

    Samples `n_anchors` distinct anchor frames; each anchor's positive is a
    different frame within +-window of it.  Logits are negative squared
    embedding distances between every anchor and every positive, and each
    anchor must classify its own positive against all the others.
    """
    frames = getattr(seq, "frames", seq)
    n = np.asarray(frames).shape[0]
    if n_anchors < 1:
        raise ContractError("n_anchors must be >= 1")
    if n < 2 * n_anchors:
        raise ContractError(
            f"sequence of length {n} too short for {n_anchors} anchor/positive pairs")
    rng = np.random.default_rng(seed)
    anchors = np.sort(rng.choice(n, size=n_anchors, replace=False))
    positives = np.empty(n_anchors, dtype=np.intp)
    for i, a in enumerate(anchors):
        lo, hi = max(0, a - window), min(n - 1, a + window)
        cands = np.array([j for j in range(lo, hi + 1) if j != a])
        positives[i] = rng.choice(cands)

    emb = embed_sequence(params, frames)
    e_a = diff.gather_rows(emb, anchors)
    e_p = diff.gather_rows(emb, positives)
    logits = diff.neg(diff.pairwise_sq_dist(e_a, e_p))
    # Mean over anchors of -log softmax(logits[i, :])[i].
    shift = logits.data.max(axis=1, keepdims=True)
    shifted = diff.sub(logits, diff.constant(np.broadcast_to(shift, logits.shape).copy()))
    lse = diff.add(diff.log(diff.row_sums(diff.exp(shifted))),
                   diff.constant(shift[:, 0]))
    diag = diff.row_sums(diff.mul(logits, diff.constant(np.eye(n_anchors))))
    return diff.mean_all(diff.sub(lse, diag))


def init_sal_head(embedding_dim: int, head_sizes, seed: int) -> MlpParams:
    """Binary order-vs-shuffled classifier over three concatenated embeddings."""
    sizes = (3 * embedding_dim, *tuple(head_sizes), 1)
    return init_mlp(sizes, np.random.default_rng(seed))


def _non_identity_permutation(rng: np.random.Generator) -> np.ndarray:
    perms = [(0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    return np.array(perms[rng.integers(len(perms))])


def sal_loss(params, head_params, seq, seed: int, n_triplets: int = 4,
             fraction_shuffled: float = 0.75) -> Tensor:
    """Shuffle-detection loss: was a frame triplet presented in order?

    Triplets a < b < c are sampled; with probability `fraction_shuffled` the
    three embeddings are concatenated in a non-identity permutation and
    labeled shuffled, otherwise in order.  A small MLP head scores the
    concatenation and binary cross-entropy flows into both head and encoder.
    """
    frames = getattr(seq, "frames", seq)
    n = np.asarray(frames).shape[0]
    if n < 3:
        raise ContractError("sal_loss needs a sequence of at least 3 frames")
    rng = np.random.default_rng(seed)
    emb = embed_sequence(params, frames)
    # MlpParams and BoundMlp expose the same weights/biases surface.
    head_w, head_b = head_params.weights, head_params.biases

    indices = []
    labels = []
    for _ in range(n_triplets):
        trip = np.sort(rng.choice(n, size=3, replace=False))
        shuffled = rng.random() < fraction_shuffled
        if shuffled:
            trip = trip[_non_identity_permutation(rng)]
        indices.extend(trip.tolist())
        labels.append(1.0 if shuffled else 0.0)

    x = diff.reshape(diff.gather_rows(emb, indices),
                     (n_triplets, 3 * emb.shape[1]))
    logit_col = mlp_forward(head_w, head_b, x)
    z = diff.reshape(logit_col, (n_triplets,))
    y = np.array(labels)
    # BCE with logits: y*softplus(-z) + (1-y)*softplus(z), stable both tails.
    loss_vec = diff.add(diff.mul(diff.constant(y), diff.softplus(diff.neg(z))),
                        diff.mul(diff.constant(1.0 - y), diff.softplus(z)))
    return diff.mean_all(loss_vec)


def combined_loss(loss_a, loss_b, weight: float) -> Tensor:
    """loss_a + weight * loss_b; gradients pass through both operands."""
    if weight < 0:
        raise ContractError("combination weight must be >= 0")
    return diff.add(diff.constant(loss_a) if not isinstance(loss_a, Tensor) else loss_a,
                    diff.mul(diff.constant(float(weight)),
                             loss_b if isinstance(loss_b, Tensor) else diff.constant(loss_b)))
