"""Differentiable cycle-consistency losses over pairs of embedding sequences.

Given embeddings U (length n) and V (length m) of two executions of the same
action, each frame u_i is sent to its soft nearest neighbor in V and cycled
back to U.  Three penalties make "cycling back to i" a training signal:

* classification: cross-entropy of the cycle-back softmax against index i;
* regression: fit the cycle-back distribution with its mean and variance and
  penalize (i - mu)^2 / var + lambda * log(sigma), so near misses cost less
  and confident (low-variance) predictions are rewarded;
* regression_mse: the ablated form (i - mu)^2 that ignores the variance.

All losses are exact functions of squared Euclidean distances, so they are
invariant under a common rigid motion of both embedding sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diff
from .diff import ContractError, ShapeError, Tensor
from .embedder import BoundEmbedder, embed_sequence

VARIANTS = ("classification", "regression", "regression_mse")


@dataclass(frozen=True)
class TccConfig:
    variant: str = "regression"
    variance_weight: float = 0.001  # lambda on the log-sigma term
    variance_floor: float = 1e-6
    frames_per_seq: int = 20

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; use one of {VARIANTS}")
        if self.variance_weight < 0:
            raise ContractError("variance_weight must be >= 0")
        if self.variance_floor <= 0:
            raise ContractError("variance_floor must be > 0")
        if self.frames_per_seq < 1:
            raise ContractError("frames_per_seq must be >= 1")


def _as_matrix(t, name: str) -> Tensor:
    t = diff.constant(t)
    if t.data.ndim != 2 or t.shape[0] < 1:
        raise ShapeError(f"{name} must be a nonempty n-by-d matrix, got {t.shape}")
    return t


def soft_nearest_neighbor(u, v_seq) -> tuple[Tensor, Tensor]:
    """Softmax-weighted neighbor of vector u among the rows of v_seq.

    Returns (v_tilde, alpha): alpha[j] is softmax_j(-||u - v_j||^2) and
    v_tilde = sum_j alpha[j] v_j.  Both are differentiable.
    """
    u = diff.constant(u)
    if u.data.ndim != 1:
        raise ShapeError(f"u must be a vector, got shape {u.shape}")
    v_seq = _as_matrix(v_seq, "v_seq")
    d = diff.pairwise_sq_dist(diff.reshape(u, (1, u.shape[0])), v_seq)
    alpha = diff.softmax(diff.reshape(diff.neg(d), (v_seq.shape[0],)))
    v_tilde = diff.weighted_sum(v_seq, alpha)
    return v_tilde, alpha


def _cycle_back_logits(u_seq: Tensor, v_seq: Tensor, i: int) -> Tensor:
    """Logits -||v_tilde - u_k||^2 after cycling u_i through V."""
    n = u_seq.shape[0]
    if not 0 <= i < n:
        raise ContractError(f"frame index {i} out of range for sequence length {n}")
    u_i = diff.reshape(diff.gather_rows(u_seq, [i]), (u_seq.shape[1],))
    v_tilde, _ = soft_nearest_neighbor(u_i, v_seq)
    back = diff.pairwise_sq_dist(
        diff.reshape(v_tilde, (1, v_tilde.shape[0])), u_seq)
    return diff.reshape(diff.neg(back), (n,))


def cycle_back_classification(u_seq, v_seq, i: int) -> Tensor:
    """Cross-entropy of the cycle-back softmax against the true index i.

    Logits for "which frame did we land on" are the negative squared
    distances from the soft neighbor back to each u_k; the cross-entropy
    -log softmax(x)[i] is evaluated as logsumexp(x) - x_i so an underflowed
    softmax cannot produce log(0).
    """
    u_seq = _as_matrix(u_seq, "u_seq")
    v_seq = _as_matrix(v_seq, "v_seq")
    logits = _cycle_back_logits(u_seq, v_seq, i)
    return diff.sub(diff.logsumexp(logits), diff.pick(logits, i))


def _moments(beta: Tensor) -> tuple[Tensor, Tensor]:
    n = beta.shape[0]
    k = diff.constant(np.arange(n, dtype=np.float64))
    mu = diff.sum_all(diff.mul(beta, k))
    dev = diff.sub(k, mu)
    var = diff.sum_all(diff.mul(beta, diff.mul(dev, dev)))
    return mu, var


def cycle_back_regression(u_seq, v_seq, i: int, variance_weight: float = 0.001,
                          variance_floor: float = 1e-6):
    """Variance-aware cycle-back penalty.

    beta is the cycle-back distribution over U's frame positions; with
    mu = E[k] and var = E[(k - mu)^2] (floored for one-hot beta), the loss is
    (i - mu)^2 / var + lambda * log(sigma).  Returns (loss, mu, var).
    """
    u_seq = _as_matrix(u_seq, "u_seq")
    v_seq = _as_matrix(v_seq, "v_seq")
    beta = diff.softmax(_cycle_back_logits(u_seq, v_seq, i))
    mu, var_raw = _moments(beta)
    var = diff.clamp_min(var_raw, variance_floor)
    err = diff.sub(diff.constant(float(i)), mu)
    # log(sigma) = 0.5 * log(var)
    loss = diff.add(diff.div(diff.mul(err, err), var),
                    diff.mul(diff.constant(0.5 * variance_weight), diff.log(var)))
    return loss, mu, var


def cycle_back_regression_mse(u_seq, v_seq, i: int) -> Tensor:
    """Ablation of the regression loss: (i - mu)^2 alone, variance ignored."""
    u_seq = _as_matrix(u_seq, "u_seq")
    v_seq = _as_matrix(v_seq, "v_seq")
    beta = diff.softmax(_cycle_back_logits(u_seq, v_seq, i))
    mu, _ = _moments(beta)
    err = diff.sub(diff.constant(float(i)), mu)
    return diff.mul(err, err)


def pair_loss(u_seq, v_seq, config: TccConfig) -> Tensor:
    """Mean per-frame cycle loss over every row of U, cycled through V.

    Vectorized equivalent of averaging the per-frame functions above for
    i = 0..n-1 (positions are row indices of u_seq).
    """
    u_seq = _as_matrix(u_seq, "u_seq")
    v_seq = _as_matrix(v_seq, "v_seq")
    n = u_seq.shape[0]
    alpha = diff.softmax_rows(diff.neg(diff.pairwise_sq_dist(u_seq, v_seq)))
    v_tilde = diff.matmul(alpha, v_seq)  # row i: soft neighbor of u_i
    back = diff.pairwise_sq_dist(v_tilde, u_seq)

    if config.variant == "classification":
        # Row-wise -log softmax of -back at the diagonal, via logsumexp with
        # a detached per-row shift (exact value and gradient).
        logits = diff.neg(back)
        shift = logits.data.max(axis=1, keepdims=True)
        shifted = diff.sub(logits, diff.constant(np.broadcast_to(shift, logits.shape).copy()))
        lse = diff.add(diff.log(diff.row_sums(diff.exp(shifted))),
                       diff.constant(shift[:, 0]))
        diag = diff.row_sums(diff.mul(logits, diff.constant(np.eye(n))))
        return diff.mean_all(diff.sub(lse, diag))

    beta = diff.softmax_rows(diff.neg(back))
    k = np.arange(n, dtype=np.float64)
    mu = diff.reshape(diff.matmul(beta, diff.constant(k[:, None])), (n,))
    err = diff.sub(diff.constant(k), mu)  # target position of row i is i
    if config.variant == "regression_mse":
        return diff.mean_all(diff.mul(err, err))
    ex2 = diff.reshape(diff.matmul(beta, diff.constant((k * k)[:, None])), (n,))
    var = diff.clamp_min(diff.sub(ex2, diff.mul(mu, mu)), config.variance_floor)
    loss_vec = diff.add(diff.div(diff.mul(err, err), var),
                        diff.mul(diff.constant(0.5 * config.variance_weight),
                                 diff.log(var)))
    return diff.mean_all(loss_vec)


def sample_frame_positions(n_frames: int, frames_per_seq: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement, sorted; all frames if too short."""
    if n_frames <= frames_per_seq:
        return np.arange(n_frames)
    return np.sort(rng.choice(n_frames, size=frames_per_seq, replace=False))


def tcc_batch_loss(params, batch, config: TccConfig, seed: int) -> Tensor:
    """Cycle-consistency loss over all ordered pairs in a batch of sequences.

    Each sequence is embedded once; for every ordered pair (A, B) with
    A != B, `frames_per_seq` frames of A are sampled (without replacement,
    sorted) and cycled A -> B -> A.  The result is the mean over all
    (pair, frame) terms and is deterministic given the seed.
    """
    if len(batch) < 2:
        raise ContractError("tcc_batch_loss needs at least two sequences")
    rng = np.random.default_rng(seed)
    embeddings = [embed_sequence(params, seq) for seq in batch]
    terms = []
    weights = []
    for a in range(len(batch)):
        for b in range(len(batch)):
            if a == b:
                continue
            e_a, e_b = embeddings[a], embeddings[b]
            pos = sample_frame_positions(e_a.shape[0], config.frames_per_seq, rng)
            u = diff.gather_rows(e_a, pos)
            terms.append(pair_loss(u, e_b, config))
            weights.append(len(pos))
    total = sum(weights)
    acc = None
    for t, w in zip(terms, weights):
        scaled = diff.mul(t, diff.constant(w / total))
        acc = scaled if acc is None else diff.add(acc, scaled)
    return acc
