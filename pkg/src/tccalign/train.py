"""Training loop (Adam, checkpointing, resumable state) and evaluation.

Every source of randomness in a step is derived from (seed, step), so a run
is a pure function of its config and data: same seed gives bitwise-identical
checkpoints, and resuming from saved state reproduces the uninterrupted run
exactly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diff
from .baselines import BaselineConfig, init_sal_head, sal_loss, tcn_npairs_loss, combined_loss
from .data import FeatureSequence, jitter_augment, split_dataset
from .diff import ContractError, Tape, backward
from .embedder import (EmbedderConfig, EmbedderParams, MlpParams, init_mlp,
                       init_params, embed_array, save_checkpoint,
                       load_checkpoint, BoundMlp)
from . import fileio
from .losses import TccConfig, tcc_batch_loss
from .metrics import (classify_accuracy, cycle_consistency_fraction,
                      fit_linear_classifier, fit_linear_regressor,
                      kendalls_tau, phase_progression_targets, r_squared)

STATE_MAGIC = b"TCCS"
STATE_VERSION = 1

LOSS_NAMES = ("tcc_classification", "tcc_regression", "tcc_mse",
              "tcn", "sal", "tcc+tcn", "tcc+sal")
_TCC_VARIANT = {"tcc_classification": "classification",
                "tcc_regression": "regression",
                "tcc_mse": "regression_mse"}


class MissingAnnotationError(ValueError):
    """A label-dependent metric was requested on unannotated sequences."""


@dataclass(frozen=True)
class TrainConfig:
    embedder: EmbedderConfig
    loss: str = "tcc_regression"
    batch_size: int = 4
    frames_per_seq: int = 20
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    steps: int = 1000
    seed: int = 0
    combine_weight: float = 0.5
    augment_std: float = 0.05
    checkpoint_every: int = 500
    tcc: TccConfig = field(default_factory=TccConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ContractError(f"unknown loss {self.loss!r}; use one of {LOSS_NAMES}")
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise ContractError("learning_rate must be >= 0")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2")

    @property
    def needs_sal_head(self) -> bool:
        return self.loss in ("sal", "tcc+sal")

    def tcc_config(self) -> TccConfig:
        variant = _TCC_VARIANT.get(self.loss, "regression")
        return replace(self.tcc, variant=variant,
                       frames_per_seq=self.frames_per_seq)


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float, weight_decay: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One Adam update with bias correction; weight decay is decoupled
    (params shrink by lr * weight_decay before the moment update)."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractError("params, grads and optimizer state shapes differ")
    if t < 1:
        raise ContractError("step counter t starts at 1")
    p = params * (1.0 - lr * weight_decay)
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p, AdamState(m=m, v=v)


# ---------------------------------------------------------------------------
# Resumable training state
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    step: int  # completed steps
    embedder_config: EmbedderConfig
    head_sizes: tuple[int, ...]  # () when the loss has no classifier head
    params: np.ndarray  # joint flat vector: embedder then head
    adam: AdamState


def save_train_state(path, state: TrainState) -> None:
    cfg = state.embedder_config
    with open(path, "wb") as f:
        f.write(STATE_MAGIC)
        fileio.write_u32(f, STATE_VERSION)
        fileio.write_u32(f, state.step)
        fileio.write_u32(f, cfg.input_dim)
        fileio.write_u32(f, cfg.context_frames)
        fileio.write_u32(f, cfg.context_stride)
        fileio.write_u32(f, cfg.embedding_dim)
        fileio.write_u32(f, len(cfg.hidden_sizes))
        for h in cfg.hidden_sizes:
            fileio.write_u32(f, h)
        fileio.write_u32(f, len(state.head_sizes))
        for h in state.head_sizes:
            fileio.write_u32(f, h)
        fileio.write_u64(f, state.params.size)
        fileio.write_f64_array(f, state.params)
        fileio.write_f64_array(f, state.adam.m)
        fileio.write_f64_array(f, state.adam.v)


def load_train_state(path) -> TrainState:
    with open(path, "rb") as f:
        fileio.expect_magic(f, STATE_MAGIC, path)
        fileio.expect_version(f, STATE_VERSION, path)
        step = fileio.read_u32(f)
        input_dim = fileio.read_u32(f)
        context_frames = fileio.read_u32(f)
        context_stride = fileio.read_u32(f)
        embedding_dim = fileio.read_u32(f)
        n_hidden = fileio.read_u32(f)
        hidden = tuple(fileio.read_u32(f) for _ in range(n_hidden))
        n_head = fileio.read_u32(f)
        head_sizes = tuple(fileio.read_u32(f) for _ in range(n_head))
        count = fileio.read_u64(f)
        params = fileio.read_f64_array(f, count, "parameters")
        m = fileio.read_f64_array(f, count, "adam m")
        v = fileio.read_f64_array(f, count, "adam v")
        fileio.expect_eof(f, path)
    cfg = EmbedderConfig(input_dim=input_dim, context_frames=context_frames,
                         context_stride=context_stride, hidden_sizes=hidden,
                         embedding_dim=embedding_dim)
    return TrainState(step=step, embedder_config=cfg, head_sizes=head_sizes,
                      params=params, adam=AdamState(m=m, v=v))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: EmbedderParams
    head: MlpParams | None
    losses: list[float]
    state: TrainState


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng((seed, step))


def _batch_loss(config: TrainConfig, bound, head_bound, batch,
                rng: np.random.Generator):
    def seeds(k):
        return [int(s) for s in rng.integers(0, 2 ** 63, size=k)]

    def tcc():
        return tcc_batch_loss(bound, batch, config.tcc_config(), seeds(1)[0])

    def tcn_mean():
        per = [tcn_npairs_loss(bound, seq, config.baseline.tcn_anchors,
                               config.baseline.tcn_window, s)
               for seq, s in zip(batch, seeds(len(batch)))]
        return diff.mean_all(_stack_scalars(per))

    def sal_mean():
        per = [sal_loss(bound, head_bound, seq, s,
                        n_triplets=config.baseline.sal_triplets,
                        fraction_shuffled=config.baseline.sal_fraction_shuffled)
               for seq, s in zip(batch, seeds(len(batch)))]
        return diff.mean_all(_stack_scalars(per))

    if config.loss in _TCC_VARIANT:
        return tcc()
    if config.loss == "tcn":
        return tcn_mean()
    if config.loss == "sal":
        return sal_mean()
    if config.loss == "tcc+tcn":
        return combined_loss(tcc(), tcn_mean(), config.combine_weight)
    return combined_loss(tcc(), sal_mean(), config.combine_weight)


def _stack_scalars(scalars):
    acc = None
    for s in scalars:
        acc = s if acc is None else diff.add(acc, s)
    return diff.mul(acc, diff.constant(1.0 / len(scalars)))


def train(config: TrainConfig, dataset, out_prefix=None, resume_from=None,
          split_fraction: float = 0.8, split_seed: int = 0) -> TrainResult:
    """Optimize the embedder on the training split of `dataset`.

    Deterministic given config.seed: batch selection, frame sampling and
    augmentation noise are all derived from (seed, step).  When `out_prefix`
    is set, writes <prefix> (embedder checkpoint), <prefix>.state (resumable
    optimizer state, refreshed every checkpoint_every steps), <prefix>.log
    (step/loss/wallclock, flushed per step), <prefix>.losses.txt (the
    deterministic loss log) and <prefix>.summary.json.
    """
    train_seqs, _ = split_dataset(dataset, split_fraction, split_seed)
    if len(train_seqs) < config.batch_size:
        raise ContractError(
            f"need at least batch_size={config.batch_size} training sequences, "
            f"got {len(train_seqs)}")

    head_sizes: tuple[int, ...] = ()
    if config.needs_sal_head:
        head_template = init_sal_head(config.embedder.embedding_dim,
                                      config.baseline.sal_head_sizes,
                                      seed=config.seed + 1)
        sizes = [w.shape[0] for w in head_template.weights]
        head_sizes = tuple(sizes + [head_template.weights[-1].shape[1]])

    if resume_from is not None:
        state = (resume_from if isinstance(resume_from, TrainState)
                 else load_train_state(resume_from))
        if state.embedder_config != config.embedder:
            raise ContractError("resume state was produced with a different embedder config")
        if state.head_sizes != head_sizes:
            raise ContractError("resume state head does not match the configured loss")
        start_step = state.step
        joint = state.params.copy()
        adam = AdamState(m=state.adam.m.copy(), v=state.adam.v.copy())
    else:
        params0 = init_params(config.embedder, config.seed)
        if head_sizes:
            joint = np.concatenate([params0.flat(), head_template.flat()])
        else:
            joint = params0.flat()
        adam = AdamState.zeros(joint.size)
        start_step = 0

    params = init_params(config.embedder, config.seed)
    n_emb = params.num_params
    head = MlpParams(*_empty_mlp(head_sizes)) if head_sizes else None

    def materialize(flat):
        params.load_flat(flat[:n_emb])
        if head is not None:
            head.load_flat(flat[n_emb:])

    materialize(joint)

    log_f = None
    if out_prefix is not None:
        out_prefix = Path(out_prefix)
        out_prefix.parent.mkdir(parents=True, exist_ok=True)
        log_f = open(f"{out_prefix}.log", "a" if resume_from is not None else "w")

    losses: list[float] = []
    t_start = time.perf_counter()
    try:
        for step in range(start_step, config.steps):
            rng = _step_rng(config.seed, step)
            idx = rng.choice(len(train_seqs), size=config.batch_size, replace=False)
            batch = [train_seqs[int(i)] for i in idx]
            if config.augment_std > 0:
                jseeds = rng.integers(0, 2 ** 63, size=len(batch))
                batch = [jitter_augment(seq, config.augment_std, int(s))
                         for seq, s in zip(batch, jseeds)]

            tape = Tape()
            bound = params.bind(tape)
            head_bound = BoundMlp(head, tape) if head is not None else None
            loss = _batch_loss(config, bound, head_bound, batch, rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise ContractError(f"non-finite loss at step {step}")
            grads = backward(tape, loss)
            flat_grad = bound.flat_grad(grads)
            if head_bound is not None:
                flat_grad = np.concatenate([flat_grad, head_bound.flat_grad(grads)])

            joint, adam = adam_step(joint, flat_grad, adam, config.learning_rate,
                                    config.weight_decay, t=step + 1)
            materialize(joint)
            losses.append(value)

            if log_f is not None:
                ms = (time.perf_counter() - t_start) * 1000.0
                log_f.write(f"{step} {value!r} {ms:.3f}\n")
                log_f.flush()
            done = step + 1
            if out_prefix is not None and config.checkpoint_every > 0 \
                    and done % config.checkpoint_every == 0 and done < config.steps:
                _write_artifacts(out_prefix, config, params, head_sizes, joint,
                                 adam, done, losses, t_start, final=False)
    finally:
        if log_f is not None:
            log_f.close()

    state = TrainState(step=config.steps, embedder_config=config.embedder,
                       head_sizes=head_sizes, params=joint.copy(), adam=adam)
    if out_prefix is not None:
        _write_artifacts(out_prefix, config, params, head_sizes, joint, adam,
                         config.steps, losses, t_start, final=True)
    return TrainResult(params=params, head=head, losses=losses, state=state)


def _empty_mlp(sizes):
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return weights, biases


def _write_artifacts(out_prefix, config, params, head_sizes, joint, adam,
                     step, losses, t_start, final: bool) -> None:
    save_checkpoint(out_prefix, params)
    save_train_state(f"{out_prefix}.state",
                     TrainState(step=step, embedder_config=config.embedder,
                                head_sizes=head_sizes, params=joint, adam=adam))
    if final:
        first = step - len(losses)
        with open(f"{out_prefix}.losses.txt", "w") as f:
            for k, value in enumerate(losses):
                f.write(f"{first + k} {value!r}\n")
        summary = {"loss": config.loss, "steps": step, "seed": config.seed,
                   "final_loss": losses[-1] if losses else None,
                   "wallclock_ms": (time.perf_counter() - t_start) * 1000.0}
        with open(f"{out_prefix}.summary.json", "w") as f:
            json.dump(summary, f, indent=1, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------
# Evaluation of frozen embeddings
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    split: str
    n_train: int
    n_eval: int
    classification_accuracy: dict = field(default_factory=dict)
    progression_r2: float = float("nan")
    tau: float = float("nan")
    cycle_fraction: float = float("nan")

    def to_lines(self) -> list[str]:
        lines = [f"split={self.split}",
                 f"n_train={self.n_train}",
                 f"n_eval={self.n_eval}"]
        for frac in sorted(self.classification_accuracy):
            lines.append(
                f"phase_classification_accuracy@{frac}={self.classification_accuracy[frac]!r}")
        lines.append(f"phase_progression_r2={self.progression_r2!r}")
        lines.append(f"kendalls_tau={self.tau!r}")
        lines.append(f"cycle_consistency={self.cycle_fraction!r}")
        return lines

    def to_json(self) -> str:
        doc = {"split": self.split, "n_train": self.n_train, "n_eval": self.n_eval,
               "phase_classification_accuracy":
                   {str(k): v for k, v in sorted(self.classification_accuracy.items())},
               "phase_progression_r2": self.progression_r2,
               "kendalls_tau": self.tau,
               "cycle_consistency": self.cycle_fraction}
        return json.dumps(doc, indent=1, sort_keys=True)


def _hash_order(sequences):
    return sorted(sequences, key=lambda s: hashlib.sha256(s.id.encode()).hexdigest())


def evaluate(params, dataset, split: str = "val",
             label_fractions=(0.1, 0.5, 1.0), split_fraction: float = 0.8,
             split_seed: int = 0, classifier_l2: float = 1e-4,
             ridge: float = 1e-6) -> EvalReport:
    """Frozen-feature evaluation on one split.

    Embeds every sequence with the given (or loaded) parameters, then
    reports: phase classification accuracy of a linear probe fit on label
    fractions of the training videos, phase progression R^2 of a linear
    regressor, and label-free Kendall's Tau and cycle-consistency averaged
    over all ordered pairs of evaluation sequences.
    """
    if isinstance(params, (str, Path)):
        params = load_checkpoint(params)
    if split not in ("train", "val"):
        raise ContractError("split must be 'train' or 'val'")
    train_seqs, val_seqs = split_dataset(dataset, split_fraction, split_seed)
    eval_seqs = train_seqs if split == "train" else val_seqs
    if not eval_seqs:
        raise ContractError(f"split {split!r} is empty")

    emb = {seq.id: embed_array(params, seq) for seq in dataset}

    taus, fracs = [], []
    for a in eval_seqs:
        for b in eval_seqs:
            if a.id == b.id:
                continue
            taus.append(kendalls_tau(emb[a.id], emb[b.id]))
            fracs.append(cycle_consistency_fraction(emb[a.id], emb[b.id]))
    tau = float(np.mean(taus)) if taus else float("nan")
    cyc = float(np.mean(fracs)) if fracs else float("nan")

    report = EvalReport(split=split, n_train=len(train_seqs), n_eval=len(eval_seqs))
    report.tau = tau
    report.cycle_fraction = cyc

    annotated = all(s.annotation is not None for s in train_seqs + eval_seqs)
    if not annotated:
        raise MissingAnnotationError(
            "phase metrics need annotations on every train and eval sequence")

    counts = {len(s.annotation.key_events) for s in train_seqs + eval_seqs}
    if len(counts) != 1:
        raise ContractError(
            f"sequences disagree on key-event count: {sorted(counts)}")

    ordered_train = _hash_order(train_seqs)
    eval_x = np.vstack([emb[s.id] for s in eval_seqs])
    eval_y = np.concatenate([s.annotation.phase_labels for s in eval_seqs])
    for frac in label_fractions:
        k = max(1, int(round(frac * len(ordered_train))))
        chosen = ordered_train[:k]
        x = np.vstack([emb[s.id] for s in chosen])
        y = np.concatenate([s.annotation.phase_labels for s in chosen])
        model = fit_linear_classifier(x, y, l2=classifier_l2)
        report.classification_accuracy[float(frac)] = classify_accuracy(
            model, eval_x, eval_y)

    train_x = np.vstack([emb[s.id] for s in train_seqs])
    train_t = np.vstack([phase_progression_targets(s.annotation, len(s))
                         for s in train_seqs])
    reg = fit_linear_regressor(train_x, train_t, ridge=ridge)
    r2s = []
    for s in eval_seqs:
        pred = reg.predict(emb[s.id])
        targets = phase_progression_targets(s.annotation, len(s))
        r2s.append(np.mean([r_squared(targets[:, e], pred[:, e])
                            for e in range(targets.shape[1])]))
    report.progression_r2 = float(np.mean(r2s))
    return report
