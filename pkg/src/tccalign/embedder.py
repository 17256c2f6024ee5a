"""Per-frame embedding network: context stacking followed by an MLP head.

Each frame feature vector is concatenated with `context_frames - 1` later
frames (spaced `context_stride` apart, clamped at the sequence end) and
pushed through fully connected ReLU layers into a final linear projection.
The context window is what lets the encoder tell apart visits to the same
feature-space region that happen at different speeds or directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diff
from .diff import ContractError, ShapeError, Tape, Tensor
from . import fileio

CHECKPOINT_MAGIC = b"TCCE"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EmbedderConfig:
    input_dim: int
    context_frames: int = 2
    context_stride: int = 15
    hidden_sizes: tuple[int, ...] = (512, 512)
    embedding_dim: int = 128

    def __post_init__(self):
        if self.input_dim < 1:
            raise ContractError("input_dim must be >= 1")
        if self.context_frames < 1 or self.context_stride < 1:
            raise ContractError("context_frames and context_stride must be >= 1")
        if self.embedding_dim < 1:
            raise ContractError("embedding_dim must be >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise ContractError("hidden sizes must be >= 1")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim * self.context_frames,
                *self.hidden_sizes, self.embedding_dim)


@dataclass
class MlpParams:
    """Weights and biases of a plain MLP (ReLU between layers, linear last)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def flat(self) -> np.ndarray:
        """Flat view, layer by layer, weights then bias within each layer."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts) if parts else np.zeros(0)

    def load_flat(self, flat: np.ndarray) -> None:
        if flat.size != self.num_params:
            raise ShapeError(
                f"flat vector has {flat.size} entries, expected {self.num_params}")
        off = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[off:off + w.size].reshape(w.shape).copy()
            off += w.size
            self.biases[i] = flat[off:off + b.size].copy()
            off += b.size

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


def init_mlp(sizes, rng: np.random.Generator) -> MlpParams:
    """Uniform fan-scaled init, bound sqrt(6/(fan_in+fan_out)); zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


class BoundMlp:
    """An MLP's parameters registered as leaves on one tape."""

    def __init__(self, params: MlpParams, tape: Tape):
        self.tape = tape
        self.weights = [tape.leaf(w) for w in params.weights]
        self.biases = [tape.leaf(b) for b in params.biases]

    def leaves(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def flat_grad(self, grads: dict[Tensor, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[leaf].ravel() for leaf in self.leaves()])


def mlp_forward(layers_w, layers_b, x) -> Tensor:
    """Apply the MLP to a constant or taped n-by-d input matrix."""
    h = diff.constant(x) if not isinstance(x, Tensor) else x
    last = len(layers_w) - 1
    for i, (w, b) in enumerate(zip(layers_w, layers_b)):
        h = diff.add_rowvec(diff.matmul(h, w), b)
        if i != last:
            h = diff.relu(h)
    return h


@dataclass
class EmbedderParams:
    """All trainable weights of the embedding head."""

    config: EmbedderConfig
    mlp: MlpParams

    @property
    def num_params(self) -> int:
        return self.mlp.num_params

    def flat(self) -> np.ndarray:
        return self.mlp.flat()

    def load_flat(self, flat: np.ndarray) -> None:
        self.mlp.load_flat(flat)

    def copy(self) -> "EmbedderParams":
        return EmbedderParams(self.config, self.mlp.copy())

    def bind(self, tape: Tape) -> "BoundEmbedder":
        return BoundEmbedder(self, tape)


class BoundEmbedder(BoundMlp):
    """Embedder parameters live on a tape so losses can backpropagate."""

    def __init__(self, params: EmbedderParams, tape: Tape):
        super().__init__(params.mlp, tape)
        self.config = params.config


def init_params(config: EmbedderConfig, seed: int) -> EmbedderParams:
    rng = np.random.default_rng(seed)
    return EmbedderParams(config, init_mlp(config.layer_sizes, rng))


def stack_context(frames: np.ndarray, config: EmbedderConfig) -> np.ndarray:
    """Concatenate each frame with its context frames; indices clamp at the end."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"frames must be 2-d, got shape {frames.shape}")
    n, d = frames.shape
    if d != config.input_dim:
        raise ShapeError(
            f"frame feature dim {d} != configured input_dim {config.input_dim}")
    if n < 1:
        raise ContractError("sequence must contain at least one frame")
    cols = []
    for j in range(config.context_frames):
        idx = np.minimum(np.arange(n) + j * config.context_stride, n - 1)
        cols.append(frames[idx])
    return np.concatenate(cols, axis=1)


def embed_sequence(params, frames) -> Tensor:
    """Embed an n-by-input_dim frame matrix into n embedding_dim vectors.

    `params` may be EmbedderParams (plain forward, constant result) or any
    object exposing config/weights/biases with taped weights, such as a
    BoundEmbedder (differentiable result).  `frames` may also be a
    FeatureSequence, in which case its frame matrix is used.
    """
    frames = getattr(frames, "frames", frames)
    x = stack_context(frames, params.config)
    if hasattr(params, "mlp"):
        return mlp_forward(params.mlp.weights, params.mlp.biases, x)
    return mlp_forward(params.weights, params.biases, x)


def embed_array(params: EmbedderParams, frames) -> np.ndarray:
    """Plain numpy embeddings for frozen-parameter evaluation."""
    return embed_sequence(params, frames).data


# ---------------------------------------------------------------------------
# Checkpoint file format: magic "TCCE", version u32, config block, then the
# flat little-endian float64 parameter array.  Round-trips bit-exactly.
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: EmbedderParams) -> None:
    cfg = params.config
    flat = params.flat()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        fileio.write_u32(f, CHECKPOINT_VERSION)
        fileio.write_u32(f, cfg.input_dim)
        fileio.write_u32(f, cfg.context_frames)
        fileio.write_u32(f, cfg.context_stride)
        fileio.write_u32(f, cfg.embedding_dim)
        fileio.write_u32(f, len(cfg.hidden_sizes))
        for h in cfg.hidden_sizes:
            fileio.write_u32(f, h)
        fileio.write_u64(f, flat.size)
        fileio.write_f64_array(f, flat)


def load_checkpoint(path) -> EmbedderParams:
    with open(path, "rb") as f:
        fileio.expect_magic(f, CHECKPOINT_MAGIC, path)
        fileio.expect_version(f, CHECKPOINT_VERSION, path)
        input_dim = fileio.read_u32(f)
        context_frames = fileio.read_u32(f)
        context_stride = fileio.read_u32(f)
        embedding_dim = fileio.read_u32(f)
        n_hidden = fileio.read_u32(f)
        hidden = tuple(fileio.read_u32(f) for _ in range(n_hidden))
        config = EmbedderConfig(input_dim=input_dim, context_frames=context_frames,
                                context_stride=context_stride, hidden_sizes=hidden,
                                embedding_dim=embedding_dim)
        count = fileio.read_u64(f)
        params = init_params(config, seed=0)
        if count != params.num_params:
            raise fileio.FileFormatError(
                f"{path}: parameter count {count} does not match config "
                f"({params.num_params} expected)")
        flat = fileio.read_f64_array(f, count, "parameter array")
        fileio.expect_eof(f, path)
    params.load_flat(flat)
    return params
