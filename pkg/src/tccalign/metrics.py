"""Evaluation measures over frozen embeddings.

Everything here is pure numpy on fixed features: the encoder is never
touched, only its outputs.  Nearest-neighbor ties always break toward the
lowest index so every metric is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .diff import ContractError, ShapeError


class DegenerateModelError(ValueError):
    """Classifier or regressor cannot be fit (e.g. a single class)."""


class ConstantTargetError(ValueError):
    """R-squared denominator vanishes because the targets are constant."""


def _emb(x, name: str) -> np.ndarray:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ShapeError(f"{name} must be a nonempty n-by-d matrix")
    return arr


def _nn_indices(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Index in v of each u row's nearest neighbor (lowest index on ties)."""
    d = ((u[:, None, :] - v[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d, axis=1)


def cycle_consistency_fraction(u_seq, v_seq) -> float:
    """Fraction of U's frames whose nearest neighbor in V maps back to them."""
    u = _emb(u_seq, "u_seq")
    v = _emb(v_seq, "v_seq")
    to_v = _nn_indices(u, v)
    to_u = _nn_indices(v, u)
    return float(np.mean(to_u[to_v] == np.arange(u.shape[0])))


def kendalls_tau(u_seq, v_seq) -> float:
    """Rank correlation of nearest-neighbor retrieval order.

    Every unordered frame pair (i, j) of U retrieves nearest frames (p, q)
    in V; the pair is concordant when (i - j)(p - q) > 0 and discordant
    otherwise (including p == q, which breaks the no-repeated-frames
    assumption behind the measure).
    """
    u = _emb(u_seq, "u_seq")
    v = _emb(v_seq, "v_seq")
    n = u.shape[0]
    if n < 2:
        raise ContractError("kendalls_tau needs at least two frames in u_seq")
    p = _nn_indices(u, v)
    # For i < j, concordant iff p[i] < p[j].
    less = p[:, None] < p[None, :]
    iu = np.triu_indices(n, k=1)
    concordant = int(less[iu].sum())
    total = n * (n - 1) // 2
    return float((concordant - (total - concordant)) / total)


def phase_progression_targets(annotation, n_frames: int) -> np.ndarray:
    """Signed, length-normalized frame distance to each key event.

    target[i, e] = (i - key_events[e]) / n_frames.
    """
    events = np.asarray(annotation.key_events, dtype=np.int64)
    if events.size and events.max() >= n_frames:
        raise ContractError("key event beyond sequence length")
    frames = np.arange(n_frames, dtype=np.float64)
    return (frames[:, None] - events[None, :]) / float(n_frames)


def r_squared(y, y_hat) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot (max value 1)."""
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ShapeError("y and y_hat must have the same length")
    if y.size < 2:
        raise ContractError("r_squared needs at least two samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantTargetError("targets are constant; R^2 is undefined")
    ss_res = float(np.sum((y - y_hat) ** 2))
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Linear probe models on frozen features
# ---------------------------------------------------------------------------

@dataclass
class LinearClassifier:
    classes: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    weights: np.ndarray  # (d + 1) x n_classes, last row is the bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        scores = x @ self.weights[:-1] + self.weights[-1]
        return self.classes[np.argmax(scores, axis=1)]


def fit_linear_classifier(x, labels, l2: float = 1e-4, seed: int = 0,
                          gtol: float = 1e-6, max_steps: int = 10000) -> LinearClassifier:
    """Multinomial logistic regression with L2 penalty on frozen features.

    Features are standardized per dimension with the training statistics.
    Optimized with L-BFGS from a zero start until the gradient norm falls
    below `gtol` or `max_steps` iterations pass, so the fit is deterministic
    (the seed is accepted for interface stability but the zero start never
    consults it).
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise ShapeError("features and labels disagree in length")
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateModelError("need at least two classes to fit a classifier")
    if x.shape[0] < classes.size:
        raise ContractError("need at least as many samples as classes")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    xs = (x - mean) / std
    n, d = xs.shape
    y_idx = np.searchsorted(classes, labels)
    onehot = np.zeros((n, classes.size))
    onehot[np.arange(n), y_idx] = 1.0

    def objective(wflat):
        w = wflat.reshape(d + 1, classes.size)
        scores = xs @ w[:-1] + w[-1]
        scores -= scores.max(axis=1, keepdims=True)
        ez = np.exp(scores)
        probs = ez / ez.sum(axis=1, keepdims=True)
        ll = -np.mean(np.log(probs[np.arange(n), y_idx] + 1e-300))
        penalty = 0.5 * l2 * float(np.sum(w[:-1] ** 2))
        grad_scores = (probs - onehot) / n
        gw = np.vstack([xs.T @ grad_scores + l2 * w[:-1],
                        grad_scores.sum(axis=0)[None, :]])
        return ll + penalty, gw.ravel()

    res = scipy.optimize.minimize(
        objective, np.zeros((d + 1) * classes.size), jac=True, method="L-BFGS-B",
        options={"maxiter": max_steps, "gtol": gtol, "ftol": 0.0})
    weights = res.x.reshape(d + 1, classes.size)
    return LinearClassifier(classes=classes, mean=mean, std=std, weights=weights)


def classify_accuracy(model: LinearClassifier, x, labels) -> float:
    labels = np.asarray(labels)
    pred = model.predict(x)
    return float(np.mean(pred == labels))


@dataclass
class LinearRegressor:
    weights: np.ndarray  # (d + 1) x n_targets, last row is the bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.weights[:-1] + self.weights[-1]


def fit_linear_regressor(x, targets, ridge: float = 1e-6) -> LinearRegressor:
    """Closed-form ridge regression with a bias column.

    The ridge is applied to every coefficient (bias included); at the tiny
    default it keeps the normal equations solvable even when n <= d without
    noticeably moving well-conditioned solutions.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if x.shape[0] != t.shape[0]:
        raise ShapeError("features and targets disagree in length")
    xa = np.hstack([x, np.ones((x.shape[0], 1))])
    gram = xa.T @ xa + ridge * np.eye(xa.shape[1])
    weights = np.linalg.solve(gram, xa.T @ t)
    return LinearRegressor(weights=weights)
