"""Alignment applications on frozen embeddings.

Frame correspondence between two embedded sequences, either unconstrained
(nearest neighbor per frame) or temporally monotone (dynamic time warping),
plus the derived tools: similarity matrices for visualization, anomaly
scores against reference trajectories, and per-frame label transfer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diff import ContractError


def _emb(x, name: str) -> np.ndarray:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ContractError(f"{name} must be a nonempty n-by-d matrix")
    return arr


def _sq_dists(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return ((u[:, None, :] - v[None, :, :]) ** 2).sum(axis=-1)


@dataclass
class AlignmentResult:
    """Frame correspondence between two sequences.

    `pairs` holds (i, j) index pairs; `distances` the squared embedding
    distance of each pair.  In nn mode there is exactly one pair per frame
    of the first sequence; in dtw mode the pairs form a monotone path from
    (0, 0) to (n_u - 1, n_v - 1).
    """

    mode: str
    pairs: list[tuple[int, int]]
    distances: np.ndarray
    n_u: int
    n_v: int

    @property
    def total_cost(self) -> float:
        return float(self.distances.sum())


def nn_align(u_seq, v_seq) -> AlignmentResult:
    """Match each frame of U to its nearest frame of V (lowest index on ties)."""
    u = _emb(u_seq, "u_seq")
    v = _emb(v_seq, "v_seq")
    d = _sq_dists(u, v)
    js = np.argmin(d, axis=1)
    pairs = [(i, int(j)) for i, j in enumerate(js)]
    dists = d[np.arange(u.shape[0]), js]
    return AlignmentResult(mode="nn", pairs=pairs, distances=dists,
                           n_u=u.shape[0], n_v=v.shape[0])


def dtw_align(u_seq, v_seq, band: int | None = None) -> AlignmentResult:
    """Minimum-cost monotone alignment path by dynamic programming.

    Cost is the sum of squared embedding distances over path cells.  An
    optional band limits |i - j| (no constraint by default).  Backtracking
    ties prefer the diagonal step, then advancing U, then advancing V.
    """
    u = _emb(u_seq, "u_seq")
    v = _emb(v_seq, "v_seq")
    n, m = u.shape[0], v.shape[0]
    d = _sq_dists(u, v)
    if band is not None:
        if band < abs(n - m):
            raise ContractError(
                f"band {band} narrower than the length difference {abs(n - m)}")
        mask = np.abs(np.arange(n)[:, None] - np.arange(m)[None, :]) > band
        d = np.where(mask, np.inf, d)

    acc = np.full((n, m), np.inf)
    acc[0, 0] = d[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + d[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + d[i, 0]
        row_prev = acc[i - 1]
        row = acc[i]
        for j in range(1, m):
            row[j] = d[i, j] + min(row_prev[j - 1], row_prev[j], row[j - 1])

    i, j = n - 1, m - 1
    rev = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            best = min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            if acc[i - 1, j - 1] == best:
                i, j = i - 1, j - 1
            elif acc[i - 1, j] == best:
                i -= 1
            else:
                j -= 1
        rev.append((i, j))
    pairs = rev[::-1]
    dists = np.array([d[i, j] for i, j in pairs])
    return AlignmentResult(mode="dtw", pairs=pairs, distances=dists,
                           n_u=n, n_v=m)


def similarity_matrix(u_seq, v_seq) -> np.ndarray:
    """exp(-||u_i - v_j||^2): values in (0, 1], brighter means more similar."""
    u = _emb(u_seq, "u_seq")
    v = _emb(v_seq, "v_seq")
    return np.exp(-_sq_dists(u, v))


def anomaly_score(u_seq, references) -> np.ndarray:
    """Per-frame Euclidean distance to the closest frame of any reference."""
    u = _emb(u_seq, "u_seq")
    refs = [_emb(r, "reference") for r in references]
    if not refs:
        raise ContractError("anomaly_score needs at least one reference sequence")
    pool = np.vstack(refs)
    return np.sqrt(_sq_dists(u, pool).min(axis=1))


def transfer_labels(alignment: AlignmentResult, source_labels):
    """Copy per-frame source labels onto the target through an alignment.

    The alignment's first sequence is the target, the second the source;
    when dtw gives a target frame several source matches, the lowest-cost
    pair wins (first such pair on ties).
    """
    labels = np.asarray(source_labels)
    best_cost: dict[int, float] = {}
    chosen: dict[int, int] = {}
    for (i, j), cost in zip(alignment.pairs, alignment.distances):
        if j >= labels.shape[0]:
            raise ContractError(
                f"alignment references source frame {j} but only "
                f"{labels.shape[0]} labels were given")
        if i not in best_cost or cost < best_cost[i]:
            best_cost[i] = cost
            chosen[i] = j
    missing = [i for i in range(alignment.n_u) if i not in chosen]
    if missing:
        raise ContractError(f"alignment does not cover target frames {missing[:5]}")
    return labels[[chosen[i] for i in range(alignment.n_u)]]


# ---------------------------------------------------------------------------
# Text export formats
# ---------------------------------------------------------------------------

def write_similarity_matrix(path, matrix: np.ndarray) -> None:
    """Header line "N M", then N rows of M space-separated decimal values."""
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w") as f:
        f.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            f.write(" ".join(repr(x) for x in row.tolist()) + "\n")


def write_alignment(path, result: AlignmentResult) -> None:
    """One line per pair: "i j distance"."""
    with open(path, "w") as f:
        for (i, j), dist in zip(result.pairs, result.distances):
            f.write(f"{i} {j} {dist!r}\n")
