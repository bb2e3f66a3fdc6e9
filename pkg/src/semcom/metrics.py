"""Evaluation metrics and arithmetic-operation accounting.

Operation accounting has two modes. The primary mode is analytic: each
algorithm charges a closed-form per-call formula (times the measured
iteration count where the algorithm iterates). The debug mode executes
the same computation with explicit scalar loops that tally every
multiply/add/power/divide; the tally must equal the formula exactly.
Powers, exponentials and logs each count as one operation (the unit-cost
convention is a documented choice). Accounting covers the likelihood
model arithmetic only; proposal generation, prior densities and control
flow are free.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyTrace, NotNormalized, ZeroVector
from .world import WorldDims, WorldTuple, vectorize

JS_ATOL = 1e-8
HIST_BIN_WIDTH = 0.05


@dataclass
class OpCount:
    mults: int = 0
    adds: int = 0
    exps: int = 0
    logs: int = 0
    divs: int = 0

    def total(self) -> int:
        return self.mults + self.adds + self.exps + self.logs + self.divs

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(
            self.mults + other.mults,
            self.adds + other.adds,
            self.exps + other.exps,
            self.logs + other.logs,
            self.divs + other.divs,
        )

    def __iadd__(self, other: "OpCount") -> "OpCount":
        self.mults += other.mults
        self.adds += other.adds
        self.exps += other.exps
        self.logs += other.logs
        self.divs += other.divs
        return self

    def scaled(self, k: int) -> "OpCount":
        return OpCount(k * self.mults, k * self.adds, k * self.exps, k * self.logs, k * self.divs)


# ---------------------------------------------------------------------------
# Analytic cost formulas


def cr_step_cost(dims: WorldDims) -> OpCount:
    """One encoder+decoder update of the reasoning recursion.

    Each half charges one multiply (entry times prior) and one power per
    cell, plus the normalization sums and divisions.
    """
    c, a = dims.num_concepts, dims.num_actions
    return OpCount(
        mults=2 * c * a,
        exps=2 * c * a,
        adds=a * (c - 1) + c * (a - 1),
        divs=2 * c * a,
    )


def cr_init_cost(dims: WorldDims) -> OpCount:
    """Row-normalizing the context into the starting decoder."""
    c, a = dims.num_concepts, dims.num_actions
    return OpCount(adds=c * (a - 1), divs=c * a)


def cr_solve_cost(dims: WorldDims, iterations: int) -> OpCount:
    return cr_init_cost(dims) + cr_step_cost(dims).scaled(iterations)


def gauss_residual_cost(n: int) -> OpCount:
    """Squared residual norm scaled by 1/(2 sigma^2): n diffs, n squares, sum, scale."""
    return OpCount(mults=n + 1, adds=2 * n - 1, divs=1)


def icr_eval_cost(dims: WorldDims, iterations: int) -> OpCount:
    return cr_solve_cost(dims, iterations) + gauss_residual_cost(dims.ctx_cells)


def phi_apply_cost(dims: WorldDims) -> OpCount:
    n_out, n_in = dims.ctx_cells, dims.vec_len
    return OpCount(mults=n_out * n_in, adds=n_out * (n_in - 1))


def ilcr_eval_cost_full(dims: WorldDims) -> OpCount:
    return phi_apply_cost(dims) + gauss_residual_cost(dims.ctx_cells)


def ilcr_eval_cost_flip(dims: WorldDims) -> OpCount:
    """Incremental evaluation after one coordinate of the world vector changes.

    Residual update (delta times one model column, subtracted) plus the
    squared-norm recomputation and scaling.
    """
    n = dims.ctx_cells
    return OpCount(mults=n, adds=n, divs=0) + OpCount(mults=n + 1, adds=2 * n - 1, divs=1)


def ilcr_eval_cost_block(dims: WorldDims, block_len: int) -> OpCount:
    """Incremental evaluation after a whole prior vector changes."""
    n = dims.ctx_cells
    return OpCount(mults=n * block_len, adds=n * block_len) + OpCount(
        mults=n + 1, adds=2 * n - 1, divs=1
    )


# ---------------------------------------------------------------------------
# Instrumented (debug) mode


def instrumented_cr_step(decoder, y, z, theta_s, theta_r):
    """Scalar-loop reasoning step that tallies every charged operation.

    Returns (encoder, decoder, OpCount). Must agree with
    :func:`cr_step_cost` exactly and with the vectorized implementation
    numerically.
    """
    r = np.asarray(decoder, dtype=float)
    c_n, a_n = r.shape
    ops = OpCount()
    s = np.zeros_like(r)
    for a in range(a_n):
        col = np.zeros(c_n)
        for c in range(c_n):
            if r[c, a] != 0.0:
                base = r[c, a] * z[c]
                col[c] = base**theta_s
            ops.mults += 1
            ops.exps += 1
        total = col[0]
        for c in range(1, c_n):
            total = total + col[c]
            ops.adds += 1
        for c in range(c_n):
            s[c, a] = col[c] / total
            ops.divs += 1
    r_new = np.zeros_like(r)
    for c in range(c_n):
        row = np.zeros(a_n)
        for a in range(a_n):
            if s[c, a] != 0.0:
                base = s[c, a] * y[a]
                row[a] = base**theta_r
            ops.mults += 1
            ops.exps += 1
        total = row[0]
        for a in range(1, a_n):
            total = total + row[a]
            ops.adds += 1
        for a in range(a_n):
            r_new[c, a] = row[a] / total if total != 0.0 else 0.0
            ops.divs += 1
    return s, r_new, ops


def instrumented_phi_apply(phi, t):
    """Scalar-loop matrix-vector product with an operation tally."""
    phi = np.asarray(phi, dtype=float)
    t = np.asarray(t, dtype=float)
    n_out, n_in = phi.shape
    ops = OpCount()
    out = np.zeros(n_out)
    for i in range(n_out):
        acc = phi[i, 0] * t[0]
        ops.mults += 1
        for j in range(1, n_in):
            acc = acc + phi[i, j] * t[j]
            ops.mults += 1
            ops.adds += 1
        out[i] = acc
    return out, ops


# ---------------------------------------------------------------------------
# Distances and success criteria


def rmse(t_hat: WorldTuple, t_true: WorldTuple) -> float:
    """Root mean squared difference over the full vectorized tuple."""
    if t_hat.dims != t_true.dims:
        raise DimMismatch("world dims disagree")
    diff = vectorize(t_hat) - vectorize(t_true)
    return float(np.sqrt(np.mean(diff**2)))


def prior_rmse(t_hat: WorldTuple, t_true: WorldTuple) -> float:
    """RMSE over the concatenated action and concept priors only."""
    if t_hat.dims != t_true.dims:
        raise DimMismatch("world dims disagree")
    diff = np.concatenate(
        [
            t_hat.action_prior - t_true.action_prior,
            t_hat.concept_prior - t_true.concept_prior,
        ]
    )
    return float(np.sqrt(np.mean(diff**2)))


def js_divergence(p, q, atol: float = JS_ATOL) -> float:
    """Jensen-Shannon divergence with base-2 logs; bounded by 1."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimMismatch(f"support sizes disagree: {p.shape} vs {q.shape}")
    for name, vec in (("p", p), ("q", q)):
        if np.any(vec < 0) or abs(vec.sum() - 1.0) > atol:
            raise NotNormalized(f"{name} is not a distribution")
    m = 0.5 * (p + q)

    def _kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def bernoulli_js(p1: float, q1: float) -> float:
    return js_divergence([1.0 - p1, p1], [1.0 - q1, q1])


def _x_samples(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states
    return np.stack([w.context.entries for w in states])


def entrywise_posterior_distance(states, x_targets: np.ndarray) -> float:
    """Mean JS over context entries: chain marginals vs oracle targets.

    ``states`` is a sequence of post-burn-in worlds (or an array of
    context samples); ``x_targets`` holds the oracle P(entry = 1).
    """
    xs = _x_samples(states)
    if xs.shape[0] == 0:
        raise EmptyTrace("no post-burn-in states")
    x_targets = np.asarray(x_targets, dtype=float)
    if xs.shape[1:] != x_targets.shape:
        raise DimMismatch("target table shape disagrees with sampled contexts")
    emp = xs.mean(axis=0)
    scores = [
        bernoulli_js(float(emp[c, a]), float(x_targets[c, a]))
        for c in range(x_targets.shape[0])
        for a in range(x_targets.shape[1])
    ]
    return float(np.mean(scores))


def binned_distribution(samples, width: float = HIST_BIN_WIDTH) -> np.ndarray:
    """Histogram of [0,1] samples as a probability vector over fixed bins."""
    samples = np.asarray(samples, dtype=float)
    n_bins = int(round(1.0 / width))
    idx = np.clip((samples / width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    return counts / counts.sum()


@dataclass(frozen=True)
class InversionCriteria:
    require_exact_pattern: bool = True
    prior_rmse_tol: float = 0.05

    def __post_init__(self):
        if self.prior_rmse_tol <= 0:
            raise ValueError("prior_rmse_tol must be positive")


def inversion_success(
    t_hat: WorldTuple, t_true: WorldTuple, criteria: InversionCriteria = InversionCriteria()
) -> bool:
    if t_hat.dims != t_true.dims:
        raise DimMismatch("world dims disagree")
    if criteria.require_exact_pattern and not np.array_equal(
        t_hat.context.entries, t_true.context.entries
    ):
        return False
    return prior_rmse(t_hat, t_true) < criteria.prior_rmse_tol


# ---------------------------------------------------------------------------
# Source-coding bit accounting


def huffman_code_lengths(weights) -> np.ndarray:
    """Binary Huffman codeword lengths; ties broken by lowest symbol id."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or len(w) < 2:
        raise DimMismatch("need a weight vector of length >= 2")
    if np.any(w < 0):
        raise NotNormalized("weights must be nonnegative")
    # heap entries: (weight, min symbol id in subtree, member symbol list)
    heap = [(float(w[i]), i, [i]) for i in range(len(w))]
    heapq.heapify(heap)
    lengths = np.zeros(len(w), dtype=int)
    while len(heap) > 1:
        w1, id1, m1 = heapq.heappop(heap)
        w2, id2, m2 = heapq.heappop(heap)
        for sym in m1 + m2:
            lengths[sym] += 1
        heapq.heappush(heap, (w1 + w2, min(id1, id2), m1 + m2))
    return lengths


def entropy_bits(weights) -> float:
    w = np.asarray(weights, dtype=float)
    mask = w > 0
    return float(-np.sum(w[mask] * np.log2(w[mask])))


def expected_code_length(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(np.dot(w, huffman_code_lengths(w)))


def expected_bits(weights, symbols_per_round: float) -> float:
    """Expected transmitted bits: Huffman expected codeword length times symbols."""
    return expected_code_length(weights) * float(symbols_per_round)
