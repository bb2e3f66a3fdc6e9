"""Naive and rational semantic coders.

An encoder maps a target action to a distribution over concepts (column
stochastic); a decoder maps a received concept to a distribution over
actions (row stochastic). Naive coders normalize the context matrix
directly. Rational coders iterate a mutual-reasoning recursion: each
side raises the other's current coder times the relevant prior to its
rationality power and renormalizes. Zero-support entries stay exactly
zero throughout (0^theta = 0 by convention, no smoothing), which is what
keeps contexts identifiable from converged coders.

With unit rationality, uniform priors, and a square total-support
context, the alternating recursion is exactly iterated row/column
scaling and converges to a doubly stochastic diagonal scaling of the
context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels
from ._validation import SIMPLEX_ATOL, as_float_matrix, freeze
from .errors import (
    DegenerateColumn,
    DegenerateRow,
    DimMismatch,
    InvalidContext,
    NotNormalized,
)
from .metrics import OpCount, cr_init_cost, cr_step_cost
from .world import Context, WorldTuple

COLUMN_STOCHASTIC = "column_stochastic"
ROW_STOCHASTIC = "row_stochastic"

ALTERNATING = "alternating"
SIMULTANEOUS = "simultaneous"

CLAMP_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Coder:
    """A stochastic coding matrix with an explicit orientation.

    Encoders are column stochastic (columns over concepts, one per
    action); decoders are row stochastic on supported rows, where a row
    with no support may be all zero.
    """

    entries: np.ndarray
    orientation: str

    def __post_init__(self):
        arr = freeze(as_float_matrix(self.entries, "coder entries"))
        object.__setattr__(self, "entries", arr)
        if self.orientation == COLUMN_STOCHASTIC:
            sums = arr.sum(axis=0)
            if np.any(np.abs(sums - 1.0) > SIMPLEX_ATOL):
                raise NotNormalized("encoder columns must sum to 1")
        elif self.orientation == ROW_STOCHASTIC:
            sums = arr.sum(axis=1)
            if np.any((np.abs(sums - 1.0) > SIMPLEX_ATOL) & (sums != 0.0)):
                raise NotNormalized("decoder rows must sum to 1 (or be all zero)")
        else:
            raise NotNormalized(f"unknown orientation {self.orientation!r}")

    @property
    def shape(self):
        return self.entries.shape


def as_coder(entries, orientation: str) -> Coder:
    """Clamp negatives to zero and renormalize; degenerate lines go uniform.

    Intended for real-valued matrices coming out of the linear model that
    must act as sampling distributions.
    """
    arr = np.maximum(as_float_matrix(entries, "entries"), 0.0)
    axis = 0 if orientation == COLUMN_STOCHASTIC else 1
    sums = arr.sum(axis=axis, keepdims=True)
    n = arr.shape[axis]
    arr = np.where(sums > 0, arr / np.where(sums > 0, sums, 1.0), 1.0 / n)
    return Coder(arr, orientation)


@dataclass(frozen=True)
class ReasoningResult:
    encoder: Coder
    decoder: Coder
    iterations: int
    converged: bool
    op_count: OpCount


def naive_encoder(context: Context) -> Coder:
    """Column-normalized context; errors on an action with no concepts."""
    x = context.entries
    col_sums = x.sum(axis=0)
    if np.any(col_sums == 0):
        raise InvalidContext(
            f"action column(s) {np.flatnonzero(col_sums == 0).tolist()} have no relevant concept"
        )
    return Coder(x / col_sums, COLUMN_STOCHASTIC)


def naive_decoder(context: Context) -> Coder:
    """Row-normalized context; concept rows without support stay all zero."""
    x = context.entries
    row_sums = x.sum(axis=1, keepdims=True)
    entries = np.divide(x, row_sums, out=np.zeros_like(x), where=row_sums > 0)
    return Coder(entries, ROW_STOCHASTIC)


def _encoder_half(r, z, theta_s, floor=None):
    """Raw encoder update: column-normalized (r*z)^theta_s.

    With floor=None the zero pattern of r is preserved exactly; with a
    floor, entries below it (including negatives) are lifted to the floor
    before the power, which is how unconstrained linear-model outputs are
    handled.
    """
    if floor is None:
        base = r * z[:, None]
        w = np.where(base > 0, base**theta_s, 0.0)
    else:
        w = (np.maximum(r, floor) * z[:, None]) ** theta_s
    col = w.sum(axis=0)
    if np.any(col == 0):
        raise DegenerateColumn(
            f"encoder normalizer vanished for action(s) {np.flatnonzero(col == 0).tolist()}"
        )
    return w / col


def _decoder_half(s, y, theta_r, row_support):
    base = s * y[None, :]
    v = np.where(base > 0, base**theta_r, 0.0)
    row = v.sum(axis=1)
    dead = (row == 0) & row_support
    if np.any(dead):
        raise DegenerateRow(
            f"decoder normalizer vanished for concept(s) {np.flatnonzero(dead).tolist()}"
        )
    return np.divide(v, row[:, None], out=np.zeros_like(v), where=row[:, None] > 0)


def cr_step(
    decoder: Coder,
    action_prior,
    concept_prior,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    schedule: str = ALTERNATING,
    encoder: Coder | None = None,
) -> tuple[Coder, Coder]:
    """One update of the mutual-reasoning recursion.

    Under the alternating schedule the decoder update uses the encoder
    just computed; under the simultaneous schedule it uses the
    previous-step encoder, which must be supplied.
    """
    y = np.asarray(action_prior, dtype=float)
    z = np.asarray(concept_prior, dtype=float)
    r = decoder.entries
    if r.shape != (len(z), len(y)):
        raise DimMismatch("decoder shape disagrees with priors")
    row_support = r.sum(axis=1) > 0
    s_new = _encoder_half(r, z, theta_s)
    if schedule == ALTERNATING:
        s_for_decoder = s_new
    elif schedule == SIMULTANEOUS:
        if encoder is None:
            raise DimMismatch("simultaneous schedule needs the previous encoder")
        s_for_decoder = encoder.entries
    else:
        raise DimMismatch(f"unknown schedule {schedule!r}")
    r_new = _decoder_half(s_for_decoder, y, theta_r, row_support)
    return Coder(s_new, COLUMN_STOCHASTIC), Coder(r_new, ROW_STOCHASTIC)


def _cr_solve(x, y, z, theta_s, theta_r, tol, max_iters, schedule=ALTERNATING):
    """Array-level recursion loop. Returns (encoder, decoder, iterations, converged).

    Dispatches to the compiled kernel when available; the numpy body
    below is the fallback and the semantic reference.
    """
    if _kernels.HAVE_NUMBA:
        if schedule not in (ALTERNATING, SIMULTANEOUS):
            raise DimMismatch(f"unknown schedule {schedule!r}")
        s, r, iterations, converged, err = _kernels._solve_loop(
            np.ascontiguousarray(x, dtype=float),
            np.ascontiguousarray(y, dtype=float),
            np.ascontiguousarray(z, dtype=float),
            float(theta_s),
            float(theta_r),
            float(tol),
            int(max_iters),
            schedule == SIMULTANEOUS,
        )
        if err == 1:
            raise DegenerateColumn("encoder normalizer vanished")
        if err == 2:
            raise DegenerateRow("decoder normalizer vanished on a supported concept row")
        return s, r, iterations, converged
    return _cr_solve_numpy(x, y, z, theta_s, theta_r, tol, max_iters, schedule)


def _cr_solve_numpy(x, y, z, theta_s, theta_r, tol, max_iters, schedule=ALTERNATING):
    row_sums = x.sum(axis=1, keepdims=True)
    r = np.divide(x, row_sums, out=np.zeros_like(x), where=row_sums > 0)
    row_support = row_sums[:, 0] > 0
    z_col = z[:, None]
    y_row = y[None, :]
    s_prev = None
    if schedule == SIMULTANEOUS:
        col_sums = x.sum(axis=0)
        if np.any(col_sums == 0):
            raise InvalidContext("context has an empty action column")
        s_prev = x / col_sums
    converged = False
    iterations = 0
    for t in range(1, max_iters + 1):
        base = r * z_col
        w = np.where(base > 0, base**theta_s, 0.0)
        col = w.sum(axis=0)
        if np.any(col == 0):
            raise DegenerateColumn(
                f"encoder normalizer vanished for action(s) {np.flatnonzero(col == 0).tolist()}"
            )
        s = w / col
        source = s if schedule == ALTERNATING else s_prev
        base_r = source * y_row
        v = np.where(base_r > 0, base_r**theta_r, 0.0)
        row = v.sum(axis=1)
        if np.any((row == 0) & row_support):
            raise DegenerateRow("decoder normalizer vanished on a supported concept row")
        r_new = np.divide(v, row[:, None], out=np.zeros_like(v), where=row[:, None] > 0)
        iterations = t
        if s_prev is not None:
            delta = max(np.abs(s - s_prev).max(), np.abs(r_new - r).max())
            if delta < tol:
                converged = True
                r = r_new
                s_prev = s
                break
        r = r_new
        s_prev = s
    return s_prev, r, iterations, converged


def rational_coders(
    world: WorldTuple,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    tol: float = 1e-8,
    max_iters: int = 500,
    schedule: str = ALTERNATING,
) -> ReasoningResult:
    """Iterate the recursion from the naive decoder until both coders settle.

    Convergence means the sup-norm change of both matrices in the final
    iteration fell below tol; hitting max_iters instead is reported via
    the converged flag, not an exception.
    """
    s, r, iterations, converged = _cr_solve(
        world.context.entries,
        world.action_prior,
        world.concept_prior,
        theta_s,
        theta_r,
        tol,
        max_iters,
        schedule,
    )
    ops = cr_init_cost(world.dims) + cr_step_cost(world.dims).scaled(iterations)
    return ReasoningResult(
        encoder=Coder(s, COLUMN_STOCHASTIC),
        decoder=Coder(r, ROW_STOCHASTIC),
        iterations=iterations,
        converged=converged,
        op_count=ops,
    )


def effectiveness(encoder: Coder, decoder: Coder, action_prior) -> float:
    """Single-symbol success probability sum_a y_a sum_c s_ca r_ca."""
    if encoder.orientation != COLUMN_STOCHASTIC or decoder.orientation != ROW_STOCHASTIC:
        raise DimMismatch("effectiveness expects (encoder, decoder) in that order")
    y = np.asarray(action_prior, dtype=float)
    s = encoder.entries
    r = decoder.entries
    if s.shape != r.shape or s.shape[1] != len(y):
        raise DimMismatch("coder shapes and action prior disagree")
    return float(np.dot(y, (s * r).sum(axis=0)))


def encoder_one_step(
    decoder_entries, concept_prior, theta_s: float = 1.1, floor: float = CLAMP_FLOOR
) -> np.ndarray:
    """The encoder half of one recursion step applied to a raw decoder matrix.

    Entries below the floor (including negatives from the linear model)
    are lifted to the floor before the power, so the output is always a
    proper column-stochastic matrix.
    """
    r = as_float_matrix(decoder_entries, "decoder entries")
    z = np.asarray(concept_prior, dtype=float)
    if r.shape[0] != len(z):
        raise DimMismatch("decoder rows disagree with concept prior")
    return _encoder_half(r, z, theta_s, floor=floor)


class ContextualReasoner(BaseEstimator):
    """Estimator-style wrapper around :func:`rational_coders`.

    Stateless: fit is a no-op kept for pipeline compatibility, and
    get_params/set_params expose the recursion hyperparameters.
    """

    def __init__(self, theta_s=1.1, theta_r=1.1, tol=1e-8, max_iters=500, schedule=ALTERNATING):
        self.theta_s = theta_s
        self.theta_r = theta_r
        self.tol = tol
        self.max_iters = max_iters
        self.schedule = schedule

    def fit(self, X=None, y=None):
        return self

    def reason(self, world: WorldTuple) -> ReasoningResult:
        return rational_coders(
            world,
            theta_s=self.theta_s,
            theta_r=self.theta_r,
            tol=self.tol,
            max_iters=self.max_iters,
            schedule=self.schedule,
        )

    def transform(self, worlds):
        """Map an iterable of worlds to their converged (encoder, decoder) pairs."""
        return [
            (res.encoder, res.decoder) for res in (self.reason(w) for w in worlds)
        ]


def coder_to_dict(coder: Coder) -> dict:
    return {
        "orientation": coder.orientation,
        "entries": [[float(v) for v in row] for row in coder.entries],
    }


def coder_from_dict(data: dict) -> Coder:
    return Coder(np.array(data["entries"], dtype=float), data["orientation"])
