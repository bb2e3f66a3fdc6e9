"""Referential-game simulation and empirical decoder construction.

A round: the sender draws a target action from the action prior,
symbolizes one concept from its encoder column, and the receiver takes
an action from its decoder row. An observer collecting (concept, action)
pairs across rounds can tabulate them into an empirical decoder, either
as raw joint frequencies or as per-concept conditional frequencies (the
consistent estimator of the row-stochastic decoder). For experiments
that need exactly known observation noise, a synthetic empirical decoder
adds i.i.d. Gaussian noise to the true decoder instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._validation import as_rng, check_probability_vector, freeze
from .errors import ConfigError, DegenerateDistribution, DimMismatch, NotReached
from .reasoning import COLUMN_STOCHASTIC, ROW_STOCHASTIC, Coder
from .world import WorldDims

JOINT_BY_COUNT = "joint_by_count"
ROW_CONDITIONAL = "row_conditional"


@dataclass(frozen=True)
class GameRecord:
    target_action: int
    symbols_sent: tuple[int, ...]
    action_taken: int

    @property
    def success(self) -> bool:
        return self.action_taken == self.target_action


@dataclass(frozen=True, eq=False)
class SampleSet:
    dims: WorldDims
    concepts: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.concepts, dtype=int)
        a = np.asarray(self.actions, dtype=int)
        if c.shape != a.shape or c.ndim != 1:
            raise DimMismatch("concept and action id arrays must be equal-length vectors")
        object.__setattr__(self, "concepts", c)
        object.__setattr__(self, "actions", a)

    @property
    def count(self) -> int:
        return len(self.concepts)


@dataclass(frozen=True, eq=False)
class EmpiricalDecoder:
    """Real-valued observation matrix with a record of how it was built."""

    entries: np.ndarray
    provenance: str

    def __post_init__(self):
        object.__setattr__(self, "entries", freeze(self.entries))


@dataclass(frozen=True)
class NoiseModel:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("noise std must be nonnegative")


def _sample_index(rng, probs) -> int:
    cdf = np.cumsum(probs)
    if cdf[-1] <= 0:
        raise DegenerateDistribution("distribution has no mass")
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)


def _check_pair(encoder: Coder, decoder: Coder, action_prior) -> np.ndarray:
    if encoder.orientation != COLUMN_STOCHASTIC or decoder.orientation != ROW_STOCHASTIC:
        raise DimMismatch("expected (encoder, decoder) in that order")
    if encoder.shape != decoder.shape:
        raise DimMismatch("coder shapes disagree")
    y = check_probability_vector(action_prior, name="action_prior")
    if len(y) != encoder.shape[1]:
        raise DimMismatch("action prior length disagrees with coders")
    return y


def play_round(encoder: Coder, decoder: Coder, action_prior, rng) -> GameRecord:
    """One single-symbol round: target ~ y, concept ~ S column, action ~ R row."""
    rng = as_rng(rng)
    y = _check_pair(encoder, decoder, action_prior)
    target = _sample_index(rng, y)
    concept = _sample_index(rng, encoder.entries[:, target])
    action = _sample_index(rng, decoder.entries[concept, :])
    return GameRecord(target, (concept,), action)


def play_rounds(encoder: Coder, decoder: Coder, action_prior, n: int, rng):
    """Vectorized batch of single-symbol rounds.

    Returns (targets, concepts, actions) integer arrays of length n.
    Rounds are grouped by target and then by concept, so the rng stream
    differs from n calls to play_round but the joint law is identical.
    """
    rng = as_rng(rng)
    y = _check_pair(encoder, decoder, action_prior)
    n_concepts, n_actions = encoder.shape
    targets = rng.choice(n_actions, size=n, p=y)
    concepts = np.empty(n, dtype=int)
    for a in range(n_actions):
        idx = np.flatnonzero(targets == a)
        if len(idx):
            concepts[idx] = rng.choice(n_concepts, size=len(idx), p=encoder.entries[:, a])
    actions = np.empty(n, dtype=int)
    for c in range(n_concepts):
        idx = np.flatnonzero(concepts == c)
        if len(idx):
            row = decoder.entries[c, :]
            if row.sum() <= 0:
                raise DegenerateDistribution(f"decoder row {c} has no mass")
            actions[idx] = rng.choice(n_actions, size=len(idx), p=row / row.sum())
    return targets, concepts, actions


def collect_samples(encoder: Coder, decoder: Coder, action_prior, count: int, rng) -> SampleSet:
    """Observer's view of `count` rounds: the (symbol, action) pairs only."""
    if count < 1:
        raise ConfigError("sample count must be >= 1")
    _, concepts, actions = play_rounds(encoder, decoder, action_prior, count, rng)
    dims = WorldDims(*encoder.shape)
    return SampleSet(dims, concepts, actions)


def empirical_decoder_from_samples(samples: SampleSet, mode: str = ROW_CONDITIONAL) -> EmpiricalDecoder:
    """Tabulate pair counts into a matrix.

    joint_by_count divides by the total sample count (raw joint
    frequency); row_conditional divides each row by its concept count,
    giving the estimator whose limit is the row-stochastic decoder.
    Unobserved concepts leave all-zero rows in row_conditional mode.
    """
    c_n, a_n = samples.dims.num_concepts, samples.dims.num_actions
    counts = np.zeros((c_n, a_n))
    np.add.at(counts, (samples.concepts, samples.actions), 1.0)
    if mode == JOINT_BY_COUNT:
        entries = counts / samples.count
    elif mode == ROW_CONDITIONAL:
        row_totals = counts.sum(axis=1, keepdims=True)
        entries = np.divide(counts, row_totals, out=np.zeros_like(counts), where=row_totals > 0)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return EmpiricalDecoder(entries, f"samples:{mode}(count={samples.count})")


def synth_empirical_decoder(decoder: Coder, noise: NoiseModel, rng) -> EmpiricalDecoder:
    """True decoder plus i.i.d. zero-mean Gaussian entries; values are not clamped."""
    rng = as_rng(rng)
    n = rng.normal(0.0, noise.sigma, size=decoder.shape) if noise.sigma > 0 else 0.0
    return EmpiricalDecoder(decoder.entries + n, f"synthetic(sigma={noise.sigma})")


def _receiver_posterior(decoder: Coder, symbols) -> np.ndarray:
    """Product of decoder rows over received symbols, renormalized.

    An all-zero product (contradictory symbols) falls back to uniform.
    """
    q = decoder.entries[list(symbols), :].prod(axis=0)
    total = q.sum()
    if total <= 0:
        return np.full(decoder.shape[1], 1.0 / decoder.shape[1])
    return q / total


def multi_symbol_round(encoder: Coder, decoder: Coder, action_prior, num_symbols: int, rng) -> GameRecord:
    """Sender draws num_symbols concepts i.i.d.; receiver combines rows by product."""
    if num_symbols < 1:
        raise ConfigError("need at least one symbol")
    rng = as_rng(rng)
    y = _check_pair(encoder, decoder, action_prior)
    target = _sample_index(rng, y)
    symbols = tuple(
        _sample_index(rng, encoder.entries[:, target]) for _ in range(num_symbols)
    )
    action = _sample_index(rng, _receiver_posterior(decoder, symbols))
    return GameRecord(target, symbols, action)


def multi_symbol_success_rate(
    encoder: Coder,
    decoder: Coder,
    action_prior,
    num_symbols: int,
    rounds: int,
    rng,
    target: int | None = None,
) -> float:
    """Empirical success frequency over vectorized multi-symbol rounds.

    With target=None the target is drawn from the action prior each
    round; otherwise it is held fixed (per-target effectiveness).
    """
    rng = as_rng(rng)
    y = _check_pair(encoder, decoder, action_prior)
    n_concepts, n_actions = encoder.shape
    if target is None:
        targets = rng.choice(n_actions, size=rounds, p=y)
    else:
        targets = np.full(rounds, int(target))
    symbols = np.empty((rounds, num_symbols), dtype=int)
    for a in range(n_actions):
        idx = np.flatnonzero(targets == a)
        if len(idx):
            symbols[idx] = rng.choice(
                n_concepts, size=(len(idx), num_symbols), p=encoder.entries[:, a]
            )
    # product of rows per round, with uniform fallback for dead posteriors
    post = decoder.entries[symbols].prod(axis=1)
    totals = post.sum(axis=1, keepdims=True)
    uniform = np.full(n_actions, 1.0 / n_actions)
    post = np.where(totals > 0, post / np.where(totals > 0, totals, 1.0), uniform)
    cdf = np.cumsum(post, axis=1)
    u = rng.random(rounds)
    actions = np.minimum((cdf < u[:, None]).sum(axis=1), n_actions - 1)
    return float(np.mean(actions == targets))


def min_symbols_for_effectiveness(
    encoder: Coder,
    decoder: Coder,
    action_prior,
    threshold: float,
    max_symbols: int,
    rounds: int,
    rng,
    target: int | None = None,
) -> int:
    """Smallest symbol count whose empirical success meets the threshold.

    Raises NotReached(max_symbols) when no count does.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError("threshold must be in (0,1)")
    rng = as_rng(rng)
    for num_symbols in range(1, max_symbols + 1):
        rate = multi_symbol_success_rate(
            encoder, decoder, action_prior, num_symbols, rounds, rng, target=target
        )
        if rate >= threshold:
            return num_symbols
    raise NotReached(max_symbols)


# ---------------------------------------------------------------------------
# CSV interfaces


def save_samples_csv(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept_id", "action_id"])
        for c, a in zip(samples.concepts, samples.actions):
            writer.writerow([int(c), int(a)])


def load_samples_csv(path, dims: WorldDims) -> SampleSet:
    concepts, actions = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            concepts.append(int(row["concept_id"]))
            actions.append(int(row["action_id"]))
    return SampleSet(dims, np.array(concepts, dtype=int), np.array(actions, dtype=int))


def save_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "action_taken", "success", "symbols"])
        for rec in records:
            writer.writerow(
                [
                    rec.target_action,
                    rec.action_taken,
                    int(rec.success),
                    ";".join(str(s) for s in rec.symbols_sent),
                ]
            )
