"""Worlds: binary context matrices plus action/concept prior vectors.

A world bundles the shared ground truth of a communicating pair: a
``num_concepts x num_actions`` binary relevance matrix (which concepts
describe which actions) and prior distributions over actions and
concepts. This module generates worlds from Bernoulli entry draws with
symmetric-Dirichlet priors, validates them, maps them to and from the
flat vector layout used by the linear model, and serializes them as JSON.

Vector layout contract: column-major flattening of the context first,
then the action prior, then the concept prior. Every module that touches
vectorized worlds (the linear model above all) relies on this order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_rng, check_probability_vector, freeze
from .errors import ConfigError, DimMismatch, GenerationExhausted

FORMAT_VERSION = 1

RANK_TOL = 1e-9


@dataclass(frozen=True)
class WorldDims:
    num_concepts: int
    num_actions: int

    def __post_init__(self):
        if self.num_concepts < 2 or self.num_actions < 2:
            raise ConfigError(
                f"need at least 2 concepts and 2 actions, got "
                f"{self.num_concepts}x{self.num_actions}"
            )

    @property
    def ctx_cells(self) -> int:
        return self.num_concepts * self.num_actions

    @property
    def vec_len(self) -> int:
        return self.ctx_cells + self.num_concepts + self.num_actions


@dataclass(frozen=True, eq=False)
class Context:
    """Binary concept-by-action relevance matrix.

    Construction checks shape only; structural invariants (binary
    entries, no empty or duplicate action columns, optional full rank)
    are reported by :func:`validate_context` so that intermediate states
    (e.g. devectorized candidates) can exist before being judged.
    """

    dims: WorldDims
    entries: np.ndarray

    def __post_init__(self):
        arr = freeze(self.entries)
        if arr.shape != (self.dims.num_concepts, self.dims.num_actions):
            raise DimMismatch(
                f"context entries have shape {arr.shape}, expected "
                f"{(self.dims.num_concepts, self.dims.num_actions)}"
            )
        object.__setattr__(self, "entries", arr)


@dataclass(frozen=True, eq=False)
class WorldTuple:
    context: Context
    action_prior: np.ndarray
    concept_prior: np.ndarray

    def __post_init__(self):
        y = freeze(np.atleast_1d(self.action_prior))
        z = freeze(np.atleast_1d(self.concept_prior))
        dims = self.context.dims
        if y.shape != (dims.num_actions,):
            raise DimMismatch(f"action prior has shape {y.shape}, expected ({dims.num_actions},)")
        if z.shape != (dims.num_concepts,):
            raise DimMismatch(f"concept prior has shape {z.shape}, expected ({dims.num_concepts},)")
        object.__setattr__(self, "action_prior", y)
        object.__setattr__(self, "concept_prior", z)

    @property
    def dims(self) -> WorldDims:
        return self.context.dims


def world_equal(a: WorldTuple, b: WorldTuple) -> bool:
    return (
        a.dims == b.dims
        and np.array_equal(a.context.entries, b.context.entries)
        and np.array_equal(a.action_prior, b.action_prior)
        and np.array_equal(a.concept_prior, b.concept_prior)
    )


@dataclass(frozen=True)
class WorldGenConfig:
    """Generation knobs: Bernoulli sparsity and symmetric Dirichlet priors."""

    dims: WorldDims
    sparsity: float
    dirichlet_action: float = 2.0
    dirichlet_concept: float = 2.0
    require_full_rank: bool = True
    max_regen_attempts: int = 200
    regen_mode: str = "column"  # "column" resamples offending columns, "full" redraws the matrix

    def __post_init__(self):
        if not 0.0 < self.sparsity < 1.0:
            raise ConfigError(f"sparsity must be in (0,1), got {self.sparsity}")
        if self.dirichlet_action <= 0 or self.dirichlet_concept <= 0:
            raise ConfigError("Dirichlet parameters must be positive")
        if self.max_regen_attempts < 1:
            raise ConfigError("max_regen_attempts must be >= 1")
        if self.regen_mode not in ("column", "full"):
            raise ConfigError(f"unknown regen_mode {self.regen_mode!r}")


def raw_context_entries(dims: WorldDims, sparsity: float, rng) -> np.ndarray:
    """One unfiltered Bernoulli draw of the context matrix.

    Exposed separately from :func:`sample_context` so the raw entry
    statistics can be checked without the regeneration filter.
    """
    rng = as_rng(rng)
    return (rng.random((dims.num_concepts, dims.num_actions)) < sparsity).astype(float)


def _rank_and_pivots(m: np.ndarray, tol: float = RANK_TOL) -> tuple[int, list[int]]:
    """Rank over the reals via pivoted Gaussian elimination."""
    a = np.array(m, dtype=float)
    rows, cols = a.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        piv = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[piv, c]) <= tol:
            continue
        if piv != r:
            a[[r, piv]] = a[[piv, r]]
        a[r + 1 :] -= np.outer(a[r + 1 :, c] / a[r, c], a[r])
        pivots.append(c)
        r += 1
    return r, pivots


def validate_context(context: Context, require_full_rank: bool = False) -> list[str]:
    """Return every violated invariant by name; empty list means valid."""
    x = context.entries
    c_n, a_n = x.shape
    violations: list[str] = []
    nonbinary = np.argwhere((x != 0.0) & (x != 1.0))
    for c, a in nonbinary:
        violations.append(f"NonBinaryEntry({c},{a})")
    col_sums = x.sum(axis=0)
    for a in np.flatnonzero(col_sums == 0):
        violations.append(f"NoRelevantConcept({a})")
    for a1 in range(a_n):
        for a2 in range(a1 + 1, a_n):
            if np.array_equal(x[:, a1], x[:, a2]):
                violations.append(f"DuplicateColumns({a1},{a2})")
    if require_full_rank and c_n == a_n and not violations:
        rank, _ = _rank_and_pivots(x)
        if rank < a_n:
            violations.append(f"RankDeficient({rank})")
    return violations


def context_ok(context: Context, require_full_rank: bool = False) -> bool:
    return not validate_context(context, require_full_rank)


def _offending_columns(x: np.ndarray, require_full_rank: bool) -> list[int]:
    """Columns to resample: empty, duplicate (keep first), or non-pivot when rank-deficient."""
    c_n, a_n = x.shape
    bad: set[int] = set(np.flatnonzero(x.sum(axis=0) == 0).tolist())
    seen: dict[bytes, int] = {}
    for a in range(a_n):
        key = x[:, a].tobytes()
        if key in seen:
            bad.add(a)
        else:
            seen[key] = a
    if not bad and require_full_rank and c_n == a_n:
        rank, pivots = _rank_and_pivots(x)
        if rank < a_n:
            bad.update(set(range(a_n)) - set(pivots))
    return sorted(bad)


def sample_context(cfg: WorldGenConfig, rng) -> Context:
    """Draw i.i.d. Bernoulli entries, resampling offending columns until valid.

    Raises GenerationExhausted when max_regen_attempts passes leave the
    matrix invalid.
    """
    rng = as_rng(rng)
    dims = cfg.dims
    x = raw_context_entries(dims, cfg.sparsity, rng)
    for _ in range(cfg.max_regen_attempts):
        bad = _offending_columns(x, cfg.require_full_rank)
        if not bad:
            return Context(dims, x)
        if cfg.regen_mode == "column":
            x[:, bad] = rng.random((dims.num_concepts, len(bad))) < cfg.sparsity
        else:
            x = raw_context_entries(dims, cfg.sparsity, rng)
    raise GenerationExhausted(
        f"no valid {dims.num_concepts}x{dims.num_actions} context within "
        f"{cfg.max_regen_attempts} regeneration attempts"
    )


def sample_simplex(dim: int, delta: float, rng) -> np.ndarray:
    """Symmetric Dirichlet(delta) draw via the gamma-ratio construction."""
    if dim < 2:
        raise ConfigError(f"simplex dimension must be >= 2, got {dim}")
    if delta <= 0:
        raise ConfigError(f"Dirichlet parameter must be positive, got {delta}")
    rng = as_rng(rng)
    g = rng.gamma(delta, 1.0, size=dim)
    total = g.sum()
    while total == 0.0:  # only reachable through extreme underflow at tiny delta
        g = rng.gamma(delta, 1.0, size=dim)
        total = g.sum()
    return g / total


def make_world(cfg: WorldGenConfig, rng) -> WorldTuple:
    """Context then action prior then concept prior, off one RNG stream."""
    rng = as_rng(rng)
    context = sample_context(cfg, rng)
    y = sample_simplex(cfg.dims.num_actions, cfg.dirichlet_action, rng)
    z = sample_simplex(cfg.dims.num_concepts, cfg.dirichlet_concept, rng)
    return WorldTuple(context, y, z)


def vectorize(world: WorldTuple) -> np.ndarray:
    """Column-major context entries, then action prior, then concept prior."""
    return np.concatenate(
        [
            world.context.entries.flatten(order="F"),
            world.action_prior,
            world.concept_prior,
        ]
    )


def devectorize(vec: np.ndarray, dims: WorldDims) -> WorldTuple:
    """Exact inverse of :func:`vectorize`; performs no clamping or validation."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (dims.vec_len,):
        raise DimMismatch(f"vector has shape {vec.shape}, expected ({dims.vec_len},)")
    c_n, a_n = dims.num_concepts, dims.num_actions
    x = vec[: dims.ctx_cells].reshape((c_n, a_n), order="F")
    y = vec[dims.ctx_cells : dims.ctx_cells + a_n]
    z = vec[dims.ctx_cells + a_n :]
    return WorldTuple(Context(dims, x), y, z)


def ctx_vec_index(dims: WorldDims, concept: int, action: int) -> int:
    """Flat vector coordinate of context entry (concept, action)."""
    return action * dims.num_concepts + concept


def example_nested_world() -> WorldTuple:
    """Bundled 3x3 example with nested concept sets and uniform priors.

    Action 0 is described by concept 0 alone, action 1 by concepts
    {0,1}, action 2 by {0,1,2}. Direct normalization of this context is
    ambiguous for the middle action, which makes it the standard demo
    for rational versus naive coding.
    """
    dims = WorldDims(3, 3)
    x = np.array([[1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    third = np.full(3, 1.0 / 3.0)
    return WorldTuple(Context(dims, x), third.copy(), third.copy())


def world_to_dict(world: WorldTuple, seed: int | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "num_concepts": world.dims.num_concepts,
        "num_actions": world.dims.num_actions,
        "context": [[int(v) for v in row] for row in world.context.entries],
        "action_prior": [float(v) for v in world.action_prior],
        "concept_prior": [float(v) for v in world.concept_prior],
        "seed": seed,
    }


def world_from_dict(data: dict) -> WorldTuple:
    dims = WorldDims(int(data["num_concepts"]), int(data["num_actions"]))
    context = Context(dims, np.array(data["context"], dtype=float))
    y = check_probability_vector(data["action_prior"], name="action_prior")
    z = check_probability_vector(data["concept_prior"], name="concept_prior")
    return WorldTuple(context, y, z)


def save_world(world: WorldTuple, path, seed: int | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(world_to_dict(world, seed=seed), fh, indent=2)
        fh.write("\n")


def load_world(path) -> WorldTuple:
    with open(path) as fh:
        return world_from_dict(json.load(fh))
