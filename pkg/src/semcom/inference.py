"""Bayesian recovery of a hidden world from a noisy empirical decoder.

The sampler is a two-stage Metropolis-Hastings chain. Stage 1 walks the
context entries one by one with deterministic flip proposals (symmetric,
so no Hastings correction), auto-rejecting candidates that break the
context support rules (empty or duplicate action columns). Stage 2
proposes whole prior vectors on the probability simplex with an exact
density-ratio correction. The target is the posterior built from a
Gaussian observation model around either the true converged decoder
("icr" likelihood, one full reasoning recursion per evaluation) or a
trained linear model ("ilcr" likelihood, one matrix-vector product, with
incremental residual updates when a single coordinate changes).

Exhaustive enumeration and grid-quadrature oracles for small instances
live here too; they are the ground truth the chain is tested against.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_rng
from .errors import (
    ConfigError,
    DegenerateColumn,
    DegenerateRow,
    DimMismatch,
    EmptyTrace,
    TooLarge,
)
from .game import EmpiricalDecoder
from .lcr import LinearModel
from .metrics import (
    OpCount,
    cr_step_cost,
    icr_eval_cost,
    ilcr_eval_cost_block,
    ilcr_eval_cost_flip,
    ilcr_eval_cost_full,
)
from .reasoning import _cr_solve
from .world import (
    Context,
    WorldDims,
    WorldGenConfig,
    WorldTuple,
    context_ok,
    ctx_vec_index,
    make_world,
    validate_context,
    vectorize,
)

KIND_ICR = "icr"
KIND_ILCR = "ilcr"

RULE_LAST = "last_state"
RULE_MEAN_ROUND = "posterior_mean_round"
RULE_MARGINAL_MODE = "marginal_mode"

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class PriorConfig:
    """Independent priors on context entries and the two simplex vectors."""

    x_kind: str = "bernoulli"  # or "uniform"
    x_sparsity: float = 0.3
    y_kind: str = "dirichlet"  # or "uniform"
    y_delta: float = 2.0
    z_kind: str = "dirichlet"
    z_delta: float = 2.0

    def __post_init__(self):
        if self.x_kind not in ("bernoulli", "uniform"):
            raise ConfigError(f"unknown x prior {self.x_kind!r}")
        if self.x_kind == "bernoulli" and not 0.0 < self.x_sparsity < 1.0:
            raise ConfigError("Bernoulli sparsity must be in (0,1)")
        for kind, delta, name in (
            (self.y_kind, self.y_delta, "y"),
            (self.z_kind, self.z_delta, "z"),
        ):
            if kind not in ("dirichlet", "uniform"):
                raise ConfigError(f"unknown {name} prior {kind!r}")
            if kind == "dirichlet" and delta <= 0:
                raise ConfigError(f"{name} Dirichlet parameter must be positive")


@dataclass(frozen=True)
class ProposalConfig:
    """Simplex proposal family; context proposals are always entry flips."""

    simplex_kind: str = "independent_dirichlet"  # or "local_dirichlet"
    delta_prop: float = 1.0
    kappa: float = 50.0

    def __post_init__(self):
        if self.simplex_kind not in ("independent_dirichlet", "local_dirichlet"):
            raise ConfigError(f"unknown simplex proposal {self.simplex_kind!r}")
        if self.delta_prop <= 0 or self.kappa <= 0:
            raise ConfigError("proposal parameters must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    n_outer: int
    k1: int = 10
    k2: int = 10
    sigma: float = 0.05
    burn_in: int | None = None  # None means 20% of recorded states
    seed: int | None = None
    blocks: tuple[str, ...] = ("x", "y", "z")

    def __post_init__(self):
        if self.n_outer < 1 or self.k1 < 1 or self.k2 < 1:
            raise ConfigError("n_outer, k1 and k2 must all be >= 1")
        if self.sigma <= 0:
            raise ConfigError("sampler needs a positive noise std")
        if self.burn_in is not None and not 0 <= self.burn_in < self.n_outer:
            raise ConfigError("burn_in must be in [0, n_outer)")
        bad = set(self.blocks) - {"x", "y", "z"}
        if bad or not self.blocks:
            raise ConfigError(f"blocks must be a nonempty subset of x,y,z, got {self.blocks}")

    @property
    def resolved_burn_in(self) -> int:
        return self.burn_in if self.burn_in is not None else self.n_outer // 5


@dataclass
class ChainTrace:
    """Recorded chain: one world snapshot per outer iteration plus diagnostics.

    proposal_counts tallies every proposal considered per block;
    n_evals counts actual likelihood evaluations (auto-rejected invalid
    candidates never reach the likelihood). op_count accumulates the
    analytic cost of those evaluations.
    """

    states: list[WorldTuple]
    log_likelihoods: np.ndarray
    accept_counts: dict[str, int]
    proposal_counts: dict[str, int]
    n_evals: int
    op_count: OpCount
    burn_in: int
    events: list[tuple] | None = None

    def post_burn_in(self) -> list[WorldTuple]:
        return self.states[self.burn_in :]

    def x_samples(self) -> np.ndarray:
        return np.stack([w.context.entries for w in self.post_burn_in()])

    def prior_samples(self) -> tuple[np.ndarray, np.ndarray]:
        states = self.post_burn_in()
        return (
            np.stack([w.action_prior for w in states]),
            np.stack([w.concept_prior for w in states]),
        )

    def acceptance_rates(self) -> dict[str, float]:
        return {
            k: (self.accept_counts[k] / n if (n := self.proposal_counts[k]) else 0.0)
            for k in self.proposal_counts
        }


# ---------------------------------------------------------------------------
# Densities


def _dirichlet_logpdf(p: np.ndarray, alpha) -> float:
    p = np.asarray(p, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), p.shape)
    if np.any(p <= 0):
        return _NEG_INF
    return float(
        math.lgamma(alpha.sum())
        - sum(math.lgamma(a) for a in alpha)
        + np.sum((alpha - 1.0) * np.log(p))
    )


def log_prior(world: WorldTuple, cfg: PriorConfig) -> float:
    """Sum of independent log densities; uniform pieces contribute 0."""
    total = 0.0
    if cfg.x_kind == "bernoulli":
        ones = float(world.context.entries.sum())
        zeros = world.dims.ctx_cells - ones
        total += ones * math.log(cfg.x_sparsity) + zeros * math.log(1.0 - cfg.x_sparsity)
    if cfg.y_kind == "dirichlet":
        total += _dirichlet_logpdf(world.action_prior, cfg.y_delta)
    if cfg.z_kind == "dirichlet":
        total += _dirichlet_logpdf(world.concept_prior, cfg.z_delta)
    return total


def _entry_flip_log_prior_delta(cfg: PriorConfig, new_value: float) -> float:
    if cfg.x_kind != "bernoulli":
        return 0.0
    step = math.log(cfg.x_sparsity) - math.log(1.0 - cfg.x_sparsity)
    return step if new_value == 1.0 else -step


def _simplex_log_prior(vec, kind, delta) -> float:
    return _dirichlet_logpdf(vec, delta) if kind == "dirichlet" else 0.0


def mh_accept(log_target_ratio: float, log_proposal_correction: float, rng) -> bool:
    """Accept with probability min(1, exp(ratio + correction))."""
    total = log_target_ratio + log_proposal_correction
    if total >= 0:
        return True
    if total == _NEG_INF:
        return False
    return math.log(as_rng(rng).random()) < total


# ---------------------------------------------------------------------------
# Likelihood engines


def _as_matrix(r_bar) -> np.ndarray:
    if isinstance(r_bar, EmpiricalDecoder):
        return np.asarray(r_bar.entries, dtype=float)
    return np.asarray(r_bar, dtype=float)


def log_likelihood_icr(
    world: WorldTuple,
    r_bar,
    sigma: float,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    tol: float = 1e-8,
    max_iters: int = 500,
) -> float:
    """Gaussian log likelihood around the converged decoder, constant dropped.

    Invalid worlds (broken context support) and worlds where the
    recursion degenerates numerically score -inf.
    """
    r_bar = _as_matrix(r_bar)
    if r_bar.shape != world.context.entries.shape:
        raise DimMismatch("observation shape disagrees with the world")
    if not context_ok(world.context):
        return _NEG_INF
    try:
        _, r_star, _, _ = _cr_solve(
            world.context.entries,
            world.action_prior,
            world.concept_prior,
            theta_s,
            theta_r,
            tol,
            max_iters,
        )
    except (DegenerateColumn, DegenerateRow):
        return _NEG_INF
    ss = float(np.sum((r_bar - r_star) ** 2))
    if sigma == 0:
        return 0.0 if ss == 0.0 else _NEG_INF
    return -ss / (2.0 * sigma**2)


def log_likelihood_ilcr(t_vec, r_bar_vec, model, sigma: float) -> float:
    """Gaussian log likelihood of the linear model's residual, constant dropped."""
    phi = model.collapse() if isinstance(model, LinearModel) else np.asarray(model, dtype=float)
    t_vec = np.asarray(t_vec, dtype=float)
    r_bar_vec = np.asarray(r_bar_vec, dtype=float)
    if t_vec.shape != (phi.shape[1],) or r_bar_vec.shape != (phi.shape[0],):
        raise DimMismatch("vector shapes disagree with the model matrix")
    ss = float(np.sum((r_bar_vec - phi @ t_vec) ** 2))
    if sigma == 0:
        return 0.0 if ss == 0.0 else _NEG_INF
    return -ss / (2.0 * sigma**2)


class _IcrEngine:
    kind = KIND_ICR

    def __init__(self, r_bar, sigma, theta_s, theta_r, tol, max_iters):
        self.r_bar = r_bar
        self.half_inv_var = 1.0 / (2.0 * sigma**2)
        self.theta_s = theta_s
        self.theta_r = theta_r
        self.tol = tol
        self.max_iters = max_iters
        self.dims = WorldDims(*r_bar.shape)
        self._base_cost = icr_eval_cost(self.dims, 0)
        self._step_cost = cr_step_cost(self.dims)

    def evaluate(self, x, y, z, trace):
        try:
            _, r_star, iters, _ = _cr_solve(
                x, y, z, self.theta_s, self.theta_r, self.tol, self.max_iters
            )
        except (DegenerateColumn, DegenerateRow):
            return _NEG_INF, None
        trace.op_count += self._base_cost + self._step_cost.scaled(iters)
        trace.n_evals += 1
        diff = (self.r_bar - r_star).ravel()
        ll = -float(diff @ diff) * self.half_inv_var
        return ll, None


class _IlcrEngine:
    """Keeps the residual of the current state for incremental updates."""

    kind = KIND_ILCR

    def __init__(self, r_bar, sigma, model, dims):
        self.phi = model.collapse() if isinstance(model, LinearModel) else np.asarray(model, float)
        if self.phi.shape != (dims.ctx_cells, dims.vec_len):
            raise DimMismatch("model shape disagrees with the observation dims")
        self.r_bar_vec = r_bar.flatten(order="F")
        self.half_inv_var = 1.0 / (2.0 * sigma**2)
        self.dims = dims
        self._full_cost = ilcr_eval_cost_full(dims)
        self._flip_cost = ilcr_eval_cost_flip(dims)
        self._block_cost = {
            dims.num_actions: ilcr_eval_cost_block(dims, dims.num_actions),
            dims.num_concepts: ilcr_eval_cost_block(dims, dims.num_concepts),
        }

    def _ll(self, res):
        return -float(res @ res) * self.half_inv_var

    def evaluate_full(self, t_vec, trace):
        res = self.r_bar_vec - self.phi @ t_vec
        trace.op_count += self._full_cost
        trace.n_evals += 1
        return self._ll(res), res

    def evaluate_flip(self, res, coord, delta, trace):
        new_res = res - delta * self.phi[:, coord]
        trace.op_count += self._flip_cost
        trace.n_evals += 1
        return self._ll(new_res), new_res

    def evaluate_block(self, res, sl, old_block, new_block, trace):
        new_res = res - self.phi[:, sl] @ (new_block - old_block)
        trace.op_count += self._block_cost[sl.stop - sl.start]
        trace.n_evals += 1
        return self._ll(new_res), new_res


# ---------------------------------------------------------------------------
# Proposals


def _propose_simplex(current, proposals: ProposalConfig, rng) -> np.ndarray:
    if proposals.simplex_kind == "independent_dirichlet":
        alpha = np.full(len(current), proposals.delta_prop)
    else:
        alpha = proposals.kappa * current + 0.1
    g = rng.gamma(alpha, 1.0)
    total = g.sum()
    while total == 0.0:
        g = rng.gamma(alpha, 1.0)
        total = g.sum()
    return g / total


def _proposal_log_correction(current, candidate, proposals: ProposalConfig) -> float:
    """log q(current | candidate) - log q(candidate | current)."""
    if proposals.simplex_kind == "independent_dirichlet":
        if proposals.delta_prop == 1.0:
            return 0.0
        alpha = proposals.delta_prop
        return _dirichlet_logpdf(current, alpha) - _dirichlet_logpdf(candidate, alpha)
    fwd = proposals.kappa * current + 0.1
    rev = proposals.kappa * candidate + 0.1
    return _dirichlet_logpdf(current, rev) - _dirichlet_logpdf(candidate, fwd)


def _flip_keeps_context_valid(x: np.ndarray, c: int, a: int, new_value: float) -> bool:
    col = x[:, a].copy()
    col[c] = new_value
    if not col.any():
        return False
    same = (x == col[:, None]).all(axis=0)
    same[a] = False
    return not same.any()


# ---------------------------------------------------------------------------
# The chain


class _Chain:
    def __init__(self, world: WorldTuple, engine, trace: ChainTrace):
        self.x = world.context.entries.copy()
        self.y = world.action_prior.copy()
        self.z = world.concept_prior.copy()
        self.dims = world.dims
        self.engine = engine
        if engine.kind == KIND_ILCR:
            self.t_vec = vectorize(world)
            self.loglik, self.res = engine.evaluate_full(self.t_vec, trace)
        else:
            self.t_vec = None
            self.res = None
            self.loglik, _ = engine.evaluate(self.x, self.y, self.z, trace)

    def snapshot(self) -> WorldTuple:
        return WorldTuple(Context(self.dims, self.x.copy()), self.y.copy(), self.z.copy())

    def candidate_flip(self, c, a, new_value, trace):
        if self.engine.kind == KIND_ILCR:
            coord = ctx_vec_index(self.dims, c, a)
            delta = new_value - self.x[c, a]
            return self.engine.evaluate_flip(self.res, coord, delta, trace)
        self.x[c, a] = new_value
        ll, _ = self.engine.evaluate(self.x, self.y, self.z, trace)
        self.x[c, a] = 1.0 - new_value
        return ll, None

    def commit_flip(self, c, a, new_value, ll, res):
        self.x[c, a] = new_value
        self.loglik = ll
        if self.engine.kind == KIND_ILCR:
            self.res = res
            self.t_vec[ctx_vec_index(self.dims, c, a)] = new_value

    def candidate_vector(self, name, cand, trace):
        if self.engine.kind == KIND_ILCR:
            cells = self.dims.ctx_cells
            if name == "y":
                sl = slice(cells, cells + self.dims.num_actions)
                old = self.y
            else:
                sl = slice(cells + self.dims.num_actions, self.dims.vec_len)
                old = self.z
            return self.engine.evaluate_block(self.res, sl, old, cand, trace)
        if name == "y":
            ll, _ = self.engine.evaluate(self.x, cand, self.z, trace)
        else:
            ll, _ = self.engine.evaluate(self.x, self.y, cand, trace)
        return ll, None

    def commit_vector(self, name, cand, ll, res):
        if name == "y":
            self.y = cand
        else:
            self.z = cand
        self.loglik = ll
        if self.engine.kind == KIND_ILCR:
            self.res = res
            cells = self.dims.ctx_cells
            if name == "y":
                self.t_vec[cells : cells + self.dims.num_actions] = cand
            else:
                self.t_vec[cells + self.dims.num_actions :] = cand


def _make_engine(kind, r_bar, cfg: SamplerConfig, model, theta_s, theta_r, cr_tol, cr_max_iters):
    if kind == KIND_ICR:
        return _IcrEngine(r_bar, cfg.sigma, theta_s, theta_r, cr_tol, cr_max_iters)
    if kind == KIND_ILCR:
        if model is None:
            raise ConfigError("the ilcr likelihood requires a trained linear model")
        return _IlcrEngine(r_bar, cfg.sigma, model, WorldDims(*r_bar.shape))
    raise ConfigError(f"unknown likelihood kind {kind!r}")


def _random_init(dims: WorldDims, priors: PriorConfig, rng) -> WorldTuple:
    s = priors.x_sparsity if priors.x_kind == "bernoulli" else 0.5
    gen = WorldGenConfig(
        dims,
        sparsity=s,
        dirichlet_action=priors.y_delta if priors.y_kind == "dirichlet" else 1.0,
        dirichlet_concept=priors.z_delta if priors.z_kind == "dirichlet" else 1.0,
        require_full_rank=False,
    )
    return make_world(gen, rng)


def _stage1_pass(chain: _Chain, priors, rng, trace, outer_iter):
    c_n, a_n = chain.x.shape
    for c in range(c_n):
        for a in range(a_n):
            new_value = 1.0 - chain.x[c, a]
            trace.proposal_counts["x"] += 1
            accepted = False
            if _flip_keeps_context_valid(chain.x, c, a, new_value):
                ll_cand, res_cand = chain.candidate_flip(c, a, new_value, trace)
                ratio = ll_cand - chain.loglik + _entry_flip_log_prior_delta(priors, new_value)
                if mh_accept(ratio, 0.0, rng):
                    chain.commit_flip(c, a, new_value, ll_cand, res_cand)
                    trace.accept_counts["x"] += 1
                    accepted = True
            if trace.events is not None:
                trace.events.append((outer_iter, 1, f"x[{c},{a}]", int(accepted), chain.loglik))


def _stage2_pass(chain: _Chain, priors, proposals, cfg, rng, trace, outer_iter):
    for name in ("y", "z"):
        if name not in cfg.blocks:
            continue
        current = chain.y if name == "y" else chain.z
        kind = priors.y_kind if name == "y" else priors.z_kind
        delta = priors.y_delta if name == "y" else priors.z_delta
        cand = _propose_simplex(current, proposals, rng)
        trace.proposal_counts[name] += 1
        ll_cand, res_cand = chain.candidate_vector(name, cand, trace)
        prior_delta = _simplex_log_prior(cand, kind, delta) - _simplex_log_prior(
            current, kind, delta
        )
        correction = _proposal_log_correction(current, cand, proposals)
        accepted = mh_accept(ll_cand - chain.loglik + prior_delta, correction, rng)
        if accepted:
            chain.commit_vector(name, cand, ll_cand, res_cand)
            trace.accept_counts[name] += 1
        if trace.events is not None:
            trace.events.append((outer_iter, 2, name, int(accepted), chain.loglik))


def two_stage_mh(
    r_bar,
    kind: str,
    priors: PriorConfig,
    proposals: ProposalConfig,
    cfg: SamplerConfig,
    model=None,
    init: WorldTuple | None = None,
    rng=None,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    cr_tol: float = 1e-8,
    cr_max_iters: int = 500,
    record_events: bool = False,
) -> ChainTrace:
    """Run the two-stage chain and record one state per outer iteration.

    Each outer iteration does k1 full sweeps over the context entries,
    then k2 rounds of whole-vector prior proposals. Blocks left out of
    cfg.blocks stay frozen at their initial values (useful for
    conditioning on known components).
    """
    r_bar = _as_matrix(r_bar)
    dims = WorldDims(*r_bar.shape)
    rng = as_rng(rng if rng is not None else cfg.seed)
    trace = ChainTrace(
        states=[],
        log_likelihoods=np.zeros(cfg.n_outer),
        accept_counts={"x": 0, "y": 0, "z": 0},
        proposal_counts={"x": 0, "y": 0, "z": 0},
        n_evals=0,
        op_count=OpCount(),
        burn_in=cfg.resolved_burn_in,
        events=[] if record_events else None,
    )
    engine = _make_engine(kind, r_bar, cfg, model, theta_s, theta_r, cr_tol, cr_max_iters)
    if init is None:
        init = _random_init(dims, priors, rng)
    elif init.dims != dims:
        raise DimMismatch("initial world dims disagree with the observation")
    violations = validate_context(init.context)
    if violations:
        raise ConfigError(f"initial context violates support rules: {violations}")
    chain = _Chain(init, engine, trace)
    for outer in range(cfg.n_outer):
        if "x" in cfg.blocks:
            for _ in range(cfg.k1):
                _stage1_pass(chain, priors, rng, trace, outer)
        if "y" in cfg.blocks or "z" in cfg.blocks:
            for _ in range(cfg.k2):
                _stage2_pass(chain, priors, proposals, cfg, rng, trace, outer)
        trace.states.append(chain.snapshot())
        trace.log_likelihoods[outer] = chain.loglik
    return trace


def stage1_sweep(world, r_bar, kind, priors, cfg, rng, model=None, **reason_kw):
    """One full pass of entry flips; returns (updated world, trace)."""
    r_bar = _as_matrix(r_bar)
    rng = as_rng(rng)
    trace = ChainTrace(
        states=[],
        log_likelihoods=np.zeros(0),
        accept_counts={"x": 0, "y": 0, "z": 0},
        proposal_counts={"x": 0, "y": 0, "z": 0},
        n_evals=0,
        op_count=OpCount(),
        burn_in=0,
    )
    engine = _make_engine(kind, r_bar, cfg, model, **_reason_defaults(reason_kw))
    chain = _Chain(world, engine, trace)
    _stage1_pass(chain, priors, rng, trace, 0)
    return chain.snapshot(), trace


def stage2_sweep(world, r_bar, kind, priors, proposals, cfg, rng, model=None, **reason_kw):
    """One round of whole-vector prior proposals; returns (updated world, trace)."""
    r_bar = _as_matrix(r_bar)
    rng = as_rng(rng)
    trace = ChainTrace(
        states=[],
        log_likelihoods=np.zeros(0),
        accept_counts={"x": 0, "y": 0, "z": 0},
        proposal_counts={"x": 0, "y": 0, "z": 0},
        n_evals=0,
        op_count=OpCount(),
        burn_in=0,
    )
    engine = _make_engine(kind, r_bar, cfg, model, **_reason_defaults(reason_kw))
    chain = _Chain(world, engine, trace)
    _stage2_pass(chain, priors, proposals, cfg, rng, trace, 0)
    return chain.snapshot(), trace


def _reason_defaults(kw) -> dict:
    out = {"theta_s": 1.1, "theta_r": 1.1, "cr_tol": 1e-8, "cr_max_iters": 500}
    unknown = set(kw) - set(out)
    if unknown:
        raise ConfigError(f"unknown reasoning options {sorted(unknown)}")
    out.update(kw)
    return out


# ---------------------------------------------------------------------------
# Point estimation


def point_estimate(trace: ChainTrace, rule: str = RULE_MEAN_ROUND) -> WorldTuple:
    states = trace.post_burn_in()
    if not states:
        raise EmptyTrace("no post-burn-in states to estimate from")
    if rule == RULE_LAST:
        return states[-1]
    xs = np.stack([w.context.entries for w in states])
    ys = np.stack([w.action_prior for w in states])
    zs = np.stack([w.concept_prior for w in states])
    dims = states[-1].dims
    if rule == RULE_MEAN_ROUND:
        x = (xs.mean(axis=0) >= 0.5).astype(float)
        y = ys.mean(axis=0)
        z = zs.mean(axis=0)
    elif rule == RULE_MARGINAL_MODE:
        x = (xs.mean(axis=0) >= 0.5).astype(float)
        y = np.array([_bin_mode(ys[:, i]) for i in range(ys.shape[1])])
        z = np.array([_bin_mode(zs[:, i]) for i in range(zs.shape[1])])
    else:
        raise ConfigError(f"unknown estimation rule {rule!r}")
    return WorldTuple(Context(dims, x), y / y.sum(), z / z.sum())


def _bin_mode(samples, width: float = 0.05) -> float:
    n_bins = int(round(1.0 / width))
    idx = np.clip((np.asarray(samples) / width).astype(int), 0, n_bins - 1)
    best = int(np.argmax(np.bincount(idx, minlength=n_bins)))
    return (best + 0.5) * width


# ---------------------------------------------------------------------------
# Brute-force oracles


def _oracle_loglik(x, y, z, r_bar, sigma, kind, model, theta_s, theta_r, tol, max_iters):
    dims = WorldDims(*r_bar.shape)
    world = WorldTuple(Context(dims, x), y, z)
    if kind == KIND_ICR:
        return log_likelihood_icr(
            world, r_bar, sigma, theta_s=theta_s, theta_r=theta_r, tol=tol, max_iters=max_iters
        )
    phi = model.collapse() if isinstance(model, LinearModel) else np.asarray(model, float)
    return log_likelihood_ilcr(vectorize(world), r_bar.flatten(order="F"), phi, sigma)


def enumerate_entry_posterior(
    r_bar,
    world: WorldTuple,
    pos: tuple[int, int],
    sigma: float,
    kind: str = KIND_ICR,
    priors: PriorConfig = PriorConfig(),
    model=None,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    tol: float = 1e-8,
    max_iters: int = 500,
) -> float:
    """Exact P(entry = 1 | observation, everything else as given)."""
    r_bar = _as_matrix(r_bar)
    c, a = pos
    logw = []
    for value in (0.0, 1.0):
        x = world.context.entries.copy()
        x[c, a] = value
        ctx = Context(world.dims, x)
        if not context_ok(ctx):
            logw.append(_NEG_INF)
            continue
        cand = WorldTuple(ctx, world.action_prior, world.concept_prior)
        ll = _oracle_loglik(
            x, world.action_prior, world.concept_prior, r_bar, sigma, kind, model,
            theta_s, theta_r, tol, max_iters,
        )
        logw.append(ll + log_prior(cand, priors))
    if logw[0] == _NEG_INF and logw[1] == _NEG_INF:
        raise ConfigError("both entry values give an invalid context")
    m = max(logw)
    w0, w1 = (math.exp(v - m) if v > _NEG_INF else 0.0 for v in logw)
    return w1 / (w0 + w1)


def enumerate_context_posterior(
    r_bar,
    action_prior,
    concept_prior,
    sigma: float,
    kind: str = KIND_ICR,
    priors: PriorConfig = PriorConfig(),
    model=None,
    max_cells: int = 12,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    tol: float = 1e-8,
    max_iters: int = 500,
):
    """Exact posterior over all valid contexts with the priors held fixed.

    Returns (patterns, probs, marginals): the valid context matrices, their
    normalized posterior weights, and the per-entry P(entry = 1) table.
    """
    r_bar = _as_matrix(r_bar)
    dims = WorldDims(*r_bar.shape)
    if dims.ctx_cells > max_cells:
        raise TooLarge(f"{dims.ctx_cells} cells exceed the enumeration budget {max_cells}")
    y = np.asarray(action_prior, dtype=float)
    z = np.asarray(concept_prior, dtype=float)
    patterns, logw = [], []
    for bits in itertools.product((0.0, 1.0), repeat=dims.ctx_cells):
        x = np.array(bits).reshape(dims.num_concepts, dims.num_actions)
        ctx = Context(dims, x)
        if not context_ok(ctx):
            continue
        world = WorldTuple(ctx, y, z)
        ll = _oracle_loglik(x, y, z, r_bar, sigma, kind, model, theta_s, theta_r, tol, max_iters)
        patterns.append(x)
        logw.append(ll + log_prior(world, priors))
    logw = np.array(logw)
    m = logw.max()
    if m == _NEG_INF:
        raise ConfigError("no valid context has positive posterior mass")
    probs = np.exp(logw - m)
    probs /= probs.sum()
    marginals = np.tensordot(probs, np.stack(patterns), axes=1)
    return np.stack(patterns), probs, marginals


def simplex_grid(dim: int, step: float):
    """All probability vectors with coordinates on a step grid."""
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ConfigError("grid step must divide 1")
    for combo in itertools.combinations(range(n + dim - 1), dim - 1):
        parts = []
        prev = -1
        for pos in combo:
            parts.append(pos - prev - 1)
            prev = pos
        parts.append(n + dim - 2 - prev)
        yield np.array(parts, dtype=float) / n


def map_oracle(
    r_bar,
    sigma: float,
    dims: WorldDims,
    kind: str = KIND_ICR,
    priors: PriorConfig = PriorConfig(),
    grid_step: float = 0.05,
    model=None,
    max_cells: int = 12,
    max_evals: int = 200_000,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    tol: float = 1e-8,
    max_iters: int = 500,
) -> WorldTuple:
    """Exhaustive posterior maximization over contexts and a simplex grid."""
    r_bar = _as_matrix(r_bar)
    if dims.ctx_cells > max_cells:
        raise TooLarge(f"{dims.ctx_cells} cells exceed the enumeration budget {max_cells}")
    contexts = []
    for bits in itertools.product((0.0, 1.0), repeat=dims.ctx_cells):
        x = np.array(bits).reshape(dims.num_concepts, dims.num_actions)
        if context_ok(Context(dims, x)):
            contexts.append(x)
    y_grid = list(simplex_grid(dims.num_actions, grid_step))
    z_grid = list(simplex_grid(dims.num_concepts, grid_step))
    n_evals = len(contexts) * len(y_grid) * len(z_grid)
    if n_evals > max_evals:
        raise TooLarge(f"{n_evals} grid evaluations exceed the budget {max_evals}")
    best, best_score = None, _NEG_INF
    for x in contexts:
        for y in y_grid:
            for z in z_grid:
                world = WorldTuple(Context(dims, x), y, z)
                try:
                    ll = _oracle_loglik(
                        x, y, z, r_bar, sigma, kind, model, theta_s, theta_r, tol, max_iters
                    )
                except (DegenerateColumn, DegenerateRow):
                    continue
                score = ll + log_prior(world, priors)
                if score > best_score:
                    best, best_score = world, score
    if best is None:
        raise ConfigError("no grid point had positive posterior mass")
    return best


# ---------------------------------------------------------------------------
# Estimator wrapper and trace files


class TwoStageMHSampler(BaseEstimator):
    """sklearn-style front end: fit(observation matrix) -> trace_ and estimate_."""

    def __init__(
        self,
        kind=KIND_ICR,
        sigma=0.05,
        n_outer=100,
        k1=10,
        k2=10,
        burn_in=None,
        blocks=("x", "y", "z"),
        x_prior="bernoulli",
        x_sparsity=0.3,
        y_prior="dirichlet",
        y_delta=2.0,
        z_prior="dirichlet",
        z_delta=2.0,
        proposal="independent_dirichlet",
        proposal_delta=1.0,
        proposal_kappa=50.0,
        theta_s=1.1,
        theta_r=1.1,
        cr_tol=1e-8,
        cr_max_iters=500,
        model=None,
        estimate_rule=RULE_MEAN_ROUND,
        random_state=0,
    ):
        self.kind = kind
        self.sigma = sigma
        self.n_outer = n_outer
        self.k1 = k1
        self.k2 = k2
        self.burn_in = burn_in
        self.blocks = blocks
        self.x_prior = x_prior
        self.x_sparsity = x_sparsity
        self.y_prior = y_prior
        self.y_delta = y_delta
        self.z_prior = z_prior
        self.z_delta = z_delta
        self.proposal = proposal
        self.proposal_delta = proposal_delta
        self.proposal_kappa = proposal_kappa
        self.theta_s = theta_s
        self.theta_r = theta_r
        self.cr_tol = cr_tol
        self.cr_max_iters = cr_max_iters
        self.model = model
        self.estimate_rule = estimate_rule
        self.random_state = random_state

    def fit(self, X, y=None, init: WorldTuple | None = None):
        """X is the observed (possibly noisy) decoder matrix."""
        priors = PriorConfig(
            x_kind=self.x_prior,
            x_sparsity=self.x_sparsity,
            y_kind=self.y_prior,
            y_delta=self.y_delta,
            z_kind=self.z_prior,
            z_delta=self.z_delta,
        )
        proposals = ProposalConfig(
            simplex_kind=self.proposal,
            delta_prop=self.proposal_delta,
            kappa=self.proposal_kappa,
        )
        cfg = SamplerConfig(
            n_outer=self.n_outer,
            k1=self.k1,
            k2=self.k2,
            sigma=self.sigma,
            burn_in=self.burn_in,
            seed=self.random_state,
            blocks=tuple(self.blocks),
        )
        self.trace_ = two_stage_mh(
            X,
            self.kind,
            priors,
            proposals,
            cfg,
            model=self.model,
            init=init,
            theta_s=self.theta_s,
            theta_r=self.theta_r,
            cr_tol=self.cr_tol,
            cr_max_iters=self.cr_max_iters,
        )
        self.estimate_ = point_estimate(self.trace_, self.estimate_rule)
        return self


def save_trace_csv(trace: ChainTrace, path) -> None:
    """Per-proposal event log; requires the chain to have recorded events."""
    if trace.events is None:
        raise ConfigError("trace was run without record_events=True")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "stage", "block", "accepted", "log_likelihood"])
        for ev in trace.events:
            writer.writerow([ev[0], ev[1], ev[2], ev[3], repr(ev[4])])


def save_states_json(trace: ChainTrace, path) -> None:
    import json

    from .world import world_to_dict

    doc = {
        "format_version": 1,
        "burn_in": trace.burn_in,
        "states": [world_to_dict(w) for w in trace.states],
        "log_likelihoods": [float(v) for v in trace.log_likelihoods],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
