"""Semantic communication toolkit.

Forward direction: generate worlds (binary context matrices plus priors),
derive naive or rational coders, and simulate referential games. Inverse
direction: recover a hidden world from a noisy empirical decoder with a
two-stage Metropolis-Hastings sampler, either through the full reasoning
recursion or through a trained linear surrogate of it.
"""

from .errors import (
    ConfigError,
    DegenerateColumn,
    DegenerateDistribution,
    DegenerateRow,
    DimMismatch,
    EmptyTrace,
    GenerationExhausted,
    InvalidContext,
    NonConvergence,
    NonFiniteLoss,
    NotNormalized,
    NotReached,
    SemcomError,
    TooLarge,
    ZeroVector,
)
from .game import (
    EmpiricalDecoder,
    GameRecord,
    NoiseModel,
    SampleSet,
    collect_samples,
    empirical_decoder_from_samples,
    min_symbols_for_effectiveness,
    multi_symbol_round,
    play_round,
    synth_empirical_decoder,
)
from .inference import (
    ChainTrace,
    PriorConfig,
    ProposalConfig,
    SamplerConfig,
    TwoStageMHSampler,
    enumerate_context_posterior,
    enumerate_entry_posterior,
    log_likelihood_icr,
    log_likelihood_ilcr,
    log_prior,
    map_oracle,
    mh_accept,
    point_estimate,
    two_stage_mh,
)
from .lcr import (
    LCRRegressor,
    LinearModel,
    gen_training_set,
    lcr_apply,
    load_model,
    loss_eff,
    loss_misfit,
    loss_rip,
    quasi_rip_stats,
    save_model,
    train_lcr,
)
from .metrics import (
    InversionCriteria,
    OpCount,
    expected_bits,
    inversion_success,
    js_divergence,
    rmse,
)
from .reasoning import (
    Coder,
    ContextualReasoner,
    ReasoningResult,
    cr_step,
    effectiveness,
    encoder_one_step,
    naive_decoder,
    naive_encoder,
    rational_coders,
)
from .world import (
    Context,
    WorldDims,
    WorldGenConfig,
    WorldTuple,
    devectorize,
    example_nested_world,
    load_world,
    make_world,
    sample_context,
    sample_simplex,
    save_world,
    validate_context,
    vectorize,
)

__version__ = "0.1.0"
