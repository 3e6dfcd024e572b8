"""Device-independent QKD on Majorana parity-readout hardware: error-budget
to CHSH mapping, heralded-protocol Monte Carlo, and entropy-accumulation
finite-key bounds."""

__version__ = "0.1.0"

from .errors import InsufficientStatistics, ModelError
from .hardware import (
    TSIRELSON,
    BraidSchedule,
    DegenerateDwell,
    ErrorBudget,
    ExponentialDwell,
    HistogramDwell,
    Tier,
    TimingModel,
    chsh_anisotropic_lower_bound,
    dwell_time,
    mean_poisoning_prob,
    poisoning_flip_prob,
    sensitivity_gradient,
    visibility_isotropic,
    visibility_product,
)
from .protocol import (
    BlockTally,
    ChannelModel,
    ChshStatistics,
    PoisoningBurst,
    ProtocolConfig,
    RoundRecord,
    adaptive_gamma,
    audit_efficiencies,
    estimate_chsh,
    herald_probability,
    run_protocol,
    salvage,
    simulate_block,
    tally_records,
)
from .security import (
    EpsilonBudget,
    KeyLengthReport,
    MinTradeoff,
    PenaltyConfig,
    asymptotic_rate,
    binary_entropy,
    build_min_tradeoff,
    eat_min_entropy,
    hoeffding_mu,
    key_length,
    loss_penalty,
    penalize_S,
    qber_from_visibility,
    s_from_visibility,
)
from .config import Config, load_config

__all__ = [
    "TSIRELSON",
    "BlockTally",
    "BraidSchedule",
    "ChannelModel",
    "ChshStatistics",
    "Config",
    "DegenerateDwell",
    "EpsilonBudget",
    "ErrorBudget",
    "ExponentialDwell",
    "HistogramDwell",
    "InsufficientStatistics",
    "KeyLengthReport",
    "MinTradeoff",
    "ModelError",
    "PenaltyConfig",
    "PoisoningBurst",
    "ProtocolConfig",
    "RoundRecord",
    "Tier",
    "TimingModel",
    "adaptive_gamma",
    "asymptotic_rate",
    "audit_efficiencies",
    "binary_entropy",
    "build_min_tradeoff",
    "chsh_anisotropic_lower_bound",
    "dwell_time",
    "eat_min_entropy",
    "estimate_chsh",
    "herald_probability",
    "hoeffding_mu",
    "key_length",
    "load_config",
    "loss_penalty",
    "mean_poisoning_prob",
    "penalize_S",
    "poisoning_flip_prob",
    "qber_from_visibility",
    "run_protocol",
    "s_from_visibility",
    "salvage",
    "sensitivity_gradient",
    "simulate_block",
    "tally_records",
    "visibility_isotropic",
    "visibility_product",
]
