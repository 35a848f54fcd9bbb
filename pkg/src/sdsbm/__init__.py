"""Seasonal dynamic stochastic block model toolkit.

Generation, exact Kalman inference, EM parameter learning, forecasting
and likelihood-based anomaly detection for dynamic networks whose
per-block edge density follows a bias-plus-seasonal process.
"""

from .graph_model import (
    BlockSeries,
    DynamicNetwork,
    VertexTyping,
    extract_block_series,
    possible_edges,
)
from .generator import (
    GenParams,
    LatentTrace,
    SeasonalState,
    default_state,
    generate_block_series,
    generate_network,
    seasonal_state,
    sine_profile,
    step_latent,
)
from .ssm import (
    AugmentedStateSpace,
    ModelParams,
    StateSpace,
    augment,
    binomial_obs_noise,
    build_state_space,
    observation_variance,
)
from .kalman import (
    BeliefSequence,
    Forecast,
    GaussianBelief,
    forecast,
    predict,
    smooth,
    update,
)
from .em import EmConfig, EmTrace, SufficientStats, default_init, e_step, em_fit
from .anomaly import (
    AnomalyReport,
    LogLikPolicy,
    ScoreSeries,
    SigmaPolicy,
    detect,
    score,
    threshold_sigma,
)
from .ingest import (
    BucketingConfig,
    EdgeEvent,
    bucketize,
    load_model,
    parse_inputs,
    save_model,
)

__version__ = "0.1.0"
