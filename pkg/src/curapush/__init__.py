"""Desk-scale pushing-under-occlusion simulator and learning toolkit.

A holonomic base with a tethered point pusher moves a box to a goal pose while
obstacles pop up at random times, many of them hidden behind the box itself.
The package provides the 2D world (geometry), occluded lidar sensing with a
decaying confidence map (perception), small hand-differentiated networks
(nets), a quantile-based collision estimator (dce), the episode protocol
(env), the risk/uncertainty-augmented policy-gradient trainer (training), and
the experiment/CLI layer (experiments, cli).
"""

__version__ = "0.1.0"

from .dce import (
    GAMMA_C,
    N_QUANTILES,
    bellman_targets,
    energy_distance_loss,
    predict_quantiles,
    quantile_levels,
    risk_and_uncertainty,
)
from .env import (
    EpisodeConfig,
    Observation,
    PushEnv,
    RewardConfig,
    StepResult,
    assemble_observation,
    check_termination,
    compute_reward,
)
from .geometry import (
    Action,
    OrientedRect,
    Pose2D,
    WorldState,
    disc_rect_overlap,
    normalize_angle,
    push_object,
    ray_cast,
    ray_cast_many,
    rect_overlap,
    step_kinematics,
)
from .nets import AdamState, GaussianPolicy, Mlp, adam_step, load_arrays, save_arrays
from .perception import (
    ConfidenceMap,
    LidarScan,
    PoolEncoder,
    VaeEncoder,
    local_window,
    pretrain_encoder,
    simulate_lidar,
    update_confidence,
)
from .training import (
    CuraHyperparams,
    RolloutBatch,
    Trainer,
    clipped_surrogate,
    collect_rollouts,
    cura_update,
    gae_advantages,
    normalize,
    risk_cost,
    train,
    uncertainty_cost,
)

__all__ = [name for name in dir() if not name.startswith("_")]
