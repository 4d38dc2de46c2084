"""l_p mirror descent for single-head softmax attention.

Training loops, the max-margin problems they converge to in direction,
regularization-path solvers, and experiment drivers.
"""

from .core import AttnDataset, AttnSample, ModelParams, make_rng, pq_norm, unit_sphere_vector
from .errors import (
    AttnMirrorError,
    DimensionError,
    DivergedError,
    DomainError,
    InfeasibleError,
    MaxIterError,
    ParameterError,
)
from .experiments import (
    ExperimentSpec,
    FitReport,
    example1_dataset,
    example2_dataset,
    fit_log_growth,
    gen_synthetic,
    rate_envelope_check,
    run_fig_corr,
)
from .losses import LossKind, erm_objective, finite_diff_grad, grad_v, grad_W, softmax_jacobian
from .mirror import (
    ConeSeed,
    NearZero,
    Potential,
    Trajectory,
    TrainConfig,
    bregman_divergence,
    directional_bregman,
    inverse_mirror_map,
    lp_attgd_step,
    lp_jointgd_step,
    mirror_map,
    train_attention,
    train_joint,
)
from .model import attn_forward, attn_probs, globally_optimal_tokens, softmax, token_scores
from .plotting import emit_svg
from .regpath import RpConfig, joint_rp, lp_ball_lmo, rp_sweep, solve_rp
from .svm import (
    SvmSolution,
    compute_constants,
    cone_membership,
    solve_att_svm,
    solve_v_svm,
    support_tokens,
    verify_local_optimality,
)

__version__ = "0.1.0"
