from .metrics import METRIC_OUTCOMES, MetricsReport, compute_metrics, scenario_fingerprint
from .policies import (
    EvalNoise,
    LearnedParkingPolicy,
    NoiseModel,
    ReplayPolicy,
    brake_policy,
    make_modular_policy,
)
from .harness import (
    AblationRow,
    EvalConfig,
    attention_report,
    evaluate_policy,
    focus_ratio,
    learned_policy_factory,
    load_policy_net,
    median_seed_report,
    modular_policy_factory,
    motion_comparison,
    noise_sweep,
    open_loop_pose_errors,
    profile_costs,
    run_ablation_matrix,
)
from .specs import PolicySpec, build_factory, evaluate_spec
from . import report
