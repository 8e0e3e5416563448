from .grid_map import GridMap, disc_centers, disc_cover_radius, grid_from_bev, grid_from_lot
from .hybrid_astar import (
    Direction,
    GoalInCollision,
    NoPathFound,
    PlannedPath,
    PlannerParams,
    PlanningError,
    StartInCollision,
    plan_hybrid_astar,
)
from .pid import PathTracker, PidGains, SpeedProfile, track_path_pid
from .pipeline import ModularPipelinePolicy, PipelineConfig, rear_axle_goal
from .expert import (
    CollectionConfig,
    CollectionStats,
    SmoothnessFilter,
    collect_expert_dataset,
    is_smooth,
)
