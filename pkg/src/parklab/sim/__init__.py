from .vehicle import ControlCommand, Gear, VehicleParams, VehicleState, step_bicycle
from .world import ParkingLot, Scenario, Slot, WorldConfig, build_lot, sample_scenario
from .bev import BevGrid, BevSpec, FREE, OBSTACLE, TARGET_SLOT, render_bev, write_pgm
from .episode import (
    CONTROL_DT,
    EpisodeConfig,
    EpisodeResult,
    Observation,
    Outcome,
    OutcomeThresholds,
    SIM_DT,
    SIM_HZ,
    STEPS_PER_CONTROL,
    TrajectoryPoint,
    check_collision,
    classify_outcome,
    episode_to_jsonl,
    run_episode,
)
