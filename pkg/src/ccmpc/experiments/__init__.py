"""Scenario, closed-loop simulation, sampling oracles and experiment tables."""

from .oracles import MomentReport, empirical_chance, random_instance, sample_cbc, validate_moments
from .scenario import CONTROLLERS, ObstacleConfig, Scenario, default_scenario
from .simulate import TrajectoryLog, make_rng, run_closed_loop, trajectory_csv, trajectory_rows
from .tables import (AXES, TABLE_HEADER, ExperimentRow, ExperimentTable, feasibility_experiment, run_batch,
                     success_rate_experiment, summarize, worker_count)

__all__ = ["MomentReport", "empirical_chance", "random_instance", "sample_cbc", "validate_moments", "CONTROLLERS",
           "ObstacleConfig", "Scenario", "default_scenario", "TrajectoryLog", "make_rng", "run_closed_loop",
           "trajectory_csv", "trajectory_rows", "AXES", "TABLE_HEADER", "ExperimentRow", "ExperimentTable",
           "feasibility_experiment", "run_batch", "success_rate_experiment", "summarize", "worker_count"]
