"""Joint parallelism selection, GPU apportioning and scheduling for multi-model training."""

from .baselines import (Allocation, BASELINES, allocations_to_plan, distribute_tasks, max_heuristic, min_heuristic,
                        optimus_greedy, optimus_plan, randomized)
from .errors import (ConversionError, EventError, InvalidInputError, LimitExceededError, NoConfigError, ParseError,
                     PlanInvalidError, SolutionRejectedError, SpaseError, UnschedulableTaskError)
from .gantt import gantt
from .introspection import E2ESchedule, IntrospectionConfig, Segment, WorkloadEvent, advance, round_introspection
from .milp import (MilpModel, MilpSolution, big_m, build_milp, check_solution, export_lp, plan_to_assignment,
                   solution_to_plan)
from .sim import ExecutionMetrics, Placement, Plan, Violation, plan_makespan, simulate, validate
from .solver import SolveOutcome, brute_force, import_solution, lower_bound, solve
from .study import compare, sweep_timeout
from .workload import (INFEASIBLE, Cluster, ConfigOption, GridRow, Node, ProfileGrid, Task, best_config_for,
                       enumerate_grid, grid_to_configs, load_workload, random_workload, save_workload,
                       synthetic_profile)

__all__ = [name for name in dir() if not name.startswith("_")]
