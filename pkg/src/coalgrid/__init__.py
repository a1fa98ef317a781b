"""Coalitional energy trading among prosumer buildings with batteries."""

from .admm import AdmmResult, AdmmSettings, admm_solve, consensus_update, restore_feasibility
from .coalition import (CoalitionStructure, CoalitionValues, FullInfoEvaluator,
                        LimitedInfoEvaluator, aggregate_trade, bottom_up_form,
                        coalition_value, construct_feasible_merge, enumerate_partitions,
                        limited_info_upper_bound, merge_gain, optimal_partition,
                        structure_value)
from .data import PredictionSet, Scenario, generate_scenario, load_scenario, save_scenario
from .model import (Building, BuildingParams, BuildingSeries, BudgetExceeded, DispatchPlan,
                    Horizon, InputError, PriceSeries, SolverError, check_feasible,
                    horizon_cost)
from .mpc import MpcLog, MpcSettings, dissolution_check, mpc_run, mpc_step
from .solver import brute_force_plan, solve_decentralised

__all__ = [
    "AdmmResult", "AdmmSettings", "admm_solve", "consensus_update", "restore_feasibility",
    "CoalitionStructure", "CoalitionValues", "FullInfoEvaluator", "LimitedInfoEvaluator",
    "aggregate_trade", "bottom_up_form", "coalition_value", "construct_feasible_merge",
    "enumerate_partitions", "limited_info_upper_bound", "merge_gain", "optimal_partition",
    "structure_value", "PredictionSet", "Scenario", "generate_scenario", "load_scenario",
    "save_scenario", "Building", "BuildingParams", "BuildingSeries", "BudgetExceeded",
    "DispatchPlan", "Horizon", "InputError", "PriceSeries", "SolverError", "check_feasible",
    "horizon_cost", "MpcLog", "MpcSettings", "dissolution_check", "mpc_run", "mpc_step",
    "brute_force_plan", "solve_decentralised",
]
