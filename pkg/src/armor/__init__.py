"""Relative-pessimism offline RL on finite MDPs."""

from .errors import (
    ArmorError,
    CapacityError,
    DataError,
    DatasetParseError,
    DimensionError,
    NumericalFailure,
    ParameterError,
)
from .mdp_core import (
    Occupancy,
    PolicyTable,
    TabularMDP,
    ValueResult,
    evaluate_policy,
    model_discrepancy,
    occupancy,
    simulation_gap,
)
from .data_io import Dataset, Transition, fit_loss, load_dataset, sample_dataset, save_dataset
from .version_space import ModelClass, VersionSpace, build_version_space, calibrate_alpha, mle_fit
from .exact_game import (
    GameSolution,
    PolicySet,
    concentrability,
    enumerate_policies,
    is_fixed_point,
    performance_bound,
    solve_generalized_pessimism,
    solve_relative_pessimism,
    worst_case_model,
)
from .armor_iter import ArmorConfig, ArmorResult, ArmorState, run_armor

__version__ = "0.1.0"
