"""Hybrid-switching LQG mean field games.

Solves the coupled major/two-subpopulation game with controlled switching and
stopping: per-mode Riccati feedback synthesis, deterministic event schedules
by backward dynamic programming, the mean-field consistency fixed point, and
finite-population Monte Carlo verification of the epsilon-Nash property.
"""

from .automaton import (Automaton, ClassSpecs, DiscreteState, JumpTransition,
                        ModeSpec, PopulationFractions, build_automaton,
                        check_diffusion_compat, mask_block,
                        modes_from_classes, pi_kron)
from .kernels import BACKEND as kernel_backend
from .meanfield import (ExtendedSystem, MeanFieldLaw, build_major_extended,
                        build_minor_extended, selector_e, solve_consistency)
from .riccati import (GapFunction, GapSide, RiccatiSolution,
                      apply_jump_condition, feedback_gain, find_event_time,
                      integrate_riccati, stopping_gap, switch_gap)
from .scenario import Scenario, load_scenario, scenario_from_dict
from .sequencer import (SwitchSchedule, backward_step, enumerate_schedules,
                        law_from_schedule, select_optimal, stay_schedule)
from .simulate import (NashReport, SimConfig, SimulationResult,
                       TrajectoryRecord, nash_gap, simulate, stability_check)

__version__ = "0.1.0"

__all__ = [
    "Automaton", "ClassSpecs", "DiscreteState", "JumpTransition", "ModeSpec",
    "PopulationFractions", "build_automaton", "check_diffusion_compat",
    "mask_block", "modes_from_classes", "pi_kron", "kernel_backend",
    "ExtendedSystem", "MeanFieldLaw", "build_major_extended",
    "build_minor_extended", "selector_e", "solve_consistency", "GapFunction",
    "GapSide", "RiccatiSolution", "apply_jump_condition", "feedback_gain",
    "find_event_time", "integrate_riccati", "stopping_gap", "switch_gap",
    "Scenario", "load_scenario", "scenario_from_dict", "SwitchSchedule",
    "backward_step", "enumerate_schedules", "law_from_schedule",
    "select_optimal", "stay_schedule",
    "NashReport", "SimConfig", "SimulationResult", "TrajectoryRecord",
    "nash_gap", "simulate", "stability_check",
]
