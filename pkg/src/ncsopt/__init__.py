"""Optimal gain schedules for control loops with delaying, lossy links."""
from .delay_model import DelayChain, TransitionQuery, n_step, sample_next, validate
from .dynamics import ExtendedModel, ExtendedState, PlantModel
from .layout import PacketLayout, build_layout, build_selectors, stack_packet, unstack_packet
from .problem import CostSpec, InitSpec, ProblemSpec, RunSpec, load_problem
from .simulation import SimTrace, run_episode, run_monte_carlo
from .synthesis import GainSchedule, synthesize

__version__ = "0.1.0"
