"""Downlink simulator and sum-rate optimizer for a stacked flexible
intelligent metasurface transmitter."""

__version__ = "0.1.0"

from .geometry import (DesignState, ScenarioConfig, SystemGeometry,
                       UserChannelParams, build_geometry, element_position,
                       generate_scenario, initial_state)
from .channel import (ChannelStack, build_cascade, build_interlayer, build_stack,
                      build_user_channel, rs_entry, steering_element)
from .objective import RateReport, check_feasibility, evaluate
from .gradients import (GradientBundle, fd_gradient, grad_morph, grad_phase,
                        grad_power, gradient_bundle, run_gradient_checks)
from .optimizer import (NumericalAbort, OptimizerConfig, Trace, project_morph,
                        project_phase, project_power, run_ao, step_block)
from .config_io import ConfigError, RunConfig, dbm_to_watts, load_run_config, watts_to_dbm
from .experiments import (ExperimentSpec, SweepResult, export_heatmap,
                          load_experiment_spec, run_experiment)
