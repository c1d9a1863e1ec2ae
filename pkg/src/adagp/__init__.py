"""Gradient-prediction training lab.

Small numpy models trained with backpropagation or with a shared predictor
that supplies weight gradients during the forward pass, together with the
analytic timeline, pipeline-schedule and memory-energy models used to
reason about the hardware cost of that scheme.
"""
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config
from .costmodel import CostParams, cost_report, layer_cycles, model_speedup, single_chip_steps, timeline, \
    two_batch_steps, variant_layer_cost
from .energy import AccessCounts, EnergyParams, compare_schedules, count_accesses, energy_total
from .gradcheck import finite_diff_check
from .kernels import BACKEND
from .model import Model, ModelSpec, build_model, load_checkpoint, save_checkpoint, zoo_spec
from .pipecheck import check_trace
from .pipesim import PipelineConfig, ScheduleTrace, build_schedule, export_gantt, makespan, \
    two_batch_transition_steps
from .predictor import PredictorNet, predict, reorganize, train_predictor_step
from .scheduler import PhaseState, phase_fractions
from .trainer import RunConfig, ScheduleConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AccessCounts", "BACKEND", "ConfigError", "CostParams", "EnergyParams", "ExperimentConfig", "Model",
    "ModelSpec", "PhaseState", "PipelineConfig", "PredictorNet", "RunConfig", "ScheduleConfig", "ScheduleTrace",
    "build_model", "build_schedule", "check_trace", "compare_schedules", "cost_report", "count_accesses",
    "energy_total", "export_gantt", "finite_diff_check", "layer_cycles", "load_checkpoint", "makespan",
    "model_speedup", "parse_config", "phase_fractions", "predict", "reorganize", "run_experiment",
    "save_checkpoint", "serialize_config", "single_chip_steps", "timeline", "train_predictor_step",
    "two_batch_steps", "two_batch_transition_steps", "variant_layer_cost", "zoo_spec",
]
