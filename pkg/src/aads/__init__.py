"""Augmented autonomous-driving data: novel background views, data-driven traffic,
agent composition with annotations, and cube-map LiDAR simulation."""

from .geometry import CameraIntrinsics, Pose, ViewSample
from .scene import demo_scene_spec, make_synthetic_scene
from .depth_refine import RefineConfig, refine_depth
from .view_synth import WarpedView, forward_map_depth, select_references, warp_reference
from .stitch import EnergyWeights, SynthConfig, SynthResult, poisson_blend, synthesize_view, trws_solve
from .lidar import BeamModel, CubeMapDepth, LidarScan, LidarScene, cast_scan, fit_beam_model, render_cube_map
from .traffic import (AgentState, Lane, LaneMap, TrafficConfig, VelocityBank, eval_distributions, init_agents,
                      simulate, step)
from .augment import PlacedObject, compose_frame, diffusion_inpaint, remove_moving_objects
from .pipeline import ConfigError, PipelineError, demo_config, run_pipeline

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "ViewSample",
    "demo_scene_spec",
    "make_synthetic_scene",
    "RefineConfig",
    "refine_depth",
    "WarpedView",
    "forward_map_depth",
    "select_references",
    "warp_reference",
    "EnergyWeights",
    "SynthConfig",
    "SynthResult",
    "poisson_blend",
    "synthesize_view",
    "trws_solve",
    "BeamModel",
    "CubeMapDepth",
    "LidarScan",
    "LidarScene",
    "cast_scan",
    "fit_beam_model",
    "render_cube_map",
    "AgentState",
    "Lane",
    "LaneMap",
    "TrafficConfig",
    "VelocityBank",
    "eval_distributions",
    "init_agents",
    "simulate",
    "step",
    "PlacedObject",
    "compose_frame",
    "diffusion_inpaint",
    "remove_moving_objects",
    "ConfigError",
    "PipelineError",
    "demo_config",
    "run_pipeline",
]

__version__ = "0.1.0"
