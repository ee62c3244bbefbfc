"""Voxel-graph simulation of diffusion-transformation dynamics in soil pore
space, plus ball-network conductance calibration against the voxel engine.
"""

from .biology import BioParams, StateField, total_masses, transform_batch, transform_sequential
from .diffusion import (
    ConvergenceError,
    DiffusionConfig,
    analytic_solution,
    explicit_step,
    implicit_step,
    max_stable_dt,
    pcg_solve,
)
from .graph import VoxelGraph, build_graph, laplacian_apply, layer_index, load_graph, save_graph
from .image import (
    Ball,
    BinaryImage3D,
    extract_subvolume,
    load_balls,
    load_image,
    rasterize_balls,
    save_balls,
    save_image,
)
from .pngm import (
    BallNetwork,
    CalibConfig,
    CalibDataset,
    SECONDS_PER_DAY,
    ball_to_voxel_by_concentration,
    build_ball_network,
    generate_calib_data,
    initial_theta,
    load_dataset,
    load_theta,
    loss,
    loss_gradient,
    pngm_explicit_step,
    pngm_implicit_step,
    save_dataset,
    save_theta,
    sgd_calibrate,
    voxel_to_ball,
)
from .simulator import (
    DecompositionResult,
    DiffusionProfileResult,
    Scenario,
    Schedule,
    build_initial_state,
    read_state,
    run_decomposition,
    run_diffusion_experiment,
    seed_layers,
    seed_spots,
    uniform_vector,
    write_layer_profiles,
    write_state,
    write_totals,
)

__version__ = "0.1.0"
