"""Coupled transformation-diffusion runs and their observables.

A run couples the per-node transformation model with DOM diffusion on the
voxel graph. Within every coupling step the transformation is applied
first, then diffusion. When the two processes use different time steps,
the finer process is sub-iterated inside each step of the coarser one; the
sub-iteration count per coarse step is chosen by nearest-count rounding of
the step ratio, so the finer clock tracks the coarse clock to within half
a fine step even for non-commensurate steps (and exactly when the coarse
step is an integer multiple of the fine one).

All times here are in days; CSV outputs carry a t_days column. Record
times snap to the nearest completed step and the exact snapped times are
written out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from math import floor
from typing import Optional

import numpy as np

from .biology import BioParams, StateField, total_masses, transform_batch, transform_sequential
from .diffusion import DiffusionConfig, explicit_step, implicit_step, max_stable_dt
from .graph import VoxelGraph, layer_index

SCHEMES = ("explicit", "implicit")
TRANSFORM_VARIANTS = ("batch", "sequential")
SEED_KINDS = ("uniform_layers", "random_spots", "from_file")


@dataclass
class Scenario:
    """Initial-condition recipe for a run (masses in ugC)."""

    seed_kind: str = "uniform_layers"
    dom_total: float = 0.0
    layer_axis: str = "z"
    layer_ids: tuple[int, ...] = (0, 1)
    n_spots: int = 0
    mb_total: float = 0.0
    som_total: float = 0.0
    fom_total: float = 0.0
    rng_seed: int = 0
    state_file: Optional[str] = None

    def __post_init__(self):
        if self.seed_kind not in SEED_KINDS:
            raise ValueError(f"seed_kind must be one of {SEED_KINDS}, got {self.seed_kind!r}")
        for name in ("dom_total", "mb_total", "som_total", "fom_total"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.n_spots < 0:
            raise ValueError(f"n_spots must be >= 0, got {self.n_spots}")


@dataclass
class Schedule:
    """Run horizon and stepping policy (all values in days)."""

    t_end: float
    dt_transform: float
    dt_diffusion: float
    scheme: str = "implicit"
    transform_variant: str = "sequential"
    record_every: float = 0.0

    def __post_init__(self):
        if self.t_end < 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        if not self.dt_transform > 0 or not self.dt_diffusion > 0:
            raise ValueError("dt_transform and dt_diffusion must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.transform_variant not in TRANSFORM_VARIANTS:
            raise ValueError(
                f"transform_variant must be one of {TRANSFORM_VARIANTS}, "
                f"got {self.transform_variant!r}"
            )
        if self.record_every == 0.0:
            self.record_every = min(self.dt_transform, self.dt_diffusion)
        if self.record_every < min(self.dt_transform, self.dt_diffusion):
            raise ValueError("record_every must be >= the finer time step")


@dataclass
class DiffusionProfileResult:
    """Layer-summed mass profiles over time (times in days)."""

    times: np.ndarray    # (T,)
    layers: np.ndarray   # (L,)
    profiles: np.ndarray  # (T, L)


@dataclass
class DecompositionResult:
    """Compound-total time series plus the final per-node state."""

    times: np.ndarray    # (T,)
    totals: np.ndarray   # (T, 5) columns mb, dom, som, fom, co2
    final_state: StateField = field(repr=False)


def seed_layers(g: VoxelGraph, axis: str, layer_ids, total_mass: float) -> np.ndarray:
    """Spread total_mass uniformly over the pore voxels of the given layers."""
    ids = layer_index(g, axis)
    mask = np.isin(ids, np.asarray(list(layer_ids), dtype=np.int64))
    count = int(mask.sum())
    if count == 0:
        raise ValueError(f"no pore voxels in layers {tuple(layer_ids)} along {axis}")
    vec = np.zeros(g.n)
    vec[mask] = total_mass / count
    return vec


def seed_spots(g: VoxelGraph, n_spots: int, total_mass: float, rng_seed: int) -> np.ndarray:
    """Place total_mass on n_spots distinct pore voxels drawn by a seeded PRNG."""
    if n_spots > g.n:
        raise ValueError(f"n_spots={n_spots} exceeds pore voxel count {g.n}")
    vec = np.zeros(g.n)
    if n_spots == 0:
        return vec
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(g.n, size=n_spots, replace=False)
    vec[idx] = total_mass / n_spots
    return vec


def uniform_vector(g: VoxelGraph, total_mass: float) -> np.ndarray:
    if g.n == 0:
        raise ValueError("cannot seed an empty graph")
    return np.full(g.n, total_mass / g.n)


def build_initial_state(g: VoxelGraph, scenario: Scenario) -> StateField:
    """Materialize a scenario into a per-node state field."""
    if scenario.seed_kind == "from_file":
        if scenario.state_file is None:
            raise ValueError("seed_kind=from_file requires state_file")
        state = read_state(scenario.state_file)
        if state.n != g.n:
            raise ValueError(f"state file has {state.n} nodes, graph has {g.n}")
        return state
    state = StateField.zeros(g.n)
    if scenario.seed_kind == "uniform_layers":
        if scenario.dom_total > 0:
            state.dom = seed_layers(
                g, scenario.layer_axis, scenario.layer_ids, scenario.dom_total
            )
    else:  # random_spots
        if scenario.dom_total > 0:
            state.dom = uniform_vector(g, scenario.dom_total)
        if scenario.n_spots > 0:
            state.mb = seed_spots(g, scenario.n_spots, scenario.mb_total, scenario.rng_seed)
    if scenario.som_total > 0:
        state.som = uniform_vector(g, scenario.som_total)
    if scenario.fom_total > 0:
        state.fom = uniform_vector(g, scenario.fom_total)
    return state


def _make_diffuser(g: VoxelGraph, cfg: DiffusionConfig, scheme: str, dt: float):
    step_cfg = replace(cfg, dt=dt)
    if scheme == "explicit":
        if cfg.d_coeff > 0 and dt > max_stable_dt(g, cfg.d_coeff):
            raise ValueError(
                f"explicit dt={dt} day exceeds the stability bound "
                f"{max_stable_dt(g, cfg.d_coeff)} day"
            )
        return lambda v: explicit_step(g, v, step_cfg)
    return lambda v: implicit_step(g, v, step_cfg)[0]


def _record_steps(n_steps: int, dt: float, record_every: float) -> list[int]:
    """Step indices to record: 0, every ~record_every, and the final step."""
    stride = max(1, round(record_every / dt)) if dt > 0 else 1
    ks = list(range(0, n_steps + 1, stride))
    if ks[-1] != n_steps:
        ks.append(n_steps)
    return ks


def run_diffusion_experiment(
    g: VoxelGraph, scenario: Scenario, schedule: Schedule, cfg: DiffusionConfig
) -> DiffusionProfileResult:
    """Pure DOM diffusion, recorded as per-layer mass profiles.

    The scenario must seed DOM only (no biomass, SOM or FOM).
    """
    if scenario.mb_total or scenario.som_total or scenario.fom_total or scenario.n_spots:
        raise ValueError("diffusion experiment scenarios must seed DOM only")
    state = build_initial_state(g, scenario)
    dom = state.dom
    axis = scenario.layer_axis
    lids = layer_index(g, axis)
    n_layers = g.dims[{"x": 0, "y": 1, "z": 2}[axis]]

    dt = schedule.dt_diffusion
    n_steps = round(schedule.t_end / dt)
    diffuse = _make_diffuser(g, cfg, schedule.scheme, dt)
    record_at = set(_record_steps(n_steps, dt, schedule.record_every))

    times, profiles = [], []
    for k in range(n_steps + 1):
        if k in record_at:
            times.append(k * dt)
            profiles.append(np.bincount(lids, weights=dom, minlength=n_layers))
        if k < n_steps:
            dom = diffuse(dom)
    return DiffusionProfileResult(
        times=np.array(times), layers=np.arange(n_layers), profiles=np.array(profiles)
    )


def run_decomposition(
    g: VoxelGraph,
    scenario: Scenario,
    schedule: Schedule,
    cfg: DiffusionConfig,
    params: BioParams,
) -> DecompositionResult:
    """Coupled transformation-diffusion run; only DOM diffuses.

    Advances on the coarser of the two step sizes; the finer process is
    sub-iterated so both cover the same physical time (see module notes on
    non-commensurate steps). Each coupling step applies the transformation
    before diffusion.
    """
    transform = transform_batch if schedule.transform_variant == "batch" else transform_sequential
    diffuse = _make_diffuser(g, cfg, schedule.scheme, schedule.dt_diffusion)
    state = build_initial_state(g, scenario)
    times, totals = [], []

    def record(t_days: float, st: StateField):
        times.append(t_days)
        totals.append(total_masses(st))

    state = coupled_run(
        state,
        lambda st, dt: transform(st, params, dt),
        diffuse,
        schedule,
        record,
    )
    return DecompositionResult(
        times=np.array(times), totals=np.array(totals), final_state=state
    )


def coupled_run(state: StateField, transform, diffuse, schedule: Schedule, record) -> StateField:
    """Drive the transformation-then-diffusion loop on any state/diffuser pair.

    ``transform(state, dt) -> state`` and ``diffuse(dom) -> dom`` supply the
    two processes; ``record(t_days, state)`` is called at t=0 and at every
    snapped record time. Returns the final state.
    """
    dt_t, dt_d = schedule.dt_transform, schedule.dt_diffusion
    dt_coarse = max(dt_t, dt_d)
    ratio = dt_coarse / min(dt_t, dt_d)
    n_coarse = round(schedule.t_end / dt_coarse)
    record_at = set(_record_steps(n_coarse, dt_coarse, schedule.record_every))

    record(0.0, state)
    sub_done = 0
    for k in range(1, n_coarse + 1):
        sub_target = floor(k * ratio + 0.5)
        n_sub = sub_target - sub_done
        sub_done = sub_target
        if dt_t >= dt_d:
            state = transform(state, dt_t)
            for _ in range(n_sub):
                state.dom = diffuse(state.dom)
        else:
            for _ in range(n_sub):
                state = transform(state, dt_t)
            state.dom = diffuse(state.dom)
        if k in record_at:
            record(k * dt_coarse, state)
    return state


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def write_layer_profiles(path, result: DiffusionProfileResult) -> None:
    """One row per (record time, layer): t_days,layer,mass."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_days", "layer", "mass"])
        for t, row in zip(result.times, result.profiles):
            for layer, mass in zip(result.layers, row):
                writer.writerow([repr(float(t)), int(layer), repr(float(mass))])


def write_totals(path, times: np.ndarray, totals: np.ndarray) -> None:
    """Compound totals per record time: t_days,mb,dom,som,fom,co2."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_days", "mb", "dom", "som", "fom", "co2"])
        for t, row in zip(times, totals):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_state(path, g: VoxelGraph, state: StateField) -> None:
    """Per-node dump: node,i,j,k,mb,dom,som,fom,co2."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "i", "j", "k", "mb", "dom", "som", "fom", "co2"])
        for idx in range(g.n):
            i, j, k = (int(c) for c in g.coords[idx])
            writer.writerow(
                [idx, i, j, k]
                + [repr(float(v[idx])) for v in state.as_tuple()]
            )


def read_state(path) -> StateField:
    """Read a per-node state dump written by write_state."""
    cols = {name: [] for name in ("mb", "dom", "som", "fom", "co2")}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["node", "i", "j", "k", "mb", "dom", "som", "fom", "co2"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: expected header {expected}, got {reader.fieldnames}")
        for row_num, row in enumerate(reader):
            if int(row["node"]) != row_num:
                raise ValueError(f"{path}: node column must be 0..n-1 in order")
            for name in cols:
                cols[name].append(float(row[name]))
    return StateField(*(np.array(cols[name]) for name in ("mb", "dom", "som", "fom", "co2")))
