"""Command-line front end for reproducible, config-driven runs.

Commands: build-graph, rasterize-balls, diffuse, decompose, gen-calib-data,
calibrate, pngm-simulate. Every command reads a plain-text config file of
``key = value`` lines (``#`` starts a comment, no nesting), writes its CSV
outputs into the --out directory, and echoes the fully resolved
configuration (defaults included) to resolved_config.txt there, so any run
can be re-created from its artifacts alone.

Times in the config are in seconds; they are converted to days internally
(rates and the diffusion coefficient are per day). Masses are ugC unless
the mass_unit passthrough says otherwise. Outputs use '.' as the decimal
separator regardless of locale.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import biology, diffusion, graph, image, pngm, simulator
from .pngm import SECONDS_PER_DAY

_REQUIRED = object()

# key -> (type, default); _REQUIRED means the command using it must get a value
_CONFIG_SPEC: dict[str, tuple[type, object]] = {
    # geometry inputs
    "image_raw": (str, _REQUIRED),
    "image_meta": (str, _REQUIRED),
    "balls_file": (str, _REQUIRED),
    "raster_dims": (str, _REQUIRED),
    "subvolume_origin": (str, ""),
    "subvolume_dims": (str, ""),
    # scenario
    "axis": (str, "z"),
    "layers": (str, "0,1"),
    "dom_total": (float, 289.5),
    "mb_total": (float, 2.8132),
    "som_total": (float, 0.0),
    "fom_total": (float, 0.0),
    "n_spots": (int, 1000),
    "rng_seed": (int, 0),
    "mass_unit": (str, "ugC"),
    # schedule (seconds)
    "scheme": (str, "implicit"),
    "transform_variant": (str, "sequential"),
    "dt_diffusion_s": (float, 1.0),
    "dt_transform_s": (float, 1.0),
    "t_end_s": (float, 432000.0),
    "record_every_s": (float, 3600.0),
    # physics and solver
    "d_coeff": (float, 100950.0),
    "pcg_tol": (float, 1e-10),
    "pcg_max_iter": (int, 100000),
    # biology (per day; k_dom in ugC per voxel)
    "rho": (float, 0.2),
    "mu": (float, 0.5),
    "beta": (float, 0.55),
    "v_som": (float, 0.01),
    "v_fom": (float, 0.3),
    "v_dom": (float, 9.6),
    "k_dom": (float, 0.001),
    # calibration
    "calib_dt_s": (float, 0.1),
    "calib_n_scenarios": (int, 30),
    "calib_record_interval_s": (float, 10.0),
    "calib_horizon_s": (float, 1200.0),
    "calib_mass_min": (float, 1.0),
    "calib_mass_max": (float, 10.0),
    "objective": (str, "L2"),
    "epochs": (int, 1000),
    "batch_size": (int, 4),
    "lr0": (float, 0.1),
    "halve_every": (int, 10),
    "dataset_file": (str, ""),
    # ball-network simulation
    "theta_file": (str, ""),
    "pngm_dt_s": (float, 10.0),
    "pngm_scheme": (str, "implicit"),
    "pngm_transform": (str, "off"),  # off | batch | sequential
    "pngm_dt_transform_s": (float, 30.0),
}

# per-command defaults layered over the table above
_COMMAND_DEFAULTS: dict[str, dict[str, object]] = {
    "diffuse": {
        "dom_total": 592.7593,
        "mass_unit": "mg",
        "t_end_s": 6336.0,  # 1.76 h
        "dt_diffusion_s": 30.0,
    },
}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Resolved key-value configuration with typed access."""

    def __init__(self, values: dict[str, object]):
        self._values = values

    def __getitem__(self, key: str):
        value = self._values[key]
        if value is _REQUIRED:
            raise ConfigError(f"missing required config key: {key}")
        return value

    def has(self, key: str) -> bool:
        value = self._values[key]
        return value is not _REQUIRED and value != ""

    def items(self):
        return self._values.items()

    def ints(self, key: str) -> tuple[int, ...]:
        raw = str(self[key]).strip()
        if not raw:
            return ()
        try:
            return tuple(int(p) for p in raw.split(","))
        except ValueError:
            raise ConfigError(f"config key {key}: expected comma-separated ints, got {raw!r}")

    def days(self, key: str) -> float:
        """A *_s config value converted to days."""
        return float(self[key]) / SECONDS_PER_DAY


def parse_config_file(path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_SPEC:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        pairs[key] = value.strip()
    return pairs


def resolve_config(command: str, file_pairs: dict[str, str]) -> RunConfig:
    values: dict[str, object] = {k: default for k, (_, default) in _CONFIG_SPEC.items()}
    values.update(_COMMAND_DEFAULTS.get(command, {}))
    for key, raw in file_pairs.items():
        typ, _ = _CONFIG_SPEC[key]
        try:
            values[key] = typ(raw)
        except ValueError:
            raise ConfigError(f"config key {key}: cannot parse {raw!r} as {typ.__name__}")
    return RunConfig(values)


def write_resolved_config(cfg: RunConfig, out_dir: Path, command: str, args) -> None:
    lines = [f"command = {command}", f"threads = {args.threads}",
             f"deterministic = {args.deterministic}"]
    for key, value in sorted(cfg.items()):
        if value is _REQUIRED:
            value = ""
        lines.append(f"{key} = {value}")
    (out_dir / "resolved_config.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _load_geometry(cfg: RunConfig) -> image.BinaryImage3D:
    """Image from raw file if configured, else rasterized from a ball list."""
    if cfg.has("image_raw"):
        img = image.load_image(cfg["image_raw"], cfg["image_meta"])
    elif cfg.has("balls_file"):
        balls = image.load_balls(cfg["balls_file"])
        img = image.rasterize_balls(balls, cfg.ints("raster_dims"))
    else:
        raise ConfigError("missing required config key: image_raw (or balls_file)")
    origin = cfg.ints("subvolume_origin")
    dims = cfg.ints("subvolume_dims")
    if origin and dims:
        img = image.extract_subvolume(img, origin, dims)
    return img


def _diffusion_config(cfg: RunConfig, dt_key: str) -> diffusion.DiffusionConfig:
    return diffusion.DiffusionConfig(
        d_coeff=cfg["d_coeff"],
        dt=cfg.days(dt_key),
        pcg_tol=cfg["pcg_tol"],
        pcg_max_iter=cfg["pcg_max_iter"],
    )


def _bio_params(cfg: RunConfig) -> biology.BioParams:
    return biology.BioParams(
        rho=cfg["rho"], mu=cfg["mu"], beta=cfg["beta"],
        v_som=cfg["v_som"], v_fom=cfg["v_fom"], v_dom=cfg["v_dom"], k_dom=cfg["k_dom"],
    )


def _ball_network(cfg: RunConfig) -> tuple[pngm.BallNetwork, graph.VoxelGraph]:
    balls = image.load_balls(cfg["balls_file"])
    img = image.rasterize_balls(balls, cfg.ints("raster_dims"))
    g = graph.build_graph(img)
    return pngm.build_ball_network(balls, g), g


def _calib_dataset(cfg: RunConfig, net: pngm.BallNetwork, g: graph.VoxelGraph) -> pngm.CalibDataset:
    if cfg["dataset_file"]:
        return pngm.load_dataset(cfg["dataset_file"])
    return pngm.generate_calib_data(
        net,
        g,
        _diffusion_config(cfg, "calib_dt_s"),
        n_scenarios=cfg["calib_n_scenarios"],
        record_interval_s=cfg["calib_record_interval_s"],
        horizon_s=cfg["calib_horizon_s"],
        rng_seed=cfg["rng_seed"],
        mass_range=(cfg["calib_mass_min"], cfg["calib_mass_max"]),
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_build_graph(cfg: RunConfig, out_dir: Path) -> None:
    img = _load_geometry(cfg)
    g = graph.build_graph(img)
    graph.save_graph(g, out_dir / "graph.bin")
    summary = (
        f"nodes = {g.n}\n"
        f"edges = {g.n_edges}\n"
        f"porosity = {g.n / img.n_voxels!r}\n"
    )
    (out_dir / "summary.txt").write_text(summary)
    print(summary, end="")
    if g.n == 0:
        print("warning: image has no pore voxels, graph is empty", file=sys.stderr)


def cmd_rasterize_balls(cfg: RunConfig, out_dir: Path) -> None:
    balls = image.load_balls(cfg["balls_file"])
    img = image.rasterize_balls(balls, cfg.ints("raster_dims"))
    image.save_image(img, out_dir / "image.raw", out_dir / "image.meta")
    print(f"rasterized {len(balls)} balls into {img.dims}, porosity = {img.porosity!r}")


def cmd_diffuse(cfg: RunConfig, out_dir: Path) -> None:
    g = graph.build_graph(_load_geometry(cfg))
    scenario = simulator.Scenario(
        seed_kind="uniform_layers",
        dom_total=cfg["dom_total"],
        layer_axis=cfg["axis"],
        layer_ids=cfg.ints("layers"),
        rng_seed=cfg["rng_seed"],
    )
    schedule = simulator.Schedule(
        t_end=cfg.days("t_end_s"),
        dt_transform=cfg.days("dt_diffusion_s"),  # unused in a pure-diffusion run
        dt_diffusion=cfg.days("dt_diffusion_s"),
        scheme=cfg["scheme"],
        record_every=cfg.days("record_every_s"),
    )
    result = simulator.run_diffusion_experiment(g, scenario, schedule, _diffusion_config(cfg, "dt_diffusion_s"))
    simulator.write_layer_profiles(out_dir / "layer_profile.csv", result)
    print(f"wrote {len(result.times)} profiles over {result.layers.size} layers")


def cmd_decompose(cfg: RunConfig, out_dir: Path) -> None:
    g = graph.build_graph(_load_geometry(cfg))
    scenario = simulator.Scenario(
        seed_kind="random_spots",
        dom_total=cfg["dom_total"],
        n_spots=cfg["n_spots"],
        mb_total=cfg["mb_total"],
        som_total=cfg["som_total"],
        fom_total=cfg["fom_total"],
        rng_seed=cfg["rng_seed"],
    )
    schedule = simulator.Schedule(
        t_end=cfg.days("t_end_s"),
        dt_transform=cfg.days("dt_transform_s"),
        dt_diffusion=cfg.days("dt_diffusion_s"),
        scheme=cfg["scheme"],
        transform_variant=cfg["transform_variant"],
        record_every=cfg.days("record_every_s"),
    )
    result = simulator.run_decomposition(
        g, scenario, schedule, _diffusion_config(cfg, "dt_diffusion_s"), _bio_params(cfg)
    )
    simulator.write_totals(out_dir / "totals.csv", result.times, result.totals)
    simulator.write_state(out_dir / "final_state.csv", g, result.final_state)
    print(f"wrote {len(result.times)} total records for {g.n} nodes")


def cmd_gen_calib_data(cfg: RunConfig, out_dir: Path) -> None:
    net, g = _ball_network(cfg)
    dataset = pngm.generate_calib_data(
        net,
        g,
        _diffusion_config(cfg, "calib_dt_s"),
        n_scenarios=cfg["calib_n_scenarios"],
        record_interval_s=cfg["calib_record_interval_s"],
        horizon_s=cfg["calib_horizon_s"],
        rng_seed=cfg["rng_seed"],
        mass_range=(cfg["calib_mass_min"], cfg["calib_mass_max"]),
    )
    pngm.save_dataset(dataset, out_dir / "calib_dataset.csv")
    print(f"wrote {dataset.n_pairs} pairs for q = {net.q} balls")


def cmd_calibrate(cfg: RunConfig, out_dir: Path) -> None:
    net, g = _ball_network(cfg)
    dataset = _calib_dataset(cfg, net, g)
    calib_cfg = pngm.CalibConfig(
        objective=cfg["objective"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr0=cfg["lr0"],
        halve_every=cfg["halve_every"],
        rng_seed=cfg["rng_seed"],
    )
    theta, history = pngm.sgd_calibrate(net, dataset, calib_cfg)
    pngm.save_theta(net, theta, out_dir / "theta.csv")
    with open(out_dir / "loss_history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "loss"])
        for epoch, lr, value in history:
            writer.writerow([epoch, repr(lr), repr(value)])
    final = history[-1][2] if history else float("nan")
    print(f"calibrated {theta.size} conductances over {len(history)} epochs (last batch loss {final:.3e})")


def cmd_pngm_simulate(cfg: RunConfig, out_dir: Path) -> None:
    net, g = _ball_network(cfg)
    theta = pngm.load_theta(net, cfg["theta_file"]) if cfg["theta_file"] else pngm.initial_theta(net)

    # uniform concentration: each ball gets mass proportional to its volume
    dom0 = cfg["dom_total"] * net.volumes / net.volumes.sum()
    state = biology.StateField.zeros(net.q)
    state.dom = dom0
    if cfg["pngm_transform"] != "off" and cfg["n_spots"] > 0:
        spots = simulator.seed_spots(g, cfg["n_spots"], cfg["mb_total"], cfg["rng_seed"])
        state.mb = pngm.voxel_to_ball(spots, net)

    d_coeff = cfg["d_coeff"]
    dt_d = cfg.days("pngm_dt_s")
    if cfg["pngm_scheme"] == "explicit":
        diffuse = lambda m: pngm.pngm_explicit_step(net, theta, m, d_coeff, dt_d)
    elif cfg["pngm_scheme"] == "implicit":
        diffuse = lambda m: pngm.pngm_implicit_step(
            net, theta, m, d_coeff, dt_d, tol=cfg["pcg_tol"], max_iter=cfg["pcg_max_iter"]
        )
    else:
        raise ConfigError(f"pngm_scheme must be explicit or implicit, got {cfg['pngm_scheme']!r}")

    transform_kind = cfg["pngm_transform"]
    if transform_kind == "off":
        # pure diffusion: freeze the transformation to the identity
        transform = lambda st, dt: st
        dt_t = dt_d
    elif transform_kind in ("batch", "sequential"):
        params = _bio_params(cfg)
        fn = biology.transform_batch if transform_kind == "batch" else biology.transform_sequential
        transform = lambda st, dt: fn(st, params, dt)
        dt_t = cfg.days("pngm_dt_transform_s")
    else:
        raise ConfigError(f"pngm_transform must be off, batch or sequential, got {transform_kind!r}")

    schedule = simulator.Schedule(
        t_end=cfg.days("t_end_s"),
        dt_transform=dt_t,
        dt_diffusion=dt_d,
        record_every=cfg.days("record_every_s"),
    )
    times, masses, totals = [], [], []

    def record(t_days, st):
        times.append(t_days)
        masses.append(st.dom.copy())
        totals.append(biology.total_masses(st))

    simulator.coupled_run(state, transform, diffuse, schedule, record)

    with open(out_dir / "ball_masses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_days", "ball", "mass"])
        for t, row in zip(times, masses):
            for ball, mass in enumerate(row):
                writer.writerow([repr(float(t)), ball, repr(float(mass))])
    if transform_kind != "off":
        simulator.write_totals(out_dir / "totals.csv", np.array(times), np.array(totals))
    print(f"wrote {len(times)} records for q = {net.q} balls")


_COMMANDS = {
    "build-graph": cmd_build_graph,
    "rasterize-balls": cmd_rasterize_balls,
    "diffuse": cmd_diffuse,
    "decompose": cmd_decompose,
    "gen-calib-data": cmd_gen_calib_data,
    "calibrate": cmd_calibrate,
    "pngm-simulate": cmd_pngm_simulate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="poresim",
        description="Voxel-graph pore-space simulation and ball-network calibration",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="key = value config file")
    parser.add_argument("--out", default="out", help="output directory (created if missing)")
    parser.add_argument("--threads", type=int, default=1, help="worker cap (operations are currently single-threaded)")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="force fixed-order reductions (already the default execution mode)",
    )
    args = parser.parse_args(argv)

    try:
        pairs = parse_config_file(args.config)
        cfg = resolve_config(args.command, pairs)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(cfg, out_dir, args.command, args)
        _COMMANDS[args.command](cfg, out_dir)
    except (ConfigError, ValueError, OSError, diffusion.ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
