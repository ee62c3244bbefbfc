"""Ball-network (pore network geometrical model) diffusion and calibration.

The pore space is approximated by a graph of overlapping balls. Mass moves
between adjacent balls proportionally to their concentration difference
(mass over per-ball volume) times a per-edge diffusional conductance
theta. Conductances are represented as a float array aligned with
``BallNetwork.edges`` (one value per unordered pair, i < j).

Calibration fits theta against distribution pairs (X, Y) generated by the
voxel-graph engine: X is a random ball-mass distribution and Y the
distribution one fixed interval later. Two squared-residual objectives are
supported, matching the explicit ("L1") or implicit ("L2") ball-network
scheme against the data, and both are minimized by normalized stochastic
gradient descent (fixed-magnitude steps along the per-edge gradient sign)
with a halving learning-rate schedule.

The fitted conductances are independent of the diffusion coefficient and
interval used during generation: those enter the schemes only through the
product D * dt, which scales the objective without moving its minimizer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .diffusion import DiffusionConfig, explicit_step, max_stable_dt, pcg_solve
from .graph import VoxelGraph
from .image import Ball

SECONDS_PER_DAY = 86400.0

OBJECTIVES = ("L1", "L2")


@dataclass(frozen=True)
class BallNetwork:
    """Geometric ball graph with voxel ownership.

    balls            : the geometric primitives
    volumes          : (q,) voxels owned by each ball (the discrete volume)
    edges            : (E, 2) int, i < j, pairs of intersecting balls
    contact_areas    : (E,) area of the sphere-sphere intersection disk
    center_distances : (E,) Euclidean center distances
    voxel_owner      : (n,) owning ball per voxel-graph node
    incidence        : (q, E) sparse +1/-1 edge incidence (+1 at edges[:,0])
    """

    balls: tuple[Ball, ...]
    volumes: np.ndarray
    edges: np.ndarray
    contact_areas: np.ndarray
    center_distances: np.ndarray
    voxel_owner: np.ndarray
    incidence: sparse.csr_matrix = field(repr=False)

    @property
    def q(self) -> int:
        return len(self.balls)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]


@dataclass
class CalibDataset:
    """Pairs of ball-mass distributions separated by a fixed interval."""

    x: np.ndarray        # (P, q) inputs
    y: np.ndarray        # (P, q) outputs, dt_seconds later
    dt_seconds: float
    d_coeff: float       # voxel^2/day used during generation

    def __post_init__(self):
        if self.x.shape != self.y.shape or self.x.ndim != 2:
            raise ValueError(f"x/y must be matching (P, q) arrays, got {self.x.shape}, {self.y.shape}")

    @property
    def n_pairs(self) -> int:
        return self.x.shape[0]

    @property
    def dt_days(self) -> float:
        return self.dt_seconds / SECONDS_PER_DAY


@dataclass
class CalibConfig:
    """SGD hyperparameters (defaults follow the reference training schedule)."""

    objective: str = "L2"
    epochs: int = 1000
    batch_size: int = 4
    lr0: float = 0.1
    halve_every: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr0 >= 0:
            raise ValueError(f"lr0 must be >= 0, got {self.lr0}")
        if self.halve_every < 1:
            raise ValueError(f"halve_every must be >= 1, got {self.halve_every}")


def _intersection_area(r1: float, r2: float, d: float) -> float:
    # disk of the sphere-sphere intersection circle; if one ball swallows
    # the other, fall back to the smaller ball's great-circle area
    if d <= abs(r1 - r2):
        return np.pi * min(r1, r2) ** 2
    a2 = (4.0 * d * d * r1 * r1 - (d * d - r2 * r2 + r1 * r1) ** 2) / (4.0 * d * d)
    return np.pi * max(a2, 0.0)


def build_ball_network(balls: Sequence[Ball], g: VoxelGraph) -> BallNetwork:
    """Assemble the ball graph and assign every pore voxel to a ball.

    Edges join balls whose center distance is strictly less than the sum of
    radii. Each voxel goes to the covering ball with the nearest center
    (ties to the lowest ball index); a pore voxel covered by no ball means
    the graph and ball list are inconsistent and raises.
    """
    if not balls:
        raise ValueError("ball list is empty")
    balls = tuple(balls)
    q = len(balls)
    centers = np.array([[b.cx, b.cy, b.cz] for b in balls])
    radii = np.array([b.radius for b in balls])

    owner = np.empty(g.n, dtype=np.int64)
    node_centers = g.coords.astype(np.float64) + 0.5
    block = 1 << 16
    for start in range(0, g.n, block):
        pts = node_centers[start : start + block]
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        d2[d2 > radii[None, :] ** 2] = np.inf
        nearest = np.argmin(d2, axis=1)
        uncovered = ~np.isfinite(d2[np.arange(len(pts)), nearest])
        if uncovered.any():
            bad = start + np.flatnonzero(uncovered)[0]
            raise ValueError(
                f"{int(uncovered.sum())} pore voxels covered by no ball "
                f"(first: node {bad} at {tuple(g.coords[bad])})"
            )
        owner[start : start + len(pts)] = nearest

    volumes = np.bincount(owner, minlength=q).astype(np.float64)
    if (volumes == 0).any():
        empty = np.flatnonzero(volumes == 0)
        raise ValueError(f"balls {empty.tolist()} own no voxels")

    pair_d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    iu, ju = np.triu_indices(q, k=1)
    touching = pair_d[iu, ju] < radii[iu] + radii[ju]
    ei, ej = iu[touching], ju[touching]
    dij = pair_d[ei, ej]
    if (dij == 0).any():
        raise ValueError("coincident ball centers give zero center distance")
    areas = np.array(
        [_intersection_area(radii[a], radii[b], d) for a, b, d in zip(ei, ej, dij)]
    )
    edges = np.stack([ei, ej], axis=1).astype(np.int64)

    n_edges = edges.shape[0]
    rows = np.concatenate([ei, ej])
    cols = np.concatenate([np.arange(n_edges), np.arange(n_edges)])
    vals = np.concatenate([np.ones(n_edges), -np.ones(n_edges)])
    incidence = sparse.csr_matrix((vals, (rows, cols)), shape=(q, n_edges))

    return BallNetwork(
        balls=balls,
        volumes=volumes,
        edges=edges,
        contact_areas=areas,
        center_distances=dij,
        voxel_owner=owner,
        incidence=incidence,
    )


def initial_theta(net: BallNetwork) -> np.ndarray:
    """Geometric conductance initialization: contact area over center distance."""
    return net.contact_areas / net.center_distances


def voxel_to_ball(m_voxels: np.ndarray, net: BallNetwork) -> np.ndarray:
    """Aggregate a voxel distribution into per-ball masses."""
    m_voxels = np.asarray(m_voxels, dtype=np.float64)
    if m_voxels.shape != net.voxel_owner.shape:
        raise ValueError(
            f"voxel vector has shape {m_voxels.shape}, network maps {net.voxel_owner.shape}"
        )
    return np.bincount(net.voxel_owner, weights=m_voxels, minlength=net.q)


def ball_to_voxel_by_concentration(m_balls: np.ndarray, net: BallNetwork) -> np.ndarray:
    """Spread each ball's mass uniformly over its voxels (equal concentration)."""
    m_balls = np.asarray(m_balls, dtype=np.float64)
    if m_balls.shape != (net.q,):
        raise ValueError(f"ball vector has shape {m_balls.shape}, network has q={net.q}")
    return (m_balls / net.volumes)[net.voxel_owner]


def _theta_laplacian_apply(net: BallNetwork, theta: np.ndarray, conc: np.ndarray) -> np.ndarray:
    """Per-ball net outflow divergence sum_j theta_ij (c_i - c_j)."""
    cdiff = net.incidence.T @ conc
    return net.incidence @ (theta * cdiff)


def pngm_explicit_step(
    net: BallNetwork, theta: np.ndarray, m: np.ndarray, d_coeff: float, dt: float
) -> np.ndarray:
    """Forward-Euler ball diffusion step (dt in days, d_coeff in voxel^2/day)."""
    conc = m / net.volumes
    return m - (d_coeff * dt) * _theta_laplacian_apply(net, theta, conc)


def pngm_implicit_step(
    net: BallNetwork,
    theta: np.ndarray,
    m: np.ndarray,
    d_coeff: float,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 100000,
) -> np.ndarray:
    """Backward-Euler ball diffusion step.

    The system (I + D dt L_theta diag(1/v)) m' = m is symmetrized with the
    volume scaling u = m'/sqrt(v), which makes the operator SPD, and solved
    by Jacobi-preconditioned conjugate gradient.
    """
    c = d_coeff * dt
    s = np.sqrt(net.volumes)
    theta_deg = np.abs(net.incidence) @ theta  # sum of incident conductances

    def matvec(u: np.ndarray) -> np.ndarray:
        return u + c * (_theta_laplacian_apply(net, theta, u / s) / s)

    inv_diag = 1.0 / (1.0 + c * theta_deg / net.volumes)
    u, _, _ = pcg_solve(matvec, inv_diag, m / s, tol, max_iter)
    return s * u


def generate_calib_data(
    net: BallNetwork,
    g: VoxelGraph,
    cfg: DiffusionConfig,
    n_scenarios: int,
    record_interval_s: float,
    horizon_s: float,
    rng_seed: int,
    mass_range: tuple[float, float] = (1.0, 10.0),
) -> CalibDataset:
    """Generate (X, Y) ball-distribution pairs from the voxel engine.

    Each scenario draws a random total mass, spreads it over the pore
    voxels with uniform random weights, and is evolved by explicit voxel
    diffusion (cfg.dt, days). Ball distributions are snapshotted every
    record_interval_s; consecutive snapshots form the pairs.
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    bound = max_stable_dt(g, cfg.d_coeff)
    if cfg.dt > bound:
        raise ValueError(f"explicit dt={cfg.dt} day exceeds stability bound {bound} day")
    steps_per_record = round(record_interval_s / SECONDS_PER_DAY / cfg.dt)
    if steps_per_record < 1:
        raise ValueError("record interval is shorter than the voxel time step")
    n_records = round(horizon_s / record_interval_s)
    if n_records < 1:
        raise ValueError("horizon must cover at least one record interval")

    rng = np.random.default_rng(rng_seed)
    xs, ys = [], []
    for _ in range(n_scenarios):
        total = rng.uniform(*mass_range)
        weights = rng.random(g.n)
        m_vox = total * weights / weights.sum()
        prev = voxel_to_ball(m_vox, net)
        for _ in range(n_records):
            for _ in range(steps_per_record):
                m_vox = explicit_step(g, m_vox, cfg)
            cur = voxel_to_ball(m_vox, net)
            xs.append(prev)
            ys.append(cur)
            prev = cur
    return CalibDataset(
        x=np.array(xs), y=np.array(ys), dt_seconds=record_interval_s, d_coeff=cfg.d_coeff
    )


def _residuals(net, theta, x, y, objective, coeff):
    """Per-pair scheme residuals, laid out (q, P).

    L1 residual: y - x + coeff * L_theta (x / v)   (explicit scheme mismatch)
    L2 residual: x - y - coeff * L_theta (y / v)   (implicit scheme mismatch)
    """
    base = (x if objective == "L1" else y).T / net.volumes[:, None]
    cdiff = net.incidence.T @ base
    lap = net.incidence @ (theta[:, None] * cdiff)
    if objective == "L1":
        res = y.T - x.T + coeff * lap
    else:
        res = x.T - y.T - coeff * lap
    return res, cdiff


def loss(
    net: BallNetwork,
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    objective: str,
    d_coeff: float,
    dt_days: float,
) -> float:
    """Mean squared scheme residual over pairs and balls."""
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    res, _ = _residuals(net, theta, x, y, objective, d_coeff * dt_days)
    return float((res**2).mean())


def loss_gradient(
    net: BallNetwork,
    theta: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    objective: str,
    d_coeff: float,
    dt_days: float,
) -> np.ndarray:
    """Exact per-edge gradient of the objective over the given pairs.

    Each edge picks up contributions from both endpoint residuals, since
    its conductance appears in both rows of the scheme.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    n_pairs, q = x.shape
    coeff = d_coeff * dt_days
    res, cdiff = _residuals(net, theta, x, y, objective, coeff)
    sign = 1.0 if objective == "L1" else -1.0
    res_diff = net.incidence.T @ res
    return sign * coeff * (2.0 / (q * n_pairs)) * (cdiff * res_diff).sum(axis=1)


def sgd_calibrate(
    net: BallNetwork, dataset: CalibDataset, cfg: CalibConfig
) -> tuple[np.ndarray, list[tuple[int, float, float]]]:
    """Fit conductances by normalized SGD.

    Starts from the geometric S/d initialization. Every epoch samples
    batch_size pairs uniformly (with replacement, seeded), records the
    batch loss at the current parameters, then moves each edge with a
    nonzero gradient by exactly lr along the negative gradient sign;
    conductances are clamped at zero. The learning rate halves every
    halve_every epochs. Returns (theta, history of (epoch, lr, loss)).
    """
    if dataset.n_pairs == 0:
        raise ValueError("calibration dataset is empty")
    theta = initial_theta(net)
    rng = np.random.default_rng(cfg.rng_seed)
    history: list[tuple[int, float, float]] = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)
        idx = rng.integers(0, dataset.n_pairs, size=cfg.batch_size)
        xb, yb = dataset.x[idx], dataset.y[idx]
        batch_loss = loss(net, theta, xb, yb, cfg.objective, dataset.d_coeff, dataset.dt_days)
        history.append((epoch, lr, batch_loss))
        grad = loss_gradient(
            net, theta, xb, yb, cfg.objective, dataset.d_coeff, dataset.dt_days
        )
        moving = grad != 0.0
        theta[moving] -= lr * np.sign(grad[moving])
        np.maximum(theta, 0.0, out=theta)
    return theta, history


# ---------------------------------------------------------------------------
# File interfaces
# ---------------------------------------------------------------------------

def save_theta(net: BallNetwork, theta: np.ndarray, path) -> None:
    """Conductance CSV: i,j,theta with i < j, one row per edge."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "theta"])
        for (i, j), value in zip(net.edges, theta):
            writer.writerow([int(i), int(j), repr(float(value))])


def load_theta(net: BallNetwork, path) -> np.ndarray:
    """Read a conductance CSV; the edge list must match the network exactly."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["i", "j", "theta"]:
            raise ValueError(f"{path}: expected header ['i', 'j', 'theta']")
        rows = [(int(r["i"]), int(r["j"]), float(r["theta"])) for r in reader]
    if len(rows) != net.n_edges:
        raise ValueError(f"{path}: {len(rows)} edges, network has {net.n_edges}")
    theta = np.empty(net.n_edges)
    for idx, (row, (i, j)) in enumerate(zip(rows, net.edges)):
        if (row[0], row[1]) != (int(i), int(j)):
            raise ValueError(f"{path}: edge ({row[0]},{row[1]}) does not match network ({i},{j})")
        theta[idx] = row[2]
    return theta


def save_dataset(dataset: CalibDataset, path) -> None:
    """Calibration-pair file: commented header then alternating x/y rows."""
    with open(path, "w", newline="") as fh:
        fh.write("# poresim-calib-dataset v1\n")
        fh.write(f"# q = {dataset.x.shape[1]}\n")
        fh.write(f"# dt_seconds = {dataset.dt_seconds!r}\n")
        fh.write(f"# d_coeff = {dataset.d_coeff!r}\n")
        fh.write(f"# pairs = {dataset.n_pairs}\n")
        writer = csv.writer(fh)
        for xr, yr in zip(dataset.x, dataset.y):
            writer.writerow(["x"] + [repr(float(v)) for v in xr])
            writer.writerow(["y"] + [repr(float(v)) for v in yr])


def load_dataset(path) -> CalibDataset:
    header: dict[str, str] = {}
    xs, ys = [], []
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# poresim-calib-dataset"):
            raise ValueError(f"{path}: not a calibration dataset file")
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
                continue
            parts = line.strip().split(",")
            if parts[0] == "x":
                xs.append([float(v) for v in parts[1:]])
            elif parts[0] == "y":
                ys.append([float(v) for v in parts[1:]])
            else:
                raise ValueError(f"{path}: unexpected row tag {parts[0]!r}")
    for key in ("q", "dt_seconds", "d_coeff"):
        if key not in header:
            raise ValueError(f"{path}: missing header field {key}")
    x = np.array(xs)
    y = np.array(ys)
    q = int(header["q"])
    if x.shape != y.shape or (x.size and x.shape[1] != q):
        raise ValueError(f"{path}: inconsistent pair shapes {x.shape} / {y.shape} for q={q}")
    return CalibDataset(
        x=x, y=y, dt_seconds=float(header["dt_seconds"]), d_coeff=float(header["d_coeff"])
    )
