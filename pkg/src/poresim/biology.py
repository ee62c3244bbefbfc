"""Per-voxel five-compound transformation model of microbial decomposition.

Compounds per node: microbial biomass (mb), dissolved organic matter (dom),
soil organic matter (som), fresh organic matter (fom), and respired co2,
all in micrograms of carbon per voxel. Rates are per day.

Processes: microbes take up DOM following Monod kinetics, respire to CO2,
and die; dead biomass splits into DOM (fraction beta) and SOM; SOM and FOM
hydrolyze back into DOM. Every flux is clamped so donors never go
negative, which makes both update variants conserve total carbon and
preserve nonnegativity for any step size.

Two variants are provided:
  * transform_batch      - all fluxes are computed from the pre-step state
                           and applied at once;
  * transform_sequential - stages run in order (uptake, mortality,
                           respiration, SOM turnover, FOM turnover), each
                           reading the values left by the previous stage.
Both discretize the same rate equations and agree to O(dt^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BioParams:
    """Transformation rates for a single microbial population.

    Defaults are the Arthrobacter sp. 9R parameterization used for the
    decomposition experiments (k_dom interpreted as ugC per voxel).
    """

    rho: float = 0.2      # respiration rate, 1/day
    mu: float = 0.5       # mortality rate, 1/day
    beta: float = 0.55    # fraction of dead biomass returning to DOM
    v_som: float = 0.01   # SOM hydrolysis rate, 1/day
    v_fom: float = 0.3    # FOM hydrolysis rate, 1/day
    v_dom: float = 9.6    # max microbial growth rate, 1/day
    k_dom: float = 0.001  # Monod half-saturation, ugC per voxel

    def __post_init__(self):
        for name in ("rho", "mu", "v_som", "v_fom", "v_dom"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not self.k_dom > 0:
            raise ValueError(f"k_dom must be > 0, got {self.k_dom}")


@dataclass
class StateField:
    """Per-node masses of the five compounds (each an (n,) float64 vector)."""

    mb: np.ndarray
    dom: np.ndarray
    som: np.ndarray
    fom: np.ndarray
    co2: np.ndarray

    def __post_init__(self):
        vecs = [self.mb, self.dom, self.som, self.fom, self.co2]
        shapes = {v.shape for v in vecs}
        if len(shapes) != 1 or len(next(iter(shapes))) != 1:
            raise ValueError(f"compound vectors must share one 1D shape, got {shapes}")

    @classmethod
    def zeros(cls, n: int) -> "StateField":
        return cls(*(np.zeros(n) for _ in range(5)))

    @property
    def n(self) -> int:
        return self.mb.shape[0]

    def copy(self) -> "StateField":
        return StateField(
            self.mb.copy(), self.dom.copy(), self.som.copy(), self.fom.copy(), self.co2.copy()
        )

    def as_tuple(self) -> tuple[np.ndarray, ...]:
        return (self.mb, self.dom, self.som, self.fom, self.co2)


def total_masses(state: StateField) -> tuple[float, float, float, float, float]:
    """Componentwise totals (mb, dom, som, fom, co2) over all nodes."""
    return tuple(float(v.sum()) for v in state.as_tuple())


def transform_batch(state: StateField, p: BioParams, dt: float) -> StateField:
    """One batch-update transformation step.

    All fluxes are evaluated on the pre-step values, clamped, then applied
    simultaneously. Clamp order for biomass losses: mortality has priority
    over respiration.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    mb, dom, som, fom, co2 = state.as_tuple()

    uptake = p.v_dom * dom / (p.k_dom + dom) * mb * dt
    np.minimum(uptake, dom, out=uptake)

    resp = p.rho * mb * dt
    morta = p.mu * mb * dt
    over = resp + morta > mb
    all_dead = over & (morta > mb)
    resp = np.where(all_dead, 0.0, np.where(over, mb - morta, resp))
    morta = np.where(all_dead, mb, morta)

    turn_fom = np.minimum(p.v_fom * fom * dt, fom)
    turn_som = np.minimum(p.v_som * som * dt, som)

    return StateField(
        mb=mb + uptake - morta - resp,
        dom=dom + p.beta * morta - uptake + turn_fom + turn_som,
        som=som + (1.0 - p.beta) * morta - turn_som,
        fom=fom - turn_fom,
        co2=co2 + resp,
    )


def transform_sequential(state: StateField, p: BioParams, dt: float) -> StateField:
    """One sequential (stagewise) transformation step.

    Stages run in order uptake -> mortality -> respiration -> SOM turnover
    -> FOM turnover; each reads the values already updated by earlier
    stages. Each flux is clamped to its donor pool.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    out = state.copy()
    mb, dom, som, fom, co2 = out.as_tuple()

    uptake = p.v_dom * dom / (p.k_dom + dom) * mb * dt
    np.minimum(uptake, dom, out=uptake)
    mb += uptake
    dom -= uptake

    morta = np.minimum(p.mu * mb * dt, mb)
    mb -= morta
    dom += p.beta * morta
    som += (1.0 - p.beta) * morta

    resp = np.minimum(p.rho * mb * dt, mb)
    mb -= resp
    co2 += resp

    turn_som = np.minimum(p.v_som * som * dt, som)
    som -= turn_som
    dom += turn_som

    turn_fom = np.minimum(p.v_fom * fom * dt, fom)
    fom -= turn_fom
    dom += turn_fom

    return out
