"""Image-fit loop: simulate, render and compare candidate ensembles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..dynamics import (
    ForceConfig,
    HeatingModel,
    LaserCooling,
    TrajectoryRecorder,
    evolve,
    init_ensemble,
    secular_temperature,
    thermostat_heating,
)
from ..trapmodel import IonSpecies, TrapConfig
from .imaging import CcdImage, ImageConfig, image_similarity, render_ccd
from .structure import structure_metrics

#: Isotropic friction (1/s) used to hold simulated candidates at a set temperature.
THERMOSTAT_BETA_OVER_M = 2e4


@dataclass(frozen=True)
class Candidate:
    params: dict
    score: float


@dataclass
class FitResult:
    best: dict
    score: float
    candidates: list[Candidate] = field(default_factory=list)
    derived: dict = field(default_factory=dict)

    def report(self) -> str:
        """Plain-text key-value block."""

        def fmt(v):
            return repr(float(v)) if isinstance(v, (float, np.floating)) else repr(v)

        lines = [f"score = {fmt(self.score)}"]
        lines += [f"{k} = {fmt(v)}" for k, v in self.best.items()]
        lines += [f"{k} = {fmt(v)}" for k, v in self.derived.items()]
        lines.append(f"candidates = {len(self.candidates)}")
        return "\n".join(lines) + "\n"


def grid_search(reference: CcdImage, simulate: Callable[[dict], CcdImage], grid: Mapping[str, Sequence],
                fixed: Mapping | None = None) -> FitResult:
    """Score every grid point by image similarity; the first maximum wins ties.

    ``simulate`` receives the merged ``fixed`` and grid parameters and must
    return an image with the reference's configuration.
    """
    keys = list(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ValueError("degenerate search space")
    fixed = dict(fixed or {})
    cands = []
    best = None
    for values in itertools.product(*(grid[k] for k in keys)):
        params = {**fixed, **dict(zip(keys, values))}
        img = simulate(params)
        if img.config != reference.config:
            raise ValueError("rendered image configuration differs from the reference")
        score = image_similarity(reference, img)
        cands.append(Candidate(params, score))
        if best is None or score > best.score:
            best = cands[-1]
    return FitResult(dict(best.params), best.score, cands)


@dataclass(frozen=True)
class EnsembleSimulator:
    """Simulate a candidate ensemble and render its CCD image.

    Parameters accepted by :meth:`__call__`: ``counts`` (mapping species name
    to number, or the shortcut key ``N`` for the first species), either
    ``temperature`` (isotropic thermostat on all species) or ``heating``
    (mapping name to h_j in K/s, with laser cooling along z). The run
    equilibrates for ``settle`` and renders ``image.exposure`` of samples.
    With ``repeats`` > 1 the image is the mean over that many seeds, an
    estimate of the expected image: a single finite exposure carries speckle
    from the particular ion arrangement, which favours smoother (hotter)
    candidates when compared with an equally speckled reference.
    """

    trap: TrapConfig
    species: tuple[IonSpecies, ...]
    image: ImageConfig
    seed: int = 0
    settle: float = 3e-4
    sample_stride: int = 20
    timestep: float | None = None
    cooling_axes: str = "z"
    repeats: int = 1

    def _counts(self, params) -> dict:
        counts = {sp.name: 0 for sp in self.species}
        if "counts" in params:
            counts.update(params["counts"])
        for sp in self.species:
            key = f"N_{sp.name}"
            if key in params:
                counts[sp.name] = int(params[key])
        if "N" in params:
            counts[self.species[0].name] = int(params["N"])
        return counts

    def run(self, params: Mapping) -> tuple[list, dict]:
        counts = self._counts(params)
        table = {sp.name: sp for sp in self.species}
        present = [(table[k], n) for k, n in counts.items() if n > 0]
        state = init_ensemble(present, self.trap, seed=int(params.get("seed", self.seed)),
                              initial_temperature=float(params.get("temperature", 0.01)))
        dt = self.timestep or ForceConfig.pseudo_timestep(self.trap, [sp for sp, _ in present])
        cfg = ForceConfig("pseudopotential", self.trap, dt)
        if "temperature" in params:
            t = float(params["temperature"])
            beta = {sp.name: sp.mass * THERMOSTAT_BETA_OVER_M for sp, _ in present}
            cooling = LaserCooling(axes="xyz", beta=beta)
            heating = HeatingModel(rates={n: thermostat_heating(t, THERMOSTAT_BETA_OVER_M) for n in beta})
        else:
            cooling = LaserCooling(axes=self.cooling_axes)
            heating = HeatingModel(rates=dict(params.get("heating", {})))
        evolve(state, cfg, cooling, heating, duration=self.settle)
        rec = TrajectoryRecorder(self.sample_stride, velocities=True)
        evolve(state, cfg, cooling, heating, duration=self.image.exposure, observers=[rec])
        return rec.snapshots, {"state": state, "config": cfg}

    def __call__(self, params: Mapping) -> CcdImage:
        seed = int(params.get("seed", self.seed))
        images = []
        for k in range(self.repeats):
            samples, _ = self.run({**params, "seed": seed + k})
            images.append(render_ccd(samples, self.image))
        if self.repeats == 1:
            return images[0]
        first = images[0]
        return CcdImage(np.mean([im.data for im in images], axis=0), first.config, first.species, first.time_span)


def fit_ensemble(reference: CcdImage, simulator: EnsembleSimulator, grid: Mapping[str, Sequence],
                 fixed: Mapping | None = None) -> FitResult:
    """Grid search of ion numbers and temperatures (or heating rates) against ``reference``."""
    if reference.config != simulator.image:
        raise ValueError("reference and simulator image configurations differ")
    return grid_search(reference, simulator, grid, fixed)


def sequential_fit(reference: CcdImage, stages: Sequence[tuple[Callable[[dict], CcdImage], Mapping[str, Sequence]]],
                   start: Mapping) -> FitResult:
    """Grid-search the stages in turn, each with the best values so far held fixed.

    ``stages`` is a sequence of ``(simulate, grid)`` pairs; ``start`` gives
    the initial values of parameters that are fitted in a later stage.
    """
    current = dict(start)
    cands = []
    res = None
    for simulate, grid in stages:
        fixed = {k: v for k, v in current.items() if k not in grid}
        res = grid_search(reference, simulate, grid, fixed)
        cands += res.candidates
        current = dict(res.best)
    return FitResult(current, res.score, cands)


def staged_heating_fit(
    reduced_reference: CcdImage,
    full_reference: CcdImage,
    simulator: EnsembleSimulator,
    lc: str,
    sc_inert: str,
    sc_heated: str,
    stage1: Mapping[str, Sequence],
    h_sc_grid: Sequence[float],
    sc_heated_count: int,
) -> FitResult:
    """Two-stage heating-rate fit.

    Stage 1 fits the LC and inert-SC counts and the common heating rate
    ``h_LC`` (``stage1`` keys ``N_<lc>``, ``N_<sc_inert>``, ``h_lc``) on the
    image of the reduced system, where the inert sympathetic species shares
    the LC heating rate. Stage 2 adds ``sc_heated_count`` ions of
    ``sc_heated`` and fits their heating rate alone with everything else
    frozen. The derived block reports the sympathetic-species temperature of
    the best stage-2 run and the sympathetic cooling rate, which equals
    ``h_SC`` in equilibrium.
    """

    def sim1(p):
        q = {k: v for k, v in p.items() if k != "h_lc"}
        q["heating"] = {lc: p["h_lc"], sc_inert: p["h_lc"]}
        return simulator(q)

    first = grid_search(reduced_reference, sim1, stage1)
    frozen = dict(first.best)
    h_lc = frozen["h_lc"]
    counts_key = f"N_{sc_heated}"

    def sim2(p):
        q = {k: v for k, v in p.items() if k not in ("h_lc", "h_sc")}
        q[counts_key] = sc_heated_count
        q["heating"] = {lc: h_lc, sc_inert: h_lc, sc_heated: p["h_sc"]}
        return simulator(q)

    second = grid_search(full_reference, sim2, {"h_sc": list(h_sc_grid)}, frozen)
    best = dict(second.best)
    q = {k: v for k, v in best.items() if k not in ("h_lc", "h_sc")}
    q[counts_key] = sc_heated_count
    q["heating"] = {lc: h_lc, sc_inert: h_lc, sc_heated: best["h_sc"]}
    samples, _ = simulator.run(q)
    temps = secular_temperature(samples)
    derived = {
        f"T_{sc_heated}": temps.get(sc_heated, math.nan),
        f"T_{lc}": temps.get(lc, math.nan),
        "sympathetic_cooling_rate": best["h_sc"],
        "stage1_score": first.score,
    }
    return FitResult(best, second.score, first.candidates + second.candidates, derived)


def sc_temperature_bound(
    simulator: EnsembleSimulator,
    base: Mapping,
    lc: str,
    sc: str,
    h_sc_values: Sequence[float],
) -> dict:
    """Upper bound on the sympathetic-species temperature from LC shell visibility.

    Raises ``h_SC`` through ``h_sc_values`` (ascending) until the LC
    sub-ensemble shows no shells. Returns the last rate with visible shells,
    the SC temperature reached there (the bound) and the rate at which the
    shells vanished (None if they never did).
    """
    last_ok = None
    for h in h_sc_values:
        heating = dict(base.get("heating", {}))
        heating[sc] = h
        samples, _ = simulator.run({**base, "heating": heating})
        m = structure_metrics(samples, species=lc)
        t_sc = secular_temperature(samples).get(sc, math.nan)
        if m.shell_count == 0:
            return {"h_sc_visible": None if last_ok is None else last_ok[0],
                    "T_sc_bound": None if last_ok is None else last_ok[1], "h_sc_lost": h}
        last_ok = (h, t_sc)
    return {"h_sc_visible": last_ok[0], "T_sc_bound": last_ok[1], "h_sc_lost": None}
