"""
Coordination of a TCL fleet with the unit commitment through prices.
"""

import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.figure import Figure
from scipy.stats import pearsonr

from .core import PriceSignal, StepSchedule, StreamPurpose, derive_stream
from .dual_ascent import DualTrace, sampled_stochastic_uzawa
from .tcl import BAUResult, TCLPopulation, bau_baseline, hourly_sigma
from .unit_commitment import (
    AggregateProfile,
    Dispatch,
    UCInstance,
    make_uc_problem_instance,
    uc_cost,
)
from ._utils import _get_first_n_colors, _themify, _write_csv

logger = logging.getLogger(__name__)


@dataclass
class CoordinationResult:
    """
    Outcome of one coordination run.

    Attributes:
        sigma (float | None): Volatility scenario in degC/sqrt(h), None when
            the fleet was used as given.
        prices (PriceSignal): Final prices `(p, rho)`.
        profile (AggregateProfile): Mean consumption and response of the
            evaluation fleet under the final prices.
        dispatch (Dispatch): Unit commitment serving that profile.
        fs_cost (float): System cost with the flexible fleet.
        bau (BAUResult): Thermostat baseline.
        bau_dispatch (Dispatch): Unit commitment serving the baseline.
        trace (DualTrace): The price iterations.
        correlation (float): Pearson correlation of `p` and `U` over slots,
            NaN when either is constant.
    """

    sigma: float | None
    prices: PriceSignal
    profile: AggregateProfile
    dispatch: Dispatch
    fs_cost: float
    bau: BAUResult = field(repr=False)
    bau_dispatch: Dispatch = field(repr=False)
    trace: DualTrace = field(repr=False)
    correlation: float = float("nan")

    @property
    def bau_cost(self) -> float:
        return self.bau_dispatch.cost

    @property
    def saving(self) -> float:
        """Relative cost reduction `(BAU - FS) / BAU`."""
        return (self.bau_cost - self.fs_cost) / self.bau_cost

    def plot(self, colors: list[str] | None = None) -> Figure:
        """
        Energy price against the fleet consumption, and response price
        against the allocated response, slot by slot.

        Args:
            colors: Two colors, one per curve.

        Returns:
            A matplotlib Figure.
        """
        colors = _get_first_n_colors(colors, 2)
        slots = np.arange(self.prices.n_slots)
        fig, axs = plt.subplots(ncols=2, figsize=(12, 4.5))
        for ax, price, quantity, name in zip(
            axs,
            self.prices.values,
            (self.profile.U, self.profile.R),
            ("U", "R"),
        ):
            ax.step(slots, price, where="post", color=colors[0], label="price")
            twin = ax.twinx()
            twin.plot(slots, quantity, color=colors[1], label=f"{name} (W)")
            twin.spines[["top", "right", "left", "bottom"]].set_visible(False)
            twin.tick_params(size=0, labelsize=8)
            ax.set_xlabel("slot")
            ax.set_ylabel("price")
            twin.set_ylabel(f"{name} (W)")
            _themify(ax)
        axs[0].set_title(f"Energy, r = {self.correlation:.2f}", size=10)
        axs[1].set_title("Frequency response", size=10)
        return fig


def evaluate_prices(
    population: TCLPopulation,
    prices: PriceSignal,
    seed: int,
    workers: int = 1,
) -> AggregateProfile:
    """
    Mean profile of the whole fleet under `prices`, simulated with the
    evaluation streams, which no dual iteration uses.

    Every device responds with a share of its own consumption, so the mean
    response is capped at the mean consumption only to absorb rounding.
    """
    agents = np.arange(population.n_agents)
    policies, which = population.policies(agents, prices, workers)
    streams = [derive_stream(seed, int(i), 0, 0, StreamPurpose.EVALUATION) for i in agents]
    paths = population.run(agents, policies, which, streams)
    U = paths.U.mean(axis=0)
    R = paths.R.mean(axis=0)
    excess = float(np.max(R - U, initial=0.0))
    if excess > 0:
        logger.debug(
            "Capped the mean response at the mean consumption (excess %.3g W)", excess
        )
        R = np.minimum(R, U)
    return AggregateProfile(U, R)


def _check_compatible(population: TCLPopulation, uc: UCInstance):
    grid = population.grid
    if grid.n_slots != uc.n_slots:
        raise ValueError(
            f"the fleet has {grid.n_slots} slots but the unit commitment {uc.n_slots}"
        )
    if not np.isclose(grid.slot_length / 3600.0, uc.slot_hours):
        raise ValueError(
            f"slot lengths differ: {grid.slot_length / 3600.0} h for the fleet, "
            f"{uc.slot_hours} h for the unit commitment"
        )
    if population.n_tcl != uc.n_tcl:
        raise ValueError(
            f"`n_tcl` differs: {population.n_tcl} for the fleet, {uc.n_tcl} for the "
            "unit commitment"
        )


def coordination_experiment(
    population: TCLPopulation,
    uc: UCInstance,
    schedule: StepSchedule,
    m: int,
    K: int,
    seed: int,
    sigma: float | None = None,
    workers: int = 1,
    lambda0: PriceSignal | np.ndarray | None = None,
) -> CoordinationResult:
    """
    Coordinate a TCL fleet with the unit commitment by Sampled Stochastic Uzawa.

    After `K` iterations, the whole fleet is simulated under the final
    prices with fresh noise, and the system cost of serving that profile
    is compared with the cost of serving the thermostat baseline.

    Args:
        population: The fleet.
        uc: The unit commitment instance, with the same slots and fleet size.
        schedule: Step sizes.
        m: TCLs sampled per iteration.
        K: Number of iterations.
        seed: Master seed.
        sigma: Volatility scenario in degC/sqrt(h), replacing the fleet's.
        workers: Maximum number of concurrent best responses.
        lambda0: Initial prices, zero by default.

    Returns:
        A `CoordinationResult`.
    """
    if sigma is not None:
        population = population.with_sigma(hourly_sigma(sigma))
    _check_compatible(population, uc)
    warnings.warn(
        "the response coupling is nonlinear in the consumption; "
        "convergence is monitored empirically",
        category=UserWarning,
    )
    problem = make_uc_problem_instance(uc, population)
    trace = sampled_stochastic_uzawa(
        problem, m, schedule, K, seed, lambda0=lambda0, workers=workers
    )
    prices = trace.final

    profile = evaluate_prices(population, prices, seed, workers)
    fs_cost, dispatch = uc_cost(uc, profile)
    bau = bau_baseline(population, seed=seed)
    _, bau_dispatch = uc_cost(uc, AggregateProfile(bau.U, bau.R))

    p = prices.channel("energy")
    correlation = float("nan")
    if np.ptp(p) > 0 and np.ptp(profile.U) > 0:
        correlation = float(pearsonr(p, profile.U).statistic)
    logger.info(
        "sigma=%s: FS cost %.6g, BAU cost %.6g, corr(p, U) %.3f",
        sigma,
        fs_cost,
        bau_dispatch.cost,
        correlation,
    )
    return CoordinationResult(
        sigma=sigma,
        prices=prices,
        profile=profile,
        dispatch=dispatch,
        fs_cost=fs_cost,
        bau=bau,
        bau_dispatch=bau_dispatch,
        trace=trace,
        correlation=correlation,
    )


def write_coordination(
    results: Sequence[CoordinationResult], directory: str | os.PathLike
) -> list[str]:
    """
    Write the run artifact of one or more volatility scenarios.

    Every CSV holds one block per scenario, identified by its `sigma`
    column: `prices.csv`, `aggregate.csv`, `dispatch.csv`, `costs.csv` and
    one `trace_sigma=<sigma>.csv` per scenario.

    Returns:
        The written paths.
    """
    os.makedirs(directory, exist_ok=True)
    prices: dict[str, list] = {"sigma": [], "slot": [], "p": [], "rho": []}
    aggregate: dict[str, list] = {"sigma": [], "slot": [], "U": [], "R": [], "U_bau": []}
    dispatch: dict[str, list] = {k: [] for k in ("sigma", "slot", "technology", "H", "G", "R")}
    costs: dict[str, list] = {
        "sigma": [],
        "bau_cost": [],
        "fs_cost": [],
        "saving": [],
        "correlation": [],
    }
    paths = []
    for result in results:
        label = "" if result.sigma is None else f"{result.sigma:g}"
        S = result.prices.n_slots
        prices["sigma"] += [label] * S
        prices["slot"] += list(range(S))
        prices["p"] += list(result.prices.channel("energy"))
        prices["rho"] += list(result.prices.channel("response"))
        aggregate["sigma"] += [label] * S
        aggregate["slot"] += list(range(S))
        aggregate["U"] += list(result.profile.U)
        aggregate["R"] += list(result.profile.R)
        aggregate["U_bau"] += list(result.bau.U)
        columns = result.dispatch.columns()
        dispatch["sigma"] += [label] * len(columns["slot"])
        for key in ("slot", "technology", "H", "G", "R"):
            dispatch[key] += list(columns[key])
        costs["sigma"].append(label)
        costs["bau_cost"].append(result.bau_cost)
        costs["fs_cost"].append(result.fs_cost)
        costs["saving"].append(result.saving)
        costs["correlation"].append(result.correlation)
        paths.append(
            result.trace.to_csv(os.path.join(directory, f"trace_sigma={label or 'none'}.csv"))
        )
    for name, columns in (
        ("prices.csv", prices),
        ("aggregate.csv", aggregate),
        ("dispatch.csv", dispatch),
        ("costs.csv", costs),
    ):
        paths.append(_write_csv(columns, os.path.join(directory, name)))
    return paths
