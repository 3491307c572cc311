"""
Unit commitment aggregate oracle.

The system operator commits (`H`), dispatches (`G`) and allocates frequency
response (`R`) from `Z` generation technologies, slot by slot, to serve an
inflexible demand plus the TCL fleet consumption `n U_TCL`, while the
fleet contributes `n R_TCL` of response. Powers are in MW, costs are
integrated over the slot length in hours and the TCL quantities are
per-device means in W.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import AggregateOracle, PriceSignal, ProblemInstance
from .qp import QPProblem, QPSolution, qp_solve

logger = logging.getLogger(__name__)

TCL_CHANNELS: tuple[str, str] = ("energy", "response")


def tcl_power_to_mw(power_w: np.ndarray | float, n: int) -> np.ndarray | float:
    """Total fleet power in MW of `n` devices drawing `power_w` watts each."""
    return n * np.asarray(power_w, dtype=float) * 1e-6


@dataclass(frozen=True, eq=False)
class Technology:
    """
    One generation technology, aggregated as a fleet.

    Attributes:
        name (str): Technology name.
        c1 (float): No-load cost per MWh of committed capacity.
        c2 (float): Linear production cost per MWh.
        c3 (float): Quadratic production cost per MW^2 h.
        capacity (np.ndarray | float): Available capacity `G_max` in MW, one
            value or one per slot.
        headroom (float): Fraction `r` of the committed capacity usable as
            response.
        fr_slope (float): Slope `s` linking response and spare capacity.
        inertia (float): Inertia constant `h` in seconds.
    """

    name: str
    c1: float
    c2: float
    c3: float
    capacity: np.ndarray | float
    headroom: float = 0.0
    fr_slope: float = 0.0
    inertia: float = 0.0

    def __post_init__(self):
        for attr in ("c1", "c2", "c3", "inertia"):
            if getattr(self, attr) < 0:
                raise ValueError(f"`{attr}` must be nonnegative, not {getattr(self, attr)}")
        for attr in ("headroom", "fr_slope"):
            if not 0 <= getattr(self, attr) <= 1:
                raise ValueError(f"`{attr}` must be in [0, 1], not {getattr(self, attr)}")
        capacity = np.atleast_1d(np.asarray(self.capacity, dtype=float))
        if np.any(capacity < 0) or not np.all(np.isfinite(capacity)):
            raise ValueError("`capacity` must be finite and nonnegative")
        object.__setattr__(self, "capacity", capacity)


@dataclass(frozen=True)
class NadirLinearization:
    """
    Linearization of `q - H_sys R_sys <= 0` around `(inertia, reserve)`.

    Attributes:
        q_bar (float): Right-hand side of the nadir condition.
        inertia (float): Nominal system inertia.
        reserve (float): Nominal total reserve in MW.
    """

    q_bar: float
    inertia: float
    reserve: float


@dataclass(eq=False)
class UCInstance:
    """
    A unit commitment instance over `S` slots.

    Attributes:
        technologies (list[Technology]): Generation technologies.
        demand (np.ndarray): Inflexible demand per slot, in MW.
        n_tcl (int): Number of TCLs in the fleet.
        slot_hours (float): Slot length in hours.
        delta_gl (float): Largest generation loss `Delta G_L` in MW.
        damping (float): Load damping `Lambda` per Hz.
        f0 (float): Nominal frequency in Hz.
        h_loss (float): Inertia constant of the lost generation in seconds.
        t_d (float): Response delivery time in seconds.
        t_ref (float): Rate-of-change-of-frequency time in seconds.
        df_qss (float): Largest quasi-steady-state frequency deviation in Hz.
        df_ref (float): Largest deviation at `t_ref`, in Hz.
        mu (float): Minimum dispatch fraction of the response headroom.
        fr_enabled (bool): Whether the frequency security rows are included.
        nadir (NadirLinearization | None): Linearized nadir row, off when None.
        tcl_max_power (float): Upper bound of the mean TCL consumption in W.
    """

    technologies: list[Technology]
    demand: np.ndarray
    n_tcl: int
    slot_hours: float = 0.5
    delta_gl: float = 0.0
    damping: float = 0.0
    f0: float = 50.0
    h_loss: float = 0.0
    t_d: float = 10.0
    t_ref: float = 0.5
    df_qss: float = 0.5
    df_ref: float = 1.0
    mu: float = 0.0
    fr_enabled: bool = True
    nadir: NadirLinearization | None = None
    tcl_max_power: float = 180.0
    capacity: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.demand = np.atleast_1d(np.asarray(self.demand, dtype=float))
        if np.any(self.demand < 0):
            raise ValueError("`demand` must be nonnegative")
        if not self.technologies:
            raise ValueError("`technologies` must not be empty")
        if self.n_tcl < 0:
            raise ValueError(f"`n_tcl` must be nonnegative, not {self.n_tcl}")
        if not self.slot_hours > 0:
            raise ValueError(f"`slot_hours` must be positive, not {self.slot_hours}")
        if not 0 <= self.mu <= 1:
            raise ValueError(f"`mu` must be in [0, 1], not {self.mu}")
        if not self.tcl_max_power > 0:
            raise ValueError(f"`tcl_max_power` must be positive, not {self.tcl_max_power}")
        capacity = []
        for tech in self.technologies:
            if tech.capacity.size not in (1, self.n_slots):
                raise ValueError(
                    f"capacity of `{tech.name}` must have 1 or {self.n_slots} values"
                )
            capacity.append(np.broadcast_to(tech.capacity, (self.n_slots,)))
        self.capacity = np.array(capacity)

    @property
    def n_slots(self) -> int:
        return self.demand.shape[0]

    @property
    def names(self) -> list[str]:
        return [tech.name for tech in self.technologies]

    @property
    def pairing_weight(self) -> float:
        """`n 10^-6 slot_hours`: converts a W price pairing into money."""
        return float(tcl_power_to_mw(1.0, self.n_tcl)) * self.slot_hours

    def scaled(self, factor: float) -> "UCInstance":
        """Instance resized by `factor`, fleet included."""
        if not factor > 0:
            raise ValueError(f"`factor` must be positive, not {factor}")
        technologies = [
            Technology(
                t.name, t.c1, t.c2, t.c3, t.capacity * factor, t.headroom, t.fr_slope, t.inertia
            )
            for t in self.technologies
        ]
        nadir = self.nadir
        if nadir is not None:
            nadir = NadirLinearization(
                nadir.q_bar * factor**2, nadir.inertia * factor, nadir.reserve * factor
            )
        return UCInstance(
            technologies=technologies,
            demand=self.demand * factor,
            n_tcl=int(round(self.n_tcl * factor)),
            slot_hours=self.slot_hours,
            delta_gl=self.delta_gl * factor,
            damping=self.damping,
            f0=self.f0,
            h_loss=self.h_loss,
            t_d=self.t_d,
            t_ref=self.t_ref,
            df_qss=self.df_qss,
            df_ref=self.df_ref,
            mu=self.mu,
            fr_enabled=self.fr_enabled,
            nadir=nadir,
            tcl_max_power=self.tcl_max_power,
        )


@dataclass
class AggregateProfile:
    """
    Mean TCL consumption and allocated response per slot, in W.

    Attributes:
        U (np.ndarray): Mean consumption `U_TCL`.
        R (np.ndarray): Mean allocated response `R_TCL`, within `[0, U]`.
    """

    U: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.U = np.atleast_1d(np.asarray(self.U, dtype=float))
        self.R = np.atleast_1d(np.asarray(self.R, dtype=float))
        if self.U.shape != self.R.shape:
            raise ValueError(f"`U` {self.U.shape} and `R` {self.R.shape} must match")
        scale = 1e-7 * max(1.0, float(np.abs(self.U).max(initial=0.0)))
        if np.any(self.U < -scale) or np.any(self.R < -scale):
            raise ValueError("`U` and `R` must be nonnegative")
        if np.any(self.R > self.U + scale):
            raise ValueError("`R` must not exceed `U`")

    @classmethod
    def zeros(cls, n_slots: int) -> "AggregateProfile":
        return cls(np.zeros(n_slots), np.zeros(n_slots))

    @classmethod
    def from_coupling(cls, coupling: np.ndarray) -> "AggregateProfile":
        """Profile from a `(energy, response)` coupling matrix, response negated."""
        return cls(coupling[0], -coupling[1])

    def to_coupling(self) -> np.ndarray:
        return np.stack([self.U, -self.R])


@dataclass
class Dispatch:
    """
    Minimized system cost and the optimal schedule.

    Attributes:
        cost (float): System cost `F0`.
        H (np.ndarray): Commitment, shape `(Z, S)`.
        G (np.ndarray): Production in MW, shape `(Z, S)`.
        R (np.ndarray): Allocated response in MW, shape `(Z, S)`.
        names (list[str]): Technology names.
        slot_costs (np.ndarray): System cost of every slot.
        solutions (list[QPSolution]): Raw solutions of the slot problems.
    """

    cost: float
    H: np.ndarray
    G: np.ndarray
    R: np.ndarray
    names: list[str]
    slot_costs: np.ndarray
    solutions: list[QPSolution] = field(default_factory=list, repr=False)

    def columns(self) -> dict[str, np.ndarray]:
        """Long-format columns `slot, technology, H, G, R`."""
        Z, S = self.H.shape
        return {
            "slot": np.tile(np.arange(S), Z),
            "technology": np.repeat(np.array(self.names), S),
            "H": self.H.reshape(-1),
            "G": self.G.reshape(-1),
            "R": self.R.reshape(-1),
        }

    def balance_residual(self, uc: UCInstance, profile: AggregateProfile) -> float:
        """Largest absolute energy balance violation over the slots, in MW."""
        load = uc.demand + tcl_power_to_mw(profile.U, uc.n_tcl)
        return float(np.abs(self.G.sum(axis=0) - load).max())


@dataclass(frozen=True)
class _SlotLayout:
    """Variable layout `[H, G, R(responsive), U_TCL, R_TCL]` of a slot problem."""

    n_tech: int
    responsive: np.ndarray

    @property
    def tail(self) -> int:
        return 2 * self.n_tech + len(self.responsive)

    @property
    def n_vars(self) -> int:
        return self.tail + 2


def _slot_problem(
    uc: UCInstance, slot: int, prices: np.ndarray | None
) -> tuple[QPProblem, _SlotLayout]:
    """
    Joint problem of one slot.

    Only technologies with positive headroom and response slope carry a
    response variable; the others cannot respond.
    """
    Z = len(uc.technologies)
    r = np.array([t.headroom for t in uc.technologies])
    s = np.array([t.fr_slope for t in uc.technologies])
    h = np.array([t.inertia for t in uc.technologies])
    layout = _SlotLayout(Z, np.flatnonzero((r > 0) & (s > 0)))
    n_vars = layout.n_vars
    H, G = np.arange(Z), Z + np.arange(Z)
    R = 2 * Z + np.arange(len(layout.responsive))
    U, Rt = layout.tail, layout.tail + 1
    hours = uc.slot_hours
    kappa = float(tcl_power_to_mw(1.0, uc.n_tcl))
    gmax = uc.capacity[:, slot]
    c1 = np.array([t.c1 for t in uc.technologies])
    c2 = np.array([t.c2 for t in uc.technologies])
    c3 = np.array([t.c3 for t in uc.technologies])

    Q = np.zeros((n_vars, n_vars))
    Q[G, G] = 2.0 * hours * c3
    c = np.zeros(n_vars)
    c[H] = hours * c1 * gmax
    c[G] = hours * c2
    if prices is not None:
        weight = uc.pairing_weight
        c[U] = -weight * prices[0]
        c[Rt] = weight * prices[1]

    A_eq = np.zeros((1, n_vars))
    A_eq[0, G] = 1.0
    A_eq[0, U] = -kappa
    b_eq = np.array([uc.demand[slot]])
    labels_eq = [f"balance[{slot}]"]

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    labels: list[str] = []

    def add(row: np.ndarray, bound: float, label: str):
        rows.append(row)
        rhs.append(bound)
        labels.append(f"{label}[{slot}]")

    for j, tech in enumerate(uc.technologies):
        row = np.zeros(n_vars)
        row[G[j]], row[H[j]] = 1.0, -gmax[j]
        add(row, 0.0, f"capacity:{tech.name}")
        if uc.mu > 0 and r[j] > 0:
            row = np.zeros(n_vars)
            row[H[j]], row[G[j]] = uc.mu * r[j] * gmax[j], -1.0
            add(row, 0.0, f"min_dispatch:{tech.name}")
    for k, j in enumerate(layout.responsive):
        name = uc.technologies[j].name
        row = np.zeros(n_vars)
        row[R[k]], row[H[j]] = 1.0, -r[j] * gmax[j]
        add(row, 0.0, f"headroom:{name}")
        row = np.zeros(n_vars)
        row[R[k]], row[G[j]], row[H[j]] = 1.0, s[j], -s[j] * gmax[j]
        add(row, 0.0, f"fr_slope:{name}")

    if uc.fr_enabled:
        damping = uc.damping * uc.df_qss
        row = np.zeros(n_vars)
        row[R] = -1.0
        row[Rt] = -kappa * (1.0 - damping)
        row[U] = -kappa * damping
        add(row, -uc.delta_gl + damping * uc.demand[slot], "qss")

        inertia = h * gmax / uc.f0
        inertia_loss = uc.h_loss * uc.delta_gl / uc.f0
        row = np.zeros(n_vars)
        row[R] = -uc.t_ref**2
        row[Rt] = -uc.t_ref**2 * kappa
        row[H] = -4.0 * uc.df_ref * uc.t_d * inertia
        add(
            row,
            -2.0 * uc.delta_gl * uc.t_ref * uc.t_d
            - 4.0 * uc.df_ref * uc.t_d * inertia_loss,
            "rocof",
        )

        if uc.nadir is not None:
            nadir = uc.nadir
            row = np.zeros(n_vars)
            row[R] = -nadir.inertia
            row[Rt] = -nadir.inertia * kappa
            row[H] = -nadir.reserve * inertia
            add(
                row,
                -nadir.q_bar - nadir.inertia * nadir.reserve - nadir.reserve * inertia_loss,
                "nadir",
            )

    row = np.zeros(n_vars)
    row[Rt], row[U] = 1.0, -1.0
    add(row, 0.0, "tcl_response")

    lower = np.zeros(n_vars)
    upper = np.full(n_vars, np.inf)
    upper[H] = 1.0
    upper[U] = uc.tcl_max_power
    problem = QPProblem(
        Q=Q,
        c=c,
        A_eq=A_eq,
        b_eq=b_eq,
        A_in=np.array(rows),
        b_in=np.array(rhs),
        lower=lower,
        upper=upper,
        labels_eq=labels_eq,
        labels_in=labels,
    )
    return problem, layout


def _fix_profile(problem: QPProblem, layout: _SlotLayout, U: float, Rt: float) -> QPProblem:
    """Substitute a fixed `(U, R_TCL)` into a joint slot problem."""
    keep = slice(0, layout.tail)
    tail = slice(layout.tail, None)
    fixed = np.array([U, Rt])
    rows = problem.labels_in
    tcl_row = [i for i, label in enumerate(rows) if label.startswith("tcl_response")]
    keep_rows = np.setdiff1d(np.arange(len(rows)), tcl_row)
    return QPProblem(
        Q=problem.Q[keep, keep],
        c=problem.c[keep],
        A_eq=problem.A_eq[:, keep],
        b_eq=problem.b_eq - problem.A_eq[:, tail] @ fixed,
        A_in=problem.A_in[keep_rows][:, keep],
        b_in=(problem.b_in - problem.A_in[:, tail] @ fixed)[keep_rows],
        lower=problem.lower[keep],
        upper=problem.upper[keep],
        labels_eq=problem.labels_eq,
        labels_in=[rows[i] for i in keep_rows],
    )


def _collect(
    uc: UCInstance,
    layout: _SlotLayout,
    solutions: list[QPSolution],
    costs: np.ndarray,
) -> Dispatch:
    Z = layout.n_tech
    x = np.array([sol.x[: layout.tail] for sol in solutions]).T
    R = np.zeros((Z, len(solutions)))
    R[layout.responsive] = x[2 * Z :]
    return Dispatch(
        cost=float(costs.sum()),
        H=x[:Z],
        G=x[Z : 2 * Z],
        R=R,
        names=uc.names,
        slot_costs=costs,
        solutions=solutions,
    )


def uc_cost(
    uc: UCInstance, profile: AggregateProfile, tol: float = 1e-8
) -> tuple[float, Dispatch]:
    """
    System cost `F0(U_TCL, R_TCL)` for a fixed TCL profile.

    Every slot is an independent convex QP over `(H, G, R)` with energy
    balance, commitment bounds, headroom, response slope, frequency
    security and minimum dispatch constraints.

    Args:
        uc: The unit commitment instance.
        profile: Mean TCL consumption and response per slot, in W.
        tol: QP tolerance.

    Returns:
        The minimized cost and the optimal `Dispatch`.

    Raises:
        QPInfeasible: Some slot cannot be served; the binding constraints
            are listed in the exception.
    """
    if profile.U.shape != (uc.n_slots,):
        raise ValueError(f"`profile` must have {uc.n_slots} slots, not {profile.U.shape[0]}")
    solutions = []
    costs = np.empty(uc.n_slots)
    layout = None
    for slot in range(uc.n_slots):
        joint, layout = _slot_problem(uc, slot, None)
        problem = _fix_profile(joint, layout, profile.U[slot], profile.R[slot])
        solution = qp_solve(problem, tol=tol)
        solutions.append(solution)
        costs[slot] = solution.objective
    dispatch = _collect(uc, layout, solutions, costs)
    logger.debug("unit commitment over %d slots: cost %.6g", uc.n_slots, dispatch.cost)
    return dispatch.cost, dispatch


def joint_response(
    uc: UCInstance, prices: PriceSignal, tol: float = 1e-8
) -> tuple[AggregateProfile, Dispatch, float]:
    """
    Solve the joint problem over `(H, G, R, U_TCL, R_TCL)`.

    The objective is the system cost minus the price pairing
    `n 10^-6 slot_hours sum_l (p_l U_l - rho_l R_l)`.

    Returns:
        The aggregate profile, the dispatch (whose cost excludes the price
        pairing) and the joint objective value.
    """
    values = prices.values
    if values.shape != (2, uc.n_slots):
        raise ValueError(
            f"`prices` must have shape (2, {uc.n_slots}) for (energy, response), "
            f"not {values.shape}"
        )
    solutions = []
    costs = np.empty(uc.n_slots)
    U = np.empty(uc.n_slots)
    Rt = np.empty(uc.n_slots)
    objective = 0.0
    layout = None
    for slot in range(uc.n_slots):
        problem, layout = _slot_problem(uc, slot, values[:, slot])
        solution = qp_solve(problem, tol=tol)
        solutions.append(solution)
        x = solution.x
        tail = layout.tail
        U[slot] = min(max(x[tail], 0.0), uc.tcl_max_power)
        Rt[slot] = min(max(x[tail + 1], 0.0), U[slot])
        costs[slot] = solution.objective - float(problem.c[tail:] @ x[tail:])
        objective += solution.objective
    return AggregateProfile(U, Rt), _collect(uc, layout, solutions, costs), objective


def aggregate_response(uc: UCInstance, prices: PriceSignal) -> AggregateProfile:
    """
    Aggregate response `v(lambda)` of the unit commitment.

    Args:
        uc: The unit commitment instance.
        prices: Energy price `p` and response price `rho` per slot.

    Returns:
        The planned `AggregateProfile`.
    """
    profile, _, _ = joint_response(uc, prices)
    return profile


class UCAggregate(AggregateOracle):
    """
    Aggregate oracle of the TCL coordination problem.

    Coupling quantities are `(U_TCL, -R_TCL)`: the response channel pays the
    fleet for the response it allocates.
    """

    def __init__(self, uc: UCInstance):
        self.uc = uc

    def evaluate(self, v: np.ndarray) -> float:
        """UC cost of `v`, projected on `0 <= R_TCL <= U_TCL` first."""
        U = np.clip(v[0], 0.0, None)
        R = np.clip(-v[1], 0.0, U)
        moved = max(float(np.max(np.abs(U - v[0]))), float(np.max(np.abs(R + v[1]))))
        if moved > 1e-9:
            logger.debug("Projected the aggregate profile by up to %.3g", moved)
        profile = AggregateProfile(U, R)
        cost, _ = uc_cost(self.uc, profile)
        return cost

    def v_opt(self, prices: PriceSignal) -> np.ndarray:
        return aggregate_response(self.uc, prices).to_coupling()


def uc_weight(uc: UCInstance) -> np.ndarray:
    """Pairing weight of the TCL coordination problem, `(2, S)`."""
    return np.full((2, uc.n_slots), uc.pairing_weight)


def load_technologies(rows: Sequence[dict], profiles: dict[str, np.ndarray]) -> list[Technology]:
    """
    Technologies from table rows.

    A non-empty `profile` entry multiplies the capacity by the availability
    column of that name in `profiles`.
    """
    technologies = []
    for row in rows:
        capacity = float(row["capacity"])
        profile = row.get("profile")
        if isinstance(profile, str) and profile:
            if profile not in profiles:
                raise ValueError(f"unknown capacity profile `{profile}`")
            capacity = capacity * np.asarray(profiles[profile], dtype=float)
        technologies.append(
            Technology(
                name=str(row["name"]),
                c1=float(row["c1"]),
                c2=float(row["c2"]),
                c3=float(row["c3"]),
                capacity=capacity,
                headroom=float(row["headroom"]),
                fr_slope=float(row["fr_slope"]),
                inertia=float(row["inertia"]),
            )
        )
    return technologies


def make_uc_problem_instance(uc: UCInstance, population) -> ProblemInstance:
    """Pair a TCL population with the unit commitment oracle."""
    return ProblemInstance(
        population=population,
        aggregate=UCAggregate(uc),
        channels=TCL_CHANNELS,
        weight=uc_weight(uc),
        description={
            "problem": "tcl",
            "n_tcl": uc.n_tcl,
            "slots": uc.n_slots,
            "demand": uc.demand.tolist(),
            "technologies": uc.names,
            "fr_enabled": uc.fr_enabled,
        },
        growth=None,
    )
