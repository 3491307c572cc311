import os

import narwhals as nw
from narwhals.typing import Frame

from ..unit_commitment import NadirLinearization, UCInstance, load_technologies

PACKAGE_DIR: str = os.path.dirname(os.path.abspath(__file__))
AVAILABLE_DATASETS: list[str] = ["uc_desk_technologies", "uc_desk_demand", "uc_desk_system"]
DESK_N_TCL: int = 500


def _load_data(dataset_name: str, backend: str) -> Frame:
    """
    Load one of the datasets shipped with uzawa.

    Args:
        dataset_name: Name of the dataset, one of `AVAILABLE_DATASETS`.
        backend: The output format of the dataframe.

    Returns:
        A dataframe with the specified dataset.
    """
    dataset_name = dataset_name.lower()
    if dataset_name not in AVAILABLE_DATASETS:
        raise ValueError(
            f"`dataset_name` must be one of: {', '.join(AVAILABLE_DATASETS)}, "
            f"not {dataset_name!r}"
        )
    dataset_path = os.path.join(PACKAGE_DIR, f"{dataset_name}.csv")
    return nw.read_csv(dataset_path, backend=backend).to_native()


def load_uc_technologies(output_format: str = "pandas") -> Frame:
    """
    Load the generation technologies of the desk unit commitment.

    Columns are `name, c1, c2, c3, capacity, headroom, fr_slope, inertia,
    profile`; capacities are in MW for a fleet of 500 TCLs, and `profile`
    names the availability column of the demand table that scales the
    capacity slot by slot.

    Args:
        output_format: The output format of the dataframe, e.g. "pandas" or
            "polars" (which must then be installed).

    Returns:
        The technologies table.
    """
    return _load_data("uc_desk_technologies", backend=output_format)


def load_uc_demand(output_format: str = "pandas") -> Frame:
    """
    Load the 48 half-hourly slots of the desk unit commitment.

    Columns are `slot`, `demand` (inflexible demand in MW) and `wind`
    (availability factor of the wind fleet).

    Args:
        output_format: The output format of the dataframe.

    Returns:
        The demand table.
    """
    return _load_data("uc_desk_demand", backend=output_format)


def load_desk_uc(
    n_tcl: int = DESK_N_TCL,
    fr_enabled: bool = True,
    nadir: NadirLinearization | None = None,
    **overrides,
) -> UCInstance:
    """
    Build the desk unit commitment, resized for a fleet of `n_tcl` TCLs.

    Demand, capacities and the largest loss scale linearly with
    `n_tcl / 500`.

    Args:
        n_tcl: Fleet size.
        fr_enabled: Whether the frequency security rows are included.
        nadir: Optional linearized nadir row.
        **overrides: Replacements of the system parameters, e.g. `mu=0`.

    Returns:
        The `UCInstance`.
    """
    if n_tcl < 1:
        raise ValueError(f"`n_tcl` must be at least 1, not {n_tcl}")
    demand = nw.from_native(_load_data("uc_desk_demand", backend="pandas"))
    technologies = nw.from_native(_load_data("uc_desk_technologies", backend="pandas"))
    system = nw.from_native(_load_data("uc_desk_system", backend="pandas"))

    parameters = {
        row["parameter"]: float(row["value"]) for row in system.rows(named=True)
    }
    unknown = set(overrides) - set(parameters)
    if unknown:
        raise ValueError(f"unknown system parameters: {', '.join(sorted(unknown))}")
    parameters.update(overrides)
    base_n = int(parameters.pop("n_tcl"))

    profiles = {
        name: demand[name].to_numpy() for name in demand.columns if name not in ("slot",)
    }
    uc = UCInstance(
        technologies=load_technologies(technologies.rows(named=True), profiles),
        demand=profiles["demand"],
        n_tcl=base_n,
        fr_enabled=fr_enabled,
        nadir=nadir,
        **parameters,
    )
    if n_tcl == base_n:
        return uc
    return uc.scaled(n_tcl / base_n)
