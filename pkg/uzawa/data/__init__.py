from .datasets import load_uc_technologies, load_uc_demand, load_desk_uc, _load_data

__all__: list[str] = ["load_uc_technologies", "load_uc_demand", "load_desk_uc", "_load_data"]
