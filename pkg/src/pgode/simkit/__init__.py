from .params import (
    PARAM_KEYS,
    SPLITS,
    SplitSpec,
    SystemParams,
    default_split_spec,
    in_box,
    sample_params,
)
from .dataset import (
    FORMAT_VERSION,
    SYSTEMS,
    build_dataset,
    load_dataset,
    load_manifest,
    load_split,
    record_to_sample,
    sample_to_record,
)
from .simulate import (
    DT_INNER,
    R_MIN,
    SUBSAMPLE,
    TrajectorySample,
    simulate_charged,
    simulate_springs,
    springs_energy,
    total_momentum,
)
from . import kernels

__all__ = [
    "PARAM_KEYS", "SPLITS", "SplitSpec", "SystemParams", "default_split_spec",
    "in_box", "sample_params", "FORMAT_VERSION", "SYSTEMS", "build_dataset",
    "load_dataset", "load_manifest", "load_split", "record_to_sample",
    "sample_to_record", "DT_INNER", "R_MIN", "SUBSAMPLE", "TrajectorySample",
    "simulate_charged", "simulate_springs", "springs_energy", "total_momentum",
    "kernels",
]
