"""Python bindings for the rubi-bench C++ core."""

from ._core import (
    ConfigError,
    RunExists,
    bias_audit,
    gen_data,
    gradcheck,
    load_run,
    lr_at,
    predict,
    resolve_config,
    run_id,
    run_label,
    total_variation,
    train,
)

__all__ = [
    "ConfigError",
    "RunExists",
    "bias_audit",
    "gen_data",
    "gradcheck",
    "load_run",
    "lr_at",
    "predict",
    "resolve_config",
    "run_id",
    "run_label",
    "total_variation",
    "train",
]
