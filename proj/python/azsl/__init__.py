"""Python bindings for the azsl C++ core."""

from ._core import (
    Config,
    ConfigError,
    Error,
    ProtocolError,
    audit,
    audit_file,
    harmonic_mean,
    make_synthetic,
    per_class_top1,
    run_experiment,
)

__all__ = [
    "Config",
    "ConfigError",
    "Error",
    "ProtocolError",
    "audit",
    "audit_file",
    "harmonic_mean",
    "make_synthetic",
    "per_class_top1",
    "run_experiment",
]
