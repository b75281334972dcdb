# Copyright (c) 2026 The EAR Attention Authors.
# SPDX-License-Identifier: Apache-2.0
"""Error-aware block-sparse attention with centroid compensation."""

from ear_attention._core import (
    CapabilityError,
    ConfigError,
    EarError,
    InputError,
    ShapeError,
    estimate_errors,
    full_attention,
    harness,
    kmeans,
    read_tensor_file,
    run_pipeline,
    sparse_attention,
    write_tensor_file,
)

__all__ = [
    "CapabilityError",
    "ConfigError",
    "EarError",
    "InputError",
    "ShapeError",
    "estimate_errors",
    "full_attention",
    "harness",
    "kmeans",
    "read_tensor_file",
    "run_pipeline",
    "sparse_attention",
    "write_tensor_file",
]
