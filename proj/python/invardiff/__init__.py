# Copyright (c) 2026, The InvarDiff Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to InvarDiff plan files, stats tables and heatmaps."""

import json
from pathlib import Path

from ._core import (
    PLAN_FORMAT_VERSION,
    PlanViolation,
    calibrate,
    normalize_plan,
    parse_stats_csv,
    plan_bits,
    plan_summary,
    quantile_cut,
    read_pgm,
    stats_header,
    threshold_preset,
    threshold_presets,
    warmup_steps,
)

__all__ = [
    "PLAN_FORMAT_VERSION",
    "PlanViolation",
    "calibrate",
    "load_plan",
    "load_stats",
    "normalize_plan",
    "parse_stats_csv",
    "plan_bits",
    "plan_summary",
    "quantile_cut",
    "read_pgm",
    "stats_header",
    "threshold_preset",
    "threshold_presets",
    "warmup_steps",
]


def load_plan(path):
    """Validate a PlanFile and return its parsed JSON document."""
    return json.loads(normalize_plan(Path(path).read_text()))


def load_stats(path):
    """Parse a stats CSV into {"families": [...], "rows": [...]}."""
    return parse_stats_csv(Path(path).read_text())
