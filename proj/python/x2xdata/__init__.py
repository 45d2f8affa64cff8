"""Python surface of the x2x training-data pipeline core."""

import json as _json

from _x2xdata import (
    PipelineError,
    chrf_surrogate,
    enumerate_directions,
    filter_preferences,
    ingest_corpus,
    plan_tasks,
    render_direct,
    render_eaxt,
    select_pair,
    training_defaults_json,
)

__all__ = [
    "PipelineError",
    "chrf_surrogate",
    "enumerate_directions",
    "filter_preferences",
    "ingest_corpus",
    "plan_tasks",
    "render_direct",
    "render_eaxt",
    "select_pair",
    "training_defaults",
    "training_defaults_json",
]


def training_defaults():
    """Recommended downstream training settings as a dict."""
    return _json.loads(training_defaults_json())
