"""Two-stage refinement of 3D detections on simulated driving scenes."""

import json

from ._relrefine import (
    Box3D,
    bev_iou,
    count_dense_gnn,
    count_inter,
    count_intra,
    default_config,
    heading_delta,
    radius_graph,
    simulate,
)
from . import _relrefine


def evaluate_scene(path):
    """AP/APH report of a scene file as a dict."""
    return json.loads(_relrefine.evaluate_scene(str(path)))


def run_pipeline(config="", seed=1, out_dir=""):
    """Runs every stage and returns the metrics report as a dict."""
    return json.loads(_relrefine.run_pipeline(config, seed, str(out_dir)))


__all__ = [
    "Box3D",
    "bev_iou",
    "count_dense_gnn",
    "count_inter",
    "count_intra",
    "default_config",
    "evaluate_scene",
    "heading_delta",
    "radius_graph",
    "run_pipeline",
    "simulate",
]
