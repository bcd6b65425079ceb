"""Evaluation harness: accuracy metrics, the sampling TTC oracle, and the
synthetic crossing scenario."""

from .metrics import (
    GroundTruthRecord,
    MetricRow,
    compare,
    detection_accuracy,
    read_ground_truth,
    rmse_location,
    rmse_velocity,
    ttc_oracle,
    write_ground_truth,
)
