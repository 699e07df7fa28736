"""Prometheus metrics for gqarch estimation runs.

Design principles:
- Low-cardinality labels only (mode, outcome; never seeds or cell indices)
- Updated once per estimate / replication, never inside the objective
- Dedicated registry so textfile dumps hold gqarch metrics only
"""
from __future__ import annotations

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

REGISTRY = CollectorRegistry()

estimations_total = Counter(
    "gqarch_estimations_total",
    "QML estimations by past mode and outcome",
    ["mode", "outcome"],
    registry=REGISTRY,
)

estimation_seconds = Histogram(
    "gqarch_estimation_seconds",
    "Wall time of one multi-start QML estimation",
    ["mode"],
    buckets=(0.1, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0),
    registry=REGISTRY,
)

mc_replications_total = Counter(
    "gqarch_mc_replications_total",
    "Monte Carlo replications by outcome (completed, failed)",
    ["outcome"],
    registry=REGISTRY,
)

mc_wall_seconds = Gauge(
    "gqarch_mc_wall_seconds",
    "Wall time of the most recent Monte Carlo run",
    registry=REGISTRY,
)


def write_metrics(path: str) -> None:
    """Dump the gqarch registry in the Prometheus text format."""
    write_to_textfile(path, REGISTRY)
