"""Simulation harness: topologies, workloads and collusion analysis."""

from .attribution import (
    AttributionResult,
    CollusionScenario,
    InconsistentLogs,
    MCEstimate,
    SpaceTooLarge,
    attribute_query,
    attribute_trace,
    enumerate_outcomes,
    identification_probability_exact,
    identification_probability_mc,
)
from .harness import HarnessTimeout, WorkloadResult, read_trace, run_workload, write_trace
from .report import report, to_csv, to_text
from .topology import TopologyError, TopologySpec, load_topology, parse_topology, simple_topology

__all__ = [
    "AttributionResult", "CollusionScenario", "InconsistentLogs", "MCEstimate", "SpaceTooLarge",
    "attribute_query", "attribute_trace", "enumerate_outcomes", "identification_probability_exact",
    "identification_probability_mc", "HarnessTimeout", "WorkloadResult", "read_trace", "run_workload",
    "write_trace", "report", "to_csv", "to_text", "TopologyError", "TopologySpec", "load_topology",
    "parse_topology", "simple_topology",
]
