"""Faulted line location in radial distribution feeders from micro-PMU data.

The package bundles a feeder model with subgraph partitioning, a
three-phase fault simulator, measurement synthesis, a branch-current
weighted least squares estimator and the two-step locator built on it,
plus a Monte Carlo harness and command line interface.
"""
from .dsse import (FaultHypothesis, LinearModel, Scope, StateVector, UnobservableError, WlsConfig, WlsResult,
                   assemble, estimate, forward_sweep_voltages, path_scope, scan_fault_hypotheses, subgraph_scope)
from .feeder import (Base, BranchSpec, FeederError, FeederModel, PartitionError, PathChain, Subgraph,
                     SubgraphPartition, enumerate_paths, load_feeder, partition, tree_hops)
from .harness import (AccuracyReport, Campaign, bundled_feeder, classify_verdict, load_campaign, run_campaign)
from .locator import (LocationVerdict, LocatorConfig, calibrate_threshold, identify_faulted_subgraph, locate,
                      locate_faulted_line)
from .measurements import Measurement, MeasurementSet, NoiseProfile, synthesize, to_equivalent_current
from .powerflow import FaultScenario, TruePhasorState, run_powerflow

__all__ = [
    "AccuracyReport", "Base", "BranchSpec", "Campaign", "FaultHypothesis", "FaultScenario", "FeederError",
    "FeederModel", "LinearModel", "LocationVerdict", "LocatorConfig", "Measurement", "MeasurementSet",
    "NoiseProfile", "PartitionError", "PathChain", "Scope", "StateVector", "Subgraph", "SubgraphPartition",
    "TruePhasorState", "UnobservableError", "WlsConfig", "WlsResult", "assemble", "bundled_feeder",
    "calibrate_threshold", "classify_verdict", "enumerate_paths", "estimate", "forward_sweep_voltages",
    "identify_faulted_subgraph", "load_campaign", "load_feeder", "locate", "locate_faulted_line", "partition",
    "path_scope", "run_campaign", "run_powerflow", "scan_fault_hypotheses", "subgraph_scope", "synthesize",
    "to_equivalent_current", "tree_hops",
]
