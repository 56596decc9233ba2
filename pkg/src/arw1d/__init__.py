"""Activated random walk on the integer line: stack-driven engines,
internal-DLA growth, density estimators, and exact coupling replays.

The firing mechanics live in `core` on top of the counter-addressable
instruction stacks of `stacks`; `idla` covers the settle-on-arrival
regimes; `densities` and `couplings` hold the estimators and the
per-seed verification checks; `cli` wraps everything as commands.
"""

__version__ = "0.1.0"

from .stacks import (Instruction, SleepRate, StackShift, InstructionSource,
                     source, draw, shift, empirical_law, cell_hash, mix64,
                     split_seed, derive_trial_seed)
from .core import (Mode, Legality, Status, FiringPolicy, Region, WHOLE_LINE,
                   SiteState, Configuration, Odometer, StabilizationResult,
                   IllegalFireError, fire, is_stable, stabilize,
                   stabilize_idla, boundary_source_stabilize, trap_stabilize,
                   default_step_cap)
from .idla import (ClusterTrace, MartingaleTrace, PercolationEnv, GapSample,
                   run_point_idla, sample_cluster_trace, martingale,
                   run_killed_idla, sample_killed_fill, run_percolated_idla,
                   sample_percolated_extents, gaps)
from .densities import (InnerDensityEstimate, WindowedOdometerSample,
                        OuterPoint, OuterDensityEstimate, AggregateEstimate,
                        ChainState, ChainRun, sample_interval_stabilization,
                        estimate_inner, stationary_chain_step, run_chain,
                        sample_w0, estimate_outer, estimate_aggregate)
from .couplings import (CouplingVerdict, CouplingCertificate,
                        crucial_coupling_check, DecompositionVerdict,
                        DecompositionCertificate, outer_decomposition_check,
                        SmpReport, smp_check)

__all__ = [
    "__version__",
    "Instruction", "SleepRate", "StackShift", "InstructionSource",
    "source", "draw", "shift", "empirical_law", "cell_hash", "mix64",
    "split_seed", "derive_trial_seed",
    "Mode", "Legality", "Status", "FiringPolicy", "Region", "WHOLE_LINE",
    "SiteState", "Configuration", "Odometer", "StabilizationResult",
    "IllegalFireError", "fire", "is_stable", "stabilize", "stabilize_idla",
    "boundary_source_stabilize", "trap_stabilize", "default_step_cap",
    "ClusterTrace", "MartingaleTrace", "PercolationEnv", "GapSample",
    "run_point_idla", "sample_cluster_trace", "martingale",
    "run_killed_idla", "sample_killed_fill", "run_percolated_idla",
    "sample_percolated_extents", "gaps",
    "InnerDensityEstimate", "WindowedOdometerSample", "OuterPoint",
    "OuterDensityEstimate", "AggregateEstimate", "ChainState", "ChainRun",
    "sample_interval_stabilization", "estimate_inner",
    "stationary_chain_step", "run_chain", "sample_w0", "estimate_outer",
    "estimate_aggregate",
    "CouplingVerdict", "CouplingCertificate", "crucial_coupling_check",
    "DecompositionVerdict", "DecompositionCertificate",
    "outer_decomposition_check", "SmpReport", "smp_check",
]
