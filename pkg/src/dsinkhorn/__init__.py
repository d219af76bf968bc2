"""Decentralized entropic Wasserstein barycenters over gossip networks.

Agents holding private histograms on a shared support cooperate to
compute the entropic barycenter without a coordinator: each runs local
Sinkhorn-style scaling steps and the network averages the per-agent
log-messages by event-triggered, quantized gossip. The package bundles
the core numerics, the per-agent protocol, a deterministic network
simulator, an experiment harness, and a CLI.
"""

from .config import (
    ConfigError,
    NetworkSpec,
    ProblemSpec,
    RunConfig,
    build_instance,
    build_topology_from_spec,
    mixture_histograms,
)
from .engine import RunRecord, consensus_trace, simulate_decentralized
from .experiments import (
    RunMetrics,
    SweepSpec,
    VerificationReport,
    centralized_oracle,
    run_decentralized,
    run_scaling_sweep,
    run_support_sweep,
    verify_theory,
)
from .netsim import (
    ActivationModel,
    ChannelModel,
    GossipWeights,
    RoundScheduler,
    Topology,
    TopologyError,
    build_topology,
    consensus_residual,
    expected_weights,
    metropolis_weights,
    spectral_gap,
)
from .otcore import (
    BarycenterResult,
    CostMatrix,
    DegenerateStateError,
    GibbsKernel,
    Histogram,
    KernelUnderflowError,
    ProblemInstance,
    TheoryConstants,
    build_gibbs_kernel,
    centralized_barycenter,
    grid_cost,
    hilbert_distance,
    theory_constants,
)
from .protocol import (
    AgentState,
    ClipRangeError,
    CommsConfig,
    Packet,
    clip_log,
    gossip_step,
    inner_converged,
    local_scaling_update,
    maybe_transmit,
    normalize_scale,
    outer_converged,
    pack_packet,
    packet_wire_size,
    quantize,
    reseed_inner,
    unpack_packet,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core numerics
    "Histogram", "CostMatrix", "GibbsKernel", "ProblemInstance",
    "BarycenterResult", "TheoryConstants", "KernelUnderflowError",
    "DegenerateStateError", "grid_cost", "build_gibbs_kernel",
    "centralized_barycenter", "hilbert_distance", "theory_constants",
    # protocol
    "CommsConfig", "AgentState", "Packet", "ClipRangeError", "clip_log",
    "quantize", "pack_packet", "unpack_packet",
    "packet_wire_size", "local_scaling_update", "reseed_inner",
    "normalize_scale", "maybe_transmit", "gossip_step", "inner_converged",
    "outer_converged",
    # network simulation
    "Topology", "TopologyError", "build_topology", "GossipWeights",
    "metropolis_weights", "spectral_gap", "consensus_residual",
    "ChannelModel", "ActivationModel", "expected_weights", "RoundScheduler",
    "RunRecord", "simulate_decentralized", "consensus_trace",
    # experiments & config
    "RunMetrics", "SweepSpec", "VerificationReport", "centralized_oracle",
    "run_decentralized", "run_scaling_sweep", "run_support_sweep",
    "verify_theory", "RunConfig", "ProblemSpec", "NetworkSpec",
    "ConfigError", "build_instance", "build_topology_from_spec",
    "mixture_histograms",
]
