"""Cooperative random-access uplink: simulator and analysis toolkit."""

from .analytic import MacParams, SlotProbabilities, renewal_time, slot_probabilities, throughput_bound
from .errors import ConfigurationError, GeometryError, NotAHelperError
from .experiments import (
    BaselineResult,
    GainRecord,
    OptimumResult,
    Regime,
    SweepDefaults,
    SweepSpec,
    aggregate,
    baseline_direct,
    classify_regime,
    derive_seed,
    geometric_grid,
    optimize_target_rate,
    read_csv,
    run_sweep,
    write_csv,
)
from .schemes import (
    FeasibilityReport,
    HelperSets,
    NodeClass,
    SchemeKind,
    all_helper_sets,
    feasibility,
    free_time,
    helper_map,
    helper_set_df,
    helper_set_two_hop,
    max_direct_rate,
    max_supported_rate,
    rate_df,
    rate_two_hop,
)
from .simulator import (
    BusyEvent,
    MetricsReport,
    PacketRef,
    RelayObligation,
    SimConfig,
    Simulation,
    SlotOutcome,
    StopRule,
    contend,
    run,
)
from .topology import (
    ChannelParams,
    RateTable,
    Topology,
    build_rate_table,
    generate_topology,
    link_rate,
    load_topology,
    save_topology,
    snr_at,
)

__version__ = "0.1.0"
