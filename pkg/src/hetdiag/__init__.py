"""hetdiag: two-tier HetNet simulation and misconfiguration diagnosis."""

from .scenario import (
    Cell,
    ConfigClass,
    LocationType,
    MobilityClass,
    NetworkLayout,
    ScenarioConfig,
    Tier,
    generate_layout,
    inject_misconfiguration,
    load_scenario,
    save_scenario,
)
from .radio import path_loss_cost231, path_loss_itu_indoor, received_power, sinr
from .sim import (
    FEATURE_NAMES,
    FeatureVector,
    HandoverEvent,
    HandoverOutcome,
    Instance,
    TrafficRecord,
    UserEquipment,
    aggregate_kpis,
    classify_rlf,
    evaluate_handover,
    generate_traffic,
    make_users,
    run_epoch,
    step_mobility,
)
from .analytics import (
    Trajectory,
    handover_traffic_correlation,
    radius_of_gyration,
    traffic_by_category_and_location,
    visited_cells,
)
from .diagnosis import (
    InstanceSet,
    LinearModel,
    TrainConfig,
    TransferEnsemble,
    cell_divergence,
    diagnose,
    evaluate_accuracy,
    info_gain,
    train_linear_classifier,
    train_standalone,
    train_transfer,
    train_unified,
)
from .harness import SweepConfig, SweepResult, report, run_sweep

__version__ = "0.1.0"
