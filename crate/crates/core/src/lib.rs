//! Discrete-time data-center simulator for comparing VM scheduling policies
//! on energy use and SLA violations.
//!
//! The [`policy::SimilarityPolicy`] places VMs by cosine similarity of
//! resource vectors and rebalances machines whose unified utilization stays
//! above or below a threshold band. Baseline policies live alongside it in
//! [`policy`].

pub mod cluster;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod policy;
pub mod power;
pub mod resources;
pub mod workload;

pub use cluster::{Cluster, MachineId, MachineState, PhysicalMachine, Tick, VirtualMachine, VmId};
pub use engine::{arbitrate, run, MachineGroup, Simulation, SimulationConfig, SimulationReport, SlaViolationEvent};
pub use error::{Error, Result};
pub use experiment::ExperimentFile;
pub use policy::{PolicyConfig, PolicyKind, PolicySpec, SchedulerPolicy, SimilarityMethod};
pub use power::{power_draw, PowerModel};
pub use resources::{rescale_rv, unified_utilization, MachineCapacity, Resource, ResourceVector, Resources, UtilizationWeights};
pub use workload::{generate_workload, load_trace_file, save_trace_file, Profile, VmRequest, Workload, WorkloadSpec};
