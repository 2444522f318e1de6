//! VM scheduling policies.
//!
//! Every policy implements [`SchedulerPolicy`]. The engine calls
//! [`SchedulerPolicy::allocate`] for arriving VMs, [`SchedulerPolicy::epoch`]
//! once per tick, and [`SchedulerPolicy::rebalance`] for each running machine
//! in ascending id order, executing the returned actions immediately.

mod baselines;
mod similarity;

use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, MachineId, VmId};
use crate::error::{Error, Result};
use crate::power::PowerModel;
use crate::resources::{ResourceVector, UtilizationWeights};

pub use baselines::{DynamicRoundRobin, Greedy, PowerSave, RoundRobin, SingleThreshold};
pub use similarity::{
    allocate, candidate_queue, cosine_similarity, scale_down_check, scale_up_check, score_candidate, utilization_after, Plan, ScaleUp, SimilarityPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMethod {
    /// Prefer machines whose used vector is least similar to the VM.
    Method1,
    /// Prefer machines whose free vector is most similar to the VM.
    Method2,
}

/// Knobs of the similarity-based allocation, scale-up and scale-down algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Scale-up threshold on unified utilization.
    pub u_up: f64,
    /// Scale-down threshold; 0 disables scale-down.
    pub u_down: f64,
    /// Placement headroom: a VM is accepted only if the estimated U stays below `u_up - buffer`.
    pub buffer: f64,
    pub similarity_method: SimilarityMethod,
    pub similarity_threshold: f64,
    /// Ticks a threshold breach must persist before scaling.
    pub consistency_ticks: u64,
    pub weights: UtilizationWeights,
    /// Length of the usage averaging window, in ticks.
    pub delta_window: usize,
    /// Footprint assumed for VMs with no usage history.
    pub default_rv: ResourceVector,
    /// Smallest allowed `u_up - u_down`.
    pub min_threshold_gap: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            u_up: 0.75,
            u_down: 0.15,
            buffer: 0.15,
            similarity_method: SimilarityMethod::Method2,
            similarity_threshold: 0.6,
            consistency_ticks: 3,
            weights: UtilizationWeights::default(),
            delta_window: 5,
            default_rv: ResourceVector::splat(0.25).expect("valid constant"),
            min_threshold_gap: 0.2,
        }
    }
}

const GAP_TOLERANCE: f64 = 1e-9;

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("policy.{name}"), format!("must be in [0, 1], got {v}")))
            }
        };
        frac("u_up", self.u_up)?;
        frac("u_down", self.u_down)?;
        frac("buffer", self.buffer)?;
        frac("similarity_threshold", self.similarity_threshold)?;
        frac("min_threshold_gap", self.min_threshold_gap)?;
        if self.u_down >= self.u_up {
            return Err(Error::invalid("policy.u_down", format!("must be below u_up ({} >= {})", self.u_down, self.u_up)));
        }
        if self.u_up - self.u_down < self.min_threshold_gap - GAP_TOLERANCE {
            return Err(Error::invalid(
                "policy.u_down",
                format!("u_up - u_down = {:.4} is below the minimum gap {}", self.u_up - self.u_down, self.min_threshold_gap),
            ));
        }
        if self.buffer >= self.u_up {
            return Err(Error::invalid("policy.buffer", format!("must be below u_up ({} >= {})", self.buffer, self.u_up)));
        }
        if self.consistency_ticks == 0 {
            return Err(Error::invalid("policy.consistency_ticks", "must be >= 1"));
        }
        if self.delta_window == 0 {
            return Err(Error::invalid("policy.delta_window", "must be >= 1"));
        }
        Ok(())
    }

    /// Estimated post-placement utilization must stay strictly below this.
    pub fn placement_ceiling(&self) -> f64 {
        self.u_up - self.buffer
    }
}

/// Parameters of the comparison baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Dynamic Round Robin: ticks a machine may stay retired before its VMs are forced off.
    pub retirement_threshold_ticks: u64,
    /// Single Threshold: CPU utilization cap.
    pub cpu_threshold: f64,
    /// Single Threshold: ticks between full re-placements.
    pub epoch_ticks: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { retirement_threshold_ticks: 10, cpu_threshold: 0.75, epoch_ticks: 5 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cpu_threshold > 0.0 && self.cpu_threshold <= 1.0) {
            return Err(Error::invalid("baseline.cpu_threshold", format!("must be in (0, 1], got {}", self.cpu_threshold)));
        }
        if self.epoch_ticks == 0 {
            return Err(Error::invalid("baseline.epoch_ticks", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Similarity,
    RoundRobin,
    Greedy,
    PowerSave,
    DynamicRoundRobin,
    SingleThreshold,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] =
        [PolicyKind::Similarity, PolicyKind::RoundRobin, PolicyKind::Greedy, PolicyKind::PowerSave, PolicyKind::DynamicRoundRobin, PolicyKind::SingleThreshold];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Similarity => "similarity",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::Greedy => "greedy",
            PolicyKind::PowerSave => "power_save",
            PolicyKind::DynamicRoundRobin => "dynamic_round_robin",
            PolicyKind::SingleThreshold => "single_threshold",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        let norm = s.replace('-', "_");
        PolicyKind::ALL.into_iter().find(|k| k.name() == norm)
    }
}

/// Which policy to run and with what parameters.
///
/// Serialized as one flat table: `kind`, every [`PolicyConfig`] field and
/// every [`BaselineConfig`] field side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FlatPolicySpec", into = "FlatPolicySpec")]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub config: PolicyConfig,
    pub baseline: BaselineConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatPolicySpec {
    kind: PolicyKind,
    u_up: f64,
    u_down: f64,
    buffer: f64,
    similarity_method: SimilarityMethod,
    similarity_threshold: f64,
    consistency_ticks: u64,
    weights: UtilizationWeights,
    delta_window: usize,
    default_rv: ResourceVector,
    min_threshold_gap: f64,
    retirement_threshold_ticks: u64,
    cpu_threshold: f64,
    epoch_ticks: u64,
}

impl Default for FlatPolicySpec {
    fn default() -> Self {
        PolicySpec::default().into()
    }
}

impl From<FlatPolicySpec> for PolicySpec {
    fn from(f: FlatPolicySpec) -> Self {
        PolicySpec {
            kind: f.kind,
            config: PolicyConfig {
                u_up: f.u_up,
                u_down: f.u_down,
                buffer: f.buffer,
                similarity_method: f.similarity_method,
                similarity_threshold: f.similarity_threshold,
                consistency_ticks: f.consistency_ticks,
                weights: f.weights,
                delta_window: f.delta_window,
                default_rv: f.default_rv,
                min_threshold_gap: f.min_threshold_gap,
            },
            baseline: BaselineConfig { retirement_threshold_ticks: f.retirement_threshold_ticks, cpu_threshold: f.cpu_threshold, epoch_ticks: f.epoch_ticks },
        }
    }
}

impl From<PolicySpec> for FlatPolicySpec {
    fn from(p: PolicySpec) -> Self {
        let (c, b) = (p.config, p.baseline);
        FlatPolicySpec {
            kind: p.kind,
            u_up: c.u_up,
            u_down: c.u_down,
            buffer: c.buffer,
            similarity_method: c.similarity_method,
            similarity_threshold: c.similarity_threshold,
            consistency_ticks: c.consistency_ticks,
            weights: c.weights,
            delta_window: c.delta_window,
            default_rv: c.default_rv,
            min_threshold_gap: c.min_threshold_gap,
            retirement_threshold_ticks: b.retirement_threshold_ticks,
            cpu_threshold: b.cpu_threshold,
            epoch_ticks: b.epoch_ticks,
        }
    }
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec { kind: PolicyKind::Similarity, config: PolicyConfig::default(), baseline: BaselineConfig::default() }
    }
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.baseline.validate()
    }

    pub fn build(&self, power: &PowerModel) -> Box<dyn SchedulerPolicy> {
        let cfg = self.config.clone();
        let base = self.baseline.clone();
        match self.kind {
            PolicyKind::Similarity => Box::new(SimilarityPolicy::new(cfg)),
            PolicyKind::RoundRobin => Box::new(RoundRobin::default()),
            PolicyKind::Greedy => Box::new(Greedy),
            PolicyKind::PowerSave => Box::new(PowerSave),
            PolicyKind::DynamicRoundRobin => Box::new(DynamicRoundRobin::new(base.retirement_threshold_ticks)),
            PolicyKind::SingleThreshold => Box::new(SingleThreshold::new(base.cpu_threshold, base.epoch_ticks, cfg.weights, *power)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementDecision {
    Place {
        vm: VmId,
        pm: MachineId,
    },
    /// Wake a standby machine, then place the VM on it.
    WakeAndPlace {
        vm: VmId,
        pm: MachineId,
    },
    Reject {
        vm: VmId,
    },
}

impl PlacementDecision {
    pub fn target(&self) -> Option<MachineId> {
        match *self {
            PlacementDecision::Place { pm, .. } | PlacementDecision::WakeAndPlace { pm, .. } => Some(pm),
            PlacementDecision::Reject { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebalanceAction {
    Migrate { vm: VmId, from: MachineId, to: MachineId },
    WakeAndMigrate { vm: VmId, from: MachineId, to: MachineId },
    StandbyMachine { pm: MachineId },
}

/// Counters a policy keeps about its own decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyStats {
    /// Scale-up triggers that found neither a running target nor a standby machine.
    pub scale_up_failures: u64,
}

pub trait SchedulerPolicy: Send {
    fn name(&self) -> &'static str;

    /// Chooses a host for an unplaced VM.
    fn allocate(&mut self, vm: VmId, cluster: &Cluster) -> PlacementDecision;

    /// Notification that `vm` left `pm`; `cluster` no longer contains it.
    fn on_departure(&mut self, _vm: VmId, _pm: MachineId, _cluster: &Cluster) {}

    /// Fleet-wide rebalancing, called once per tick before the per-machine checks.
    fn epoch(&mut self, _cluster: &Cluster) -> Vec<RebalanceAction> {
        Vec::new()
    }

    /// Per-machine rebalancing for a running machine.
    fn rebalance(&mut self, _pm: MachineId, _cluster: &Cluster) -> Vec<RebalanceAction> {
        Vec::new()
    }

    /// Re-checks a migration right before it is executed.
    fn admits_migration(&self, _vm: VmId, _to: MachineId, _cluster: &Cluster) -> bool {
        true
    }

    fn stats(&self) -> PolicyStats {
        PolicyStats::default()
    }
}
