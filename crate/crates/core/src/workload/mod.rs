//! VM requests, their demand traces, and synthetic workload generation.

mod generate;
mod trace;

use serde::{Deserialize, Serialize};

use crate::cluster::{Tick, VmId};
use crate::error::{Error, Result};
use crate::resources::Resources;

pub use generate::generate_workload;
pub use trace::{load_trace_file, meta_path_for, save_trace_file, META_HEADER, TRACE_HEADER};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandSample {
    pub tick: Tick,
    pub demand: Resources,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmRequest {
    pub vm_id: VmId,
    pub arrival_tick: Tick,
    /// `None` for VMs that stay until the end of the run.
    pub departure_tick: Option<Tick>,
    pub nominal: Resources,
    pub trace: Vec<DemandSample>,
}

impl VmRequest {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("{}.{name}", self.vm_id);
        if let Some(dep) = self.departure_tick {
            if self.arrival_tick >= dep {
                return Err(Error::invalid(field("departure"), format!("arrival {} must precede departure {dep}", self.arrival_tick)));
            }
        }
        if !self.nominal.is_finite_nonnegative() {
            return Err(Error::invalid(field("nominal"), "must be finite and >= 0"));
        }
        for pair in self.trace.windows(2) {
            if pair[1].tick <= pair[0].tick {
                return Err(Error::invalid(field("trace"), format!("tick {} does not follow {}", pair[1].tick, pair[0].tick)));
            }
        }
        if let Some(s) = self.trace.iter().find(|s| !s.demand.is_finite_nonnegative()) {
            return Err(Error::invalid(field("trace"), format!("demand at tick {} must be finite and >= 0", s.tick)));
        }
        Ok(())
    }

    /// Demand in force at `tick`: the latest sample at or before it, zero before the first.
    pub fn demand_at(&self, tick: Tick) -> Resources {
        match self.trace.partition_point(|s| s.tick <= tick) {
            0 => Resources::ZERO,
            i => self.trace[i - 1].demand,
        }
    }

    pub fn is_active(&self, tick: Tick) -> bool {
        tick >= self.arrival_tick && self.departure_tick.is_none_or(|d| tick < d)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    pub requests: Vec<VmRequest>,
}

impl Workload {
    pub fn new(requests: Vec<VmRequest>) -> Result<Self> {
        let w = Workload { requests };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.requests {
            if !seen.insert(r.vm_id) {
                return Err(Error::invalid(format!("{}", r.vm_id), "duplicate vm id"));
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Flat demand with per-tick jitter.
    Steady,
    /// Cosine day cycle shared by all VMs: peak at tick 0, trough half a period later.
    Diurnal,
    /// Steady demand with multiplicative bursts.
    Spiky,
    /// Each VM is heavy on one resource (cpu, mem, disk, bw in turn) and light on the rest.
    MixedIntensive,
}

/// Parameters of a synthetic workload. Demand levels are fractions of each
/// VM's nominal size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub vm_count: usize,
    pub duration_ticks: u64,
    pub profile: Profile,
    pub mean_level: f64,
    /// Per-VM, per-resource offset of the base level, drawn uniformly in `±level_spread`.
    pub level_spread: f64,
    /// Per-tick noise, drawn uniformly in `±jitter`.
    pub jitter: f64,
    /// Probability that a spike starts at a tick when none is in progress.
    pub spike_prob: f64,
    pub spike_multiplier: f64,
    pub spike_duration: u64,
    pub diurnal_amplitude: f64,
    pub diurnal_period_ticks: u64,
    /// Base level of the non-dominant resources under `MixedIntensive`.
    pub minor_level: f64,
    /// Arrivals are spread uniformly over `[0, arrival_window)`; 0 means all at tick 0.
    pub arrival_window: u64,
    pub open_ended_fraction: f64,
    pub lifetime_min: u64,
    pub lifetime_max: u64,
    /// Nominal sizes; each VM picks one uniformly.
    pub flavors: Vec<Resources>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            seed: 1,
            vm_count: 200,
            duration_ticks: 1440,
            profile: Profile::Steady,
            mean_level: 0.3,
            level_spread: 0.1,
            jitter: 0.05,
            spike_prob: 0.02,
            spike_multiplier: 2.0,
            spike_duration: 3,
            diurnal_amplitude: 0.5,
            diurnal_period_ticks: 1440,
            minor_level: 0.1,
            arrival_window: 0,
            open_ended_fraction: 1.0,
            lifetime_min: 60,
            lifetime_max: 720,
            flavors: vec![
                Resources::new(1000.0, 2048.0, 25.0, 125.0),
                Resources::new(2000.0, 4096.0, 50.0, 250.0),
                Resources::new(4000.0, 8192.0, 100.0, 500.0),
            ],
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v.is_finite() && (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("workload.{name}"), format!("must be in [0, 1], got {v}")))
            }
        };
        unit("mean_level", self.mean_level)?;
        unit("level_spread", self.level_spread)?;
        unit("jitter", self.jitter)?;
        unit("spike_prob", self.spike_prob)?;
        unit("diurnal_amplitude", self.diurnal_amplitude)?;
        unit("minor_level", self.minor_level)?;
        unit("open_ended_fraction", self.open_ended_fraction)?;
        if !(self.spike_multiplier.is_finite() && self.spike_multiplier >= 1.0) {
            return Err(Error::invalid("workload.spike_multiplier", format!("must be >= 1, got {}", self.spike_multiplier)));
        }
        if self.diurnal_period_ticks == 0 {
            return Err(Error::invalid("workload.diurnal_period_ticks", "must be >= 1"));
        }
        if self.lifetime_min == 0 || self.lifetime_min > self.lifetime_max {
            return Err(Error::invalid("workload.lifetime_min", "must satisfy 1 <= lifetime_min <= lifetime_max"));
        }
        if self.flavors.is_empty() {
            return Err(Error::invalid("workload.flavors", "at least one flavor is required"));
        }
        if let Some(f) = self.flavors.iter().find(|f| !f.is_finite_nonnegative()) {
            return Err(Error::invalid("workload.flavors", format!("flavor {f:?} must be finite and >= 0")));
        }
        Ok(())
    }
}
