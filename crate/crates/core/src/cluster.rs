//! Physical machines, virtual machines, and the data-center state that
//! scheduling policies read.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{power_draw, PowerModel};
use crate::resources::{rescale_rv, MachineCapacity, Resource, ResourceVector, Resources, UtilizationWeights};

/// Simulation time, in ticks.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MachineId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VmId(pub u32);

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pm{}", self.0)
    }
}

impl fmt::Display for VmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vm{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MachineState {
    Running,
    Standby,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreachKind {
    /// Utilization above the scale-up threshold.
    Over,
    /// Utilization below the scale-down threshold.
    Under,
}

/// A run of consecutive ticks during which a machine stayed on one side of a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BreachEpisode {
    pub kind: BreachKind,
    pub since: Tick,
}

impl BreachEpisode {
    /// Number of ticks the episode has lasted, counting `now`.
    pub fn length(&self, now: Tick) -> u64 {
        now.saturating_sub(self.since) + 1
    }
}

#[derive(Debug, Clone)]
pub struct PhysicalMachine {
    pub id: MachineId,
    pub capacity: MachineCapacity,
    pub state: MachineState,
    pub peak_power: f64,
    pub hosted: BTreeSet<VmId>,
    /// Last tick the machine was running; `None` if it has never run.
    pub last_used_tick: Option<Tick>,
    pub breach: Option<BreachEpisode>,
    /// VMs on their way to this machine (migration in flight).
    pub incoming: BTreeSet<VmId>,
    /// First tick at which a woken machine can serve load.
    pub ready_at: Tick,
    /// Unified utilization measured at the last arbitration.
    pub utilization: f64,
}

impl PhysicalMachine {
    pub fn new(id: MachineId, capacity: MachineCapacity, peak_power: f64) -> Self {
        PhysicalMachine {
            id,
            capacity,
            state: MachineState::Standby,
            peak_power,
            hosted: BTreeSet::new(),
            last_used_tick: None,
            breach: None,
            incoming: BTreeSet::new(),
            ready_at: 0,
            utilization: 0.0,
        }
    }

    pub fn is_running(&self) -> bool {
        self.state == MachineState::Running
    }

    pub fn is_ready(&self, now: Tick) -> bool {
        self.is_running() && now >= self.ready_at
    }

    pub fn power_draw(&self, u: f64, model: &PowerModel) -> f64 {
        power_draw(self.state, self.peak_power, u, model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Migration {
    pub from: MachineId,
    pub to: MachineId,
    pub complete_at: Tick,
}

#[derive(Debug, Clone)]
pub struct VirtualMachine {
    pub id: VmId,
    /// Index of the originating request in the workload.
    pub request: usize,
    /// Resources requested at creation.
    pub nominal: Resources,
    pub arrival_tick: Tick,
    pub departure_tick: Option<Tick>,
    pub host: Option<MachineId>,
    /// Demand at the current tick.
    pub demand: Resources,
    /// Usage delivered at the last tick the VM was served.
    pub last_delivered: Option<Resources>,
    pub migration: Option<Migration>,
    usage_window: VecDeque<Resources>,
    window_len: usize,
}

impl VirtualMachine {
    pub fn new(id: VmId, request: usize, nominal: Resources, arrival_tick: Tick, departure_tick: Option<Tick>, window_len: usize) -> Self {
        VirtualMachine {
            id,
            request,
            nominal,
            arrival_tick,
            departure_tick,
            host: None,
            demand: Resources::ZERO,
            last_delivered: None,
            migration: None,
            usage_window: VecDeque::with_capacity(window_len),
            window_len: window_len.max(1),
        }
    }

    /// Logs one tick of delivered usage, evicting entries older than the window.
    pub fn record_usage(&mut self, delivered: Resources) {
        if self.usage_window.len() == self.window_len {
            self.usage_window.pop_front();
        }
        self.usage_window.push_back(delivered);
        self.last_delivered = Some(delivered);
    }

    pub fn usage_window(&self) -> &VecDeque<Resources> {
        &self.usage_window
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Arithmetic mean of the usage window, or `None` when it is empty.
    pub fn window_mean(&self) -> Option<Resources> {
        if self.usage_window.is_empty() {
            return None;
        }
        let n = self.usage_window.len() as f64;
        Some(self.usage_window.iter().copied().sum::<Resources>().scale(1.0 / n))
    }

    pub fn in_transit(&self) -> bool {
        self.migration.is_some()
    }
}

/// Returned when a VM has not logged any usage yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no usage history")]
pub struct NoHistory;

/// Footprint of a VM as fractions of `capacity`, averaged over its usage window.
pub fn resource_vector_of_vm(vm: &VirtualMachine, capacity: &MachineCapacity) -> std::result::Result<ResourceVector, NoHistory> {
    let mean = vm.window_mean().ok_or(NoHistory)?;
    Ok(ResourceVector::clamped(capacity.fractions(&mean)))
}

fn delivered_fractions<'a>(pm: &PhysicalMachine, vms: impl IntoIterator<Item = &'a VirtualMachine>) -> [f64; 4] {
    let used: Resources = vms.into_iter().filter_map(|vm| vm.last_delivered).sum();
    pm.capacity.fractions(&used)
}

/// Used-fraction vector of a machine from its VMs' delivered usage.
pub fn machine_rv<'a>(pm: &PhysicalMachine, vms: impl IntoIterator<Item = &'a VirtualMachine>) -> ResourceVector {
    ResourceVector::clamped(delivered_fractions(pm, vms))
}

/// Free-resource vector, the complement of [`machine_rv`].
pub fn machine_free<'a>(pm: &PhysicalMachine, vms: impl IntoIterator<Item = &'a VirtualMachine>) -> ResourceVector {
    machine_rv(pm, vms).complement()
}

/// Live data-center state: every machine in the fleet and every VM present.
#[derive(Debug, Clone)]
pub struct Cluster {
    machines: Vec<PhysicalMachine>,
    vms: BTreeMap<VmId, VirtualMachine>,
    pub weights: UtilizationWeights,
    pub now: Tick,
}

impl Cluster {
    /// Machines get ids `0..n` in fleet order.
    pub fn new(fleet: impl IntoIterator<Item = (MachineCapacity, f64)>, weights: UtilizationWeights) -> Self {
        let machines = fleet.into_iter().enumerate().map(|(i, (cap, peak))| PhysicalMachine::new(MachineId(i as u32), cap, peak)).collect();
        Cluster { machines, vms: BTreeMap::new(), weights, now: 0 }
    }

    pub fn machines(&self) -> &[PhysicalMachine] {
        &self.machines
    }

    pub fn machine(&self, id: MachineId) -> &PhysicalMachine {
        &self.machines[id.0 as usize]
    }

    pub fn machine_mut(&mut self, id: MachineId) -> &mut PhysicalMachine {
        &mut self.machines[id.0 as usize]
    }

    pub fn vms(&self) -> impl Iterator<Item = &VirtualMachine> {
        self.vms.values()
    }

    pub fn vm(&self, id: VmId) -> Option<&VirtualMachine> {
        self.vms.get(&id)
    }

    pub fn vm_mut(&mut self, id: VmId) -> Option<&mut VirtualMachine> {
        self.vms.get_mut(&id)
    }

    pub fn insert_vm(&mut self, vm: VirtualMachine) {
        self.vms.insert(vm.id, vm);
    }

    /// Removes a VM and detaches it from its host and any migration target.
    pub fn remove_vm(&mut self, id: VmId) -> Option<VirtualMachine> {
        let vm = self.vms.remove(&id)?;
        if let Some(host) = vm.host {
            self.machine_mut(host).hosted.remove(&id);
        }
        if let Some(m) = vm.migration {
            self.machine_mut(m.to).incoming.remove(&id);
        }
        Some(vm)
    }

    pub fn running(&self) -> impl Iterator<Item = &PhysicalMachine> {
        self.machines.iter().filter(|m| m.is_running())
    }

    pub fn running_count(&self) -> usize {
        self.running().count()
    }

    pub fn hosted_vms(&self, pm: MachineId) -> impl Iterator<Item = &VirtualMachine> {
        self.machine(pm).hosted.iter().filter_map(|id| self.vms.get(id))
    }

    /// Least recently used standby machine; never-used machines come first, ties by lowest id.
    pub fn lru_standby(&self, exclude: impl Fn(MachineId) -> bool) -> Option<MachineId> {
        self.machines
            .iter()
            .filter(|m| m.state == MachineState::Standby && !exclude(m.id))
            .min_by_key(|m| (m.last_used_tick.map_or(0, |t| t + 1), m.id))
            .map(|m| m.id)
    }

    /// Measured RV_PM from delivered usage.
    pub fn machine_rv(&self, pm: MachineId) -> ResourceVector {
        machine_rv(self.machine(pm), self.hosted_vms(pm))
    }

    pub fn machine_free(&self, pm: MachineId) -> ResourceVector {
        self.machine_rv(pm).complement()
    }

    /// A VM's expected share of `pm`, unclamped: its last delivered usage, or
    /// `default_rv` if it has not been served yet.
    pub fn contribution(&self, vm: &VirtualMachine, pm: MachineId, default_rv: &ResourceVector) -> [f64; 4] {
        match vm.last_delivered {
            Some(used) => self.machine(pm).capacity.fractions(&used),
            None => default_rv.as_array(),
        }
    }

    /// Load estimate used for placement: delivered usage of hosted and
    /// incoming VMs, with not-yet-served VMs counted at `default_rv`.
    pub fn load_estimate(&self, pm: MachineId, default_rv: &ResourceVector) -> [f64; 4] {
        let m = self.machine(pm);
        let mut raw = [0.0; 4];
        for id in m.hosted.iter().chain(m.incoming.iter()) {
            if let Some(vm) = self.vms.get(id) {
                for (a, b) in raw.iter_mut().zip(self.contribution(vm, pm, default_rv)) {
                    *a += b;
                }
            }
        }
        raw
    }

    /// The VM's resource vector on machine `pm`: its window mean measured on
    /// its current host and rescaled, or `default_rv` without history.
    pub fn vm_rv_on(&self, vm: &VirtualMachine, pm: MachineId, default_rv: &ResourceVector) -> ResourceVector {
        let target = &self.machine(pm).capacity;
        let Some(host) = vm.host else {
            return match vm.window_mean() {
                Some(mean) => ResourceVector::clamped(target.fractions(&mean)),
                None => *default_rv,
            };
        };
        let host_cap = &self.machine(host).capacity;
        match resource_vector_of_vm(vm, host_cap) {
            Ok(rv) if host == pm => rv,
            Ok(rv) => rescale_rv(&rv, host_cap, target),
            Err(NoHistory) => *default_rv,
        }
    }

    /// Sum of the nominal sizes of VMs hosted on (or heading to) `pm`.
    pub fn nominal_committed(&self, pm: MachineId) -> Resources {
        let m = self.machine(pm);
        m.hosted.iter().chain(m.incoming.iter()).filter_map(|id| self.vms.get(id)).map(|vm| vm.nominal).sum()
    }

    pub fn set_state(&mut self, pm: MachineId, state: MachineState) {
        self.machine_mut(pm).state = state;
    }

    /// Attaches a VM to a machine (detaching it from its previous host).
    pub fn assign(&mut self, vm: VmId, pm: MachineId) -> Result<()> {
        let prev = self.vms.get(&vm).ok_or_else(|| Error::invalid("vm", format!("{vm} not present")))?.host;
        if let Some(prev) = prev {
            self.machine_mut(prev).hosted.remove(&vm);
        }
        self.machine_mut(pm).hosted.insert(vm);
        self.vms.get_mut(&vm).expect("checked above").host = Some(pm);
        Ok(())
    }

    pub fn capacity_of(&self, pm: MachineId, r: Resource) -> f64 {
        self.machine(pm).capacity.get(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cap(v: f64) -> MachineCapacity {
        MachineCapacity::uniform(v).unwrap()
    }

    fn vm_with_usage(id: u32, usages: &[Resources]) -> VirtualMachine {
        let mut vm = VirtualMachine::new(VmId(id), 0, Resources::ZERO, 0, None, 5);
        for u in usages {
            vm.record_usage(*u);
        }
        vm
    }

    #[test]
    fn rv_of_vm_is_window_mean_over_capacity() {
        let vm = vm_with_usage(0, &[Resources::new(600.0, 100.0, 40.0, 50.0), Resources::new(800.0, 100.0, 60.0, 50.0)]);
        let rv = resource_vector_of_vm(&vm, &cap(1000.0)).unwrap();
        let want = [0.70, 0.10, 0.05, 0.05];
        for (g, w) in rv.as_array().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rv_of_vm_heterogeneous_capacity() {
        let vm = vm_with_usage(0, &[Resources::new(500.0, 250.0, 10.0, 10.0)]);
        let c = MachineCapacity::new(2000.0, 500.0, 100.0, 100.0).unwrap();
        let rv = resource_vector_of_vm(&vm, &c).unwrap();
        assert_eq!(rv.as_array(), [0.25, 0.50, 0.10, 0.10]);
    }

    #[test]
    fn rv_of_vm_zero_usage_and_no_history() {
        let vm = vm_with_usage(0, &[Resources::ZERO]);
        assert_eq!(resource_vector_of_vm(&vm, &cap(10.0)).unwrap(), ResourceVector::ZERO);
        let fresh = vm_with_usage(1, &[]);
        assert_eq!(resource_vector_of_vm(&fresh, &cap(10.0)), Err(NoHistory));
    }

    #[test]
    fn window_keeps_only_last_entries() {
        let usages: Vec<_> = (0..8).map(|i| Resources::splat(i as f64)).collect();
        let vm = vm_with_usage(0, &usages);
        assert_eq!(vm.usage_window().len(), 5);
        assert_eq!(vm.window_mean().unwrap(), Resources::splat(5.0));
    }

    #[test]
    fn machine_rv_sums_delivered_usage() {
        let pm = PhysicalMachine::new(MachineId(0), cap(1000.0), 200.0);
        let a = vm_with_usage(0, &[Resources::new(200.0, 100.0, 0.0, 0.0)]);
        let b = vm_with_usage(1, &[Resources::new(300.0, 100.0, 0.0, 0.0)]);
        let rv = machine_rv(&pm, [&a, &b]);
        assert_eq!(rv.as_array(), [0.5, 0.2, 0.0, 0.0]);
        assert_eq!(machine_free(&pm, [&a, &b]).as_array(), [0.5, 0.8, 1.0, 1.0]);
        assert_eq!(machine_rv(&pm, []), ResourceVector::ZERO);
        assert_eq!(machine_free(&pm, []), ResourceVector::ONES);
        let full = vm_with_usage(2, &[Resources::splat(1000.0)]);
        assert_eq!(machine_rv(&pm, [&full]), ResourceVector::ONES);
        assert_eq!(machine_free(&pm, [&full]), ResourceVector::ZERO);
    }

    #[test]
    fn free_is_complement_of_used() {
        let pm = PhysicalMachine::new(MachineId(0), cap(1000.0), 200.0);
        let a = vm_with_usage(0, &[Resources::new(700.0, 200.0, 100.0, 0.0)]);
        let free = machine_free(&pm, [&a]).as_array();
        let want = [0.3, 0.8, 0.9, 1.0];
        for (g, w) in free.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn lru_prefers_never_used_then_oldest() {
        let mut c = Cluster::new((0..3).map(|_| (cap(1.0), 100.0)), UtilizationWeights::default());
        c.machine_mut(MachineId(0)).last_used_tick = Some(5);
        c.machine_mut(MachineId(1)).last_used_tick = Some(2);
        assert_eq!(c.lru_standby(|_| false), Some(MachineId(2)));
        c.machine_mut(MachineId(2)).last_used_tick = Some(9);
        assert_eq!(c.lru_standby(|_| false), Some(MachineId(1)));
        assert_eq!(c.lru_standby(|id| id == MachineId(1)), Some(MachineId(0)));
    }
}
