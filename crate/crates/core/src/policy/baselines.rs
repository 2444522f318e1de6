//! Comparison schedulers.
//!
//! Round Robin, Greedy, Power Save and Dynamic Round Robin reason about
//! nominal (requested) sizes only. Single Threshold packs by current CPU
//! usage under a fixed cap and picks the host with the least power increase.

use std::collections::{BTreeMap, BTreeSet};

use crate::cluster::{Cluster, MachineId, MachineState, Tick, VirtualMachine, VmId};
use crate::power::PowerModel;
use crate::resources::{unified_utilization, Resource, ResourceVector, Resources, UtilizationWeights};

use super::{PlacementDecision, RebalanceAction, SchedulerPolicy};

fn fits_nominal(cluster: &Cluster, pm: MachineId, extra: Resources, vm: &VirtualMachine) -> bool {
    let committed = cluster.nominal_committed(pm) + extra + vm.nominal;
    committed.fits_within(cluster.machine(pm).capacity.amounts())
}

fn lru_standby_fitting(cluster: &Cluster, vm: &VirtualMachine, skip: impl Fn(MachineId) -> bool) -> Option<MachineId> {
    cluster.lru_standby(|id| skip(id) || !vm.nominal.fits_within(cluster.machine(id).capacity.amounts()))
}

/// Standby action for an idle running machine, unless it is the last one running.
fn standby_if_idle(cluster: &Cluster, pm: MachineId) -> Vec<RebalanceAction> {
    let m = cluster.machine(pm);
    if m.is_running() && m.hosted.is_empty() && m.incoming.is_empty() && cluster.running_count() > 1 {
        vec![RebalanceAction::StandbyMachine { pm }]
    } else {
        Vec::new()
    }
}

/// Cycles through running machines, starting after the last one used.
fn round_robin_pick(cluster: &Cluster, vm: &VirtualMachine, cursor: Option<MachineId>, skip: impl Fn(MachineId) -> bool) -> Option<MachineId> {
    let running: Vec<MachineId> = cluster.running().map(|m| m.id).filter(|&id| !skip(id)).collect();
    if running.is_empty() {
        return None;
    }
    let start = cursor.map_or(0, |c| running.partition_point(|&id| id <= c));
    (0..running.len()).map(|k| running[(start + k) % running.len()]).find(|&id| fits_nominal(cluster, id, Resources::ZERO, vm))
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: Option<MachineId>,
}

impl SchedulerPolicy for RoundRobin {
    fn name(&self) -> &'static str {
        "round_robin"
    }

    fn allocate(&mut self, vm: VmId, cluster: &Cluster) -> PlacementDecision {
        let Some(v) = cluster.vm(vm) else { return PlacementDecision::Reject { vm } };
        let decision = match round_robin_pick(cluster, v, self.cursor, |_| false) {
            Some(pm) => PlacementDecision::Place { vm, pm },
            None => match lru_standby_fitting(cluster, v, |_| false) {
                Some(pm) => PlacementDecision::WakeAndPlace { vm, pm },
                None => PlacementDecision::Reject { vm },
            },
        };
        if let Some(pm) = decision.target() {
            self.cursor = Some(pm);
        }
        decision
    }
}

/// First machine (lowest id, running or standby) with room for the VM's nominal size.
#[derive(Debug, Clone, Copy, Default)]
pub struct Greedy;

impl SchedulerPolicy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn allocate(&mut self, vm: VmId, cluster: &Cluster) -> PlacementDecision {
        let Some(v) = cluster.vm(vm) else { return PlacementDecision::Reject { vm } };
        for m in cluster.machines() {
            if !fits_nominal(cluster, m.id, Resources::ZERO, v) {
                continue;
            }
            return match m.state {
                MachineState::Running => PlacementDecision::Place { vm, pm: m.id },
                MachineState::Standby => PlacementDecision::WakeAndPlace { vm, pm: m.id },
            };
        }
        PlacementDecision::Reject { vm }
    }
}

/// Greedy over running machines, then wakes a sleeping one; idle machines sleep.
#[derive(Debug, Clone, Copy, Default)]
pub struct PowerSave;

impl SchedulerPolicy for PowerSave {
    fn name(&self) -> &'static str {
        "power_save"
    }

    fn allocate(&mut self, vm: VmId, cluster: &Cluster) -> PlacementDecision {
        let Some(v) = cluster.vm(vm) else { return PlacementDecision::Reject { vm } };
        if let Some(m) = cluster.running().find(|m| fits_nominal(cluster, m.id, Resources::ZERO, v)) {
            return PlacementDecision::Place { vm, pm: m.id };
        }
        match lru_standby_fitting(cluster, v, |_| false) {
            Some(pm) => PlacementDecision::WakeAndPlace { vm, pm },
            None => PlacementDecision::Reject { vm },
        }
    }

    fn rebalance(&mut self, pm: MachineId, cluster: &Cluster) -> Vec<RebalanceAction> {
        standby_if_idle(cluster, pm)
    }
}

/// Round robin with retirement: a machine that loses a VM while still hosting
/// others stops accepting new VMs, and after `retirement_ticks` its remaining
/// VMs are moved off so it can sleep.
#[derive(Debug, Clone)]
pub struct DynamicRoundRobin {
    retirement_ticks: u64,
    retired: BTreeMap<MachineId, Tick>,
    cursor: Option<MachineId>,
}

impl DynamicRoundRobin {
    pub fn new(retirement_ticks: u64) -> Self {
        DynamicRoundRobin { retirement_ticks, retired: BTreeMap::new(), cursor: None }
    }

    pub fn is_retired(&self, pm: MachineId) -> bool {
        self.retired.contains_key(&pm)
    }

    pub fn retired(&self) -> impl Iterator<Item = MachineId> + '_ {
        self.retired.keys().copied()
    }

    /// Greedy re-homing of every VM on `pm` over non-retired machines.
    fn evacuate(&self, pm: MachineId, cluster: &Cluster) -> Option<Vec<RebalanceAction>> {
        let mut extra: BTreeMap<MachineId, Resources> = BTreeMap::new();
        let mut woken: BTreeSet<MachineId> = BTreeSet::new();
        let mut actions = Vec::new();
        for vm in cluster.hosted_vms(pm) {
            if vm.in_transit() {
                return None;
            }
            let target = cluster
                .machines()
                .iter()
                .find(|m| m.id != pm && !self.is_retired(m.id) && fits_nominal(cluster, m.id, extra.get(&m.id).copied().unwrap_or_default(), vm))?;
            let to = target.id;
            *extra.entry(to).or_default() += vm.nominal;
            if target.is_running() || woken.contains(&to) {
                actions.push(RebalanceAction::Migrate { vm: vm.id, from: pm, to });
            } else {
                woken.insert(to);
                actions.push(RebalanceAction::WakeAndMigrate { vm: vm.id, from: pm, to });
            }
        }
        actions.push(RebalanceAction::StandbyMachine { pm });
        Some(actions)
    }
}

impl SchedulerPolicy for DynamicRoundRobin {
    fn name(&self) -> &'static str {
        "dynamic_round_robin"
    }

    fn allocate(&mut self, vm: VmId, cluster: &Cluster) -> PlacementDecision {
        let Some(v) = cluster.vm(vm) else { return PlacementDecision::Reject { vm } };
        let decision = match round_robin_pick(cluster, v, self.cursor, |id| self.is_retired(id)) {
            Some(pm) => PlacementDecision::Place { vm, pm },
            None => match lru_standby_fitting(cluster, v, |id| self.is_retired(id)) {
                Some(pm) => PlacementDecision::WakeAndPlace { vm, pm },
                None => PlacementDecision::Reject { vm },
            },
        };
        if let Some(pm) = decision.target() {
            self.cursor = Some(pm);
        }
        decision
    }

    fn on_departure(&mut self, _vm: VmId, pm: MachineId, cluster: &Cluster) {
        if !cluster.machine(pm).hosted.is_empty() {
            self.retired.entry(pm).or_insert(cluster.now);
        }
    }

    fn rebalance(&mut self, pm: MachineId, cluster: &Cluster) -> Vec<RebalanceAction> {
        let m = cluster.machine(pm);
        if !m.is_running() {
            self.retired.remove(&pm);
            return Vec::new();
        }
        if m.hosted.is_empty() {
            self.retired.remove(&pm);
            return standby_if_idle(cluster, pm);
        }
        match self.retired.get(&pm) {
            Some(&since) if cluster.now.saturating_sub(since) >= self.retirement_ticks => self.evacuate(pm, cluster).unwrap_or_default(),
            _ => Vec::new(),
        }
    }
}

/// Current demand, or the requested size for a VM that has not run yet.
fn usage_estimate(vm: &VirtualMachine) -> Resources {
    if vm.last_delivered.is_some() {
        vm.demand
    } else {
        vm.nominal
    }
}

/// Per-machine state while Single Threshold builds a placement.
#[derive(Debug, Clone, Copy)]
struct Slot {
    usage: Resources,
    on: bool,
    count: usize,
}

/// Packs VMs by current usage, largest CPU first, onto the machine with the
/// least power increase, keeping CPU utilization below a single threshold.
/// Memory, disk and bandwidth only need to fit within capacity.
#[derive(Debug, Clone)]
pub struct SingleThreshold {
    threshold: f64,
    epoch_ticks: u64,
    weights: UtilizationWeights,
    power: PowerModel,
}

impl SingleThreshold {
    pub fn new(threshold: f64, epoch_ticks: u64, weights: UtilizationWeights, power: PowerModel) -> Self {
        SingleThreshold { threshold, epoch_ticks: epoch_ticks.max(1), weights, power }
    }

    fn watts(&self, cluster: &Cluster, pm: MachineId, usage: &Resources) -> f64 {
        let m = cluster.machine(pm);
        let rv = ResourceVector::clamped(m.capacity.fractions(usage));
        self.power.running_watts(m.peak_power, unified_utilization(&rv, &self.weights))
    }

    fn feasible(&self, cluster: &Cluster, pm: MachineId, slot: &Slot, usage: &Resources) -> bool {
        let cap = cluster.machine(pm).capacity.amounts();
        if (slot.usage.cpu + usage.cpu) / cap.cpu >= self.threshold {
            return false;
        }
        [Resource::Mem, Resource::Disk, Resource::Bw].iter().all(|&r| slot.usage[r] + usage[r] <= cap[r])
    }

    /// Cheapest feasible machine for a VM with the given usage, ties by lowest id.
    fn best_slot(&self, cluster: &Cluster, slots: &[Slot], usage: &Resources) -> Option<MachineId> {
        let mut best: Option<(f64, MachineId)> = None;
        for (i, slot) in slots.iter().enumerate() {
            let pm = MachineId(i as u32);
            if !self.feasible(cluster, pm, slot, usage) {
                continue;
            }
            let before = if slot.on { self.watts(cluster, pm, &slot.usage) } else { self.power.standby_watts };
            let increase = self.watts(cluster, pm, &(slot.usage + *usage)) - before;
            if best.is_none_or(|(b, _)| increase < b) {
                best = Some((increase, pm));
            }
        }
        best.map(|(_, pm)| pm)
    }

    fn current_slots(&self, cluster: &Cluster) -> Vec<Slot> {
        cluster
            .machines()
            .iter()
            .map(|m| {
                let usage = m.hosted.iter().chain(m.incoming.iter()).filter_map(|id| cluster.vm(*id)).map(usage_estimate).sum();
                Slot { usage, on: m.is_running(), count: m.hosted.len() + m.incoming.len() }
            })
            .collect()
    }

    /// Full re-placement of every settled VM.
    fn replace_all(&self, cluster: &Cluster) -> Vec<RebalanceAction> {
        let mut vms: Vec<&VirtualMachine> = cluster.vms().filter(|vm| vm.host.is_some() && !vm.in_transit()).collect();
        vms.sort_by(|a, b| usage_estimate(b).cpu.total_cmp(&usage_estimate(a).cpu).then(a.id.cmp(&b.id)));

        let mut slots: Vec<Slot> = cluster.machines().iter().map(|m| Slot { usage: Resources::ZERO, on: m.is_running(), count: 0 }).collect();
        // VMs already in flight stay where they are heading.
        for vm in cluster.vms().filter(|vm| vm.in_transit()) {
            let to = vm.migration.expect("in transit").to;
            let s = &mut slots[to.0 as usize];
            s.usage += usage_estimate(vm);
            s.count += 1;
        }

        let mut actions = Vec::new();
        let mut woken = BTreeSet::new();
        for vm in vms {
            let from = vm.host.expect("filtered on host");
            let usage = usage_estimate(vm);
            let to = self.best_slot(cluster, &slots, &usage).unwrap_or(from);
            let s = &mut slots[to.0 as usize];
            s.usage += usage;
            s.count += 1;
            s.on = true;
            if to == from {
                continue;
            }
            if cluster.machine(to).is_running() || woken.contains(&to) {
                actions.push(RebalanceAction::Migrate { vm: vm.id, from, to });
            } else {
                woken.insert(to);
                actions.push(RebalanceAction::WakeAndMigrate { vm: vm.id, from, to });
            }
        }

        let mut running_after = cluster.running_count() + woken.len();
        for m in cluster.running() {
            if slots[m.id.0 as usize].count > 0 || running_after <= 1 {
                continue;
            }
            running_after -= 1;
            actions.push(RebalanceAction::StandbyMachine { pm: m.id });
        }
        actions
    }
}

impl SchedulerPolicy for SingleThreshold {
    fn name(&self) -> &'static str {
        "single_threshold"
    }

    fn allocate(&mut self, vm: VmId, cluster: &Cluster) -> PlacementDecision {
        let Some(v) = cluster.vm(vm) else { return PlacementDecision::Reject { vm } };
        let slots = self.current_slots(cluster);
        match self.best_slot(cluster, &slots, &usage_estimate(v)) {
            Some(pm) if cluster.machine(pm).is_running() => PlacementDecision::Place { vm, pm },
            Some(pm) => PlacementDecision::WakeAndPlace { vm, pm },
            None => PlacementDecision::Reject { vm },
        }
    }

    fn epoch(&mut self, cluster: &Cluster) -> Vec<RebalanceAction> {
        if !cluster.now.is_multiple_of(self.epoch_ticks) {
            return Vec::new();
        }
        self.replace_all(cluster)
    }
}
