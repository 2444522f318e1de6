//! Similarity-driven consolidation: cosine-similarity placement with a
//! utilization ceiling, plus threshold-triggered scale-up and scale-down.

use std::collections::BTreeMap;

use crate::cluster::{BreachKind, Cluster, MachineId, VirtualMachine, VmId};
use crate::resources::{unified_utilization, ResourceVector};

use super::{PlacementDecision, PolicyConfig, PolicyStats, RebalanceAction, SchedulerPolicy, SimilarityMethod};

/// Slack allowed when re-checking a migration that was planned against the same state.
const EXECUTION_SLACK: f64 = 1e-9;

/// Cosine of the angle between two resource vectors.
///
/// Returns 0 when either vector has zero norm.
pub fn cosine_similarity(a: &ResourceVector, b: &ResourceVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(0.0, 1.0)
}

/// Similarity score of a VM (already expressed on the candidate) against a
/// machine's used vector. Method 1 compares with the used vector, Method 2
/// with the free vector.
pub fn score_candidate(vm_rv_on_pm: &ResourceVector, machine_rv: &ResourceVector, method: SimilarityMethod) -> f64 {
    match method {
        SimilarityMethod::Method1 => cosine_similarity(vm_rv_on_pm, machine_rv),
        SimilarityMethod::Method2 => cosine_similarity(vm_rv_on_pm, &machine_rv.complement()),
    }
}

/// Tentative state layered over the live cluster while planning a batch.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    /// Extra load (fractions of each machine's capacity) already promised this batch.
    pub extra: BTreeMap<MachineId, [f64; 4]>,
    /// Machine that must not be chosen (the one being evacuated).
    pub exclude: Option<MachineId>,
    /// Whether a standby machine may be woken when no running machine fits.
    pub allow_wake: bool,
}

impl Plan {
    pub fn for_arrival() -> Self {
        Plan { allow_wake: true, ..Default::default() }
    }

    pub fn evacuating(pm: MachineId, allow_wake: bool) -> Self {
        Plan { exclude: Some(pm), allow_wake, ..Default::default() }
    }

    fn add(&mut self, pm: MachineId, load: [f64; 4]) {
        let e = self.extra.entry(pm).or_insert([0.0; 4]);
        for (a, b) in e.iter_mut().zip(load) {
            *a += b;
        }
    }
}

/// Estimated used vector of `pm` including the plan's promised load.
fn planned_machine_rv(cluster: &Cluster, pm: MachineId, cfg: &PolicyConfig, plan: &Plan) -> ResourceVector {
    let mut raw = cluster.load_estimate(pm, &cfg.default_rv);
    if let Some(extra) = plan.extra.get(&pm) {
        for (a, b) in raw.iter_mut().zip(extra) {
            *a += b;
        }
    }
    ResourceVector::clamped(raw)
}

fn eligible(score: f64, cfg: &PolicyConfig) -> bool {
    match cfg.similarity_method {
        SimilarityMethod::Method1 => score <= cfg.similarity_threshold,
        SimilarityMethod::Method2 => score >= cfg.similarity_threshold,
    }
}

/// Estimated unified utilization of `pm` after adding `vm`.
pub fn utilization_after(cluster: &Cluster, vm: &VirtualMachine, pm: MachineId, cfg: &PolicyConfig, plan: &Plan) -> f64 {
    let used = planned_machine_rv(cluster, pm, cfg, plan);
    let vm_rv = cluster.vm_rv_on(vm, pm, &cfg.default_rv);
    unified_utilization(&used.saturating_add(&vm_rv), &cfg.weights)
}

/// Running machines ranked for `vm`: scored, filtered by the similarity
/// threshold, then sorted (ascending for Method 1, descending for Method 2;
/// ties by lowest id).
pub fn candidate_queue(cluster: &Cluster, vm: &VirtualMachine, cfg: &PolicyConfig, plan: &Plan) -> Vec<(MachineId, f64)> {
    let mut queue: Vec<(MachineId, f64)> = cluster
        .running()
        .filter(|m| Some(m.id) != plan.exclude && Some(m.id) != vm.host)
        .map(|m| {
            let vm_rv = cluster.vm_rv_on(vm, m.id, &cfg.default_rv);
            let used = planned_machine_rv(cluster, m.id, cfg, plan);
            (m.id, score_candidate(&vm_rv, &used, cfg.similarity_method))
        })
        .filter(|&(_, s)| eligible(s, cfg))
        .collect();
    match cfg.similarity_method {
        SimilarityMethod::Method1 => queue.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
        SimilarityMethod::Method2 => queue.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))),
    }
    queue
}

/// Allocation algorithm: walk the similarity queue and take the first machine
/// whose estimated utilization after placement stays below `u_up - buffer`;
/// otherwise wake the least recently used standby machine, or reject.
pub fn allocate(vm: &VirtualMachine, cluster: &Cluster, cfg: &PolicyConfig, plan: &Plan) -> PlacementDecision {
    let ceiling = cfg.placement_ceiling();
    for (pm, _) in candidate_queue(cluster, vm, cfg, plan) {
        if utilization_after(cluster, vm, pm, cfg, plan) < ceiling {
            return PlacementDecision::Place { vm: vm.id, pm };
        }
    }
    if plan.allow_wake {
        if let Some(pm) = cluster.lru_standby(|id| Some(id) == plan.exclude) {
            return PlacementDecision::WakeAndPlace { vm: vm.id, pm };
        }
    }
    PlacementDecision::Reject { vm: vm.id }
}

fn breach_persisted(cluster: &Cluster, pm: MachineId, kind: BreachKind, cfg: &PolicyConfig) -> bool {
    match cluster.machine(pm).breach {
        Some(ep) => ep.kind == kind && ep.length(cluster.now) >= cfg.consistency_ticks,
        None => false,
    }
}

/// Outcome of a scale-up check that fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleUp {
    Action(RebalanceAction),
    /// The heaviest VM could not go anywhere; it stays put.
    NoTarget(VmId),
}

/// Scale-up: once a machine has stayed above `u_up` for the consistency
/// period, move its heaviest VM elsewhere (waking a standby machine if needed).
pub fn scale_up_check(cluster: &Cluster, pm: MachineId, cfg: &PolicyConfig) -> Option<ScaleUp> {
    if !cluster.machine(pm).is_running() || !breach_persisted(cluster, pm, BreachKind::Over, cfg) {
        return None;
    }
    let heaviest = cluster
        .hosted_vms(pm)
        .filter(|vm| !vm.in_transit())
        .map(|vm| (vm, unified_utilization(&cluster.vm_rv_on(vm, pm, &cfg.default_rv), &cfg.weights)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.id.cmp(&a.0.id)))?
        .0;
    let outcome = match allocate(heaviest, cluster, cfg, &Plan::evacuating(pm, true)) {
        PlacementDecision::Place { vm, pm: to } => ScaleUp::Action(RebalanceAction::Migrate { vm, from: pm, to }),
        PlacementDecision::WakeAndPlace { vm, pm: to } => ScaleUp::Action(RebalanceAction::WakeAndMigrate { vm, from: pm, to }),
        PlacementDecision::Reject { vm } => ScaleUp::NoTarget(vm),
    };
    Some(outcome)
}

/// Scale-down: once a machine has stayed below `u_down` for the consistency
/// period, try to re-home every hosted VM on other running machines. Either
/// all VMs find a home (migrations followed by standby) or nothing is emitted.
pub fn scale_down_check(cluster: &Cluster, pm: MachineId, cfg: &PolicyConfig) -> Option<Vec<RebalanceAction>> {
    let machine = cluster.machine(pm);
    if !machine.is_running() || !breach_persisted(cluster, pm, BreachKind::Under, cfg) {
        return None;
    }
    if cluster.running_count() <= 1 || !machine.incoming.is_empty() {
        return None;
    }
    let mut plan = Plan::evacuating(pm, false);
    let mut actions = Vec::with_capacity(machine.hosted.len() + 1);
    for vm in cluster.hosted_vms(pm) {
        if vm.in_transit() {
            return None;
        }
        match allocate(vm, cluster, cfg, &plan) {
            PlacementDecision::Place { vm: id, pm: to } => {
                plan.add(to, cluster.contribution(vm, to, &cfg.default_rv));
                actions.push(RebalanceAction::Migrate { vm: id, from: pm, to });
            }
            _ => return None,
        }
    }
    actions.push(RebalanceAction::StandbyMachine { pm });
    Some(actions)
}

/// The similarity-based consolidation policy.
#[derive(Debug, Clone)]
pub struct SimilarityPolicy {
    cfg: PolicyConfig,
    stats: PolicyStats,
}

impl SimilarityPolicy {
    pub fn new(cfg: PolicyConfig) -> Self {
        SimilarityPolicy { cfg, stats: PolicyStats::default() }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }
}

impl SchedulerPolicy for SimilarityPolicy {
    fn name(&self) -> &'static str {
        "similarity"
    }

    fn allocate(&mut self, vm: VmId, cluster: &Cluster) -> PlacementDecision {
        match cluster.vm(vm) {
            Some(v) => allocate(v, cluster, &self.cfg, &Plan::for_arrival()),
            None => PlacementDecision::Reject { vm },
        }
    }

    fn rebalance(&mut self, pm: MachineId, cluster: &Cluster) -> Vec<RebalanceAction> {
        match scale_up_check(cluster, pm, &self.cfg) {
            Some(ScaleUp::Action(a)) => return vec![a],
            Some(ScaleUp::NoTarget(_)) => {
                self.stats.scale_up_failures += 1;
                return Vec::new();
            }
            None => {}
        }
        scale_down_check(cluster, pm, &self.cfg).unwrap_or_default()
    }

    fn admits_migration(&self, vm: VmId, to: MachineId, cluster: &Cluster) -> bool {
        let Some(v) = cluster.vm(vm) else { return false };
        if !cluster.machine(to).is_running() {
            return true;
        }
        utilization_after(cluster, v, to, &self.cfg, &Plan::default()) < self.cfg.placement_ceiling() + EXECUTION_SLACK
    }

    fn stats(&self) -> PolicyStats {
        self.stats
    }
}
