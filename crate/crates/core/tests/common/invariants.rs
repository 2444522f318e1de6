//! Invariant checks over randomized small instances (at most 5 machines and
//! 8 VMs), each driven by one seed, with brute-force cross-checks where the
//! search space allows.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmsched::cluster::{BreachEpisode, BreachKind};
use vmsched::policy::{allocate, cosine_similarity, scale_down_check, PlacementDecision, Plan, RebalanceAction};
use vmsched::workload::DemandSample;
use vmsched::{
    arbitrate, Cluster, MachineCapacity, MachineGroup, MachineId, MachineState, PolicyConfig, PolicyKind, PolicySpec, ResourceVector, Resources,
    SimilarityMethod, Simulation, SimulationConfig, UtilizationWeights, VirtualMachine, VmId, VmRequest, Workload,
};

const TICKS: u64 = 25;
const EPS: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_capacity(r: &mut ChaCha8Rng) -> Resources {
    let k = [1.0, 2.0, 4.0][r.gen_range(0..3)];
    Resources::new(100.0 * k, 200.0 * k, 50.0 * k, 80.0 * k)
}

fn random_config(r: &mut ChaCha8Rng) -> PolicyConfig {
    let u_up = r.gen_range(0.4..=1.0);
    let u_down = r.gen_range(0.0..=(u_up - 0.2));
    let buffer = r.gen_range(0.0..(u_up - 0.05));
    let raw: [f64; 4] = [r.gen_range(0.05..1.0), r.gen_range(0.05..1.0), r.gen_range(0.05..1.0), r.gen_range(0.05..1.0)];
    let total: f64 = raw.iter().sum();
    let weights = UtilizationWeights::new(raw[0] / total, raw[1] / total, raw[2] / total, 1.0 - (raw[0] + raw[1] + raw[2]) / total).unwrap_or_default();
    PolicyConfig {
        u_up,
        u_down,
        buffer,
        similarity_method: if r.gen() { SimilarityMethod::Method1 } else { SimilarityMethod::Method2 },
        similarity_threshold: r.gen_range(0.0..=1.0),
        consistency_ticks: r.gen_range(1..=4),
        weights,
        delta_window: r.gen_range(1..=5),
        ..PolicyConfig::default()
    }
}

fn random_workload(r: &mut ChaCha8Rng) -> Workload {
    let n = r.gen_range(0..=8);
    let requests = (0..n)
        .map(|i| {
            let nominal = Resources::new(r.gen_range(5.0..80.0), r.gen_range(5.0..150.0), r.gen_range(1.0..40.0), r.gen_range(1.0..60.0));
            let arrival = r.gen_range(0..15);
            let departure = r.gen_bool(0.5).then(|| arrival + r.gen_range(1..=15));
            let end = departure.unwrap_or(TICKS).min(TICKS);
            let trace = (arrival..end)
                .map(|tick| {
                    let f = [r.gen_range(0.0..1.5), r.gen_range(0.0..1.5), r.gen_range(0.0..1.5), r.gen_range(0.0..1.5)];
                    DemandSample { tick, demand: Resources::from_array(f).zip_with(nominal, |a, b| a * b) }
                })
                .collect();
            VmRequest { vm_id: VmId(i), arrival_tick: arrival, departure_tick: departure, nominal, trace }
        })
        .collect();
    Workload::new(requests).unwrap()
}

fn random_sim_config(r: &mut ChaCha8Rng) -> SimulationConfig {
    let machines = r.gen_range(1..=5);
    let fleet = (0..machines)
        .map(|_| MachineGroup { count: 1, capacity: MachineCapacity::try_from(random_capacity(r)).unwrap(), peak_power: r.gen_range(100.0..400.0) })
        .collect();
    let kind = PolicyKind::ALL[r.gen_range(0..PolicyKind::ALL.len())];
    let mut policy = PolicySpec { kind, config: random_config(r), ..PolicySpec::default() };
    policy.baseline.retirement_threshold_ticks = r.gen_range(1..=5);
    policy.baseline.cpu_threshold = r.gen_range(0.3..=1.0);
    policy.baseline.epoch_ticks = r.gen_range(1..=4);
    SimulationConfig {
        duration_ticks: TICKS,
        fleet,
        initial_running_count: r.gen_range(1..=machines),
        policy,
        migration_cost_ticks: r.gen_range(0..=2),
        wake_latency_ticks: r.gen_range(0..=2),
        ..SimulationConfig::default()
    }
}

fn check_tick(sim: &Simulation<'_>, workload: &Workload) -> Result<(), TestCaseError> {
    let t = sim.now() - 1;
    let cluster = sim.cluster();

    let active: BTreeSet<VmId> = workload.requests.iter().filter(|q| q.is_active(t)).map(|q| q.vm_id).collect();
    let present: BTreeSet<VmId> = cluster.vms().map(|v| v.id).collect();
    prop_assert_eq!(&present, &active, "tick {}: VMs present differ from active requests", t);

    let pending: BTreeSet<VmId> = sim.pending().iter().copied().collect();
    prop_assert_eq!(pending.len(), sim.pending().len(), "duplicate pending entries");
    for vm in cluster.vms() {
        prop_assert!(vm.host.is_some() != pending.contains(&vm.id), "tick {t}: {} is neither placed nor pending exactly once", vm.id);
        if let Some(h) = vm.host {
            prop_assert!(cluster.machine(h).hosted.contains(&vm.id), "{} not listed on its host", vm.id);
        }
    }
    let hosted_total: usize = cluster.machines().iter().map(|m| m.hosted.len()).sum();
    prop_assert_eq!(hosted_total, cluster.vms().filter(|v| v.host.is_some()).count(), "a VM is listed on two machines");

    for m in cluster.machines() {
        if m.state == MachineState::Standby {
            prop_assert!(m.hosted.is_empty() && m.incoming.is_empty(), "tick {t}: standby {} hosts VMs", m.id);
        }
    }
    for s in sim.last_served() {
        for (got, cap) in s.delivered.to_array().iter().zip(s.capacity.to_array()) {
            prop_assert!(*got <= cap * (1.0 + EPS) + EPS, "tick {t}: {} delivered {got} > capacity {cap}", s.pm);
        }
    }
    for e in sim.events().iter().filter(|e| e.tick == t) {
        prop_assert!(e.delivered < e.demanded && e.delivered >= 0.0);
    }
    Ok(())
}

/// Conservation of VMs, standby machines empty, delivered within capacity.
pub fn simulation_invariants_hold_every_tick(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let cfg = random_sim_config(&mut r);
    let workload = random_workload(&mut r);
    let mut sim = Simulation::new(cfg, &workload).unwrap();
    sim.record_events();
    while !sim.is_finished() {
        sim.step();
        check_tick(&sim, &workload)?;
    }
    Ok(())
}

pub fn arbitration_matches_fair_share_oracle(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let cap = random_capacity(&mut r);
    let n = r.gen_range(0..=8);
    let demands: Vec<(VmId, Resources)> =
        (0..n).map(|i| (VmId(i), Resources::new(r.gen_range(0.0..150.0), r.gen_range(0.0..300.0), r.gen_range(0.0..80.0), r.gen_range(0.0..120.0)))).collect();
    let (delivered, events) = arbitrate(&cap, &demands, 0, MachineId(0));
    let mut expected_events = 0;
    for k in 0..4 {
        let c = cap.to_array()[k];
        let total: f64 = demands.iter().map(|(_, d)| d.to_array()[k]).sum();
        let sum_got: f64 = delivered.iter().map(|d| d.to_array()[k]).sum();
        prop_assert!(sum_got <= c * (1.0 + EPS) + EPS);
        for ((_, d), got) in demands.iter().zip(&delivered) {
            let (want, g) = (d.to_array()[k], got.to_array()[k]);
            let oracle = if total <= c { want } else { want / total * c };
            prop_assert!((g - oracle).abs() <= EPS * oracle.max(1.0));
            prop_assert!(g <= want + EPS);
            if g < want {
                expected_events += 1;
            }
        }
    }
    prop_assert_eq!(events.len(), expected_events);
    Ok(())
}

/// A placement always leaves the estimated utilization below `u_up - buffer`,
/// and is the first feasible machine in queue order; a wake or reject means
/// no running machine was both eligible and feasible.
pub fn allocate_respects_buffer_and_first_fit(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let cfg = random_config(&mut r);
    let (cluster, _) = random_cluster(&mut r, &cfg);
    let vm = random_vm(&mut r, VmId(99), &cfg);
    let decision = allocate(&vm, &cluster, &cfg, &Plan::for_arrival());
    let ceiling = cfg.u_up - cfg.buffer;

    // Each running machine with its score and whether it is feasible with
    // `margin` of slack on the eligibility and ceiling tests.
    let classify = |margin: f64| -> Vec<(MachineId, f64)> {
        let mut out: Vec<(MachineId, f64)> = cluster
            .running()
            .filter_map(|m| {
                let used = oracle_used(&cluster, m.id, &cfg, &[0.0; 4]);
                let vm_rv = oracle_vm_rv(&vm, &cluster, m.id, &cfg);
                let score = oracle_score(&vm_rv, &used, cfg.similarity_method);
                let eligible = match cfg.similarity_method {
                    SimilarityMethod::Method1 => score <= cfg.similarity_threshold + margin,
                    SimilarityMethod::Method2 => score >= cfg.similarity_threshold - margin,
                };
                (eligible && oracle_u_after(&used, &vm_rv, &cfg) < ceiling + margin).then_some((m.id, score))
            })
            .collect();
        match cfg.similarity_method {
            SimilarityMethod::Method1 => out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
            SimilarityMethod::Method2 => out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))),
        }
        out
    };
    let strict = classify(-EPS);
    let loose = classify(EPS);

    match decision {
        PlacementDecision::Place { pm, .. } => {
            let chosen = loose.iter().find(|f| f.0 == pm).map(|f| f.1);
            prop_assert!(chosen.is_some(), "placed on {pm}, which is not eligible or exceeds the ceiling {ceiling}");
            let better = |a: f64, b: f64| match cfg.similarity_method {
                SimilarityMethod::Method1 => a < b - EPS,
                SimilarityMethod::Method2 => a > b + EPS,
            };
            let c = chosen.unwrap_or_default();
            prop_assert!(!strict.iter().any(|f| better(f.1, c)), "placed on {pm} ({c}) ahead of {:?}", strict);
        }
        PlacementDecision::WakeAndPlace { pm, .. } => {
            prop_assert!(strict.is_empty(), "woke {pm} although {:?} fit", strict);
            prop_assert_eq!(cluster.machine(pm).state, MachineState::Standby);
            prop_assert_eq!(Some(pm), cluster.lru_standby(|_| false), "not the least recently used standby machine");
        }
        PlacementDecision::Reject { .. } => {
            prop_assert!(strict.is_empty());
            prop_assert!(cluster.machines().iter().all(|m| m.is_running()));
        }
    }
    Ok(())
}

/// Scale-down emits a complete evacuation followed by standby, or nothing.
/// When exhaustive search finds no assignment of the VMs that keeps every
/// target below the ceiling, it must emit nothing.
pub fn scale_down_is_all_or_nothing(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let cfg = random_config(&mut r);
    let (mut cluster, source) = random_cluster(&mut r, &cfg);
    let Some(pm) = source else { return Ok(()) };
    cluster.now = 10;
    cluster.machine_mut(pm).breach = Some(BreachEpisode { kind: BreachKind::Under, since: 0 });
    let hosted: Vec<VmId> = cluster.machine(pm).hosted.iter().copied().collect();
    let targets: Vec<MachineId> = cluster.running().map(|m| m.id).filter(|&id| id != pm).collect();
    let ceiling = cfg.u_up - cfg.buffer;

    match scale_down_check(&cluster, pm, &cfg) {
        None => {}
        Some(actions) => {
            prop_assert_eq!(actions.last(), Some(&RebalanceAction::StandbyMachine { pm }));
            let moves = &actions[..actions.len() - 1];
            let moved: Vec<VmId> = moves
                .iter()
                .map(|a| match *a {
                    RebalanceAction::Migrate { vm, from, to } => {
                        assert_eq!(from, pm);
                        assert!(targets.contains(&to));
                        vm
                    }
                    other => panic!("unexpected {other:?}"),
                })
                .collect();
            prop_assert_eq!(&moved, &hosted);

            let mut extra = vec![[0.0; 4]; cluster.machines().len()];
            for a in moves {
                let RebalanceAction::Migrate { vm, to, .. } = *a else { unreachable!() };
                let v = cluster.vm(vm).unwrap();
                let used = oracle_used(&cluster, to, &cfg, &extra[to.0 as usize]);
                let u = oracle_u_after(&used, &oracle_vm_rv(v, &cluster, to, &cfg), &cfg);
                prop_assert!(u < ceiling, "move of {vm} to {to} reaches U {u}");
                let c = oracle_contribution(v, &cluster, to, &cfg);
                for k in 0..4 {
                    extra[to.0 as usize][k] += c[k];
                }
            }
            let mut after = cluster.clone();
            for &vm in &moved {
                let RebalanceAction::Migrate { to, .. } = moves[moved.iter().position(|&x| x == vm).unwrap()] else { unreachable!() };
                after.assign(vm, to).unwrap();
            }
            after.set_state(pm, MachineState::Standby);
            prop_assert!(after.machine(pm).hosted.is_empty());
            prop_assert_eq!(after.vms().filter(|v| v.host.is_some()).count(), cluster.vms().filter(|v| v.host.is_some()).count());
        }
    }

    if hosted.len() <= 4 && !targets.is_empty() && !exists_feasible_assignment(&cluster, &hosted, &targets, &cfg) {
        prop_assert!(scale_down_check(&cluster, pm, &cfg).is_none(), "evacuation emitted although no assignment is feasible");
    }
    Ok(())
}

/// A batch with one invalid action leaves the cluster exactly as it was.
pub fn failed_batch_changes_nothing(seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let mut cfg = random_sim_config(&mut r);
    cfg.migration_cost_ticks = 0;
    let workload = random_workload(&mut r);
    let mut sim = Simulation::new(cfg, &workload).unwrap();
    for _ in 0..r.gen_range(1..TICKS) {
        sim.step();
    }
    let cluster = sim.cluster();
    let mut batch = Vec::new();
    for vm in cluster.vms().filter(|v| v.host.is_some() && v.migration.is_none()) {
        let from = vm.host.unwrap();
        if let Some(to) = cluster.running().map(|m| m.id).find(|&id| id != from) {
            batch.push(RebalanceAction::Migrate { vm: vm.id, from, to });
        }
    }
    batch.push(RebalanceAction::Migrate { vm: VmId(1_000), from: MachineId(0), to: MachineId(0) });
    let snapshot = fingerprint(sim.cluster());
    prop_assert!(!sim.execute_batch(&batch));
    prop_assert_eq!(fingerprint(sim.cluster()), snapshot);
    Ok(())
}

type Fingerprint = (Vec<(MachineState, Vec<VmId>, Vec<VmId>)>, Vec<(VmId, Option<MachineId>)>);

fn fingerprint(c: &Cluster) -> Fingerprint {
    (
        c.machines().iter().map(|m| (m.state, m.hosted.iter().copied().collect(), m.incoming.iter().copied().collect())).collect(),
        c.vms().map(|v| (v.id, v.host)).collect(),
    )
}

fn random_vm(r: &mut ChaCha8Rng, id: VmId, cfg: &PolicyConfig) -> VirtualMachine {
    let nominal = Resources::new(r.gen_range(5.0..80.0), r.gen_range(5.0..150.0), r.gen_range(1.0..40.0), r.gen_range(1.0..60.0));
    let mut vm = VirtualMachine::new(id, id.0 as usize, nominal, 0, None, cfg.delta_window);
    for _ in 0..r.gen_range(0..=3) {
        let f = [r.gen_range(0.0..1.2), r.gen_range(0.0..1.2), r.gen_range(0.0..1.2), r.gen_range(0.0..1.2)];
        vm.record_usage(Resources::from_array(f).zip_with(nominal, |a, b| a * b));
    }
    vm
}

/// Random cluster with VMs on running machines; also returns a running
/// machine that hosts at least one VM, if any.
fn random_cluster(r: &mut ChaCha8Rng, cfg: &PolicyConfig) -> (Cluster, Option<MachineId>) {
    let n = r.gen_range(1..=5);
    let fleet: Vec<(MachineCapacity, f64)> = (0..n).map(|_| (MachineCapacity::try_from(random_capacity(r)).unwrap(), 200.0)).collect();
    let mut cluster = Cluster::new(fleet, cfg.weights);
    for i in 0..n {
        let m = cluster.machine_mut(MachineId(i as u32));
        if i == 0 || r.gen_bool(0.7) {
            m.state = MachineState::Running;
        }
        m.last_used_tick = r.gen_bool(0.5).then(|| r.gen_range(0..10));
    }
    let running: Vec<MachineId> = cluster.running().map(|m| m.id).collect();
    for i in 0..r.gen_range(0..=8) {
        let vm = random_vm(r, VmId(i), cfg);
        let host = running[r.gen_range(0..running.len())];
        cluster.insert_vm(vm);
        cluster.assign(VmId(i), host).unwrap();
    }
    let source = running.iter().copied().find(|&pm| !cluster.machine(pm).hosted.is_empty());
    (cluster, source)
}

fn fractions_of(amount: &Resources, cap: &Resources) -> [f64; 4] {
    let (a, c) = (amount.to_array(), cap.to_array());
    [a[0] / c[0], a[1] / c[1], a[2] / c[2], a[3] / c[3]]
}

fn oracle_contribution(vm: &VirtualMachine, cluster: &Cluster, pm: MachineId, cfg: &PolicyConfig) -> [f64; 4] {
    match vm.last_delivered {
        Some(d) => fractions_of(&d, cluster.machine(pm).capacity.amounts()),
        None => cfg.default_rv.as_array(),
    }
}

fn oracle_used(cluster: &Cluster, pm: MachineId, cfg: &PolicyConfig, extra: &[f64; 4]) -> [f64; 4] {
    let m = cluster.machine(pm);
    let mut used = *extra;
    for id in m.hosted.iter().chain(&m.incoming) {
        let c = oracle_contribution(cluster.vm(*id).unwrap(), cluster, pm, cfg);
        for k in 0..4 {
            used[k] += c[k];
        }
    }
    used.map(|x| x.clamp(0.0, 1.0))
}

fn oracle_vm_rv(vm: &VirtualMachine, cluster: &Cluster, pm: MachineId, cfg: &PolicyConfig) -> [f64; 4] {
    let window = vm.usage_window();
    if window.is_empty() {
        return cfg.default_rv.as_array();
    }
    let mut mean = [0.0; 4];
    for s in window {
        for (k, v) in s.to_array().iter().enumerate() {
            mean[k] += v / window.len() as f64;
        }
    }
    let target = cluster.machine(pm).capacity.amounts().to_array();
    [0, 1, 2, 3].map(|k| (mean[k] / target[k]).clamp(0.0, 1.0))
}

fn oracle_u_after(used: &[f64; 4], vm: &[f64; 4], cfg: &PolicyConfig) -> f64 {
    let w = cfg.weights.as_array();
    (0..4).map(|k| w[k] * (used[k] + vm[k]).min(1.0)).sum::<f64>().min(1.0)
}

fn oracle_score(vm: &[f64; 4], used: &[f64; 4], method: SimilarityMethod) -> f64 {
    let other = match method {
        SimilarityMethod::Method1 => *used,
        SimilarityMethod::Method2 => used.map(|x| 1.0 - x),
    };
    let rv = |a: [f64; 4]| ResourceVector::new(a[0], a[1], a[2], a[3]).unwrap();
    cosine_similarity(&rv(*vm), &rv(other))
}

/// Exhaustive search over assignments of `vms` to `targets`, ignoring
/// similarity eligibility: true if some assignment keeps every target's
/// estimated utilization below the placement ceiling.
fn exists_feasible_assignment(cluster: &Cluster, vms: &[VmId], targets: &[MachineId], cfg: &PolicyConfig) -> bool {
    let ceiling = cfg.u_up - cfg.buffer;
    let total = targets.len().pow(vms.len() as u32);
    (0..total).any(|mut code| {
        let mut extra = vec![[0.0; 4]; cluster.machines().len()];
        let mut last = vec![None; cluster.machines().len()];
        for &vm in vms {
            let to = targets[code % targets.len()];
            code /= targets.len();
            let v = cluster.vm(vm).unwrap();
            let c = oracle_contribution(v, cluster, to, cfg);
            last[to.0 as usize] = Some((extra[to.0 as usize], vm));
            for k in 0..4 {
                extra[to.0 as usize][k] += c[k];
            }
        }
        last.iter().enumerate().all(|(i, entry)| match entry {
            None => true,
            Some((before, vm)) => {
                let pm = MachineId(i as u32);
                let used = oracle_used(cluster, pm, cfg, before);
                oracle_u_after(&used, &oracle_vm_rv(cluster.vm(*vm).unwrap(), cluster, pm, cfg), cfg) < ceiling
            }
        })
    })
}
