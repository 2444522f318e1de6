//! Synthetic traces.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with `WorkloadSpec::seed`.
//! VM `i` draws its base trace from stream `2i` and its spike schedule from
//! stream `2i + 1`, so turning spikes off leaves the base trace untouched and
//! output is identical on every platform.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DemandSample, Profile, VmRequest, Workload, WorkloadSpec};
use crate::cluster::VmId;
use crate::resources::Resources;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn symmetric(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    (2.0 * rng.gen::<f64>() - 1.0) * half_width
}

/// Deterministic workload for `spec`. Zero VMs or zero duration yields an empty workload.
pub fn generate_workload(spec: &WorkloadSpec) -> Workload {
    if spec.vm_count == 0 || spec.duration_ticks == 0 {
        return Workload::default();
    }
    let requests = (0..spec.vm_count).map(|i| generate_vm(spec, i)).collect();
    Workload { requests }
}

fn generate_vm(spec: &WorkloadSpec, index: usize) -> VmRequest {
    let mut base = stream(spec.seed, 2 * index as u64);
    let mut spikes = stream(spec.seed, 2 * index as u64 + 1);

    let flavor = spec.flavors[base.gen_range(0..spec.flavors.len())];
    let arrival = if spec.arrival_window == 0 { 0 } else { base.gen_range(0..spec.arrival_window) };
    let open_ended = base.gen::<f64>() < spec.open_ended_fraction;
    let lifetime = base.gen_range(spec.lifetime_min..=spec.lifetime_max);
    let departure = (!open_ended).then_some(arrival + lifetime);

    let mut levels = [0.0; 4];
    for (r, level) in levels.iter_mut().enumerate() {
        let centre = match spec.profile {
            Profile::MixedIntensive if r != index % 4 => spec.minor_level,
            _ => spec.mean_level,
        };
        *level = centre + symmetric(&mut base, spec.level_spread);
    }

    let end = departure.unwrap_or(spec.duration_ticks).min(spec.duration_ticks);
    let mut trace = Vec::with_capacity(end.saturating_sub(arrival) as usize);
    let mut spike_left = 0u64;
    for tick in arrival..end {
        let shape = match spec.profile {
            Profile::Diurnal => 1.0 + spec.diurnal_amplitude * (2.0 * PI * tick as f64 / spec.diurnal_period_ticks as f64).cos(),
            _ => 1.0,
        };
        let mut frac = [0.0; 4];
        for (r, f) in frac.iter_mut().enumerate() {
            *f = (levels[r] * shape + symmetric(&mut base, spec.jitter)).clamp(0.0, 1.0);
        }

        let start = spikes.gen::<f64>() < spec.spike_prob;
        if spike_left == 0 && start && spec.profile != Profile::Steady {
            spike_left = spec.spike_duration;
        }
        let boost = if spike_left > 0 {
            spike_left -= 1;
            spec.spike_multiplier
        } else {
            1.0
        };

        let demand = Resources::from_array(frac).zip_with(flavor, |f, n| f * boost * n);
        trace.push(DemandSample { tick, demand });
    }

    VmRequest { vm_id: VmId(index as u32), arrival_tick: arrival, departure_tick: departure, nominal: flavor, trace }
}
