//! Independent reference implementations of the core formulas.

pub const REL_TOL: f64 = 1e-12;

pub fn close(got: f64, want: f64) -> bool {
    got == want || (got - want).abs() <= REL_TOL * got.abs().max(want.abs())
}

pub fn oracle_cosine(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in (0..4).rev() {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (dot / aa.sqrt() / bb.sqrt()).min(1.0)
    }
}

pub fn oracle_utilization(r: &[f64; 4], w: &[f64; 4]) -> f64 {
    let s = r.iter().zip(w).rev().fold(0.0, |acc, (x, y)| acc + x * y);
    s.min(1.0)
}

pub fn oracle_rescale(r: &[f64; 4], from: &[f64; 4], to: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        let absolute = r[i] * from[i];
        out[i] = if absolute >= to[i] { 1.0 } else { absolute / to[i] };
    }
    out
}

pub fn oracle_power(running: bool, peak: f64, u: f64, idle: f64, standby: f64) -> f64 {
    if running {
        idle * peak + (peak - idle * peak) * u
    } else {
        standby
    }
}
