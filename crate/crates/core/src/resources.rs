//! Resource vectors and the unified utilization model.
//!
//! Two representations are used throughout the crate:
//!
//! * [`Resources`]: absolute amounts (capacity units, MB, MB/s, Mb/s), used for
//!   machine capacities, VM demand and delivered usage.
//! * [`ResourceVector`]: usage expressed as a fraction of one particular
//!   machine's capacity, every component in `[0, 1]`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four resource dimensions, in their fixed component order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Cpu,
    Mem,
    Disk,
    Bw,
}

impl Resource {
    pub const ALL: [Resource; 4] = [Resource::Cpu, Resource::Mem, Resource::Disk, Resource::Bw];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Resource::Cpu => "cpu",
            Resource::Mem => "mem",
            Resource::Disk => "disk",
            Resource::Bw => "bw",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Absolute resource amounts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Resources {
    pub cpu: f64,
    pub mem: f64,
    pub disk: f64,
    pub bw: f64,
}

impl Resources {
    pub const ZERO: Resources = Resources { cpu: 0.0, mem: 0.0, disk: 0.0, bw: 0.0 };

    pub const fn new(cpu: f64, mem: f64, disk: f64, bw: f64) -> Self {
        Resources { cpu, mem, disk, bw }
    }

    pub fn splat(v: f64) -> Self {
        Resources::new(v, v, v, v)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Resources::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cpu, self.mem, self.disk, self.bw]
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Resources::from_array(self.to_array().map(f))
    }

    pub fn zip_with(self, other: Resources, f: impl Fn(f64, f64) -> f64) -> Self {
        let (a, b) = (self.to_array(), other.to_array());
        Resources::new(f(a[0], b[0]), f(a[1], b[1]), f(a[2], b[2]), f(a[3], b[3]))
    }

    pub fn scale(self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// True when every component is `<= other`'s.
    pub fn fits_within(&self, other: &Resources) -> bool {
        Resource::ALL.iter().all(|&r| self[r] <= other[r])
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl Index<Resource> for Resources {
    type Output = f64;

    fn index(&self, r: Resource) -> &f64 {
        match r {
            Resource::Cpu => &self.cpu,
            Resource::Mem => &self.mem,
            Resource::Disk => &self.disk,
            Resource::Bw => &self.bw,
        }
    }
}

impl IndexMut<Resource> for Resources {
    fn index_mut(&mut self, r: Resource) -> &mut f64 {
        match r {
            Resource::Cpu => &mut self.cpu,
            Resource::Mem => &mut self.mem,
            Resource::Disk => &mut self.disk,
            Resource::Bw => &mut self.bw,
        }
    }
}

impl Add for Resources {
    type Output = Resources;

    fn add(self, rhs: Resources) -> Resources {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl AddAssign for Resources {
    fn add_assign(&mut self, rhs: Resources) {
        *self = *self + rhs;
    }
}

impl Sub for Resources {
    type Output = Resources;

    fn sub(self, rhs: Resources) -> Resources {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl std::iter::Sum for Resources {
    fn sum<I: Iterator<Item = Resources>>(iter: I) -> Resources {
        iter.fold(Resources::ZERO, |acc, r| acc + r)
    }
}

/// Absolute capacity of a physical machine. Every component is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Resources", into = "Resources")]
pub struct MachineCapacity(Resources);

impl MachineCapacity {
    pub fn new(cpu: f64, mem: f64, disk: f64, bw: f64) -> Result<Self> {
        Self::try_from(Resources::new(cpu, mem, disk, bw))
    }

    pub fn uniform(v: f64) -> Result<Self> {
        Self::try_from(Resources::splat(v))
    }

    pub fn amounts(&self) -> &Resources {
        &self.0
    }

    pub fn get(&self, r: Resource) -> f64 {
        self.0[r]
    }

    /// Expresses absolute usage as fractions of this capacity, unclamped.
    pub fn fractions(&self, usage: &Resources) -> [f64; 4] {
        let cap = self.0.to_array();
        let u = usage.to_array();
        [u[0] / cap[0], u[1] / cap[1], u[2] / cap[2], u[3] / cap[3]]
    }
}

impl TryFrom<Resources> for MachineCapacity {
    type Error = Error;

    fn try_from(r: Resources) -> Result<Self> {
        for res in Resource::ALL {
            let v = r[res];
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("capacity.{res}"), format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(MachineCapacity(r))
    }
}

impl From<MachineCapacity> for Resources {
    fn from(c: MachineCapacity) -> Resources {
        c.0
    }
}

/// Usage of one machine's resources as fractions, in the order (cpu, mem, disk, bw).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct ResourceVector([f64; 4]);

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector([0.0; 4]);
    pub const ONES: ResourceVector = ResourceVector([1.0; 4]);

    /// Checked constructor; every component must be finite and in `[0, 1]`.
    pub fn new(cpu: f64, mem: f64, disk: f64, bw: f64) -> Result<Self> {
        Self::try_from([cpu, mem, disk, bw])
    }

    pub fn splat(v: f64) -> Result<Self> {
        Self::new(v, v, v, v)
    }

    /// Clamps each component into `[0, 1]`. NaN becomes 0.
    pub fn clamped(raw: [f64; 4]) -> Self {
        ResourceVector(raw.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn cpu(&self) -> f64 {
        self.0[0]
    }
    pub fn mem(&self) -> f64 {
        self.0[1]
    }
    pub fn disk(&self) -> f64 {
        self.0[2]
    }
    pub fn bw(&self) -> f64 {
        self.0[3]
    }

    pub fn get(&self, r: Resource) -> f64 {
        self.0[r.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    pub fn dot(&self, other: &ResourceVector) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Componentwise complement `1 - v`.
    pub fn complement(&self) -> ResourceVector {
        ResourceVector(self.0.map(|v| 1.0 - v))
    }

    /// Componentwise sum, clamped to `[0, 1]`.
    pub fn saturating_add(&self, other: &ResourceVector) -> ResourceVector {
        let mut raw = self.0;
        for (a, b) in raw.iter_mut().zip(other.0) {
            *a += b;
        }
        ResourceVector::clamped(raw)
    }
}

impl TryFrom<[f64; 4]> for ResourceVector {
    type Error = Error;

    fn try_from(raw: [f64; 4]) -> Result<Self> {
        for (r, v) in Resource::ALL.iter().zip(raw) {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("resource_vector.{r}"), format!("must be in [0, 1], got {v}")));
            }
        }
        Ok(ResourceVector(raw))
    }
}

impl From<ResourceVector> for [f64; 4] {
    fn from(v: ResourceVector) -> [f64; 4] {
        v.0
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{:.4}, {:.4}, {:.4}, {:.4}>", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Re-expresses a footprint measured against `from` as fractions of `to`.
///
/// Components that would exceed the target's capacity are clamped to 1.
pub fn rescale_rv(rv: &ResourceVector, from: &MachineCapacity, to: &MachineCapacity) -> ResourceVector {
    let mut raw = rv.0;
    for r in Resource::ALL {
        raw[r.index()] = raw[r.index()] * from.get(r) / to.get(r);
    }
    ResourceVector::clamped(raw)
}

/// Weights (alpha, beta, gamma, delta) of the unified utilization measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct UtilizationWeights([f64; 4]);

#[derive(Serialize, Deserialize)]
struct RawWeights {
    cpu: f64,
    mem: f64,
    disk: f64,
    bw: f64,
}

impl UtilizationWeights {
    pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(cpu: f64, mem: f64, disk: f64, bw: f64) -> Result<Self> {
        let w = [cpu, mem, disk, bw];
        for (r, v) in Resource::ALL.iter().zip(w) {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("weights.{r}"), format!("must be in [0, 1], got {v}")));
            }
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > Self::WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid("weights", format!("must sum to 1, got {sum}")));
        }
        Ok(UtilizationWeights(w))
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for UtilizationWeights {
    fn default() -> Self {
        UtilizationWeights([0.25; 4])
    }
}

impl TryFrom<RawWeights> for UtilizationWeights {
    type Error = Error;

    fn try_from(w: RawWeights) -> Result<Self> {
        UtilizationWeights::new(w.cpu, w.mem, w.disk, w.bw)
    }
}

impl From<UtilizationWeights> for RawWeights {
    fn from(w: UtilizationWeights) -> RawWeights {
        RawWeights { cpu: w.0[0], mem: w.0[1], disk: w.0[2], bw: w.0[3] }
    }
}

/// Weighted linear combination of the four usage fractions.
pub fn unified_utilization(rv: &ResourceVector, w: &UtilizationWeights) -> f64 {
    let u = w.0[0] * rv.0[0] + w.0[1] * rv.0[1] + w.0[2] * rv.0[2] + w.0[3] * rv.0[3];
    u.clamp(0.0, 1.0)
}
