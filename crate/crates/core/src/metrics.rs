//! Parameter sweeps, policy comparisons and their CSV / plot-data output.
//!
//! Sweep CSV (`# vmsched sweep v1`):
//!
//! ```text
//! parameter,value,label,total_energy_kwh,sla_violations,mean_running_machines,migrations
//! ```
//!
//! Comparison CSV (`# vmsched compare v1`):
//!
//! ```text
//! policy,total_energy_kwh,sla_violations,migrations,energy_savings_pct,violation_reduction_pct
//! ```
//!
//! Savings are relative to the first row; they are empty when the baseline is zero.
//!
//! Run CSV (`# vmsched run v1`):
//!
//! ```text
//! tick,running_machines,power_watts,violations
//! ```
//!
//! Plot data is whitespace-separated `x y` pairs, one file per series, with a
//! `#` header line.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, SimulationConfig, SimulationReport};
use crate::error::{Error, Result};
use crate::policy::{PolicyKind, PolicySpec, SimilarityMethod};
use crate::workload::Workload;

pub const SWEEP_VERSION: &str = "# vmsched sweep v1";
pub const COMPARE_VERSION: &str = "# vmsched compare v1";
pub const RUN_VERSION: &str = "# vmsched run v1";
pub const SWEEP_HEADER: [&str; 7] = ["parameter", "value", "label", "total_energy_kwh", "sla_violations", "mean_running_machines", "migrations"];
pub const COMPARE_HEADER: [&str; 6] = ["policy", "total_energy_kwh", "sla_violations", "migrations", "energy_savings_pct", "violation_reduction_pct"];
pub const RUN_HEADER: [&str; 4] = ["tick", "running_machines", "power_watts", "violations"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    UUp,
    UDown,
    Buffer,
    SimilarityThreshold,
    SimilarityMethod,
    Policy,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 6] = [
        SweepParameter::UUp,
        SweepParameter::UDown,
        SweepParameter::Buffer,
        SweepParameter::SimilarityThreshold,
        SweepParameter::SimilarityMethod,
        SweepParameter::Policy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::UUp => "u_up",
            SweepParameter::UDown => "u_down",
            SweepParameter::Buffer => "buffer",
            SweepParameter::SimilarityThreshold => "similarity_threshold",
            SweepParameter::SimilarityMethod => "similarity_method",
            SweepParameter::Policy => "policy",
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, SweepParameter::SimilarityMethod | SweepParameter::Policy)
    }

    /// Parses one grid value: a number, a method name, or a policy name.
    pub fn parse_value(self, s: &str) -> Result<SweepValue> {
        let s = s.trim();
        let bad = |what: &str| Error::invalid(self.name(), format!("`{s}` is not a valid {what}"));
        match self {
            SweepParameter::SimilarityMethod => match s.replace('-', "_").as_str() {
                "method1" | "1" => Ok(SweepValue::Method(SimilarityMethod::Method1)),
                "method2" | "2" => Ok(SweepValue::Method(SimilarityMethod::Method2)),
                _ => Err(bad("similarity method")),
            },
            SweepParameter::Policy => PolicyKind::parse(s).map(SweepValue::Policy).ok_or_else(|| bad("policy")),
            _ => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(SweepValue::Number).ok_or_else(|| bad("number")),
        }
    }

    /// Grid used when none is given: step 0.05 over the usual range.
    pub fn default_values(self) -> Vec<SweepValue> {
        let nums = |lo, hi| grid(lo, hi, 0.05).into_iter().map(SweepValue::Number).collect();
        match self {
            SweepParameter::UUp => nums(0.25, 1.0),
            SweepParameter::UDown => nums(0.0, 0.4),
            SweepParameter::Buffer => nums(0.05, 0.5),
            SweepParameter::SimilarityThreshold => nums(0.0, 1.0),
            SweepParameter::SimilarityMethod => vec![SweepValue::Method(SimilarityMethod::Method1), SweepValue::Method(SimilarityMethod::Method2)],
            SweepParameter::Policy => PolicyKind::ALL.into_iter().map(SweepValue::Policy).collect(),
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        SweepParameter::ALL.into_iter().find(|p| p.name() == norm).ok_or_else(|| Error::invalid("sweep.parameter", format!("unknown parameter `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Number(f64),
    Method(SimilarityMethod),
    Policy(PolicyKind),
}

impl SweepValue {
    /// Numeric position used for ordering and the `value` column.
    pub fn ordinal(self) -> f64 {
        match self {
            SweepValue::Number(v) => v,
            SweepValue::Method(SimilarityMethod::Method1) => 1.0,
            SweepValue::Method(SimilarityMethod::Method2) => 2.0,
            SweepValue::Policy(k) => PolicyKind::ALL.iter().position(|p| *p == k).expect("listed") as f64,
        }
    }

    pub fn label(self) -> String {
        match self {
            SweepValue::Number(v) => v.to_string(),
            SweepValue::Method(SimilarityMethod::Method1) => "method1".into(),
            SweepValue::Method(SimilarityMethod::Method2) => "method2".into(),
            SweepValue::Policy(k) => k.name().into(),
        }
    }
}

/// `lo, lo + step, ..., hi` with values rounded to 10 decimals.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if step.is_nan() || step <= 0.0 || hi < lo {
        return vec![];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e10).round() / 1e10).collect()
}

/// Copy of `base` with one parameter changed, validated.
pub fn apply_parameter(base: &SimulationConfig, param: SweepParameter, value: SweepValue) -> Result<SimulationConfig> {
    let mut cfg = base.clone();
    let pc = &mut cfg.policy.config;
    match (param, value) {
        (SweepParameter::UUp, SweepValue::Number(v)) => pc.u_up = v,
        (SweepParameter::UDown, SweepValue::Number(v)) => pc.u_down = v,
        (SweepParameter::Buffer, SweepValue::Number(v)) => pc.buffer = v,
        (SweepParameter::SimilarityThreshold, SweepValue::Number(v)) => pc.similarity_threshold = v,
        (SweepParameter::SimilarityMethod, SweepValue::Method(m)) => pc.similarity_method = m,
        (SweepParameter::Policy, SweepValue::Policy(k)) => cfg.policy.kind = k,
        _ => return Err(Error::invalid(param.name(), format!("value `{}` has the wrong type", value.label()))),
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub label: String,
    pub total_energy_kwh: f64,
    pub sla_violations: u64,
    pub mean_running_machines: f64,
    pub migrations: u64,
}

impl SweepRow {
    fn from_report(value: SweepValue, rep: &SimulationReport) -> Self {
        SweepRow {
            value: value.ordinal(),
            label: value.label(),
            total_energy_kwh: rep.total_energy_kwh,
            sla_violations: rep.sla_violation_count,
            mean_running_machines: rep.mean_running_machines,
            migrations: rep.migration_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    /// Grid points that failed validation, with the reason.
    #[serde(default)]
    pub skipped: Vec<(String, String)>,
}

impl SweepResult {
    pub fn row(&self, value: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| (r.value - value).abs() < 1e-9)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// One simulation per grid value on the same workload. `jobs = 0` uses all cores.
pub fn run_sweep(base: &SimulationConfig, workload: &Workload, param: SweepParameter, values: &[SweepValue], jobs: usize) -> Result<SweepResult> {
    workload.validate()?;
    let mut values = values.to_vec();
    values.sort_by(|a, b| a.ordinal().total_cmp(&b.ordinal()));
    values.dedup_by(|a, b| a.ordinal() == b.ordinal());

    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for v in values {
        match apply_parameter(base, param, v) {
            Ok(cfg) => points.push((v, cfg)),
            Err(e) => {
                log::warn!("skipping {param}={}: {e}", v.label());
                skipped.push((v.label(), e.to_string()));
            }
        }
    }

    let reports: Vec<Result<SweepRow>> =
        pool(jobs)?.install(|| points.par_iter().map(|(v, cfg)| run(cfg, workload).map(|rep| SweepRow::from_report(*v, &rep))).collect());
    let rows = reports.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { parameter: param, rows, skipped })
}

/// `(baseline - ours) / baseline * 100`; `None` for a zero baseline.
pub fn savings_pct(baseline: f64, ours: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (baseline - ours) / baseline * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub total_energy_kwh: f64,
    pub sla_violations: u64,
    pub migrations: u64,
    pub energy_savings_pct: Option<f64>,
    pub violation_reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// One run per named policy; savings are relative to the first entry.
pub fn compare_policies(base: &SimulationConfig, workload: &Workload, policies: &[(String, PolicySpec)], jobs: usize) -> Result<Comparison> {
    let cfgs = policies
        .iter()
        .map(|(name, spec)| {
            let cfg = SimulationConfig { policy: spec.clone(), ..base.clone() };
            cfg.validate().map(|_| (name.clone(), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<Result<SimulationReport>> = pool(jobs)?.install(|| cfgs.par_iter().map(|(_, cfg)| run(cfg, workload)).collect());
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let Some(first) = reports.first() else { return Ok(Comparison { rows: vec![] }) };
    let (e0, v0) = (first.total_energy_kwh, first.sla_violation_count as f64);
    let rows = cfgs
        .iter()
        .zip(&reports)
        .map(|((name, _), rep)| ComparisonRow {
            policy: name.clone(),
            total_energy_kwh: rep.total_energy_kwh,
            sla_violations: rep.sla_violation_count,
            migrations: rep.migration_count,
            energy_savings_pct: savings_pct(e0, rep.total_energy_kwh),
            violation_reduction_pct: savings_pct(v0, rep.sla_violation_count as f64),
        })
        .collect();
    Ok(Comparison { rows })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path).map(std::io::BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_table(path: &Path, version: &str, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{version}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let name = result.parameter.name();
    let rows = result.rows.iter().map(|r| {
        vec![
            name.to_string(),
            r.value.to_string(),
            r.label.clone(),
            r.total_energy_kwh.to_string(),
            r.sla_violations.to_string(),
            r.mean_running_machines.to_string(),
            r.migrations.to_string(),
        ]
    });
    write_table(path, SWEEP_VERSION, &SWEEP_HEADER, rows)
}

fn read_table(path: &Path, version: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trace_err = |line: u64, field: &str, reason: String| Error::Trace { path: path.to_path_buf(), line, field: field.into(), reason };
    if text.lines().next() != Some(version) {
        return Err(trace_err(1, "version", format!("expected `{version}`")));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let found = r.headers().map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(trace_err(2, "header", format!("expected `{}`", header.join(","))));
    }
    r.records().map(|rec| rec.map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })).collect()
}

fn field<T: FromStr>(path: &Path, rec: &csv::StringRecord, header: &[&str], i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Trace {
        path: path.to_path_buf(),
        line: rec.position().map_or(0, |p| p.line()),
        field: header[i].into(),
        reason: format!("cannot parse `{raw}`"),
    })
}

pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let recs = read_table(path, SWEEP_VERSION, &SWEEP_HEADER)?;
    let mut parameter = None;
    let mut rows = Vec::with_capacity(recs.len());
    for rec in &recs {
        let p: SweepParameter = rec.get(0).unwrap_or("").parse()?;
        if parameter.is_some_and(|q| q != p) {
            return Err(Error::invalid("parameter", "mixed parameters in one sweep file"));
        }
        parameter = Some(p);
        rows.push(SweepRow {
            value: field(path, rec, &SWEEP_HEADER, 1)?,
            label: rec.get(2).unwrap_or("").to_string(),
            total_energy_kwh: field(path, rec, &SWEEP_HEADER, 3)?,
            sla_violations: field(path, rec, &SWEEP_HEADER, 4)?,
            mean_running_machines: field(path, rec, &SWEEP_HEADER, 5)?,
            migrations: field(path, rec, &SWEEP_HEADER, 6)?,
        });
    }
    let parameter = parameter.ok_or_else(|| Error::invalid("parameter", format!("{} has no rows to name the swept parameter", path.display())))?;
    Ok(SweepResult { parameter, rows, skipped: vec![] })
}

pub fn write_comparison_csv(cmp: &Comparison, path: &Path) -> Result<()> {
    let rows = cmp.rows.iter().map(|r| {
        vec![
            r.policy.clone(),
            r.total_energy_kwh.to_string(),
            r.sla_violations.to_string(),
            r.migrations.to_string(),
            opt(r.energy_savings_pct),
            opt(r.violation_reduction_pct),
        ]
    });
    write_table(path, COMPARE_VERSION, &COMPARE_HEADER, rows)
}

pub fn read_comparison_csv(path: &Path) -> Result<Comparison> {
    let recs = read_table(path, COMPARE_VERSION, &COMPARE_HEADER)?;
    let optf = |rec: &csv::StringRecord, i| -> Result<Option<f64>> {
        match rec.get(i).unwrap_or("") {
            "" => Ok(None),
            _ => field(path, rec, &COMPARE_HEADER, i).map(Some),
        }
    };
    let rows = recs
        .iter()
        .map(|rec| {
            Ok(ComparisonRow {
                policy: rec.get(0).unwrap_or("").to_string(),
                total_energy_kwh: field(path, rec, &COMPARE_HEADER, 1)?,
                sla_violations: field(path, rec, &COMPARE_HEADER, 2)?,
                migrations: field(path, rec, &COMPARE_HEADER, 3)?,
                energy_savings_pct: optf(rec, 4)?,
                violation_reduction_pct: optf(rec, 5)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { rows })
}

pub fn write_run_csv(report: &SimulationReport, path: &Path) -> Result<()> {
    let rows = report.ticks.iter().map(|t| vec![t.tick.to_string(), t.running_machines.to_string(), t.power_watts.to_string(), t.violations.to_string()]);
    write_table(path, RUN_VERSION, &RUN_HEADER, rows)
}

fn write_series(path: &Path, x: &str, y: &str, points: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "# {x} {y}").map_err(io)?;
    for (a, b) in points {
        writeln!(out, "{a} {b}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Writes `<prefix>_energy.dat`, `<prefix>_violations.dat`, `<prefix>_running.dat`
/// and `<prefix>_migrations.dat` into `dir`; returns the paths.
pub fn write_plot_data(result: &SweepResult, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let x = result.parameter.name();
    type Column = (&'static str, fn(&SweepRow) -> f64);
    let series: [Column; 4] = [
        ("energy", |r| r.total_energy_kwh),
        ("violations", |r| r.sla_violations as f64),
        ("running", |r| r.mean_running_machines),
        ("migrations", |r| r.migrations as f64),
    ];
    let mut paths = Vec::new();
    for (name, f) in series {
        let p = dir.join(format!("{prefix}_{name}.dat"));
        write_series(&p, x, name, result.rows.iter().map(|r| (r.value, f(r))))?;
        paths.push(p);
    }
    Ok(paths)
}
