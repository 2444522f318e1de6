//! Experiment files: one TOML document describing a run, a sweep or a
//! policy comparison, plus dotted-path overrides.
//!
//! ```toml
//! [simulation]                 # SimulationConfig
//! duration_ticks = 1440
//!
//! [policy]                     # PolicySpec, one flat table
//! kind = "similarity"
//! u_up = 0.75
//!
//! [workload]                   # WorkloadSpec; or `[trace] path = "day.csv"`
//! profile = "spiky"
//!
//! [sweep]
//! parameter = "buffer"
//! range = [0.05, 0.5, 0.05]    # lo, hi, step; or `values = [...]`
//!
//! [compare]
//! policies = ["paper-best", "single-threshold"]
//!
//! [output]
//! dir = "out/buffer"
//! ```
//!
//! Every key is optional. An override such as `policy.u_up=0.8` replaces one
//! key of the parsed document before it is checked; the value is read as a
//! TOML value, falling back to a plain string. `workload.duration_ticks`
//! defaults to `simulation.duration_ticks`.
//!
//! Every command writes `effective.toml` next to its CSVs: the document after
//! overrides, with all defaults filled in, which reproduces the run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{run, SimulationConfig, SimulationReport};
use crate::error::{Error, Result};
use crate::metrics::{
    compare_policies, run_sweep, write_comparison_csv, write_plot_data, write_run_csv, write_sweep_csv, Comparison, SweepParameter, SweepResult, SweepValue,
};
use crate::policy::{PolicyConfig, PolicyKind, PolicySpec, SimilarityMethod};
use crate::workload::{generate_workload, load_trace_file, Workload, WorkloadSpec};

pub const EFFECTIVE_CONFIG: &str = "effective.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDirective {
    pub parameter: SweepParameter,
    /// Explicit grid: numbers, method names or policy names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<toml::Value>>,
    /// `[lo, hi, step]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 3]>,
}

impl SweepDirective {
    /// The grid to sweep; the parameter's default grid when neither `values` nor `range` is set.
    pub fn grid(&self) -> Result<Vec<SweepValue>> {
        match (&self.values, self.range) {
            (Some(_), Some(_)) => Err(Error::invalid("sweep", "set either `values` or `range`, not both")),
            (Some(vals), None) => vals
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => self.parameter.parse_value(s),
                    toml::Value::Float(f) => self.parameter.parse_value(&f.to_string()),
                    toml::Value::Integer(i) => self.parameter.parse_value(&i.to_string()),
                    other => Err(Error::invalid("sweep.values", format!("unsupported value `{other}`"))),
                })
                .collect(),
            (None, Some([lo, hi, step])) => {
                if !(lo.is_finite() && hi.is_finite() && step.is_finite() && step > 0.0 && lo <= hi) {
                    return Err(Error::invalid("sweep.range", format!("need lo <= hi and step > 0, got [{lo}, {hi}, {step}]")));
                }
                if !self.parameter.is_numeric() {
                    return Err(Error::invalid("sweep.range", format!("`{}` is not numeric; use `values`", self.parameter)));
                }
                Ok(crate::metrics::grid(lo, hi, step).into_iter().map(SweepValue::Number).collect())
            }
            (None, None) => Ok(self.parameter.default_values()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareDirective {
    /// Preset names (`paper-best`, `single-threshold`), `config` for the
    /// file's `[policy]`, or a policy kind, which takes the file's `[policy]`
    /// parameters. Savings are relative to the first entry.
    pub policies: Vec<String>,
}

impl Default for CompareDirective {
    fn default() -> Self {
        CompareDirective { policies: vec!["single-threshold".into(), "paper-best".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub simulation: SimulationConfig,
    pub policy: PolicySpec,
    pub workload: WorkloadSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepDirective>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareDirective>,
    pub output: OutputSection,
}

/// The best configuration reported for the similarity policy.
pub fn paper_best() -> PolicySpec {
    PolicySpec {
        kind: PolicyKind::Similarity,
        config: PolicyConfig {
            u_up: 0.75,
            u_down: 0.15,
            buffer: 0.15,
            similarity_method: SimilarityMethod::Method2,
            similarity_threshold: 0.6,
            ..PolicyConfig::default()
        },
        ..PolicySpec::default()
    }
}

pub fn single_threshold() -> PolicySpec {
    let mut p = PolicySpec { kind: PolicyKind::SingleThreshold, ..PolicySpec::default() };
    p.baseline.cpu_threshold = 0.75;
    p
}

/// Resolves a comparison entry against the file's own policy `base`.
pub fn resolve_policy(name: &str, base: &PolicySpec) -> Result<PolicySpec> {
    match name.trim() {
        "paper-best" => Ok(paper_best()),
        "single-threshold" => Ok(single_threshold()),
        "config" => Ok(base.clone()),
        other => PolicyKind::parse(other)
            .map(|kind| PolicySpec { kind, ..base.clone() })
            .ok_or_else(|| Error::invalid("compare.policies", format!("unknown policy or preset `{other}`"))),
    }
}

fn config_err(what: impl std::fmt::Display) -> Error {
    Error::Config(what.to_string())
}

/// Parses the value half of an override: TOML if it parses, else a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` assignment to a parsed document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| config_err(format!("override `{assignment}`: expected KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("override `{assignment}`: empty key segment")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one segment");
    let mut table = doc;
    for (i, part) in parents.iter().enumerate() {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| config_err(format!("override `{assignment}`: `{}` is not a table", parts[..=i].join("."))))?;
    }
    table.insert(last.to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentFile {
    /// Reads `path`, applies `overrides` and validates. Relative trace paths
    /// resolve against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(config_err)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if doc.contains_key("trace") && doc.contains_key("workload") {
            return Err(config_err("set either [workload] or [trace], not both"));
        }
        let sim_ticks = doc.get("simulation").and_then(|s| s.get("duration_ticks")).cloned();
        if let (Some(ticks), false) = (sim_ticks, doc.contains_key("trace")) {
            if let toml::Value::Table(w) = doc.entry("workload").or_insert_with(|| toml::Value::Table(toml::Table::new())) {
                w.entry("duration_ticks").or_insert(ticks);
            }
        }

        let mut exp: ExperimentFile =
            serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| config_err(format!("{}: {}", e.path(), e.inner())))?;
        if let Some(t) = &mut exp.trace {
            if t.path.is_relative() {
                t.path = base_dir.join(&t.path);
            }
        }
        exp.simulation.policy = exp.policy.clone();
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        match &self.trace {
            Some(t) if !t.path.is_file() => return Err(Error::invalid("trace.path", format!("{} does not exist", t.path.display()))),
            Some(_) => {}
            None => {
                self.workload.validate()?;
                if self.workload.duration_ticks != self.simulation.duration_ticks {
                    return Err(Error::invalid(
                        "workload.duration_ticks",
                        format!("{} differs from simulation.duration_ticks {}", self.workload.duration_ticks, self.simulation.duration_ticks),
                    ));
                }
            }
        }
        if let Some(s) = &self.sweep {
            s.grid()?;
        }
        if let Some(c) = &self.compare {
            for name in &c.policies {
                resolve_policy(name, &self.policy)?.validate()?;
            }
        }
        Ok(())
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig { policy: self.policy.clone(), ..self.simulation.clone() }
    }

    pub fn workload(&self) -> Result<Workload> {
        match &self.trace {
            Some(t) => load_trace_file(&t.path),
            None => Ok(generate_workload(&self.workload)),
        }
    }

    /// Named policies for a comparison; the default pair when `[compare]` is absent.
    pub fn comparison_policies(&self) -> Result<Vec<(String, PolicySpec)>> {
        let directive = self.compare.clone().unwrap_or_default();
        directive.policies.iter().map(|n| resolve_policy(n, &self.policy).map(|p| (n.clone(), p))).collect()
    }

    /// The fully resolved document. A trace-driven experiment omits `[workload]`.
    pub fn to_toml(&self) -> Result<String> {
        let mut doc = toml::Table::try_from(self).map_err(config_err)?;
        if self.trace.is_some() {
            doc.remove("workload");
        }
        toml::to_string(&doc).map_err(config_err)
    }

    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// One simulation; writes `run.csv` and `effective.toml` into `dir`.
pub fn execute_run(exp: &ExperimentFile, dir: &Path) -> Result<SimulationReport> {
    prepare(dir)?;
    let report = run(&exp.simulation_config(), &exp.workload()?)?;
    write_run_csv(&report, &dir.join("run.csv"))?;
    exp.write_effective(dir)?;
    Ok(report)
}

/// The `[sweep]` directive; writes `sweep_<parameter>.csv`, plot data and `effective.toml`.
pub fn execute_sweep(exp: &ExperimentFile, dir: &Path, jobs: usize) -> Result<SweepResult> {
    let directive = exp.sweep.as_ref().ok_or_else(|| Error::invalid("sweep", "missing [sweep] section"))?;
    prepare(dir)?;
    let result = run_sweep(&exp.simulation_config(), &exp.workload()?, directive.parameter, &directive.grid()?, jobs)?;
    let name = directive.parameter.name();
    write_sweep_csv(&result, &dir.join(format!("sweep_{name}.csv")))?;
    write_plot_data(&result, dir, name)?;
    exp.write_effective(dir)?;
    Ok(result)
}

/// The `[compare]` directive; writes `compare.csv` and `effective.toml`.
pub fn execute_compare(exp: &ExperimentFile, dir: &Path, jobs: usize) -> Result<Comparison> {
    prepare(dir)?;
    let cmp = compare_policies(&exp.simulation_config(), &exp.workload()?, &exp.comparison_policies()?, jobs)?;
    write_comparison_csv(&cmp, &dir.join("compare.csv"))?;
    exp.write_effective(dir)?;
    Ok(cmp)
}
