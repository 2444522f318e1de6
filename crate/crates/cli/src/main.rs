//! `vmsched`: run simulations, parameter sweeps and policy comparisons from
//! an experiment file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmsched::experiment::{execute_compare, execute_run, execute_sweep, CompareDirective, SweepDirective};
use vmsched::metrics::SweepParameter;
use vmsched::{save_trace_file, Error, ExperimentFile};

#[derive(Parser)]
#[command(name = "vmsched", version, about = "Energy and SLA aware VM scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its per-tick series.
    Run(Common),
    /// Sweep one parameter and write a CSV plus plot data.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to sweep; overrides `sweep.parameter`.
        #[arg(long)]
        parameter: Option<SweepParameter>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', conflicts_with = "range")]
        values: Option<Vec<String>>,
        /// Grid as `lo:hi:step`.
        #[arg(long)]
        range: Option<String>,
    },
    /// Run several policies on the same workload and print savings.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated policies or presets; the first is the baseline.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
    },
    /// Write the configured synthetic workload as trace files.
    GenWorkload(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override one key, e.g. `policy.u_up=0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output.dir`. For gen-workload a path ending in `.csv` names the trace file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and comparisons; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Workload seed; overrides `workload.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentFile, Error> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("workload.seed={seed}"));
        }
        let mut exp = ExperimentFile::load(&self.config, &overrides)?;
        if let Some(out) = &self.out {
            exp.output.dir = out.clone();
        }
        Ok(exp)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}

fn parse_range(s: &str) -> Result<[f64; 3], Error> {
    let parts: Vec<f64> =
        s.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| Error::invalid("--range", format!("`{s}`: {e}")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| Error::invalid("--range", format!("`{s}`: expected lo:hi:step")))
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run(common) => {
            let exp = common.load()?;
            let rep = execute_run(&exp, &exp.output.dir)?;
            println!("policy            {}", rep.policy);
            println!("energy_kwh        {:.4}", rep.total_energy_kwh);
            println!("sla_violations    {}", rep.sla_violation_count);
            println!("migrations        {}", rep.migration_count);
            println!("peak_running      {}", rep.peak_running_machines);
            println!("mean_running      {:.2}", rep.mean_running_machines);
            println!("rejected          {}", rep.rejected_requests);
            println!("output            {}", exp.output.dir.display());
            Ok(())
        }
        Command::Sweep { common, parameter, values, range } => {
            let mut exp = common.load()?;
            if parameter.is_some() || values.is_some() || range.is_some() {
                let mut d = match exp.sweep.take() {
                    Some(d) => d,
                    None => SweepDirective {
                        parameter: parameter.ok_or_else(|| Error::invalid("--parameter", "required when the file has no [sweep] section"))?,
                        values: None,
                        range: None,
                    },
                };
                if let Some(p) = parameter {
                    if p != d.parameter {
                        d.values = None;
                        d.range = None;
                    }
                    d.parameter = p;
                }
                if let Some(v) = values {
                    d.values = Some(v.into_iter().map(toml::Value::String).collect());
                    d.range = None;
                }
                if let Some(r) = range {
                    d.range = Some(parse_range(&r)?);
                    d.values = None;
                }
                exp.sweep = Some(d);
                exp.validate()?;
            }
            let result = execute_sweep(&exp, &exp.output.dir, common.jobs)?;
            println!("{:>12} {:>14} {:>10} {:>12} {:>10}", result.parameter.name(), "energy_kwh", "violations", "mean_running", "migrations");
            for r in &result.rows {
                println!("{:>12} {:>14.4} {:>10} {:>12.2} {:>10}", r.label, r.total_energy_kwh, r.sla_violations, r.mean_running_machines, r.migrations);
            }
            for (label, reason) in &result.skipped {
                eprintln!("skipped {label}: {reason}");
            }
            println!("output {}", exp.output.dir.display());
            Ok(())
        }
        Command::Compare { common, policies } => {
            let mut exp = common.load()?;
            if let Some(p) = policies {
                exp.compare = Some(CompareDirective { policies: p });
                exp.validate()?;
            }
            let cmp = execute_compare(&exp, &exp.output.dir, common.jobs)?;
            let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.1}%"));
            println!("{:<20} {:>12} {:>10} {:>10} {:>14} {:>14}", "policy", "energy_kwh", "violations", "migrations", "energy_saved", "fewer_viol");
            for r in &cmp.rows {
                println!(
                    "{:<20} {:>12.4} {:>10} {:>10} {:>14} {:>14}",
                    r.policy,
                    r.total_energy_kwh,
                    r.sla_violations,
                    r.migrations,
                    pct(r.energy_savings_pct),
                    pct(r.violation_reduction_pct)
                );
            }
            println!("output {}", exp.output.dir.display());
            Ok(())
        }
        Command::GenWorkload(common) => {
            let exp = common.load()?;
            let target = match &common.out {
                Some(p) if p.extension().is_some_and(|e| e == "csv") => p.clone(),
                _ => exp.output.dir.join("trace.csv"),
            };
            let dir = target.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let workload = exp.workload()?;
            save_trace_file(&workload, &target)?;
            exp.write_effective(dir)?;
            println!("wrote {} VMs to {}", workload.len(), target.display());
            Ok(())
        }
    }
}
