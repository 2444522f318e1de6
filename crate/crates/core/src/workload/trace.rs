//! Trace files.
//!
//! A workload is stored as two comma-separated tables. The trace file holds
//! one demand sample per row:
//!
//! ```text
//! vm_id,tick,cpu,mem,disk,bw
//! ```
//!
//! The sidecar `<stem>.meta.csv` holds one row per VM, with an empty
//! `departure` for open-ended VMs:
//!
//! ```text
//! vm_id,arrival,departure,nominal_cpu,nominal_mem,nominal_disk,nominal_bw
//! ```
//!
//! Numbers use `.` as the decimal separator and are written in shortest
//! round-trip form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{DemandSample, VmRequest, Workload};
use crate::cluster::{Tick, VmId};
use crate::error::{Error, Result};
use crate::resources::Resources;

pub const TRACE_HEADER: [&str; 6] = ["vm_id", "tick", "cpu", "mem", "disk", "bw"];
pub const META_HEADER: [&str; 7] = ["vm_id", "arrival", "departure", "nominal_cpu", "nominal_mem", "nominal_disk", "nominal_bw"];

/// `traces/day.csv` -> `traces/day.meta.csv`.
pub fn meta_path_for(trace: &Path) -> PathBuf {
    let stem = trace.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trace.with_file_name(format!("{stem}.meta.csv"))
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.to_path_buf(), source }
}

pub fn save_trace_file(workload: &Workload, path: &Path) -> Result<()> {
    let meta = meta_path_for(path);
    let mut mw = csv::Writer::from_path(&meta).map_err(|e| csv_err(&meta, e))?;
    mw.write_record(META_HEADER).map_err(|e| csv_err(&meta, e))?;
    for r in &workload.requests {
        let n = r.nominal;
        let dep = r.departure_tick.map(|d| d.to_string()).unwrap_or_default();
        let row = [r.vm_id.0.to_string(), r.arrival_tick.to_string(), dep, n.cpu.to_string(), n.mem.to_string(), n.disk.to_string(), n.bw.to_string()];
        mw.write_record(&row).map_err(|e| csv_err(&meta, e))?;
    }
    mw.flush().map_err(|e| Error::io(&meta, e))?;

    let mut tw = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    tw.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &workload.requests {
        for s in &r.trace {
            let d = s.demand;
            let row = [r.vm_id.0.to_string(), s.tick.to_string(), d.cpu.to_string(), d.mem.to_string(), d.disk.to_string(), d.bw.to_string()];
            tw.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    tw.flush().map_err(|e| Error::io(path, e))
}

struct Rows<'a> {
    path: &'a Path,
    reader: csv::Reader<std::fs::File>,
}

impl<'a> Rows<'a> {
    fn open(path: &'a Path, header: &[&str]) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let found = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        if found.iter().ne(header.iter().copied()) {
            return Err(Error::Trace {
                path: path.to_path_buf(),
                line: 1,
                field: "header".into(),
                reason: format!("expected `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
            });
        }
        Ok(Rows { path, reader })
    }

    fn for_each(mut self, header: &[&str], mut f: impl FnMut(Row<'_>) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    f(Row { path: self.path, line, record: &record, header })?;
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Err(Error::Trace { path: self.path.to_path_buf(), line, field: "row".into(), reason: e.to_string() });
                }
            }
        }
    }
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
    header: &'a [&'a str],
}

impl Row<'_> {
    fn error(&self, col: usize, reason: impl Into<String>) -> Error {
        Error::Trace { path: self.path.to_path_buf(), line: self.line, field: self.header[col].into(), reason: reason.into() }
    }

    fn raw(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(col);
        raw.parse().map_err(|e| self.error(col, format!("cannot parse `{raw}`: {e}")))
    }

    fn amount(&self, col: usize) -> Result<f64> {
        let v: f64 = self.parse(col)?;
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(self.error(col, format!("must be finite and >= 0, got {v}")))
        }
    }

    fn resources(&self, first: usize) -> Result<Resources> {
        Ok(Resources::new(self.amount(first)?, self.amount(first + 1)?, self.amount(first + 2)?, self.amount(first + 3)?))
    }
}

/// Reads a trace file and its `.meta.csv` sidecar.
pub fn load_trace_file(path: &Path) -> Result<Workload> {
    let meta_path = meta_path_for(path);
    let mut requests: BTreeMap<u32, VmRequest> = BTreeMap::new();
    let mut order = Vec::new();

    Rows::open(&meta_path, &META_HEADER)?.for_each(&META_HEADER, |row| {
        let id: u32 = row.parse(0)?;
        let arrival: Tick = row.parse(1)?;
        let departure: Option<Tick> = match row.raw(2) {
            "" => None,
            _ => Some(row.parse(2)?),
        };
        if departure.is_some_and(|d| d <= arrival) {
            return Err(row.error(2, format!("departure must be after arrival {arrival}")));
        }
        let nominal = row.resources(3)?;
        let req = VmRequest { vm_id: VmId(id), arrival_tick: arrival, departure_tick: departure, nominal, trace: Vec::new() };
        if requests.insert(id, req).is_some() {
            return Err(row.error(0, format!("duplicate vm id {id}")));
        }
        order.push(id);
        Ok(())
    })?;

    Rows::open(path, &TRACE_HEADER)?.for_each(&TRACE_HEADER, |row| {
        let id: u32 = row.parse(0)?;
        let tick: Tick = row.parse(1)?;
        let demand = row.resources(2)?;
        let req = requests.get_mut(&id).ok_or_else(|| row.error(0, format!("vm {id} is not listed in {}", meta_path.display())))?;
        if let Some(last) = req.trace.last() {
            if tick <= last.tick {
                return Err(row.error(1, format!("tick {tick} does not follow {} for vm {id}", last.tick)));
            }
        }
        req.trace.push(DemandSample { tick, demand });
        Ok(())
    })?;

    let requests = order.into_iter().map(|id| requests.remove(&id).expect("collected above")).collect();
    Workload::new(requests)
}
