//! Result records and the merged report table.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const VERSION_STAMP: &str = concat!("nfqs ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub n: usize,
    pub l: usize,
    pub v: f64,
    pub method: String,
    pub energy_mean: f64,
    pub energy_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_true: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent_error: Option<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    pub version: String,
    /// Solver or training convergence, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub config: ExperimentConfig,
}

impl ResultRecord {
    /// Attaches a reference energy and the matching percentage error.
    pub fn with_reference(mut self, e_true: Option<f64>) -> anyhow::Result<Self> {
        self.percent_error = match e_true {
            Some(e) => Some(nfqs::ed::percentage_error(self.energy_mean, e)?),
            None => None,
        };
        self.e_true = e_true;
        Ok(self)
    }

    pub fn check(&self) -> anyhow::Result<()> {
        if self.e_true.is_some() != self.percent_error.is_some() {
            bail!("percent_error must be present exactly when e_true is");
        }
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("result_{}_n{}_l{}_v{}_seed{}.json", self.method, self.n, self.l, self.v, self.seed)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(self.file_name());
        fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)?;
        let rec: Self = serde_json::from_str(&text)?;
        rec.check()?;
        Ok(rec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub record: ResultRecord,
    pub source: PathBuf,
    pub warnings: Vec<String>,
}

/// Result files inside `dir`: `result_*.json`, sorted by name.
fn result_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|f| f.to_str()).unwrap_or("");
        if path.is_file() && name.starts_with("result_") && name.ends_with(".json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads records from files and directories, in the given order.
/// Every unreadable file is named in the error.
pub fn collect(inputs: &[PathBuf]) -> anyhow::Result<Vec<ReportRow>> {
    if inputs.is_empty() {
        bail!("no result files given");
    }
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let found = result_files(p)?;
            if found.is_empty() {
                bail!("no result files (result_*.json) in {}", p.display());
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for f in files {
        match ResultRecord::read(&f) {
            Ok(record) => rows.push(ReportRow { record, source: f, warnings: Vec::new() }),
            Err(e) => bad.push(format!("{}: {e:#}", f.display())),
        }
    }
    if !bad.is_empty() {
        return Err(anyhow!("malformed result files:\n  {}", bad.join("\n  ")));
    }
    Ok(rows)
}

/// Stable sort by (n, l, v) and duplicate-seed warnings.
pub fn merge(mut rows: Vec<ReportRow>) -> Vec<ReportRow> {
    rows.sort_by(|a, b| {
        let (x, y) = (&a.record, &b.record);
        x.n.cmp(&y.n).then(x.l.cmp(&y.l)).then(x.v.total_cmp(&y.v)).then(Ordering::Equal)
    });
    let mut seen: HashMap<(usize, usize, u64, String, u64), Vec<usize>> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        let rec = &r.record;
        seen.entry((rec.n, rec.l, rec.v.to_bits(), rec.method.clone(), rec.seed)).or_default().push(i);
    }
    let mut groups: Vec<_> = seen.into_values().filter(|g| g.len() > 1).collect();
    groups.sort();
    for g in groups {
        for &i in &g {
            let others: Vec<String> = g.iter().filter(|&&j| j != i).map(|&j| rows[j].source.display().to_string()).collect();
            let msg = format!("duplicate seed {} (also in {})", rows[i].record.seed, others.join(", "));
            rows[i].warnings.push(msg);
        }
    }
    rows
}

pub const REPORT_COLUMNS: [&str; 14] = [
    "n",
    "l",
    "v",
    "method",
    "energy_mean",
    "energy_std",
    "e_true",
    "percent_error",
    "wall_time_s",
    "seed",
    "version",
    "converged",
    "source",
    "warnings",
];

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn write_report(rows: &[ReportRow], w: impl Write) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_COLUMNS)?;
    for r in rows {
        let rec = &r.record;
        out.write_record([
            rec.n.to_string(),
            rec.l.to_string(),
            rec.v.to_string(),
            rec.method.clone(),
            rec.energy_mean.to_string(),
            rec.energy_std.to_string(),
            opt(&rec.e_true),
            opt(&rec.percent_error),
            rec.wall_time_s.to_string(),
            rec.seed.to_string(),
            rec.version.clone(),
            opt(&rec.converged),
            r.source.display().to_string(),
            r.warnings.join("; "),
        ])?;
    }
    out.flush()?;
    Ok(())
}
