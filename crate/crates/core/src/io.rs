//! CSV ingestion and JSON report output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::aditt::SampleBatch;
use crate::error::{config, Error, Result};
use crate::permutation::{DetectorConfig, Method};

fn input_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Input { location: location.into(), message: message.into() }
}

/// Columns of one CSV file, selected by header name.
fn read_columns(path: &Path, stat_cols: &[String], ctx_cols: &[String]) -> Result<(Mat<f64>, Mat<f64>)> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(&file, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| input_err(&file, e.to_string()))?.clone();
    let locate = |name: &String| {
        headers
            .iter()
            .position(|h| h == name.trim())
            .ok_or_else(|| input_err(format!("{file}, header"), format!("missing column '{name}'")))
    };
    let stat_idx: Vec<usize> = stat_cols.iter().map(locate).collect::<Result<_>>()?;
    let ctx_idx: Vec<usize> = ctx_cols.iter().map(locate).collect::<Result<_>>()?;

    let (mut stats, mut ctx) = (Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = r + 2;
        let rec = rec.map_err(|e| input_err(format!("{file}, line {line}"), e.to_string()))?;
        let parse = |j: usize, out: &mut Vec<f64>| -> Result<()> {
            let cell = rec.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                input_err(format!("{file}, line {line}, column '{}'", &headers[j]), format!("'{cell}' is not a number"))
            })?;
            if !v.is_finite() {
                return Err(input_err(format!("{file}, line {line}, column '{}'", &headers[j]), "value is not finite"));
            }
            out.push(v);
            Ok(())
        };
        stat_idx.iter().try_for_each(|&j| parse(j, &mut stats))?;
        ctx_idx.iter().try_for_each(|&j| parse(j, &mut ctx))?;
    }
    let n = stats.len() / stat_idx.len().max(1);
    if n == 0 {
        return Err(input_err(&file, "no data rows"));
    }
    let (d, q) = (stat_idx.len(), ctx_idx.len());
    Ok((Mat::from_fn(n, d, |i, j| stats[i * d + j]), Mat::from_fn(n, q, |i, j| ctx[i * q + j])))
}

/// Load reference and deployment CSV files (one header row each).
///
/// With `context_required`, an empty `ctx_cols` is an input error.
pub fn load_batch(
    ref_path: &Path,
    deploy_path: &Path,
    stat_cols: &[String],
    ctx_cols: &[String],
    context_required: bool,
) -> Result<SampleBatch> {
    if stat_cols.is_empty() {
        return Err(input_err("arguments", "at least one statistic column is required"));
    }
    if context_required && ctx_cols.is_empty() {
        return Err(input_err("arguments", "this method needs at least one context column"));
    }
    let (s0, c0) = read_columns(ref_path, stat_cols, ctx_cols)?;
    let (s1, c1) = read_columns(deploy_path, stat_cols, ctx_cols)?;
    SampleBatch::from_domains(s0.as_ref(), c0.as_ref(), s1.as_ref(), c1.as_ref())
}

/// Write `value` as pretty JSON with a trailing newline. The file is written
/// to a temporary sibling and renamed, so a failed run leaves no partial file.
pub fn write_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| config(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Subcommand of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Detect,
    Calibrate,
    Power,
}

/// Full effective settings of a command-line run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub detector: DetectorConfig,
    pub ref_path: Option<PathBuf>,
    pub deploy_path: Option<PathBuf>,
    pub stat_cols: Vec<String>,
    pub ctx_cols: Vec<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if self.command == Command::Detect {
            if self.ref_path.is_none() || self.deploy_path.is_none() {
                return Err(config("detect needs --ref and --deploy"));
            }
            if self.stat_cols.is_empty() {
                return Err(config("detect needs --stat-cols"));
            }
            if self.detector.method != Method::Mmd && self.ctx_cols.is_empty() {
                return Err(config(format!("method {} needs --ctx-cols", self.detector.method.name())));
            }
        }
        Ok(())
    }
}
