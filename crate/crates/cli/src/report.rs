//! CSV and JSON outputs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! are locale independent and byte-identical across reruns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fedaq::allocation::{AllocationPolicy, RangeTrace};
use fedaq::engine::{RoundRecord, RunOutput};
use serde::Serialize;

use crate::CliError;

pub const METRICS_HEADER: [&str; 10] = [
    "m",
    "train_loss",
    "test_acc",
    "test_loss",
    "R_up_mean",
    "R_dn",
    "bits_up_mean",
    "bits_dn",
    "energy_up_cum",
    "energy_dn_cum",
];

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))
}

/// One row per round; energies are cumulative through that round.
pub fn write_metrics(path: &Path, out: &RunOutput) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let wrap = |e| CliError::csv(path, e);
    w.write_record(METRICS_HEADER).map_err(wrap)?;
    let (mut up, mut dn) = (0.0, 0.0);
    for r in &out.history {
        up += r.energy.uplink;
        dn += r.energy.downlink;
        w.write_record([
            r.round.to_string(),
            r.train_loss.to_string(),
            r.test_accuracy.to_string(),
            r.test_loss.to_string(),
            r.mean_uplink_range().to_string(),
            r.downlink_range.to_string(),
            r.mean_uplink_bits().to_string(),
            r.downlink_bits.to_string(),
            up.to_string(),
            dn.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_ledger(path: &Path, out: &RunOutput) -> Result<(), CliError> {
    let mut w = create(path)?;
    out.ledger
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `round,downlink,uplink_0,...,uplink_{n-1}`, raw observed ranges.
pub fn write_ranges(path: &Path, history: &[RoundRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let wrap = |e| CliError::csv(path, e);
    let n = history.first().map_or(0, |r| r.uplink_ranges.len());
    let mut header = vec!["round".to_string(), "downlink".to_string()];
    header.extend((0..n).map(|i| format!("uplink_{i}")));
    w.write_record(&header).map_err(wrap)?;
    for r in history {
        let mut row = vec![r.round.to_string(), r.downlink_range.to_string()];
        row.extend(r.uplink_ranges.iter().map(f64::to_string));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a file written by [`write_ranges`]; zero ranges are replaced as in
/// [`RangeTrace::from_observed`].
pub fn read_ranges(path: &Path) -> Result<RangeTrace, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let (mut up, mut dn) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        let Some((&d, u)) = vals.split_first() else {
            return Err(CliError::Input(format!(
                "{}: row {} has no ranges",
                path.display(),
                i + 2
            )));
        };
        dn.push(d);
        up.push(u.to_vec());
    }
    Ok(RangeTrace::from_observed(up, dn)?)
}

pub fn describe_policy(p: &AllocationPolicy) -> String {
    match p {
        AllocationPolicy::Lossless => "lossless".into(),
        AllocationPolicy::Fixed { bits } => format!("fixed(bits={bits})"),
        AllocationPolicy::JointAdaptive { alpha } => format!("joint(alpha={alpha})"),
        AllocationPolicy::UplinkOnlyAdaptive { alpha } => format!("uplink-only(alpha={alpha})"),
        AllocationPolicy::DownlinkOnlyAdaptive { beta } => format!("downlink-only(beta={beta})"),
        AllocationPolicy::Schedule { .. } => "schedule".into(),
    }
}

/// Final metrics and totals of a run, written as summary.json.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub policy: String,
    /// `alpha` solved from the energy budget in oracle mode.
    pub oracle_alpha: Option<f64>,
    pub energy_budget_pj: Option<f64>,
    pub rounds: usize,
    pub clients: usize,
    pub params: usize,
    pub final_train_loss: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub best_test_accuracy: Option<f64>,
    pub energy_uplink_pj: f64,
    pub energy_downlink_pj: f64,
    pub energy_total_pj: f64,
    pub clamp_events: usize,
    pub batch_clamped: bool,
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, s)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}
