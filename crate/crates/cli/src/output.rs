//! Result files and atomic output.

use std::io::Write;
use std::path::Path;

use pdmp_core::gene_expression::SweepRow;
use pdmp_core::simulator::{EnsembleStats, OffsetSampler, ResetSampler, Trajectory, ZScore};
use pdmp_core::solver::{MeanSolution, MomentSolution, StabilityReport};
use pdmp_core::tolerances::Tolerance;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Bumped whenever the layout of any result file changes.
pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// `sha256:<hex>` of the input file bytes.
pub fn input_digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub schema_version: u32,
    pub tool_version: String,
    pub input_digest: String,
    pub order: u8,
    pub tolerance: Tolerance,
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv2: Option<Vec<Option<f64>>>,
    /// Check for the requested order.
    pub stability: StabilityReport,
    /// Every check that was run, lowest order first.
    pub stability_checks: Vec<StabilityReport>,
    pub numerical_error_estimate: f64,
    pub condition_number: f64,
    pub warnings: Vec<String>,
}

impl ResultFile {
    pub fn from_mean(s: MeanSolution, digest: String, tol: Tolerance) -> Self {
        ResultFile {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            input_digest: digest,
            order: 1,
            tolerance: tol,
            mean: s.mean,
            second_moment: None,
            covariance: None,
            cv2: None,
            stability: s.stability.clone(),
            stability_checks: vec![s.stability],
            numerical_error_estimate: s.numerical_error_estimate,
            condition_number: s.condition_number,
            warnings: s.warnings,
        }
    }

    pub fn from_second(s: MomentSolution, digest: String, tol: Tolerance) -> Self {
        ResultFile {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            input_digest: digest,
            order: 2,
            tolerance: tol,
            mean: s.mean,
            second_moment: Some(s.second_moment),
            covariance: Some(s.covariance),
            cv2: Some(s.cv2),
            stability: s
                .stability
                .last()
                .cloned()
                .expect("order-2 solution has checks"),
            stability_checks: s.stability,
            numerical_error_estimate: s.numerical_error_estimate,
            condition_number: s.condition_number,
            warnings: s.warnings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationFile {
    pub schema_version: u32,
    pub tool_version: String,
    pub input_digest: String,
    pub sampler: ResetSampler,
    pub offsets: OffsetSampler,
    #[serde(flatten)]
    pub stats: EnsembleStats,
    /// Closed-form values and z-scores, with `--compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ZScore>>,
}

/// Writes to a temporary file next to `path`, then renames it into place,
/// so a failed run never leaves a partial file behind.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Output(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Pretty JSON to `path`, or to standard output without one.
pub fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("result types serialize");
    match path {
        Some(p) => write_atomic(p, |w| writeln!(w, "{text}")),
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Output(format!(
                "cannot write to standard output: {e}"
            ))),
            _ => Ok(()),
        },
    }
}

pub const SWEEP_HEADER: [&str; 11] = [
    "parameter",
    "k",
    "mean",
    "total",
    "cell_cycle",
    "synthesis",
    "partitioning",
    "total_normalized",
    "cell_cycle_normalized",
    "synthesis_normalized",
    "partitioning_normalized",
];

pub fn write_sweep_csv(rows: &[SweepRow], w: &mut dyn Write) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        let (n, z) = (&r.noise, &r.normalized);
        out.write_record(
            [
                r.parameter,
                r.k,
                n.mean,
                n.total,
                n.cell_cycle,
                n.synthesis,
                n.partitioning,
                z.total,
                z.cell_cycle,
                z.synthesis,
                z.partitioning,
            ]
            .iter()
            .map(f64::to_string),
        )?;
    }
    out.flush()
}

/// One row per event: time, kind, then the state before and after.
pub fn write_event_log_csv(t: &Trajectory, w: &mut dyn Write) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = t.final_state.len();
    let mut header = vec!["time".to_string(), "event_kind".to_string()];
    header.extend((0..n).map(|i| format!("before_{i}")));
    header.extend((0..n).map(|i| format!("after_{i}")));
    out.write_record(&header)?;
    for e in &t.events {
        let mut rec = vec![e.time.to_string(), e.kind.to_string()];
        rec.extend(e.before.iter().chain(&e.after).map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()
}
