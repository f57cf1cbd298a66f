//! Versioned risk report and its JSON / CSV forms.

use std::fs;
use std::path::Path;

use dynscreen_core::overload::{risk_classify, RiskZone, SafetyPolicy};
use dynscreen_core::rare_event::{CeIteration, Exceedance};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bumped on any incompatible change; new optional fields do not bump it.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("cannot read report: {0}")]
    Read(String),
    #[error("report schema version {found} is not supported (expected {REPORT_SCHEMA_VERSION})")]
    Version { found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchInfo {
    pub index: usize,
    pub from: u32,
    pub to: u32,
    pub transformer: bool,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub buses: usize,
    pub branches: usize,
    pub monitored: Vec<BranchInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub horizon: f64,
    pub dt: f64,
    pub fault_rate: f64,
    pub noise_scale: f64,
    pub exceedance: Exceedance,
}

/// `P[S_m ≥ T* | fault on α]` from the stratified sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMatrix {
    pub samples_per_branch: usize,
    pub faulted: Vec<usize>,
    /// Rows follow `faulted`, columns follow the monitored list.
    pub probabilities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRisk {
    pub branch: usize,
    /// Largest conditional probability over faulted branches.
    pub worst_probability: f64,
    pub worst_faulted_branch: Option<usize>,
    pub zone: RiskZone,
    /// Unconditional `P[S_m ≥ T*]` from the importance-sampling pool.
    pub probability: f64,
    pub std_error: f64,
    /// Any positive overload seen in the sweep.
    pub ever_overloaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRow {
    pub gamma: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub effective_sample_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultedLineRank {
    pub branch: usize,
    /// Weighted probability that this fault drives some monitored branch to `S ≥ T*`.
    pub frequency: f64,
    /// Weighted expected overload seconds summed over monitored branches.
    pub overload_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerableElement {
    pub branch: usize,
    pub transformer: bool,
    /// Number of top scenarios overloading this branch.
    pub recurrence: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchCurve {
    pub branch: usize,
    /// Left edges of the duration bins.
    pub tau: Vec<f64>,
    /// Weighted `P[S ≥ T* | τ ∈ bin]`; `None` where the bin is empty.
    pub probability: Vec<Option<f64>>,
    /// Weighted mean overload seconds per bin.
    pub overload_seconds: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeSummary {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub final_level: f64,
    /// Per-iteration proposals, kept only when tracing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<CeIteration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub failed: usize,
    pub total: usize,
    /// More than 1% of scenario evaluations failed.
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

/// Wall-clock and machine details; excluded from reproducibility checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Runtime {
    pub workers: usize,
    pub prepare_seconds: f64,
    pub sweep_seconds: f64,
    pub cross_entropy_seconds: f64,
    pub final_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub config_hash: String,
    pub runtime: Runtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub schema_version: u32,
    pub grid: GridSummary,
    pub model: ModelSummary,
    pub policy: SafetyPolicy,
    pub conditional: ConditionalMatrix,
    /// One entry per monitored branch, in monitored order.
    pub zones: Vec<BranchRisk>,
    pub exceedance: Vec<ExceedanceRow>,
    pub faulted_ranking: Vec<FaultedLineRank>,
    pub vulnerability_ranking: Vec<VulnerableElement>,
    pub curves: Vec<BranchCurve>,
    pub cross_entropy: CeSummary,
    pub failures: FailureSummary,
    pub metadata: Metadata,
}

impl RiskReport {
    pub fn emergency_branches(&self) -> Vec<usize> {
        self.zones.iter().filter(|z| z.zone == RiskZone::Emergency).map(|z| z.branch).collect()
    }

    pub fn positive_branches(&self) -> Vec<usize> {
        self.zones.iter().filter(|z| z.ever_overloaded).map(|z| z.branch).collect()
    }

    pub fn curve(&self, branch: usize) -> Option<&BranchCurve> {
        self.curves.iter().find(|c| c.branch == branch)
    }

    /// The report with run-time measurements cleared, for comparisons.
    pub fn without_runtime(&self) -> Self {
        let mut r = self.clone();
        r.metadata.runtime = Runtime::default();
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn parse_report(text: &str) -> Result<RiskReport, ReportError> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: u32,
    }
    let v: Version = serde_json::from_str(text).map_err(|e| ReportError::Read(e.to_string()))?;
    if v.schema_version != REPORT_SCHEMA_VERSION {
        return Err(ReportError::Version { found: v.schema_version });
    }
    serde_json::from_str(text).map_err(|e| ReportError::Read(e.to_string()))
}

pub fn read_report(path: &Path) -> Result<RiskReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| ReportError::Read(format!("{}: {e}", path.display())))?;
    parse_report(&text)
}

/// Writes `report.json` plus `conditional.csv`, `zones.csv`,
/// `faulted_ranking.csv`, `vulnerability.csv` and `curves.csv`.
pub fn emit_report(report: &RiskReport, dir: &Path) -> Result<(), ReportError> {
    let err = |path: &Path, e: &dyn std::fmt::Display| ReportError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
    let json = dir.join("report.json");
    fs::write(&json, report.to_json()).map_err(|e| err(&json, &e))?;

    let write = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), ReportError> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| err(&path, &e))?;
        w.write_record(header).map_err(|e| err(&path, &e))?;
        for r in rows {
            w.write_record(&r).map_err(|e| err(&path, &e))?;
        }
        w.flush().map_err(|e| err(&path, &e))
    };
    let monitored = &report.grid.monitored;

    let mut rows = Vec::new();
    for (row, &a) in report.conditional.probabilities.iter().zip(&report.conditional.faulted) {
        for (q, m) in row.iter().zip(monitored) {
            rows.push(vec![a.to_string(), m.index.to_string(), q.to_string()]);
        }
    }
    write("conditional.csv", &["faulted_branch", "monitored_branch", "probability"], rows)?;

    let rows = report
        .zones
        .iter()
        .zip(monitored)
        .map(|(z, m)| {
            vec![
                z.branch.to_string(),
                m.from.to_string(),
                m.to.to_string(),
                m.transformer.to_string(),
                z.worst_probability.to_string(),
                z.worst_faulted_branch.map(|b| b.to_string()).unwrap_or_default(),
                zone_label(z.zone).into(),
                z.probability.to_string(),
                z.std_error.to_string(),
            ]
        })
        .collect();
    write(
        "zones.csv",
        &["branch", "from", "to", "transformer", "worst_probability", "worst_faulted_branch", "zone", "probability", "std_error"],
        rows,
    )?;

    let rows = report
        .faulted_ranking
        .iter()
        .enumerate()
        .map(|(k, r)| vec![(k + 1).to_string(), r.branch.to_string(), r.frequency.to_string(), r.overload_seconds.to_string()])
        .collect();
    write("faulted_ranking.csv", &["rank", "branch", "frequency", "overload_seconds"], rows)?;

    let rows = report
        .vulnerability_ranking
        .iter()
        .enumerate()
        .map(|(k, r)| {
            vec![
                (k + 1).to_string(),
                r.branch.to_string(),
                r.transformer.to_string(),
                r.recurrence.to_string(),
                r.probability.to_string(),
            ]
        })
        .collect();
    write("vulnerability.csv", &["rank", "branch", "transformer", "recurrence", "probability"], rows)?;

    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rows = Vec::new();
    for c in &report.curves {
        for k in 0..c.tau.len() {
            rows.push(vec![c.branch.to_string(), c.tau[k].to_string(), opt(c.probability[k]), opt(c.overload_seconds[k])]);
        }
    }
    write("curves.csv", &["branch", "tau", "probability", "overload_seconds"], rows)
}

pub fn zone_label(zone: RiskZone) -> &'static str {
    match zone {
        RiskZone::Safe => "safe",
        RiskZone::Warning => "warning",
        RiskZone::Emergency => "emergency",
    }
}

/// Zone of a probability under the report's policy.
pub fn classify(report: &RiskReport, probability: f64) -> RiskZone {
    risk_classify(probability.clamp(0.0, 1.0), &report.policy).expect("report policy is valid")
}
