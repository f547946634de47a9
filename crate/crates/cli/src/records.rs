//! Row types written by the tabular subcommands. Every record reads back to
//! an equal value through the same CSV or JSON codec.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaclRecord {
    pub form: String,
    pub theta_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub n_pairs: usize,
    pub dropped_ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub form: String,
    pub theta_hat: Vec<f64>,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_hat: Option<Vec<f64>>,
    pub log_lik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_pairs: usize,
    pub dropped_ties: usize,
}

/// One confidence set, as printed for a single query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRecord {
    pub method: String,
    pub scale: String,
    pub y1: f64,
    pub y2: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub disconnected: bool,
    pub components: Vec<(f64, f64)>,
    pub level: f64,
    pub approximate: bool,
}

/// Batch CI row: the input columns followed by `lo,hi,disconnected,method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub id: String,
    pub y1: f64,
    pub y2: f64,
    pub lo: f64,
    pub hi: f64,
    pub disconnected: bool,
    pub method: String,
}

/// p-value row: the input columns followed by `statistic,p_value,mu_sup`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvalueRow {
    pub id: String,
    pub y1: f64,
    pub y2: f64,
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub mu_sup: Option<f64>,
}

/// p-value row with the `p <= 0.05/N` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvalueBonferroniRow {
    pub id: String,
    pub y1: f64,
    pub y2: f64,
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub mu_sup: Option<f64>,
    pub bonferroni_significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub id: String,
    pub y1: f64,
    pub y2: f64,
    pub region_lo: Option<f64>,
    pub region_hi: Option<f64>,
    pub region_disconnected: Option<bool>,
    pub naive_lo: f64,
    pub naive_hi: f64,
    pub p_naive: f64,
    pub p_conservative: f64,
    pub p_berger_boos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCounts {
    pub threshold: f64,
    pub naive: usize,
    pub conservative: usize,
    pub berger_boos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub form: String,
    pub theta_hat: Vec<f64>,
    #[serde(rename = "J")]
    pub j: usize,
    pub log_lik: f64,
    pub em_iterations: usize,
    pub em_converged: bool,
    pub n_control: usize,
    pub n_experiment: usize,
    pub significant: SignificanceCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub theta: Vec<f64>,
    pub n_means: usize,
    pub eq1: f64,
    pub eq2: f64,
}

/// Flat form of [`CiRecord`] for CSV output; the components are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiFlatRecord {
    pub method: String,
    pub scale: String,
    pub y1: f64,
    pub y2: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub disconnected: bool,
    pub level: f64,
    pub approximate: bool,
}

impl From<&CiRecord> for CiFlatRecord {
    fn from(r: &CiRecord) -> Self {
        CiFlatRecord {
            method: r.method.clone(),
            scale: r.scale.clone(),
            y1: r.y1,
            y2: r.y2,
            lo: r.lo,
            hi: r.hi,
            disconnected: r.disconnected,
            level: r.level,
            approximate: r.approximate,
        }
    }
}
