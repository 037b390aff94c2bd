//! The JSON result document written by `elastic-cp detect`.

use elastic_changepoint::changepoint::{ChangepointResult, Method, SegmentMean, TestConfig};
use elastic_changepoint::function::{Grid, SmoothingConfig};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;

pub const TOOL: &str = "elastic-cp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Reject,
    Retain,
}

impl Decision {
    pub fn from_p(p_value: f64, alpha: f64) -> Self {
        if p_value <= alpha {
            Decision::Reject
        } else {
            Decision::Retain
        }
    }
}

/// What the segment means and `delta_hat` are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    /// Function values.
    Function,
    /// Warps in original-domain units (`delta_hat` is their difference).
    Warp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEcho {
    pub source: Option<String>,
    pub n: usize,
    pub num_points: usize,
    pub domain: [f64; 2],
}

/// Preprocessing and test settings used for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub test: TestConfig,
    pub smoothing: Option<SmoothingConfig>,
    pub resample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// Seed of the limit-law simulation.
    pub monte_carlo: u64,
    /// Seed of the Λ₂ permutations, when they ran.
    pub permutation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub tool: String,
    pub version: String,
    pub method: Method,
    pub input: InputEcho,
    pub statistic: f64,
    /// Last pre-change observation, 1-based.
    pub k_star: Option<usize>,
    /// Column label of observation `k_star`.
    pub k_star_label: Option<String>,
    pub p_value: f64,
    pub lambda2: f64,
    pub lambda2_p_value: Option<f64>,
    pub alpha: f64,
    pub decision: Decision,
    pub degenerate: bool,
    pub converged: bool,
    pub num_components: Option<usize>,
    pub limit_eigenvalues: Vec<f64>,
    pub config: ConfigEcho,
    pub seeds: Seeds,
    pub cusum_trace: Vec<f64>,
    /// Grid in the original domain.
    pub t: Vec<f64>,
    pub segment_kind: SegmentKind,
    pub mean_before: Option<Vec<f64>>,
    pub mean_after: Option<Vec<f64>>,
    pub delta_hat: Option<Vec<f64>>,
}

/// Segment mean in original units: warps are mapped through the domain.
pub fn segment_values(seg: &SegmentMean, grid: &Grid) -> Vec<f64> {
    match seg {
        SegmentMean::Function(f) => f.values().to_vec(),
        SegmentMean::Warp(g) => g.values().iter().map(|&v| grid.to_original(v)).collect(),
    }
}

impl ResultDocument {
    pub fn new(
        result: &ChangepointResult,
        data: &Dataset,
        source: Option<String>,
        config: ConfigEcho,
    ) -> Self {
        let grid = data.grid();
        let (lo, hi) = grid.domain();
        let labels = data.labels();
        let segment_kind = match result.method {
            Method::ElasticPhase | Method::ElasticPhasePca => SegmentKind::Warp,
            _ => SegmentKind::Function,
        };
        let delta_hat = result.delta_hat.as_ref().map(|d| match segment_kind {
            SegmentKind::Function => d.clone(),
            SegmentKind::Warp => d.iter().map(|x| x * (hi - lo)).collect(),
        });
        let alpha = config.test.alpha;
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            method: result.method,
            input: InputEcho {
                source,
                n: data.len(),
                num_points: grid.len(),
                domain: [lo, hi],
            },
            statistic: result.statistic,
            k_star: result.k_star,
            k_star_label: result.k_star.map(|k| labels[k - 1].clone()),
            p_value: result.p_value,
            lambda2: result.lambda2,
            lambda2_p_value: result.lambda2_p_value,
            alpha,
            decision: Decision::from_p(result.p_value, alpha),
            degenerate: result.degenerate,
            converged: result.converged,
            num_components: result.num_components,
            limit_eigenvalues: result.limit_eigenvalues.clone(),
            seeds: Seeds {
                monte_carlo: config.test.rng_seed,
                permutation: config.test.lambda2_permutations.map(|_| config.test.rng_seed),
            },
            config,
            cusum_trace: result.cusum_trace.clone(),
            t: grid.original_points(),
            segment_kind,
            mean_before: result.mean_before.as_ref().map(|s| segment_values(s, &grid)),
            mean_after: result.mean_after.as_ref().map(|s| segment_values(s, &grid)),
            delta_hat,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result document serializes");
        s.push('\n');
        s
    }
}
