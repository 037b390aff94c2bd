//! Per-replicate benchmark rows and their summaries.

use elastic_changepoint::changepoint::Method;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    pub detected: bool,
    pub k_star: Option<usize>,
    pub p_value: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub reps: usize,
    pub detections: usize,
    pub detection_rate: f64,
    /// Over replicates with a detection.
    pub median_k_star: Option<f64>,
    pub iqr_k_star: Option<f64>,
}

/// Linearly interpolated sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interquartile range, `None` for empty input.
pub fn iqr(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

pub fn summarize(rows: &[BenchRow], methods: &[Method]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m).collect();
            let ks: Vec<f64> = mine
                .iter()
                .filter(|r| r.detected)
                .filter_map(|r| r.k_star.map(|k| k as f64))
                .collect();
            let detections = mine.iter().filter(|r| r.detected).count();
            MethodSummary {
                method: m,
                reps: mine.len(),
                detections,
                detection_rate: if mine.is_empty() { 0.0 } else { detections as f64 / mine.len() as f64 },
                median_k_star: median(&ks),
                iqr_k_star: iqr(&ks),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(median(&v), Some(3.0));
        assert_eq!(iqr(&v), Some(2.0));
        assert_eq!(iqr(&[7.0]), Some(0.0));
        assert_eq!(iqr(&[]), None);
        assert_eq!(median(&[1.0, 2.0]), Some(1.5));
    }

    #[test]
    fn summary_counts() {
        let row = |m, d, k| BenchRow {
            replicate: 0,
            seed: 0,
            method: m,
            detected: d,
            k_star: Some(k),
            p_value: if d { 0.01 } else { 0.5 },
            runtime_ms: 1.0,
        };
        let rows = vec![
            row(Method::ElasticAmp, true, 30),
            row(Method::ElasticAmp, false, 10),
            row(Method::CrossSectional, true, 38),
        ];
        let s = summarize(&rows, &[Method::ElasticAmp, Method::CrossSectional]);
        assert_eq!(s[0].detections, 1);
        assert_eq!(s[0].detection_rate, 0.5);
        assert_eq!(s[0].median_k_star, Some(30.0));
        assert_eq!(s[1].reps, 1);
    }
}
