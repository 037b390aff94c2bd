//! CUSUM processes of a sequence of vectors.

/// CUSUM summary of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Cusum {
    /// Value of the maximized process at `k = 1..=n`.
    pub trace: Vec<f64>,
    /// Maximum of `trace`.
    pub statistic: f64,
    /// First maximizer, 1-based.
    pub k_star: usize,
    /// `(1/n) Σ_k trace_k`.
    pub lambda2: f64,
}

impl Cusum {
    fn from_trace(trace: Vec<f64>) -> Self {
        let mut k = 0;
        for (i, &v) in trace.iter().enumerate() {
            if v > trace[k] {
                k = i;
            }
        }
        let n = trace.len() as f64;
        Self {
            statistic: trace[k],
            k_star: k + 1,
            lambda2: trace.iter().sum::<f64>() / n,
            trace,
        }
    }
}

/// Partial sums `P_k = Σ_{i≤k} x_i` for `k = 1..=n`, flattened row-major.
fn partial_sums(rows: &[&[f64]]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut out = Vec::with_capacity(rows.len() * dim);
    let mut acc = vec![0.0; dim];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r.iter()) {
            *a += x;
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Fully functional CUSUM: `trace_k = ‖S_{n,k}‖²` with
/// `S_{n,k} = (P_k - (k/n) P_n) / sqrt(n)` and `‖x‖² = Σ_j w_j x_j²`.
pub fn functional_cusum(rows: &[&[f64]], weights: &[f64]) -> Cusum {
    let n = rows.len();
    let dim = weights.len();
    let p = partial_sums(rows);
    let total = &p[(n - 1) * dim..];
    let trace = (0..n)
        .map(|k| {
            let frac = (k + 1) as f64 / n as f64;
            let pk = &p[k * dim..(k + 1) * dim];
            let s: f64 = (0..dim)
                .map(|j| {
                    let d = pk[j] - frac * total[j];
                    weights[j] * d * d
                })
                .sum();
            s / n as f64
        })
        .collect();
    Cusum::from_trace(trace)
}

/// Score-based CUSUM: `T_N(k/N) = (1/N) Σ_l λ_l⁻¹ (Σ_{i≤k} η_il - (k/N) Σ_i η_il)²`.
pub fn score_cusum(scores: &[Vec<f64>], eigenvalues: &[f64]) -> Cusum {
    let inv: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / l).collect();
    let rows: Vec<&[f64]> = scores.iter().map(Vec::as_slice).collect();
    functional_cusum(&rows, &inv)
}

/// CUSUM from externally estimated prefix means `m_k`, `k = 1..=n`:
/// `trace_k = ‖k (m_k - m_n)‖² / n`. Equals [`functional_cusum`] when `m_k`
/// are running averages.
pub fn prefix_mean_cusum(means: &[&[f64]], weights: &[f64]) -> Cusum {
    let n = means.len();
    let last = means[n - 1];
    let trace = means
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let kf = (k + 1) as f64;
            let s: f64 = (0..weights.len())
                .map(|j| {
                    let d = kf * (m[j] - last[j]);
                    weights[j] * d * d
                })
                .sum();
            s / n as f64
        })
        .collect();
    Cusum::from_trace(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_step() {
        let xs = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let rows: Vec<&[f64]> = xs.chunks(1).collect();
        let c = functional_cusum(&rows, &[1.0]);
        assert_eq!(c.k_star, 4);
        // S_{8,4} = (0 - 4/8 * 4) / sqrt(8)
        assert!((c.statistic - 4.0 / 8.0).abs() < 1e-15);
        assert_eq!(c.trace[7], 0.0);
        let lambda2 = c.trace.iter().sum::<f64>() / 8.0;
        assert_eq!(c.lambda2, lambda2);
    }

    #[test]
    fn hand_computed_trace() {
        let xs = [1.0, 3.0, 2.0, 6.0];
        let rows: Vec<&[f64]> = xs.chunks(1).collect();
        let c = functional_cusum(&rows, &[2.0]);
        // P = 1, 4, 6, 12; P_k - k/4 * 12 = -2, -2, -3, 0
        let expect = [2.0 * 4.0 / 4.0, 2.0 * 4.0 / 4.0, 2.0 * 9.0 / 4.0, 0.0];
        for (a, b) in c.trace.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(c.k_star, 3);
    }

    #[test]
    fn first_maximizer_wins_ties() {
        let xs = [1.0, -1.0, 1.0, -1.0];
        let rows: Vec<&[f64]> = xs.chunks(1).collect();
        let c = functional_cusum(&rows, &[1.0]);
        assert_eq!(c.trace[0], c.trace[2]);
        assert_eq!(c.k_star, 1);
    }

    #[test]
    fn score_version_is_scale_free() {
        let scores: Vec<Vec<f64>> = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let var = 8.0 / 7.0 * 0.25;
        let c = score_cusum(&scores, &[var]);
        assert_eq!(c.k_star, 4);
        let flipped: Vec<Vec<f64>> = scores.iter().map(|s| vec![-3.0 * s[0]]).collect();
        let d = score_cusum(&flipped, &[9.0 * var]);
        for (a, b) in c.trace.iter().zip(&d.trace) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn running_averages_match_partial_sums() {
        let xs: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 1.3).collect();
        let rows: Vec<&[f64]> = xs.chunks(2).collect();
        let mut means = Vec::new();
        let mut acc = [0.0, 0.0];
        for (k, r) in rows.iter().enumerate() {
            acc[0] += r[0];
            acc[1] += r[1];
            means.push(vec![acc[0] / (k + 1) as f64, acc[1] / (k + 1) as f64]);
        }
        let mrefs: Vec<&[f64]> = means.iter().map(Vec::as_slice).collect();
        let a = functional_cusum(&rows, &[0.5, 2.0]);
        let b = prefix_mean_cusum(&mrefs, &[0.5, 2.0]);
        assert_eq!(a.k_star, b.k_star);
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
