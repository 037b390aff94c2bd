//! Karcher (Fréchet) mean of functions under the amplitude distance and the
//! joint alignment of a sample to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{
    order_free_mean, order_free_sum, srvf_transform, trapz_dist_sq, FunctionSample, Grid,
    SrvfSample,
};
use crate::par::{self, Execution};
use crate::phase::{karcher_mean_warps, WarpMeanConfig};
use crate::registration::{optimal_warp, srvf_distance};
use crate::warping::{group_action, invert_warp, warp_function, Warping};

/// Starting template for the alignment iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    /// Sample SRVF closest in L² to the cross-sectional SRVF mean.
    #[default]
    NearestToMean,
    /// Sample SRVF with the smallest sum of elastic distances to the others.
    /// Needs `n(n-1)` registrations.
    ElasticMedoid,
}

/// How the prefix means `μ^k` of the CUSUM statistics are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixMode {
    /// Running averages of the globally aligned sample.
    #[default]
    GlobalAlignment,
    /// A separate Karcher mean of every prefix. Costs `n` full alignments.
    Realign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Relative decrease of the objective below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    pub initializer: Initializer,
    pub warp_mean: WarpMeanConfig,
    pub execution: Execution,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 20,
            initializer: Initializer::default(),
            warp_mean: WarpMeanConfig::default(),
            execution: Execution::default(),
        }
    }
}

/// Outcome of a group alignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Karcher amplitude mean of the SRVFs.
    pub mean_q: SrvfSample,
    /// SRVFs of the inputs before alignment.
    pub srvfs: Vec<SrvfSample>,
    /// `(q_i, γ_i)`.
    pub aligned_q: Vec<SrvfSample>,
    /// Centered warps `γ_i`.
    pub warps: Vec<Warping>,
    /// `f_i ∘ γ_i`.
    pub aligned_f: Vec<FunctionSample>,
    pub iterations: usize,
    pub converged: bool,
    /// `Σ ‖μ - (q_i, γ_i)‖²` at the initializer and after every iteration.
    pub objective_trace: Vec<f64>,
}

impl AlignmentResult {
    pub fn len(&self) -> usize {
        self.aligned_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aligned_q.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        self.mean_q.grid()
    }

    /// Karcher mean mapped back to function space, anchored at the mean `f(0)`.
    pub fn mean_function(&self) -> FunctionSample {
        crate::function::srvf_inverse(&self.mean_q)
    }
}

/// Pointwise average of SRVFs (values and `f0`), independent of their order.
pub fn srvf_average(qs: &[SrvfSample]) -> SrvfSample {
    let grid = *qs[0].grid();
    let values = order_free_mean(qs.iter().map(SrvfSample::values));
    let f0 = order_free_sum(qs.iter().map(SrvfSample::f0).collect()) / qs.len() as f64;
    SrvfSample::from_parts(grid, values, f0)
}

fn check_shared_grid(fs: &[FunctionSample]) -> Result<Grid> {
    let first = fs
        .first()
        .ok_or_else(|| Error::invalid("alignment needs at least one function"))?;
    let grid = *first.grid();
    if fs.iter().any(|f| f.values().len() != grid.len()) {
        return Err(Error::invalid("all functions must share one grid"));
    }
    Ok(grid)
}

fn initial_index(qs: &[SrvfSample], init: Initializer, exec: Execution) -> Result<usize> {
    let n = qs.len();
    let scores: Vec<f64> = match init {
        Initializer::NearestToMean => {
            let mean = srvf_average(qs);
            qs.iter()
                .map(|q| trapz_dist_sq(q.values(), mean.values()))
                .collect()
        }
        Initializer::ElasticMedoid => {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect();
            let d = par::try_map_range(exec, pairs.len(), |p| {
                let (i, j) = pairs[p];
                srvf_distance(&qs[i], &qs[j])
            })?;
            let mut rows = vec![Vec::with_capacity(n); n];
            for (&(i, j), dist) in pairs.iter().zip(d) {
                rows[i].push(dist);
                rows[j].push(dist);
            }
            rows.into_iter().map(order_free_sum).collect()
        }
    };
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Aligns a sample of functions to their Karcher amplitude mean.
///
/// Each iteration registers every SRVF to the current template, keeping the
/// previous warp when the new one does not reduce the distance, then replaces
/// the template by the average of the aligned SRVFs. Finally the warps are
/// centered so that their intrinsic mean is the identity.
pub fn karcher_mean_align(fs: &[FunctionSample], cfg: &AlignConfig) -> Result<AlignmentResult> {
    let grid = check_shared_grid(fs)?;
    let exec = cfg.execution;
    let n = fs.len();
    let srvfs = fs.iter().map(srvf_transform).collect::<Result<Vec<_>>>()?;

    if n == 1 {
        return Ok(AlignmentResult {
            mean_q: srvfs[0].clone(),
            aligned_q: srvfs.clone(),
            srvfs,
            warps: vec![Warping::identity(grid)],
            aligned_f: fs.to_vec(),
            iterations: 1,
            converged: true,
            objective_trace: vec![0.0],
        });
    }

    let start = initial_index(&srvfs, cfg.initializer, exec)?;
    let mut mu = srvfs[start].clone();
    let mut warps = vec![Warping::identity(grid); n];
    let mut aligned = srvfs.clone();
    let objective = |mu: &SrvfSample, aligned: &[SrvfSample]| -> f64 {
        order_free_sum(
            aligned
                .iter()
                .map(|q| trapz_dist_sq(mu.values(), q.values()))
                .collect(),
        )
    };
    let mut prev = objective(&mu, &aligned);
    let mut trace = vec![prev];
    let mut converged = prev == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        let updates = par::try_map_range(exec, n, |i| -> Result<Option<(Warping, SrvfSample)>> {
            let reg = optimal_warp(&mu, &srvfs[i])?;
            let current = trapz_dist_sq(mu.values(), aligned[i].values());
            if reg.distance * reg.distance < current {
                let q = group_action(&srvfs[i], &reg.warp)?;
                if trapz_dist_sq(mu.values(), q.values()) < current {
                    return Ok(Some((reg.warp, q)));
                }
            }
            Ok(None)
        })?;
        for (i, u) in updates.into_iter().enumerate() {
            if let Some((w, q)) = u {
                warps[i] = w;
                aligned[i] = q;
            }
        }
        mu = srvf_average(&aligned);
        let obj = objective(&mu, &aligned);
        trace.push(obj);
        if prev <= 0.0 || (prev - obj) / prev < cfg.tol {
            converged = true;
        }
        prev = obj;
    }

    // center the phase so the mean warp is the identity
    let warp_mean = karcher_mean_warps(&warps, cfg.warp_mean, exec)?;
    let inv = invert_warp(&warp_mean.mean);
    let warps = par::try_map_range(exec, n, |i| warps[i].compose(&inv))?;
    let aligned_q = par::try_map_range(exec, n, |i| group_action(&srvfs[i], &warps[i]))?;
    let aligned_f = par::try_map_range(exec, n, |i| warp_function(&fs[i], &warps[i]))?;
    let mean_q = srvf_average(&aligned_q);

    Ok(AlignmentResult {
        mean_q,
        srvfs,
        aligned_q,
        warps,
        aligned_f,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Running means `μ^k = (1/k) Σ_{i≤k} (q_i, γ_i)` of the globally aligned SRVFs.
pub fn prefix_means(ar: &AlignmentResult) -> Vec<SrvfSample> {
    let grid = *ar.grid();
    let mut acc = vec![0.0; grid.len()];
    let mut f0 = 0.0;
    ar.aligned_q
        .iter()
        .enumerate()
        .map(|(i, q)| {
            for (a, v) in acc.iter_mut().zip(q.values()) {
                *a += v;
            }
            f0 += q.f0();
            let k = (i + 1) as f64;
            SrvfSample::from_parts(grid, acc.iter().map(|v| v / k).collect(), f0 / k)
        })
        .collect()
}

/// Prefix means obtained by re-running the Karcher alignment on every prefix.
pub fn prefix_means_realigned(fs: &[FunctionSample], cfg: &AlignConfig) -> Result<Vec<SrvfSample>> {
    let inner = AlignConfig {
        execution: Execution::Sequential,
        ..*cfg
    };
    par::try_map_range(cfg.execution, fs.len(), |k| {
        karcher_mean_align(&fs[..=k], &inner).map(|ar| ar.mean_q)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{trapz_norm_sq, Grid};
    use crate::registration::srvf_distance;

    fn peaks(n: usize, t: usize) -> Vec<FunctionSample> {
        let grid = Grid::new(t, -6.0, 6.0).unwrap();
        (0..n)
            .map(|i| {
                let a = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                FunctionSample::from_fn(grid, |x| (-(x - a).powi(2) / 2.0).exp()).unwrap()
            })
            .collect()
    }

    fn mean_pairwise(fs: &[FunctionSample]) -> f64 {
        let mut s = 0.0;
        let mut c = 0;
        for i in 0..fs.len() {
            for j in i + 1..fs.len() {
                s += trapz_dist_sq(fs[i].values(), fs[j].values()).sqrt();
                c += 1;
            }
        }
        s / c as f64
    }

    #[test]
    fn single_function() {
        let fs = peaks(2, 51)[..1].to_vec();
        let ar = karcher_mean_align(&fs, &AlignConfig::default()).unwrap();
        assert_eq!(ar.iterations, 1);
        assert!(ar.converged);
        assert_eq!(ar.mean_q, srvf_transform(&fs[0]).unwrap());
        assert_eq!(ar.warps[0], Warping::identity(*fs[0].grid()));
        assert!(karcher_mean_align(&[], &AlignConfig::default()).is_err());
    }

    #[test]
    fn identical_functions() {
        let f = peaks(3, 101)[1].clone();
        let fs = vec![f.clone(); 4];
        let ar = karcher_mean_align(&fs, &AlignConfig::default()).unwrap();
        let q = srvf_transform(&f).unwrap();
        assert!(trapz_dist_sq(ar.mean_q.values(), q.values()) < 1e-20);
        for w in &ar.warps {
            assert!(w.max_deviation_from_identity() < 1e-9);
        }
    }

    #[test]
    fn shifted_peaks_collapse() {
        let fs = peaks(21, 101);
        let ar = karcher_mean_align(&fs, &AlignConfig::default()).unwrap();
        let before = mean_pairwise(&fs);
        let after = mean_pairwise(&ar.aligned_f);
        assert!(after <= 0.1 * before, "{after} vs {before}");
        for w in ar.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8);
        }
        // aligned SRVFs are the group action of the warps
        for i in 0..fs.len() {
            let q = group_action(&ar.srvfs[i], &ar.warps[i]).unwrap();
            assert_eq!(q.values(), ar.aligned_q[i].values());
        }
        // centered phase
        let m = karcher_mean_warps(&ar.warps, WarpMeanConfig::default(), Execution::Sequential).unwrap();
        assert!(crate::phase::phase_distance(&m.mean, &Warping::identity(*ar.grid())) < 1e-2);
    }

    #[test]
    fn prefix_means_arithmetic() {
        let g = Grid::unit(5).unwrap();
        let rows = [
            [1.0, 2.0, 3.0, 4.0, 5.0],
            [3.0, 2.0, 1.0, 0.0, -1.0],
            [2.0, 2.0, 2.0, 8.0, 2.0],
        ];
        let aligned: Vec<SrvfSample> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| SrvfSample::new(g, r.to_vec(), i as f64).unwrap())
            .collect();
        let ar = AlignmentResult {
            mean_q: srvf_average(&aligned),
            srvfs: aligned.clone(),
            aligned_q: aligned.clone(),
            warps: vec![Warping::identity(g); 3],
            aligned_f: vec![],
            iterations: 0,
            converged: true,
            objective_trace: vec![],
        };
        let pm = prefix_means(&ar);
        assert_eq!(pm[0].values(), &rows[0]);
        assert_eq!(pm[1].values(), &[2.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(pm[2].values(), &[2.0, 2.0, 2.0, 4.0, 2.0]);
        assert_eq!(pm[2].f0(), 1.0);
        for (a, b) in pm[2].values().iter().zip(ar.mean_q.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn full_prefix_equals_mean() {
        let fs = peaks(6, 61);
        let ar = karcher_mean_align(&fs, &AlignConfig::default()).unwrap();
        let pm = prefix_means(&ar);
        assert!(trapz_dist_sq(pm[5].values(), ar.mean_q.values()).sqrt() < 1e-8);
    }

    #[test]
    fn permutation_leaves_mean_unchanged() {
        let fs = peaks(7, 101);
        let mut rev = fs.clone();
        rev.reverse();
        rev.swap(1, 4);
        let cfg = AlignConfig::default();
        let a = karcher_mean_align(&fs, &cfg).unwrap();
        let b = karcher_mean_align(&rev, &cfg).unwrap();
        let d = a
            .mean_q
            .values()
            .iter()
            .zip(b.mean_q.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn common_warp_leaves_mean_in_same_orbit() {
        let fs = peaks(5, 101);
        let gam = Warping::from_fn(*fs[0].grid(), |t| t.powf(1.25)).unwrap();
        let warped: Vec<FunctionSample> = fs.iter().map(|f| warp_function(f, &gam).unwrap()).collect();
        let cfg = AlignConfig::default();
        let a = karcher_mean_align(&fs, &cfg).unwrap();
        let b = karcher_mean_align(&warped, &cfg).unwrap();
        let d = srvf_distance(&a.mean_q, &b.mean_q).unwrap();
        assert!(d <= 1e-2 * trapz_norm_sq(a.mean_q.values()).sqrt(), "{d}");
    }

    #[test]
    fn medoid_initializer_and_execution_modes_agree() {
        let fs = peaks(5, 61);
        let seq = AlignConfig {
            initializer: Initializer::ElasticMedoid,
            execution: Execution::Sequential,
            ..AlignConfig::default()
        };
        let par = AlignConfig {
            execution: Execution::Parallel,
            ..seq
        };
        let a = karcher_mean_align(&fs, &seq).unwrap();
        let b = karcher_mean_align(&fs, &par).unwrap();
        assert_eq!(a.mean_q, b.mean_q);
        assert_eq!(a.warps, b.warps);
    }

    #[test]
    fn realigned_prefixes_end_at_global_mean() {
        let fs = peaks(4, 41);
        let cfg = AlignConfig::default();
        let pm = prefix_means_realigned(&fs, &cfg).unwrap();
        assert_eq!(pm.len(), 4);
        assert_eq!(pm[0], srvf_transform(&fs[0]).unwrap());
        let full = karcher_mean_align(&fs, &cfg).unwrap();
        assert_eq!(pm[3], full.mean_q);
    }
}
