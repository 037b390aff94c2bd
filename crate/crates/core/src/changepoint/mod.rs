//! Changepoint tests for the mean of amplitude and phase, a cross-sectional
//! baseline, and their Monte-Carlo calibration.
//!
//! Every test reduces the sample to one vector per observation (aligned SRVFs,
//! shooting vectors, fPCA scores or raw values), forms the CUSUM process of
//! that sequence and compares its maximum with the supremum of an
//! eigenvalue-weighted sum of squared Brownian bridges.

pub mod cusum;
pub mod limit;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{
    covariance_spectrum, horizontal_fpca, vertical_fpca, ComponentSelector, EIGEN_FLOOR,
};
use crate::function::{srvf_inverse, trapz_weights, FunctionSample, SrvfSample};
use crate::karcher::{
    karcher_mean_align, prefix_means, prefix_means_realigned, srvf_average, AlignConfig,
    AlignmentResult, PrefixMode,
};
use crate::par::{self, Execution};
use crate::phase::{
    exp_map, from_psi, karcher_mean_warps, log_map, mean_shooting_vector, shooting_vectors,
    ShootingVector, WarpMean,
};
use crate::warping::Warping;

pub use cusum::{functional_cusum, prefix_mean_cusum, score_cusum, Cusum};
pub use limit::{p_value, simulate_limit_sup, LimitDistribution, LimitSpec};

/// Smallest sample size accepted by the tests.
pub const MIN_OBSERVATIONS: usize = 4;

/// Total variance below which a sample is treated as constant.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub alpha: f64,
    pub mc_reps: usize,
    pub mc_grid: usize,
    /// Components for the PCA tests.
    pub selector: ComponentSelector,
    /// Largest number of eigenvalues in the fully functional limit sum.
    pub eigen_truncation: usize,
    /// Seed of the limit-law simulation and of the Λ₂ permutations.
    pub rng_seed: u64,
    /// Permutations for a Λ₂ p-value; `None` skips it.
    pub lambda2_permutations: Option<usize>,
    /// Center shooting vectors before horizontal fPCA.
    pub center_horizontal: bool,
    /// Alignment settings; its `execution` is overridden by `execution`.
    pub align: AlignConfig,
    pub prefix_mode: PrefixMode,
    pub execution: Execution,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            mc_reps: 10_000,
            mc_grid: 1001,
            selector: ComponentSelector::default(),
            eigen_truncation: 50,
            rng_seed: 0,
            lambda2_permutations: None,
            center_horizontal: false,
            align: AlignConfig::default(),
            prefix_mode: PrefixMode::default(),
            execution: Execution::default(),
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.mc_reps < 100 {
            return Err(Error::invalid("mc_reps must be at least 100"));
        }
        if self.mc_grid < 101 {
            return Err(Error::invalid("mc_grid must be at least 101"));
        }
        if self.eigen_truncation == 0 {
            return Err(Error::invalid("eigen_truncation must be positive"));
        }
        if let ComponentSelector::Fraction(t) = self.selector {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid("component fraction must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    fn limit_spec(&self) -> LimitSpec {
        LimitSpec {
            reps: self.mc_reps,
            grid: self.mc_grid,
            truncation: self.eigen_truncation,
            seed: self.rng_seed,
        }
    }

    fn align_config(&self) -> AlignConfig {
        AlignConfig {
            execution: self.execution,
            ..self.align
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ElasticAmp,
    ElasticPhase,
    ElasticAmpPca,
    ElasticPhasePca,
    CrossSectional,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ElasticAmp,
        Method::ElasticPhase,
        Method::ElasticAmpPca,
        Method::ElasticPhasePca,
        Method::CrossSectional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ElasticAmp => "elastic-amp",
            Method::ElasticPhase => "elastic-phase",
            Method::ElasticAmpPca => "elastic-amp-pca",
            Method::ElasticPhasePca => "elastic-phase-pca",
            Method::CrossSectional => "cross-sectional",
        }
    }

    pub fn is_pca(self) -> bool {
        matches!(self, Method::ElasticAmpPca | Method::ElasticPhasePca)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Segment mean on either side of the changepoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentMean {
    Function(FunctionSample),
    Warp(Warping),
}

impl SegmentMean {
    pub fn values(&self) -> &[f64] {
        match self {
            SegmentMean::Function(f) => f.values(),
            SegmentMean::Warp(g) => g.values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointResult {
    pub method: Method,
    /// `max_k trace_k`.
    pub statistic: f64,
    /// Last pre-change observation (1-based); `None` for degenerate data.
    pub k_star: Option<usize>,
    pub p_value: f64,
    /// `(1/n) Σ_k trace_k`.
    pub lambda2: f64,
    /// Permutation p-value of Λ₂, when requested.
    pub lambda2_p_value: Option<f64>,
    pub mean_before: Option<SegmentMean>,
    pub mean_after: Option<SegmentMean>,
    /// After minus before: function difference for amplitude and baseline
    /// tests, warp difference for phase tests.
    pub delta_hat: Option<Vec<f64>>,
    pub cusum_trace: Vec<f64>,
    /// The sample had no variance; the test was not run.
    pub degenerate: bool,
    /// Alignment and warp-mean iterations converged.
    pub converged: bool,
    /// Retained components (PCA tests only).
    pub num_components: Option<usize>,
    /// Weights of the squared bridges in the limit law.
    pub limit_eigenvalues: Vec<f64>,
}

impl ChangepointResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}

fn check_sample(fs: &[FunctionSample]) -> Result<()> {
    if fs.len() < MIN_OBSERVATIONS {
        return Err(Error::invalid(format!(
            "changepoint tests need at least {MIN_OBSERVATIONS} functions, got {}",
            fs.len()
        )));
    }
    let len = fs[0].values().len();
    if fs.iter().any(|f| f.values().len() != len) {
        return Err(Error::invalid("all functions must share one grid"));
    }
    Ok(())
}

/// Λ₂ permutation p-value: the sequence is reshuffled and the CUSUM mean
/// recomputed. Not part of the asymptotic theory.
fn lambda2_permutation(
    rows: &[&[f64]],
    weights: &[f64],
    observed: f64,
    perms: usize,
    seed: u64,
    exec: Execution,
) -> f64 {
    let exceed: usize = par::map_range(exec, perms, |p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64 + 1);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<&[f64]> = order.iter().map(|&i| rows[i]).collect();
        usize::from(functional_cusum(&shuffled, weights).lambda2 >= observed)
    })
    .into_iter()
    .sum();
    (1 + exceed) as f64 / (perms + 1) as f64
}

/// Everything the CUSUM needs from one representation of the sample.
struct Sequence<'a> {
    rows: Vec<&'a [f64]>,
    weights: Vec<f64>,
    cusum: Cusum,
    limit_eigs: Vec<f64>,
    total_variance: f64,
}

fn degenerate_result(method: Method, n: usize, converged: bool) -> ChangepointResult {
    ChangepointResult {
        method,
        statistic: 0.0,
        k_star: None,
        p_value: 1.0,
        lambda2: 0.0,
        lambda2_p_value: None,
        mean_before: None,
        mean_after: None,
        delta_hat: None,
        cusum_trace: vec![0.0; n],
        degenerate: true,
        converged,
        num_components: None,
        limit_eigenvalues: Vec::new(),
    }
}

fn calibrate(method: Method, seq: &Sequence<'_>, cfg: &TestConfig, converged: bool) -> Result<ChangepointResult> {
    let n = seq.rows.len();
    if seq.total_variance < VARIANCE_FLOOR {
        return Ok(degenerate_result(method, n, converged));
    }
    let dist = simulate_limit_sup(&seq.limit_eigs, &cfg.limit_spec(), cfg.execution)?;
    let lambda2_p_value = cfg.lambda2_permutations.map(|perms| {
        lambda2_permutation(
            &seq.rows,
            &seq.weights,
            seq.cusum.lambda2,
            perms,
            cfg.rng_seed,
            cfg.execution,
        )
    });
    Ok(ChangepointResult {
        method,
        statistic: seq.cusum.statistic,
        k_star: Some(seq.cusum.k_star),
        p_value: dist.p_value(seq.cusum.statistic),
        lambda2: seq.cusum.lambda2,
        lambda2_p_value,
        mean_before: None,
        mean_after: None,
        delta_hat: None,
        cusum_trace: seq.cusum.trace.clone(),
        degenerate: false,
        converged,
        num_components: None,
        limit_eigenvalues: seq.limit_eigs.clone(),
    })
}

/// Fully functional sequence with limit eigenvalues from the centered
/// covariance. `prefix` replaces the running averages when given.
fn functional_sequence<'a>(
    rows: Vec<&'a [f64]>,
    weights: Vec<f64>,
    prefix: Option<&[&[f64]]>,
) -> Result<Sequence<'a>> {
    let spectrum = covariance_spectrum(&rows, &weights, true)?;
    let total_variance = spectrum.iter().sum();
    let cusum = match prefix {
        Some(means) => prefix_mean_cusum(means, &weights),
        None => functional_cusum(&rows, &weights),
    };
    let positive: Vec<f64> = spectrum.iter().copied().filter(|&l| l > 0.0).collect();
    Ok(Sequence {
        rows,
        weights,
        cusum,
        limit_eigs: if positive.is_empty() { vec![0.0] } else { positive },
        total_variance,
    })
}

/// Score sequence of a PCA test: weights `1/λ_l`, limit `Σ_{l≤d} B_l²`.
fn score_sequence<'a>(scores: &'a [Vec<f64>], eigenvalues: &[f64], total_variance: f64) -> Sequence<'a> {
    let weights: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / l).collect();
    Sequence {
        rows: scores.iter().map(Vec::as_slice).collect(),
        cusum: score_cusum(scores, eigenvalues),
        weights,
        limit_eigs: vec![1.0; eigenvalues.len()],
        total_variance,
    }
}

fn function_segments(before: &[SrvfSample], after: &[SrvfSample]) -> (SegmentMean, SegmentMean, Vec<f64>) {
    let (b, a) = (srvf_average(before), srvf_average(after));
    let delta_q: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let delta = SrvfSample::from_parts(*a.grid(), delta_q, a.f0() - b.f0());
    (
        SegmentMean::Function(srvf_inverse(&b)),
        SegmentMean::Function(srvf_inverse(&a)),
        srvf_inverse(&delta).into_values(),
    )
}

fn warp_segments(before: &[ShootingVector], after: &[ShootingVector]) -> Result<(SegmentMean, SegmentMean, Vec<f64>)> {
    let wb = from_psi(&exp_map(&mean_shooting_vector(before)?))?;
    let wa = from_psi(&exp_map(&mean_shooting_vector(after)?))?;
    let delta = wa.values().iter().zip(wb.values()).map(|(x, y)| x - y).collect();
    Ok((SegmentMean::Warp(wb), SegmentMean::Warp(wa), delta))
}

fn with_segments(mut r: ChangepointResult, seg: (SegmentMean, SegmentMean, Vec<f64>)) -> ChangepointResult {
    r.mean_before = Some(seg.0);
    r.mean_after = Some(seg.1);
    r.delta_hat = Some(seg.2);
    r
}

/// One alignment of a sample, shared by the four elastic tests.
#[derive(Debug, Clone)]
pub struct ElasticAnalysis {
    functions: Vec<FunctionSample>,
    cfg: TestConfig,
    alignment: AlignmentResult,
    warp_mean: WarpMean,
    shooting: Vec<ShootingVector>,
}

impl ElasticAnalysis {
    /// Aligns the sample and computes shooting vectors of the centered warps
    /// at their Karcher mean.
    pub fn new(fs: &[FunctionSample], cfg: &TestConfig) -> Result<Self> {
        cfg.validate()?;
        check_sample(fs)?;
        let align = cfg.align_config();
        let alignment = karcher_mean_align(fs, &align)?;
        let warp_mean = karcher_mean_warps(&alignment.warps, align.warp_mean, cfg.execution)?;
        let shooting = shooting_vectors(&alignment.warps, &warp_mean.psi, cfg.execution)?;
        Ok(Self {
            functions: fs.to_vec(),
            cfg: *cfg,
            alignment,
            warp_mean,
            shooting,
        })
    }

    pub fn alignment(&self) -> &AlignmentResult {
        &self.alignment
    }

    pub fn warp_mean(&self) -> &WarpMean {
        &self.warp_mean
    }

    pub fn shooting_vectors(&self) -> &[ShootingVector] {
        &self.shooting
    }

    pub fn config(&self) -> &TestConfig {
        &self.cfg
    }

    fn converged(&self) -> bool {
        self.alignment.converged && self.warp_mean.converged
    }

    pub fn run(&self, method: Method) -> Result<ChangepointResult> {
        match method {
            Method::ElasticAmp => self.amplitude_ff(),
            Method::ElasticPhase => self.phase_ff(),
            Method::ElasticAmpPca => self.amplitude_pca(),
            Method::ElasticPhasePca => self.phase_pca(),
            Method::CrossSectional => cross_sectional_test(&self.functions, &self.cfg),
        }
    }

    /// Fully functional amplitude test on the aligned SRVFs.
    pub fn amplitude_ff(&self) -> Result<ChangepointResult> {
        let ar = &self.alignment;
        let rows: Vec<&[f64]> = ar.aligned_q.iter().map(SrvfSample::values).collect();
        let weights = trapz_weights(ar.grid().len());
        let realigned;
        let prefix: Option<Vec<&[f64]>> = match self.cfg.prefix_mode {
            PrefixMode::GlobalAlignment => None,
            PrefixMode::Realign => {
                realigned = prefix_means_realigned(&self.functions, &self.cfg.align_config())?;
                Some(realigned.iter().map(SrvfSample::values).collect())
            }
        };
        let seq = functional_sequence(rows, weights, prefix.as_deref())?;
        let r = calibrate(Method::ElasticAmp, &seq, &self.cfg, self.converged())?;
        Ok(match r.k_star {
            Some(k) => with_segments(r, function_segments(&ar.aligned_q[..k], &ar.aligned_q[k..])),
            None => r,
        })
    }

    /// Fully functional phase test on the shooting vectors.
    pub fn phase_ff(&self) -> Result<ChangepointResult> {
        let rows: Vec<&[f64]> = self.shooting.iter().map(ShootingVector::values).collect();
        let weights = trapz_weights(self.alignment.grid().len());
        let prefix_vs;
        let prefix: Option<Vec<&[f64]>> = match self.cfg.prefix_mode {
            PrefixMode::GlobalAlignment => None,
            PrefixMode::Realign => {
                let n = self.shooting.len();
                let warps = &self.alignment.warps;
                let base = &self.warp_mean.psi;
                let wm = self.cfg.align.warp_mean;
                prefix_vs = par::try_map_range(self.cfg.execution, n, |k| {
                    let m = karcher_mean_warps(&warps[..=k], wm, Execution::Sequential)?;
                    log_map(&m.psi, base)
                })?;
                Some(prefix_vs.iter().map(ShootingVector::values).collect())
            }
        };
        let seq = functional_sequence(rows, weights, prefix.as_deref())?;
        let r = calibrate(Method::ElasticPhase, &seq, &self.cfg, self.converged())?;
        match r.k_star {
            Some(k) => Ok(with_segments(r, warp_segments(&self.shooting[..k], &self.shooting[k..])?)),
            None => Ok(r),
        }
    }

    /// Amplitude test on vertical fPCA scores.
    pub fn amplitude_pca(&self) -> Result<ChangepointResult> {
        let fp = vertical_fpca(&self.alignment, self.cfg.selector)?;
        let r = self.pca_result(Method::ElasticAmpPca, &fp.scores, &fp.eigenvalues, fp.total_variance())?;
        let ar = &self.alignment;
        let k = r.k_star.expect("PCA results are never degenerate");
        Ok(with_segments(r, function_segments(&ar.aligned_q[..k], &ar.aligned_q[k..])))
    }

    /// Phase test on horizontal fPCA scores.
    pub fn phase_pca(&self) -> Result<ChangepointResult> {
        let fp = horizontal_fpca(&self.shooting, self.cfg.selector, self.cfg.center_horizontal)?;
        let r = self.pca_result(Method::ElasticPhasePca, &fp.scores, &fp.eigenvalues, fp.total_variance())?;
        let k = r.k_star.expect("PCA results are never degenerate");
        Ok(with_segments(r, warp_segments(&self.shooting[..k], &self.shooting[k..])?))
    }

    fn pca_result(
        &self,
        method: Method,
        scores: &[Vec<f64>],
        eigenvalues: &[f64],
        total_variance: f64,
    ) -> Result<ChangepointResult> {
        if eigenvalues.is_empty() || total_variance < VARIANCE_FLOOR {
            return Err(Error::degenerate(format!(
                "{method}: no principal component has positive variance"
            )));
        }
        debug_assert!(eigenvalues.iter().all(|&l| l > EIGEN_FLOOR));
        let seq = score_sequence(scores, eigenvalues, total_variance);
        let mut r = calibrate(method, &seq, &self.cfg, self.converged())?;
        r.num_components = Some(eigenvalues.len());
        Ok(r)
    }
}

/// Fully functional amplitude test.
pub fn amplitude_test_ff(fs: &[FunctionSample], cfg: &TestConfig) -> Result<ChangepointResult> {
    ElasticAnalysis::new(fs, cfg)?.amplitude_ff()
}

/// Fully functional phase test.
pub fn phase_test_ff(fs: &[FunctionSample], cfg: &TestConfig) -> Result<ChangepointResult> {
    ElasticAnalysis::new(fs, cfg)?.phase_ff()
}

/// Amplitude test on vertical fPCA scores.
pub fn amplitude_test_pca(fs: &[FunctionSample], cfg: &TestConfig) -> Result<ChangepointResult> {
    ElasticAnalysis::new(fs, cfg)?.amplitude_pca()
}

/// Phase test on horizontal fPCA scores.
pub fn phase_test_pca(fs: &[FunctionSample], cfg: &TestConfig) -> Result<ChangepointResult> {
    ElasticAnalysis::new(fs, cfg)?.phase_pca()
}

/// Baseline CUSUM on raw function values, without alignment.
pub fn cross_sectional_test(fs: &[FunctionSample], cfg: &TestConfig) -> Result<ChangepointResult> {
    cfg.validate()?;
    check_sample(fs)?;
    let rows: Vec<&[f64]> = fs.iter().map(FunctionSample::values).collect();
    let weights = trapz_weights(fs[0].values().len());
    let seq = functional_sequence(rows, weights, None)?;
    let r = calibrate(Method::CrossSectional, &seq, cfg, true)?;
    let Some(k) = r.k_star else { return Ok(r) };
    let grid = *fs[0].grid();
    let avg = |part: &[FunctionSample]| -> Result<FunctionSample> {
        let values = crate::function::order_free_mean(part.iter().map(FunctionSample::values));
        FunctionSample::new(grid, values)
    };
    let (b, a) = (avg(&fs[..k])?, avg(&fs[k..])?);
    let delta = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    Ok(with_segments(r, (SegmentMean::Function(b), SegmentMean::Function(a), delta)))
}

/// Runs one method on a sample.
pub fn run_test(method: Method, fs: &[FunctionSample], cfg: &TestConfig) -> Result<ChangepointResult> {
    match method {
        Method::CrossSectional => cross_sectional_test(fs, cfg),
        m => ElasticAnalysis::new(fs, cfg)?.run(m),
    }
}

/// Prefix means of the global alignment, re-exported for convenience.
pub fn aligned_prefix_means(ar: &AlignmentResult) -> Vec<SrvfSample> {
    prefix_means(ar)
}
