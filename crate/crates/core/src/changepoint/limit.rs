//! Monte-Carlo calibration of `sup_x Σ_l λ_l B_l(x)²` for independent Brownian
//! bridges `B_l`.
//!
//! Bridges are random walks on `grid` equispaced points of `[0, 1]` with the
//! correction `B(x) = W(x) - x W(1)`. Replicates are split into chunks of
//! [`CHUNK`]; the bridge for eigenvalue index `l` in chunk `c` comes from the
//! ChaCha8 stream `(l << 32) | c` of the seed. A path therefore depends only on
//! `(seed, grid, l, replicate)`, which makes draws independent of the
//! execution mode and lets squared paths be cached across calls. Squared
//! values are stored in single precision; sums are accumulated in double.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Replicates per random stream.
pub const CHUNK: usize = 64;

/// Largest number of cached squared-bridge values (4 bytes each).
const CACHE_BUDGET: usize = 1 << 26;

/// Sorted Monte-Carlo draws of a limit statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitDistribution {
    draws: Vec<f64>,
}

impl LimitDistribution {
    pub fn from_draws(mut draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::invalid("empty limit distribution"));
        }
        if draws.iter().any(|d| d.is_nan()) {
            return Err(Error::Numerical("NaN in limit draws".into()));
        }
        draws.sort_unstable_by(f64::total_cmp);
        Ok(Self { draws })
    }

    /// Draws in ascending order.
    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Empirical quantile (inverse of the empirical CDF).
    pub fn quantile(&self, p: f64) -> f64 {
        let r = self.draws.len();
        let idx = ((p.clamp(0.0, 1.0) * r as f64).ceil() as usize).clamp(1, r) - 1;
        self.draws[idx]
    }

    /// `(1 + #{draws ≥ statistic}) / (R + 1)`.
    pub fn p_value(&self, statistic: f64) -> f64 {
        let below = self.draws.partition_point(|&d| d < statistic);
        let above = self.draws.len() - below;
        (1 + above) as f64 / (self.draws.len() + 1) as f64
    }
}

/// Free-function form of [`LimitDistribution::p_value`].
pub fn p_value(statistic: f64, dist: &LimitDistribution) -> f64 {
    dist.p_value(statistic)
}

/// Monte-Carlo settings for the limit law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitSpec {
    pub reps: usize,
    pub grid: usize,
    /// Maximal number of eigenvalues entering the sum.
    pub truncation: usize,
    pub seed: u64,
}

fn stream_id(level: usize, chunk: usize) -> u64 {
    ((level as u64) << 32) | chunk as u64
}

/// Squared bridge values for `count` replicates of chunk `chunk`, level `level`.
fn chunk_level(seed: u64, grid: usize, level: usize, chunk: usize, count: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(level, chunk));
    let dx = 1.0 / (grid - 1) as f64;
    let sd = dx.sqrt();
    let mut out = vec![0.0f32; count * grid];
    let mut walk = vec![0.0; grid];
    for r in 0..count {
        let mut w = 0.0;
        for v in walk.iter_mut().skip(1) {
            let z: f64 = StandardNormal.sample(&mut rng);
            w += sd * z;
            *v = w;
        }
        let end = walk[grid - 1];
        let row = &mut out[r * grid..(r + 1) * grid];
        for (j, (o, &v)) in row.iter_mut().zip(&walk).enumerate() {
            let b = v - j as f64 * dx * end;
            *o = (b * b) as f32;
        }
    }
    out
}

fn chunk_sizes(reps: usize) -> Vec<usize> {
    (0..reps.div_ceil(CHUNK))
        .map(|c| CHUNK.min(reps - c * CHUNK))
        .collect()
}

type BankKey = (u64, usize, usize);

struct Bank {
    levels: HashMap<BankKey, Vec<Arc<Vec<f32>>>>,
    used: usize,
}

fn bank() -> &'static Mutex<Bank> {
    static BANK: OnceLock<Mutex<Bank>> = OnceLock::new();
    BANK.get_or_init(|| {
        Mutex::new(Bank {
            levels: HashMap::new(),
            used: 0,
        })
    })
}

/// Cached squared paths for levels `0..d`, or `None` if they do not fit.
fn cached_levels(spec: &LimitSpec, d: usize, exec: Execution) -> Option<Vec<Arc<Vec<f32>>>> {
    let key = (spec.seed, spec.reps, spec.grid);
    let per_level = spec.reps * spec.grid;
    let have = {
        let b = bank().lock().unwrap_or_else(|e| e.into_inner());
        let have = b.levels.get(&key).map_or(0, Vec::len);
        if have < d && b.used + (d - have) * per_level > CACHE_BUDGET {
            return None;
        }
        have
    };
    let sizes = chunk_sizes(spec.reps);
    let fresh: Vec<Arc<Vec<f32>>> = (have..d)
        .map(|l| {
            let parts = par::map_range(exec, sizes.len(), |c| {
                chunk_level(spec.seed, spec.grid, l, c, sizes[c])
            });
            Arc::new(parts.concat())
        })
        .collect();
    let mut b = bank().lock().unwrap_or_else(|e| e.into_inner());
    let Bank { levels, used } = &mut *b;
    let entry = levels.entry(key).or_default();
    // another thread may have filled the same levels meanwhile
    for (offset, lvl) in fresh.into_iter().enumerate() {
        if entry.len() == have + offset {
            entry.push(lvl);
            *used += per_level;
        }
    }
    Some(entry[..d].to_vec())
}

/// Draws of `sup_x Σ_l eigs_l B_l(x)²`.
///
/// Eigenvalues are taken in the given order, truncated to
/// `spec.truncation`; tiny negative values (≥ -1e-10) are treated as zero.
pub fn simulate_limit_sup(eigs: &[f64], spec: &LimitSpec, exec: Execution) -> Result<LimitDistribution> {
    if eigs.is_empty() {
        return Err(Error::invalid("limit law needs at least one eigenvalue"));
    }
    if spec.reps == 0 || spec.grid < 2 || spec.truncation == 0 {
        return Err(Error::invalid("limit simulation needs reps ≥ 1, grid ≥ 2, truncation ≥ 1"));
    }
    if let Some(bad) = eigs.iter().find(|&&l| !(l >= -1e-10) || !l.is_finite()) {
        return Err(Error::invalid(format!("eigenvalue {bad} is not a nonnegative number")));
    }
    let lambdas: Vec<f64> = eigs
        .iter()
        .take(spec.truncation)
        .map(|&l| l.max(0.0))
        .collect();
    let d = lambdas.len();
    let grid = spec.grid;
    let sizes = chunk_sizes(spec.reps);

    let sup_of = |rows: &[&[f32]], count: usize, out: &mut Vec<f64>| {
        let mut acc = vec![0.0; grid];
        for r in 0..count {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (lam, lvl) in lambdas.iter().zip(rows) {
                for (a, &s) in acc.iter_mut().zip(&lvl[r * grid..(r + 1) * grid]) {
                    *a += lam * f64::from(s);
                }
            }
            out.push(acc.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    };

    let draws: Vec<f64> = if let Some(levels) = cached_levels(spec, d, exec) {
        par::map_range(exec, sizes.len(), |c| {
            let start = c * CHUNK * grid;
            let rows: Vec<&[f32]> = levels.iter().map(|l| &l[start..]).collect();
            let mut out = Vec::with_capacity(sizes[c]);
            sup_of(&rows, sizes[c], &mut out);
            out
        })
        .concat()
    } else {
        par::map_range(exec, sizes.len(), |c| {
            let owned: Vec<Vec<f32>> = (0..d)
                .map(|l| chunk_level(spec.seed, grid, l, c, sizes[c]))
                .collect();
            let rows: Vec<&[f32]> = owned.iter().map(Vec::as_slice).collect();
            let mut out = Vec::with_capacity(sizes[c]);
            sup_of(&rows, sizes[c], &mut out);
            out
        })
        .concat()
    };
    LimitDistribution::from_draws(draws)
}

/// Streaming variant that never touches the cache; used to check that both
/// paths agree.
#[cfg(test)]
fn simulate_uncached(eigs: &[f64], spec: &LimitSpec) -> Vec<f64> {
    let sizes = chunk_sizes(spec.reps);
    let mut draws = Vec::new();
    for (c, &count) in sizes.iter().enumerate() {
        let lv: Vec<Vec<f32>> = (0..eigs.len())
            .map(|l| chunk_level(spec.seed, spec.grid, l, c, count))
            .collect();
        for r in 0..count {
            let mut best = f64::NEG_INFINITY;
            for j in 0..spec.grid {
                let mut a = 0.0;
                for (lam, l) in eigs.iter().zip(&lv) {
                    a += lam * f64::from(l[r * spec.grid + j]);
                }
                best = best.max(a);
            }
            draws.push(best);
        }
    }
    draws.sort_unstable_by(f64::total_cmp);
    draws
}
