//! Seeded generators for the three simulation designs.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with normal
//! draws from `rand_distr::Normal` and uniform draws from `random_range`, so a
//! seed reproduces the same dataset on every platform. Draws are taken
//! function by function in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{FunctionSample, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// Gaussian peaks on `[-6, 6]` whose height mean moves from 1 to 1.5.
    Amplitude,
    /// Warped two-peak curves on `[-3, 3]` whose warp parameter mean moves by
    /// [`PHASE_SHIFT`].
    Phase,
    /// Random trigonometric polynomials on `[0, 1]` with redrawn mean
    /// coefficients.
    Sensitivity,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::Amplitude, Design::Phase, Design::Sensitivity];

    pub fn name(self) -> &'static str {
        match self {
            Design::Amplitude => "amplitude",
            Design::Phase => "phase",
            Design::Sensitivity => "sensitivity",
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Height mean before and after the amplitude change.
pub const AMPLITUDE_MEANS: (f64, f64) = (1.0, 1.5);
pub const AMPLITUDE_HEIGHT_SD: f64 = 0.05;
pub const AMPLITUDE_LOCATION_SD: f64 = 1.25;
pub const PHASE_HEIGHT_SD: f64 = 0.25;
/// Added to the warp parameter after the phase change.
pub const PHASE_SHIFT: f64 = 1.0;
pub const SENSITIVITY_SD: f64 = 0.08;
/// Smallest L1 distance between pre- and post-change sensitivity means.
pub const SENSITIVITY_MIN_CHANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub design: Design,
    pub n: usize,
    /// Index of the last pre-change function (1-based).
    pub changepoint: usize,
    pub num_points: usize,
    pub seed: u64,
    /// `false` generates the whole sample from the pre-change law.
    pub change: bool,
}

impl SimSpec {
    pub fn new(design: Design, seed: u64) -> Self {
        Self {
            design,
            n: 75,
            changepoint: 30,
            num_points: 101,
            seed,
            change: true,
        }
    }

    pub fn null(design: Design, seed: u64) -> Self {
        Self {
            change: false,
            ..Self::new(design, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.changepoint < 1 || self.changepoint >= self.n {
            return Err(Error::invalid(format!(
                "changepoint must satisfy 1 ≤ k < n, got k = {} with n = {}",
                self.changepoint, self.n
            )));
        }
        if self.num_points < 21 {
            return Err(Error::invalid("simulated grids need at least 21 points"));
        }
        Ok(())
    }

    fn post_change(&self, i: usize) -> bool {
        self.change && i >= self.changepoint
    }
}

/// Overrides used by tests to pin random parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimHooks {
    /// Replace every within-segment random draw by its mean.
    pub zero_variance: bool,
    /// Fixed `[a0, a1, b0, b1]` means before and after the change in the
    /// sensitivity design.
    pub sensitivity_means: Option<([f64; 4], [f64; 4])>,
}

/// Warp of `[-3, 3]` with parameter `a`: `6 (e^{a(t+3)/6} - 1) / (e^a - 1) - 3`,
/// the identity at `a = 0`.
pub fn phase_warp(a: f64, t: f64) -> f64 {
    if a == 0.0 {
        return t;
    }
    6.0 * ((a * (t + 3.0) / 6.0).exp_m1() / a.exp_m1()) - 3.0
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite standard deviation")
}

fn labelled(grid: Grid, i: usize, f: impl Fn(f64) -> f64) -> Result<FunctionSample> {
    let values = grid.original_points().into_iter().map(f).collect();
    Ok(FunctionSample::new(grid, values)?.with_label((i + 1).to_string()))
}

fn gen_amplitude(spec: &SimSpec, hooks: &SimHooks, rng: &mut ChaCha8Rng) -> Result<Vec<FunctionSample>> {
    let grid = Grid::new(spec.num_points, -6.0, 6.0)?;
    let loc = normal(0.0, AMPLITUDE_LOCATION_SD);
    (0..spec.n)
        .map(|i| {
            let mz = if spec.post_change(i) { AMPLITUDE_MEANS.1 } else { AMPLITUDE_MEANS.0 };
            let (z, a): (f64, f64) = (
                normal(mz, AMPLITUDE_HEIGHT_SD).sample(rng),
                loc.sample(rng),
            );
            let (z, a) = if hooks.zero_variance { (mz, 0.0) } else { (z, a) };
            labelled(grid, i, |t| z * (-(t - a).powi(2) / 2.0).exp())
        })
        .collect()
}

fn gen_phase(spec: &SimSpec, hooks: &SimHooks, rng: &mut ChaCha8Rng) -> Result<Vec<FunctionSample>> {
    let grid = Grid::new(spec.num_points, -3.0, 3.0)?;
    let height = normal(1.0, PHASE_HEIGHT_SD);
    (0..spec.n)
        .map(|i| {
            let shift = if spec.post_change(i) { PHASE_SHIFT } else { 0.0 };
            let z1: f64 = height.sample(rng);
            let z2: f64 = height.sample(rng);
            let u: f64 = rng.random_range(-1.0..1.0);
            let (z1, z2, a) = if hooks.zero_variance {
                (1.0, 1.0, shift)
            } else {
                (z1, z2, u + shift)
            };
            let y = |t: f64| z1 * (-(t - 1.5).powi(2) / 2.0).exp() + z2 * (-(t + 1.5).powi(2) / 2.0).exp();
            labelled(grid, i, |t| y(phase_warp(a, t)))
        })
        .collect()
}

fn sensitivity_means(hooks: &SimHooks, rng: &mut ChaCha8Rng) -> ([f64; 4], [f64; 4]) {
    let mut draw = || -> [f64; 4] { std::array::from_fn(|_| rng.random_range(-1.0..1.0)) };
    let pre = draw();
    let post = loop {
        let cand = draw();
        let l1: f64 = pre.iter().zip(&cand).map(|(a, b)| (a - b).abs()).sum();
        if l1 >= SENSITIVITY_MIN_CHANGE {
            break cand;
        }
    };
    hooks.sensitivity_means.unwrap_or((pre, post))
}

fn gen_sensitivity(spec: &SimSpec, hooks: &SimHooks, rng: &mut ChaCha8Rng) -> Result<Vec<FunctionSample>> {
    let grid = Grid::new(spec.num_points, 0.0, 1.0)?;
    let (pre, post) = sensitivity_means(hooks, rng);
    let tau = std::f64::consts::TAU;
    (0..spec.n)
        .map(|i| {
            let m = if spec.post_change(i) { post } else { pre };
            let c: [f64; 4] = std::array::from_fn(|l| normal(m[l], SENSITIVITY_SD).sample(rng));
            let [a0, a1, b0, b1] = if hooks.zero_variance { m } else { c };
            labelled(grid, i, |t| {
                a0 * (tau * t).cos() + b0 * (tau * t).sin() + a1 * (2.0 * tau * t).cos() + b1 * (2.0 * tau * t).sin()
            })
        })
        .collect()
}

/// Generates a dataset with test overrides.
pub fn generate_with(spec: &SimSpec, hooks: &SimHooks) -> Result<Vec<FunctionSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.design {
        Design::Amplitude => gen_amplitude(spec, hooks, &mut rng),
        Design::Phase => gen_phase(spec, hooks, &mut rng),
        Design::Sensitivity => gen_sensitivity(spec, hooks, &mut rng),
    }
}

pub fn generate(spec: &SimSpec) -> Result<Vec<FunctionSample>> {
    generate_with(spec, &SimHooks::default())
}

pub fn gen_amplitude_change(spec: &SimSpec) -> Result<Vec<FunctionSample>> {
    generate(&SimSpec { design: Design::Amplitude, ..*spec })
}

pub fn gen_phase_change(spec: &SimSpec) -> Result<Vec<FunctionSample>> {
    generate(&SimSpec { design: Design::Phase, ..*spec })
}

pub fn gen_sensitivity_change(spec: &SimSpec) -> Result<Vec<FunctionSample>> {
    generate(&SimSpec { design: Design::Sensitivity, ..*spec })
}

/// The design of `spec` without its change.
pub fn gen_null(spec: &SimSpec) -> Result<Vec<FunctionSample>> {
    generate(&SimSpec { change: false, ..*spec })
}

/// Seed of replicate `r` in a study seeded with `seed`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add(r as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero() -> SimHooks {
        SimHooks {
            zero_variance: true,
            ..SimHooks::default()
        }
    }

    #[test]
    fn spec_validation() {
        let s = SimSpec::new(Design::Amplitude, 0);
        assert!(s.validate().is_ok());
        assert!(SimSpec { changepoint: 0, ..s }.validate().is_err());
        assert!(SimSpec { changepoint: 75, ..s }.validate().is_err());
        assert!(SimSpec { num_points: 20, ..s }.validate().is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        for d in Design::ALL {
            let a = generate(&SimSpec::new(d, 17)).unwrap();
            let b = generate(&SimSpec::new(d, 17)).unwrap();
            let c = generate(&SimSpec::new(d, 18)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
            assert_eq!(a.len(), 75);
            assert_eq!(a[29].label(), Some("30"));
        }
    }

    #[test]
    fn pinned_amplitude_is_standard_gaussian() {
        let fs = generate_with(&SimSpec::null(Design::Amplitude, 3), &zero()).unwrap();
        let grid = *fs[0].grid();
        assert_eq!(grid.domain(), (-6.0, 6.0));
        for f in &fs {
            for (v, t) in f.values().iter().zip(grid.original_points()) {
                assert!((v - (-t * t / 2.0).exp()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn post_change_heights_average_one_and_a_half() {
        let spec = SimSpec::new(Design::Amplitude, 11);
        let fs = gen_amplitude_change(&spec).unwrap();
        // the peak may sit between grid points or outside [-6, 6]; use a fine grid
        let fine = generate(&SimSpec { num_points: 2001, ..spec }).unwrap();
        assert_eq!(fine.len(), fs.len());
        let maxes: Vec<f64> = fine[30..]
            .iter()
            .map(|f| f.values().iter().copied().fold(f64::MIN, f64::max))
            .collect();
        let mean = maxes.iter().sum::<f64>() / maxes.len() as f64;
        let se = AMPLITUDE_HEIGHT_SD / (45f64).sqrt();
        // peaks centered beyond ±6 lose height; allow for the rare clipped one
        assert!((mean - 1.5).abs() <= 3.0 * se + 0.01, "{mean}");
    }

    #[test]
    fn phase_warp_closed_form() {
        assert_eq!(phase_warp(0.0, 1.3), 1.3);
        for a in [-0.9, 0.3, 1.0, 1.9] {
            assert!((phase_warp(a, -3.0) + 3.0).abs() < 1e-14);
            assert!((phase_warp(a, 3.0) - 3.0).abs() < 1e-14);
        }
        let direct = 6.0 * ((0.5f64.exp() - 1.0) / (1f64.exp() - 1.0)) - 3.0;
        assert!((phase_warp(1.0, 0.0) - direct).abs() < 1e-14);
        assert!((phase_warp(1.0, 0.0) + 0.734756).abs() < 1e-6);
    }

    #[test]
    fn phase_design_warps_are_valid() {
        let fs = generate_with(&SimSpec::null(Design::Phase, 1), &zero()).unwrap();
        let base = &fs[0];
        assert!(fs.iter().all(|f| f.values() == base.values()));
        let grid = Grid::new(101, -3.0, 3.0).unwrap();
        for a in [-1.0, -0.2, 0.7, 2.0] {
            let g = crate::warping::Warping::from_fn(Grid::unit(101).unwrap(), |t| {
                grid.to_unit(phase_warp(a, grid.to_original(t)))
            })
            .unwrap();
            assert!(crate::warping::Warping::new(*g.grid(), g.values().to_vec()).is_ok());
        }
    }

    #[test]
    fn sensitivity_noiseless_and_mean() {
        let hooks = SimHooks {
            zero_variance: true,
            sensitivity_means: Some(([0.0; 4], [0.0; 4])),
        };
        let fs = generate_with(&SimSpec::new(Design::Sensitivity, 2), &hooks).unwrap();
        assert!(fs.iter().all(|f| f.values().iter().all(|v| v.abs() < 1e-15)));

        let hooks = SimHooks {
            zero_variance: false,
            sensitivity_means: Some(([1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])),
        };
        let spec = SimSpec { n: 400, changepoint: 200, ..SimSpec::new(Design::Sensitivity, 9) };
        let fs = generate_with(&spec, &hooks).unwrap();
        let grid = *fs[0].grid();
        // sd of f(t) is 0.08 sqrt(Σ basis²) ≤ 0.08·sqrt(2)
        let se = SENSITIVITY_SD * 2f64.sqrt() / (400f64).sqrt();
        for (j, t) in grid.points().into_iter().enumerate() {
            let m = fs.iter().map(|f| f.values()[j]).sum::<f64>() / 400.0;
            assert!((m - (std::f64::consts::TAU * t).cos()).abs() < 3.0 * se, "{j} {m}");
        }
        let v = fs[0].values();
        let noiseless = generate_with(&spec, &SimHooks { zero_variance: true, ..hooks }).unwrap();
        let w = noiseless[0].values();
        assert!((w[0] - w[w.len() - 1]).abs() < 1e-12);
        assert_ne!(v, w);
    }

    #[test]
    fn sensitivity_change_is_large_enough() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = sensitivity_means(&SimHooks::default(), &mut rng);
            let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            assert!(l1 >= SENSITIVITY_MIN_CHANGE);
        }
    }

    #[test]
    fn null_has_no_change() {
        let spec = SimSpec::new(Design::Amplitude, 4);
        let fs = generate_with(&SimSpec { change: false, ..spec }, &zero()).unwrap();
        assert!(fs.iter().all(|f| f.values() == fs[0].values()));
        assert_eq!(gen_null(&spec).unwrap(), generate(&SimSpec::null(Design::Amplitude, 4)).unwrap());
    }
}
