//! Geometry of warping functions through their square-root derivative
//! `ψ = sqrt(γ')`, which lies on the positive orthant of the unit L² sphere.
//!
//! Provides the arc-length phase distance, exponential and log maps, the
//! intrinsic (Karcher) mean of a set of warps and shooting vectors in a single
//! tangent space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{cumtrapz, order_free_mean, order_free_sum, trapz_inner, trapz_norm_sq, Grid};
use crate::par::{self, Execution};
use crate::warping::Warping;

/// Below this angle `log_map` switches to the first-order series.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Inputs this close to antipodal are rejected by `log_map`.
pub const ANTIPODAL_GUARD: f64 = 1e-6;

/// Point on the unit Hilbert sphere representing a warp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSample {
    grid: Grid,
    values: Vec<f64>,
}

impl PsiSample {
    /// Normalizes `values` to unit L² norm.
    pub fn normalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("ψ length does not match grid"));
        }
        let norm = trapz_norm_sq(&values).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numerical("cannot normalize a zero ψ".into()));
        }
        Ok(Self {
            grid,
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// `ψ ≡ 1`, the image of the identity warp.
    pub fn identity(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![1.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        trapz_norm_sq(&self.values).sqrt()
    }
}

/// Tangent vector at `base`, i.e. `∫ v ψ_base = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingVector {
    values: Vec<f64>,
    base: PsiSample,
}

impl ShootingVector {
    /// Builds a tangent vector, projecting out any component along `base`.
    pub fn new(values: Vec<f64>, base: PsiSample) -> Result<Self> {
        if values.len() != base.values.len() {
            return Err(Error::invalid("shooting vector length does not match base"));
        }
        let c = trapz_inner(&values, &base.values);
        let values = values
            .iter()
            .zip(&base.values)
            .map(|(v, p)| v - c * p)
            .collect();
        Ok(Self { values, base })
    }

    pub fn zero(base: PsiSample) -> Self {
        Self {
            values: vec![0.0; base.values.len()],
            base,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn base(&self) -> &PsiSample {
        &self.base
    }

    pub fn norm(&self) -> f64 {
        trapz_norm_sq(&self.values).max(0.0).sqrt()
    }
}

/// `ψ = sqrt(γ')`, renormalized to unit norm.
pub fn to_psi(gamma: &Warping) -> PsiSample {
    let values = gamma.derivative().into_iter().map(f64::sqrt).collect();
    PsiSample::normalized(*gamma.grid(), values)
        .expect("a strictly increasing warp has a nonzero derivative")
}

/// `γ(t) = ∫₀ᵗ ψ²`, rescaled so that `γ(1) = 1`.
pub fn from_psi(psi: &PsiSample) -> Result<Warping> {
    let sq: Vec<f64> = psi.values.iter().map(|v| v * v).collect();
    let cum = cumtrapz(&sq, psi.grid.spacing());
    Warping::repaired(psi.grid, cum)
}

fn psi_angle(a: &[f64], b: &[f64]) -> f64 {
    trapz_inner(a, b).clamp(-1.0, 1.0).acos()
}

/// Arc-length distance between the ψ-images of two warps, in `[0, π]`.
pub fn phase_distance(g1: &Warping, g2: &Warping) -> f64 {
    psi_distance(&to_psi(g1), &to_psi(g2))
}

/// Arc length between two points of the sphere.
pub fn psi_distance(p1: &PsiSample, p2: &PsiSample) -> f64 {
    psi_angle(&p1.values, &p2.values)
}

/// `exp_ψ(v) = cos(‖v‖) ψ + sin(‖v‖) v / ‖v‖`.
pub fn exp_map(v: &ShootingVector) -> PsiSample {
    let norm = v.norm();
    if norm == 0.0 {
        return v.base.clone();
    }
    let (s, c) = norm.sin_cos();
    let values = v
        .base
        .values
        .iter()
        .zip(&v.values)
        .map(|(p, x)| c * p + s * x / norm)
        .collect();
    PsiSample {
        grid: v.base.grid,
        values,
    }
}

/// Inverse exponential map of `psi1` at `base`.
pub fn log_map(psi1: &PsiSample, base: &PsiSample) -> Result<ShootingVector> {
    if psi1.values.len() != base.values.len() {
        return Err(Error::invalid("ψ samples live on different grids"));
    }
    let cos_theta = trapz_inner(&psi1.values, &base.values).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta >= std::f64::consts::PI - ANTIPODAL_GUARD {
        return Err(Error::DegenerateGeometry(format!(
            "log map undefined for antipodal points (θ = {theta})"
        )));
    }
    let factor = if theta < SMALL_ANGLE {
        1.0
    } else {
        theta / theta.sin()
    };
    let values = psi1
        .values
        .iter()
        .zip(&base.values)
        .map(|(p1, p)| factor * (p1 - cos_theta * p))
        .collect();
    Ok(ShootingVector {
        values,
        base: base.clone(),
    })
}

/// Settings for the intrinsic mean of warps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarpMeanConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub step: f64,
}

impl Default for WarpMeanConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100,
            step: 0.5,
        }
    }
}

/// Intrinsic mean of a set of warps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarpMean {
    pub mean: Warping,
    pub psi: PsiSample,
    pub iterations: usize,
    pub converged: bool,
    /// `Σ d_p²` after each accepted iteration, starting at the initializer.
    pub objective_trace: Vec<f64>,
}

fn sum_sq_dist(psis: &[PsiSample], mu: &[f64]) -> f64 {
    order_free_sum(
        psis.iter()
            .map(|p| psi_angle(&p.values, mu).powi(2))
            .collect(),
    )
}

/// Karcher mean of warps on the ψ-sphere.
///
/// Starts at the sample element with the smallest sum of squared phase
/// distances (lowest index on ties) and takes damped gradient steps along the
/// mean shooting vector; the step is halved whenever the objective would
/// increase.
pub fn karcher_mean_warps(gs: &[Warping], cfg: WarpMeanConfig, exec: Execution) -> Result<WarpMean> {
    if gs.is_empty() {
        return Err(Error::invalid("cannot average an empty set of warps"));
    }
    let grid = *gs[0].grid();
    let psis: Vec<PsiSample> = par::map_slice(exec, gs, to_psi);
    let (mut mean, start) = karcher_mean_psi(&psis, grid, cfg, exec)?;
    if mean.objective_trace.len() == 1 {
        // never left the initializer: return that warp untouched
        mean.mean = gs[start].clone();
    }
    Ok(mean)
}

pub(crate) fn karcher_mean_psi(
    psis: &[PsiSample],
    grid: Grid,
    cfg: WarpMeanConfig,
    exec: Execution,
) -> Result<(WarpMean, usize)> {
    let n = psis.len();
    let costs = par::map_range(exec, n, |i| sum_sq_dist(psis, &psis[i].values));
    let mut start = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[start] {
            start = i;
        }
    }
    let mut mu = psis[start].clone();
    let mut obj = costs[start];
    let mut trace = vec![obj];
    let mut step = cfg.step;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let logs = par::try_map_range(exec, n, |i| log_map(&psis[i], &mu))?;
        let vbar = order_free_mean(logs.iter().map(|v| v.values.as_slice()));
        let vnorm = trapz_norm_sq(&vbar).max(0.0).sqrt();
        if vnorm < cfg.tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        while step > 1e-12 {
            let scaled = ShootingVector {
                values: vbar.iter().map(|x| step * x).collect(),
                base: mu.clone(),
            };
            let cand = PsiSample::normalized(grid, exp_map(&scaled).values)?;
            let cand_obj = sum_sq_dist(psis, &cand.values);
            if cand_obj <= obj {
                mu = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent step left: stationary to working precision
            converged = true;
            break;
        }
        trace.push(obj);
    }

    let mean = WarpMean {
        mean: from_psi(&mu)?,
        psi: mu,
        iterations,
        converged,
        objective_trace: trace,
    };
    Ok((mean, start))
}

/// Shooting vectors of every warp in the tangent space at `base`.
pub fn shooting_vectors(gs: &[Warping], base: &PsiSample, exec: Execution) -> Result<Vec<ShootingVector>> {
    par::try_map_range(exec, gs.len(), |i| log_map(&to_psi(&gs[i]), base))
}

/// Mean of tangent vectors sharing a base point.
pub fn mean_shooting_vector(vs: &[ShootingVector]) -> Result<ShootingVector> {
    let first = vs
        .first()
        .ok_or_else(|| Error::invalid("no shooting vectors to average"))?;
    if vs.iter().any(|v| v.base != first.base) {
        return Err(Error::invalid("shooting vectors have different base points"));
    }
    Ok(ShootingVector {
        values: order_free_mean(vs.iter().map(|v| v.values.as_slice())),
        base: first.base.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid {
        Grid::unit(n).unwrap()
    }

    fn power_warp(n: usize, p: f64) -> Warping {
        Warping::from_fn(grid(n), |t| t.powf(p)).unwrap()
    }

    /// Smooth family `(e^{at} - 1) / (e^a - 1)`.
    fn exp_warp(n: usize, a: f64) -> Warping {
        Warping::from_fn(grid(n), |t| ((a * t).exp() - 1.0) / (a.exp() - 1.0)).unwrap()
    }

    #[test]
    fn identity_maps_to_constant_one() {
        let psi = to_psi(&Warping::identity(grid(51)));
        for &v in psi.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let back = from_psi(&PsiSample::identity(grid(51))).unwrap();
        assert!(back.max_deviation_from_identity() < 1e-14);
    }

    #[test]
    fn square_warp_psi() {
        let n = 101;
        let psi = to_psi(&power_warp(n, 2.0));
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        // before renormalization ψ = sqrt(2t); the norm of sqrt(2t) is 1
        for j in 1..n {
            let t = grid(n).point(j);
            assert!((psi.values()[j] - (2.0 * t).sqrt()).abs() < 1e-3, "j={j}");
        }
        let g = from_psi(&PsiSample::normalized(grid(n), grid(n).points().iter().map(|t| (2.0 * t).sqrt()).collect()).unwrap()).unwrap();
        for j in 0..n {
            assert!((g.values()[j] - grid(n).point(j).powi(2)).abs() < 1e-3);
        }
    }

    #[test]
    fn psi_round_trip() {
        let n = 101;
        for a in [-1.5, -0.4, 0.7, 2.0] {
            let g = exp_warp(n, a);
            let back = from_psi(&to_psi(&g)).unwrap();
            let err = back
                .values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-3, "a={a} err={err}");
        }
    }

    #[test]
    fn phase_distance_analytic() {
        let n = 1001;
        let id = Warping::identity(grid(n));
        let sq = power_warp(n, 2.0);
        // ∫ sqrt(2t) dt = 2 sqrt(2) / 3
        let expected = (2.0 * 2f64.sqrt() / 3.0).acos();
        assert!((phase_distance(&id, &sq) - expected).abs() < 1e-3);
        assert_eq!(phase_distance(&sq, &sq), 0.0);
        let other = power_warp(n, 0.7);
        assert_eq!(phase_distance(&sq, &other), phase_distance(&other, &sq));
    }

    #[test]
    fn exp_of_zero_is_base() {
        let base = to_psi(&power_warp(51, 1.4));
        let out = exp_map(&ShootingVector::zero(base.clone()));
        assert_eq!(out, base);
        let v = log_map(&base, &base).unwrap();
        assert!(v.norm() < 1e-7);
    }

    #[test]
    fn antipodal_rejected() {
        let g = grid(11);
        let p = PsiSample::identity(g);
        let neg = PsiSample {
            grid: g,
            values: vec![-1.0; 11],
        };
        assert!(matches!(log_map(&neg, &p), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn karcher_trivial_cases() {
        let g = exp_warp(51, 1.3);
        let m = karcher_mean_warps(std::slice::from_ref(&g), WarpMeanConfig::default(), Execution::Sequential).unwrap();
        assert!(phase_distance(&m.mean, &g) < 1e-6);
        let m = karcher_mean_warps(&[g.clone(), g.clone(), g.clone()], WarpMeanConfig::default(), Execution::Sequential).unwrap();
        assert_eq!(m.iterations, 1);
        assert!(phase_distance(&m.mean, &g) < 1e-6);
        assert!(karcher_mean_warps(&[], WarpMeanConfig::default(), Execution::Sequential).is_err());
    }

    #[test]
    fn karcher_of_inverse_pair_is_geodesic_midpoint() {
        let n = 201;
        let (g1, g2) = (power_warp(n, 1.5), power_warp(n, 1.0 / 1.5));
        let m = karcher_mean_warps(&[g1.clone(), g2.clone()], WarpMeanConfig::default(), Execution::Sequential).unwrap();
        let (d1, d2) = (psi_distance(&m.psi, &to_psi(&g1)), psi_distance(&m.psi, &to_psi(&g2)));
        assert!((d1 - d2).abs() <= 0.05 * d1.max(d2), "{d1} {d2}");
        // analytic oracle: ⟨ψ1, ψ2⟩ = ∫ t^(1/12) = 12/13, ⟨1, ψ_i⟩ = sqrt(1.5)/1.25,
        // the midpoint is (ψ1 + ψ2) / ‖ψ1 + ψ2‖
        let c = 1.5f64.sqrt() / 1.25;
        let mid_to_id = (2.0 * c / (2.0 + 2.0 * 12.0 / 13.0f64).sqrt()).acos();
        let got = psi_distance(&m.psi, &PsiSample::identity(grid(n)));
        assert!((got - mid_to_id).abs() < 5e-3, "{got} vs {mid_to_id}");
    }

    #[test]
    fn karcher_objective_monotone_and_first_order_optimal() {
        let n = 101;
        let gs: Vec<Warping> = [-1.8, -0.9, -0.2, 0.5, 1.3, 2.1]
            .iter()
            .map(|&a| exp_warp(n, a))
            .collect();
        let cfg = WarpMeanConfig::default();
        let m = karcher_mean_warps(&gs, cfg, Execution::Sequential).unwrap();
        assert!(m.converged);
        for w in m.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        let vs = shooting_vectors(&gs, &m.psi, Execution::Sequential).unwrap();
        assert!(mean_shooting_vector(&vs).unwrap().norm() <= cfg.tol);
        for (g, v) in gs.iter().zip(&vs) {
            assert!((v.norm() - psi_distance(&to_psi(g), &m.psi)).abs() < 1e-8);
            assert!(trapz_inner(v.values(), m.psi.values()).abs() < 1e-6);
        }
        let own = shooting_vectors(std::slice::from_ref(&m.mean), &m.psi, Execution::Sequential).unwrap();
        assert!(own[0].norm() < 1e-3);
    }

    fn random_psi(n: usize, coef: &[f64]) -> PsiSample {
        let g = grid(n);
        let vals = g
            .points()
            .iter()
            .map(|&t| {
                let mut s = 1.0;
                for (k, c) in coef.iter().enumerate() {
                    s += c * ((k + 1) as f64 * std::f64::consts::PI * t).sin();
                }
                s.abs() + 0.05
            })
            .collect();
        PsiSample::normalized(g, vals).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exp_log_inverse(c1 in proptest::collection::vec(-0.9f64..0.9, 3),
                           c2 in proptest::collection::vec(-0.9f64..0.9, 3)) {
            let (a, b) = (random_psi(101, &c1), random_psi(101, &c2));
            let v = log_map(&a, &b).unwrap();
            prop_assert!((v.norm() - psi_distance(&a, &b)).abs() < 1e-8);
            let back = exp_map(&v);
            prop_assert!((back.norm() - 1.0).abs() < 1e-6);
            let err = back.values().iter().zip(a.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-6);
        }

        #[test]
        fn log_exp_inverse(coef in proptest::collection::vec(-1.0f64..1.0, 4), len in 0.0f64..1.0) {
            let base = random_psi(101, &[0.3, -0.2]);
            let g = grid(101);
            let raw: Vec<f64> = g.points().iter().map(|&t| {
                coef.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * 2.0 * t).cos()).sum::<f64>()
            }).collect();
            let v = ShootingVector::new(raw, base.clone()).unwrap();
            prop_assume!(v.norm() > 1e-6);
            let scaled: Vec<f64> = v.values().iter().map(|x| x * len / v.norm()).collect();
            let v = ShootingVector::new(scaled, base.clone()).unwrap();
            let p = exp_map(&v);
            prop_assert!((p.norm() - 1.0).abs() < 1e-6);
            let back = log_map(&p, &base).unwrap();
            let err = back.values().iter().zip(v.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-6, "err {}", err);
        }

        #[test]
        fn triangle_inequality(c1 in proptest::collection::vec(-0.9f64..0.9, 3),
                               c2 in proptest::collection::vec(-0.9f64..0.9, 3),
                               c3 in proptest::collection::vec(-0.9f64..0.9, 3)) {
            let (a, b, c) = (random_psi(51, &c1), random_psi(51, &c2), random_psi(51, &c3));
            prop_assert!(psi_distance(&a, &c) <= psi_distance(&a, &b) + psi_distance(&b, &c) + 1e-8);
        }

        #[test]
        fn from_psi_is_valid_warp(c in proptest::collection::vec(-0.9f64..0.9, 4)) {
            let w = from_psi(&random_psi(61, &c)).unwrap();
            prop_assert!(Warping::new(*w.grid(), w.values().to_vec()).is_ok());
        }
    }
}
