//! Warping functions of the unit interval and their action on functions and
//! SRVFs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::{gradient, interp_sorted, interp_unit, FunctionSample, Grid, SrvfSample};

/// Step used to lift non-increasing samples when repairing a warp.
pub const MONOTONE_EPS: f64 = 1e-9;

/// Boundary-pinned, strictly increasing reparameterization `γ` of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warping {
    grid: Grid,
    values: Vec<f64>,
}

impl Warping {
    /// Validates the boundary pins and strict monotonicity.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "warping has {} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return Err(Error::invalid("warping must satisfy γ(0) = 0 and γ(1) = 1"));
        }
        if let Some(j) = values.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "warping is not strictly increasing at index {j}"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Builds a warp from arbitrary samples: non-increasing steps are lifted by
    /// [`MONOTONE_EPS`] and the result is rescaled onto `[0, 1]`.
    pub fn repaired(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("warping length does not match grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite warping value".into()));
        }
        for j in 1..values.len() {
            if values[j] <= values[j - 1] {
                values[j] = values[j - 1] + MONOTONE_EPS;
            }
        }
        let (lo, hi) = (values[0], values[values.len() - 1]);
        let span = hi - lo;
        for v in values.iter_mut() {
            *v = (*v - lo) / span;
        }
        let last = values.len() - 1;
        values[0] = 0.0;
        values[last] = 1.0;
        // rescaling can collapse adjacent values that were only EPS apart
        for j in 1..last {
            if values[j] <= values[j - 1] {
                values[j] = f64::from_bits(values[j - 1].to_bits() + 1);
            }
        }
        if values[last - 1] >= 1.0 {
            return Err(Error::Numerical("warping repair failed".into()));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>) -> Self {
        Self { grid, values }
    }

    pub fn identity(grid: Grid) -> Self {
        let mut values = grid.points();
        let last = values.len() - 1;
        values[last] = 1.0;
        Self { grid, values }
    }

    /// Samples a closed-form warp of `[0, 1]` and repairs rounding at the ends.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().into_iter().map(f).collect();
        Self::repaired(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates `γ(t)` by linear interpolation.
    pub fn eval(&self, t: f64) -> f64 {
        interp_unit(&self.values, t)
    }

    /// Finite-difference derivative, clamped at zero.
    pub fn derivative(&self) -> Vec<f64> {
        gradient(&self.values, self.grid.spacing())
            .into_iter()
            .map(|d| d.max(0.0))
            .collect()
    }

    /// `self ∘ inner`, i.e. `t ↦ self(inner(t))`.
    pub fn compose(&self, inner: &Warping) -> Result<Warping> {
        if self.values.len() != inner.values.len() {
            return Err(Error::invalid("cannot compose warps on different grids"));
        }
        let values = inner.values.iter().map(|&t| self.eval(t)).collect();
        Warping::repaired(self.grid, values)
    }

    /// Largest deviation from the identity.
    pub fn max_deviation_from_identity(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.grid.point(j)).abs())
            .fold(0.0, f64::max)
    }

    /// Warp values expressed in the original domain of the grid.
    pub fn original_values(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.grid.to_original(v)).collect()
    }
}

/// SRVF group action `(q, γ) = (q ∘ γ) sqrt(γ')`; `f0` is unchanged.
pub fn group_action(q: &SrvfSample, gamma: &Warping) -> Result<SrvfSample> {
    if q.values().len() != gamma.values.len() {
        return Err(Error::invalid("SRVF and warp must share a grid"));
    }
    let dgamma = gamma.derivative();
    let values = gamma
        .values
        .iter()
        .zip(&dgamma)
        .map(|(&g, &dg)| interp_unit(q.values(), g) * dg.sqrt())
        .collect();
    Ok(SrvfSample::from_parts(*q.grid(), values, q.f0()))
}

/// Composition `f ∘ γ` by linear interpolation.
pub fn warp_function(f: &FunctionSample, gamma: &Warping) -> Result<FunctionSample> {
    if f.values().len() != gamma.values.len() {
        return Err(Error::invalid("function and warp must share a grid"));
    }
    let values = gamma
        .values
        .iter()
        .map(|&g| interp_unit(f.values(), g))
        .collect();
    let out = FunctionSample::new(*f.grid(), values)?;
    Ok(match f.label() {
        Some(l) => out.with_label(l),
        None => out,
    })
}

/// Numerical inverse: swaps the axes of the piecewise-linear warp and
/// re-samples on the uniform grid.
pub fn invert_warp(gamma: &Warping) -> Warping {
    let t = gamma.grid.points();
    let values = t
        .iter()
        .map(|&x| interp_sorted(&gamma.values, &t, x))
        .collect();
    Warping::repaired(gamma.grid, values).unwrap_or_else(|_| Warping::identity(gamma.grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{srvf_transform, trapz_norm_sq};
    use approx::assert_abs_diff_eq;

    fn g(n: usize) -> Grid {
        Grid::unit(n).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Warping::new(g(3), vec![0.0, 0.5, 1.0]).is_ok());
        assert!(Warping::new(g(3), vec![0.0, 0.0, 1.0]).is_err());
        assert!(Warping::new(g(3), vec![0.1, 0.5, 1.0]).is_err());
        let r = Warping::repaired(g(4), vec![0.2, 0.2, 0.1, 0.9]).unwrap();
        assert!(Warping::new(g(4), r.values().to_vec()).is_ok());
    }

    #[test]
    fn identity_action_is_noop() {
        let f = FunctionSample::from_fn(g(51), |t| (4.0 * t).sin()).unwrap();
        let q = srvf_transform(&f).unwrap();
        let out = group_action(&q, &Warping::identity(g(51))).unwrap();
        for (a, b) in out.values().iter().zip(q.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let zero = SrvfSample::new(g(51), vec![0.0; 51], 1.0).unwrap();
        let gam = Warping::from_fn(g(51), |t| t.powf(1.7)).unwrap();
        assert!(group_action(&zero, &gam)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn action_on_constant_srvf() {
        let n = 101;
        let one = SrvfSample::new(g(n), vec![1.0; n], 0.0).unwrap();
        let gam = Warping::from_fn(g(n), |t| t * t).unwrap();
        let out = group_action(&one, &gam).unwrap();
        for j in 0..n {
            assert_abs_diff_eq!(out.values()[j], (2.0 * g(n).point(j)).sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn warp_function_examples() {
        let n = 41;
        let line = FunctionSample::from_fn(g(n), |t| t).unwrap();
        let sq = Warping::from_fn(g(n), |t| t * t).unwrap();
        let out = warp_function(&line, &sq).unwrap();
        for j in 0..n {
            assert_abs_diff_eq!(out.values()[j], g(n).point(j).powi(2), epsilon = 1e-14);
        }
        let c = FunctionSample::from_fn(g(n), |_| 3.0).unwrap();
        assert_eq!(warp_function(&c, &sq).unwrap().values(), c.values());
        let same = warp_function(&line, &Warping::identity(g(n))).unwrap();
        assert_eq!(same.values(), line.values());
    }

    #[test]
    fn inverse_examples() {
        let n = 101;
        let id = Warping::identity(g(n));
        assert_eq!(invert_warp(&id).values(), id.values());

        let sq = Warping::from_fn(g(n), |t| t * t).unwrap();
        let inv = invert_warp(&sq);
        // linear interpolation of sqrt is worst next to the origin
        let err = (0..n)
            .map(|j| (inv.values()[j] - g(n).point(j).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "{err}");
        let interior = (10..n)
            .map(|j| (inv.values()[j] - g(n).point(j).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(interior < 1e-4, "{interior}");

        let round = sq.compose(&inv).unwrap();
        assert!(round.max_deviation_from_identity() <= 1e-6);
    }

    #[test]
    fn smooth_inverse_both_orders() {
        let n = 201;
        let gam = Warping::from_fn(g(n), |t| (t + 0.3 * t * (1.0 - t)).powf(1.2)).unwrap();
        let inv = invert_warp(&gam);
        assert!(gam.compose(&inv).unwrap().max_deviation_from_identity() <= 1e-6);
        // the other order re-interpolates a curved γ between inverse samples
        assert!(inv.compose(&gam).unwrap().max_deviation_from_identity() <= 1e-3);
    }

    #[test]
    fn action_preserves_norm() {
        let n = 201;
        let f = FunctionSample::from_fn(g(n), |t| (-(t - 0.4).powi(2) / 0.02).exp()).unwrap();
        let q = srvf_transform(&f).unwrap();
        let gam = Warping::from_fn(g(n), |t| (0.5 * (1.0 + t)).ln() / 2f64.ln() + 1.0).unwrap();
        let out = group_action(&q, &gam).unwrap();
        let (a, b) = (trapz_norm_sq(q.values()), trapz_norm_sq(out.values()));
        assert!(((a.sqrt() - b.sqrt()) / a.sqrt()).abs() <= 1e-3, "{a} {b}");
    }
}
