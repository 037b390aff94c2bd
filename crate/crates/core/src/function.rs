//! Functions sampled on a uniform grid, the square-root velocity transform,
//! smoothing, resampling and trapezoidal L² geometry.
//!
//! All analysis happens on the unit interval. A [`Grid`] remembers the
//! original domain so results can be reported in the units the data came in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform sampling grid on `[0, 1]` with the original domain kept as metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    num_points: usize,
    domain_min: f64,
    domain_max: f64,
}

impl Grid {
    pub fn new(num_points: usize, domain_min: f64, domain_max: f64) -> Result<Self> {
        if num_points < 3 {
            return Err(Error::invalid(format!(
                "grid needs at least 3 points, got {num_points}"
            )));
        }
        if !(domain_min.is_finite() && domain_max.is_finite() && domain_max > domain_min) {
            return Err(Error::invalid(format!(
                "invalid domain [{domain_min}, {domain_max}]"
            )));
        }
        Ok(Self {
            num_points,
            domain_min,
            domain_max,
        })
    }

    /// Grid whose original domain is already `[0, 1]`.
    pub fn unit(num_points: usize) -> Result<Self> {
        Self::new(num_points, 0.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.num_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_min, self.domain_max)
    }

    /// Spacing of the internal unit grid.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.num_points - 1) as f64
    }

    /// Internal grid point `t_j = j / (T - 1)`.
    pub fn point(&self, j: usize) -> f64 {
        j as f64 / (self.num_points - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.num_points).map(|j| self.point(j)).collect()
    }

    /// Maps an internal coordinate in `[0, 1]` to the original domain.
    pub fn to_original(&self, t: f64) -> f64 {
        self.domain_min + t * (self.domain_max - self.domain_min)
    }

    /// Maps an original-domain coordinate to `[0, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.domain_min) / (self.domain_max - self.domain_min)
    }

    /// Grid points in the original domain.
    pub fn original_points(&self) -> Vec<f64> {
        (0..self.num_points)
            .map(|j| self.to_original(self.point(j)))
            .collect()
    }

    /// Same domain, different resolution.
    pub fn with_len(&self, num_points: usize) -> Result<Self> {
        Self::new(num_points, self.domain_min, self.domain_max)
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.num_points {
            return Err(Error::invalid(format!(
                "{what} has {len} values but the grid has {} points",
                self.num_points
            )));
        }
        Ok(())
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "{what} has a non-finite value at index {j}"
        )));
    }
    Ok(())
}

/// A real-valued function observed on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSample {
    grid: Grid,
    values: Vec<f64>,
    label: Option<String>,
}

impl FunctionSample {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len(), "function")?;
        check_finite(&values, "function")?;
        Ok(Self {
            grid,
            values,
            label: None,
        })
    }

    /// Samples `f` at the original-domain grid points.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.original_points().into_iter().map(f).collect())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Square-root velocity representation `q = sign(f') sqrt(|f'|)` of a function,
/// together with the initial value `f(0)` needed to invert it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrvfSample {
    grid: Grid,
    values: Vec<f64>,
    f0: f64,
}

impl SrvfSample {
    pub fn new(grid: Grid, values: Vec<f64>, f0: f64) -> Result<Self> {
        grid.check_len(values.len(), "SRVF")?;
        check_finite(&values, "SRVF")?;
        if !f0.is_finite() {
            return Err(Error::invalid("SRVF initial value is not finite"));
        }
        Ok(Self { grid, values, f0 })
    }

    pub(crate) fn from_parts(grid: Grid, values: Vec<f64>, f0: f64) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, f0 }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Box-filter smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub window: usize,
    pub passes: usize,
}

impl SmoothingConfig {
    pub fn new(window: usize, passes: usize) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "smoothing window must be odd and positive, got {window}"
            )));
        }
        Ok(Self { window, passes })
    }
}

// ---------------------------------------------------------------------------
// numerical kernels on the unit grid
// ---------------------------------------------------------------------------

/// Derivative by centered differences with second-order one-sided endpoints.
pub fn gradient(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3, "gradient needs at least 3 samples");
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    for j in 1..n - 1 {
        d[j] = (values[j + 1] - values[j - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// Cumulative trapezoidal integral starting at zero.
pub fn cumtrapz(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Linear interpolation of samples on the uniform unit grid at `x ∈ [0, 1]`.
/// Arguments outside the interval are clamped.
#[inline]
pub fn interp_unit(values: &[f64], x: f64) -> f64 {
    let last = values.len() - 1;
    let pos = (x.clamp(0.0, 1.0)) * last as f64;
    let i = (pos.floor() as usize).min(last - 1);
    let frac = pos - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`, for increasing `xs`.
pub fn interp_sorted(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    // first index with xs[i] > x
    let i = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    if x1 == x0 {
        y0
    } else {
        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    }
}

/// Trapezoidal `∫ a b dt` on the uniform unit grid implied by the slice length.
#[inline]
pub(crate) fn trapz_inner(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let h = 1.0 / (n - 1) as f64;
    let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    h * (s - 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}

#[inline]
pub(crate) fn trapz_norm_sq(a: &[f64]) -> f64 {
    trapz_inner(a, a)
}

/// Squared trapezoidal distance `∫ (a - b)² dt`.
#[inline]
pub(crate) fn trapz_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let h = 1.0 / (n - 1) as f64;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let e0 = a[0] - b[0];
    let e1 = a[n - 1] - b[n - 1];
    h * (s - 0.5 * (e0 * e0 + e1 * e1))
}

/// Sum that does not depend on the order of its terms: they are sorted first.
/// Used wherever a result must be invariant to permuting the sample.
pub(crate) fn order_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Pointwise order-free mean of equal-length rows.
pub(crate) fn order_free_mean<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]> + Clone) -> Vec<f64> {
    let n = rows.len() as f64;
    let len = rows.clone().next().map_or(0, <[f64]>::len);
    (0..len)
        .map(|j| order_free_sum(rows.clone().map(|r| r[j]).collect()) / n)
        .collect()
}

/// Trapezoid weights on the unit grid with `n` points.
pub fn trapz_weights(n: usize) -> Vec<f64> {
    let h = 1.0 / (n - 1) as f64;
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// L² inner product by trapezoidal quadrature.
pub fn l2_inner(a: &[f64], b: &[f64], grid: &Grid) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    grid.check_len(a.len(), "vector")?;
    Ok(trapz_inner(a, b))
}

/// L² norm by trapezoidal quadrature.
pub fn l2_norm(a: &[f64], grid: &Grid) -> Result<f64> {
    Ok(l2_inner(a, a, grid)?.max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// transforms
// ---------------------------------------------------------------------------

/// Square-root velocity transform.
pub fn srvf_transform(f: &FunctionSample) -> Result<SrvfSample> {
    check_finite(&f.values, "function")?;
    let grid = f.grid;
    let df = gradient(&f.values, grid.spacing());
    let q = df.iter().map(|&d| d.signum() * d.abs().sqrt()).collect();
    // signum(0.0) is 1.0 but sqrt(0) is 0, so flat stretches map to 0.
    Ok(SrvfSample::from_parts(grid, q, f.values[0]))
}

/// Inverse transform: `f(t) = f(0) + ∫₀ᵗ q|q| ds`.
pub fn srvf_inverse(q: &SrvfSample) -> FunctionSample {
    let integrand: Vec<f64> = q.values.iter().map(|v| v * v.abs()).collect();
    let values = cumtrapz(&integrand, q.grid.spacing())
        .into_iter()
        .map(|v| q.f0 + v)
        .collect();
    FunctionSample {
        grid: q.grid,
        values,
        label: None,
    }
}

/// Centered moving average with truncated windows at the boundary, applied
/// `cfg.passes` times.
pub fn box_smooth(f: &FunctionSample, cfg: SmoothingConfig) -> Result<FunctionSample> {
    let n = f.values.len();
    if cfg.window > n {
        return Err(Error::invalid(format!(
            "smoothing window {} exceeds {} grid points",
            cfg.window, n
        )));
    }
    if cfg.window == 0 || cfg.window.is_multiple_of(2) {
        return Err(Error::invalid("smoothing window must be odd and positive"));
    }
    let half = cfg.window / 2;
    let mut cur = f.values.clone();
    for _ in 0..cfg.passes {
        let mut prefix = vec![0.0; n + 1];
        for j in 0..n {
            prefix[j + 1] = prefix[j] + cur[j];
        }
        cur = (0..n)
            .map(|j| {
                let lo = j.saturating_sub(half);
                let hi = (j + half).min(n - 1);
                (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1) as f64
            })
            .collect();
    }
    Ok(FunctionSample {
        grid: f.grid,
        values: cur,
        label: f.label.clone(),
    })
}

/// Linear interpolation onto a uniform grid with `new_len` points.
pub fn resample(f: &FunctionSample, new_len: usize) -> Result<FunctionSample> {
    let grid = f.grid.with_len(new_len)?;
    let mut values: Vec<f64> = (0..new_len)
        .map(|j| interp_unit(&f.values, grid.point(j)))
        .collect();
    values[0] = f.values[0];
    values[new_len - 1] = f.values[f.values.len() - 1];
    Ok(FunctionSample {
        grid,
        values,
        label: f.label.clone(),
    })
}

/// Resamples an SRVF onto a new uniform grid, keeping `f0`.
pub fn resample_srvf(q: &SrvfSample, new_len: usize) -> Result<SrvfSample> {
    let grid = q.grid.with_len(new_len)?;
    let values = (0..new_len)
        .map(|j| interp_unit(&q.values, grid.point(j)))
        .collect();
    Ok(SrvfSample::from_parts(grid, values, q.f0))
}
