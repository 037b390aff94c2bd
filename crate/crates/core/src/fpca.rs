//! Functional principal component analysis of aligned SRVFs (vertical) and of
//! shooting vectors (horizontal).
//!
//! Samples are vectors on the grid; the inner product is the trapezoidal
//! quadrature (plus weight 1 for the appended `f(0)` coordinate in the
//! vertical case), so eigenvalues are those of the covariance operator.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::trapz_weights;
use crate::karcher::AlignmentResult;
use crate::phase::ShootingVector;

/// Eigenvalues at or below this are treated as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// How many principal components to retain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentSelector {
    /// At most `d` components (fewer if the spectrum has fewer positive values).
    Fixed(usize),
    /// Smallest count explaining at least this fraction of the total variance.
    Fraction(f64),
}

impl Default for ComponentSelector {
    fn default() -> Self {
        ComponentSelector::Fraction(0.95)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpcaKind {
    Vertical,
    Horizontal,
    /// Raw function values, for the cross-sectional baseline.
    CrossSectional,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcaResult {
    pub kind: FpcaKind,
    /// Sample mean (zero when the data were not centered).
    pub mean: Vec<f64>,
    /// Quadrature weights of the inner product.
    pub weights: Vec<f64>,
    /// Retained directions, orthonormal in the weighted inner product.
    pub directions: Vec<Vec<f64>>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Full spectrum, descending and clamped at zero.
    pub spectrum: Vec<f64>,
    /// `scores[i][l] = ⟨x_i - mean, u_l⟩`.
    pub scores: Vec<Vec<f64>>,
}

impl FpcaResult {
    pub fn num_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Sum of the full spectrum (total variance).
    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }
}

/// Number of components chosen by `selector` for a descending spectrum.
pub fn select_components(eigenvalues: &[f64], selector: ComponentSelector) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("no eigenvalues to select from"));
    }
    let positive = eigenvalues.iter().filter(|&&l| l > EIGEN_FLOOR).count();
    match selector {
        ComponentSelector::Fixed(d) => Ok(d.min(positive)),
        ComponentSelector::Fraction(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::invalid(format!(
                    "variance fraction must lie in (0, 1], got {tau}"
                )));
            }
            let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
            if total <= EIGEN_FLOOR {
                return Ok(0);
            }
            let mut cum = 0.0;
            for (p, l) in eigenvalues.iter().enumerate() {
                cum += l.max(0.0);
                if cum / total >= tau - 1e-12 {
                    return Ok(p + 1);
                }
            }
            Ok(positive)
        }
    }
}

/// PCA of `rows` under the inner product `⟨a, b⟩ = Σ w_j a_j b_j`, covariance
/// normalized by `n - 1`.
pub fn weighted_fpca(
    rows: &[&[f64]],
    weights: &[f64],
    selector: ComponentSelector,
    center: bool,
    kind: FpcaKind,
) -> Result<FpcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid("fPCA needs at least two samples"));
    }
    let dim = weights.len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("fPCA samples must all have the weight length"));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid("fPCA weights must be positive"));
    }

    let mean: Vec<f64> = if center {
        (0..dim)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect()
    } else {
        vec![0.0; dim]
    };
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    // Y = (X - mean) W^{1/2};  B = YᵀY / (n - 1) has the operator's spectrum
    let y = DMatrix::from_fn(n, dim, |i, j| (rows[i][j] - mean[j]) * sqrt_w[j]);
    let b = (y.transpose() * &y) / (n - 1) as f64;
    let eig = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let spectrum: Vec<f64> = order
        .iter()
        .map(|&k| {
            let l = eig.eigenvalues[k];
            if l < EIGEN_FLOOR {
                0.0
            } else {
                l
            }
        })
        .collect();
    let p = select_components(&spectrum, selector)?;

    let directions: Vec<Vec<f64>> = order[..p]
        .iter()
        .map(|&k| {
            let mut u: Vec<f64> = (0..dim).map(|j| eig.eigenvectors[(j, k)] / sqrt_w[j]).collect();
            // largest-magnitude coordinate positive
            let mut big = 0;
            for j in 1..dim {
                if u[j].abs() > u[big].abs() {
                    big = j;
                }
            }
            if u[big] < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            u
        })
        .collect();
    let scores = rows
        .iter()
        .map(|r| {
            directions
                .iter()
                .map(|u| (0..dim).map(|j| weights[j] * (r[j] - mean[j]) * u[j]).sum())
                .collect()
        })
        .collect();

    Ok(FpcaResult {
        kind,
        mean,
        weights: weights.to_vec(),
        directions,
        eigenvalues: spectrum[..p].to_vec(),
        spectrum,
        scores,
    })
}

/// Descending, zero-clamped spectrum of the weighted covariance of `rows`
/// (normalized by `n - 1`). Uses the `n × n` Gram matrix when that is smaller.
pub fn covariance_spectrum(rows: &[&[f64]], weights: &[f64], center: bool) -> Result<Vec<f64>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two samples"));
    }
    let dim = weights.len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("samples must all have the weight length"));
    }
    let mean: Vec<f64> = if center {
        (0..dim)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect()
    } else {
        vec![0.0; dim]
    };
    let y = DMatrix::from_fn(n, dim, |i, j| (rows[i][j] - mean[j]) * weights[j].sqrt());
    let m = if n < dim {
        &y * y.transpose()
    } else {
        y.transpose() * &y
    } / (n - 1) as f64;
    let mut spec: Vec<f64> = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|&l| if l < EIGEN_FLOOR { 0.0 } else { l })
        .collect();
    spec.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(spec)
}

/// Weights of the vertical inner product: trapezoid on `q`, one on `f(0)`.
pub fn vertical_weights(num_points: usize) -> Vec<f64> {
    let mut w = trapz_weights(num_points);
    w.push(1.0);
    w
}

/// The combined vectors `h_i = [q̃_i, f_i(0)]`.
pub fn vertical_samples(ar: &AlignmentResult) -> Vec<Vec<f64>> {
    ar.aligned_q
        .iter()
        .map(|q| {
            let mut h = q.values().to_vec();
            h.push(q.f0());
            h
        })
        .collect()
}

/// Vertical fPCA of the aligned SRVFs augmented with `f(0)`.
pub fn vertical_fpca(ar: &AlignmentResult, selector: ComponentSelector) -> Result<FpcaResult> {
    if ar.len() < 2 {
        return Err(Error::invalid("vertical fPCA needs at least two functions"));
    }
    let hs = vertical_samples(ar);
    let rows: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();
    weighted_fpca(&rows, &vertical_weights(ar.grid().len()), selector, true, FpcaKind::Vertical)
}

/// Horizontal fPCA of shooting vectors sharing one base point. The covariance
/// is uncentered unless `center` is set.
pub fn horizontal_fpca(
    vs: &[ShootingVector],
    selector: ComponentSelector,
    center: bool,
) -> Result<FpcaResult> {
    if vs.len() < 2 {
        return Err(Error::invalid("horizontal fPCA needs at least two shooting vectors"));
    }
    if vs.iter().any(|v| v.base() != vs[0].base()) {
        return Err(Error::invalid("shooting vectors have different base points"));
    }
    let rows: Vec<&[f64]> = vs.iter().map(ShootingVector::values).collect();
    weighted_fpca(
        &rows,
        &trapz_weights(vs[0].values().len()),
        selector,
        center,
        FpcaKind::Horizontal,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::{Grid, SrvfSample};
    use crate::phase::{to_psi, PsiSample};
    use crate::warping::Warping;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn winner(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
        a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w).sum()
    }

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn selection_examples() {
        use ComponentSelector::*;
        assert_eq!(select_components(&[4.0, 0.0, 0.0], Fraction(0.95)).unwrap(), 1);
        assert_eq!(select_components(&[3.0, 1.0], Fixed(5)).unwrap(), 2);
        assert_eq!(select_components(&[0.5, 0.3, 0.15, 0.05], Fraction(0.9)).unwrap(), 3);
        assert!(select_components(&[1.0], Fraction(0.0)).is_err());
        assert!(select_components(&[1.0], Fraction(1.5)).is_err());
        assert!(select_components(&[], Fixed(1)).is_err());
        assert_eq!(select_components(&[0.0, 0.0], Fraction(0.9)).unwrap(), 0);
    }

    #[test]
    fn identical_samples_have_zero_spectrum() {
        let row = vec![1.0, 2.0, 3.0, 4.0];
        let rows = vec![row.as_slice(); 5];
        let r = weighted_fpca(&rows, &[0.5, 1.0, 1.0, 0.5], ComponentSelector::Fixed(3), true, FpcaKind::Vertical)
            .unwrap();
        assert!(r.spectrum.iter().all(|&l| l == 0.0));
        assert_eq!(r.num_components(), 0);
        assert!(r.scores.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn rank_one_recovery() {
        let dim = 21;
        let w = trapz_weights(dim);
        let raw: Vec<f64> = (0..dim).map(|j| (j as f64 * 0.3).sin() + 0.2).collect();
        let norm = winner(&raw, &raw, &w).sqrt();
        let u: Vec<f64> = raw.iter().map(|x| x / norm).collect();
        let mu: Vec<f64> = (0..dim).map(|j| j as f64 * 0.1).collect();
        let c = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
        let rows: Vec<Vec<f64>> = c
            .iter()
            .map(|ci| mu.iter().zip(&u).map(|(m, x)| m + ci * x).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let r = weighted_fpca(&refs, &w, ComponentSelector::Fraction(0.99), true, FpcaKind::Vertical).unwrap();
        assert_eq!(r.num_components(), 1);
        let cbar = c.iter().sum::<f64>() / c.len() as f64;
        let s2 = c.iter().map(|x| (x - cbar).powi(2)).sum::<f64>() / (c.len() - 1) as f64;
        assert!((r.eigenvalues[0] - s2).abs() < 1e-10);
        let sign = r.scores[0][0].signum() * (c[0] - cbar).signum();
        for (s, ci) in r.scores.iter().zip(&c) {
            assert!((s[0] - sign * (ci - cbar)).abs() < 1e-10);
        }
    }

    #[test]
    fn invariants_on_random_data() {
        let (n, dim) = (12, 9);
        let w: Vec<f64> = (0..dim).map(|j| 0.5 + 0.1 * j as f64).collect();
        let rows = random_rows(n, dim, 5);
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let r = weighted_fpca(&refs, &w, ComponentSelector::Fixed(dim), true, FpcaKind::Vertical).unwrap();
        // orthonormal directions
        for a in 0..r.num_components() {
            for b in 0..r.num_components() {
                let ip = winner(&r.directions[a], &r.directions[b], &w);
                assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        // descending, trace identity
        for p in r.spectrum.windows(2) {
            assert!(p[0] >= p[1]);
        }
        let total: f64 = rows
            .iter()
            .map(|x| {
                let c: Vec<f64> = x.iter().zip(&r.mean).map(|(a, m)| a - m).collect();
                winner(&c, &c, &w)
            })
            .sum::<f64>()
            / (n - 1) as f64;
        assert!((r.total_variance() - total).abs() < 1e-8);
        // scores: zero mean, variance λ
        for l in 0..r.num_components() {
            let col: Vec<f64> = r.scores.iter().map(|s| s[l]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(m.abs() < 1e-8);
            assert!((v - r.eigenvalues[l]).abs() < 1e-8);
        }
        // reconstruction
        for (x, s) in rows.iter().zip(&r.scores) {
            for j in 0..dim {
                let rec = r.mean[j] + (0..r.num_components()).map(|l| s[l] * r.directions[l][j]).sum::<f64>();
                assert!((rec - x[j]).abs() < 1e-6);
            }
        }
        // sign convention
        for u in &r.directions {
            let big = u.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn permutation_invariant_up_to_sign() {
        let rows = random_rows(10, 7, 9);
        let w = trapz_weights(7);
        let mut perm = rows.clone();
        perm.reverse();
        let a_refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let b_refs: Vec<&[f64]> = perm.iter().map(Vec::as_slice).collect();
        let a = weighted_fpca(&a_refs, &w, ComponentSelector::Fixed(7), true, FpcaKind::Vertical).unwrap();
        let b = weighted_fpca(&b_refs, &w, ComponentSelector::Fixed(7), true, FpcaKind::Vertical).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x - y).abs() < 1e-10);
        }
        for (u, v) in a.directions.iter().zip(&b.directions) {
            let ip = winner(u, v, &w);
            assert!((ip.abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn horizontal_directions_are_tangent() {
        let g = Grid::unit(101).unwrap();
        let base = PsiSample::identity(g);
        let vs: Vec<ShootingVector> = [-1.2, -0.5, 0.3, 0.9, 1.6]
            .iter()
            .map(|&a: &f64| {
                let gam = Warping::from_fn(g, |t| ((a * t).exp() - 1.0) / (a.exp() - 1.0)).unwrap();
                crate::phase::log_map(&to_psi(&gam), &base).unwrap()
            })
            .collect();
        let r = horizontal_fpca(&vs, ComponentSelector::Fraction(0.999), false).unwrap();
        assert!(r.mean.iter().all(|&m| m == 0.0));
        for u in &r.directions {
            assert!(winner(u, base.values(), &r.weights).abs() < 1e-6);
        }
        // uncentered: scores are plain projections
        for (v, s) in vs.iter().zip(&r.scores) {
            assert!((s[0] - winner(v.values(), &r.directions[0], &r.weights)).abs() < 1e-12);
        }
        let zeros = vec![ShootingVector::zero(base.clone()); 3];
        let z = horizontal_fpca(&zeros, ComponentSelector::Fixed(2), false).unwrap();
        assert!(z.spectrum.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn horizontal_rejects_mixed_bases() {
        let g = Grid::unit(11).unwrap();
        let b1 = PsiSample::identity(g);
        let b2 = to_psi(&Warping::from_fn(g, |t| t * t).unwrap());
        let vs = vec![ShootingVector::zero(b1), ShootingVector::zero(b2)];
        assert!(horizontal_fpca(&vs, ComponentSelector::Fixed(1), false).is_err());
    }

    #[test]
    fn gram_and_covariance_spectra_agree() {
        let dim = 17;
        let w = trapz_weights(dim);
        for n in [5, 30] {
            let rows = random_rows(n, dim, n as u64);
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let full = weighted_fpca(&refs, &w, ComponentSelector::Fixed(dim), true, FpcaKind::Vertical).unwrap();
            let spec = covariance_spectrum(&refs, &w, true).unwrap();
            for (a, b) in full.spectrum.iter().zip(&spec) {
                assert!((a - b).abs() < 1e-10, "{a} {b}");
            }
        }
    }

    #[test]
    fn vertical_needs_two() {
        let g = Grid::unit(5).unwrap();
        let q = SrvfSample::new(g, vec![1.0; 5], 0.0).unwrap();
        let ar = AlignmentResult {
            mean_q: q.clone(),
            srvfs: vec![q.clone()],
            aligned_q: vec![q],
            warps: vec![Warping::identity(g)],
            aligned_f: vec![],
            iterations: 1,
            converged: true,
            objective_trace: vec![0.0],
        };
        assert!(vertical_fpca(&ar, ComponentSelector::Fixed(1)).is_err());
    }
}
