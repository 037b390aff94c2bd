//! Pairwise elastic registration by dynamic programming on the `T × T` lattice,
//! and the amplitude distance built on it.
//!
//! A warp is searched among piecewise-linear paths from `(0, 0)` to
//! `(T-1, T-1)` whose steps `(a, b)` come from the coprime pairs with
//! `1 ≤ a, b ≤ 7`. The cost of one step is the trapezoidal energy of
//! `q1 - (q2, γ)` over the segment, with `γ` linear on it; the path cost is the
//! sum of step costs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::function::{gradient, srvf_transform, trapz_dist_sq, FunctionSample, SrvfSample};
use crate::warping::{group_action, Warping};

/// Largest numerator/denominator of a lattice step slope.
pub const MAX_STEP: usize = 7;

const REFINE_ITERS: usize = 60;

/// One lattice step: `a` grid cells along `t`, `b` along `γ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub a: usize,
    pub b: usize,
}

fn gcd(mut x: usize, mut y: usize) -> usize {
    while y != 0 {
        (x, y) = (y, x % y);
    }
    x
}

/// The neighbor set, `(1, 1)` first so the identity wins ties.
pub fn steps() -> &'static [Step] {
    static STEPS: OnceLock<Vec<Step>> = OnceLock::new();
    STEPS.get_or_init(|| {
        let mut v = vec![Step { a: 1, b: 1 }];
        for a in 1..=MAX_STEP {
            for b in 1..=MAX_STEP {
                if (a, b) != (1, 1) && gcd(a, b) == 1 {
                    v.push(Step { a, b });
                }
            }
        }
        v
    })
}

/// Cost of the lattice edge `(k, l) → (k + a, l + b)`: the trapezoidal
/// integral of `(q1(t) - sqrt(b/a) q2(γ(t)))²` over `[t_k, t_{k+a}]`.
///
/// Uses the same tables and arithmetic as the DP, so summing it along a path
/// reproduces the DP energy bit for bit.
pub fn edge_cost(q1: &[f64], q2: &[f64], k: usize, l: usize, step: Step) -> f64 {
    let h = 1.0 / (q1.len() - 1) as f64;
    let idx = steps()
        .iter()
        .position(|&s| s == step)
        .expect("step outside the neighbor set");
    let tables = StepTables::new(q2);
    h * tables.energy(idx, q1, k, l)
}

/// For every step and every sample `r` of it, `sqrt(b/a) q2(l + r b/a)` as a
/// function of `l`, padded with the last value of `q2` beyond the grid.
struct StepTables {
    len: usize,
    /// `offsets[s]` is the first row of step `s` in `rows`.
    offsets: Vec<usize>,
    rows: Vec<f64>,
}

impl StepTables {
    fn new(q2: &[f64]) -> Self {
        let n = q2.len();
        let last = n - 1;
        let mut offsets = Vec::with_capacity(steps().len());
        let mut rows = Vec::new();
        let mut count = 0;
        for &Step { a, b } in steps() {
            offsets.push(count);
            let slope = b as f64 / a as f64;
            let scale = slope.sqrt();
            for r in 0..=a {
                let pos = r as f64 * slope;
                let off = pos.floor() as usize;
                let frac = pos - off as f64;
                rows.extend((0..n).map(|l| {
                    let base = l + off;
                    let v = if base >= last {
                        q2[last]
                    } else {
                        q2[base] + frac * (q2[base + 1] - q2[base])
                    };
                    scale * v
                }));
                count += 1;
            }
        }
        Self {
            len: n,
            offsets,
            rows,
        }
    }

    #[inline(always)]
    fn row(&self, step: usize, r: usize) -> &[f64] {
        let start = (self.offsets[step] + r) * self.len;
        &self.rows[start..start + self.len]
    }

    /// Unscaled trapezoidal energy of one edge.
    fn energy(&self, step: usize, q1: &[f64], k: usize, l: usize) -> f64 {
        let a = steps()[step].a;
        let mut acc = 0.0;
        for r in 0..=a {
            let w = if r == 0 || r == a { 0.5 } else { 1.0 };
            let e = q1[k + r] - self.row(step, r)[l];
            acc += w * e * e;
        }
        acc
    }
}

/// Result of a DP registration.
#[derive(Debug, Clone)]
pub struct Registration {
    /// Minimizing warp: `(q2, warp)` is aligned to `q1`.
    pub warp: Warping,
    /// `‖q1 - (q2, warp)‖` evaluated with the group action.
    pub distance: f64,
    /// Optimal lattice path cost (squared energy) found by the DP.
    pub path_cost: f64,
    /// Lattice vertices of the optimal path.
    pub path: Vec<(usize, usize)>,
}

/// Runs the lattice DP and returns `(optimal cost, path vertices)`.
pub fn dp_path(q1: &[f64], q2: &[f64]) -> (f64, Vec<(usize, usize)>) {
    let n = q1.len();
    assert_eq!(n, q2.len());
    let h = 1.0 / (n - 1) as f64;
    let tables = StepTables::new(q2);
    let mut energy = vec![f64::INFINITY; n * n];
    let mut back = vec![u8::MAX; n * n];
    energy[0] = 0.0;
    let mut acc = vec![0.0; n];

    for i in 1..n {
        let (done, rest) = energy.split_at_mut(i * n);
        let row = &mut rest[..n];
        let arg = &mut back[i * n..(i + 1) * n];
        for (idx, &Step { a, b }) in steps().iter().enumerate() {
            if a > i || b >= n {
                continue;
            }
            let k = i - a;
            let m = n - b;
            // acc[l] = energy of the edge (k, l) -> (i, l + b)
            acc[..m].fill(0.0);
            for r in 0..=a {
                let w = if r == 0 || r == a { 0.5 } else { 1.0 };
                let x = q1[k + r];
                for (s, &y) in acc[..m].iter_mut().zip(&tables.row(idx, r)[..m]) {
                    let e = x - y;
                    *s += w * e * e;
                }
            }
            let prev = &done[k * n..k * n + m];
            for l in 0..m {
                let cand = prev[l] + h * acc[l];
                if cand < row[l + b] {
                    row[l + b] = cand;
                    arg[l + b] = idx as u8;
                }
            }
        }
    }

    let mut path = vec![(n - 1, n - 1)];
    let (mut i, mut j) = (n - 1, n - 1);
    while (i, j) != (0, 0) {
        let s = steps()[back[i * n + j] as usize];
        i -= s.a;
        j -= s.b;
        path.push((i, j));
    }
    path.reverse();
    (energy[n * n - 1], path)
}

fn warp_from_path(q: &SrvfSample, path: &[(usize, usize)]) -> Warping {
    let n = q.values().len();
    let h = 1.0 / (n - 1) as f64;
    let mut values = vec![0.0; n];
    for w in path.windows(2) {
        let ((k, l), (i, j)) = (w[0], w[1]);
        for r in 0..=(i - k) {
            values[k + r] = (l as f64 + (j - l) as f64 * r as f64 / (i - k) as f64) * h;
        }
    }
    values[n - 1] = 1.0;
    Warping::from_parts(*q.grid(), values)
}

type BasisCache = Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>>;

/// Sine basis `φ_k(t) = sin(kπt) / (kπ)`, `k = 1..=modes`, sampled on a grid of
/// `n` points, stored mode-major.
fn sine_basis(n: usize, modes: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    map.entry((n, modes))
        .or_insert_with(|| {
            let last = (n - 1) as f64;
            let mut v = Vec::with_capacity(n * modes);
            for k in 1..=modes {
                let w = k as f64 * std::f64::consts::PI;
                v.extend((0..n).map(|m| (w * m as f64 / last).sin() / w));
            }
            Arc::new(v)
        })
        .clone()
}

/// `‖q1 - (q2, γ)‖²` and its gradient with respect to the interior warp
/// values, using the same discretization as [`group_action`].
fn action_energy(q1: &[f64], q2: &[f64], gam: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let n = q1.len();
    let last = n - 1;
    let h = 1.0 / last as f64;
    let d = gradient(gam, h);
    let mut energy = 0.0;
    let mut r = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut s = vec![0.0; n];
    for j in 0..n {
        let pos = gam[j].clamp(0.0, 1.0) * last as f64;
        let i = (pos.floor() as usize).min(last - 1);
        let frac = pos - i as f64;
        p[j] = q2[i] + frac * (q2[i + 1] - q2[i]);
        dp[j] = (q2[i + 1] - q2[i]) * last as f64;
        s[j] = d[j].max(0.0).sqrt();
        r[j] = q1[j] - p[j] * s[j];
        let w = if j == 0 || j == last { 0.5 } else { 1.0 };
        energy += w * r[j] * r[j];
    }
    energy *= h;
    if let Some(g) = grad {
        // u_j = w_j r_j p_j / (2 s_j); grad = -2h (w r s p' + Dᵀu)
        let mut u = vec![0.0; n];
        for j in 0..n {
            let w = if j == 0 || j == last { 0.5 } else { 1.0 };
            if s[j] > 0.0 {
                u[j] = w * r[j] * p[j] / (2.0 * s[j]);
            }
        }
        let c = 1.0 / (2.0 * h);
        let mut dtu = vec![0.0; n];
        dtu[0] += -3.0 * c * u[0];
        dtu[1] += 4.0 * c * u[0];
        dtu[2] += -c * u[0];
        for j in 1..last {
            dtu[j - 1] -= c * u[j];
            dtu[j + 1] += c * u[j];
        }
        dtu[last - 2] += c * u[last];
        dtu[last - 1] += -4.0 * c * u[last];
        dtu[last] += 3.0 * c * u[last];
        for m in 0..n {
            let w = if m == 0 || m == last { 0.5 } else { 1.0 };
            g[m] = -2.0 * h * (w * r[m] * s[m] * dp[m] + dtu[m]);
        }
    }
    energy
}

/// Quasi-Newton refinement of a lattice warp within a smooth sine family.
///
/// The lattice restricts slopes to ratios of small integers; refining
/// `γ(t) = t + Σ c_k φ_k(t)` removes the resulting staircase in `γ'`.
/// Returns the refined warp and its energy.
pub fn refine_warp(q1: &[f64], q2: &[f64], init: &Warping, modes: usize) -> Option<(Warping, f64)> {
    let n = q1.len();
    let last = n - 1;
    let modes = modes.min(last - 1);
    if modes == 0 {
        return None;
    }
    let basis = sine_basis(n, modes);
    let phi = |k: usize| &basis[k * n..(k + 1) * n];
    let t: Vec<f64> = (0..n).map(|m| m as f64 / last as f64).collect();

    let build = |c: &[f64]| -> Option<Vec<f64>> {
        let mut g = t.clone();
        for (k, &ck) in c.iter().enumerate() {
            for (v, b) in g.iter_mut().zip(phi(k)) {
                *v += ck * b;
            }
        }
        g[0] = 0.0;
        g[last] = 1.0;
        g.windows(2).all(|w| w[1] > w[0]).then_some(g)
    };
    let coef_grad = |g_vals: &[f64]| -> Vec<f64> {
        (0..modes)
            .map(|k| phi(k).iter().zip(g_vals).map(|(b, g)| b * g).sum())
            .collect()
    };

    // discrete sine projection of the deviation from the identity
    let mut c: Vec<f64> = (0..modes)
        .map(|k| {
            let w = (k + 1) as f64 * std::f64::consts::PI;
            let dot: f64 = (1..last)
                .map(|m| (init.values()[m] - t[m]) * phi(k)[m] * w)
                .sum();
            2.0 / last as f64 * dot * w
        })
        .collect();
    let mut gam = match build(&c) {
        Some(g) => g,
        None => {
            c.iter_mut().for_each(|x| *x = 0.0);
            t.clone()
        }
    };
    let mut gv = vec![0.0; n];
    let mut e = action_energy(q1, q2, &gam, Some(&mut gv));
    let mut g = coef_grad(&gv);
    let mut hinv = vec![0.0; modes * modes];
    for k in 0..modes {
        hinv[k * modes + k] = 1.0;
    }
    let mut first = true;

    for _ in 0..REFINE_ITERS {
        let mut dir: Vec<f64> = (0..modes)
            .map(|i| -(0..modes).map(|j| hinv[i * modes + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            dir = g.iter().map(|x| -x).collect();
            slope = -g.iter().map(|x| x * x).sum::<f64>();
        }
        if slope == 0.0 {
            break;
        }
        let mut alpha = if first {
            // first trial moves the warp by about one grid cell
            let shift = (0..n)
                .map(|m| (0..modes).map(|k| dir[k] * phi(k)[m]).sum::<f64>().abs())
                .fold(0.0, f64::max);
            if shift > 0.0 {
                1.0 / (last as f64 * shift)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = c.iter().zip(&dir).map(|(c, d)| c + alpha * d).collect();
            if let Some(cg) = build(&cand) {
                let ce = action_energy(q1, q2, &cg, None);
                if ce <= e + 1e-4 * alpha * slope {
                    accepted = Some((cand, cg, ce));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, cg, ce)) = accepted else { break };
        let mut ng = vec![0.0; n];
        action_energy(q1, q2, &cg, Some(&mut ng));
        let ng = coef_grad(&ng);
        let sv: Vec<f64> = cand.iter().zip(&c).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = sv.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            if first {
                let yy: f64 = yv.iter().map(|x| x * x).sum();
                let scale = sy / yy;
                hinv.iter_mut().for_each(|x| *x *= scale);
            }
            // BFGS update of the inverse Hessian
            let hy: Vec<f64> = (0..modes)
                .map(|i| (0..modes).map(|j| hinv[i * modes + j] * yv[j]).sum())
                .collect();
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..modes {
                for j in 0..modes {
                    hinv[i * modes + j] += (1.0 + yhy * rho) * rho * sv[i] * sv[j]
                        - rho * (hy[i] * sv[j] + sv[i] * hy[j]);
                }
            }
        }
        first = false;
        let done = e - ce <= 1e-10 * e;
        c = cand;
        gam = cg;
        e = ce;
        g = ng;
        if done {
            break;
        }
    }
    Warping::new(*init.grid(), gam).ok().map(|w| (w, e))
}

/// Number of sine modes used by the refinement on a grid of `n` points.
pub fn refine_modes(n: usize) -> usize {
    ((n - 1) / 3).clamp(1, n.saturating_sub(2).max(1))
}

/// Finds the warp minimizing `‖q1 - (q2, γ)‖`: a lattice DP followed by a
/// smooth quasi-Newton refinement, keeping whichever evaluates lower.
///
/// The reported distance never exceeds `‖q1 - q2‖`: if the identity evaluates
/// lower under the group action, it is returned instead.
pub fn optimal_warp(q1: &SrvfSample, q2: &SrvfSample) -> Result<Registration> {
    let n = q1.values().len();
    if n != q2.values().len() {
        return Err(Error::invalid("SRVFs must share a grid for registration"));
    }
    let identity_dist = trapz_dist_sq(q1.values(), q2.values()).max(0.0).sqrt();
    if q1.values().iter().all(|&v| v == 0.0) && q2.values().iter().all(|&v| v == 0.0) {
        return Ok(Registration {
            warp: Warping::identity(*q1.grid()),
            distance: 0.0,
            path_cost: 0.0,
            path: (0..n).map(|j| (j, j)).collect(),
        });
    }
    let (path_cost, path) = dp_path(q1.values(), q2.values());
    let mut warp = warp_from_path(q1, &path);
    let warped = group_action(q2, &warp)?;
    let mut energy = trapz_dist_sq(q1.values(), warped.values()).max(0.0);
    if energy > 0.0 {
        if let Some((w, e)) = refine_warp(q1.values(), q2.values(), &warp, refine_modes(n)) {
            if e < energy {
                warp = w;
                energy = e;
            }
        }
    }
    let distance = energy.sqrt();
    if distance > identity_dist {
        return Ok(Registration {
            warp: Warping::identity(*q1.grid()),
            distance: identity_dist,
            path_cost,
            path,
        });
    }
    Ok(Registration {
        warp,
        distance,
        path_cost,
        path,
    })
}

/// Elastic distance between two SRVFs: the smaller of the two registration
/// directions.
pub fn srvf_distance(q1: &SrvfSample, q2: &SrvfSample) -> Result<f64> {
    let d12 = optimal_warp(q1, q2)?.distance;
    let d21 = optimal_warp(q2, q1)?.distance;
    Ok(d12.min(d21))
}

/// Amplitude distance `d_a(f1, f2) = inf_γ ‖q1 - (q2, γ)‖`.
pub fn amplitude_distance(f1: &FunctionSample, f2: &FunctionSample) -> Result<f64> {
    srvf_distance(&srvf_transform(f1)?, &srvf_transform(f2)?)
}
