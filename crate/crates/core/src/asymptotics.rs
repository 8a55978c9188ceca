//! Asymptotic-coefficient regressions and the two-parameter tanh toy.
//!
//! The toy is `y = a tanh(b x) + ε` with `x ~ U[0, 1]`, truth `(0, 0)` and a
//! uniform prior on `[0, 1]²`. Its KL divergence is
//! `K(a, b) = ½ a² b² K₀(b)` with `K₀(b) = ∫₀¹ (tanh(bx)/b)² dx`, whose RLCT is
//! `1/2` with multiplicity 2. Here the evidence can be computed by
//! quadrature, which makes the free-energy expansion directly checkable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::basedist::{GenGammaBase, GenGammaParams};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, gauss_legendre_integrate, integrate, integrate_2d};
use crate::special::g_moment;

/// A least-squares fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn check_points(points: &[(f64, f64)], min_distinct: usize) -> Result<()> {
    if points
        .iter()
        .any(|(n, y)| !(n.is_finite() && *n > 0.0 && y.is_finite()))
    {
        return Err(Error::Invalid("fit points need finite y and positive finite n".into()));
    }
    let distinct = distinct_count(&points.iter().map(|p| p.0).collect::<Vec<_>>());
    if distinct < min_distinct {
        return Err(Error::Invalid(format!(
            "need at least {min_distinct} distinct sample sizes, got {distinct}"
        )));
    }
    Ok(())
}

/// OLS of `y` on `(ln n, 1)`; the slope estimates the `ln n` coefficient of
/// the mean free energy.
pub fn fit_mvfe_coeff(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 3)?;
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    Ok(FitResult {
        slope,
        intercept,
        r_squared: r_squared(ss_res, ss_tot),
        n_points: points.len(),
    })
}

/// Least squares of `y` on `1/n` through the origin; `R²` is the uncentered
/// one that belongs to the zero-intercept model.
pub fn fit_vge_coeff(points: &[(f64, f64)]) -> Result<FitResult> {
    check_points(points, 2)?;
    let sxy: f64 = points.iter().map(|(n, y)| y / n).sum();
    let sxx: f64 = points.iter().map(|(n, _)| 1.0 / (n * n)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = points.iter().map(|(n, y)| (y - slope / n).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| y * y).sum();
    Ok(FitResult {
        slope,
        intercept: 0.0,
        r_squared: r_squared(ss_res, ss_tot),
        n_points: points.len(),
    })
}

fn r_squared(ss_res: f64, ss_tot: f64) -> f64 {
    if ss_tot <= 0.0 {
        // nothing to explain: a perfect fit explains all of it
        return if ss_res <= 1e-24 { 1.0 } else { 0.0 };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// Solves `min ‖X β - y‖²` through the normal equations (Gaussian
/// elimination with partial pivoting). `rows[i]` is the `i`-th design row.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.len() != y.len() || rows.len() < p || p == 0 {
        return Err(Error::Invalid(format!(
            "least squares needs at least as many rows ({}) as columns ({p}) and matching targets ({})",
            rows.len(),
            y.len()
        )));
    }
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
            a[i][p] += r[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .expect("non-empty range");
        if a[piv][c].abs() < 1e-300 {
            return Err(Error::Invalid("design matrix is rank deficient".into()));
        }
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot_row = a[c].clone();
                for (x, pv) in a[r][c..=p].iter_mut().zip(&pivot_row[c..=p]) {
                    *x -= f * pv;
                }
            }
        }
    }
    Ok((0..p).map(|i| a[i][p] / a[i][i]).collect())
}

/// Log-evidence regression `−ln Z̄(n) ≈ λ ln n − (m−1) ln ln n + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvidenceFit {
    pub lambda: f64,
    pub m_minus_one: f64,
    pub constant: f64,
}

/// Fits [`EvidenceFit`] to `(n, ln Z̄(n))` pairs (`n > e`).
pub fn fit_log_evidence(points: &[(f64, f64)]) -> Result<EvidenceFit> {
    if points.iter().any(|(n, _)| *n <= std::f64::consts::E) {
        return Err(Error::Invalid(
            "evidence fit needs n > e so that ln ln n is defined".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|(n, _)| vec![1.0, n.ln(), n.ln().ln()]).collect();
    let y: Vec<f64> = points.iter().map(|(_, lz)| -lz).collect();
    let beta = least_squares(&rows, &y)?;
    Ok(EvidenceFit {
        lambda: beta[1],
        m_minus_one: -beta[2],
        constant: beta[0],
    })
}

/// The tanh toy's quadrature machinery.
#[derive(Clone, Debug)]
pub struct Toy {
    rule: (Vec<f64>, Vec<f64>),
}

impl Default for Toy {
    fn default() -> Self {
        Self::new()
    }
}

/// Optimal lower-bound parameters for the toy's generalized gamma family.
pub const TOY_RLCT: f64 = 0.5;

impl Toy {
    pub fn new() -> Self {
        Self {
            rule: gauss_legendre(64),
        }
    }

    /// `K₀(b) = ∫₀¹ (tanh(bx)/b)² dx` by 64-point Gauss–Legendre
    /// (`1/3` at `b = 0`).
    pub fn k0(&self, b: f64) -> f64 {
        if b == 0.0 {
            return 1.0 / 3.0;
        }
        gauss_legendre_integrate(
            |x| {
                let t = (b * x).tanh() / b;
                t * t
            },
            0.0,
            1.0,
            &self.rule,
        )
    }

    /// `K(a, b) = ½ a² b² K₀(b)`.
    pub fn k(&self, a: f64, b: f64) -> f64 {
        0.5 * a * a * b * b * self.k0(b)
    }

    /// `K(w) - K(w₀)` for a general truth: `½ E_x[(a tanh(bx) − a₀ tanh(b₀x))²]`.
    pub fn kl(&self, a: f64, b: f64, a0: f64, b0: f64) -> f64 {
        0.5 * gauss_legendre_integrate(
            |x| {
                let d = a * (b * x).tanh() - a0 * (b0 * x).tanh();
                d * d
            },
            0.0,
            1.0,
            &self.rule,
        )
    }

    /// Coordinates after the resolution map `ξ₁ = √(K₀(b)/2)·a`, `ξ₂ = b`.
    pub fn resolve(&self, a: f64, b: f64) -> (f64, f64) {
        ((0.5 * self.k0(b)).sqrt() * a, b)
    }

    /// `|K(a, b) − ξ₁² ξ₂²|`.
    pub fn resolution_residual(&self, a: f64, b: f64) -> f64 {
        let (x1, x2) = self.resolve(a, b);
        (self.k(a, b) - x1 * x1 * x2 * x2).abs()
    }

    /// `ln Z̄_K(n) = ln ∫_{[0,1]²} exp(−n K(a, b)) da db` by adaptive
    /// tensor Gauss–Kronrod.
    pub fn log_evidence(&self, n: f64) -> Result<f64> {
        self.log_evidence_tol(n, 1e-11)
    }

    pub fn log_evidence_tol(&self, n: f64, rel_tol: f64) -> Result<f64> {
        if !(n >= 0.0) || !n.is_finite() {
            return Err(Error::Invalid(format!(
                "sample size must be finite and nonnegative, got {n}"
            )));
        }
        // the integrand is evaluated with b fixed across each inner sweep over a
        let mut cached = (f64::NAN, 0.0);
        let r = integrate_2d(
            |a, b| {
                if b != cached.0 {
                    cached = (b, 0.5 * b * b * self.k0(b));
                }
                (-n * a * a * cached.1).exp()
            },
            (0.0, 1.0),
            (0.0, 1.0),
            0.0,
            rel_tol,
            200_000,
        )?;
        Ok(r.value.ln())
    }

    /// Lower bound `Ψ(q₀) = −n E_{q₀}[K] + H(q₀)` on `ln Z̄_K(n)` for the
    /// product generalized gamma family in the coordinates `ξ = (a, b)`, where
    /// `K = ξ₁² ξ₂² u(ξ₂)` with the positive unit `u = K₀/2`. The first
    /// coordinate takes `(λ, k, β) = (1/2, 1, n)`, the second the default
    /// `(1, 1, d/2 = 1)`. The prior is uniform and the chart is the identity,
    /// so no Jacobian or prior term appears; the expectation over `ξ₂` is done
    /// by quadrature.
    pub fn psi_lower_bound(&self, n: f64) -> Result<f64> {
        let q = GenGammaBase::new(GenGammaParams::new(vec![TOY_RLCT, 1.0], vec![1.0, 1.0], vec![n, 1.0])?)?;
        let e_x1_sq = g_moment(TOY_RLCT, n)?;
        let p = q.params().clone();
        let second = GenGammaBase::new(GenGammaParams::new(vec![p.lambda[1]], vec![p.k[1]], vec![p.beta[1]])?)?;
        let e_rest = integrate(
            |b| {
                let ld = second.log_density(&[b]).unwrap_or(f64::NEG_INFINITY);
                if ld.is_finite() {
                    ld.exp() * b * b * 0.5 * self.k0(b)
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
            1e-14,
            1e-12,
            500,
        )?
        .value;
        let e1 = n * e_x1_sq * e_rest;
        Ok(-e1 + q.entropy()?)
    }
}

/// Grid layout for posterior densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: -2.0,
            hi: 2.0,
            points: 200,
        }
    }
}

impl GridSpec {
    pub fn coords(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + step * i as f64).collect()
    }
}

/// Normalized posterior density on a square grid; `density[i * m + j]` is at
/// `(a[i], b[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGrid {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub density: Vec<f64>,
}

impl PosteriorGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.b.len() + j]
    }

    /// Trapezoidal integral of `weight(a, b) × density` over the grid.
    pub fn integrate(&self, weight: impl Fn(f64, f64) -> f64) -> f64 {
        trapezoid_2d(&self.a, &self.b, |i, j| weight(self.a[i], self.b[j]) * self.at(i, j))
    }
}

fn trapezoid_2d(a: &[f64], b: &[f64], f: impl Fn(usize, usize) -> f64) -> f64 {
    let w = |v: &[f64], i: usize| {
        let h = v[1] - v[0];
        if i == 0 || i + 1 == v.len() {
            0.5 * h
        } else {
            h
        }
    };
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            s += w(a, i) * w(b, j) * f(i, j);
        }
    }
    s
}

/// Posterior of `(a, b)` for `n` draws from `y = a₀ tanh(b₀ x) + ε`,
/// `x ~ U[0, 1]`, under a flat prior on the grid box.
pub fn posterior_grid(a0: f64, b0: f64, n: usize, seed: u64, grid: GridSpec) -> Result<PosteriorGrid> {
    if grid.points < 50 || !(grid.hi > grid.lo) {
        return Err(Error::Invalid(format!(
            "posterior grid needs at least 50 points per axis and hi > lo, got {grid:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..1.0);
        let e: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(a0 * (b0 * x).tanh() + e);
    }
    let coords = grid.coords();
    let m = coords.len();
    // log-likelihood up to a constant: a Σ y tanh(bx) − ½ a² Σ tanh²(bx)
    let mut logp = vec![0.0; m * m];
    for (j, &b) in coords.iter().enumerate() {
        let (mut s1, mut s2) = (0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let t = (b * x).tanh();
            s1 += y * t;
            s2 += t * t;
        }
        for (i, &a) in coords.iter().enumerate() {
            logp[i * m + j] = a * s1 - 0.5 * a * a * s2;
        }
    }
    let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut density: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
    let z = trapezoid_2d(&coords, &coords, |i, j| density[i * m + j]);
    density.iter_mut().for_each(|d| *d /= z);
    Ok(PosteriorGrid {
        a: coords.clone(),
        b: coords,
        density,
    })
}
