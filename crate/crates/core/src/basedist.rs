//! Frozen base distributions for the flow: the truncated generalized gamma
//! product family and the standard Gaussian.
//!
//! Coordinate `j` of the generalized gamma base has density
//! `ξ^{2k_j λ_j - 1} exp(-β_j ξ^{2k_j}) / B(λ_j, k_j, β_j)` on `(0, 1]`.

use std::f64::consts::PI;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::special::{expected_log_v, g_moment, inv_reg_lower_gamma, ln_b_normalizer, reg_lower_gamma};

/// Per-coordinate `(λ, k, β)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenGammaParams {
    pub lambda: Vec<f64>,
    pub k: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GenGammaParams {
    pub fn new(lambda: Vec<f64>, k: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let d = lambda.len();
        if d == 0 {
            return Err(Error::Invalid("generalized gamma base needs d >= 1".into()));
        }
        for (name, v) in [("k", &k), ("beta", &beta)] {
            if v.len() != d {
                return Err(Error::Invalid(format!("{name} has length {}, lambda has {d}", v.len())));
            }
        }
        for (name, v) in [("lambda", &lambda), ("k", &k), ("beta", &beta)] {
            if let Some((j, x)) = v.iter().enumerate().find(|(_, x)| !(**x > 0.0 && x.is_finite())) {
                return Err(Error::Invalid(format!("{name}[{j}] = {x} must be positive and finite")));
            }
        }
        Ok(Self { lambda, k, beta })
    }

    /// The frozen initialization used for training: `λ = 1`, `k = 1`,
    /// `β = (n, d/2, ..., d/2)`.
    pub fn standard_init(d: usize, n: usize) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::Invalid(format!("need d >= 1 and n >= 1, got d={d}, n={n}")));
        }
        let mut beta = vec![d as f64 / 2.0; d];
        beta[0] = n as f64;
        Self::new(vec![1.0; d], vec![1.0; d], beta)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }
}

/// Generalized gamma base with the per-coordinate constants cached.
#[derive(Clone, Debug)]
pub struct GenGammaBase {
    params: GenGammaParams,
    // P(λ_j, β_j): mass of the untruncated gamma inside the unit interval
    mass: Vec<f64>,
    ln_b: Vec<f64>,
}

impl GenGammaBase {
    pub fn new(params: GenGammaParams) -> Result<Self> {
        let mut mass = Vec::with_capacity(params.dim());
        let mut ln_b = Vec::with_capacity(params.dim());
        for j in 0..params.dim() {
            let (l, k, b) = (params.lambda[j], params.k[j], params.beta[j]);
            mass.push(reg_lower_gamma(l, b)?);
            ln_b.push(ln_b_normalizer(l, k, b)?);
        }
        Ok(Self { params, mass, ln_b })
    }

    pub fn params(&self) -> &GenGammaParams {
        &self.params
    }

    /// One draw: `t = P^{-1}(λ, u P(λ, β))`, `v = t / β`, `ξ = v^{1/(2k)}`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        for (j, slot) in out.iter_mut().enumerate() {
            let u: f64 = rng.sample(Open01);
            let t = inv_reg_lower_gamma(self.params.lambda[j], u * self.mass[j])?;
            let v = (t / self.params.beta[j]).min(1.0);
            let xi = v.powf(1.0 / (2.0 * self.params.k[j]));
            // t can round to exactly 0 for minuscule u; stay inside the support
            *slot = if xi > 0.0 { xi } else { f64::MIN_POSITIVE };
        }
        Ok(())
    }

    pub fn log_density(&self, xi: &[f64]) -> Result<f64> {
        check_len(self.params.dim(), xi.len())?;
        let mut total = 0.0;
        for (j, &x) in xi.iter().enumerate() {
            if !(x > 0.0 && x <= 1.0) {
                return Ok(f64::NEG_INFINITY);
            }
            let (l, k, b) = (self.params.lambda[j], self.params.k[j], self.params.beta[j]);
            let lx = x.ln();
            total += (2.0 * k * l - 1.0) * lx - b * (2.0 * k * lx).exp() - self.ln_b[j];
        }
        Ok(total)
    }

    /// `-E log q₀`, assembled per coordinate from `E ln ξ = E[ln v] / (2k)`,
    /// `E ξ^{2k} = G(λ, β)` and `ln B`.
    pub fn entropy(&self) -> Result<f64> {
        let mut h = 0.0;
        for j in 0..self.params.dim() {
            let (l, k, b) = (self.params.lambda[j], self.params.k[j], self.params.beta[j]);
            let e_ln_xi = expected_log_v(l, b)? / (2.0 * k);
            h -= (2.0 * k * l - 1.0) * e_ln_xi - b * g_moment(l, b)? - self.ln_b[j];
        }
        Ok(h)
    }
}

/// A base draw together with its log-density.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseSample {
    pub xi: Vec<f64>,
    pub log_density: f64,
}

/// Base distribution kinds.
#[derive(Clone, Debug)]
pub enum BaseDist {
    GenGamma(GenGammaBase),
    Gaussian { d: usize },
}

/// Label-only view of [`BaseDist`], for configs and CSV keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseKind {
    GenGamma,
    Gaussian,
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKind::GenGamma => "gengamma",
            BaseKind::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gengamma" => Ok(BaseKind::GenGamma),
            "gaussian" => Ok(BaseKind::Gaussian),
            other => Err(Error::Invalid(format!("unknown base kind '{other}'"))),
        }
    }

    /// The frozen base of this kind for a `d`-dimensional model fitted to
    /// `n` observations.
    pub fn build(self, d: usize, n: usize) -> Result<BaseDist> {
        match self {
            BaseKind::GenGamma => Ok(BaseDist::GenGamma(GenGammaBase::new(GenGammaParams::standard_init(
                d, n,
            )?)?)),
            BaseKind::Gaussian => {
                if d == 0 {
                    return Err(Error::Invalid("gaussian base needs d >= 1".into()));
                }
                Ok(BaseDist::Gaussian { d })
            }
        }
    }
}

pub fn gaussian_entropy(d: usize) -> f64 {
    0.5 * d as f64 * (2.0 * PI * std::f64::consts::E).ln()
}

impl BaseDist {
    pub fn kind(&self) -> BaseKind {
        match self {
            BaseDist::GenGamma(_) => BaseKind::GenGamma,
            BaseDist::Gaussian { .. } => BaseKind::Gaussian,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseDist::GenGamma(g) => g.params.dim(),
            BaseDist::Gaussian { d } => *d,
        }
    }

    pub fn log_density(&self, xi: &[f64]) -> Result<f64> {
        match self {
            BaseDist::GenGamma(g) => g.log_density(xi),
            BaseDist::Gaussian { d } => {
                check_len(*d, xi.len())?;
                let sq: f64 = xi.iter().map(|x| x * x).sum();
                Ok(-0.5 * *d as f64 * (2.0 * PI).ln() - 0.5 * sq)
            }
        }
    }

    pub fn entropy(&self) -> Result<f64> {
        match self {
            BaseDist::GenGamma(g) => g.entropy(),
            BaseDist::Gaussian { d } => Ok(gaussian_entropy(*d)),
        }
    }

    fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match self {
            BaseDist::GenGamma(g) => g.sample_one(rng, out),
            BaseDist::Gaussian { .. } => {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<BaseSample>> {
        let d = self.dim();
        (0..count)
            .map(|_| {
                let mut xi = vec![0.0; d];
                self.fill(rng, &mut xi)?;
                let log_density = self.log_density(&xi)?;
                Ok(BaseSample { xi, log_density })
            })
            .collect()
    }

    /// `count` draws as the columns of a `d × count` matrix.
    pub fn sample_matrix<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Tensor> {
        let d = self.dim();
        let mut cols = vec![0.0; d];
        let mut data = vec![0.0; d * count];
        for s in 0..count {
            self.fill(rng, &mut cols)?;
            for (j, &x) in cols.iter().enumerate() {
                data[j * count + s] = x;
            }
        }
        Tensor::new(d, count, data)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use crate::special::b_normalizer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base(l: f64, k: f64, b: f64) -> GenGammaBase {
        GenGammaBase::new(GenGammaParams::new(vec![l], vec![k], vec![b]).unwrap()).unwrap()
    }

    #[test]
    fn standard_init_layout() {
        let p = GenGammaParams::standard_init(4, 1000).unwrap();
        assert_eq!(p.lambda, vec![1.0; 4]);
        assert_eq!(p.k, vec![1.0; 4]);
        assert_eq!(p.beta, vec![1000.0, 2.0, 2.0, 2.0]);
        assert!(GenGammaParams::new(vec![1.0], vec![0.0], vec![1.0]).is_err());
        assert!(GenGammaParams::new(vec![1.0, 1.0], vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn log_density_hand_value() {
        // ln(e^{-1} / B(1,1,1)) with B = (1 - e^{-1}) / 2
        let g = base(1.0, 1.0, 1.0);
        let expect = (-1.0_f64).exp().ln() - b_normalizer(1.0, 1.0, 1.0).unwrap().ln();
        let got = g.log_density(&[1.0]).unwrap();
        assert!((got - expect).abs() < 1e-14);
        assert!((got - 0.151_822_3).abs() < 1e-6, "{got}");
        assert_eq!(g.log_density(&[0.0]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(g.log_density(&[1.5]).unwrap(), f64::NEG_INFINITY);
        assert!(g.log_density(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        for &(l, k, b) in &[(1.0, 1.0, 1.0), (0.5, 2.0, 30.0), (3.0, 0.5, 2.0)] {
            let g = base(l, k, b);
            let r = integrate(|x| g.log_density(&[x]).unwrap().exp(), 0.0, 1.0, 1e-12, 1e-12, 2000).unwrap();
            assert!((r.value - 1.0).abs() < 1e-6, "({l},{k},{b}) -> {}", r.value);
        }
    }

    #[test]
    fn samples_replay_and_stay_in_support() {
        let dist = BaseKind::GenGamma.build(5, 1000).unwrap();
        let a = dist.sample(&mut ChaCha8Rng::seed_from_u64(3), 200).unwrap();
        let b = dist.sample(&mut ChaCha8Rng::seed_from_u64(3), 200).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!(s.xi.iter().all(|&x| x > 0.0 && x <= 1.0));
            assert!(s.log_density.is_finite());
        }
    }

    #[test]
    fn sample_matrix_matches_sample_columns() {
        let dist = BaseKind::GenGamma.build(3, 50).unwrap();
        let m = dist.sample_matrix(&mut ChaCha8Rng::seed_from_u64(9), 4).unwrap();
        let v = dist.sample(&mut ChaCha8Rng::seed_from_u64(9), 4).unwrap();
        for (s, draw) in v.iter().enumerate() {
            for (j, x) in draw.xi.iter().enumerate() {
                assert_eq!(m.get(j, s), *x);
            }
        }
    }

    #[test]
    fn gaussian_entropy_closed_form() {
        let e1 = BaseDist::Gaussian { d: 1 }.entropy().unwrap();
        assert!((e1 - 1.418_938_5).abs() < 1e-7);
        let e10 = BaseDist::Gaussian { d: 10 }.entropy().unwrap();
        assert!((e10 - 10.0 * e1).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_additive() {
        let two = GenGammaBase::new(GenGammaParams::new(vec![1.0, 2.0], vec![1.0, 0.5], vec![3.0, 7.0]).unwrap())
            .unwrap()
            .entropy()
            .unwrap();
        let one = base(1.0, 1.0, 3.0).entropy().unwrap() + base(2.0, 0.5, 7.0).entropy().unwrap();
        assert!((two - one).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_quadrature() {
        for &(l, k, b) in &[(1.0, 1.0, 1.0), (2.0, 1.5, 40.0), (0.7, 1.0, 3.5)] {
            let g = base(l, k, b);
            let r = integrate(
                |x| {
                    let ld = g.log_density(&[x]).unwrap();
                    if ld.is_finite() {
                        -ld * ld.exp()
                    } else {
                        0.0
                    }
                },
                0.0,
                1.0,
                1e-12,
                1e-12,
                4000,
            )
            .unwrap();
            let h = g.entropy().unwrap();
            assert!((h - r.value).abs() < 1e-6, "({l},{k},{b}): {h} vs {}", r.value);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [BaseKind::GenGamma, BaseKind::Gaussian] {
            assert_eq!(BaseKind::parse(k.name()).unwrap(), k);
        }
        assert!(BaseKind::parse("laplace").is_err());
    }
}
