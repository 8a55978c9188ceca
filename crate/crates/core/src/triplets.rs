//! Model–truth–prior triplets: data generation, Gaussian log-likelihoods
//! (plain and on the tape), the standard Gaussian prior, the empirical
//! entropy and exact RLCTs where they are known.
//!
//! Weight packing is row-major. Reduced rank stores `A` (`H × M`) then `B`
//! (`N × H`); the ReLU net stores `w₁` (`H × 13`) then `w₂` (`1 × H`); the tanh
//! nets store the input weights `a` then the output weights `b`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Inputs of the feed-forward ReLU triplet.
pub const FFRELU_INPUTS: usize = 13;

/// Which triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TripletKind {
    Tanh,
    TanhZeroMean,
    ReducedRank,
    FfRelu,
}

impl TripletKind {
    pub const ALL: [TripletKind; 4] = [
        TripletKind::FfRelu,
        TripletKind::ReducedRank,
        TripletKind::Tanh,
        TripletKind::TanhZeroMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TripletKind::Tanh => "tanh",
            TripletKind::TanhZeroMean => "tanh_zero_mean",
            TripletKind::ReducedRank => "reduced_rank",
            TripletKind::FfRelu => "ffrelu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(TripletKind::Tanh),
            "tanh_zero_mean" => Ok(TripletKind::TanhZeroMean),
            "reduced_rank" | "reducedrank" => Ok(TripletKind::ReducedRank),
            "ffrelu" => Ok(TripletKind::FfRelu),
            other => Err(Error::Invalid(format!("unknown triplet '{other}'"))),
        }
    }
}

impl fmt::Display for TripletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exact learning coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rlct {
    pub lambda: Ratio<i64>,
    pub multiplicity: u32,
}

impl Rlct {
    pub fn value(&self) -> f64 {
        *self.lambda.numer() as f64 / *self.lambda.denom() as f64
    }
}

/// A triplet instance: kind, width and the true parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub kind: TripletKind,
    pub h: usize,
    pub truth: Vec<f64>,
    /// Seed of the Gaussian truth draw (only used by tanh and ffrelu).
    pub truth_seed: u64,
}

/// `n` observations, one row per observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// One row per observation, inputs then targets.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let (dx, dy) = (self.x.cols(), self.y.cols());
        let header: Vec<String> = (0..dx)
            .map(|j| format!("x{j}"))
            .chain((0..dy).map(|j| format!("y{j}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.n() {
            let row: Vec<String> = (0..dx)
                .map(|j| format!("{:e}", self.x.get(i, j)))
                .chain((0..dy).map(|j| format!("{:e}", self.y.get(i, j))))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tape-ready constants derived from a dataset.
#[derive(Clone, Debug)]
pub enum Prepared {
    /// `1 × n` inputs and targets.
    Scalar { x: Tensor, y: Tensor, n: usize },
    /// Sufficient statistics `Σ x xᵀ`, `Σ y xᵀ`, `Σ ‖y‖²`.
    Linear {
        sxx: Tensor,
        syx: Tensor,
        syy: f64,
        n: usize,
    },
    /// Transposed inputs (`13 × n`) and `1 × n` targets.
    Relu { xt: Tensor, y: Tensor, n: usize },
}

fn half_ln_2pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

impl Triplet {
    /// Builds the triplet; tanh and ffrelu truths are standard Gaussian
    /// draws from `truth_seed`.
    pub fn new(kind: TripletKind, h: usize, truth_seed: u64) -> Result<Self> {
        if h == 0 {
            return Err(Error::Invalid("triplet width H must be positive".into()));
        }
        let mut t = Self {
            kind,
            h,
            truth: Vec::new(),
            truth_seed,
        };
        t.truth = match kind {
            TripletKind::TanhZeroMean => vec![0.0; t.dim_w()],
            TripletKind::Tanh | TripletKind::FfRelu => {
                let mut rng = ChaCha8Rng::seed_from_u64(truth_seed);
                (0..t.dim_w()).map(|_| rng.sample(StandardNormal)).collect()
            }
            TripletKind::ReducedRank => {
                let (m, n) = (t.dim_x(), t.dim_y());
                let mut w = vec![0.0; t.dim_w()];
                // A₀ = [I_H | 1_{H×3}]
                for r in 0..h {
                    w[r * m + r] = 1.0;
                    for c in h..m {
                        w[r * m + c] = 1.0;
                    }
                }
                // B₀ = I
                let off = h * m;
                for r in 0..n {
                    w[off + r * h + r] = 1.0;
                }
                w
            }
        };
        Ok(t)
    }

    pub fn dim_x(&self) -> usize {
        match self.kind {
            TripletKind::Tanh | TripletKind::TanhZeroMean => 1,
            TripletKind::ReducedRank => self.h + 3,
            TripletKind::FfRelu => FFRELU_INPUTS,
        }
    }

    pub fn dim_y(&self) -> usize {
        match self.kind {
            TripletKind::ReducedRank => self.h,
            _ => 1,
        }
    }

    pub fn dim_w(&self) -> usize {
        let h = self.h;
        match self.kind {
            TripletKind::Tanh | TripletKind::TanhZeroMean => 2 * h,
            TripletKind::ReducedRank => self.dim_x() * h + self.dim_y() * h,
            TripletKind::FfRelu => FFRELU_INPUTS * h + h,
        }
    }

    /// Exact RLCT and multiplicity where known.
    pub fn true_rlct(&self) -> Option<Rlct> {
        let h = self.h as i64;
        match self.kind {
            TripletKind::TanhZeroMean => {
                let mut i = (h as f64).sqrt() as i64;
                while i * i > h {
                    i -= 1;
                }
                while (i + 1) * (i + 1) <= h {
                    i += 1;
                }
                Some(Rlct {
                    lambda: Ratio::new(h + i * i + i, 4 * i + 2),
                    multiplicity: if i * i == h { 2 } else { 1 },
                })
            }
            TripletKind::ReducedRank => {
                let (m, n, r) = (self.dim_x() as i64, self.dim_y() as i64, h);
                Some(Rlct {
                    lambda: Ratio::new(n * h - h * r + m * r, 2),
                    multiplicity: 1,
                })
            }
            TripletKind::Tanh | TripletKind::FfRelu => None,
        }
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim_w() {
            return Err(Error::Dimension {
                expected: self.dim_w(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Regression function `f(x, w)` written into `out` (length `dim_y`).
    pub fn predict(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let h = self.h;
        match self.kind {
            TripletKind::Tanh | TripletKind::TanhZeroMean => {
                out[0] = (0..h).map(|k| w[h + k] * (w[k] * x[0]).tanh()).sum();
            }
            TripletKind::ReducedRank => {
                let m = self.dim_x();
                let b_off = h * m;
                let ax: Vec<f64> = (0..h).map(|r| (0..m).map(|c| w[r * m + c] * x[c]).sum()).collect();
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (0..h).map(|c| w[b_off + r * h + c] * ax[c]).sum();
                }
            }
            TripletKind::FfRelu => {
                let off = FFRELU_INPUTS * h;
                out[0] = (0..h)
                    .map(|k| {
                        let z: f64 = (0..FFRELU_INPUTS).map(|c| w[k * FFRELU_INPUTS + c] * x[c]).sum();
                        w[off + k] * z.max(0.0)
                    })
                    .sum();
            }
        }
    }

    /// `log p(y | x, w)` for one observation.
    pub fn log_density_point(&self, w: &[f64], x: &[f64], y: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(self.dim_y(), 0.0);
        self.predict(w, x, scratch);
        let sq: f64 = y.iter().zip(scratch.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        -(y.len() as f64) * half_ln_2pi() - 0.5 * sq
    }

    /// `Σᵢ log p(yᵢ | xᵢ, w)`, straight-line evaluation.
    pub fn log_lik(&self, w: &[f64], data: &Dataset) -> Result<f64> {
        self.check_w(w)?;
        self.check_data(data)?;
        let mut scratch = Vec::new();
        Ok((0..data.n())
            .map(|i| self.log_density_point(w, row(&data.x, i), row(&data.y, i), &mut scratch))
            .sum())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.x.cols() != self.dim_x() {
            return Err(Error::Dimension {
                expected: self.dim_x(),
                got: data.x.cols(),
            });
        }
        if data.y.cols() != self.dim_y() {
            return Err(Error::Dimension {
                expected: self.dim_y(),
                got: data.y.cols(),
            });
        }
        Ok(())
    }

    /// `n` observations under the truth: inputs uniform on `[-1, 1]` for the
    /// tanh nets and standard Gaussian otherwise, plus unit Gaussian noise.
    pub fn generate_data(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Invalid("need at least one observation".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dx, dy) = (self.dim_x(), self.dim_y());
        let mut x = vec![0.0; n * dx];
        let mut y = vec![0.0; n * dy];
        let mut f = vec![0.0; dy];
        for i in 0..n {
            let xi = &mut x[i * dx..(i + 1) * dx];
            for v in xi.iter_mut() {
                *v = match self.kind {
                    TripletKind::Tanh | TripletKind::TanhZeroMean => rng.random_range(-1.0..=1.0),
                    _ => rng.sample(StandardNormal),
                };
            }
            self.predict(&self.truth, xi, &mut f);
            for (j, &fj) in f.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                y[i * dy + j] = fj + e;
            }
        }
        Ok(Dataset {
            x: Tensor::new(n, dx, x)?,
            y: Tensor::new(n, dy, y)?,
        })
    }

    /// `S_n = -(1/n) Σ log p(yᵢ | xᵢ, w₀)`.
    pub fn empirical_entropy(&self, data: &Dataset) -> Result<f64> {
        Ok(-self.log_lik(&self.truth, data)? / data.n() as f64)
    }

    /// Constants for [`Triplet::log_lik_on_tape`].
    pub fn prepare(&self, data: &Dataset) -> Result<Prepared> {
        self.check_data(data)?;
        let n = data.n();
        Ok(match self.kind {
            TripletKind::Tanh | TripletKind::TanhZeroMean => Prepared::Scalar {
                x: Tensor::row(data.x.data().to_vec()),
                y: Tensor::row(data.y.data().to_vec()),
                n,
            },
            TripletKind::ReducedRank => {
                let (m, k) = (self.dim_x(), self.dim_y());
                let mut sxx = vec![0.0; m * m];
                let mut syx = vec![0.0; k * m];
                let mut syy = 0.0;
                for i in 0..n {
                    let (x, y) = (row(&data.x, i), row(&data.y, i));
                    for a in 0..m {
                        for b in 0..m {
                            sxx[a * m + b] += x[a] * x[b];
                        }
                    }
                    for a in 0..k {
                        for b in 0..m {
                            syx[a * m + b] += y[a] * x[b];
                        }
                        syy += y[a] * y[a];
                    }
                }
                Prepared::Linear {
                    sxx: Tensor::new(m, m, sxx)?,
                    syx: Tensor::new(k, m, syx)?,
                    syy,
                    n,
                }
            }
            TripletKind::FfRelu => Prepared::Relu {
                xt: data.x.transpose(),
                y: Tensor::row(data.y.data().to_vec()),
                n,
            },
        })
    }

    /// Records `Σᵢ log p(yᵢ | xᵢ, w)` for a weight node `w` holding
    /// `dim_w` entries (any shape; read in storage order).
    pub fn log_lik_on_tape(&self, tape: &mut Tape, prepared: &Prepared, w: Var) -> Result<Var> {
        let len = tape.value(w).len();
        if len != self.dim_w() {
            return Err(Error::Dimension {
                expected: self.dim_w(),
                got: len,
            });
        }
        let h = self.h;
        match (self.kind, prepared) {
            (TripletKind::Tanh | TripletKind::TanhZeroMean, Prepared::Scalar { x, y, n }) => {
                let a = tape.slice(w, 0, h, 1)?;
                let b = tape.slice(w, h, 1, h)?;
                let xc = tape.constant(x.clone());
                let yc = tape.constant(y.clone());
                let pre = tape.matmul(a, xc)?;
                let act = tape.tanh(pre)?;
                let f = tape.matmul(b, act)?;
                gaussian_sse_to_loglik(tape, f, yc, *n as f64)
            }
            (TripletKind::FfRelu, Prepared::Relu { xt, y, n }) => {
                let w1 = tape.slice(w, 0, h, FFRELU_INPUTS)?;
                let w2 = tape.slice(w, FFRELU_INPUTS * h, 1, h)?;
                let xc = tape.constant(xt.clone());
                let yc = tape.constant(y.clone());
                let pre = tape.matmul(w1, xc)?;
                let act = tape.relu(pre)?;
                let f = tape.matmul(w2, act)?;
                gaussian_sse_to_loglik(tape, f, yc, *n as f64)
            }
            (TripletKind::ReducedRank, Prepared::Linear { sxx, syx, syy, n }) => {
                // Σ‖y - Cx‖² = Syy - 2⟨C, Syx⟩ + ⟨C Sxx, C⟩ with C = BA
                let (m, k) = (self.dim_x(), self.dim_y());
                let a = tape.slice(w, 0, h, m)?;
                let b = tape.slice(w, h * m, k, h)?;
                let c = tape.matmul(b, a)?;
                let syx_c = tape.constant(syx.clone());
                let sxx_c = tape.constant(sxx.clone());
                let cross = tape.mul(c, syx_c)?;
                let cross = tape.sum(cross)?;
                let cs = tape.matmul(c, sxx_c)?;
                let quad = tape.mul(cs, c)?;
                let quad = tape.sum(quad)?;
                let cross2 = tape.scale(cross, -2.0)?;
                let sse = tape.add(quad, cross2)?;
                let sse = tape.add_scalar(sse, *syy)?;
                let ll = tape.scale(sse, -0.5)?;
                tape.add_scalar(ll, -(*n as f64) * k as f64 * half_ln_2pi())
            }
            _ => Err(Error::Invalid(format!(
                "prepared data does not belong to a {} triplet",
                self.kind
            ))),
        }
    }
}

fn row(t: &Tensor, i: usize) -> &[f64] {
    let c = t.cols();
    &t.data()[i * c..(i + 1) * c]
}

fn gaussian_sse_to_loglik(tape: &mut Tape, f: Var, y: Var, n: f64) -> Result<Var> {
    let r = tape.sub(f, y)?;
    let sq = tape.square(r)?;
    let s = tape.sum(sq)?;
    let ll = tape.scale(s, -0.5)?;
    tape.add_scalar(ll, -n * half_ln_2pi())
}

/// Standard Gaussian prior `log φ(w)`.
pub fn log_prior(w: &[f64]) -> f64 {
    -(w.len() as f64) * half_ln_2pi() - 0.5 * w.iter().map(|x| x * x).sum::<f64>()
}

/// `Σ_s log φ(w_s)` for the columns (or any split) of `w`, whose entries
/// total `dim_w × count`.
pub fn log_prior_on_tape(tape: &mut Tape, w: Var) -> Result<Var> {
    let len = tape.value(w).len() as f64;
    let sq = tape.square(w)?;
    let s = tape.sum(sq)?;
    let lp = tape.scale(s, -0.5)?;
    tape.add_scalar(lp, -len * half_ln_2pi())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    #[test]
    fn table_dimensions() {
        let rows = [
            (TripletKind::FfRelu, [3, 7, 16, 40], [42, 98, 224, 560]),
            (TripletKind::ReducedRank, [2, 7, 10, 16], [14, 119, 230, 560]),
            (TripletKind::Tanh, [15, 50, 115, 280], [30, 100, 230, 560]),
            (TripletKind::TanhZeroMean, [15, 50, 115, 280], [30, 100, 230, 560]),
        ];
        for (kind, hs, dims) in rows {
            for (h, d) in hs.iter().zip(dims) {
                let t = Triplet::new(kind, *h, 0).unwrap();
                assert_eq!(t.dim_w(), d, "{kind} H={h}");
                assert_eq!(t.truth.len(), d);
            }
        }
        let rr = Triplet::new(TripletKind::ReducedRank, 10, 0).unwrap();
        assert_eq!((rr.dim_x(), rr.dim_y()), (13, 10));
    }

    #[test]
    fn rlct_values() {
        let tz = |h| {
            Triplet::new(TripletKind::TanhZeroMean, h, 0)
                .unwrap()
                .true_rlct()
                .unwrap()
        };
        assert_eq!(tz(15).lambda, Ratio::new(27, 14));
        assert_eq!(tz(15).multiplicity, 1);
        assert_eq!(tz(1).lambda, Ratio::new(1, 2));
        assert_eq!(tz(1).multiplicity, 2);
        assert_eq!(tz(16).multiplicity, 2);
        let rr = Triplet::new(TripletKind::ReducedRank, 7, 0)
            .unwrap()
            .true_rlct()
            .unwrap();
        assert_eq!(rr.lambda, Ratio::from_integer(35));
        assert!(Triplet::new(TripletKind::FfRelu, 3, 0).unwrap().true_rlct().is_none());
    }

    #[test]
    fn reduced_rank_truth_layout() {
        let t = Triplet::new(TripletKind::ReducedRank, 2, 0).unwrap();
        let a: Vec<f64> = t.truth[..10].to_vec();
        assert_eq!(a, vec![1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(&t.truth[10..], &[1.0, 0.0, 0.0, 1.0]);
        let mut out = [0.0; 2];
        t.predict(&t.truth, &[1.0, 2.0, 3.0, 4.0, 5.0], &mut out);
        assert_eq!(out, [13.0, 14.0]);
    }

    #[test]
    fn single_point_zero_residual() {
        let t = Triplet::new(TripletKind::Tanh, 1, 0).unwrap();
        let data = Dataset {
            x: Tensor::new(1, 1, vec![0.3]).unwrap(),
            y: Tensor::new(1, 1, vec![0.0]).unwrap(),
        };
        let ll = t.log_lik(&[0.0, 0.0], &data).unwrap();
        assert!((ll + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn tape_matches_direct() {
        for (kind, h) in [
            (TripletKind::Tanh, 3),
            (TripletKind::TanhZeroMean, 2),
            (TripletKind::ReducedRank, 2),
            (TripletKind::FfRelu, 3),
        ] {
            let t = Triplet::new(kind, h, 17).unwrap();
            let data = t.generate_data(40, 5).unwrap();
            let prep = t.prepare(&data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let w: Vec<f64> = (0..t.dim_w()).map(|_| rng.sample(StandardNormal)).collect();
            let mut tape = Tape::new();
            let wv = tape.leaf(Tensor::row(w.clone()));
            let ll = t.log_lik_on_tape(&mut tape, &prep, wv).unwrap();
            let direct = t.log_lik(&w, &data).unwrap();
            let got = tape.value(ll).item();
            assert!(
                (got - direct).abs() < 1e-12 * direct.abs().max(1.0),
                "{kind}: {got} vs {direct}"
            );
        }
    }

    #[test]
    fn tape_gradients() {
        for (kind, h) in [
            (TripletKind::Tanh, 2),
            (TripletKind::ReducedRank, 2),
            (TripletKind::FfRelu, 2),
        ] {
            let t = Triplet::new(kind, h, 3).unwrap();
            let data = t.generate_data(25, 8).unwrap();
            let prep = t.prepare(&data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let w0: Vec<f64> = (0..t.dim_w()).map(|_| rng.sample(StandardNormal)).collect();
            let r = grad_check(|tape, w| t.log_lik_on_tape(tape, &prep, w), &w0, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-5, "{kind}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn prior_values_and_gradient() {
        assert!((log_prior(&[0.0, 0.0]) + 1.837_877_1).abs() < 1e-7);
        let w = [0.5, -1.5, 2.0];
        let split = log_prior(&w[..1]) + log_prior(&w[1..]);
        assert!((log_prior(&w) - split).abs() < 1e-14);
        let r = grad_check(log_prior_on_tape, &w, 1e-5).unwrap();
        for (g, x) in r.analytic.iter().zip(&w) {
            assert!((g + x).abs() < 1e-14);
        }
    }

    #[test]
    fn noiseless_truth_likelihood() {
        let t = Triplet::new(TripletKind::ReducedRank, 2, 0).unwrap();
        let mut data = t.generate_data(30, 1).unwrap();
        let mut y = Vec::new();
        let mut f = [0.0; 2];
        for i in 0..30 {
            t.predict(&t.truth, row(&data.x, i), &mut f);
            y.extend_from_slice(&f);
        }
        data.y = Tensor::new(30, 2, y).unwrap();
        let ll = t.log_lik(&t.truth, &data).unwrap();
        assert!((ll + 30.0 * 2.0 * half_ln_2pi()).abs() < 1e-10);
    }

    #[test]
    fn data_replay_and_zero_mean_truth() {
        let t = Triplet::new(TripletKind::TanhZeroMean, 3, 0).unwrap();
        assert!(t.truth.iter().all(|&x| x == 0.0));
        assert_eq!(t.generate_data(50, 7).unwrap(), t.generate_data(50, 7).unwrap());
        assert_ne!(t.generate_data(50, 7).unwrap(), t.generate_data(50, 8).unwrap());
        let d = t.generate_data(50, 7).unwrap();
        assert!(d.x.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        let s = t.empirical_entropy(&d).unwrap();
        assert!((s * 50.0 + t.log_lik(&t.truth, &d).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn names_round_trip() {
        for k in TripletKind::ALL {
            assert_eq!(TripletKind::parse(k.name()).unwrap(), k);
        }
        assert!(TripletKind::parse("conv").is_err());
    }

    #[test]
    fn csv_export() {
        let t = Triplet::new(TripletKind::ReducedRank, 2, 0).unwrap();
        let d = t.generate_data(3, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,x1,x2,x3,x4,y0,y1");
        assert_eq!(lines.len(), 4);
    }
}
