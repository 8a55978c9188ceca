//! ELBO on the tape, Adam training of the flow weights, and the free-energy
//! and generalization-error estimators.
//!
//! The base distribution is frozen: its draws enter the tape as constants
//! and its entropy is an analytic constant, so only θ receives gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::basedist::{BaseDist, BaseKind};
use crate::error::{Error, Result};
use crate::flow::{forward_on_tape, FlowParams, FlowSpec};
use crate::triplets::{log_prior, log_prior_on_tape, Dataset, Prepared, Triplet};

/// Optimizer protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Record the ELBO every this many epochs.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            learning_rate: 0.01,
            mc_samples: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(100.0),
            trace_every: 50,
        }
    }
}

/// Evaluation protocol for a trained flow.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Draws used for the final ELBO.
    pub elbo_samples: usize,
    /// Size of the independent test set.
    pub test_n: usize,
    /// Draws from `q` used in the predictive density.
    pub predictive_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            elbo_samples: 1000,
            test_n: 10_000,
            predictive_samples: 1000,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Everything needed to evaluate the ELBO of one experiment cell.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub triplet: &'a Triplet,
    pub data: &'a Dataset,
    pub prepared: Prepared,
    pub base: &'a BaseDist,
    pub spec: FlowSpec,
    pub entropy: f64,
}

impl<'a> Objective<'a> {
    pub fn new(triplet: &'a Triplet, data: &'a Dataset, base: &'a BaseDist, spec: FlowSpec) -> Result<Self> {
        if base.dim() != triplet.dim_w() || spec.d != triplet.dim_w() {
            return Err(Error::Dimension {
                expected: triplet.dim_w(),
                got: if base.dim() != triplet.dim_w() {
                    base.dim()
                } else {
                    spec.d
                },
            });
        }
        Ok(Self {
            triplet,
            data,
            prepared: triplet.prepare(data)?,
            base,
            spec,
            entropy: base.entropy()?,
        })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    /// Records the MC ELBO for the base draws in the columns of `xi`
    /// (`d × M`):
    /// `(1/M) Σ_s [log p(D | G_θ(ξ_s)) + log φ(G_θ(ξ_s)) + log|G_θ'(ξ_s)|] + H(q₀)`.
    pub fn elbo_on_tape(&self, tape: &mut Tape, theta: Var, xi: &Tensor) -> Result<Var> {
        let d = self.spec.d;
        let m = xi.cols();
        if m == 0 {
            return Err(Error::Invalid("ELBO needs at least one Monte Carlo sample".into()));
        }
        let xi_v = tape.constant(xi.clone());
        let out = forward_on_tape(&self.spec, tape, theta, xi_v)?;
        let wt = tape.transpose(out.w)?;
        let lp = log_prior_on_tape(tape, out.w)?;
        let mut total = tape.add(out.log_det_sum, lp)?;
        for s in 0..m {
            let ws = tape.slice(wt, s * d, 1, d)?;
            let ll = self.triplet.log_lik_on_tape(tape, &self.prepared, ws)?;
            let v = tape.value(ll).item();
            if !v.is_finite() {
                let wmax = tape.value(ws).data().iter().fold(0.0_f64, |a, x| a.max(x.abs()));
                return Err(Error::NonFinite(format!(
                    "log-likelihood of Monte Carlo sample {s} is {v} (max |w| = {wmax:e})"
                )));
            }
            total = tape.add(total, ll)?;
        }
        let mean = tape.scale(total, 1.0 / m as f64)?;
        tape.add_scalar(mean, self.entropy)
    }

    /// ELBO value and its θ-gradient for fixed base draws.
    pub fn value_and_grad(&self, theta: &[f64], xi: &Tensor) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let th = tape.leaf(Tensor::column(theta.to_vec()));
        let root = self.elbo_on_tape(&mut tape, th, xi)?;
        let value = tape.value(root).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("ELBO evaluated to {value}")));
        }
        let grad = tape.backward(root)?.wrt(&tape, th);
        Ok((value, grad))
    }

    /// Plain (tape-free) per-draw ELBO integrand, used for evaluation.
    pub fn elbo_integrand(&self, params: &FlowParams, xi: &[f64]) -> Result<f64> {
        let (w, log_det) = params.forward(xi)?;
        Ok(self.triplet.log_lik(&w, self.data)? + log_prior(&w) + log_det)
    }

    /// ELBO with `samples` fresh draws; returns `(estimate, standard error)`.
    pub fn elbo_mc<R: Rng + ?Sized>(&self, params: &FlowParams, samples: usize, rng: &mut R) -> Result<(f64, f64)> {
        let draws = self.base.sample(rng, samples)?;
        let vals = draws
            .iter()
            .map(|s| self.elbo_integrand(params, &s.xi))
            .collect::<Result<Vec<_>>>()?;
        let (mean, se) = mean_and_se(&vals);
        Ok((mean + self.entropy, se))
    }
}

/// Why training stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStatus {
    Ok,
    /// ELBO or gradient became non-finite at this epoch.
    Diverged {
        epoch: usize,
    },
}

impl TrainStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TrainStatus::Ok => "ok",
            TrainStatus::Diverged { .. } => "diverged",
        }
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: FlowParams,
    /// `(epoch, mini-batch ELBO)` every `trace_every` epochs.
    pub trace: Vec<(usize, f64)>,
    pub status: TrainStatus,
}

/// Maximizes the ELBO over θ with Adam, redrawing the `M` base samples every
/// epoch. θ starts from [`FlowParams::init`] with `seed`; the noise stream is
/// derived from the same seed.
pub fn train(obj: &Objective<'_>, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train_from(obj, config, FlowParams::init(obj.spec, seed), seed)
}

pub fn train_from(obj: &Objective<'_>, config: &TrainConfig, init: FlowParams, seed: u64) -> Result<TrainOutcome> {
    if config.mc_samples == 0 {
        return Err(Error::Invalid("mc_samples must be at least 1".into()));
    }
    let mut params = init;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(
        params.theta.len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.eps,
    );
    let mut trace = Vec::new();
    let every = config.trace_every.max(1);
    for epoch in 0..config.epochs {
        let xi = obj.base.sample_matrix(&mut rng, config.mc_samples)?;
        let (value, mut grad) = match obj.value_and_grad(&params.theta, &xi) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                return Ok(TrainOutcome {
                    params,
                    trace,
                    status: TrainStatus::Diverged { epoch },
                })
            }
            Err(e) => return Err(e),
        };
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Ok(TrainOutcome {
                params,
                trace,
                status: TrainStatus::Diverged { epoch },
            });
        }
        if let Some(c) = config.clip_norm {
            if norm > c {
                let k = c / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
        }
        // ascent on the ELBO = descent on its negative
        grad.iter_mut().for_each(|g| *g = -*g);
        adam.step(&mut params.theta, &grad);
        if epoch % every == 0 || epoch + 1 == config.epochs {
            trace.push((epoch, value));
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        status: TrainStatus::Ok,
    })
}

/// Normalized variational free energy `-ELBO - n S_n`.
pub fn mvfe(elbo: f64, n: usize, s_n: f64) -> f64 {
    -elbo - n as f64 * s_n
}

/// `S` weight vectors `G_θ(ξ_s)` drawn from the trained approximation.
pub fn posterior_samples<R: Rng + ?Sized>(
    params: &FlowParams,
    base: &BaseDist,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    base.sample(rng, count)?
        .iter()
        .map(|s| Ok(params.forward(&s.xi)?.0))
        .collect()
}

/// `ln((1/S) Σ_s exp(a_s))` evaluated stably.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + (s / values.len() as f64).ln()
}

/// `log p_vb(y | x) = log (1/S) Σ_s p(y | x, w_s)`.
pub fn predictive_logdensity(triplet: &Triplet, samples: &[Vec<f64>], x: &[f64], y: &[f64]) -> f64 {
    let mut scratch = Vec::new();
    let mut buf = Vec::with_capacity(samples.len());
    for w in samples {
        buf.push(triplet.log_density_point(w, x, y, &mut scratch));
    }
    log_mean_exp(&buf)
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Generalization-error estimate `(1/n') Σ [log p₀(y|x) - log p̂(y|x)]` over a
/// test set, for arbitrary truth and predictive log-densities. Returns the
/// estimate and its standard error.
pub fn vge_estimate<T, P>(test: &Dataset, truth: T, predictive: P) -> (f64, f64)
where
    T: Fn(&[f64], &[f64]) -> f64,
    P: Fn(&[f64], &[f64]) -> f64,
{
    let (dx, dy) = (test.x.cols(), test.y.cols());
    let diffs: Vec<f64> = (0..test.n())
        .map(|i| {
            let x = &test.x.data()[i * dx..(i + 1) * dx];
            let y = &test.y.data()[i * dy..(i + 1) * dy];
            truth(x, y) - predictive(x, y)
        })
        .collect();
    mean_and_se(&diffs)
}

/// VGE of a trained flow against the triplet's truth.
pub fn vge(triplet: &Triplet, samples: &[Vec<f64>], test: &Dataset) -> (f64, f64) {
    vge_estimate(
        test,
        |x, y| triplet.log_density_point(&triplet.truth, x, y, &mut Vec::new()),
        |x, y| predictive_logdensity(triplet, samples, x, y),
    )
}

/// One experiment cell's outcome.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub status: TrainStatus,
    pub elbo_final: f64,
    pub mvfe: f64,
    pub vge: f64,
    pub s_n: f64,
    pub trace: Vec<(usize, f64)>,
}

/// Seeds of one cell: the training data (shared between bases so that they
/// see identical datasets), the test data, and the optimizer/noise stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellSeeds {
    pub data: u64,
    pub test: u64,
    pub train: u64,
}

/// Trains and evaluates one `(triplet, base, flow, n)` cell.
pub fn run_cell(
    triplet: &Triplet,
    base_kind: BaseKind,
    spec: FlowSpec,
    n: usize,
    seeds: CellSeeds,
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
) -> Result<CellOutcome> {
    let data = triplet.generate_data(n, seeds.data)?;
    let s_n = triplet.empirical_entropy(&data)?;
    let base = base_kind.build(triplet.dim_w(), n)?;
    let obj = Objective::new(triplet, &data, &base, spec)?;
    let out = train(&obj, train_cfg, seeds.train)?;
    if out.status != TrainStatus::Ok {
        return Ok(CellOutcome {
            status: out.status,
            elbo_final: f64::NAN,
            mvfe: f64::NAN,
            vge: f64::NAN,
            s_n,
            trace: out.trace,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.train);
    rng.set_stream(2);
    let (elbo_final, _) = obj.elbo_mc(&out.params, eval_cfg.elbo_samples, &mut rng)?;
    let samples = posterior_samples(&out.params, &base, eval_cfg.predictive_samples, &mut rng)?;
    let test = triplet.generate_data(eval_cfg.test_n, seeds.test)?;
    let (g, _) = vge(triplet, &samples, &test);
    let finite = elbo_final.is_finite() && g.is_finite();
    Ok(CellOutcome {
        status: if finite {
            TrainStatus::Ok
        } else {
            TrainStatus::Diverged {
                epoch: train_cfg.epochs,
            }
        },
        elbo_final,
        mvfe: mvfe(elbo_final, n, s_n),
        vge: g,
        s_n,
        trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplets::TripletKind;

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut p = vec![1.0, -2.0];
        let mut a = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        a.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, -2.0]);
        let mut b = Adam::new(2, 0.0, 0.9, 0.999, 1e-8);
        b.step(&mut p, &[3.0, -1.0]);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut p = vec![0.0, 0.0];
        let mut a = Adam::new(2, 0.01, 0.9, 0.999, 1e-8);
        a.step(&mut p, &[5.0, -0.2]);
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -4.0];
        let mut a = Adam::new(2, 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            a.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn log_mean_exp_cases() {
        let v = [0.1_f64, -0.3, 0.7];
        let naive = (v.iter().map(|x| x.exp()).sum::<f64>() / 3.0).ln();
        assert!((log_mean_exp(&v) - naive).abs() < 1e-12 * naive.abs().max(1.0));
        assert_eq!(log_mean_exp(&[-2.5]), -2.5);
        let tiny = log_mean_exp(&[-2000.0, -2001.0]);
        assert!(tiny.is_finite() && tiny > -2001.0 && tiny < -2000.0);
    }

    #[test]
    fn mvfe_identity() {
        assert_eq!(mvfe(-10.0, 100, 0.05), 5.0);
    }

    #[test]
    fn identity_flow_gaussian_elbo_matches_direct() {
        let t = Triplet::new(TripletKind::TanhZeroMean, 1, 0).unwrap();
        let data = t.generate_data(30, 2).unwrap();
        let base = BaseDist::Gaussian { d: 2 };
        let spec = FlowSpec::new(2, 2, 4).unwrap();
        let obj = Objective::new(&t, &data, &base, spec).unwrap();
        let params = FlowParams::init(spec, 0);
        let xi = base.sample_matrix(&mut ChaCha8Rng::seed_from_u64(1), 4).unwrap();
        let (v, _) = obj.value_and_grad(&params.theta, &xi).unwrap();
        let mut direct = 0.0;
        for s in 0..4 {
            let w = [xi.get(0, s), xi.get(1, s)];
            direct += t.log_lik(&w, &data).unwrap() + log_prior(&w);
        }
        direct = direct / 4.0 + crate::basedist::gaussian_entropy(2);
        assert!((v - direct).abs() < 1e-10, "{v} vs {direct}");
    }

    #[test]
    fn training_replays() {
        let t = Triplet::new(TripletKind::TanhZeroMean, 1, 0).unwrap();
        let data = t.generate_data(50, 2).unwrap();
        let base = BaseKind::GenGamma.build(2, 50).unwrap();
        let spec = FlowSpec::new(2, 1, 3).unwrap();
        let obj = Objective::new(&t, &data, &base, spec).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let a = train(&obj, &cfg, 4).unwrap();
        let b = train(&obj, &cfg, 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        let frozen = TrainConfig {
            epochs: 30,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let c = train(&obj, &frozen, 4).unwrap();
        assert_eq!(c.params, FlowParams::init(spec, 4));
    }
}
