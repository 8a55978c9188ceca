//! Small drivers shared by the CLI and the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sltvi::asymptotics::{fit_log_evidence, EvidenceFit, Toy};
use sltvi::autodiff::{grad_check, GradCheck, Tensor};
use sltvi::basedist::BaseKind;
use sltvi::flow::{FlowParams, FlowSpec};
use sltvi::train_eval::Objective;
use sltvi::triplets::{Rlct, Triplet, TripletKind};

use crate::error::Result;

/// The sixteen `(triplet, H)` rows of the reference RLCT table.
pub fn table_rows() -> Vec<(TripletKind, usize)> {
    let hs = |k| match k {
        TripletKind::FfRelu => [3, 7, 16, 40],
        TripletKind::ReducedRank => [2, 7, 10, 16],
        TripletKind::Tanh | TripletKind::TanhZeroMean => [15, 50, 115, 280],
    };
    TripletKind::ALL
        .iter()
        .flat_map(|&k| hs(k).into_iter().map(move |h| (k, h)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct RlctRow {
    pub kind: TripletKind,
    pub h: usize,
    pub dim_w: usize,
    pub rlct: Option<Rlct>,
}

pub fn rlct_table() -> Result<Vec<RlctRow>> {
    table_rows()
        .into_iter()
        .map(|(kind, h)| {
            let t = Triplet::new(kind, h, 0)?;
            Ok(RlctRow {
                kind,
                h,
                dim_w: t.dim_w(),
                rlct: t.true_rlct(),
            })
        })
        .collect()
}

/// Twelve sample sizes log-spaced on `[e³, e⁹]`.
pub fn toy_sample_sizes() -> Vec<f64> {
    (0..12).map(|i| (3.0 + 6.0 * i as f64 / 11.0).exp()).collect()
}

#[derive(Clone, Debug)]
pub struct ToyQuadReport {
    /// `(n, ln Z̄(n), Ψ(n))`.
    pub rows: Vec<(f64, f64, f64)>,
    pub fit: EvidenceFit,
}

pub fn toy_quad(ns: &[f64]) -> Result<ToyQuadReport> {
    let toy = Toy::new();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        rows.push((n, toy.log_evidence(n)?, toy.psi_lower_bound(n)?));
    }
    let fit = fit_log_evidence(&rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>())?;
    Ok(ToyQuadReport { rows, fit })
}

/// Gradient check of the full Monte Carlo ELBO in the flow parameters, with
/// the base draws frozen. Parameters start from the seeded initialization
/// plus `N(0, 0.1²)` noise so that no block has an identically zero gradient.
pub fn elbo_gradcheck(
    kind: TripletKind,
    h: usize,
    coupling_pairs: usize,
    hidden: usize,
    mc_samples: usize,
    n: usize,
    seed: u64,
) -> Result<GradCheck> {
    let triplet = Triplet::new(kind, h, seed)?;
    let data = triplet.generate_data(n, seed ^ 0x5eed)?;
    let d = triplet.dim_w();
    let base = BaseKind::GenGamma.build(d, n)?;
    let spec = FlowSpec::new(d, coupling_pairs, hidden)?;
    let obj = Objective::new(&triplet, &data, &base, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Tensor = base.sample_matrix(&mut rng, mc_samples)?;
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let theta: Vec<f64> = FlowParams::init(spec, seed)
        .theta
        .iter()
        .map(|t| t + noise.sample(&mut rng))
        .collect();
    Ok(grad_check(|tape, th| obj.elbo_on_tape(tape, th, &xi), &theta, 1e-6)?)
}
