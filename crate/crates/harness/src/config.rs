//! Sweep configuration, read from a flat TOML file.

use std::path::Path;

use serde::Deserialize;
use sltvi::basedist::BaseKind;
use sltvi::flow::FlowSpec;
use sltvi::train_eval::{EvalConfig, TrainConfig};
use sltvi::triplets::{Triplet, TripletKind};

use crate::error::{HarnessError, Result};

/// `round(10^x)` for ten `x` evenly spaced on `[3.0, 3.7]`.
pub fn default_n_grid() -> Vec<usize> {
    (0..10)
        .map(|i| 10f64.powf(3.0 + 0.7 * i as f64 / 9.0).round() as usize)
        .collect()
}

/// Parses a flow label such as `2_4` into `(coupling_pairs, hidden)`.
pub fn parse_flow_label(label: &str) -> Result<(usize, usize)> {
    let bad = || HarnessError::Config(format!("flow label '{label}' is not of the form <pairs>_<hidden>"));
    let (a, b) = label.split_once('_').ok_or_else(bad)?;
    let a: usize = a.parse().map_err(|_| bad())?;
    let b: usize = b.parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

/// One sweep. Missing keys fall back to the full training protocol.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub triplet: String,
    pub hs: Vec<usize>,
    pub bases: Vec<String>,
    pub flows: Vec<String>,
    pub n_grid: Vec<usize>,
    pub seeds: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mc_samples: usize,
    /// Zero disables clipping.
    pub clip_norm: f64,
    pub hidden_layers: usize,
    pub elbo_samples: usize,
    pub test_n: usize,
    pub predictive_samples: usize,
    pub global_seed: u64,
    pub truth_seed: u64,
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let eval = EvalConfig::default();
        Self {
            triplet: "reduced_rank".into(),
            hs: vec![2],
            bases: vec!["gengamma".into(), "gaussian".into()],
            flows: vec!["2_4".into(), "2_16".into(), "4_4".into(), "4_16".into()],
            n_grid: default_n_grid(),
            seeds: 30,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            mc_samples: train.mc_samples,
            clip_norm: train.clip_norm.unwrap_or(0.0),
            hidden_layers: 3,
            elbo_samples: eval.elbo_samples,
            test_n: eval.test_n,
            predictive_samples: eval.predictive_samples,
            global_seed: 0,
            truth_seed: 0,
            workers: None,
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        TripletKind::parse(&self.triplet)?;
        for b in &self.bases {
            BaseKind::parse(b)?;
        }
        for f in &self.flows {
            parse_flow_label(f)?;
        }
        let empty = [
            ("hs", self.hs.is_empty()),
            ("bases", self.bases.is_empty()),
            ("flows", self.flows.is_empty()),
            ("n_grid", self.n_grid.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(HarnessError::Config(format!("'{name}' must not be empty")));
        }
        if self.hs.contains(&0) || self.n_grid.contains(&0) {
            return Err(HarnessError::Config("H and n values must be positive".into()));
        }
        if self.seeds == 0 || self.mc_samples == 0 || self.hidden_layers == 0 {
            return Err(HarnessError::Config(
                "seeds, mc_samples and hidden_layers must be positive".into(),
            ));
        }
        if self.test_n == 0 || self.elbo_samples == 0 || self.predictive_samples == 0 {
            return Err(HarnessError::Config("evaluation sample sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn triplet_kind(&self) -> Result<TripletKind> {
        Ok(TripletKind::parse(&self.triplet)?)
    }

    pub fn triplet(&self, h: usize) -> Result<Triplet> {
        Ok(Triplet::new(self.triplet_kind()?, h, self.truth_seed)?)
    }

    pub fn base_kinds(&self) -> Result<Vec<BaseKind>> {
        self.bases.iter().map(|b| Ok(BaseKind::parse(b)?)).collect()
    }

    pub fn flow_specs(&self, d: usize) -> Result<Vec<FlowSpec>> {
        self.flows
            .iter()
            .map(|f| {
                let (pairs, hidden) = parse_flow_label(f)?;
                Ok(FlowSpec::with_hidden_layers(d, pairs, hidden, self.hidden_layers)?)
            })
            .collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            mc_samples: self.mc_samples,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            ..TrainConfig::default()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            elbo_samples: self.elbo_samples,
            test_n: self.test_n,
            predictive_samples: self.predictive_samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_log_spaced() {
        assert_eq!(
            default_n_grid(),
            vec![1000, 1196, 1431, 1711, 2047, 2448, 2929, 3503, 4190, 5012]
        );
    }

    #[test]
    fn flow_labels() {
        assert_eq!(parse_flow_label("4_16").unwrap(), (4, 16));
        assert!(parse_flow_label("4x16").is_err());
        assert!(parse_flow_label("0_4").is_err());
    }

    #[test]
    fn toml_overrides_and_defaults() {
        let cfg = SweepConfig::from_toml(
            "triplet = \"tanh_zero_mean\"\nhs = [1, 4]\nflows = [\"2_4\"]\nseeds = 3\nclip_norm = 0\n",
        )
        .unwrap();
        assert_eq!(cfg.hs, vec![1, 4]);
        assert_eq!(cfg.seeds, 3);
        assert_eq!(cfg.epochs, 5000);
        assert_eq!(cfg.n_grid, default_n_grid());
        assert_eq!(cfg.train_config().clip_norm, None);
        assert!(SweepConfig::from_toml("triplet = \"conv\"").is_err());
        assert!(SweepConfig::from_toml("bogus_key = 1").is_err());
        assert!(SweepConfig::from_toml("hs = []").is_err());
    }
}
