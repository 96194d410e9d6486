use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metric::DEFAULT_RIDGE;
use crate::model::{FusionMode, ModelConfig};

/// Distance used by the metric loss and at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricMode {
    /// Learned `M = [cov + ridge I]^+`, with the metric loss active.
    Mahalanobis,
    /// `M = I` and no metric loss.
    Euclidean,
}

impl MetricMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricMode::Mahalanobis => "MAHA",
            MetricMode::Euclidean => "EUCLID",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MAHA" | "MAHALANOBIS" => Some(MetricMode::Mahalanobis),
            "EUCLID" | "EUCLIDEAN" => Some(MetricMode::Euclidean),
            _ => None,
        }
    }
}

/// Which discriminators supply the two sides of the distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branches {
    /// Both sides come from discriminator A; branch B and the metric loss are off.
    AOnly,
    AAndB,
}

impl Branches {
    pub fn as_str(self) -> &'static str {
        match self {
            Branches::AOnly => "A_ONLY",
            Branches::AAndB => "A_AND_B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A_ONLY" | "A" => Some(Branches::AOnly),
            "A_AND_B" | "AB" => Some(Branches::AAndB),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    /// Ridge added to the projection covariance before inversion.
    pub ridge: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Backpropagate through the pseudo-inverse instead of holding `M` fixed per batch.
    pub differentiate_metric: bool,
    pub metric: MetricMode,
    pub branches: Branches,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            weights: LossWeights::default(),
            ridge: DEFAULT_RIDGE,
            batch_size: 32,
            epochs: 20,
            lr: 1e-3,
            seed: 0,
            differentiate_metric: false,
            metric: MetricMode::Mahalanobis,
            branches: Branches::AAndB,
        }
    }
}

/// Every key accepted by [`TrainConfig::set`], in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "d_visual",
    "k_semantic",
    "d_latent",
    "k_proj",
    "hidden_fusion",
    "hidden_encoder",
    "hidden_generator",
    "hidden_disc_a",
    "hidden_disc_b",
    "fusion",
    "lambda_vae",
    "lambda_mse",
    "lambda_m",
    "lambda_gp",
    "n_critic",
    "ridge",
    "batch_size",
    "epochs",
    "lr",
    "seed",
    "differentiate_metric",
    "metric",
    "branches",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl TrainConfig {
    /// Derives the model widths from a dataset's feature widths, keeping the
    /// other widths and rescaling hidden sizes to their defaults.
    pub fn for_features(mut self, d_visual: usize, k_semantic: usize) -> Self {
        let fusion = self.model.fusion;
        self.model = ModelConfig::new(d_visual, k_semantic, self.model.d_latent, self.model.k_proj)
            .with_fusion(fusion);
        self
    }

    /// The metric loss weight actually used by training.
    pub fn effective_metric_weight(&self) -> f64 {
        match (self.metric, self.branches) {
            (MetricMode::Mahalanobis, Branches::AAndB) => self.weights.metric,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Config("ridge must be finite and >= 0".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be finite and > 0".into()));
        }
        if self.branches == Branches::AOnly && self.metric == MetricMode::Mahalanobis {
            return Err(Error::Contract(
                "A_ONLY cannot be combined with MAHA: the learned metric needs both branches".into(),
            ));
        }
        Ok(())
    }

    /// Sets one `key=value` entry. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let w = &mut self.weights;
        match key {
            "d_visual" => m.d_visual = num(key, value)?,
            "k_semantic" => m.k_semantic = num(key, value)?,
            "d_latent" => m.d_latent = num(key, value)?,
            "k_proj" => m.k_proj = num(key, value)?,
            "hidden_fusion" => m.hidden.fusion = num(key, value)?,
            "hidden_encoder" => m.hidden.encoder = num(key, value)?,
            "hidden_generator" => m.hidden.generator = num(key, value)?,
            "hidden_disc_a" => m.hidden.disc_a = num(key, value)?,
            "hidden_disc_b" => m.hidden.disc_b = num(key, value)?,
            "fusion" => {
                m.fusion = FusionMode::parse(value.trim())
                    .ok_or_else(|| Error::Config(format!("`fusion`: unknown mode `{value}`")))?
            }
            "lambda_vae" => w.vae = num(key, value)?,
            "lambda_mse" => w.mse = num(key, value)?,
            "lambda_m" => w.metric = num(key, value)?,
            "lambda_gp" => w.gp = num(key, value)?,
            "n_critic" => w.n_critic = num(key, value)?,
            "ridge" => self.ridge = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "differentiate_metric" => self.differentiate_metric = num(key, value)?,
            "metric" => {
                self.metric = MetricMode::parse(value.trim())
                    .ok_or_else(|| Error::Config(format!("`metric`: unknown mode `{value}`")))?
            }
            "branches" => {
                self.branches = Branches::parse(value.trim())
                    .ok_or_else(|| Error::Config(format!("`branches`: unknown value `{value}`")))?
            }
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                detail: format!("expected key=value, found `{line}`"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every key with its resolved value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let w = &self.weights;
        let values: Vec<String> = vec![
            m.d_visual.to_string(),
            m.k_semantic.to_string(),
            m.d_latent.to_string(),
            m.k_proj.to_string(),
            m.hidden.fusion.to_string(),
            m.hidden.encoder.to_string(),
            m.hidden.generator.to_string(),
            m.hidden.disc_a.to_string(),
            m.hidden.disc_b.to_string(),
            m.fusion.as_str().to_string(),
            w.vae.to_string(),
            w.mse.to_string(),
            w.metric.to_string(),
            w.gp.to_string(),
            w.n_critic.to_string(),
            self.ridge.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.lr.to_string(),
            self.seed.to_string(),
            self.differentiate_metric.to_string(),
            self.metric.as_str().to_string(),
            self.branches.as_str().to_string(),
        ];
        let mut out = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
