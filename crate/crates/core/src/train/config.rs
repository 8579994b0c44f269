use serde::{Deserialize, Serialize};

use crate::data::WindowConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SgMode};

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub d: usize,
    pub window: usize,
    pub k: usize,
    pub hops: usize,
    pub horizon: usize,
    pub dropout: f64,
    pub seed: u64,
    pub huber_beta: f64,
    pub literal_eq5: bool,
    pub literal_eq9: bool,
    pub share_time: bool,
    pub share_encoders: bool,
    pub sg_mode: SgMode,
    pub ablate_spatial: bool,
    pub ablate_ctg: bool,
    pub random_c0: bool,
    /// `None` means `min(K, 4)`.
    pub top_k: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub mape_floor: f64,
    pub exclude_imputed: bool,
    /// Standardize flows with the training slice's mean and deviation.
    pub normalize_flows: bool,
    pub split: [f64; 3],
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 20,
            d: 64,
            window: 12,
            k: 4,
            hops: 1,
            horizon: 1,
            dropout: 0.1,
            seed: 0,
            huber_beta: 1.0,
            literal_eq5: false,
            literal_eq9: false,
            share_time: false,
            share_encoders: false,
            sg_mode: SgMode::Message,
            ablate_spatial: false,
            ablate_ctg: false,
            random_c0: false,
            top_k: None,
            clip: None,
            mape_floor: 1.0,
            exclude_imputed: false,
            normalize_flows: true,
            split: [0.6, 0.2, 0.2],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be a finite non-negative number", self.learning_rate));
        }
        if self.batch_size == 0 || self.d == 0 || self.window == 0 || self.horizon == 0 || self.hops == 0 {
            return bad("batch_size, d, window, horizon and hops must be positive".into());
        }
        if self.window < 2 {
            return bad("window must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.huber_beta > 0.0) {
            return bad(format!("huber_beta {} must be positive", self.huber_beta));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return bad(format!("clip {c} must be positive"));
            }
        }
        if self.top_k == Some(0) {
            return bad("top_k must be at least 1".into());
        }
        if !(self.mape_floor >= 0.0) {
            return bad(format!("mape_floor {} must be non-negative", self.mape_floor));
        }
        Ok(())
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig { window: self.window, horizon: self.horizon, k: self.k, hops: self.hops }
    }

    /// Model config with the given flow scaling.
    pub fn model_config(&self, flow_mean: f64, flow_std: f64) -> ModelConfig {
        ModelConfig {
            d: self.d,
            window: self.window,
            k: self.k,
            horizon: self.horizon,
            dropout: self.dropout,
            top_k: self.top_k.unwrap_or_else(|| ModelConfig::default_top_k(self.k)),
            literal_eq5: self.literal_eq5,
            share_time: self.share_time,
            share_encoders: self.share_encoders,
            sg_mode: self.sg_mode,
            ablate_spatial: self.ablate_spatial,
            ablate_ctg: self.ablate_ctg,
            random_c0: self.random_c0,
            flow_mean,
            flow_std,
        }
    }

    /// Short label for output files: `wo_As`, `wo_At`, `wo_As_wo_At` or `full`.
    pub fn variant_tag(&self) -> &'static str {
        match (self.ablate_spatial, self.ablate_ctg) {
            (false, false) => "full",
            (true, false) => "wo_As",
            (false, true) => "wo_At",
            (true, true) => "wo_As_wo_At",
        }
    }
}
