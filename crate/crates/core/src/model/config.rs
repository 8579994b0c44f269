use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the stop-gradient barrier sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SgMode {
    /// On the target representation fed to the neighbor update.
    Message,
    /// On the target's `r` carried into the next cell.
    Recurrence,
    Off,
}

impl std::str::FromStr for SgMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "message" => Ok(SgMode::Message),
            "recurrence" => Ok(SgMode::Recurrence),
            "off" => Ok(SgMode::Off),
            _ => Err(Error::Config(format!("sg_mode must be message, recurrence or off, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for SgMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SgMode::Message => "message",
            SgMode::Recurrence => "recurrence",
            SgMode::Off => "off",
        })
    }
}

/// Everything that fixes the parameter layout and the forward computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub window: usize,
    pub k: usize,
    pub horizon: usize,
    pub dropout: f64,
    /// Neighbors kept per row of the coarse temporal adjacency.
    pub top_k: usize,
    pub literal_eq5: bool,
    pub share_time: bool,
    pub share_encoders: bool,
    pub sg_mode: SgMode,
    pub ablate_spatial: bool,
    pub ablate_ctg: bool,
    /// Draw the initial cell state from N(0, 0.01²) instead of zeros.
    pub random_c0: bool,
    /// Affine flow scaling: raw inputs enter as `(x - mean) / std` and the
    /// head predicts in those units. `(0, 1)` disables it.
    pub flow_mean: f64,
    pub flow_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            window: 12,
            k: 4,
            horizon: 1,
            dropout: 0.1,
            top_k: 4,
            literal_eq5: false,
            share_time: false,
            share_encoders: false,
            sg_mode: SgMode::Message,
            ablate_spatial: false,
            ablate_ctg: false,
            random_c0: false,
            flow_mean: 0.0,
            flow_std: 1.0,
        }
    }
}

impl ModelConfig {
    /// Default `top_k` for a neighbor count.
    pub fn default_top_k(k: usize) -> usize {
        k.min(4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.window == 0 || self.horizon == 0 {
            return Err(Error::Config("d, window and horizon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.k > 0 && self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.flow_std > 0.0) || !self.flow_std.is_finite() || !self.flow_mean.is_finite() {
            return Err(Error::Config(format!("bad flow scaling ({}, {})", self.flow_mean, self.flow_std)));
        }
        Ok(())
    }

    /// Number of distinct encoders (target first).
    pub fn encoder_count(&self) -> usize {
        if self.share_encoders {
            1
        } else {
            self.k + 1
        }
    }

    /// Number of distinct gate sets per encoder.
    pub fn cell_count(&self) -> usize {
        if self.share_time {
            1
        } else {
            self.window
        }
    }

    pub fn to_scaled(&self, raw: f64) -> f64 {
        (raw - self.flow_mean) / self.flow_std
    }

    pub fn to_raw(&self, scaled: f64) -> f64 {
        scaled * self.flow_std + self.flow_mean
    }
}
