use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::data::FEATURES;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_FORMAT: &str = "stahgnet-checkpoint-v1";

/// Positions of one cell's gate tensors in the flat parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellSlots {
    pub w_i: usize,
    pub w_f: usize,
    pub w_c: usize,
    pub w_o: usize,
    pub b_i: usize,
    pub b_f: usize,
    pub b_c: usize,
    pub b_o: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSlots {
    pub embed_w: usize,
    pub embed_b: usize,
    pub cells: Vec<CellSlots>,
}

/// Index of every named tensor; a pure function of the config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub encoders: Vec<EncoderSlots>,
    pub w_s: usize,
    pub b_s: usize,
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_fuse1: usize,
    pub b_fuse1: usize,
    pub w_fuse2: usize,
    pub b_fuse2: usize,
    pub w_g: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
}

impl Layout {
    /// Parameter naming:
    ///
    /// - `encoder{e}.embed.W` (`D×3`), `encoder{e}.embed.b`
    /// - `encoder{e}.cell{t}.W_i|W_f|W_c|W_o` (`D×2D`), `.b_i|b_f|b_c|b_o`
    /// - `hgat.W_s`, `hgat.b_s`, `hgat.W_q`, `hgat.W_k`, `hgat.W_v`,
    ///   `hgat.W_fuse1`, `hgat.b_fuse1`, `hgat.W_fuse2`, `hgat.b_fuse2`
    /// - `ctg.W_g`
    /// - `predictor.W1`, `predictor.b1`, `predictor.W2` (`horizon×D`), `predictor.b2`
    ///
    /// Encoder 0 is the target. With `share_encoders` only encoder 0 exists,
    /// with `share_time` only cell 0.
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d;
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut add = |name: String, shape: Vec<usize>| {
            names.push(name);
            shapes.push(shape);
            names.len() - 1
        };
        let mut encoders = Vec::new();
        for e in 0..cfg.encoder_count() {
            let embed_w = add(format!("encoder{e}.embed.W"), vec![d, FEATURES]);
            let embed_b = add(format!("encoder{e}.embed.b"), vec![d]);
            let cells = (0..cfg.cell_count())
                .map(|t| {
                    let p = format!("encoder{e}.cell{t}");
                    CellSlots {
                        w_i: add(format!("{p}.W_i"), vec![d, 2 * d]),
                        w_f: add(format!("{p}.W_f"), vec![d, 2 * d]),
                        w_c: add(format!("{p}.W_c"), vec![d, 2 * d]),
                        w_o: add(format!("{p}.W_o"), vec![d, 2 * d]),
                        b_i: add(format!("{p}.b_i"), vec![d]),
                        b_f: add(format!("{p}.b_f"), vec![d]),
                        b_c: add(format!("{p}.b_c"), vec![d]),
                        b_o: add(format!("{p}.b_o"), vec![d]),
                    }
                })
                .collect();
            encoders.push(EncoderSlots { embed_w, embed_b, cells });
        }
        let w_s = add("hgat.W_s".into(), vec![d, 2 * d]);
        let b_s = add("hgat.b_s".into(), vec![d]);
        let w_q = add("hgat.W_q".into(), vec![d, d]);
        let w_k = add("hgat.W_k".into(), vec![d, d]);
        let w_v = add("hgat.W_v".into(), vec![d, d]);
        let w_fuse1 = add("hgat.W_fuse1".into(), vec![d, 2 * d]);
        let b_fuse1 = add("hgat.b_fuse1".into(), vec![d]);
        let w_fuse2 = add("hgat.W_fuse2".into(), vec![d, 2 * d]);
        let b_fuse2 = add("hgat.b_fuse2".into(), vec![d]);
        let w_g = add("ctg.W_g".into(), vec![d, d]);
        let w1 = add("predictor.W1".into(), vec![d, d]);
        let b1 = add("predictor.b1".into(), vec![d]);
        let w2 = add("predictor.W2".into(), vec![cfg.horizon, d]);
        let b2 = add("predictor.b2".into(), vec![cfg.horizon]);
        Layout {
            encoders,
            w_s,
            b_s,
            w_q,
            w_k,
            w_v,
            w_fuse1,
            b_fuse1,
            w_fuse2,
            b_fuse2,
            w_g,
            w1,
            b1,
            w2,
            b2,
            names,
            shapes,
        }
    }

    /// Encoder used by slot `s` (0 = target, `1..=K` = neighbors).
    pub fn encoder(&self, slot: usize) -> &EncoderSlots {
        &self.encoders[slot.min(self.encoders.len() - 1)]
    }

    pub fn cell(&self, slot: usize, t: usize) -> CellSlots {
        let cells = &self.encoder(slot).cells;
        cells[t.min(cells.len() - 1)]
    }
}

/// All learnable tensors in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Xavier-uniform weights and zero biases.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let tensors = layout
            .shapes
            .iter()
            .map(|shape| match shape.as_slice() {
                [out, inp] => {
                    let limit = (6.0 / (out + inp) as f64).sqrt();
                    let data = (0..out * inp).map(|_| rng.uniform_in(-limit, limit)).collect();
                    Tensor::new(shape.clone(), data)
                }
                _ => Ok(Tensor::zeros(shape)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams { config: config.clone(), names: layout.names, tensors })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| (n.clone(), StoredTensor { shape: t.shape().to_vec(), values: t.data().to_vec() }))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Incompatible(format!("unknown checkpoint format {:?}", ck.format)));
        }
        ck.config.validate()?;
        let layout = Layout::new(&ck.config);
        let mut stored = ck.params;
        let mut tensors = Vec::with_capacity(layout.names.len());
        for (name, shape) in layout.names.iter().zip(&layout.shapes) {
            let t = stored
                .remove(name)
                .ok_or_else(|| Error::Incompatible(format!("checkpoint lacks parameter {name}")))?;
            if &t.shape != shape {
                return Err(Error::Incompatible(format!("{name} has shape {:?}, config expects {shape:?}", t.shape)));
            }
            tensors.push(Tensor::new(t.shape, t.values).map_err(|e| Error::Incompatible(format!("{name}: {e}")))?);
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Incompatible(format!("checkpoint has unexpected parameter {extra}")));
        }
        Ok(ModelParams { config: ck.config, names: layout.names, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Incompatible(format!("cannot read checkpoint {}: {e}", path.as_ref().display())))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk parameter map; values are written in shortest round-trip form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub params: BTreeMap<String, StoredTensor>,
}
