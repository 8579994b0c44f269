use serde::{Deserialize, Serialize};

use super::features::{engineer_features, FEATURES};
use super::flows::FlowDataset;
use super::graph::{NeighborSampler, RoadGraph, SpatialWeights};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{mix, Rng};

/// Half-open span of timesteps `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeRange {
    pub start: usize,
    pub end: usize,
}

impl TimeRange {
    pub fn new(start: usize, end: usize) -> Self {
        TimeRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub window: usize,
    pub horizon: usize,
    pub k: usize,
    pub hops: usize,
}

/// One supervised example: target `node`, window ending at `anchor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleIndex {
    pub node: usize,
    pub anchor: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub target: usize,
    pub anchor: usize,
    pub neighbors: Vec<usize>,
    /// `w×3` target features.
    pub x: Tensor,
    /// `K×w×3` neighbor features over the same timesteps.
    pub g: Tensor,
    /// `A_s[target][neighbor]` per slot.
    pub spatial_row: Vec<f64>,
    /// Raw flow at `anchor+1 ..= anchor+horizon`.
    pub y: Vec<f64>,
    pub y_imputed: Vec<bool>,
}

/// Builds windows, neighbor sets and batches over one dataset.
pub struct Windower<'a> {
    data: &'a FlowDataset,
    weights: SpatialWeights,
    sampler: NeighborSampler,
    cfg: WindowConfig,
}

impl<'a> Windower<'a> {
    pub fn new(data: &'a FlowDataset, graph: &RoadGraph, cfg: WindowConfig) -> Result<Self> {
        if graph.node_count() != data.node_count() {
            return Err(Error::Data(format!(
                "graph has {} nodes but the flow file has {} columns",
                graph.node_count(),
                data.node_count()
            )));
        }
        if !data.is_complete() {
            return Err(Error::Data("flow data still has missing readings; impute first".into()));
        }
        if cfg.window == 0 || cfg.horizon == 0 {
            return Err(Error::InvalidArgument("window and horizon must be positive".into()));
        }
        Ok(Windower {
            data,
            weights: SpatialWeights::from_graph(graph),
            sampler: NeighborSampler::new(graph, cfg.k, cfg.hops)?,
            cfg,
        })
    }

    pub fn config(&self) -> WindowConfig {
        self.cfg
    }

    pub fn data(&self) -> &FlowDataset {
        self.data
    }

    pub fn weights(&self) -> &SpatialWeights {
        &self.weights
    }

    /// Node-major list of every sample whose input and target lie in `range`:
    /// `range.len() - w - horizon + 1` anchors per node.
    pub fn indices(&self, range: TimeRange) -> Result<Vec<SampleIndex>> {
        let need = self.cfg.window + self.cfg.horizon;
        if range.end > self.data.len() || range.len() < need {
            return Err(Error::Data(format!(
                "time range {}..{} is too short for window {} + horizon {}",
                range.start, range.end, self.cfg.window, self.cfg.horizon
            )));
        }
        let first = range.start + self.cfg.window - 1;
        let last = range.end - self.cfg.horizon - 1;
        Ok((0..self.data.node_count())
            .flat_map(|node| (first..=last).map(move |anchor| SampleIndex { node, anchor }))
            .collect())
    }

    /// Neighbor set of one sample under a given stream (one stream per
    /// epoch while training, a fixed one for evaluation).
    pub fn neighbors(&self, idx: SampleIndex, stream: u64) -> Result<Vec<usize>> {
        let mut rng = Rng::new(mix(stream, &[idx.node as u64, idx.anchor as u64]));
        Ok(self.sampler.sample(idx.node, &mut rng)?.neighbors)
    }

    fn features(&self, node: usize, anchor: usize) -> Vec<[f64; FEATURES]> {
        let start = anchor + 1 - self.cfg.window;
        engineer_features(&self.data.series(node, start, anchor + 1))
    }

    pub fn sample_with(&self, idx: SampleIndex, neighbors: Vec<usize>) -> Result<WindowSample> {
        let (w, h, k) = (self.cfg.window, self.cfg.horizon, neighbors.len());
        if idx.anchor + 1 < w || idx.anchor + h >= self.data.len() {
            return Err(Error::Data(format!("anchor {} has no full window/horizon", idx.anchor)));
        }
        let flat = |f: Vec<[f64; FEATURES]>| f.into_iter().flatten().collect::<Vec<f64>>();
        let x = Tensor::new(vec![w, FEATURES], flat(self.features(idx.node, idx.anchor)))?;
        let g_data: Vec<f64> = neighbors.iter().flat_map(|&n| flat(self.features(n, idx.anchor))).collect();
        let g = Tensor::new(vec![k, w, FEATURES], g_data)?;
        let targets = idx.anchor + 1..=idx.anchor + h;
        Ok(WindowSample {
            target: idx.node,
            anchor: idx.anchor,
            spatial_row: self.weights.neighbor_weights(idx.node, &neighbors),
            neighbors,
            x,
            g,
            y: targets.clone().map(|t| self.data.value(t, idx.node)).collect(),
            y_imputed: targets.map(|t| self.data.is_missing(t, idx.node)).collect(),
        })
    }

    pub fn sample(&self, idx: SampleIndex, stream: u64) -> Result<WindowSample> {
        let neighbors = self.neighbors(idx, stream)?;
        self.sample_with(idx, neighbors)
    }

    /// Every window of `range` in node-major order, sampled lazily.
    pub fn make_windows(&self, range: TimeRange, stream: u64) -> Result<impl Iterator<Item = Result<WindowSample>> + '_> {
        let idx = self.indices(range)?;
        Ok(idx.into_iter().map(move |i| self.sample(i, stream)))
    }

    pub fn batch(&self, idx: &[SampleIndex], stream: u64) -> Result<Batch> {
        let samples = idx.iter().map(|&i| self.sample(i, stream)).collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&samples, self.cfg.k, self.cfg.window, self.cfg.horizon)
    }
}

/// A minibatch laid out for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub k: usize,
    pub window: usize,
    pub horizon: usize,
    /// `[B][K+1][w][3]`, slot 0 is the target node.
    pub inputs: Vec<f64>,
    /// `[B][K]`.
    pub spatial: Vec<f64>,
    /// `[B][horizon]` raw flows.
    pub targets: Vec<f64>,
    pub target_imputed: Vec<bool>,
    /// Raw flow at each anchor.
    pub last_values: Vec<f64>,
    pub index: Vec<SampleIndex>,
    pub neighbors: Vec<Vec<usize>>,
}

impl Batch {
    pub fn from_samples(samples: &[WindowSample], k: usize, window: usize, horizon: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let b = samples.len();
        let per_node = window * FEATURES;
        let mut inputs = Vec::with_capacity(b * (k + 1) * per_node);
        let mut spatial = Vec::with_capacity(b * k);
        let mut targets = Vec::with_capacity(b * horizon);
        let mut target_imputed = Vec::with_capacity(b * horizon);
        for s in samples {
            if s.x.len() != per_node || s.g.len() != k * per_node || s.y.len() != horizon || s.spatial_row.len() != k {
                return Err(Error::shape("batch", format!("sample at node {} anchor {} has inconsistent shapes", s.target, s.anchor)));
            }
            inputs.extend_from_slice(s.x.data());
            inputs.extend_from_slice(s.g.data());
            spatial.extend_from_slice(&s.spatial_row);
            targets.extend_from_slice(&s.y);
            target_imputed.extend_from_slice(&s.y_imputed);
        }
        Ok(Batch {
            size: b,
            k,
            window,
            horizon,
            inputs,
            spatial,
            targets,
            target_imputed,
            last_values: samples.iter().map(|s| s.x.at(window - 1, 0)).collect(),
            index: samples.iter().map(|s| SampleIndex { node: s.target, anchor: s.anchor }).collect(),
            neighbors: samples.iter().map(|s| s.neighbors.clone()).collect(),
        })
    }

    /// Elements of model input held by this batch: `B·(K+1)·w·3`.
    pub fn input_element_count(&self) -> usize {
        self.inputs.len()
    }

    /// `B×3` features of encoder slot `encoder` at step `t`.
    pub fn step_features(&self, encoder: usize, t: usize) -> Tensor {
        let per_sample = (self.k + 1) * self.window * FEATURES;
        let mut out = Vec::with_capacity(self.size * FEATURES);
        for b in 0..self.size {
            let off = b * per_sample + (encoder * self.window + t) * FEATURES;
            out.extend_from_slice(&self.inputs[off..off + FEATURES]);
        }
        Tensor::matrix(self.size, FEATURES, out).expect("batch layout")
    }

    /// `B×1` column of spatial weights for neighbor slot `i`.
    pub fn spatial_column(&self, i: usize) -> Tensor {
        let col = (0..self.size).map(|b| self.spatial[b * self.k + i]).collect();
        Tensor::matrix(self.size, 1, col).expect("batch layout")
    }
}

/// Train, validation and test time ranges in chronological order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: TimeRange,
    pub val: TimeRange,
    pub test: TimeRange,
}

/// Cuts `0..len` into three contiguous slices by `ratios`; boundaries are
/// rounded to the nearest step. Every slice must hold at least `min_len`
/// steps so each can be windowed on its own.
pub fn chronological_split(len: usize, ratios: [f64; 3], min_len: usize) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let b1 = (len as f64 * ratios[0]).round() as usize;
    let b2 = ((len as f64 * (ratios[0] + ratios[1])).round() as usize).min(len);
    let split = Split {
        train: TimeRange::new(0, b1),
        val: TimeRange::new(b1, b2),
        test: TimeRange::new(b2, len),
    };
    for (name, r) in [("train", split.train), ("val", split.val), ("test", split.test)] {
        if r.len() < min_len {
            return Err(Error::Data(format!("{name} slice has {} steps, needs at least {min_len}", r.len())));
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize, nodes: usize) -> FlowDataset {
        let values = (0..len * nodes).map(|i| (i / nodes) as f64 + 1.0 + (i % nodes) as f64 * 1000.0).collect();
        FlowDataset::new(len, nodes, values, 5).unwrap()
    }

    fn path(n: usize) -> RoadGraph {
        RoadGraph::new(n, (1..n).map(|i| (i - 1, i, 1.0))).unwrap()
    }

    #[test]
    fn sample_counts() {
        let d = ramp(100, 3);
        let g = path(3);
        let w = Windower::new(&d, &g, WindowConfig { window: 12, horizon: 1, k: 2, hops: 1 }).unwrap();
        assert_eq!(w.indices(TimeRange::new(0, 100)).unwrap().len(), 3 * 88);
        let d = ramp(24, 3);
        let w = Windower::new(&d, &g, WindowConfig { window: 12, horizon: 12, k: 2, hops: 1 }).unwrap();
        assert_eq!(w.indices(TimeRange::new(0, 24)).unwrap().len(), 3);
        assert!(w.indices(TimeRange::new(0, 23)).is_err());
    }

    #[test]
    fn targets_follow_the_window() {
        let d = ramp(30, 2);
        let g = path(2);
        let cfg = WindowConfig { window: 4, horizon: 3, k: 1, hops: 1 };
        let w = Windower::new(&d, &g, cfg).unwrap();
        for s in w.make_windows(TimeRange::new(0, 30), 0).unwrap() {
            let s = s.unwrap();
            // the ramp encodes the time index in the raw value
            let last_input = s.x.at(cfg.window - 1, 0);
            let first_input = s.x.at(0, 0);
            let offset = s.target as f64 * 1000.0 + 1.0;
            assert_eq!(last_input - offset, s.anchor as f64);
            assert_eq!(first_input - offset, (s.anchor + 1 - cfg.window) as f64);
            for (j, y) in s.y.iter().enumerate() {
                assert_eq!(y - offset, (s.anchor + 1 + j) as f64);
            }
        }
    }

    #[test]
    fn split_examples() {
        let s = chronological_split(100, [0.6, 0.2, 0.2], 13).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        assert!(chronological_split(100, [1.0, 0.0, 0.0], 13).is_err());
        assert!(chronological_split(100, [0.5, 0.2, 0.2], 13).is_err());
    }

    #[test]
    fn batch_layout() {
        let d = ramp(40, 4);
        let g = path(4);
        let w = Windower::new(&d, &g, WindowConfig { window: 5, horizon: 2, k: 3, hops: 2 }).unwrap();
        let idx = w.indices(TimeRange::new(0, 40)).unwrap();
        let b = w.batch(&idx[..6], 1).unwrap();
        assert_eq!(b.input_element_count(), 6 * 4 * 5 * 3);
        let step = b.step_features(0, 4);
        for r in 0..6 {
            assert_eq!(step.at(r, 0), b.last_values[r]);
        }
        assert_eq!(b.spatial_column(1).dims2().unwrap(), (6, 1));
    }
}
