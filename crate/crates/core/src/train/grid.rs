use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::fit::Experiment;
use super::metrics::MetricsReport;
use crate::data::{FlowDataset, RoadGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCandidates {
    pub k: Vec<usize>,
    pub window: Vec<usize>,
    pub hops: Vec<usize>,
}

impl GridCandidates {
    /// `K ∈ {2,4,6,8}`, `w ∈ {11,16}`, `H ∈ {1,2,3}`.
    pub fn standard() -> Self {
        GridCandidates { k: vec![2, 4, 6, 8], window: vec![11, 16], hops: vec![1, 2, 3] }
    }

    /// Every combination in `K`, then `w`, then `H` order.
    pub fn combinations(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &w in &self.window {
                for &h in &self.hops {
                    out.push((k, w, h));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub k: usize,
    pub window: usize,
    pub hops: usize,
    pub val: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Completed runs, best first.
    pub ranked: Vec<GridRun>,
    pub failed: Vec<GridRun>,
}

/// Trains every combination for `epochs` epochs and ranks by validation
/// MAE, then RMSE, then smaller `K`. A failing run is recorded and the
/// search goes on.
pub fn grid_search(candidates: &GridCandidates, data: &FlowDataset, graph: &RoadGraph, base: &TrainingConfig, epochs: usize) -> Result<GridResult> {
    if candidates.k.is_empty() || candidates.window.is_empty() || candidates.hops.is_empty() {
        return Err(Error::Config("grid candidate lists must be non-empty".into()));
    }
    let mut ranked = Vec::new();
    let mut failed = Vec::new();
    for (k, window, hops) in candidates.combinations() {
        let cfg = TrainingConfig { k, window, hops, epochs, top_k: None, ..base.clone() };
        let outcome = Experiment::new(data, graph, cfg).and_then(|ex| {
            let fit = ex.fit()?;
            ex.evaluate(&fit.params, ex.split.val)
        });
        match outcome {
            Ok(val) => ranked.push(GridRun { k, window, hops, val: Some(val), error: None }),
            Err(e) => failed.push(GridRun { k, window, hops, val: None, error: Some(e.to_string()) }),
        }
    }
    ranked.sort_by(|a, b| {
        let (va, vb) = (a.val.as_ref().expect("completed"), b.val.as_ref().expect("completed"));
        va.mae.total_cmp(&vb.mae).then(va.rmse.total_cmp(&vb.rmse)).then(a.k.cmp(&b.k))
    });
    Ok(GridResult { ranked, failed })
}
