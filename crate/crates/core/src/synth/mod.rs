//! Seeded synthetic road networks and traffic with a known spatial coupling,
//! plus the two trivial forecasters used as reference points.
//!
//! Node `i` has a daily demand curve
//! `base_i * (1 + 0.5 sin(2π t / period + φ_i))`. Its flow is
//! `(1 - κ) * demand_i(t) * (1 + σ_n ε) + κ * Σ_j P_ij x_j(t - 1)` where `P`
//! row-normalizes the reciprocal distances to direct neighbors and `ε` is a
//! standard normal draw. Nodes without neighbors keep their local term
//! alone. Incidents multiply a node's flow by 0.3 for 6 steps. Flows are
//! clipped at 0.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, FlowDataset, RoadGraph, TimeRange};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::train::{Experiment, MetricsReport};

pub const INCIDENT_FACTOR: f64 = 0.3;
pub const INCIDENT_STEPS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Topology {
    Path,
    /// Near-square grid, filled row by row.
    Grid,
    /// Uniform points in the unit square joined when closer than `radius`.
    RandomGeometric { radius: f64 },
}

impl Topology {
    pub fn parse(name: &str, radius: f64) -> Result<Self> {
        match name {
            "path" => Ok(Topology::Path),
            "grid" => Ok(Topology::Grid),
            "random-geometric" | "random_geometric" => Ok(Topology::RandomGeometric { radius }),
            _ => Err(Error::Config(format!("unknown topology {name:?} (path, grid, random-geometric)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub nodes: usize,
    pub topology: Topology,
    pub steps: usize,
    /// Timesteps per synthetic day.
    pub period: usize,
    pub kappa: f64,
    /// Relative noise level of the local term.
    pub noise: f64,
    /// Per node and step probability that an incident starts.
    pub incident_rate: f64,
    pub interval_minutes: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            nodes: 12,
            topology: Topology::Path,
            steps: 2000,
            period: 288,
            kappa: 0.3,
            noise: 0.05,
            incident_rate: 0.0005,
            interval_minutes: 5,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::Config("synthetic graph needs at least one node".into()));
        }
        if self.steps == 0 || self.period == 0 || self.interval_minutes == 0 {
            return Err(Error::Config("steps, period and interval must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa {} outside [0, 1)", self.kappa)));
        }
        if !(self.noise >= 0.0) || !(0.0..=1.0).contains(&self.incident_rate) {
            return Err(Error::Config("noise must be non-negative and incident_rate in [0, 1]".into()));
        }
        if let Topology::RandomGeometric { radius } = self.topology {
            if !(radius > 0.0) {
                return Err(Error::Config(format!("radius {radius} must be positive")));
            }
        }
        Ok(())
    }
}

fn distance(rng: &mut Rng) -> f64 {
    rng.uniform_in(0.5, 5.0)
}

pub fn gen_graph(spec: &SynthSpec) -> Result<RoadGraph> {
    spec.validate()?;
    let n = spec.nodes;
    let mut rng = Rng::derive(spec.seed, "synth-graph");
    let mut edges = Vec::new();
    match spec.topology {
        Topology::Path => {
            for i in 1..n {
                edges.push((i - 1, i, distance(&mut rng)));
            }
        }
        Topology::Grid => {
            let cols = (n as f64).sqrt().ceil() as usize;
            for i in 0..n {
                if (i + 1) % cols != 0 && i + 1 < n {
                    edges.push((i, i + 1, distance(&mut rng)));
                }
                if i + cols < n {
                    edges.push((i, i + cols, distance(&mut rng)));
                }
            }
        }
        Topology::RandomGeometric { radius } => {
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(), rng.uniform())).collect();
            for i in 0..n {
                for j in i + 1..n {
                    let e = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                    if e < radius {
                        edges.push((i, j, 0.5 + 4.5 * e / radius));
                    }
                }
            }
        }
    }
    RoadGraph::new(n, edges)
}

pub fn gen_flows(graph: &RoadGraph, spec: &SynthSpec) -> Result<FlowDataset> {
    spec.validate()?;
    let n = graph.node_count();
    if n != spec.nodes {
        return Err(Error::Config(format!("graph has {n} nodes, spec asks for {}", spec.nodes)));
    }
    let mut rng = Rng::derive(spec.seed, "synth-flows");
    let base: Vec<f64> = (0..n).map(|_| rng.uniform_in(100.0, 400.0)).collect();
    let phase: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 2.0 * PI)).collect();
    let coupling: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let nb = graph.neighbors(i);
            let total: f64 = nb.iter().map(|&(_, d)| 1.0 / d).sum();
            nb.iter().map(|&(j, d)| (j, 1.0 / d / total)).collect()
        })
        .collect();
    let mut values = vec![0.0; spec.steps * n];
    let mut incident_left = vec![0usize; n];
    for t in 0..spec.steps {
        for i in 0..n {
            let demand = base[i] * (1.0 + 0.5 * (2.0 * PI * t as f64 / spec.period as f64 + phase[i]).sin());
            let local = demand * (1.0 + spec.noise * rng.normal());
            let mut x = if t == 0 || coupling[i].is_empty() {
                local
            } else {
                let prev = &values[(t - 1) * n..t * n];
                (1.0 - spec.kappa) * local + spec.kappa * coupling[i].iter().map(|&(j, p)| p * prev[j]).sum::<f64>()
            };
            if incident_left[i] == 0 && rng.bernoulli(spec.incident_rate) {
                incident_left[i] = INCIDENT_STEPS;
            }
            if incident_left[i] > 0 {
                x *= INCIDENT_FACTOR;
                incident_left[i] -= 1;
            }
            values[t * n + i] = x.max(0.0);
        }
    }
    FlowDataset::new(spec.steps, n, values, spec.interval_minutes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub graph: RoadGraph,
    pub flows: FlowDataset,
}

impl SyntheticData {
    pub fn generate(spec: &SynthSpec) -> Result<Self> {
        let graph = gen_graph(spec)?;
        let flows = gen_flows(&graph, spec)?;
        Ok(SyntheticData { graph, flows })
    }

    /// Writes `edges.csv` and `flows.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("edges.csv"), self.graph.to_csv())?;
        std::fs::write(dir.join("flows.csv"), self.flows.to_csv())?;
        Ok(())
    }
}

/// Repeats the last observed value for every horizon step.
pub fn persistence_predict(batch: &Batch) -> Vec<f64> {
    batch.last_values.iter().flat_map(|&v| std::iter::repeat(v).take(batch.horizon)).collect()
}

pub fn persistence_baseline(ex: &Experiment<'_>, range: TimeRange) -> Result<MetricsReport> {
    ex.evaluate_with(range, |b| Ok(persistence_predict(b)))
}

/// Per node and phase mean of the training slice.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalAverage {
    period: usize,
    /// `[node][phase]`; phases never seen in training hold the node mean.
    means: Vec<Vec<f64>>,
}

impl HistoricalAverage {
    pub fn fit(data: &FlowDataset, train: TimeRange, period: usize) -> Result<Self> {
        if period == 0 || train.is_empty() {
            return Err(Error::InvalidArgument("historical average needs a period and a training slice".into()));
        }
        let means = (0..data.node_count())
            .map(|node| {
                let mut sum = vec![0.0; period];
                let mut cnt = vec![0usize; period];
                for t in train.start..train.end {
                    sum[t % period] += data.value(t, node);
                    cnt[t % period] += 1;
                }
                let overall = sum.iter().sum::<f64>() / train.len() as f64;
                sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { overall }).collect()
            })
            .collect();
        Ok(HistoricalAverage { period, means })
    }

    pub fn at(&self, node: usize, t: usize) -> f64 {
        self.means[node][t % self.period]
    }

    pub fn predict(&self, batch: &Batch) -> Vec<f64> {
        batch
            .index
            .iter()
            .flat_map(|s| (1..=batch.horizon).map(move |j| self.at(s.node, s.anchor + j)))
            .collect()
    }
}

pub fn historical_average_baseline(ex: &Experiment<'_>, range: TimeRange, period: usize) -> Result<MetricsReport> {
    let ha = HistoricalAverage::fit(ex.windower.data(), ex.split.train, period)?;
    ex.evaluate_with(range, |b| Ok(ha.predict(b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_edge_counts() {
        let spec = |nodes, topology| SynthSpec { nodes, topology, ..SynthSpec::default() };
        assert_eq!(gen_graph(&spec(5, Topology::Path)).unwrap().edges().len(), 4);
        assert_eq!(gen_graph(&spec(9, Topology::Grid)).unwrap().edges().len(), 12);
        let g = gen_graph(&spec(9, Topology::Grid)).unwrap();
        assert!(g.edges().iter().all(|e| (0.5..=5.0).contains(&e.distance)));
        let a = gen_graph(&spec(30, Topology::RandomGeometric { radius: 0.2 })).unwrap();
        let b = gen_graph(&spec(30, Topology::RandomGeometric { radius: 0.2 })).unwrap();
        assert_eq!(a, b);
        assert!(gen_graph(&spec(0, Topology::Path)).is_err());
    }

    #[test]
    fn uncoupled_noiseless_columns_are_sinusoids() {
        let spec = SynthSpec { nodes: 4, steps: 500, kappa: 0.0, noise: 0.0, incident_rate: 0.0, period: 50, ..SynthSpec::default() };
        let d = SyntheticData::generate(&spec).unwrap().flows;
        for node in 0..4 {
            let col = d.column(node);
            // a pure sinusoid repeats every period and has a centered mean
            for t in 50..500 {
                assert!((col[t] - col[t - 50]).abs() < 1e-9);
            }
            let mean = col[..50].iter().sum::<f64>() / 50.0;
            let amp = col[..50].iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
            assert!((amp / mean - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn flows_are_reproducible_and_nonnegative() {
        let spec = SynthSpec { steps: 300, incident_rate: 0.05, noise: 0.5, ..SynthSpec::default() };
        let a = SyntheticData::generate(&spec).unwrap();
        let b = SyntheticData::generate(&spec).unwrap();
        assert_eq!(a.flows.values(), b.flows.values());
        assert!(a.flows.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
}
