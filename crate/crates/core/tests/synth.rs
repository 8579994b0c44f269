use std::f64::consts::PI;

use stahgnet::data::{FlowDataset, RoadGraph};
use stahgnet::rng::Rng;
use stahgnet::synth::*;
use stahgnet::train::{Experiment, TrainingConfig};

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn neighbors_lead_each_other_more_than_strangers() {
    let spec = SynthSpec { nodes: 12, steps: 4000, kappa: 0.3, noise: 0.2, incident_rate: 0.0, ..SynthSpec::default() };
    let data = SyntheticData::generate(&spec).unwrap();
    // subtracting the same phase a day earlier removes the shared sinusoid
    let resid = |node: usize| -> Vec<f64> {
        let col = data.flows.column(node);
        (spec.period..col.len()).map(|t| col[t] - col[t - spec.period]).collect()
    };
    let lag1 = |src: usize, dst: usize| {
        let (a, b) = (resid(src), resid(dst));
        corr(&a[..a.len() - 1], &b[1..])
    };
    let mut near = Vec::new();
    let mut far = Vec::new();
    for i in 0..12 {
        for j in 0..12 {
            if i == j {
                continue;
            }
            if data.graph.distance(i, j).is_some() {
                near.push(lag1(i, j));
            } else {
                far.push(lag1(i, j));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&near) > mean(&far) + 0.05, "near {} far {}", mean(&near), mean(&far));
    assert!(near.iter().all(|&c| c > far.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 0.05));
}

#[test]
fn generated_files_repeat_byte_for_byte() {
    let spec = SynthSpec { nodes: 9, topology: Topology::Grid, steps: 300, ..SynthSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    SyntheticData::generate(&spec).unwrap().write(a.path()).unwrap();
    SyntheticData::generate(&spec).unwrap().write(b.path()).unwrap();
    for f in ["edges.csv", "flows.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let other = SyntheticData::generate(&SynthSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(other.flows.values(), SyntheticData::generate(&spec).unwrap().flows.values());
}

#[test]
fn random_geometric_can_isolate_nodes() {
    let spec = SynthSpec { nodes: 30, steps: 50, topology: Topology::RandomGeometric { radius: 0.08 }, ..SynthSpec::default() };
    let data = SyntheticData::generate(&spec).unwrap();
    assert!((0..30).any(|i| data.graph.neighbors(i).is_empty()));
    assert!(data.flows.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
    assert!(Topology::parse("ring", 0.1).is_err());
}

fn experiment_cfg() -> TrainingConfig {
    TrainingConfig { window: 4, k: 1, horizon: 1, batch_size: 50, ..TrainingConfig::default() }
}

fn dataset(len: usize, nodes: usize, f: impl Fn(usize, usize) -> f64) -> (FlowDataset, RoadGraph) {
    let values = (0..len * nodes).map(|i| f(i / nodes, i % nodes)).collect();
    (FlowDataset::new(len, nodes, values, 5).unwrap(), RoadGraph::new(nodes, (1..nodes).map(|i| (i - 1, i, 1.0))).unwrap())
}

#[test]
fn persistence_examples() {
    let (flows, graph) = dataset(200, 3, |_, n| 40.0 + n as f64);
    let ex = Experiment::new(&flows, &graph, experiment_cfg()).unwrap();
    let m = persistence_baseline(&ex, ex.split.test).unwrap();
    assert_eq!((m.mae, m.rmse, m.mape_percent), (0.0, 0.0, 0.0));

    let period = 25.0;
    let wave = |t: usize, n: usize| 100.0 + 30.0 * (2.0 * PI * t as f64 / period + n as f64).sin();
    let (flows, graph) = dataset(300, 3, wave);
    let ex = Experiment::new(&flows, &graph, experiment_cfg()).unwrap();
    let m = persistence_baseline(&ex, ex.split.test).unwrap();
    let test = ex.split.test;
    let mut total = 0.0;
    let mut count = 0;
    for n in 0..3 {
        for anchor in test.start + 3..test.end - 1 {
            total += (wave(anchor + 1, n) - wave(anchor, n)).abs();
            count += 1;
        }
    }
    assert_eq!(m.count, count);
    assert!((m.mae - total / count as f64).abs() < 1e-9);
    assert_eq!(m, ex.evaluate_with(test, |b| Ok(persistence_predict(b))).unwrap());
}

#[test]
fn historical_average_examples() {
    let period = 20;
    let (flows, graph) = dataset(400, 2, |t, n| 50.0 + 10.0 * ((t % period) as f64) + n as f64);
    let ex = Experiment::new(&flows, &graph, experiment_cfg()).unwrap();
    let m = historical_average_baseline(&ex, ex.split.test, period).unwrap();
    assert!(m.mae < 1e-12);

    let mut rng = Rng::new(3);
    let noise: Vec<f64> = (0..400 * 2).map(|_| 5.0 * rng.normal()).collect();
    let (flows, graph) = dataset(400, 2, |t, n| 100.0 + noise[t * 2 + n]);
    let ex = Experiment::new(&flows, &graph, TrainingConfig { split: [0.9, 0.05, 0.05], ..experiment_cfg() }).unwrap();
    let m = historical_average_baseline(&ex, ex.split.test, 1).unwrap();
    let ha = HistoricalAverage::fit(&flows, ex.split.train, 1).unwrap();
    let expect: f64 = ex
        .windower
        .indices(ex.split.test)
        .unwrap()
        .iter()
        .map(|s| (flows.value(s.anchor + 1, s.node) - ha.at(s.node, s.anchor + 1)).abs())
        .sum::<f64>()
        / m.count as f64;
    assert!((m.mae - expect).abs() < 1e-9);
    // the training mean sits close to 100, so the error is about the noise size
    let mean_abs_noise = 5.0 * (2.0 / PI).sqrt();
    assert!((m.mae - mean_abs_noise).abs() / mean_abs_noise < 0.2, "{} vs {mean_abs_noise}", m.mae);
    assert_eq!(m, historical_average_baseline(&ex, ex.split.test, 1).unwrap());
}
