use serde::{Deserialize, Serialize};

use crate::diffcore::smooth_l1_elem;
use crate::error::{Error, Result};

/// Mean smooth-L1 over paired values (`beta`-knee Huber, or the fixed
/// 0.5-threshold form when `literal`).
pub fn smooth_l1(y: &[f64], y_hat: &[f64], beta: f64, literal: bool) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("smooth_l1", format!("{} targets vs {} predictions", y.len(), y_hat.len())));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("smooth_l1 beta must be positive, got {beta}")));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("smooth_l1 of empty vectors".into()));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| smooth_l1_elem(a - b, beta, literal).0).sum::<f64>() / y.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape_percent: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// Over targets with `|y| > mape_floor`; 0 when none qualify.
    pub mape_percent: f64,
    pub count: usize,
    pub mape_count: usize,
    pub per_step: Vec<StepMetrics>,
}

#[derive(Clone, Debug, Default)]
struct Sums {
    abs: f64,
    sq: f64,
    ape: f64,
    n: usize,
    n_ape: usize,
}

impl Sums {
    fn add(&mut self, y: f64, y_hat: f64, floor: f64) {
        let d = y - y_hat;
        self.abs += d.abs();
        self.sq += d * d;
        self.n += 1;
        if y.abs() > floor {
            self.ape += (d / y).abs();
            self.n_ape += 1;
        }
    }

    fn mae(&self) -> f64 {
        self.abs / self.n.max(1) as f64
    }

    fn rmse(&self) -> f64 {
        (self.sq / self.n.max(1) as f64).sqrt()
    }

    fn mape(&self) -> f64 {
        if self.n_ape == 0 {
            0.0
        } else {
            100.0 * self.ape / self.n_ape as f64
        }
    }
}

/// Streams `[sample][step]` predictions into MAE / RMSE / MAPE.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    horizon: usize,
    mape_floor: f64,
    total: Sums,
    steps: Vec<Sums>,
}

impl MetricsAccumulator {
    pub fn new(horizon: usize, mape_floor: f64) -> Self {
        MetricsAccumulator { horizon, mape_floor, total: Sums::default(), steps: vec![Sums::default(); horizon] }
    }

    /// Adds row-major `[n][horizon]` pairs; entries with `skip` set are ignored.
    pub fn add(&mut self, y: &[f64], y_hat: &[f64], skip: Option<&[bool]>) -> Result<()> {
        if y.len() != y_hat.len() || y.len() % self.horizon != 0 || skip.is_some_and(|s| s.len() != y.len()) {
            return Err(Error::shape("metrics", format!("{} targets vs {} predictions", y.len(), y_hat.len())));
        }
        for (i, (&a, &b)) in y.iter().zip(y_hat).enumerate() {
            if skip.is_some_and(|s| s[i]) {
                continue;
            }
            self.total.add(a, b, self.mape_floor);
            self.steps[i % self.horizon].add(a, b, self.mape_floor);
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        if self.total.n == 0 {
            return Err(Error::Data("no targets to evaluate".into()));
        }
        Ok(MetricsReport {
            mae: self.total.mae(),
            rmse: self.total.rmse(),
            mape_percent: self.total.mape(),
            count: self.total.n,
            mape_count: self.total.n_ape,
            per_step: self
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| StepMetrics { step: i + 1, mae: s.mae(), rmse: s.rmse(), mape_percent: s.mape(), count: s.n })
                .collect(),
        })
    }
}

/// Metrics of one flat set of pairs with `horizon` steps per sample.
pub fn compute_metrics(y: &[f64], y_hat: &[f64], horizon: usize, mape_floor: f64) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(horizon, mape_floor);
    acc.add(y, y_hat, None)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = compute_metrics(&[100.0, 200.0], &[110.0, 180.0], 1, 1.0).unwrap();
        assert!((m.mae - 15.0).abs() < 1e-12);
        assert!((m.rmse - 250f64.sqrt()).abs() < 1e-12);
        assert!((m.mape_percent - 10.0).abs() < 1e-12);
        let p = compute_metrics(&[3.0, 4.0], &[3.0, 4.0], 2, 1.0).unwrap();
        assert_eq!((p.mae, p.rmse, p.mape_percent), (0.0, 0.0, 0.0));
        assert_eq!(p.per_step.len(), 2);
    }

    #[test]
    fn mape_floor_excludes_small_targets() {
        let m = compute_metrics(&[0.5, 10.0], &[1.5, 11.0], 1, 1.0).unwrap();
        assert_eq!(m.mape_count, 1);
        assert!((m.mape_percent - 10.0).abs() < 1e-12);
    }

    #[test]
    fn loss_closed_form() {
        for (d, want) in [(0.0, 0.0), (0.2, 0.02), (1.0, 0.5), (2.0, 1.5)] {
            assert!((smooth_l1(&[d], &[0.0], 1.0, false).unwrap() - want).abs() < 1e-15);
        }
        assert!(smooth_l1(&[1.0], &[], 1.0, false).is_err());
    }
}
