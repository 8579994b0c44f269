use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments and no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update. Every gradient is checked before anything changes, so a
    /// non-finite entry leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], names: &[String]) -> Result<()> {
        if grads.len() != params.len() || grads.iter().zip(params.iter()).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::shape("adam_step", "gradients do not mirror the parameters"));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                let name = names.get(i).map(String::as_str).unwrap_or("?");
                return Err(Error::NonFinite(format!("gradient of {name} at entry {j}")));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, step, eps) = (self.beta1, self.beta2, self.lr / bc1, self.eps);
        let inv_bc2 = 1.0 / bc2;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *x -= step * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &[vec![3.0, -40.0, 1e-2]], &names(1)).unwrap();
        let moved: Vec<f64> = p[0].data().iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        for (d, s) in moved.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((d - 0.01 * s).abs() < 1e-8, "{d}");
        }
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_params() {
        let orig = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut p = orig.clone();
        let mut adam = Adam::new(&p, 0.1);
        adam.step(&mut p, &[vec![0.0, 0.0]], &names(1)).unwrap();
        assert_eq!(p, orig);
        let mut adam = Adam::new(&p, 0.0);
        adam.step(&mut p, &[vec![5.0, -1.0]], &names(1)).unwrap();
        assert_eq!(p, orig);
        assert!(adam.second_moments()[0].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![2.0])];
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.1);
        let err = adam.step(&mut p, &[vec![1.0], vec![f64::NAN]], &names(2)).unwrap_err();
        assert!(err.to_string().contains("p1"));
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }
}
