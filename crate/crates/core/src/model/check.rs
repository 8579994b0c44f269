use super::config::ModelConfig;
use super::forward::{batch_loss, eval_rng, forward_frozen, forward_with};
use crate::data::Batch;
use crate::diffcore::{finite_diff_check, GradCheckReport, Tape, Tensor, DEFAULT_EPS};
use crate::error::Result;

/// Finite-difference check of the eval-mode loss gradient of the whole model.
///
/// The numeric side runs with every stop-gradient input pinned to its value
/// from the unperturbed pass, so both sides differentiate the same function.
/// `sabotage` flips the sign of the largest analytic entry before comparing.
pub fn model_gradcheck(cfg: &ModelConfig, tensors: &[Tensor], batch: &Batch, beta: f64, sabotage: bool) -> Result<GradCheckReport> {
    let (mut analytic, frozen) = {
        let mut tape = Tape::new();
        let pass = forward_with(&mut tape, cfg, tensors, batch, false, &mut eval_rng())?;
        let loss = batch_loss(&mut tape, cfg, &pass, batch, beta, false)?;
        let grads = tape.backward(loss)?;
        let analytic: Vec<Vec<f64>> = pass.params.iter().map(|&p| grads.wrt(p)).collect();
        let frozen: Vec<Tensor> = pass.stopped.iter().map(|&s| tape.tensor(s)).collect();
        (analytic, frozen)
    };
    if sabotage {
        let mut worst = (0, 0, 0.0f64);
        for (t, g) in analytic.iter().enumerate() {
            for (i, &v) in g.iter().enumerate() {
                if v.abs() > worst.2 {
                    worst = (t, i, v.abs());
                }
            }
        }
        analytic[worst.0][worst.1] = -analytic[worst.0][worst.1];
    }
    let mut params = tensors.to_vec();
    finite_diff_check(
        |p| {
            let mut tape = Tape::new();
            let pass = forward_frozen(&mut tape, cfg, p, batch, &mut eval_rng(), &frozen)?;
            let loss = batch_loss(&mut tape, cfg, &pass, batch, beta, false)?;
            Ok(tape.scalar(loss))
        },
        &mut params,
        &analytic,
        DEFAULT_EPS,
    )
}
