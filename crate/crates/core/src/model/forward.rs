use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, SgMode};
use super::layers::{self, CellVars, CtgAdjacency, TemporalVars};
use super::params::{Layout, ModelParams};
use crate::data::{Batch, SampleIndex, FEATURES};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handles of one recorded forward pass.
pub struct ForwardPass {
    /// `B×horizon`, in scaled flow units.
    pub prediction: Var,
    /// One leaf per parameter tensor, in layout order.
    pub params: Vec<Var>,
    /// Target representation `r` after each step.
    pub r: Vec<Var>,
    /// Neighbor representations after message passing, `u[t][i]`.
    pub u: Vec<Vec<Var>>,
    /// `B×K` temporal attention per step (absent when `K = 0`).
    pub alpha: Vec<Option<Var>>,
    /// Rows of the attenuation-aggregated matrix `E` (absent under `ablate_ctg`).
    pub e_rows: Vec<Var>,
    pub refined: Var,
    /// Values passed through a stop-gradient, one per step.
    pub stopped: Vec<Var>,
}

fn check_batch(cfg: &ModelConfig, batch: &Batch) -> Result<()> {
    if batch.k != cfg.k || batch.window != cfg.window || batch.horizon != cfg.horizon {
        return Err(Error::shape(
            "forward",
            format!(
                "batch has K={}, w={}, horizon={}; model expects K={}, w={}, horizon={}",
                batch.k, batch.window, batch.horizon, cfg.k, cfg.window, cfg.horizon
            ),
        ));
    }
    Ok(())
}

fn scaled_step(cfg: &ModelConfig, batch: &Batch, slot: usize, t: usize) -> Tensor {
    let mut x = batch.step_features(slot, t);
    for row in x.data_mut().chunks_mut(FEATURES) {
        row[0] = cfg.to_scaled(row[0]);
    }
    x
}

/// Records the full model on `tape` for one batch, binding `tensors` (in
/// layout order for `cfg`) as differentiable leaves.
pub fn forward_with<'p>(
    tape: &mut Tape<'p>,
    cfg: &ModelConfig,
    tensors: &'p [Tensor],
    batch: &Batch,
    training: bool,
    rng: &mut Rng,
) -> Result<ForwardPass> {
    forward_impl(tape, cfg, tensors, batch, training, rng, None)
}

/// [`forward_with`] where every stop-gradient input is replaced by the
/// matching constant of `frozen` (as captured in [`ForwardPass::stopped`]).
/// Perturbing parameters then leaves the stopped branches fixed, which is
/// what a finite-difference check of the masked gradient needs.
pub fn forward_frozen<'p>(
    tape: &mut Tape<'p>,
    cfg: &ModelConfig,
    tensors: &'p [Tensor],
    batch: &Batch,
    rng: &mut Rng,
    frozen: &[Tensor],
) -> Result<ForwardPass> {
    forward_impl(tape, cfg, tensors, batch, false, rng, Some(frozen))
}

fn forward_impl<'p>(
    tape: &mut Tape<'p>,
    cfg: &ModelConfig,
    tensors: &'p [Tensor],
    batch: &Batch,
    training: bool,
    rng: &mut Rng,
    frozen: Option<&[Tensor]>,
) -> Result<ForwardPass> {
    cfg.validate()?;
    if let Some(f) = frozen {
        let need = if cfg.sg_mode == SgMode::Off { 0 } else { cfg.window };
        if f.len() != need {
            return Err(Error::shape("forward_frozen", format!("{} frozen values for {need} stop-gradients", f.len())));
        }
    }
    check_batch(cfg, batch)?;
    let layout = Layout::new(cfg);
    if tensors.len() != layout.names.len() || tensors.iter().zip(&layout.shapes).any(|(t, s)| t.shape() != s.as_slice()) {
        return Err(Error::shape("forward", "parameter tensors do not match the config layout"));
    }
    let p: Vec<Var> = tensors.iter().map(|t| tape.leaf(t)).collect();
    let (b, d, k, w) = (batch.size, cfg.d, cfg.k, cfg.window);
    let cell = |slot: usize, t: usize| {
        let s = layout.cell(slot, t);
        CellVars {
            w_i: p[s.w_i],
            w_f: p[s.w_f],
            w_c: p[s.w_c],
            w_o: p[s.w_o],
            b_i: p[s.b_i],
            b_f: p[s.b_f],
            b_c: p[s.b_c],
            b_o: p[s.b_o],
        }
    };
    let temporal = TemporalVars {
        w_q: p[layout.w_q],
        w_k: p[layout.w_k],
        w_v: p[layout.w_v],
        w_fuse1: p[layout.w_fuse1],
        b_fuse1: p[layout.b_fuse1],
    };

    let mut c: Vec<Var> = (0..=k)
        .map(|_| {
            if cfg.random_c0 {
                let data = (0..b * d).map(|_| 0.01 * rng.normal()).collect();
                tape.constant(Tensor::matrix(b, d, data).expect("sized above"))
            } else {
                tape.zeros(&[b, d])
            }
        })
        .collect();
    let mut r_prev = tape.zeros(&[b, d]);
    let mut u_prev: Vec<Var> = (0..k).map(|_| tape.zeros(&[b, d])).collect();
    let spatial: Vec<Var> = (0..k)
        .map(|i| {
            if cfg.ablate_spatial {
                tape.zeros(&[b, 1])
            } else {
                tape.constant(batch.spatial_column(i))
            }
        })
        .collect();

    let mut rs = Vec::with_capacity(w);
    let mut us = Vec::with_capacity(w);
    let mut alphas = Vec::with_capacity(w);
    let mut stopped = Vec::new();
    let mut detach = |tape: &mut Tape<'p>, v: Var, t: usize| -> Result<Var> {
        let s = match frozen {
            Some(f) => tape.constant(f[t].clone()),
            None => tape.stop_gradient(v)?,
        };
        stopped.push(s);
        Ok(s)
    };
    for t in 0..w {
        let mut h_hat = Vec::with_capacity(k + 1);
        for slot in 0..=k {
            let enc = layout.encoder(slot);
            let x = tape.constant(scaled_step(cfg, batch, slot, t));
            h_hat.push(layers::embed_input(tape, x, p[enc.embed_w], p[enc.embed_b])?);
        }
        let carry = if cfg.sg_mode == SgMode::Recurrence { detach(tape, r_prev, t)? } else { r_prev };
        let (c0, h) = layers::cell_step(tape, carry, h_hat[0], c[0], &cell(0, t))?;
        c[0] = c0;
        let mut u = Vec::with_capacity(k);
        for i in 0..k {
            let (ci, ui) = layers::cell_step(tape, u_prev[i], h_hat[i + 1], c[i + 1], &cell(i + 1, t))?;
            c[i + 1] = ci;
            u.push(ui);
        }
        let h_s = layers::hgat_spatial(tape, h, &u, &spatial, p[layout.w_s], p[layout.b_s])?;
        let (r, alpha) = layers::hgat_temporal(tape, h, h_s, &u, &temporal, cfg.literal_eq5)?;
        let src = if cfg.sg_mode == SgMode::Message { detach(tape, h, t)? } else { h };
        let u_next = layers::message_pass(tape, src, &u, p[layout.w_fuse2], p[layout.b_fuse2], false)?;
        rs.push(r);
        us.push(u_next.clone());
        alphas.push(alpha);
        r_prev = r;
        u_prev = u_next;
    }

    let (refined, e_rows) = if cfg.ablate_ctg {
        (rs[w - 1], Vec::new())
    } else {
        let e_rows = layers::ctg_aggregate(tape, &rs, &us, w)?;
        let a_row = layers::ctg_target_row(tape, &e_rows, cfg.top_k)?;
        let mut h0 = vec![rs[w - 1]];
        h0.extend_from_slice(&us[w - 1]);
        (layers::gcn_refine(tape, &h0, a_row, p[layout.w_g])?, e_rows)
    };
    let prediction = layers::predict(
        tape,
        refined,
        p[layout.w1],
        p[layout.b1],
        p[layout.w2],
        p[layout.b2],
        cfg.dropout,
        training,
        rng,
    )?;
    Ok(ForwardPass { prediction, params: p, r: rs, u: us, alpha: alphas, e_rows, refined, stopped })
}

pub fn forward<'p>(tape: &mut Tape<'p>, params: &'p ModelParams, batch: &Batch, training: bool, rng: &mut Rng) -> Result<ForwardPass> {
    forward_with(tape, &params.config, &params.tensors, batch, training, rng)
}

/// Mean smooth-L1 between the prediction and the batch targets in scaled units.
pub fn batch_loss(tape: &mut Tape<'_>, cfg: &ModelConfig, pass: &ForwardPass, batch: &Batch, beta: f64, literal: bool) -> Result<Var> {
    let targets: Vec<f64> = batch.targets.iter().map(|&y| cfg.to_scaled(y)).collect();
    tape.smooth_l1(pass.prediction, &targets, beta, literal)
}

/// Fixed stream for evaluation-mode passes (only read with `random_c0`).
pub fn eval_rng() -> Rng {
    Rng::derive(0, "eval-forward")
}

/// Eval-mode predictions in raw flow units, `[B][horizon]` row-major.
pub fn predict_raw(params: &ModelParams, batch: &Batch) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pass = forward(&mut tape, params, batch, false, &mut eval_rng())?;
    Ok(tape.value(pass.prediction).iter().map(|&v| params.config.to_raw(v)).collect())
}

/// Temporal attention of one step for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub timestep: usize,
    pub target_node: usize,
    pub neighbor_ids: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Attention history of one sample plus its final coarse adjacency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub sample: SampleIndex,
    pub trace: Vec<TraceStep>,
    /// `(K+1)×(K+1)`, row/column 0 is the target; empty under `ablate_ctg`.
    pub a_t: Vec<Vec<f64>>,
}

/// Eval-mode attention traces, one per batch row.
pub fn attention_traces(params: &ModelParams, batch: &Batch) -> Result<Vec<AttentionTrace>> {
    let mut tape = Tape::new();
    let pass = forward(&mut tape, params, batch, false, &mut eval_rng())?;
    let (k, d) = (params.config.k, params.config.d);
    Ok((0..batch.size)
        .map(|row| {
            let trace = pass
                .alpha
                .iter()
                .enumerate()
                .map(|(t, a)| TraceStep {
                    timestep: t + 1,
                    target_node: batch.index[row].node,
                    neighbor_ids: batch.neighbors[row].clone(),
                    weights: a.map(|a| tape.value(a)[row * k..(row + 1) * k].to_vec()).unwrap_or_default(),
                })
                .collect();
            let a_t = if pass.e_rows.is_empty() {
                Vec::new()
            } else {
                let e: Vec<Vec<f64>> = pass.e_rows.iter().map(|&v| tape.value(v)[row * d..(row + 1) * d].to_vec()).collect();
                let CtgAdjacency { a_t, .. } = layers::ctg_adjacency(&e, params.config.top_k);
                a_t
            };
            AttentionTrace { sample: batch.index[row], trace, a_t }
        })
        .collect())
}
