//! Building blocks of one forward pass, each acting on `B` rows at once.

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Gate tensors of one recurrent cell, bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub w_i: Var,
    pub w_f: Var,
    pub w_c: Var,
    pub w_o: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_c: Var,
    pub b_o: Var,
}

/// Input embedding `x·Wᵀ + b`, `B×3 -> B×D`.
pub fn embed_input(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    tape.linear(x, w, Some(b))
}

/// One recurrent step on input `[r_prev, ĥ]`. Returns `(c, h)`.
pub fn cell_step(tape: &mut Tape<'_>, r_prev: Var, h_hat: Var, c_prev: Var, p: &CellVars) -> Result<(Var, Var)> {
    let z = tape.concat(r_prev, h_hat, 1)?;
    let i = tape.linear(z, p.w_i, Some(p.b_i))?;
    let i = tape.sigmoid(i)?;
    let f = tape.linear(z, p.w_f, Some(p.b_f))?;
    let f = tape.sigmoid(f)?;
    let g = tape.linear(z, p.w_c, Some(p.b_c))?;
    let g = tape.tanh(g)?;
    let o = tape.linear(z, p.w_o, Some(p.b_o))?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((c, h))
}

/// `Σ_i s_i ⊙ v_i` with `s_i: B×1`; zeros when `vs` is empty.
fn weighted_sum(tape: &mut Tape<'_>, vs: &[Var], scales: &[Var], like: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (&v, &s) in vs.iter().zip(scales) {
        let term = tape.scale_rows(v, s)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => {
            let shape = tape.shape(like).to_vec();
            Ok(tape.zeros(&shape))
        }
    }
}

/// Static spatial aggregation: `relu([h, Σ α_si u_i]·W_sᵀ + b_s)`.
/// `spatial[i]` is the `B×1` column of weights for neighbor slot `i`.
pub fn hgat_spatial(tape: &mut Tape<'_>, h: Var, u: &[Var], spatial: &[Var], w_s: Var, b_s: Var) -> Result<Var> {
    if u.len() != spatial.len() {
        return Err(Error::shape("hgat_spatial", format!("{} neighbors, {} weights", u.len(), spatial.len())));
    }
    let agg = weighted_sum(tape, u, spatial, h)?;
    let z = tape.concat(h, agg, 1)?;
    let z = tape.linear(z, w_s, Some(b_s))?;
    tape.relu(z)
}

/// Temporal weights of the `B×K` score matrix: row softmax, or plain
/// division by the row sum when `literal`.
pub fn attention_weights(tape: &mut Tape<'_>, scores: Var, literal: bool) -> Result<Var> {
    if literal {
        tape.normalize_rows(scores)
    } else {
        tape.softmax(scores)
    }
}

/// Handles for the temporal attention block.
#[derive(Clone, Copy, Debug)]
pub struct TemporalVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_fuse1: Var,
    pub b_fuse1: Var,
}

/// Fine-grained temporal attention. Scores `e_i = (h_s W_qᵀ)·(u_i W_kᵀ)`,
/// weights `α = softmax(e)`, and `r = relu([h, Σ α_i u_i W_vᵀ]·W_fuse1ᵀ + b)`.
/// Returns `(r, α)`; `α` is `None` when there are no neighbors.
pub fn hgat_temporal(tape: &mut Tape<'_>, h: Var, h_s: Var, u: &[Var], p: &TemporalVars, literal: bool) -> Result<(Var, Option<Var>)> {
    let (agg, alpha) = if u.is_empty() {
        let shape = tape.shape(h).to_vec();
        (tape.zeros(&shape), None)
    } else {
        let q = tape.matmul_t(h_s, p.w_q)?;
        let mut scores: Option<Var> = None;
        let mut values = Vec::with_capacity(u.len());
        for &ui in u {
            let k = tape.matmul_t(ui, p.w_k)?;
            let e = tape.row_dot(q, k)?;
            scores = Some(match scores {
                Some(s) => tape.concat(s, e, 1)?,
                None => e,
            });
            values.push(tape.matmul_t(ui, p.w_v)?);
        }
        let alpha = attention_weights(tape, scores.expect("at least one neighbor"), literal)?;
        let cols = (0..u.len()).map(|i| tape.column(alpha, i)).collect::<Result<Vec<_>>>()?;
        (weighted_sum(tape, &values, &cols, h)?, Some(alpha))
    };
    let z = tape.concat(h, agg, 1)?;
    let z = tape.linear(z, p.w_fuse1, Some(p.b_fuse1))?;
    Ok((tape.relu(z)?, alpha))
}

/// Neighbor update `u'_i = relu([h, u_i]·W_fuse2ᵀ + b)`; with `stop` the
/// target-side input is detached.
pub fn message_pass(tape: &mut Tape<'_>, h: Var, u: &[Var], w: Var, b: Var, stop: bool) -> Result<Vec<Var>> {
    let src = if stop { tape.stop_gradient(h)? } else { h };
    u.iter()
        .map(|&ui| {
            let z = tape.concat(src, ui, 1)?;
            let z = tape.linear(z, w, Some(b))?;
            tape.relu(z)
        })
        .collect()
}

/// Recency weights `γ_t = 1 / (w - t + 1)` for `t = 1..=w`.
pub fn gamma(window: usize) -> Vec<f64> {
    (1..=window).map(|t| 1.0 / (window - t + 1) as f64).collect()
}

/// Rows of `E`: row 0 from the target history `r_seq`, row `i` from
/// neighbor `i`'s history. `u_seq[t][i]` is neighbor `i` at step `t`.
pub fn ctg_aggregate(tape: &mut Tape<'_>, r_seq: &[Var], u_seq: &[Vec<Var>], window: usize) -> Result<Vec<Var>> {
    if r_seq.len() < window || u_seq.len() < window {
        return Err(Error::shape("ctg_aggregate", format!("histories of {} steps, window {window}", r_seq.len())));
    }
    let g = gamma(window);
    let k = u_seq[0].len();
    let mut rows = Vec::with_capacity(k + 1);
    for slot in 0..=k {
        let mut acc: Option<Var> = None;
        for (t, &gt) in g.iter().enumerate() {
            let v = if slot == 0 { r_seq[t] } else { u_seq[t][slot - 1] };
            let term = tape.scale(v, gt)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        rows.push(acc.expect("window is positive"));
    }
    Ok(rows)
}

/// Indices of the `top_k` largest values; ties go to the lower index.
pub fn top_k_indices(values: &[f64], top_k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(top_k);
    order.sort_unstable();
    order
}

/// Row 0 of the normalized coarse adjacency `Â`, `B×(K+1)`.
///
/// Similarities `s_0j = E_0·E_j` over `j ≥ 1` go through a softmax, all but
/// the `top_k` largest are zeroed, a unit self-loop is prepended and the row
/// is divided by its sum. The kept set is chosen on values and held fixed
/// for the backward pass.
pub fn ctg_target_row(tape: &mut Tape<'_>, e_rows: &[Var], top_k: usize) -> Result<Var> {
    let b = tape.shape(e_rows[0])[0];
    let ones = tape.constant(crate::diffcore::Tensor::filled(&[b, 1], 1.0));
    if e_rows.len() == 1 {
        return Ok(ones);
    }
    let k = e_rows.len() - 1;
    let mut scores: Option<Var> = None;
    for &ej in &e_rows[1..] {
        let s = tape.row_dot(e_rows[0], ej)?;
        scores = Some(match scores {
            Some(acc) => tape.concat(acc, s, 1)?,
            None => s,
        });
    }
    let mut theta = tape.softmax(scores.expect("k >= 1"))?;
    if top_k < k {
        let vals = tape.value(theta).to_vec();
        let mut mask = vec![0.0; b * k];
        for r in 0..b {
            for j in top_k_indices(&vals[r * k..(r + 1) * k], top_k) {
                mask[r * k + j] = 1.0;
            }
        }
        let mask = tape.constant(crate::diffcore::Tensor::matrix(b, k, mask)?);
        theta = tape.mul(theta, mask)?;
    }
    let row = tape.concat(ones, theta, 1)?;
    tape.normalize_rows(row)
}

/// Row 0 of `relu(Â·H₀·W_gᵀ)` where `H₀ = [r_last; u_last]`.
pub fn gcn_refine(tape: &mut Tape<'_>, h0: &[Var], a_row: Var, w_g: Var) -> Result<Var> {
    if tape.shape(a_row)[1] != h0.len() {
        return Err(Error::shape("gcn_refine", format!("adjacency row {:?} for {} nodes", tape.shape(a_row), h0.len())));
    }
    let cols = (0..h0.len()).map(|j| tape.column(a_row, j)).collect::<Result<Vec<_>>>()?;
    let mixed = weighted_sum(tape, h0, &cols, h0[0])?;
    let z = tape.matmul_t(mixed, w_g)?;
    tape.relu(z)
}

/// Two-layer head: `relu(x W1ᵀ + b1)`, dropout, then `· W2ᵀ + b2`.
#[allow(clippy::too_many_arguments)]
pub fn predict(tape: &mut Tape<'_>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var, dropout: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    let z = tape.linear(x, w1, Some(b1))?;
    let z = tape.relu(z)?;
    let z = tape.dropout(z, dropout, training, rng)?;
    tape.linear(z, w2, Some(b2))
}

/// Full coarse temporal graph of one sample, computed on plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct CtgAdjacency {
    /// Off-diagonal row softmax of `E·Eᵀ`; diagonal 0.
    pub theta: Vec<Vec<f64>>,
    /// Top-k of `theta` per row plus a unit self-loop.
    pub a_t: Vec<Vec<f64>>,
}

pub fn ctg_adjacency(e: &[Vec<f64>], top_k: usize) -> CtgAdjacency {
    let n = e.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut theta = vec![vec![0.0; n]; n];
    let mut a_t = vec![vec![0.0; n]; n];
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        a_t[i][i] = 1.0;
        if others.is_empty() {
            continue;
        }
        let s: Vec<f64> = others.iter().map(|&j| dot(&e[i], &e[j])).collect();
        let mut p = vec![0.0; s.len()];
        crate::diffcore::softmax_into(&s, &mut p);
        for (slot, &j) in others.iter().enumerate() {
            theta[i][j] = p[slot];
        }
        for slot in top_k_indices(&p, top_k) {
            a_t[i][others[slot]] = p[slot];
        }
    }
    CtgAdjacency { theta, a_t }
}

/// Divides each row by its sum.
pub fn row_normalize(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect()
}
