use stahgnet::data::{Batch, FlowDataset, RoadGraph, TimeRange, WindowConfig, Windower, FEATURES};
use stahgnet::diffcore::{Tape, Tensor};
use stahgnet::model::layers::{self, CellVars, TemporalVars};
use stahgnet::model::*;
use stahgnet::rng::Rng;
use stahgnet::synth::{SynthSpec, SyntheticData};

fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| scale * rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

fn rand_vec(rng: &mut Rng, n: usize, scale: f64) -> Tensor {
    Tensor::vector((0..n).map(|_| scale * rng.uniform_in(-1.0, 1.0)).collect())
}

/// `W·x` for an output-major `W`.
fn apply(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.shape()[1];
    (0..w.shape()[0]).map(|j| (0..cols).map(|k| w.data()[j * cols + k] * x[k]).sum()).collect()
}

fn sigma(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn embedding_examples() {
    let mut rng = Rng::new(1);
    let w = rand_matrix(&mut rng, 64, 3, 1.0);
    let zero_b = Tensor::vector(vec![0.0; 64]);
    let a = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
    let b = Tensor::matrix(1, 3, vec![0.25, 4.0, -1.0]).unwrap();
    let ab = Tensor::matrix(1, 3, vec![1.25, 2.0, -0.5]).unwrap();
    let zero = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
    let mut tape = Tape::new();
    let (wv, bv) = (tape.leaf(&w), tape.leaf(&zero_b));
    let mut run = |x: &Tensor| {
        let x = tape.constant(x.clone());
        let e = layers::embed_input(&mut tape, x, wv, bv).unwrap();
        tape.value(e).to_vec()
    };
    let (ea, eb, eab, ez) = (run(&a), run(&b), run(&ab), run(&zero));
    assert_eq!(ez, vec![0.0; 64]);
    assert_eq!(eab.len(), 64);
    let sum: Vec<f64> = ea.iter().zip(&eb).map(|(x, y)| x + y).collect();
    close(&eab, &sum, 1e-12);
}

struct Cell {
    w: [Tensor; 4],
    b: [Tensor; 4],
}

fn rand_cell(rng: &mut Rng, d: usize) -> Cell {
    Cell {
        w: std::array::from_fn(|_| rand_matrix(rng, d, 2 * d, 0.5)),
        b: std::array::from_fn(|_| rand_vec(rng, d, 0.5)),
    }
}

fn run_cell(cell: &Cell, r: &[f64], h_hat: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = r.len();
    let mut tape = Tape::new();
    let w: Vec<_> = cell.w.iter().map(|t| tape.leaf(t)).collect();
    let b: Vec<_> = cell.b.iter().map(|t| tape.leaf(t)).collect();
    let vars = CellVars { w_i: w[0], w_f: w[1], w_c: w[2], w_o: w[3], b_i: b[0], b_f: b[1], b_c: b[2], b_o: b[3] };
    let r = tape.constant(Tensor::matrix(1, d, r.to_vec()).unwrap());
    let x = tape.constant(Tensor::matrix(1, d, h_hat.to_vec()).unwrap());
    let c = tape.constant(Tensor::matrix(1, d, c.to_vec()).unwrap());
    let (c, h) = layers::cell_step(&mut tape, r, x, c, &vars).unwrap();
    (tape.value(c).to_vec(), tape.value(h).to_vec())
}

fn cell_oracle(cell: &Cell, r: &[f64], h_hat: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<f64> = r.iter().chain(h_hat).copied().collect();
    let gate = |g: usize| -> Vec<f64> { apply(&cell.w[g], &z).iter().zip(cell.b[g].data()).map(|(a, b)| a + b).collect() };
    let (i, f, cc, o) = (gate(0), gate(1), gate(2), gate(3));
    let mut c_new = vec![0.0; r.len()];
    let mut h = vec![0.0; r.len()];
    for j in 0..r.len() {
        c_new[j] = sigma(f[j]) * c[j] + sigma(i[j]) * cc[j].tanh();
        h[j] = sigma(o[j]) * c_new[j].tanh();
    }
    (c_new, h)
}

#[test]
fn cell_step_examples_and_oracle() {
    let d = 6;
    let zero_cell = Cell { w: std::array::from_fn(|_| Tensor::zeros(&[d, 2 * d])), b: std::array::from_fn(|_| Tensor::zeros(&[d])) };
    let z = vec![0.0; d];
    assert_eq!(run_cell(&zero_cell, &z, &z, &z), (z.clone(), z.clone()));

    let mut rng = Rng::new(5);
    let mut cell = rand_cell(&mut rng, d);
    let (r, x, c) = (rand_vec(&mut rng, d, 1.0), rand_vec(&mut rng, d, 1.0), rand_vec(&mut rng, d, 1.0));
    let (got_c, got_h) = run_cell(&cell, r.data(), x.data(), c.data());
    let (want_c, want_h) = cell_oracle(&cell, r.data(), x.data(), c.data());
    close(&got_c, &want_c, 1e-12);
    close(&got_h, &want_h, 1e-12);

    // a saturated forget gate carries the old state almost unchanged
    cell.b[1] = Tensor::vector(vec![20.0; d]);
    let (got_c, _) = run_cell(&cell, r.data(), x.data(), c.data());
    let z: Vec<f64> = r.data().iter().chain(x.data()).copied().collect();
    for j in 0..d {
        let write = sigma(apply(&cell.w[0], &z)[j] + cell.b[0].data()[j]) * (apply(&cell.w[2], &z)[j] + cell.b[2].data()[j]).tanh();
        assert!((got_c[j] - (c.data()[j] + write)).abs() < 1e-8);
    }
}

#[test]
fn hgat_spatial_examples_and_oracle() {
    let (d, k) = (5, 3);
    let mut rng = Rng::new(8);
    let w_s = rand_matrix(&mut rng, d, 2 * d, 0.7);
    let b_s = rand_vec(&mut rng, d, 0.3);
    let h = rand_vec(&mut rng, d, 1.0);
    let u: Vec<Tensor> = (0..k).map(|_| rand_vec(&mut rng, d, 1.0)).collect();
    let run = |weights: &[f64], u: &[Tensor]| {
        let mut tape = Tape::new();
        let (wv, bv) = (tape.leaf(&w_s), tape.leaf(&b_s));
        let hv = tape.constant(Tensor::matrix(1, d, h.data().to_vec()).unwrap());
        let uv: Vec<_> = u.iter().map(|t| tape.constant(Tensor::matrix(1, d, t.data().to_vec()).unwrap())).collect();
        let sv: Vec<_> = weights.iter().map(|&s| tape.constant(Tensor::matrix(1, 1, vec![s]).unwrap())).collect();
        let out = layers::hgat_spatial(&mut tape, hv, &uv, &sv, wv, bv).unwrap();
        tape.value(out).to_vec()
    };
    let oracle = |weights: &[f64], u: &[Tensor]| {
        let mut agg = vec![0.0; d];
        for (s, ui) in weights.iter().zip(u) {
            for j in 0..d {
                agg[j] += s * ui.data()[j];
            }
        }
        let z: Vec<f64> = h.data().iter().chain(&agg).copied().collect();
        apply(&w_s, &z).iter().zip(b_s.data()).map(|(a, b)| (a + b).max(0.0)).collect::<Vec<_>>()
    };
    let weights = [0.5, 0.0, 1.0 / 3.0];
    close(&run(&weights, &u), &oracle(&weights, &u), 1e-12);
    close(&run(&[0.0; 3], &u), &oracle(&[0.0; 3], &u[..0]), 1e-15);
    close(&run(&[1.0], &u[..1]), &oracle(&[1.0], &u[..1]), 1e-15);
}

#[test]
fn hgat_temporal_examples_and_oracle() {
    let (d, k) = (4, 3);
    let mut rng = Rng::new(13);
    let ws: Vec<Tensor> = vec![
        rand_matrix(&mut rng, d, d, 0.8),
        rand_matrix(&mut rng, d, d, 0.8),
        rand_matrix(&mut rng, d, d, 0.8),
        rand_matrix(&mut rng, d, 2 * d, 0.8),
        rand_vec(&mut rng, d, 0.2),
    ];
    let h = rand_vec(&mut rng, d, 1.0);
    let h_s = rand_vec(&mut rng, d, 1.0);
    let run = |u: &[Tensor]| {
        let mut tape = Tape::new();
        let v: Vec<_> = ws.iter().map(|t| tape.leaf(t)).collect();
        let p = TemporalVars { w_q: v[0], w_k: v[1], w_v: v[2], w_fuse1: v[3], b_fuse1: v[4] };
        let row = |tape: &mut Tape<'_>, t: &Tensor| tape.constant(Tensor::matrix(1, d, t.data().to_vec()).unwrap());
        let (hv, hsv) = (row(&mut tape, &h), row(&mut tape, &h_s));
        let uv: Vec<_> = u.iter().map(|t| row(&mut tape, t)).collect();
        let (r, a) = layers::hgat_temporal(&mut tape, hv, hsv, &uv, &p, false).unwrap();
        (tape.value(r).to_vec(), tape.value(a.unwrap()).to_vec())
    };
    let u: Vec<Tensor> = (0..k).map(|_| rand_vec(&mut rng, d, 1.0)).collect();
    let (r, alpha) = run(&u);

    let q = apply(&ws[0], h_s.data());
    let e: Vec<f64> = u.iter().map(|ui| apply(&ws[1], ui.data()).iter().zip(&q).map(|(a, b)| a * b).sum()).collect();
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = ex.iter().sum();
    let want_alpha: Vec<f64> = ex.iter().map(|v| v / total).collect();
    let mut agg = vec![0.0; d];
    for (a, ui) in want_alpha.iter().zip(&u) {
        for (j, v) in apply(&ws[2], ui.data()).iter().enumerate() {
            agg[j] += a * v;
        }
    }
    let z: Vec<f64> = h.data().iter().chain(&agg).copied().collect();
    let want_r: Vec<f64> = apply(&ws[3], &z).iter().zip(ws[4].data()).map(|(a, b)| (a + b).max(0.0)).collect();
    close(&alpha, &want_alpha, 1e-12);
    close(&r, &want_r, 1e-12);
    assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let same = vec![u[0].clone(); k];
    let (_, alpha) = run(&same);
    close(&alpha, &vec![1.0 / k as f64; k], 1e-15);
}

#[test]
fn message_pass_examples() {
    let d = 3;
    let mut w = vec![0.0; d * 2 * d];
    for j in 0..d {
        w[j * 2 * d + d + j] = 1.0;
    }
    let w = Tensor::matrix(d, 2 * d, w).unwrap();
    let b = Tensor::zeros(&[d]);
    let h = Tensor::matrix(1, d, vec![0.3, -0.2, 0.9]).unwrap();
    let u = Tensor::matrix(1, d, vec![1.5, -2.0, 0.0]).unwrap();
    let mut rng = Rng::new(2);
    let w2 = rand_matrix(&mut rng, d, 2 * d, 1.0);

    let mut outputs = Vec::new();
    for stop in [false, true] {
        let mut tape = Tape::new();
        let (wv, bv, hv, uv) = (tape.leaf(&w), tape.leaf(&b), tape.leaf(&h), tape.leaf(&u));
        let out = layers::message_pass(&mut tape, hv, &[uv], wv, bv, stop).unwrap();
        assert_eq!(tape.value(out[0]), &[1.5, 0.0, 0.0]);

        let w2v = tape.leaf(&w2);
        let mixed = layers::message_pass(&mut tape, hv, &[uv], w2v, bv, stop).unwrap();
        let loss = tape.sum(mixed[0]).unwrap();
        let g = tape.backward(loss).unwrap();
        if stop {
            assert!(g.wrt(hv).iter().all(|&x| x == 0.0), "no gradient reaches the target side");
        }
        outputs.push((tape.value(mixed[0]).to_vec(), g.wrt(hv)));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "forward is unchanged by the stop");
}

#[test]
fn ctg_examples() {
    assert_eq!(layers::gamma(3), vec![1.0 / 3.0, 0.5, 1.0]);
    let g = layers::gamma(12);
    assert!(g.windows(2).all(|p| p[0] < p[1]) && g[11] == 1.0);

    let d = 4;
    let ones = Tensor::matrix(1, d, vec![1.0; d]).unwrap();
    let mut tape = Tape::new();
    let r: Vec<_> = (0..3).map(|_| tape.constant(ones.clone())).collect();
    let u: Vec<Vec<_>> = (0..3).map(|_| vec![tape.constant(ones.clone())]).collect();
    let e = layers::ctg_aggregate(&mut tape, &r, &u, 3).unwrap();
    close(tape.value(e[0]), &[11.0 / 6.0; 4], 1e-15);

    let same = vec![vec![0.3, -1.0], vec![0.3, -1.0], vec![0.3, -1.0], vec![0.3, -1.0], vec![0.3, -1.0]];
    let adj = layers::ctg_adjacency(&same, 4);
    for i in 0..5 {
        for j in 0..5 {
            let want = if i == j { 0.0 } else { 0.25 };
            assert!((adj.theta[i][j] - want).abs() < 1e-15);
        }
    }
    let mut rng = Rng::new(4);
    let e: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).collect();
    let full = layers::ctg_adjacency(&e, 4);
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(full.a_t[i][j], if i == j { 1.0 } else { full.theta[i][j] });
        }
        assert!((full.theta[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let sparse = layers::ctg_adjacency(&e, 2);
    for row in &sparse.a_t {
        assert!(row.iter().filter(|&&v| v != 0.0).count() <= 3);
    }

    let e = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let adj = layers::ctg_adjacency(&e, 1);
    assert!(adj.a_t[0][1] > 0.0 && adj.a_t[0][2] == 0.0);
    for row in layers::row_normalize(&adj.a_t) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}

#[test]
fn ctg_target_row_matches_the_plain_adjacency() {
    let (d, k) = (5, 4);
    let mut rng = Rng::new(21);
    let e: Vec<Tensor> = (0..=k).map(|_| rand_matrix(&mut rng, 2, d, 0.6)).collect();
    for top_k in 1..=k {
        let mut tape = Tape::new();
        let ev: Vec<_> = e.iter().map(|t| tape.leaf(t)).collect();
        let row = layers::ctg_target_row(&mut tape, &ev, top_k).unwrap();
        for b in 0..2 {
            let plain: Vec<Vec<f64>> = e.iter().map(|t| t.data()[b * d..(b + 1) * d].to_vec()).collect();
            let want = layers::row_normalize(&layers::ctg_adjacency(&plain, top_k).a_t)[0].clone();
            close(&tape.value(row)[b * (k + 1)..(b + 1) * (k + 1)], &want, 1e-14);
        }
    }
}

#[test]
fn gcn_refine_examples_and_oracle() {
    let (d, n) = (4, 3);
    let mut rng = Rng::new(17);
    let h0: Vec<Tensor> = (0..n).map(|_| rand_matrix(&mut rng, 1, d, 1.0)).collect();
    let run = |a_row: &[f64], w_g: &Tensor| {
        let mut tape = Tape::new();
        let hv: Vec<_> = h0.iter().map(|t| tape.leaf(t)).collect();
        let a = tape.constant(Tensor::matrix(1, n, a_row.to_vec()).unwrap());
        let w = tape.leaf(w_g);
        let out = layers::gcn_refine(&mut tape, &hv, a, w).unwrap();
        tape.value(out).to_vec()
    };
    let identity = Tensor::matrix(d, d, (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
    let relu_r: Vec<f64> = h0[0].data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(run(&[1.0, 0.0, 0.0], &identity), relu_r);

    let w_g = rand_matrix(&mut rng, d, d, 1.0);
    let a_row = [0.5, 0.2, 0.3];
    let mut mixed = vec![0.0; d];
    for (a, h) in a_row.iter().zip(&h0) {
        for j in 0..d {
            mixed[j] += a * h.data()[j];
        }
    }
    let want: Vec<f64> = apply(&w_g, &mixed).iter().map(|v| v.max(0.0)).collect();
    close(&run(&a_row, &w_g), &want, 1e-12);
}

#[test]
fn predictor_examples() {
    let d = 6;
    for horizon in [1, 12] {
        let b2 = Tensor::vector((0..horizon).map(|i| i as f64 * 0.5).collect());
        let (w1, b1, w2) = (Tensor::zeros(&[d, d]), Tensor::zeros(&[d]), Tensor::zeros(&[horizon, d]));
        let x = Tensor::matrix(1, d, vec![1.0; d]).unwrap();
        let mut tape = Tape::new();
        let v: Vec<_> = [&w1, &b1, &w2, &b2, &x].iter().map(|t| tape.leaf(t)).collect();
        let y = layers::predict(&mut tape, v[4], v[0], v[1], v[2], v[3], 0.1, false, &mut Rng::new(0)).unwrap();
        assert_eq!(tape.shape(y), &[1, horizon]);
        assert_eq!(tape.value(y), b2.data());
    }
}

fn toy(nodes: usize, steps: usize) -> (FlowDataset, RoadGraph) {
    let data = SyntheticData::generate(&SynthSpec { nodes, steps, ..SynthSpec::default() }).unwrap();
    (data.flows, data.graph)
}

fn config(d: usize, k: usize, window: usize, horizon: usize) -> ModelConfig {
    ModelConfig { d, k, window, horizon, top_k: ModelConfig::default_top_k(k), flow_mean: 200.0, flow_std: 80.0, ..ModelConfig::default() }
}

fn batch_of(flows: &FlowDataset, graph: &RoadGraph, cfg: &ModelConfig, size: usize) -> Batch {
    let w = Windower::new(flows, graph, WindowConfig { window: cfg.window, horizon: cfg.horizon, k: cfg.k, hops: 1 }).unwrap();
    let idx = w.indices(TimeRange::new(0, flows.len())).unwrap();
    let picked: Vec<_> = idx.iter().step_by(idx.len() / size).take(size).copied().collect();
    w.batch(&picked, 11).unwrap()
}

#[test]
fn forward_shapes() {
    let (flows, graph) = toy(8, 80);
    let cfg = config(64, 4, 12, 12);
    let params = ModelParams::init(&cfg, &mut Rng::new(0)).unwrap();
    let batch = batch_of(&flows, &graph, &cfg, 2);
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &params, &batch, false, &mut eval_rng()).unwrap();
    assert_eq!(tape.shape(pass.prediction), &[2, 12]);
    assert_eq!(pass.r.len(), 12);
    assert_eq!(pass.alpha.iter().flatten().count(), 12);
    assert_eq!(pass.e_rows.len(), 5);
    let traces = attention_traces(&params, &batch).unwrap();
    assert_eq!(traces.len(), 2);
    for tr in &traces {
        assert_eq!(tr.trace.len(), 12);
        for step in &tr.trace {
            assert_eq!(step.weights.len(), 4);
            assert!((step.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(tr.a_t.len(), 5);
    }
    assert_eq!(traces, attention_traces(&params, &batch).unwrap());
}

#[test]
fn unshared_layout_counts() {
    let cfg = config(8, 2, 4, 1);
    let p = ModelParams::init(&cfg, &mut Rng::new(0)).unwrap();
    let gates = p.names.iter().filter(|n| n.ends_with(".W_i")).count();
    assert_eq!(gates, (cfg.k + 1) * cfg.window);
    assert_eq!(p.get("encoder2.cell3.W_o").unwrap().shape(), &[8, 16]);
    assert_eq!(p.get("encoder0.cell0.b_f").unwrap().shape(), &[8]);
    let shared = ModelParams::init(&ModelConfig { share_time: true, share_encoders: true, ..cfg }, &mut Rng::new(0)).unwrap();
    assert_eq!(shared.names.iter().filter(|n| n.ends_with(".W_i")).count(), 1);
}

#[test]
fn causality() {
    let (flows, graph) = toy(6, 60);
    let cfg = config(8, 3, 6, 1);
    let params = ModelParams::init(&cfg, &mut Rng::new(3)).unwrap();
    let batch = batch_of(&flows, &graph, &cfg, 3);
    let run = |b: &Batch| {
        let mut tape = Tape::new();
        let pass = forward(&mut tape, &params, b, false, &mut eval_rng()).unwrap();
        pass.r.iter().map(|&v| tape.value(v).to_vec()).collect::<Vec<_>>()
    };
    let base = run(&batch);
    for t0 in 0..cfg.window - 1 {
        let mut bumped = batch.clone();
        for b in 0..bumped.size {
            for slot in 0..=cfg.k {
                for t in t0 + 1..cfg.window {
                    let off = ((b * (cfg.k + 1) + slot) * cfg.window + t) * FEATURES;
                    for c in 0..FEATURES {
                        bumped.inputs[off + c] += 17.0 + c as f64;
                    }
                }
            }
        }
        let got = run(&bumped);
        for t in 0..=t0 {
            assert_eq!(got[t], base[t], "r at step {t} must ignore later inputs");
        }
        assert_ne!(got[t0 + 1], base[t0 + 1]);
    }
}

#[test]
fn stop_gradient_modes_share_values_not_gradients() {
    let (flows, graph) = toy(6, 60);
    let base = config(8, 2, 4, 1);
    let batch = batch_of(&flows, &graph, &base, 2);
    let params = ModelParams::init(&base, &mut Rng::new(9)).unwrap();
    let mut results = Vec::new();
    for mode in [SgMode::Message, SgMode::Recurrence, SgMode::Off] {
        let cfg = ModelConfig { sg_mode: mode, ..base.clone() };
        let mut tape = Tape::new();
        let pass = forward_with(&mut tape, &cfg, &params.tensors, &batch, false, &mut eval_rng()).unwrap();
        let loss = batch_loss(&mut tape, &cfg, &pass, &batch, 1.0, false).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads: Vec<Vec<f64>> = pass.params.iter().map(|&p| g.wrt(p)).collect();
        results.push((tape.value(pass.prediction).to_vec(), grads));
    }
    assert_eq!(results[0].0, results[2].0);
    assert_eq!(results[1].0, results[2].0);
    assert_ne!(results[0].1, results[2].1);
    assert_ne!(results[1].1, results[2].1);
}

#[test]
fn no_neighbor_model_runs() {
    let (flows, graph) = toy(5, 50);
    let cfg = config(8, 0, 6, 3);
    let params = ModelParams::init(&cfg, &mut Rng::new(1)).unwrap();
    let batch = batch_of(&flows, &graph, &cfg, 4);
    assert_eq!(batch.input_element_count(), 4 * 6 * FEATURES);
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &params, &batch, false, &mut eval_rng()).unwrap();
    assert_eq!(tape.shape(pass.prediction), &[4, 3]);
    assert!(pass.alpha.iter().all(Option::is_none));
    assert_eq!(pass.e_rows.len(), 1);
    let traces = attention_traces(&params, &batch).unwrap();
    assert_eq!(traces[0].a_t, vec![vec![1.0]]);
}

#[test]
fn eval_forward_is_deterministic_and_training_uses_dropout() {
    let (flows, graph) = toy(6, 60);
    let cfg = ModelConfig { dropout: 0.5, ..config(16, 2, 4, 1) };
    let params = ModelParams::init(&cfg, &mut Rng::new(2)).unwrap();
    let batch = batch_of(&flows, &graph, &cfg, 4);
    assert_eq!(predict_raw(&params, &batch).unwrap(), predict_raw(&params, &batch).unwrap());
    let run = |training: bool, seed: u64| {
        let mut tape = Tape::new();
        let pass = forward(&mut tape, &params, &batch, training, &mut Rng::new(seed)).unwrap();
        tape.value(pass.prediction).to_vec()
    };
    assert_eq!(run(false, 1), run(false, 2));
    assert_ne!(run(true, 1), run(true, 2));
}

#[test]
fn full_model_gradcheck() {
    let (flows, graph) = toy(5, 40);
    for mode in [SgMode::Message, SgMode::Recurrence, SgMode::Off] {
        let cfg = ModelConfig { sg_mode: mode, ..config(8, 2, 4, 1) };
        let params = ModelParams::init(&cfg, &mut Rng::new(4)).unwrap();
        let batch = batch_of(&flows, &graph, &cfg, 1);
        let report = model_gradcheck(&cfg, &params.tensors, &batch, 1.0, false).unwrap();
        assert!(report.passes(1e-4), "{mode}: {report:?}");
        let broken = model_gradcheck(&cfg, &params.tensors, &batch, 1.0, true).unwrap();
        assert!(!broken.passes(1e-4));
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = config(8, 2, 4, 2);
    let params = ModelParams::init(&cfg, &mut Rng::new(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    params.save(&path).unwrap();
    let back = ModelParams::load(&path).unwrap();
    assert_eq!(back.names, params.names);
    for (a, b) in back.tensors.iter().zip(&params.tensors) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.config, params.config);
}
