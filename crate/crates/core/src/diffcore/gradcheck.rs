use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Magnitude below which a gradient entry is judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst entry found by [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Which tensor and which flat entry produced `max_rel_error`.
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` gradients against central differences of `f`.
///
/// Every entry of every tensor in `params` is nudged by `±eps` in place and
/// restored afterwards. `analytic[i]` must hold one value per entry of
/// `params[i]`.
pub fn finite_diff_check<F>(mut f: F, params: &mut [Tensor], analytic: &[Vec<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {eps}")));
    }
    if analytic.len() != params.len() || analytic.iter().zip(params.iter()).any(|(g, p)| g.len() != p.len()) {
        return Err(Error::shape("finite_diff_check", "analytic gradients do not mirror the parameters"));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tensor: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for t in 0..params.len() {
        for i in 0..params[t].len() {
            let orig = params[t].data()[i];
            params[t].data_mut()[i] = orig + eps;
            let plus = f(params);
            params[t].data_mut()[i] = orig - eps;
            let minus = f(params);
            params[t].data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective at tensor {t} entry {i}")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[t][i], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report = GradCheckReport {
                    max_rel_error: err,
                    tensor: t,
                    index: i,
                    analytic: analytic[t][i],
                    numeric,
                    entries_checked: report.entries_checked,
                };
            }
        }
    }
    Ok(report)
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_in(-1.5, 1.5)).collect()).expect("sized")
}

type Objective = fn(&mut Tape<'_>, &[Var], &[f64]) -> Result<Var>;

/// Small compositions covering every differentiable op, each reduced to a
/// scalar. Operands: `x: 3×4`, `w: 5×4`, `b: [5]`, `s: 3×1`.
const OP_CASES: &[(&str, Objective)] = &[
    ("matmul", |t, v, _| {
        let x = t.matmul_t(v[0], v[1])?;
        let y = t.matmul(x, v[1])?;
        let y = t.tanh(y)?;
        t.sum(y)
    }),
    ("add_sub_mul", |t, v, _| {
        let p = t.mul(v[0], v[0])?;
        let q = t.sub(p, v[0])?;
        let r = t.add(q, v[0])?;
        let r = t.mul(r, v[0])?;
        t.sum(r)
    }),
    ("sigmoid", |t, v, _| {
        let x = t.sigmoid(v[0])?;
        let x = t.mul(x, v[0])?;
        t.sum(x)
    }),
    ("tanh", |t, v, _| {
        let x = t.tanh(v[0])?;
        let x = t.mul(x, x)?;
        t.sum(x)
    }),
    ("relu", |t, v, _| {
        let x = t.relu(v[0])?;
        let x = t.mul(x, v[0])?;
        t.sum(x)
    }),
    ("scale", |t, v, _| {
        let x = t.scale(v[0], -2.5)?;
        let x = t.mul(x, v[0])?;
        t.mean(x)
    }),
    ("linear", |t, v, _| {
        let x = t.linear(v[0], v[1], Some(v[2]))?;
        let x = t.tanh(x)?;
        t.sum(x)
    }),
    ("concat", |t, v, _| {
        let x = t.concat(v[0], v[0], 1)?;
        let y = t.concat(x, x, 0)?;
        let y = t.tanh(y)?;
        let y = t.mul(y, y)?;
        t.sum(y)
    }),
    ("scale_rows", |t, v, _| {
        let x = t.scale_rows(v[0], v[3])?;
        let d = t.row_dot(x, v[0])?;
        let d = t.tanh(d)?;
        t.sum(d)
    }),
    ("column", |t, v, _| {
        let c = t.column(v[0], 2)?;
        let c = t.mul(c, c)?;
        t.sum(c)
    }),
    ("softmax", |t, v, _| {
        let p = t.softmax(v[0])?;
        let q = t.mul(p, v[0])?;
        t.sum(q)
    }),
    ("normalize_rows", |t, v, _| {
        let e = t.sigmoid(v[0])?;
        let p = t.normalize_rows(e)?;
        let q = t.mul(p, v[0])?;
        t.sum(q)
    }),
    ("dropout", |t, v, _| {
        let mut mask = Rng::new(77);
        let d = t.dropout(v[0], 0.3, true, &mut mask)?;
        let q = t.mul(d, v[0])?;
        t.sum(q)
    }),
    ("smooth_l1", |t, v, y| {
        let x = t.linear(v[0], v[1], Some(v[2]))?;
        t.smooth_l1(x, y, 1.0, false)
    }),
];

/// Runs the finite-difference check on every op composition.
pub fn op_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = Rng::new(seed);
    let operands = vec![
        random_tensor(&mut rng, &[3, 4]),
        random_tensor(&mut rng, &[5, 4]),
        random_tensor(&mut rng, &[5]),
        random_tensor(&mut rng, &[3, 1]),
    ];
    let target: Vec<f64> = (0..15).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
    let mut out = Vec::with_capacity(OP_CASES.len() + 1);
    for &(name, build) in OP_CASES {
        let run = |p: &[Tensor]| -> Result<(f64, Vec<Vec<f64>>)> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = p.iter().map(|t| tape.leaf(t)).collect();
            let loss = build(&mut tape, &vars, &target)?;
            let g = tape.backward(loss)?;
            Ok((tape.scalar(loss), vars.iter().map(|&v| g.wrt(v)).collect()))
        };
        let mut params = operands.clone();
        let (_, analytic) = run(&params)?;
        let report = finite_diff_check(|p| Ok(run(p)?.0), &mut params, &analytic, DEFAULT_EPS)?;
        out.push((name.to_string(), report));
    }
    // the stopped branch is held at its unperturbed value for the numeric side
    let x = operands[0].clone();
    let analytic = {
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let t = tape.tanh(v)?;
        let s = tape.stop_gradient(t)?;
        let q = tape.mul(s, v)?;
        let loss = tape.sum(q)?;
        vec![tape.backward(loss)?.wrt(v)]
    };
    let frozen = x.clone();
    let mut params = vec![x];
    let report = finite_diff_check(
        |p| {
            let mut tape = Tape::new();
            let c = tape.constant(frozen.clone());
            let t = tape.tanh(c)?;
            let v = tape.leaf(&p[0]);
            let q = tape.mul(t, v)?;
            let loss = tape.sum(q)?;
            Ok(tape.scalar(loss))
        },
        &mut params,
        &analytic,
        DEFAULT_EPS,
    )?;
    out.push(("stop_gradient".to_string(), report));
    Ok(out)
}
