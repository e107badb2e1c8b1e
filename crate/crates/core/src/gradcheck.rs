//! Central finite-difference checks for network gradients and Jacobians.
//!
//! Derivatives use the five-point central stencil
//! `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`. The plain two-point
//! rule at `h = 1e-5` leaves a truncation error near 1e-4 on networks with a
//! first-layer frequency of 30.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
//! with `floor` guarding entries whose true value is zero.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::losses::{det3, total_loss};
use crate::networks::{tmn_input, SanModel, TmnModel};
use crate::nn::{Activation, Layer, Matrix, Mlp};

/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub n_checked: usize,
}

impl CheckReport {
    fn push(&mut self, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        if !(e <= self.max_rel_err) {
            self.max_rel_err = e;
        }
        self.n_checked += 1;
    }

    pub fn merge(&mut self, other: CheckReport) {
        if !(other.max_rel_err <= self.max_rel_err) {
            self.max_rel_err = other.max_rel_err;
        }
        self.n_checked += other.n_checked;
    }
}

/// Five-point central difference of `f` around `v0`.
pub fn central_diff<F: FnMut(f64) -> f64>(v0: f64, h: f64, mut f: F) -> f64 {
    let (p2, p1, m1, m2) = (f(v0 + 2.0 * h), f(v0 + h), f(v0 - h), f(v0 - 2.0 * h));
    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
}

/// Parameter address: layer, flat index into `W` then `b`.
fn param_slot(mlp: &mut Mlp<f64>, layer: usize, idx: usize) -> &mut f64 {
    let l = &mut mlp.layers_mut()[layer];
    let nw = l.weight.as_slice().len();
    if idx < nw {
        &mut l.weight.as_mut_slice()[idx]
    } else {
        &mut l.bias[idx - nw]
    }
}

fn sampled_params<R: Rng>(mlp: &Mlp<f64>, per_layer: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (l, layer) in mlp.layers().iter().enumerate() {
        let n = layer.weight.as_slice().len() + layer.bias.len();
        if n <= per_layer {
            out.extend((0..n).map(|i| (l, i)));
        } else {
            out.extend(sample(rng, n, per_layer).into_iter().map(|i| (l, i)));
        }
    }
    out
}

/// Scalar probe `sum c * out + sum_k d_k * tangent_k`.
fn probe(mlp: &Mlp<f64>, x: &Matrix<f64>, cols: &[usize], c: &Matrix<f64>, d: &[Matrix<f64>]) -> f64 {
    let (out, tans, _) = mlp.forward_with_tangents(x, cols).expect("forward");
    let mut s: f64 = out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum();
    for (t, dk) in tans.iter().zip(d) {
        s += t.as_slice().iter().zip(dk.as_slice()).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

/// Checks [`Mlp::backward`] on the probe above, for a sample of parameters
/// per layer and every input entry. `d` empty checks plain reverse mode.
pub fn check_backward<R: Rng>(
    mlp: &Mlp<f64>,
    x: &Matrix<f64>,
    cols: &[usize],
    c: &Matrix<f64>,
    d: &[Matrix<f64>],
    h: f64,
    per_layer: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let (_, _, tape) = mlp.forward_with_tangents(x, cols)?;
    let grads = mlp.backward(&tape, c, d, true)?;
    let mut rep = CheckReport::default();
    let mut net = mlp.clone();
    for (l, idx) in sampled_params(mlp, per_layer, rng) {
        let v0 = *param_slot(&mut net, l, idx);
        let numeric = central_diff(v0, h, |v| {
            *param_slot(&mut net, l, idx) = v;
            probe(&net, x, cols, c, d)
        });
        *param_slot(&mut net, l, idx) = v0;
        let nw = grads.weights[l].as_slice().len();
        let a = if idx < nw {
            grads.weights[l].as_slice()[idx]
        } else {
            grads.biases[l][idx - nw]
        };
        rep.push(a, numeric);
    }
    let gx = grads.input.expect("input gradient");
    let mut xp = x.clone();
    for i in 0..x.as_slice().len() {
        let v0 = x.as_slice()[i];
        let numeric = central_diff(v0, h, |v| {
            xp.as_mut_slice()[i] = v;
            probe(mlp, &xp, cols, c, d)
        });
        xp.as_mut_slice()[i] = v0;
        rep.push(gx.as_slice()[i], numeric);
    }
    Ok(rep)
}

/// Checks [`Mlp::input_jacobian`] for the listed input columns.
pub fn check_input_jacobian(mlp: &Mlp<f64>, x: &Matrix<f64>, cols: &[usize], h: f64) -> Result<CheckReport> {
    let jac = mlp.input_jacobian(x, cols)?;
    let mut rep = CheckReport::default();
    for (k, &col) in cols.iter().enumerate() {
        let d = stencil_columns(x, col, h, |xs| mlp.predict(xs))?;
        for i in 0..x.rows() {
            for o in 0..mlp.out_dim() {
                rep.push(jac.get(i, o, k), d.get(i, o));
            }
        }
    }
    Ok(rep)
}

/// Five-point derivative of a batched map with respect to input column `col`.
fn stencil_columns<F>(x: &Matrix<f64>, col: usize, h: f64, f: F) -> Result<Matrix<f64>>
where
    F: Fn(&Matrix<f64>) -> Result<Matrix<f64>>,
{
    let shifted = |k: f64| -> Result<Matrix<f64>> {
        let mut xs = x.clone();
        for i in 0..x.rows() {
            xs.set(i, col, x.get(i, col) + k * h);
        }
        f(&xs)
    };
    let (p2, p1, m1, m2) = (shifted(2.0)?, shifted(1.0)?, shifted(-1.0)?, shifted(-2.0)?);
    let data = (0..p1.as_slice().len())
        .map(|i| {
            (-p2.as_slice()[i] + 8.0 * p1.as_slice()[i] - 8.0 * m1.as_slice()[i] + m2.as_slice()[i]) / (12.0 * h)
        })
        .collect();
    Ok(Matrix::from_vec(p1.rows(), p1.cols(), data))
}

/// Volume penalty evaluated from a central-difference Jacobian.
pub fn fd_jacdet_penalty(tmn: &TmnModel<f64>, x: &Matrix<f64>, s: f64, h: f64) -> Result<f64> {
    let n = x.rows();
    let states = vec![s; n];
    let cols = (0..3)
        .map(|k| stencil_columns(x, k, h, |xs| tmn.mlp.predict(&tmn_input(xs, &states)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for i in 0..n {
        let mut a = [0.0; 9];
        for o in 0..3 {
            for (k, d) in cols.iter().enumerate() {
                a[o * 3 + k] = d.get(i, o) + if o == k { 1.0 } else { 0.0 };
            }
        }
        total += (1.0 - det3(&a)).abs();
    }
    Ok(total / n as f64)
}

/// Checks the gradients of the total loss for both networks.
#[allow(clippy::too_many_arguments)]
pub fn check_total_loss<R: Rng>(
    tmn: &TmnModel<f64>,
    san: &SanModel<f64>,
    x: &Matrix<f64>,
    s: f64,
    gt: &[f64],
    lambda: f64,
    h: f64,
    per_layer: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let (_, g) = total_loss(tmn, san, x, s, gt, lambda)?;
    let loss = |t: &TmnModel<f64>, a: &SanModel<f64>| total_loss(t, a, x, s, gt, lambda).expect("loss").0.l_total;
    let mut rep = CheckReport::default();

    let mut t = tmn.clone();
    for (l, idx) in sampled_params(&tmn.mlp, per_layer, rng) {
        let v0 = *param_slot(&mut t.mlp, l, idx);
        let numeric = central_diff(v0, h, |v| {
            *param_slot(&mut t.mlp, l, idx) = v;
            loss(&t, san)
        });
        *param_slot(&mut t.mlp, l, idx) = v0;
        let nw = g.tmn.weights[l].as_slice().len();
        let a = if idx < nw { g.tmn.weights[l].as_slice()[idx] } else { g.tmn.biases[l][idx - nw] };
        rep.push(a, numeric);
    }
    let mut a_net = san.clone();
    for (l, idx) in sampled_params(&san.mlp, per_layer, rng) {
        let v0 = *param_slot(&mut a_net.mlp, l, idx);
        let numeric = central_diff(v0, h, |v| {
            *param_slot(&mut a_net.mlp, l, idx) = v;
            loss(tmn, &a_net)
        });
        *param_slot(&mut a_net.mlp, l, idx) = v0;
        let nw = g.san.weights[l].as_slice().len();
        let a = if idx < nw { g.san.weights[l].as_slice()[idx] } else { g.san.biases[l][idx - nw] };
        rep.push(a, numeric);
    }
    Ok(rep)
}

pub const ALL_ACTIVATIONS: [Activation; 4] =
    [Activation::Sine, Activation::Linear, Activation::Sigmoid, Activation::Tanhshrink];

/// Random network with arbitrary activations, frequencies, biases and
/// optional skips on square layers.
pub fn random_mlp<R: Rng>(rng: &mut R, dims: &[usize]) -> Mlp<f64> {
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|l| {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let omega = if l == 0 { rng.gen_range(1.0..30.0) } else { rng.gen_range(0.5..2.0) };
            let bound = if l == 0 { 1.0 / fi as f64 } else { (6.0 / fi as f64).sqrt() / omega };
            Layer {
                weight: Matrix::from_vec(fo, fi, (0..fi * fo).map(|_| rng.gen_range(-bound..bound)).collect()),
                bias: (0..fo).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                omega,
                activation: ALL_ACTIVATIONS[rng.gen_range(0..4)],
                residual: l > 0 && fi == fo && rng.gen_bool(0.3),
            }
        })
        .collect();
    Mlp::from_layers(layers).expect("valid random network")
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
}
