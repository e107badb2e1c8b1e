//! L1 photometric term plus the Jacobian-determinant volume penalty.
//!
//! The penalty acts on the full map `x + phi(x, s)`, so each point
//! contributes `|1 - det(I + d phi / dx)|`. Its gradient reaches the motion
//! network through the forward-mode tangents recorded on the tape.

use crate::error::{Error, Result};
use crate::networks::{tmn_input, warp, CoordBatch, SanModel, TmnModel};
use crate::nn::{Gradients, Matrix, Real};

/// Default weight of the volume penalty.
pub const DEFAULT_LAMBDA: f64 = 0.05;

const SPATIAL: [usize; 3] = [0, 1, 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_photo: f64,
    pub l_jacdet: f64,
    pub l_total: f64,
    pub lambda: f64,
    pub n_points: usize,
}

impl LossReport {
    pub fn new(l_photo: f64, l_jacdet: f64, lambda: f64, n_points: usize) -> Self {
        LossReport {
            l_photo,
            l_jacdet,
            l_total: l_photo + lambda * l_jacdet,
            lambda,
            n_points,
        }
    }

    pub const CSV_HEADER: &'static str = "step,l_photo,l_jacdet,l_total,lambda,wall_ms";

    pub fn csv_row(&self, step: usize, wall_ms: f64) -> String {
        format!(
            "{step},{:e},{:e},{:e},{},{wall_ms:.3}",
            self.l_photo, self.l_jacdet, self.l_total, self.lambda
        )
    }
}

/// Gradients of the total loss for both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients<T> {
    pub tmn: Gradients<T>,
    pub san: Gradients<T>,
}

/// `(1/N) sum |pred - gt|`.
pub fn photometric_l1<T: Real>(pred: &[T], gt: &[T]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    let s: f64 = pred.iter().zip(gt).map(|(p, g)| (p.f64() - g.f64()).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Determinant of a row-major 3x3 matrix.
pub fn det3(a: &[f64; 9]) -> f64 {
    a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) + a[2] * (a[3] * a[7] - a[4] * a[6])
}

/// Cofactor matrix, i.e. `d det / d a`.
fn cofactor3(a: &[f64; 9]) -> [f64; 9] {
    [
        a[4] * a[8] - a[5] * a[7],
        a[5] * a[6] - a[3] * a[8],
        a[3] * a[7] - a[4] * a[6],
        a[2] * a[7] - a[1] * a[8],
        a[0] * a[8] - a[2] * a[6],
        a[1] * a[6] - a[0] * a[7],
        a[1] * a[5] - a[2] * a[4],
        a[2] * a[3] - a[0] * a[5],
        a[0] * a[4] - a[1] * a[3],
    ]
}

/// `I + d phi / dx` at point `i`, from the three spatial output tangents.
fn transform_jacobian<T: Real>(tans: &[Matrix<T>], i: usize) -> [f64; 9] {
    let mut a = [0.0; 9];
    for o in 0..3 {
        for k in 0..3 {
            a[o * 3 + k] = tans[k].get(i, o).f64() + if o == k { 1.0 } else { 0.0 };
        }
    }
    a
}

/// `det(I + d phi / dx)` at every point.
pub fn jacobian_determinants<T: Real>(tmn: &TmnModel<T>, x: &CoordBatch<T>, s_tilde: f64) -> Result<Vec<f64>> {
    let states = vec![T::lit(s_tilde); x.rows()];
    let (_, tans, _) = tmn.mlp.forward_with_tangents(&tmn_input(x, &states)?, &SPATIAL)?;
    Ok((0..x.rows()).map(|i| det3(&transform_jacobian(&tans, i))).collect())
}

/// `(1/N) sum |1 - det(I + d phi / dx)|`.
pub fn jacdet_penalty<T: Real>(tmn: &TmnModel<T>, x: &CoordBatch<T>, s_tilde: f64) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let dets = jacobian_determinants(tmn, x, s_tilde)?;
    Ok(dets.iter().map(|d| (1.0 - d).abs()).sum::<f64>() / dets.len() as f64)
}

/// Loss and gradients for one batch observed at a single breathing state.
pub fn total_loss<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    x: &CoordBatch<T>,
    s_tilde: f64,
    gt: &[T],
    lambda: f64,
) -> Result<(LossReport, LossGradients<T>)> {
    let states = vec![T::lit(s_tilde); x.rows()];
    total_loss_states(tmn, san, x, &states, gt, lambda)
}

/// As [`total_loss`] with one state per point.
pub fn total_loss_states<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    x: &CoordBatch<T>,
    states: &[T],
    gt: &[T],
    lambda: f64,
) -> Result<(LossReport, LossGradients<T>)> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if gt.len() != n {
        return Err(Error::Shape(format!("{} targets for {} points", gt.len(), n)));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let inv_n = 1.0 / n as f64;

    let (phi, tans, tmn_tape) = tmn.mlp.forward_with_tangents(&tmn_input(x, states)?, &SPATIAL)?;
    let x_ref = warp(x, &phi)?;
    let (pred, san_tape) = san.mlp.forward(&x_ref)?;

    let mut l_photo = 0.0;
    let mut g_pred = Matrix::zeros(n, 1);
    for i in 0..n {
        let r = pred.get(i, 0).f64() - gt[i].f64();
        l_photo += r.abs();
        g_pred.set(i, 0, T::lit(sign(r) * inv_n));
    }
    l_photo *= inv_n;

    let san_grads = san.mlp.backward(&san_tape, &g_pred, &[], true)?;
    let g_phi = san_grads.input.clone().expect("input gradient requested");

    let mut l_jacdet = 0.0;
    let mut g_tans: Vec<Matrix<T>> = Vec::new();
    if lambda > 0.0 {
        g_tans = (0..3).map(|_| Matrix::zeros(n, 3)).collect();
    }
    for i in 0..n {
        let a = transform_jacobian(&tans, i);
        let r = 1.0 - det3(&a);
        l_jacdet += r.abs();
        if lambda > 0.0 {
            let c = cofactor3(&a);
            let scale = -sign(r) * lambda * inv_n;
            for o in 0..3 {
                for k in 0..3 {
                    g_tans[k].set(i, o, T::lit(scale * c[o * 3 + k]));
                }
            }
        }
    }
    l_jacdet *= inv_n;

    // phi enters the photometric term only through x_ref = x + phi
    let tmn_grads = tmn.mlp.backward(&tmn_tape, &g_phi, &g_tans, false)?;

    let report = LossReport::new(l_photo, l_jacdet, lambda, n);
    let mut san = san_grads;
    san.input = None;
    Ok((report, LossGradients { tmn: tmn_grads, san }))
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::NetShape;
    use crate::nn::{Activation, Layer, Mlp};

    /// A one-layer motion network computing `phi = scale * x` exactly.
    fn linear_tmn(scale: f64, shift: [f64; 3]) -> TmnModel<f64> {
        let mut w = Matrix::zeros(3, 4);
        for i in 0..3 {
            w.set(i, i, scale);
        }
        TmnModel::from_mlp(
            Mlp::from_layers(vec![Layer {
                weight: w,
                bias: shift.to_vec(),
                omega: 1.0,
                activation: Activation::Linear,
                residual: false,
            }])
            .unwrap(),
        )
        .unwrap()
    }

    fn grid(n: usize) -> Matrix<f64> {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                vec![2.0 * t - 1.0, (7.0 * t).sin(), (3.0 * t).cos() * 0.8]
            })
            .collect();
        Matrix::from_rows(&rows)
    }

    #[test]
    fn photometric_closed_forms() {
        assert_eq!(photometric_l1(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!((photometric_l1(&[0.2, 0.8], &[0.5, 0.5]).unwrap() - 0.3).abs() < 1e-15);
        let gt = [0.1, 0.5, 0.7];
        let pred: Vec<f64> = gt.iter().map(|g| g + 0.1).collect();
        assert!((photometric_l1(&pred, &gt).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(photometric_l1::<f64>(&[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn penalty_closed_forms() {
        let x = grid(50);
        assert_eq!(jacdet_penalty(&linear_tmn(0.0, [0.0; 3]), &x, 0.3).unwrap(), 0.0);
        let p = jacdet_penalty(&linear_tmn(0.1, [0.0; 3]), &x, 0.3).unwrap();
        assert!((p - 0.331).abs() < 1e-9, "{p}");
        // rigid translation
        let p = jacdet_penalty(&linear_tmn(0.0, [0.2, -0.1, 0.05]), &x, -0.5).unwrap();
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn penalty_ignores_point_order() {
        let tmn = TmnModel::new(
            NetShape {
                width: 16,
                depth: 3,
                omega0: 30.0,
                omega_hidden: 1.0,
            },
            3,
        )
        .unwrap();
        let x = grid(40);
        let mut rows: Vec<Vec<f64>> = (0..40).map(|i| x.row(i).to_vec()).collect();
        rows.reverse();
        rows.swap(3, 17);
        let a = jacdet_penalty(&tmn, &x, 0.1).unwrap();
        let b = jacdet_penalty(&tmn, &Matrix::from_rows(&rows), 0.1).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn lambda_zero_and_perfect_fit() {
        let shape = NetShape {
            width: 8,
            depth: 4,
            omega0: 30.0,
            omega_hidden: 1.0,
        };
        let tmn = TmnModel::new(shape, 0).unwrap();
        let san = SanModel::new(shape, 1).unwrap();
        let x = grid(20);
        let gt = vec![0.4; 20];
        let (r, _) = total_loss(&tmn, &san, &x, 0.0, &gt, 0.0).unwrap();
        assert_eq!(r.l_total, r.l_photo);

        let zero = linear_tmn(0.0, [0.0; 3]);
        let pred = san.intensity(&x).unwrap();
        let (r, g) = total_loss(&zero, &san, &x, 0.5, &pred, 0.05).unwrap();
        assert_eq!(r.l_total, 0.0);
        assert!(g.san.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_row_layout() {
        let r = LossReport::new(0.5, 0.25, 0.05, 10);
        assert_eq!(r.l_total, 0.5 + 0.05 * 0.25);
        let row = r.csv_row(3, 1.5);
        assert_eq!(row.split(',').count(), LossReport::CSV_HEADER.split(',').count());
        assert!(row.starts_with("3,"));
    }
}
