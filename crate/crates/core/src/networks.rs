//! The motion and anatomy networks and their composition.
//!
//! The motion network maps `(x, y, z, s)` to a displacement that carries a
//! point observed at breathing state `s` back into the canonical frame. Its
//! SIREN output passes through `z - tanh(z)`, which flattens small outputs
//! cubically and so damps spurious motion in static regions. The anatomy
//! network maps canonical coordinates to intensity through sine layers with a
//! skip connection around the fourth layer and a sigmoid output.
//!
//! Displacements are in normalized coordinate units throughout training.

use crate::error::{Error, Result};
use crate::nn::{init_siren, Activation, Matrix, Mlp, Real};

/// `n x 3` batch of coordinates in normalized `[-1, 1]^3` space.
pub type CoordBatch<T> = Matrix<T>;

/// One-based index of the anatomy network layer that carries the skip.
pub const SAN_RESIDUAL_LAYER: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TmnModel<T: Real> {
    pub mlp: Mlp<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanModel<T: Real> {
    pub mlp: Mlp<T>,
}

/// Width, hidden depth and frequencies of one network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetShape {
    pub width: usize,
    pub depth: usize,
    pub omega0: f64,
    pub omega_hidden: f64,
}

impl TmnModel<f64> {
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        TmnModel::<f64>::new_in(shape, seed)
    }
}

impl<T: Real> TmnModel<T> {
    /// `[4, width x depth, 3]` SIREN with a tanhshrink output.
    pub fn new_in(shape: NetShape, seed: u64) -> Result<Self> {
        let mut dims = vec![4];
        dims.extend(std::iter::repeat_n(shape.width, shape.depth));
        dims.push(3);
        let mut mlp = init_siren(&dims, shape.omega0, shape.omega_hidden, seed)?;
        mlp.set_output_activation(Activation::Tanhshrink);
        Ok(TmnModel { mlp })
    }

    pub fn from_mlp(mlp: Mlp<T>) -> Result<Self> {
        if mlp.in_dim() != 4 || mlp.out_dim() != 3 {
            return Err(Error::InvalidArchitecture(format!(
                "motion network must map 4 -> 3, got {:?}",
                mlp.dims()
            )));
        }
        Ok(TmnModel { mlp })
    }

    pub fn cast<U: Real>(&self) -> TmnModel<U> {
        TmnModel { mlp: self.mlp.cast() }
    }

    /// Displacement at every point for one breathing state in `[-1, 1]`.
    pub fn displacement(&self, x: &CoordBatch<T>, s_tilde: f64) -> Result<Matrix<T>> {
        check_state(s_tilde)?;
        self.displacement_unchecked(x, s_tilde)
    }

    /// As [`TmnModel::displacement`] without the state range check.
    pub fn displacement_unchecked(&self, x: &CoordBatch<T>, s_tilde: f64) -> Result<Matrix<T>> {
        let states = vec![T::lit(s_tilde); x.rows()];
        self.mlp.predict(&tmn_input(x, &states)?)
    }
}

pub(crate) fn check_state(s: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::StateOutOfRange(s))
    }
}

/// Concatenates coordinates with their per-point state into an `n x 4` batch.
pub fn tmn_input<T: Real>(x: &CoordBatch<T>, states: &[T]) -> Result<Matrix<T>> {
    if x.cols() != 3 || states.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{}x{} coordinates with {} states",
            x.rows(),
            x.cols(),
            states.len()
        )));
    }
    let mut m = Matrix::zeros(x.rows(), 4);
    for i in 0..x.rows() {
        let r = m.row_mut(i);
        r[..3].copy_from_slice(x.row(i));
        r[3] = states[i];
    }
    Ok(m)
}

/// `x_ref = x + phi`, unclamped.
pub fn warp<T: Real>(x: &CoordBatch<T>, phi: &Matrix<T>) -> Result<CoordBatch<T>> {
    if x.rows() != phi.rows() || x.cols() != phi.cols() {
        return Err(Error::Shape(format!(
            "cannot warp {}x{} coordinates by {}x{} displacements",
            x.rows(),
            x.cols(),
            phi.rows(),
            phi.cols()
        )));
    }
    let data = x.as_slice().iter().zip(phi.as_slice()).map(|(a, b)| *a + *b).collect();
    Ok(Matrix::from_vec(x.rows(), x.cols(), data))
}

impl SanModel<f64> {
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        SanModel::<f64>::new_in(shape, seed)
    }
}

impl<T: Real> SanModel<T> {
    /// `[3, width x depth, 1]` SIREN, sigmoid output, skip around layer 4
    /// when the network is at least that deep.
    pub fn new_in(shape: NetShape, seed: u64) -> Result<Self> {
        let mut dims = vec![3];
        dims.extend(std::iter::repeat_n(shape.width, shape.depth));
        dims.push(1);
        let mut mlp = init_siren(&dims, shape.omega0, shape.omega_hidden, seed)?;
        mlp.set_output_activation(Activation::Sigmoid);
        if shape.depth >= SAN_RESIDUAL_LAYER {
            mlp.set_residual(SAN_RESIDUAL_LAYER - 1)?;
        }
        Ok(SanModel { mlp })
    }

    pub fn from_mlp(mlp: Mlp<T>) -> Result<Self> {
        if mlp.in_dim() != 3 || mlp.out_dim() != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "anatomy network must map 3 -> 1, got {:?}",
                mlp.dims()
            )));
        }
        Ok(SanModel { mlp })
    }

    pub fn cast<U: Real>(&self) -> SanModel<U> {
        SanModel { mlp: self.mlp.cast() }
    }

    /// Intensity in `(0, 1)` at canonical-frame coordinates.
    pub fn intensity(&self, x_ref: &CoordBatch<T>) -> Result<Vec<T>> {
        Ok(self.mlp.predict(x_ref)?.into_vec())
    }
}

/// `f_SAN(x + f_TMN(x, s))`.
pub fn predict_intensity<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    x: &CoordBatch<T>,
    s_tilde: f64,
) -> Result<Vec<T>> {
    let phi = tmn.displacement(x, s_tilde)?;
    san.intensity(&warp(x, &phi)?)
}

/// As [`predict_intensity`] but accepts states outside `[-1, 1]`.
pub fn predict_intensity_unchecked<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    x: &CoordBatch<T>,
    s_tilde: f64,
) -> Result<Vec<T>> {
    let phi = tmn.displacement_unchecked(x, s_tilde)?;
    san.intensity(&warp(x, &phi)?)
}
