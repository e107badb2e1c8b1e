use super::matrix::Real;
use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// First moments, one buffer per layer: weights (row-major) then biases.
    pub m: Vec<Vec<T>>,
    /// Second moments, same layout as `m`.
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(mlp: &Mlp<T>, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = mlp
            .layers()
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .collect();
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            v: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> AdamState<U> {
        let conv = |b: &Vec<Vec<T>>| -> Vec<Vec<U>> {
            b.iter().map(|l| l.iter().map(|v| U::lit(v.f64())).collect()).collect()
        };
        AdamState {
            config: self.config,
            step: self.step,
            m: conv(&self.m),
            v: conv(&self.v),
        }
    }

    /// Applies one update to `mlp` in place.
    ///
    /// Gradients are checked before anything is touched, so a divergence error
    /// leaves both the parameters and the moments unchanged.
    pub fn step(&mut self, mlp: &mut Mlp<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.weights.len() != mlp.layers().len() || self.m.len() != mlp.layers().len() {
            return Err(Error::Shape("optimizer state does not match the network".into()));
        }
        for (l, layer) in mlp.layers().iter().enumerate() {
            let n = layer.weight.as_slice().len() + layer.bias.len();
            if grads.weights[l].as_slice().len() + grads.biases[l].len() != n || self.m[l].len() != n {
                return Err(Error::Shape(format!("gradient shape mismatch in layer {l}")));
            }
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::Divergence { layer });
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(c.eps);

        for (l, layer) in mlp.layers_raw_mut().iter_mut().enumerate() {
            let nw = layer.weight.as_slice().len();
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            let params = layer
                .weight
                .as_mut_slice()
                .iter_mut()
                .chain(layer.bias.iter_mut());
            let gs = grads.weights[l].as_slice().iter().chain(grads.biases[l].iter());
            for (j, (p, &g)) in params.zip(gs).enumerate() {
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let denom = v[j].sqrt() * inv_sqrt_bc2 + eps;
                *p = *p - step_size * m[j] / denom;
            }
            debug_assert_eq!(m.len(), nw + layer.bias.len());
        }
        mlp.bump_version();
        Ok(())
    }
}
