use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{Matrix, Real};
use crate::error::{Error, Result};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

/// Elementwise activation applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sine,
    Linear,
    Sigmoid,
    /// `z - tanh(z)`, applied to a linear output layer.
    Tanhshrink,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Sine => "sine",
            Activation::Linear => "linear",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanhshrink => "tanhshrink",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "sine" => Activation::Sine,
            "linear" => Activation::Linear,
            "sigmoid" => Activation::Sigmoid,
            "tanhshrink" => Activation::Tanhshrink,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Sine => z.sin_act(),
            Activation::Linear => z,
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanhshrink => z - z.tanh(),
        }
    }

    /// First and second derivative at `z`.
    #[inline]
    fn derivatives<T: Real>(self, z: T) -> (T, T) {
        match self {
            Activation::Sine => {
                let (s, c) = z.sin_cos_act();
                (c, -s)
            }
            Activation::Linear => (T::one(), T::zero()),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                let d = s * (T::one() - s);
                (d, d * (T::one() - s - s))
            }
            Activation::Tanhshrink => {
                let t = z.tanh();
                let sech2 = T::one() - t * t;
                (t * t, (t + t) * sech2)
            }
        }
    }

    #[inline]
    fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Sine => z.sin_cos_act().1,
            Activation::Linear => T::one(),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Activation::Tanhshrink => {
                let t = z.tanh();
                t * t
            }
        }
    }
}

impl Activation {
    /// `a = act(z)` and, when requested, `d1 = act'(z)`, elementwise.
    fn apply_slice<T: Real>(self, z: &[T], a: &mut [T], d1: Option<&mut [T]>) {
        match (self, d1) {
            (Activation::Sine, None) => {
                for (o, &x) in a.iter_mut().zip(z) {
                    *o = x.sin_act();
                }
            }
            (Activation::Sine, Some(d)) => {
                for ((o, dd), &x) in a.iter_mut().zip(d.iter_mut()).zip(z) {
                    let (s, c) = x.sin_cos_act();
                    *o = s;
                    *dd = c;
                }
            }
            (act, d) => {
                for (o, &x) in a.iter_mut().zip(z) {
                    *o = act.apply(x);
                }
                if let Some(d) = d {
                    act.derivative_slice(z, d);
                }
            }
        }
    }

    fn derivative_slice<T: Real>(self, z: &[T], d1: &mut [T]) {
        match self {
            Activation::Sine => {
                for (o, &x) in d1.iter_mut().zip(z) {
                    *o = x.sin_cos_act().1;
                }
            }
            act => {
                for (o, &x) in d1.iter_mut().zip(z) {
                    *o = act.derivative(x);
                }
            }
        }
    }

    fn derivatives_slice<T: Real>(self, z: &[T], d1: &mut [T], d2: &mut [T]) {
        match self {
            Activation::Sine => {
                for ((a, b), &x) in d1.iter_mut().zip(d2.iter_mut()).zip(z) {
                    let (s, c) = x.sin_cos_act();
                    *a = c;
                    *b = -s;
                }
            }
            act => {
                for ((a, b), &x) in d1.iter_mut().zip(d2.iter_mut()).zip(z) {
                    (*a, *b) = act.derivatives(x);
                }
            }
        }
    }
}

/// `a = a * b` elementwise.
#[inline]
fn mul_into<T: Real>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = *x * y;
    }
}

#[inline]
fn add_into<T: Real>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = *x + y;
    }
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// One fully connected layer: `act(omega * W h + b)`, optionally plus `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `out x in`, row-major.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub omega: T,
    pub activation: Activation,
    /// Adds the layer input to its output. Requires `in == out`.
    pub residual: bool,
}

impl<T: Real> Layer<T> {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Weights, biases, frequencies and activations of a sinusoidal MLP.
#[derive(Debug)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
    id: u64,
    version: u64,
}

impl<T: Real> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Mlp {
            layers: self.layers.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

impl<T: Real> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Draws a SIREN: sine hidden layers and a linear output layer.
///
/// The first layer is drawn from `U(-1/in, 1/in)`, every later layer from
/// `U(-sqrt(6/in)/omega, sqrt(6/in)/omega)` with `omega` the hidden
/// frequency. Biases start at zero.
pub fn init_siren<T: Real>(dims: &[usize], omega0: f64, omega_hidden: f64, seed: u64) -> Result<Mlp<T>> {
    if dims.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least an input and an output width, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArchitecture(format!("zero width in {dims:?}")));
    }
    if !(omega0 > 0.0 && omega0.is_finite() && omega_hidden > 0.0 && omega_hidden.is_finite()) {
        return Err(Error::InvalidArchitecture(format!(
            "frequencies must be positive, got omega0={omega0}, omega_hidden={omega_hidden}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let bound = if l == 0 {
            1.0 / fan_in as f64
        } else {
            (6.0 / fan_in as f64).sqrt() / omega_hidden
        };
        let law = Uniform::new(-bound, bound);
        let weight = Matrix::from_vec(
            fan_out,
            fan_in,
            (0..fan_in * fan_out).map(|_| T::lit(law.sample(&mut rng))).collect(),
        );
        let last = l + 1 == n_layers;
        let omega = match (l, last) {
            (_, true) => 1.0,
            (0, false) => omega0,
            _ => omega_hidden,
        };
        layers.push(Layer {
            weight,
            bias: vec![T::zero(); fan_out],
            omega: T::lit(omega),
            activation: if last { Activation::Linear } else { Activation::Sine },
            residual: false,
        });
    }
    Mlp::from_layers(layers)
}

impl<T: Real> Mlp<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        validate(&layers)?;
        Ok(Mlp {
            layers,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access. Invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn set_output_activation(&mut self, act: Activation) {
        self.layers_mut().last_mut().expect("non-empty").activation = act;
    }

    pub fn set_residual(&mut self, layer: usize) -> Result<()> {
        let l = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidArchitecture(format!("no layer {layer}")))?;
        if layer == 0 || l.fan_in() != l.fan_out() {
            return Err(Error::InvalidArchitecture(format!(
                "residual at layer {layer} needs a square non-input layer"
            )));
        }
        self.layers_mut()[layer].residual = true;
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].fan_in()];
        d.extend(self.layers.iter().map(Layer::fan_out));
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    /// Incremented on every parameter mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub(crate) fn layers_raw_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                weight: l.weight.cast(),
                bias: l.bias.iter().map(|b| U::lit(b.f64())).collect(),
                omega: U::lit(l.omega.f64()),
                activation: l.activation,
                residual: l.residual,
            })
            .collect();
        Mlp {
            layers,
            id: fresh_id(),
            version: 0,
        }
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Evaluates the network without recording a tape.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = Matrix::zeros(h.rows(), layer.fan_out());
            affine(layer, &h, &mut z);
            let mut a = Matrix::zeros(h.rows(), layer.fan_out());
            layer.activation.apply_slice(z.as_slice(), a.as_mut_slice(), None);
            if layer.residual {
                add_into(a.as_mut_slice(), h.as_slice());
            }
            h = a;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Tape<T>)> {
        let (out, _, tape) = self.forward_with_tangents(x, &[])?;
        Ok((out, tape))
    }

    /// Forward pass that also carries the derivative of every activation with
    /// respect to the input columns listed in `tangent_cols`.
    ///
    /// Returns the output, one `n x out` tangent per listed column, and the tape.
    #[allow(clippy::type_complexity)]
    pub fn forward_with_tangents(
        &self,
        x: &Matrix<T>,
        tangent_cols: &[usize],
    ) -> Result<(Matrix<T>, Vec<Matrix<T>>, Tape<T>)> {
        self.check_input(x)?;
        if let Some(&c) = tangent_cols.iter().find(|&&c| c >= self.in_dim()) {
            return Err(Error::Shape(format!("tangent column {c} out of range")));
        }
        let n = x.rows();
        let n_tan = tangent_cols.len();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut act_tans: Vec<Vec<Matrix<T>>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_tans: Vec<Vec<Matrix<T>>> = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        act_tans.push(Vec::new());

        for (l, layer) in self.layers.iter().enumerate() {
            let h = &acts[l];
            let fan_out = layer.fan_out();
            let mut z = Matrix::zeros(n, fan_out);
            affine(layer, h, &mut z);

            let mut dz = Vec::with_capacity(n_tan);
            for (k, &col) in tangent_cols.iter().enumerate() {
                let mut t = Matrix::zeros(n, fan_out);
                if l == 0 {
                    let w = &layer.weight;
                    let coeff: Vec<T> = (0..fan_out).map(|o| layer.omega * w.get(o, col)).collect();
                    for i in 0..n {
                        t.row_mut(i).copy_from_slice(&coeff);
                    }
                } else {
                    t.gemm_nt(layer.omega, &act_tans[l][k], &layer.weight, T::zero());
                }
                dz.push(t);
            }

            let mut a = Matrix::zeros(n, fan_out);
            let mut da: Vec<Matrix<T>> = Vec::with_capacity(n_tan);
            if n_tan > 0 {
                let mut d1 = Matrix::zeros(n, fan_out);
                layer.activation.apply_slice(z.as_slice(), a.as_mut_slice(), Some(d1.as_mut_slice()));
                for t in &dz {
                    let mut d = d1.clone();
                    mul_into(d.as_mut_slice(), t.as_slice());
                    da.push(d);
                }
            } else {
                layer.activation.apply_slice(z.as_slice(), a.as_mut_slice(), None);
            }
            if layer.residual {
                add_into(a.as_mut_slice(), h.as_slice());
                for (d, dh) in da.iter_mut().zip(&act_tans[l]) {
                    add_into(d.as_mut_slice(), dh.as_slice());
                }
            }
            pres.push(z);
            pre_tans.push(dz);
            acts.push(a);
            act_tans.push(da);
        }

        let out = acts.last().expect("non-empty").clone();
        let out_tans = act_tans.last().expect("non-empty").clone();
        let tape = Tape {
            model_id: self.id,
            version: self.version,
            tangent_cols: tangent_cols.to_vec(),
            acts,
            pres,
            act_tans,
            pre_tans,
        };
        Ok((out, out_tans, tape))
    }

    /// Exact Jacobian of the outputs with respect to the input columns `cols`.
    pub fn input_jacobian(&self, x: &Matrix<T>, cols: &[usize]) -> Result<Jacobians<T>> {
        let (_, tans, _) = self.forward_with_tangents(x, cols)?;
        Ok(Jacobians::from_tangents(&tans, x.rows(), self.out_dim()))
    }

    /// Reverse pass. `upstream` is dL/d(output); `upstream_tangents` (empty or
    /// one per tangent column of the tape) is dL/d(output tangent).
    pub fn backward(
        &self,
        tape: &Tape<T>,
        upstream: &Matrix<T>,
        upstream_tangents: &[Matrix<T>],
        want_input_grad: bool,
    ) -> Result<Gradients<T>> {
        if tape.model_id != self.id || tape.version != self.version {
            return Err(Error::StaleTape(format!(
                "tape recorded for model {}@{}, used with {}@{}",
                tape.model_id, tape.version, self.id, self.version
            )));
        }
        let n = tape.acts[0].rows();
        if upstream.rows() != n || upstream.cols() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                n,
                self.out_dim()
            )));
        }
        let dual = !upstream_tangents.is_empty();
        if dual && upstream_tangents.len() != tape.tangent_cols.len() {
            return Err(Error::Shape(format!(
                "{} upstream tangents for a tape with {} tangent columns",
                upstream_tangents.len(),
                tape.tangent_cols.len()
            )));
        }
        if upstream_tangents.iter().any(|t| t.rows() != n || t.cols() != self.out_dim()) {
            return Err(Error::Shape("upstream tangent shape".into()));
        }
        let n_tan = if dual { tape.tangent_cols.len() } else { 0 };

        let mut grads = Gradients::zeros_like(self);
        let mut ga = upstream.clone();
        let mut gda: Vec<Matrix<T>> = upstream_tangents.to_vec();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z = &tape.pres[l];
            let h = &tape.acts[l];
            let fan_out = layer.fan_out();

            let mut gz = Matrix::zeros(n, fan_out);
            let mut gdz: Vec<Matrix<T>> = Vec::with_capacity(n_tan);
            if n_tan == 0 {
                layer.activation.derivative_slice(z.as_slice(), gz.as_mut_slice());
                mul_into(gz.as_mut_slice(), ga.as_slice());
            } else {
                // gz = d1 * ga + d2 * sum_k dz_k * gda_k, gdz_k = d1 * gda_k
                let mut d2 = Matrix::zeros(n, fan_out);
                layer.activation.derivatives_slice(z.as_slice(), gz.as_mut_slice(), d2.as_mut_slice());
                let d1 = gz.clone();
                mul_into(gz.as_mut_slice(), ga.as_slice());
                let mut acc = Matrix::zeros(n, fan_out);
                for (t, g) in tape.pre_tans[l].iter().zip(&gda) {
                    for ((o, &a), &b) in acc.as_mut_slice().iter_mut().zip(t.as_slice()).zip(g.as_slice()) {
                        *o = *o + a * b;
                    }
                    let mut gk = d1.clone();
                    mul_into(gk.as_mut_slice(), g.as_slice());
                    gdz.push(gk);
                }
                mul_into(acc.as_mut_slice(), d2.as_slice());
                add_into(gz.as_mut_slice(), acc.as_slice());
            }

            let gw = &mut grads.weights[l];
            gw.gemm_tn(layer.omega, &gz, h, T::zero());
            for k in 0..n_tan {
                if l == 0 {
                    let col = tape.tangent_cols[k];
                    for o in 0..fan_out {
                        let mut s = T::zero();
                        for i in 0..n {
                            s = s + gdz[k].get(i, o);
                        }
                        let cur = gw.get(o, col);
                        gw.set(o, col, cur + layer.omega * s);
                    }
                } else {
                    gw.gemm_tn(layer.omega, &gdz[k], &tape.act_tans[l][k], T::one());
                }
            }
            let gb = &mut grads.biases[l];
            for i in 0..n {
                for (b, g) in gb.iter_mut().zip(gz.row(i)) {
                    *b = *b + *g;
                }
            }

            if l == 0 && !want_input_grad {
                break;
            }
            let mut gh = Matrix::zeros(n, layer.fan_in());
            gh.gemm_nn(layer.omega, &gz, &layer.weight, T::zero());
            if layer.residual {
                for (a, b) in gh.as_mut_slice().iter_mut().zip(ga.as_slice()) {
                    *a = *a + *b;
                }
            }
            let mut gdh = Vec::with_capacity(n_tan);
            if l > 0 {
                for k in 0..n_tan {
                    let mut t = Matrix::zeros(n, layer.fan_in());
                    t.gemm_nn(layer.omega, &gdz[k], &layer.weight, T::zero());
                    if layer.residual {
                        for (a, b) in t.as_mut_slice().iter_mut().zip(gda[k].as_slice()) {
                            *a = *a + *b;
                        }
                    }
                    gdh.push(t);
                }
            }
            ga = gh;
            gda = gdh;
        }
        if want_input_grad {
            grads.input = Some(ga);
        }
        Ok(grads)
    }
}

fn validate<T: Real>(layers: &[Layer<T>]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidArchitecture("no layers".into()));
    }
    for (l, layer) in layers.iter().enumerate() {
        if layer.fan_in() == 0 || layer.fan_out() == 0 {
            return Err(Error::InvalidArchitecture(format!("layer {l} has a zero dimension")));
        }
        if layer.bias.len() != layer.fan_out() {
            return Err(Error::InvalidArchitecture(format!("layer {l} bias length")));
        }
        if l > 0 && layer.fan_in() != layers[l - 1].fan_out() {
            return Err(Error::InvalidArchitecture(format!(
                "layer {l} expects {} inputs but layer {} produces {}",
                layer.fan_in(),
                l - 1,
                layers[l - 1].fan_out()
            )));
        }
        if layer.activation == Activation::Sine && !(layer.omega > T::zero()) {
            return Err(Error::InvalidArchitecture(format!("layer {l} has non-positive omega")));
        }
        if layer.residual && (l == 0 || layer.fan_in() != layer.fan_out()) {
            return Err(Error::InvalidArchitecture(format!("layer {l} cannot be residual")));
        }
        if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) || !layer.omega.is_finite() {
            return Err(Error::InvalidArchitecture(format!("layer {l} has non-finite parameters")));
        }
    }
    Ok(())
}

/// `z = omega * h W^T + b`
fn affine<T: Real>(layer: &Layer<T>, h: &Matrix<T>, z: &mut Matrix<T>) {
    for i in 0..z.rows() {
        z.row_mut(i).copy_from_slice(&layer.bias);
    }
    z.gemm_nt(layer.omega, h, &layer.weight, T::one());
}

/// Cached forward state for one call. Immutable once created.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    model_id: u64,
    version: u64,
    tangent_cols: Vec<usize>,
    acts: Vec<Matrix<T>>,
    pres: Vec<Matrix<T>>,
    act_tans: Vec<Vec<Matrix<T>>>,
    pre_tans: Vec<Vec<Matrix<T>>>,
}

impl<T: Real> Tape<T> {
    pub fn n_points(&self) -> usize {
        self.acts[0].rows()
    }

    pub fn tangent_cols(&self) -> &[usize] {
        &self.tangent_cols
    }

    /// Pre-activation of layer `l`.
    pub fn pre_activation(&self, l: usize) -> &Matrix<T> {
        &self.pres[l]
    }
}

/// Per-layer parameter gradients, plus the input gradient when requested.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
    pub input: Option<Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(mlp: &Mlp<T>) -> Self {
        Gradients {
            weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.fan_out(), l.fan_in()))
                .collect(),
            biases: mlp.layers.iter().map(|l| vec![T::zero(); l.fan_out()]).collect(),
            input: None,
        }
    }

    /// Accumulates `scale * other` into the parameter gradients.
    pub fn add_scaled(&mut self, other: &Gradients<T>, scale: T) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = *x + scale * *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + scale * *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for w in &mut self.weights {
            for x in w.as_mut_slice() {
                *x = *x * s;
            }
        }
        for b in &mut self.biases {
            for x in b {
                *x = *x * s;
            }
        }
    }

    /// Index of the first layer holding a non-finite gradient.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        (0..self.weights.len())
            .find(|&l| !self.weights[l].is_finite() || self.biases[l].iter().any(|v| !v.is_finite()))
    }

    /// All parameter gradients flattened in checkpoint order.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(w.as_slice());
            v.extend_from_slice(b);
        }
        v
    }
}

/// Per-point Jacobians, `points x outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobians<T> {
    pub points: usize,
    pub outputs: usize,
    pub inputs: usize,
    data: Vec<T>,
}

impl<T: Real> Jacobians<T> {
    pub(crate) fn from_tangents(tans: &[Matrix<T>], points: usize, outputs: usize) -> Self {
        let inputs = tans.len();
        let mut data = vec![T::zero(); points * outputs * inputs];
        for (k, t) in tans.iter().enumerate() {
            for i in 0..points {
                for o in 0..outputs {
                    data[(i * outputs + o) * inputs + k] = t.get(i, o);
                }
            }
        }
        Jacobians {
            points,
            outputs,
            inputs,
            data,
        }
    }

    #[inline]
    pub fn get(&self, point: usize, out: usize, input: usize) -> T {
        self.data[(point * self.outputs + out) * self.inputs + input]
    }

    /// The Jacobian of one point, row-major `outputs x inputs`.
    pub fn point(&self, i: usize) -> &[T] {
        let s = self.outputs * self.inputs;
        &self.data[i * s..(i + 1) * s]
    }
}
