//! Checkpoint file: `CPT4D-CKPT\n`, a text header terminated by `end\n`, then
//! little-endian f64 parameters (per layer: weight row-major, then bias),
//! followed by the Adam first and second moments in the same order.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use super::matrix::{Matrix, Real};
use super::mlp::{Activation, Layer, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"CPT4D-CKPT\n";

/// A network and its optimizer state as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp<f64>,
    pub adam: AdamState<f64>,
}

fn join<I: IntoIterator<Item = String>>(it: I) -> String {
    it.into_iter().collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<T: Real>(path: &Path, mlp: &Mlp<T>, adam: &AdamState<T>) -> Result<()> {
    fs::write(path, encode(mlp, adam)).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode<T: Real>(mlp: &Mlp<T>, adam: &AdamState<T>) -> Vec<u8> {
    let layers = mlp.layers();
    let c = adam.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let header = format!(
        "layers {}\ndims {}\nomega {}\nactivation {}\nresidual {}\nadam lr={} beta1={} beta2={} eps={}\nstep {}\nend\n",
        layers.len(),
        join(mlp.dims().iter().map(|d| d.to_string())),
        join(layers.iter().map(|l| l.omega.f64().to_string())),
        join(layers.iter().map(|l| l.activation.tag().to_string())),
        join(layers.iter().map(|l| u8::from(l.residual).to_string())),
        c.lr,
        c.beta1,
        c.beta2,
        c.eps,
        adam.step,
    );
    out.extend_from_slice(header.as_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for l in layers {
        l.weight.as_slice().iter().chain(&l.bias).for_each(|v| put(v.f64()));
    }
    for buf in adam.m.iter().chain(&adam.v) {
        buf.iter().for_each(|v| put(v.f64()));
    }
    out
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let bad = |msg: &str| Error::format("checkpoint", path, msg);

    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }

    let mut dims = None;
    let mut omegas = None;
    let mut acts = None;
    let mut residual = None;
    let mut config = None;
    let mut step = None;
    let mut n_layers = None;
    loop {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(bad("header not terminated"));
        }
        let line = line.trim_end_matches('\n');
        if line == "end" {
            break;
        }
        let (key, rest) = line.split_once(' ').ok_or_else(|| bad("malformed header line"))?;
        let words = || rest.split_whitespace();
        match key {
            "layers" => n_layers = Some(rest.parse::<usize>().map_err(|_| bad("layers"))?),
            "dims" => {
                dims = Some(
                    words()
                        .map(|w| w.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("dims"))?,
                )
            }
            "omega" => {
                omegas = Some(
                    words()
                        .map(|w| w.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("omega"))?,
                )
            }
            "activation" => {
                acts = Some(
                    words()
                        .map(Activation::from_tag)
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("activation"))?,
                )
            }
            "residual" => residual = Some(words().map(|w| w == "1").collect::<Vec<_>>()),
            "adam" => {
                let mut c = AdamConfig::default();
                for kv in words() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad("adam"))?;
                    let v: f64 = v.parse().map_err(|_| bad("adam value"))?;
                    match k {
                        "lr" => c.lr = v,
                        "beta1" => c.beta1 = v,
                        "beta2" => c.beta2 = v,
                        "eps" => c.eps = v,
                        _ => return Err(bad("unknown adam key")),
                    }
                }
                config = Some(c);
            }
            "step" => step = Some(rest.parse::<u64>().map_err(|_| bad("step"))?),
            _ => return Err(bad(&format!("unknown header key {key}"))),
        }
    }
    let dims = dims.ok_or_else(|| bad("missing dims"))?;
    let omegas = omegas.ok_or_else(|| bad("missing omega"))?;
    let acts = acts.ok_or_else(|| bad("missing activation"))?;
    let residual = residual.ok_or_else(|| bad("missing residual"))?;
    let n = dims.len().saturating_sub(1);
    if n == 0 || n_layers != Some(n) || omegas.len() != n || acts.len() != n || residual.len() != n {
        return Err(bad("inconsistent layer count"));
    }

    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    let sizes: Vec<usize> = (0..n).map(|l| dims[l] * dims[l + 1] + dims[l + 1]).collect();
    let total: usize = sizes.iter().sum();
    if rest.len() != 3 * total * 8 {
        return Err(bad("payload length does not match header"));
    }
    let mut vals = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

    let mut layers = Vec::with_capacity(n);
    for l in 0..n {
        let (fi, fo) = (dims[l], dims[l + 1]);
        let w: Vec<f64> = vals.by_ref().take(fi * fo).collect();
        let b: Vec<f64> = vals.by_ref().take(fo).collect();
        layers.push(Layer {
            weight: Matrix::from_vec(fo, fi, w),
            bias: b,
            omega: omegas[l],
            activation: acts[l],
            residual: residual[l],
        });
    }
    let mlp = Mlp::from_layers(layers)?;
    let m = sizes.iter().map(|&s| vals.by_ref().take(s).collect()).collect();
    let v = sizes.iter().map(|&s| vals.by_ref().take(s).collect()).collect();
    let adam = AdamState {
        config: config.ok_or_else(|| bad("missing adam"))?,
        step: step.ok_or_else(|| bad("missing step"))?,
        m,
        v,
    };
    Ok(Checkpoint { mlp, adam })
}
