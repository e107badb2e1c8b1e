//! Model manifest: what `reconstruct` and `evaluate` need to reload a trained
//! pair of networks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use inr4d::networks::{NetShape, SanModel, TmnModel};
use inr4d::nn::read_checkpoint;
use inr4d::reconstruct::DvfUnits;
use inr4d::surrogate::Normalization;
use inr4d::trainer::Precision;
use inr4d::volume::Geometry;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelManifest {
    pub geometry: Geometry,
    pub dvf_units: DvfUnits,
    pub normalization: Normalization,
    pub tmn: NetShape,
    pub san: NetShape,
    pub precision: Precision,
    pub steps: usize,
    /// Checkpoint files relative to the manifest directory.
    pub tmn_checkpoint: PathBuf,
    pub san_checkpoint: PathBuf,
}

fn shape_text(s: &NetShape) -> String {
    format!("{} {} {} {}", s.width, s.depth, s.omega0, s.omega_hidden)
}

fn bad(path: &Path, msg: &str) -> CliError {
    inr4d::Error::Format {
        kind: "model manifest",
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
    .into()
}

impl ModelManifest {
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} {v}").expect("string write");
        line("dims", format!("{} {} {}", g.dims[0], g.dims[1], g.dims[2]));
        line("spacing", format!("{} {} {}", g.spacing[0], g.spacing[1], g.spacing[2]));
        line("dvf_units", self.dvf_units.tag().to_string());
        line(
            "normalization",
            format!("{:?} {:?}", self.normalization.min, self.normalization.max),
        );
        line("tmn_shape", shape_text(&self.tmn));
        line("san_shape", shape_text(&self.san));
        let p = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        line("precision", p.to_string());
        line("steps", self.steps.to_string());
        line("tmn_checkpoint", self.tmn_checkpoint.display().to_string());
        line("san_checkpoint", self.san_checkpoint.display().to_string());
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_text()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let field = |k: &str| -> Result<Vec<&str>, CliError> {
            text.lines()
                .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix(' ')))
                .map(|r| r.split_whitespace().collect())
                .ok_or_else(|| bad(path, &format!("missing `{k}`")))
        };
        let nums = |k: &str, n: usize| -> Result<Vec<f64>, CliError> {
            let w = field(k)?;
            let v: Option<Vec<f64>> = w.iter().map(|x| x.parse().ok()).collect();
            v.filter(|v| v.len() == n).ok_or_else(|| bad(path, &format!("bad `{k}`")))
        };
        let shape = |k: &str| -> Result<NetShape, CliError> {
            let v = nums(k, 4)?;
            Ok(NetShape {
                width: v[0] as usize,
                depth: v[1] as usize,
                omega0: v[2],
                omega_hidden: v[3],
            })
        };
        let d = nums("dims", 3)?;
        let s = nums("spacing", 3)?;
        let geometry = Geometry::new([d[0] as usize, d[1] as usize, d[2] as usize], [s[0], s[1], s[2]])?;
        let units = field("dvf_units")?.join(" ");
        let dvf_units = DvfUnits::from_tag(&units).ok_or_else(|| bad(path, "bad `dvf_units`"))?;
        let n = nums("normalization", 2)?;
        let precision = match field("precision")?.join(" ").as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            _ => return Err(bad(path, "bad `precision`")),
        };
        let steps = nums("steps", 1)?[0] as usize;
        Ok(ModelManifest {
            geometry,
            dvf_units,
            normalization: Normalization { min: n[0], max: n[1] },
            tmn: shape("tmn_shape")?,
            san: shape("san_shape")?,
            precision,
            steps,
            tmn_checkpoint: PathBuf::from(field("tmn_checkpoint")?.join(" ")),
            san_checkpoint: PathBuf::from(field("san_checkpoint")?.join(" ")),
        })
    }

    /// Loads the networks named by the manifest in `dir`.
    pub fn load_models(&self, dir: &Path) -> Result<(TmnModel<f64>, SanModel<f64>), CliError> {
        let tmn = TmnModel::from_mlp(read_checkpoint(&dir.join(&self.tmn_checkpoint))?.mlp)?;
        let san = SanModel::from_mlp(read_checkpoint(&dir.join(&self.san_checkpoint))?.mlp)?;
        Ok((tmn, san))
    }
}
