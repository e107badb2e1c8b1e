//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use inr4d::networks::NetShape;
use inr4d::nn::AdamConfig;
use inr4d::phantom::{BreathSpec, GroundTruthMotion, PhantomSpec};
use inr4d::reconstruct::{DvfUnits, RangePolicy, SortingConfig, State};
use inr4d::surrogate::TrackerConfig;
use inr4d::trainer::{AblationAxis, Precision, SamplingMode, TrainConfig};
use inr4d::volume::Geometry;

use crate::CliError;

/// Every accepted key with its default and a short description. Training
/// defaults are the desk profile; `configs/full.conf` restores the full
/// scale settings.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "42", "global seed for anatomy, breathing and training"),
    ("dims", "96,96,64", "grid size nx,ny,nz"),
    ("spacing", "2,2,3.5", "voxel spacing in mm"),
    ("phantom_amplitudes", "0,0.5,1", "amplitudes rendered by `phantom`"),
    ("d_z", "18", "peak diaphragm displacement (mm)"),
    ("decay_length", "80", "motion decay length above the diaphragm (mm)"),
    ("c_ap", "0.15", "anterior-posterior coupling fraction"),
    ("period", "4", "base breathing period (s)"),
    ("period_jitter", "0.15", "per-cycle period jitter fraction"),
    ("depth", "0.92", "mean breathing depth"),
    ("depth_jitter", "0.2", "per-cycle depth jitter fraction"),
    ("drift_amplitude", "0.08", "baseline drift amplitude"),
    ("drift_period", "90", "baseline drift period (s)"),
    ("dt", "0.32", "slice acquisition time (s)"),
    ("n_positions", "20", "coronal stack positions"),
    ("n_sweeps", "16", "passes over the coronal stack"),
    ("split", "11/12", "training fraction of each sequence"),
    ("tracker_roi", "auto", "diaphragm search rows lo,hi"),
    ("tracker_columns", "auto", "five landmark columns"),
    ("tracker_threshold", "0.05", "minimum edge strength"),
    ("epochs", "2000", "optimization steps"),
    ("meta_batch", "8", "sampling batches per step"),
    ("points_per_batch", "2048", "points per sampling batch"),
    ("lr", "1e-3", "Adam learning rate"),
    ("beta1", "0.9", "Adam beta1"),
    ("beta2", "0.999", "Adam beta2"),
    ("adam_eps", "1e-8", "Adam epsilon"),
    ("lambda", "0.05", "Jacobian determinant penalty weight"),
    ("tmn_width", "64", "motion network hidden units"),
    ("tmn_depth", "4", "motion network hidden layers"),
    ("tmn_omega0", "30", "motion network first layer frequency"),
    ("tmn_omega_hidden", "1", "motion network hidden frequency"),
    ("san_width", "128", "anatomy network hidden units"),
    ("san_depth", "5", "anatomy network hidden layers"),
    ("san_omega0", "30", "anatomy network first layer frequency"),
    ("san_omega_hidden", "1", "anatomy network hidden frequency"),
    ("data_fraction", "1", "temporal prefix of the training split used"),
    ("checkpoint_every", "200", "steps between checkpoints, 0 for final only"),
    ("precision", "f32", "training arithmetic, f32 or f64"),
    ("sampling", "per_slice", "per_slice or per_state point sampling"),
    ("pool_size", "8", "slices pooled per draw with per_state sampling"),
    ("tmn_output_init", "1", "scale on the initial motion output layer"),
    ("states", "0,0.25,0.5,0.75,1", "states reconstructed by `reconstruct`"),
    ("state_units", "norm01", "norm01 or norm11"),
    ("range_policy", "clamp", "clamp, reject or extrapolate out-of-range states"),
    ("chunk", "16384", "points per reconstruction chunk"),
    ("export_pgm", "true", "write mid-coronal and MIP graymaps"),
    ("n_bins", "10", "amplitude bins of the sorting baseline"),
    ("baseline_bins", "all", "bins written by `baseline`"),
    ("ablate_axis", "omega", "omega, depth, width or data_fraction"),
    ("ablate_values", "1,7,30", "values swept by `ablate`"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn known(key: &str) -> Result<(), CliError> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown key `{key}`")))
    }
}

impl RunConfig {
    /// Defaults overridden by the lines of a config file.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.merge_text(&text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        known(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("every key has a default")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("key `{key}`: cannot parse `{v}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let v = self.raw(key);
        v.split(',')
            .map(|w| {
                w.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("key `{key}`: cannot parse `{w}`")))
            })
            .collect()
    }

    fn triple<T: FromStr + Copy>(&self, key: &str) -> Result<[T; 3], CliError> {
        let v = self.list::<T>(key)?;
        <[T; 3]>::try_from(v).map_err(|_| CliError::Config(format!("key `{key}` needs three values")))
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(CliError::Config(format!("key `{key}`: `{v}` is not a boolean"))),
        }
    }

    /// Resolved configuration in key order of [`KEYS`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _, _) in KEYS {
            writeln!(out, "{k} = {}", self.raw(k)).expect("string write");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_text()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn geometry(&self) -> Result<Geometry, CliError> {
        Ok(Geometry::new(self.triple("dims")?, self.triple("spacing")?)?)
    }

    pub fn phantom(&self) -> Result<PhantomSpec, CliError> {
        Ok(PhantomSpec::new(self.geometry()?, self.seed()?))
    }

    pub fn motion(&self, spec: &PhantomSpec) -> Result<GroundTruthMotion, CliError> {
        let c_ap: f64 = self.get("c_ap")?;
        if !(0.0..=0.3).contains(&c_ap) {
            return Err(CliError::Config(format!("c_ap {c_ap} outside [0, 0.3]")));
        }
        Ok(GroundTruthMotion::new(spec, self.get("d_z")?, self.get("decay_length")?, c_ap))
    }

    pub fn n_positions(&self) -> Result<usize, CliError> {
        self.get("n_positions")
    }

    pub fn n_sweeps(&self) -> Result<usize, CliError> {
        self.get("n_sweeps")
    }

    /// Breathing long enough for every acquired record.
    pub fn breath(&self) -> Result<BreathSpec, CliError> {
        let dt: f64 = self.get("dt")?;
        let n = 2 * self.n_positions()? * self.n_sweeps()?;
        let b = BreathSpec {
            period: self.get("period")?,
            period_jitter: self.get("period_jitter")?,
            depth: self.get("depth")?,
            depth_jitter: self.get("depth_jitter")?,
            drift_amplitude: self.get("drift_amplitude")?,
            drift_period: self.get("drift_period")?,
            duration: n as f64 * dt,
            dt,
            seed: self.seed()?,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn split(&self) -> Result<(usize, usize), CliError> {
        let v = self.raw("split");
        let parsed = v
            .split_once('/')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        parsed.ok_or_else(|| CliError::Config(format!("key `split`: `{v}` is not num/den")))
    }

    pub fn tracker(&self, spec: &PhantomSpec, motion: &GroundTruthMotion) -> Result<TrackerConfig, CliError> {
        let mut t = TrackerConfig::for_phantom(spec, motion);
        if self.raw("tracker_roi") != "auto" {
            let v = self.list::<usize>("tracker_roi")?;
            let [lo, hi] = <[usize; 2]>::try_from(v)
                .map_err(|_| CliError::Config("key `tracker_roi` needs two rows".into()))?;
            t.roi = (lo, hi);
        }
        if self.raw("tracker_columns") != "auto" {
            t.columns = <[usize; 5]>::try_from(self.list::<usize>("tracker_columns")?)
                .map_err(|_| CliError::Config("key `tracker_columns` needs five columns".into()))?;
        }
        t.threshold = self.get("tracker_threshold")?;
        let g = &spec.geometry;
        t.validate(g.dims[1], g.dims[2])?;
        Ok(t)
    }

    fn shape(&self, net: &str) -> Result<NetShape, CliError> {
        Ok(NetShape {
            width: self.get(&format!("{net}_width"))?,
            depth: self.get(&format!("{net}_depth"))?,
            omega0: self.get(&format!("{net}_omega0"))?,
            omega_hidden: self.get(&format!("{net}_omega_hidden"))?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let precision = match self.raw("precision") {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            v => return Err(CliError::Config(format!("key `precision`: `{v}` is not f32 or f64"))),
        };
        let sampling = match self.raw("sampling") {
            "per_slice" => SamplingMode::PerSlice,
            "per_state" => SamplingMode::PerState,
            v => return Err(CliError::Config(format!("key `sampling`: `{v}` is not per_slice or per_state"))),
        };
        let cfg = TrainConfig {
            epochs: self.get("epochs")?,
            meta_batch: self.get("meta_batch")?,
            points_per_batch: self.get("points_per_batch")?,
            adam: AdamConfig {
                lr: self.get("lr")?,
                beta1: self.get("beta1")?,
                beta2: self.get("beta2")?,
                eps: self.get("adam_eps")?,
            },
            lambda: self.get("lambda")?,
            tmn: self.shape("tmn")?,
            san: self.shape("san")?,
            data_fraction: self.get("data_fraction")?,
            seed: self.seed()?,
            checkpoint_every: self.get("checkpoint_every")?,
            checkpoint_dir: None,
            precision,
            sampling,
            pool_size: self.get("pool_size")?,
            tmn_output_init: self.get("tmn_output_init")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn precision(&self) -> Result<Precision, CliError> {
        Ok(self.train()?.precision)
    }

    pub fn states(&self) -> Result<Vec<State>, CliError> {
        let wrap: fn(f64) -> State = match self.raw("state_units") {
            "norm01" => State::Norm01,
            "norm11" => State::Norm11,
            v => return Err(CliError::Config(format!("key `state_units`: `{v}` is not norm01 or norm11"))),
        };
        Ok(self.list::<f64>("states")?.into_iter().map(wrap).collect())
    }

    pub fn range_policy(&self) -> Result<RangePolicy, CliError> {
        match self.raw("range_policy") {
            "clamp" => Ok(RangePolicy::Clamp),
            "reject" => Ok(RangePolicy::Reject),
            "extrapolate" => Ok(RangePolicy::Extrapolate),
            v => Err(CliError::Config(format!("key `range_policy`: `{v}` is not clamp, reject or extrapolate"))),
        }
    }

    pub fn chunk(&self) -> Result<usize, CliError> {
        self.get("chunk")
    }

    pub fn export_pgm(&self) -> Result<bool, CliError> {
        self.flag("export_pgm")
    }

    pub fn sorting(&self) -> Result<SortingConfig, CliError> {
        let s = SortingConfig {
            n_bins: self.get("n_bins")?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn baseline_bins(&self) -> Result<Vec<usize>, CliError> {
        let n = self.sorting()?.n_bins;
        if self.raw("baseline_bins") == "all" {
            return Ok((0..n).collect());
        }
        let bins = self.list::<usize>("baseline_bins")?;
        match bins.iter().find(|&&b| b >= n) {
            Some(b) => Err(CliError::Config(format!("bin {b} of {n}"))),
            None => Ok(bins),
        }
    }

    pub fn ablation(&self) -> Result<(AblationAxis, Vec<f64>), CliError> {
        let name = self.raw("ablate_axis");
        let axis = AblationAxis::parse(name)
            .ok_or_else(|| CliError::Config(format!("key `ablate_axis`: unknown axis `{name}`")))?;
        Ok((axis, self.list("ablate_values")?))
    }

    /// Parses every typed view once so a bad value fails before any work.
    pub fn validate(&self) -> Result<(), CliError> {
        let spec = self.phantom()?;
        let motion = self.motion(&spec)?;
        self.list::<f64>("phantom_amplitudes")?;
        self.breath()?;
        self.split()?;
        self.tracker(&spec, &motion)?;
        self.train()?;
        self.states()?;
        self.range_policy()?;
        self.chunk()?;
        self.export_pgm()?;
        self.baseline_bins()?;
        self.ablation()?;
        Ok(())
    }
}

/// The DVF convention written into model manifests by `train`.
pub const TRAINED_DVF_UNITS: DvfUnits = DvfUnits::Normalized;
