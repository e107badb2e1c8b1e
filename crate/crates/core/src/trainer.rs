//! Joint optimization of the motion and anatomy networks from slice samples.
//!
//! One step draws `meta_batch` training records, samples points from each,
//! averages the loss gradients over the draws and applies one Adam update to
//! each network. A step is what the configuration calls an epoch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::{sample_points, SliceDataset, SliceRecord};
use crate::error::{Error, Result};
use crate::losses::{total_loss_states, LossReport, DEFAULT_LAMBDA};
use crate::metrics::evaluate_split;
use crate::networks::{NetShape, SanModel, TmnModel};
use crate::nn::{write_checkpoint, AdamConfig, AdamState, Gradients, Matrix, Real};
use crate::surrogate::{state_for_record, SurrogateSignal, TrackerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    /// Single precision arithmetic, several times faster on the gemm path.
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// All points of a draw come from one slice.
    PerSlice,
    /// Points of a draw are pooled over the slices nearest in state to the
    /// drawn one, each keeping its own state.
    PerState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub meta_batch: usize,
    pub points_per_batch: usize,
    pub adam: AdamConfig,
    pub lambda: f64,
    pub tmn: NetShape,
    pub san: NetShape,
    pub data_fraction: f64,
    pub seed: u64,
    /// Zero keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub precision: Precision,
    pub sampling: SamplingMode,
    /// Slices pooled per draw in [`SamplingMode::PerState`].
    pub pool_size: usize,
    /// Multiplier on the initial motion network output layer.
    pub tmn_output_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            meta_batch: 8,
            points_per_batch: 10_000,
            adam: AdamConfig::default(),
            lambda: DEFAULT_LAMBDA,
            tmn: NetShape {
                width: 256,
                depth: 4,
                omega0: 30.0,
                omega_hidden: 1.0,
            },
            san: NetShape {
                width: 512,
                depth: 5,
                omega0: 30.0,
                omega_hidden: 1.0,
            },
            data_fraction: 1.0,
            seed: 42,
            checkpoint_every: 200,
            checkpoint_dir: None,
            precision: Precision::F64,
            sampling: SamplingMode::PerSlice,
            pool_size: 8,
            tmn_output_init: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.meta_batch == 0 || self.points_per_batch == 0 {
            return bad("meta_batch and points_per_batch must be positive".into());
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad(format!("data_fraction {} outside (0, 1]", self.data_fraction));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.adam.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.adam.lr));
        }
        for (name, s) in [("tmn", self.tmn), ("san", self.san)] {
            if s.width == 0 || s.depth == 0 || !(s.omega0 > 0.0) || !(s.omega_hidden > 0.0) {
                return bad(format!("{name} shape {s:?} invalid"));
            }
        }
        if self.sampling == SamplingMode::PerState && self.pool_size == 0 {
            return bad("pool_size must be positive".into());
        }
        Ok(())
    }
}

/// One logged optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: LossReport,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub wall_s: f64,
    pub checkpoints: Vec<(usize, PathBuf, PathBuf)>,
    pub checkpoint_every: usize,
    pub validation: Option<String>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# checkpoint_every {}\n{}\n", self.checkpoint_every, LossReport::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&r.loss.csv_row(r.step, r.wall_ms));
            out.push('\n');
        }
        writeln!(out, "# wall_s {:.3}", self.wall_s).expect("string write");
        if let Some(v) = &self.validation {
            for line in v.lines() {
                writeln!(out, "# {line}").expect("string write");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean photometric loss over the first `n` logged steps.
    pub fn head_photo(&self, n: usize) -> f64 {
        mean_photo(&self.rows[..n.min(self.rows.len())])
    }

    /// Mean photometric loss over the last `n` logged steps.
    pub fn tail_photo(&self, n: usize) -> f64 {
        mean_photo(&self.rows[self.rows.len().saturating_sub(n)..])
    }
}

fn mean_photo(rows: &[LogRow]) -> f64 {
    rows.iter().map(|r| r.loss.l_photo).sum::<f64>() / rows.len() as f64
}

/// A training record with its network input state.
#[derive(Clone, Debug)]
struct Sample<'a> {
    record: &'a SliceRecord,
    state: f64,
}

/// Records of the temporal prefix selected by `data_fraction`, paired with
/// their states. Records the signal cannot reach without extrapolating are
/// dropped.
fn training_samples<'a>(
    train: &'a SliceDataset,
    signal: &SurrogateSignal,
    data_fraction: f64,
) -> Result<Vec<Sample<'a>>> {
    let n_use = ((train.len() as f64 * data_fraction).floor() as usize).clamp(1, train.len().max(1));
    let samples: Vec<Sample> = train.records[..n_use.min(train.len())]
        .iter()
        .filter_map(|record| {
            state_for_record(signal, record)
                .ok()
                .map(|state| Sample { record, state: state.clamp(-1.0, 1.0) })
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Config("no training record lies inside the surrogate range".into()));
    }
    Ok(samples)
}

/// Points and per-point states of one draw.
fn draw_points<T: Real>(
    samples: &[Sample],
    pick: usize,
    cfg: &TrainConfig,
    geometry: &crate::volume::Geometry,
    seed: u64,
) -> Result<(Matrix<T>, Vec<T>, Vec<T>)> {
    let chosen: Vec<usize> = match cfg.sampling {
        SamplingMode::PerSlice => vec![pick],
        SamplingMode::PerState => {
            let s0 = samples[pick].state;
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.sort_by(|&a, &b| {
                (samples[a].state - s0)
                    .abs()
                    .total_cmp(&(samples[b].state - s0).abs())
                    .then(a.cmp(&b))
            });
            order.truncate(cfg.pool_size.min(samples.len()));
            order
        }
    };
    let n = cfg.points_per_batch;
    let share = |k: usize| n / chosen.len() + usize::from(k < n % chosen.len());
    let mut coords: Vec<T> = Vec::with_capacity(n * 3);
    let (mut gt, mut states) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (k, &c) in chosen.iter().enumerate() {
        let m = share(k);
        if m == 0 {
            continue;
        }
        let s = &samples[c];
        let (x, v) = sample_points(s.record, geometry, m, seed.wrapping_add(k as u64), false)?;
        coords.extend(x.as_slice().iter().map(|&c| T::lit(c)));
        gt.extend(v.iter().map(|&c| T::lit(c)));
        states.extend(std::iter::repeat_n(T::lit(s.state), m));
    }
    Ok((Matrix::from_vec(gt.len(), 3, coords), states, gt))
}

/// Freshly initialized networks for `cfg`.
pub fn init_models(cfg: &TrainConfig) -> Result<(TmnModel<f64>, SanModel<f64>)> {
    let mut tmn = TmnModel::new(cfg.tmn, cfg.seed)?;
    if cfg.tmn_output_init != 1.0 {
        let last = tmn.mlp.layers_mut().last_mut().expect("non-empty network");
        last.weight.as_mut_slice().iter_mut().for_each(|w| *w *= cfg.tmn_output_init);
    }
    let san = SanModel::new(cfg.san, cfg.seed.wrapping_add(1))?;
    Ok((tmn, san))
}

/// Trains both networks on the training split of `dataset`.
pub fn train(
    dataset: &SliceDataset,
    signal: &SurrogateSignal,
    cfg: &TrainConfig,
) -> Result<(TmnModel<f64>, SanModel<f64>, TrainLog)> {
    cfg.validate()?;
    let (tmn, san) = init_models(cfg)?;
    match cfg.precision {
        Precision::F64 => train_in(dataset, signal, cfg, tmn, san),
        Precision::F32 => {
            let (t, s, log) = train_in(dataset, signal, cfg, tmn.cast::<f32>(), san.cast::<f32>())?;
            Ok((t.cast(), s.cast(), log))
        }
    }
}

fn train_in<T: Real>(
    dataset: &SliceDataset,
    signal: &SurrogateSignal,
    cfg: &TrainConfig,
    mut tmn: TmnModel<T>,
    mut san: SanModel<T>,
) -> Result<(TmnModel<f64>, SanModel<f64>, TrainLog)> {
    let train_split = dataset.training_split();
    let mut log = TrainLog {
        checkpoint_every: cfg.checkpoint_every,
        ..TrainLog::default()
    };
    if cfg.epochs == 0 {
        return Ok((tmn.cast(), san.cast(), log));
    }
    let samples = training_samples(&train_split, signal, cfg.data_fraction)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut opt_tmn = AdamState::new(&tmn.mlp, cfg.adam);
    let mut opt_san = AdamState::new(&san.mlp, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inv = T::lit(1.0 / cfg.meta_batch as f64);
    let start = Instant::now();
    let mut last_good = String::from("none");

    for step in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut g_tmn = Gradients::zeros_like(&tmn.mlp);
        let mut g_san = Gradients::zeros_like(&san.mlp);
        let (mut photo, mut jac, mut n_points) = (0.0, 0.0, 0);
        for _ in 0..cfg.meta_batch {
            let pick = rng.gen_range(0..samples.len());
            let seed: u64 = rng.gen();
            let (x, states, gt) = draw_points::<T>(&samples, pick, cfg, &dataset.geometry, seed)?;
            let (rep, g) = total_loss_states(&tmn, &san, &x, &states, &gt, cfg.lambda)?;
            photo += rep.l_photo;
            jac += rep.l_jacdet;
            n_points += rep.n_points;
            g_tmn.add_scaled(&g.tmn, inv);
            g_san.add_scaled(&g.san, inv);
        }
        let m = cfg.meta_batch as f64;
        let loss = LossReport::new(photo / m, jac / m, cfg.lambda, n_points);
        if !loss.l_total.is_finite() {
            return Err(Error::NonFiniteLoss { step, last_good });
        }
        opt_tmn.step(&mut tmn.mlp, &g_tmn)?;
        opt_san.step(&mut san.mlp, &g_san)?;
        log.rows.push(LogRow {
            step,
            loss,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        let due = step == cfg.epochs || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0);
        if let (true, Some(dir)) = (due, &cfg.checkpoint_dir) {
            let pt = dir.join(format!("tmn_{step:06}.ckpt"));
            let ps = dir.join(format!("san_{step:06}.ckpt"));
            write_checkpoint(&pt, &tmn.mlp, &opt_tmn)?;
            write_checkpoint(&ps, &san.mlp, &opt_san)?;
            last_good = pt.display().to_string();
            log.checkpoints.push((step, pt, ps));
        }
    }
    log.wall_s = start.elapsed().as_secs_f64();
    Ok((tmn.cast(), san.cast(), log))
}

/// Hyperparameter varied by [`ablate`]. Architecture axes act on the motion
/// network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Omega,
    Depth,
    Width,
    DataFraction,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [Self::Omega, Self::Depth, Self::Width, Self::DataFraction];

    pub fn name(self) -> &'static str {
        match self {
            Self::Omega => "omega",
            Self::Depth => "depth",
            Self::Width => "width",
            Self::DataFraction => "data_fraction",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} value {v} is not a positive integer", self.name())))
            }
        };
        match self {
            Self::Omega => cfg.tmn.omega0 = value,
            Self::Depth => cfg.tmn.depth = count(value)?,
            Self::Width => cfg.tmn.width = count(value)?,
            Self::DataFraction => cfg.data_fraction = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub value: f64,
    pub val_mae: f64,
    pub val_mse: f64,
    pub trajectory_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},val_mae,val_mse,trajectory_mae\n", self.axis.name());
        for r in &self.rows {
            let t = r.trajectory_mae.map_or("nan".to_string(), |t| format!("{t:.8}"));
            writeln!(out, "{},{:.8},{:.8},{t}", r.value, r.val_mae, r.val_mse).expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One training run per value of `axis`, each scored on the validation split.
/// Checkpointing is disabled for the runs. A run whose predicted navigators
/// cannot be tracked gets no trajectory score.
pub fn ablate(
    dataset: &SliceDataset,
    signal: &SurrogateSignal,
    base: &TrainConfig,
    axis: AblationAxis,
    values: &[f64],
    tracker: Option<&TrackerConfig>,
) -> Result<AblationTable> {
    let cfgs = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let val = dataset.validation_split();
    let mut rows = Vec::with_capacity(values.len());
    for (&value, cfg) in values.iter().zip(cfgs) {
        let cfg = TrainConfig { checkpoint_dir: None, ..cfg };
        let (tmn, san, _) = train(dataset, signal, &cfg)?;
        let report = match evaluate_split(&tmn, &san, &val, signal, tracker) {
            Err(Error::InSequence { .. }) => evaluate_split(&tmn, &san, &val, signal, None)?,
            r => r?,
        };
        rows.push(AblationRow {
            value,
            val_mae: report.mae().mean,
            val_mse: report.mse().mean,
            trajectory_mae: report.trajectory_mae,
        });
    }
    Ok(AblationTable { axis, rows })
}
