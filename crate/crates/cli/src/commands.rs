//! One function per subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use inr4d::acquisition::{acquire, check_validation_coverage, mark_split, split, SliceDataset};
use inr4d::metrics::{evaluate_baseline, evaluate_split, summary_table, EvalReport};
use inr4d::networks::{SanModel, TmnModel};
use inr4d::nn::{write_checkpoint, AdamState, Real};
use inr4d::phantom::render_volume;
use inr4d::reconstruct::{reconstruct_baseline, reconstruct_series, ReconRequest};
use inr4d::surrogate::{pearson, track_diaphragm, SurrogateSignal, TrackerConfig};
use inr4d::trainer::{ablate, train, Precision};
use inr4d::volume::VolumeGrid;

use crate::config::{RunConfig, TRAINED_DVF_UNITS};
use crate::model::ModelManifest;
use crate::{CliError, Command};

/// Artifact locations under one work directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir("dataset")
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.dir("hidden").join("ground_truth.txt")
    }

    pub fn signal(&self) -> PathBuf {
        self.dir("surrogate").join("signal.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.dir("model")
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Creates an output directory and records the resolved config in it.
fn output_dir(layout: &Layout, name: &str, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = layout.dir(name);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    cfg.write(&dir.join("config.txt"))?;
    Ok(dir)
}

fn require(path: &Path, produced_by: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{} not found (run `{produced_by}` first)", path.display())))
    }
}

pub fn dispatch(cmd: &Command, cfg: &RunConfig, workdir: &Path) -> Result<String, CliError> {
    let layout = Layout::new(workdir);
    match cmd {
        Command::Phantom { .. } => cmd_phantom(cfg, &layout),
        Command::Acquire => cmd_acquire(cfg, &layout),
        Command::Surrogate => cmd_surrogate(cfg, &layout),
        Command::Train { .. } => cmd_train(cfg, &layout),
        Command::Reconstruct { .. } => cmd_reconstruct(cfg, &layout),
        Command::Baseline { .. } => cmd_baseline(cfg, &layout),
        Command::Evaluate => cmd_evaluate(cfg, &layout),
        Command::Ablate { .. } => cmd_ablate(cfg, &layout),
    }
}

pub fn cmd_phantom(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let spec = cfg.phantom()?;
    let motion = cfg.motion(&spec)?;
    let amplitudes: Vec<f64> = cfg.list("phantom_amplitudes")?;
    if let Some(a) = amplitudes.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(CliError::Config(format!("phantom amplitude {a} outside [0, 1]")));
    }
    let dir = output_dir(layout, "phantom", cfg)?;
    let text = format!("{spec:#?}\n{motion:#?}\n");
    let p = dir.join("spec.txt");
    fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    let mut out = String::new();
    for a in amplitudes {
        let mut v = render_volume(&spec, &motion, a);
        v.seed = Some(spec.seed);
        let path = dir.join(format!("volume_a{a:.3}.cvol"));
        v.write(&path)?;
        if cfg.export_pgm()? {
            v.coronal(spec.geometry.dims[1] / 2)
                .write_pgm(&path.with_extension("pgm"))?;
        }
        writeln!(out, "wrote {}", path.display()).expect("string write");
    }
    Ok(out)
}

pub fn cmd_acquire(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let spec = cfg.phantom()?;
    let motion = cfg.motion(&spec)?;
    let breath = cfg.breath()?;
    let (num, den) = cfg.split()?;
    let mut data = acquire(&spec, &motion, &breath, cfg.n_positions()?, cfg.n_sweeps()?)?;
    mark_split(&mut data, num, den)?;
    let (train_part, val_part) = split(&data, num, den)?;
    let coverage = check_validation_coverage(&train_part, &val_part)?;

    output_dir(layout, "dataset", cfg)?;
    let hidden = layout.dir("hidden");
    fs::create_dir_all(&hidden).map_err(|e| io_err(&hidden, e))?;
    let gt = layout.ground_truth();
    data.write(&layout.dataset(), Some(&gt))?;
    let mut truth = fs::read_to_string(&gt).map_err(|e| io_err(&gt, e))?;
    truth.insert_str(
        0,
        &format!(
            "# motion d_z {} decay_length {} c_ap {}\n# breath {:?}\n",
            motion.d_z, motion.decay_length, motion.c_ap, breath
        ),
    );
    fs::write(&gt, truth).map_err(|e| io_err(&gt, e))?;
    Ok(format!(
        "records {} train {} validation {} validation coverage {coverage:.3}\n",
        data.len(),
        train_part.len(),
        val_part.len()
    ))
}

/// The slices as training sees them: no ground-truth amplitudes.
fn read_dataset(cfg: &RunConfig, layout: &Layout) -> Result<SliceDataset, CliError> {
    let dir = layout.dataset();
    require(&dir.join("manifest.txt"), "acquire")?;
    let data = SliceDataset::read(&dir, None)?;
    let g = cfg.geometry()?;
    if data.geometry != g {
        return Err(inr4d::Error::Geometry(format!(
            "dataset grid {:?} differs from configured grid {:?}",
            data.geometry.dims, g.dims
        ))
        .into());
    }
    Ok(data)
}

fn read_signal(cfg: &RunConfig, layout: &Layout) -> Result<SurrogateSignal, CliError> {
    let p = layout.signal();
    require(&p, "surrogate")?;
    Ok(SurrogateSignal::read_csv(&p, cfg.get("dt")?)?)
}

fn tracker(cfg: &RunConfig) -> Result<TrackerConfig, CliError> {
    let spec = cfg.phantom()?;
    let motion = cfg.motion(&spec)?;
    cfg.tracker(&spec, &motion)
}

pub fn cmd_surrogate(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let data = read_dataset(cfg, layout)?;
    let tc = tracker(cfg)?;
    let all = track_diaphragm(&data.records, &tc, None)?;
    let norm = all.normalization_before(data.split_index)?;
    let signal = all.renormalized(norm);
    output_dir(layout, "surrogate", cfg)?;
    signal.write_csv(&layout.signal())?;
    Ok(format!(
        "navigators {} raw range [{:.4}, {:.4}] from {} training records\n",
        signal.len(),
        norm.min,
        norm.max,
        data.split_index
    ))
}

/// Validation scores with the trajectory comparison when the predicted
/// navigators can be tracked, without it otherwise.
fn score_model(
    tmn: &TmnModel<f64>,
    san: &SanModel<f64>,
    val: &SliceDataset,
    signal: &SurrogateSignal,
    tc: &TrackerConfig,
) -> Result<(EvalReport, Option<String>), CliError> {
    match evaluate_split(tmn, san, val, signal, Some(tc)) {
        Ok(r) => Ok((r, None)),
        Err(e @ inr4d::Error::InSequence { .. }) => {
            let r = evaluate_split(tmn, san, val, signal, None)?;
            Ok((r, Some(format!("trajectory not scored: {e}"))))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_train(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let data = read_dataset(cfg, layout)?;
    let signal = read_signal(cfg, layout)?;
    let tc = tracker(cfg)?;
    let dir = output_dir(layout, "model", cfg)?;
    let ckpt_dir = dir.join("checkpoints");
    let mut tcfg = cfg.train()?;
    tcfg.checkpoint_dir = Some(ckpt_dir.clone());
    let (tmn, san, mut log) = train(&data, &signal, &tcfg)?;
    let (tmn_ckpt, san_ckpt) = match log.checkpoints.last() {
        Some((_, t, s)) => (t.clone(), s.clone()),
        None => {
            fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
            let t = ckpt_dir.join("tmn_000000.ckpt");
            let s = ckpt_dir.join("san_000000.ckpt");
            write_checkpoint(&t, &tmn.mlp, &AdamState::new(&tmn.mlp, tcfg.adam))?;
            write_checkpoint(&s, &san.mlp, &AdamState::new(&san.mlp, tcfg.adam))?;
            (t, s)
        }
    };
    let (report, note) = score_model(&tmn, &san, &data.validation_split(), &signal, &tc)?;
    let mut summary = summary_table(&[&report]);
    if let Some(n) = note {
        summary.push_str(&n);
        summary.push('\n');
    }
    log.validation = Some(summary.clone());
    log.write_csv(&dir.join("train_log.csv"))?;
    let rel = |p: &Path| p.strip_prefix(&dir).unwrap_or(p).to_path_buf();
    let manifest = ModelManifest {
        geometry: data.geometry,
        dvf_units: TRAINED_DVF_UNITS,
        normalization: signal.normalization,
        tmn: tcfg.tmn,
        san: tcfg.san,
        precision: tcfg.precision,
        steps: tcfg.epochs,
        tmn_checkpoint: rel(&tmn_ckpt),
        san_checkpoint: rel(&san_ckpt),
    };
    manifest.write(&dir.join("model.txt"))?;
    let first = log.rows.first().map_or(f64::NAN, |r| r.loss.l_photo);
    let last = log.rows.last().map_or(f64::NAN, |r| r.loss.l_photo);
    Ok(format!(
        "steps {} wall {:.1}s l_photo {first:.4} -> {last:.4}\n{summary}",
        tcfg.epochs, log.wall_s
    ))
}

fn load_model(layout: &Layout) -> Result<(ModelManifest, TmnModel<f64>, SanModel<f64>), CliError> {
    let dir = layout.model();
    let path = dir.join("model.txt");
    require(&path, "train")?;
    let manifest = ModelManifest::read(&path)?;
    let (tmn, san) = manifest.load_models(&dir)?;
    Ok((manifest, tmn, san))
}

fn write_recon<T: Real>(
    cfg: &RunConfig,
    manifest: &ModelManifest,
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    dir: &Path,
) -> Result<String, CliError> {
    let mut base = ReconRequest::new(cfg.states()?[0], cfg.geometry()?);
    base.chunk = cfg.chunk()?;
    base.units = manifest.dvf_units;
    base.policy = cfg.range_policy()?;
    let states = cfg.states()?;
    let series = reconstruct_series(tmn, san, &manifest.geometry, &base, &states)?;
    let mut timings = String::from("index,state,seconds\n");
    let mut out = String::new();
    for (i, (r, secs)) in series.iter().enumerate() {
        let path = dir.join(format!("state_{i:03}.cvol"));
        r.volume.write(&path)?;
        if cfg.export_pgm()? {
            let mid = r.volume.geometry.dims[1] / 2;
            r.volume.coronal(mid).write_pgm(&dir.join(format!("state_{i:03}_coronal.pgm")))?;
            r.volume.mip_ap().write_pgm(&dir.join(format!("state_{i:03}_mip.pgm")))?;
        }
        let s = r.volume.amplitude.unwrap_or(f64::NAN);
        writeln!(timings, "{i},{s},{secs:.4}").expect("string write");
        writeln!(out, "state {s:+.4} -> {} ({secs:.2}s)", path.display()).expect("string write");
        if let Some(w) = &r.warning {
            writeln!(out, "warning: {w}").expect("string write");
        }
    }
    let p = dir.join("timings.csv");
    fs::write(&p, timings).map_err(|e| io_err(&p, e))?;
    Ok(out)
}

pub fn cmd_reconstruct(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let (manifest, tmn, san) = load_model(layout)?;
    let dir = output_dir(layout, "recon", cfg)?;
    match manifest.precision {
        Precision::F64 => write_recon(cfg, &manifest, &tmn, &san, &dir),
        Precision::F32 => write_recon(cfg, &manifest, &tmn.cast::<f32>(), &san.cast::<f32>(), &dir),
    }
}

pub fn cmd_baseline(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let data = read_dataset(cfg, layout)?;
    let signal = read_signal(cfg, layout)?;
    let sorting = cfg.sorting()?;
    let bins = cfg.baseline_bins()?;
    let dir = output_dir(layout, "baseline", cfg)?;
    let train_part = data.training_split();
    let mut report = String::from(
        "# amplitude binning and stacking only, no deformable registration between slices\n",
    );
    let mut out = String::new();
    for b in bins {
        let (v, gaps): (VolumeGrid, _) = reconstruct_baseline(&train_part, &signal, &sorting, b)?;
        let path = dir.join(format!("bin_{b:02}.cvol"));
        v.write(&path)?;
        report.push_str(&gaps.to_text());
        writeln!(out, "bin {b} center {:.3} gaps {} -> {}", gaps.center, gaps.gaps.len(), path.display())
            .expect("string write");
    }
    let p = dir.join("gap_report.txt");
    fs::write(&p, report).map_err(|e| io_err(&p, e))?;
    Ok(out)
}

pub fn cmd_evaluate(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let gt = layout.ground_truth();
    require(&gt, "acquire")?;
    read_dataset(cfg, layout)?;
    let data = SliceDataset::read(&layout.dataset(), Some(&gt))?;
    let signal = read_signal(cfg, layout)?;
    let (_, tmn, san) = load_model(layout)?;
    let tc = tracker(cfg)?;
    let val = data.validation_split();
    let (inr, note) = score_model(&tmn, &san, &val, &signal, &tc)?;
    let base = evaluate_baseline(&data.training_split(), &val, &signal, &cfg.sorting()?, Some(&tc))?;

    let dir = output_dir(layout, "eval", cfg)?;
    inr.write_csv(&dir.join("inr.csv"))?;
    base.write_csv(&dir.join("sorting.csv"))?;

    let (mut tracked, mut truth) = (Vec::new(), Vec::new());
    for (&idx, &s) in signal.records.iter().zip(&signal.norm01) {
        if let Some(a) = data.records.get(idx).and_then(|r| r.amplitude_gt) {
            tracked.push(s);
            truth.push(a);
        }
    }
    let mut summary = summary_table(&[&inr, &base]);
    writeln!(summary, "{:<16}{:>24}", "surrogate r", format!("{:.5}", pearson(&tracked, &truth)))
        .expect("string write");
    writeln!(summary, "out-of-range validation states: {}", inr.n_out_of_range()).expect("string write");
    if let Some(n) = note {
        writeln!(summary, "{n}").expect("string write");
    }
    let p = dir.join("summary.txt");
    fs::write(&p, &summary).map_err(|e| io_err(&p, e))?;
    Ok(summary)
}

pub fn cmd_ablate(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let data = read_dataset(cfg, layout)?;
    let signal = read_signal(cfg, layout)?;
    let tc = tracker(cfg)?;
    let (axis, values) = cfg.ablation()?;
    let base = cfg.train()?;
    let table = ablate(&data, &signal, &base, axis, &values, Some(&tc))?;
    let dir = output_dir(layout, "ablate", cfg)?;
    table.write_csv(&dir.join(format!("ablation_{}.csv", axis.name())))?;
    Ok(table.to_csv())
}
