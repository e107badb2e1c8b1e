//! Image and trajectory scores on `[0, 1]` intensities.
//!
//! SSIM uses an 11 x 11 Gaussian window (sigma 1.5), `C1 = 0.01^2`,
//! `C2 = 0.03^2`, dynamic range 1, averaged over all windows that fit
//! inside the image. PSNR uses peak 1 and is reported as identical when the
//! images are equal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::acquisition::{plane_coords, SliceDataset, SliceKind, SliceRecord};
use crate::error::{Error, Result};
use crate::networks::{predict_intensity_unchecked, SanModel, TmnModel};
use crate::nn::{Matrix, Real};
use crate::reconstruct::{extract_plane, reconstruct_baseline, SortingConfig};
use crate::surrogate::{state_for_record, track_images, Normalization, SurrogateSignal, TrackerConfig};
use crate::volume::{Image2, VolumeGrid};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageScores {
    pub mae: f64,
    pub mse: f64,
    /// `None` when the images are identical.
    pub psnr: Option<f64>,
    pub ssim: f64,
}

/// Normalized 1D Gaussian of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filtering of a `width x height` image.
fn filter_valid(data: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (width + 1 - SSIM_WINDOW, height + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * height];
    for r in 0..height {
        let line = &data[r * width..(r + 1) * width];
        for c in 0..ow {
            rows[r * ow + c] = w.iter().zip(&line[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = w.iter().enumerate().map(|(k, a)| a * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over valid windows of two equally sized images.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::Shape("ssim inputs differ in size".into()));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Shape(format!("{width}x{height} image is smaller than the SSIM window")));
    }
    let w = gaussian_window();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mx = filter_valid(a, width, height, &w);
    let my = filter_valid(b, width, height, &w);
    let mxx = filter_valid(&prod(&|x, _| x * x), width, height, &w);
    let myy = filter_valid(&prod(&|_, y| y * y), width, height, &w);
    let mxy = filter_valid(&prod(&|x, y| x * y), width, height, &w);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

/// MAE, MSE, PSNR and SSIM of a prediction against ground truth.
pub fn image_metrics(pred: &Image2, gt: &Image2) -> Result<ImageScores> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let (p, g) = (pred.as_f64(), gt.as_f64());
    let n = p.len() as f64;
    let mae = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mse = p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let psnr = (mse > 0.0).then(|| 10.0 * (1.0 / mse).log10());
    let ssim = ssim(&p, &g, pred.width, pred.height)?;
    Ok(ImageScores { mae, mse, psnr, ssim })
}

/// Min-max rescaling to `[0, 1]`.
pub fn renormalize01(v: &[f64]) -> Result<Vec<f64>> {
    let n = Normalization::from_values(v)?;
    Ok(v.iter().map(|&x| n.to01(x)).collect())
}

/// Global SSIM-style agreement of two trajectories (one window spanning
/// the whole series).
pub fn trajectory_pattern(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cab += (x - ma) * (y - mb);
    }
    let (va, vb, cab) = (va / n, vb / n, cab / n);
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cab + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// Tracks both navigator sequences with the same configuration, rescales
/// each trajectory to `[0, 1]` on its own and returns the mean absolute
/// difference.
pub fn trajectory_mae(pred: &[&Image2], gt: &[&Image2], cfg: &TrackerConfig) -> Result<f64> {
    Ok(trajectory_scores(pred, gt, cfg)?.0)
}

/// `(MAE, pattern score)` of the two trajectories.
pub fn trajectory_scores(pred: &[&Image2], gt: &[&Image2], cfg: &TrackerConfig) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted vs {} ground-truth navigators", pred.len(), gt.len())));
    }
    let in_seq = |sequence: &'static str| move |e: Error| Error::InSequence { sequence, source: Box::new(e) };
    let p = renormalize01(&track_images(pred, cfg).map_err(in_seq("predicted"))?).map_err(in_seq("predicted"))?;
    let g = renormalize01(&track_images(gt, cfg).map_err(in_seq("ground truth"))?).map_err(in_seq("ground truth"))?;
    let mae = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
    Ok((mae, trajectory_pattern(&p, &g)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceScore {
    pub index: usize,
    pub kind: SliceKind,
    /// Network input state in `[-1, 1]` units, unclamped.
    pub state: f64,
    pub scores: ImageScores,
}

impl SliceScore {
    pub fn out_of_range(&self) -> bool {
        !(-1.0..=1.0).contains(&self.state)
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> MeanStd {
        if v.is_empty() {
            return MeanStd::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
            n: v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub slices: Vec<SliceScore>,
    pub trajectory_mae: Option<f64>,
    pub trajectory_pattern: Option<f64>,
}

impl EvalReport {
    fn stat(&self, f: impl Fn(&ImageScores) -> Option<f64>) -> MeanStd {
        MeanStd::of(&self.slices.iter().filter_map(|s| f(&s.scores)).collect::<Vec<_>>())
    }

    pub fn mae(&self) -> MeanStd {
        self.stat(|s| Some(s.mae))
    }

    pub fn mse(&self) -> MeanStd {
        self.stat(|s| Some(s.mse))
    }

    /// Over slices that are not identical to their ground truth.
    pub fn psnr(&self) -> MeanStd {
        self.stat(|s| s.psnr)
    }

    pub fn ssim(&self) -> MeanStd {
        self.stat(|s| Some(s.ssim))
    }

    pub fn n_identical(&self) -> usize {
        self.slices.iter().filter(|s| s.scores.psnr.is_none()).count()
    }

    pub fn n_out_of_range(&self) -> usize {
        self.slices.iter().filter(|s| s.out_of_range()).count()
    }

    pub const CSV_HEADER: &'static str = "index,kind,state,mae,mse,psnr,ssim,flag";

    /// Per-slice rows followed by an aggregate footer.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# method {}\n{}\n", self.method, Self::CSV_HEADER);
        for s in &self.slices {
            let psnr = s.scores.psnr.map_or("identical".to_string(), |p| format!("{p:.6}"));
            let flag = if s.out_of_range() { "out_of_range" } else { "" };
            writeln!(
                out,
                "{},{},{:.6},{:.8},{:.8},{psnr},{:.8},{flag}",
                s.index,
                s.kind.tag(),
                s.state,
                s.scores.mae,
                s.scores.mse,
                s.scores.ssim
            )
            .expect("string write");
        }
        for (name, m) in [("mae", self.mae()), ("mse", self.mse()), ("psnr", self.psnr()), ("ssim", self.ssim())] {
            writeln!(out, "# {name} {:.8} +- {:.8} (n={})", m.mean, m.std, m.n).expect("string write");
        }
        if let Some(t) = self.trajectory_mae {
            writeln!(out, "# trajectory_mae {t:.8}").expect("string write");
        }
        if let Some(t) = self.trajectory_pattern {
            writeln!(out, "# trajectory_pattern {t:.8}").expect("string write");
        }
        writeln!(out, "# out_of_range {}", self.n_out_of_range()).expect("string write");
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Side-by-side text summary of several reports.
pub fn summary_table(reports: &[&EvalReport]) -> String {
    let mut out = format!("{:<16}", "metric");
    for r in reports {
        write!(out, "{:>24}", r.method).expect("string write");
    }
    out.push('\n');
    let rows: [(&str, fn(&EvalReport) -> MeanStd); 4] = [
        ("MAE (img)", EvalReport::mae),
        ("MSE (img)", EvalReport::mse),
        ("PSNR (dB)", EvalReport::psnr),
        ("SSIM", EvalReport::ssim),
    ];
    for (name, f) in rows {
        write!(out, "{name:<16}").expect("string write");
        for r in reports {
            let m = f(r);
            write!(out, "{:>24}", format!("{:.4} +- {:.4}", m.mean, m.std)).expect("string write");
        }
        out.push('\n');
    }
    write!(out, "{:<16}", "MAE (navi)").expect("string write");
    for r in reports {
        let t = r.trajectory_mae.map_or("n/a".to_string(), |t| format!("{t:.4}"));
        write!(out, "{t:>24}").expect("string write");
    }
    out.push('\n');
    write!(out, "{:<16}", "slices").expect("string write");
    for r in reports {
        write!(out, "{:>24}", r.slices.len()).expect("string write");
    }
    out.push('\n');
    out
}

/// Scores predicted images against the records they stand for. Navigator
/// predictions also feed the trajectory comparison when `tracker` is given.
pub fn evaluate_predictions(
    method: &str,
    records: &[SliceRecord],
    states: &[f64],
    preds: &[Image2],
    tracker: Option<&TrackerConfig>,
) -> Result<EvalReport> {
    if records.len() != preds.len() || states.len() != preds.len() {
        return Err(Error::Shape("one prediction and state per record required".into()));
    }
    let slices = records
        .iter()
        .zip(preds)
        .zip(states)
        .map(|((r, p), &state)| {
            Ok(SliceScore {
                index: r.index,
                kind: r.kind,
                state,
                scores: image_metrics(p, &r.pixels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut traj_mae, mut traj_pattern) = (None, None);
    if let Some(cfg) = tracker {
        let nav: Vec<usize> = (0..records.len()).filter(|&i| records[i].kind == SliceKind::Navigator).collect();
        if nav.len() >= 2 {
            let p: Vec<&Image2> = nav.iter().map(|&i| &preds[i]).collect();
            let g: Vec<&Image2> = nav.iter().map(|&i| &records[i].pixels).collect();
            let (m, s) = trajectory_scores(&p, &g, cfg)?;
            traj_mae = Some(m);
            traj_pattern = Some(s);
        }
    }
    Ok(EvalReport {
        method: method.to_string(),
        slices,
        trajectory_mae: traj_mae,
        trajectory_pattern: traj_pattern,
    })
}

/// The composed model sampled at every pixel center of `record`'s plane.
pub fn predict_slice<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    geometry: &crate::volume::Geometry,
    record: &SliceRecord,
    state: f64,
) -> Result<Image2> {
    let x: Matrix<T> = plane_coords(geometry, record.plane()).cast();
    let v = predict_intensity_unchecked(tmn, san, &x, state)?;
    Ok(Image2 {
        width: record.pixels.width,
        height: record.pixels.height,
        data: v.iter().map(|p| p.f64() as f32).collect(),
    })
}

/// Scores the networks on every record of `val` at its surrogate state.
pub fn evaluate_split<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    val: &SliceDataset,
    signal: &SurrogateSignal,
    tracker: Option<&TrackerConfig>,
) -> Result<EvalReport> {
    let states = val
        .records
        .iter()
        .map(|r| state_for_record(signal, r))
        .collect::<Result<Vec<_>>>()?;
    let preds = val
        .records
        .iter()
        .zip(&states)
        .map(|(r, &s)| predict_slice(tmn, san, &val.geometry, r, s))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions("INR", &val.records, &states, &preds, tracker)
}

/// Scores the amplitude-sorting baseline built from `train` on every record
/// of `val`. Each record is compared with the matching plane of the volume
/// of the bin its state falls in.
pub fn evaluate_baseline(
    train: &SliceDataset,
    val: &SliceDataset,
    signal: &SurrogateSignal,
    cfg: &SortingConfig,
    tracker: Option<&TrackerConfig>,
) -> Result<EvalReport> {
    let states = val
        .records
        .iter()
        .map(|r| state_for_record(signal, r))
        .collect::<Result<Vec<_>>>()?;
    let mut volumes: BTreeMap<usize, VolumeGrid> = BTreeMap::new();
    let mut preds = Vec::with_capacity(states.len());
    for (r, &s) in val.records.iter().zip(&states) {
        let bin = cfg.bin_of(0.5 * (s + 1.0));
        if let std::collections::btree_map::Entry::Vacant(e) = volumes.entry(bin) {
            let (v, _) = reconstruct_baseline(train, signal, cfg, bin)?;
            e.insert(v);
        }
        preds.push(extract_plane(&volumes[&bin], r.plane()));
    }
    evaluate_predictions("sorting", &val.records, &states, &preds, tracker)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> Image2 {
        let mut out = Image2::zeros(w, h);
        for r in 0..h {
            for c in 0..w {
                out.set(c, r, f(c, r));
            }
        }
        out
    }

    #[test]
    fn identical_images() {
        let a = img(20, 16, |c, r| ((c * 7 + r * 3) % 11) as f32 / 10.0);
        let s = image_metrics(&a, &a).unwrap();
        assert_eq!((s.mae, s.mse, s.psnr), (0.0, 0.0, None));
        assert!((s.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_closed_form() {
        let a = img(16, 16, |c, r| ((c + r) % 5) as f32 * 0.1);
        let b = img(16, 16, |c, r| ((c + r) % 5) as f32 * 0.1 + 0.1);
        let s = image_metrics(&b, &a).unwrap();
        assert!((s.mae - 0.1).abs() < 1e-6);
        assert!((s.mse - 0.01).abs() < 1e-6);
        assert!((s.psnr.unwrap() - 20.0).abs() < 1e-4);
    }

    #[test]
    fn metrics_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = img(24, 18, |_, _| 0.0);
        let a = Image2 {
            data: a.data.iter().map(|_| rng.gen()).collect(),
            ..a
        };
        let b = Image2 {
            data: a.data.iter().map(|v| (v * 0.7 + 0.1).min(1.0)).collect(),
            ..a.clone()
        };
        let (x, y) = (image_metrics(&a, &b).unwrap(), image_metrics(&b, &a).unwrap());
        assert_eq!(x.mae, y.mae);
        assert_eq!(x.mse, y.mse);
        assert!((x.ssim - y.ssim).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_and_small_images() {
        assert!(image_metrics(&Image2::zeros(12, 12), &Image2::zeros(12, 13)).is_err());
        assert!(image_metrics(&Image2::zeros(10, 12), &Image2::zeros(10, 12)).is_err());
    }

    #[test]
    fn inverted_triangle_wave_trajectory() {
        let tri: Vec<f64> = (0..41).map(|i| 1.0 - ((i % 20) as f64 - 10.0).abs() / 10.0).collect();
        let inv: Vec<f64> = tri.iter().map(|v| 1.0 - v).collect();
        let a = renormalize01(&tri).unwrap();
        let b = renormalize01(&inv).unwrap();
        let mae = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        assert!((mae - 0.5).abs() < 0.02, "{mae}");
        assert!(trajectory_pattern(&a, &a) > 1.0 - 1e-12);
    }

    #[test]
    fn report_csv_and_statistics() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std, m.n), (2.0, 1.0, 2));
        let rep = EvalReport {
            method: "x".into(),
            slices: vec![SliceScore {
                index: 3,
                kind: SliceKind::Navigator,
                state: 1.2,
                scores: ImageScores {
                    mae: 0.0,
                    mse: 0.0,
                    psnr: None,
                    ssim: 1.0,
                },
            }],
            trajectory_mae: None,
            trajectory_pattern: None,
        };
        let csv = rep.to_csv();
        assert!(csv.contains(",identical,"));
        assert!(csv.contains("out_of_range"));
        assert_eq!(rep.n_identical(), 1);
        assert!(summary_table(&[&rep, &rep]).contains("MAE (img)"));
    }
}
