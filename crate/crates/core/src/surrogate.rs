//! Respiratory surrogate from navigator slices.
//!
//! In each of five landmark columns the diaphragm is the row of largest
//! positive vertical intensity gradient (dark lung above, bright liver
//! below) inside a region of interest, refined by a parabola through the
//! gradient at the peak and its two neighbours. The raw signal is minus the
//! mean landmark row, so it grows as the diaphragm rises.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::acquisition::{SliceKind, SliceRecord};
use crate::error::{Error, Result};
use crate::phantom::{GroundTruthMotion, PhantomSpec};
use crate::volume::Image2;

pub const N_LANDMARKS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Rows searched, inclusive start, exclusive end.
    pub roi: (usize, usize),
    pub columns: [usize; N_LANDMARKS],
    /// Smallest gradient peak accepted as an edge.
    pub threshold: f64,
}

impl TrackerConfig {
    /// ROI around the right dome over its full excursion, columns spread
    /// over the central part of the right lung base.
    pub fn for_phantom(spec: &PhantomSpec, motion: &GroundTruthMotion) -> Self {
        let g = &spec.geometry;
        let dome = &spec.right_lung().dome;
        let semi_y = spec.right_lung().shape.semi[1];
        let z_top = dome.apex[2] - motion.d_z.abs() - 5.0 * g.spacing[2];
        let z_bottom = dome.z_at(dome.apex[0], 0.45 * semi_y) + 3.0 * g.spacing[2];
        let row = |z: f64| g.mm_to_index(2, z).round().clamp(1.0, (g.dims[2] - 2) as f64) as usize;
        let columns = [-0.45, -0.225, 0.0, 0.225, 0.45].map(|f| {
            let c = g.mm_to_index(1, f * semi_y + dome.apex[1]).round();
            c.clamp(0.0, (g.dims[1] - 1) as f64) as usize
        });
        TrackerConfig {
            roi: (row(z_top), row(z_bottom) + 1),
            columns,
            threshold: 0.05,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.columns.iter().any(|&c| c >= width) {
            return Err(Error::Config(format!("landmark columns {:?} outside width {width}", self.columns)));
        }
        let (a, b) = self.roi;
        if a < 1 || b + 1 > height || b < a + 3 {
            return Err(Error::Config(format!("ROI rows {a}..{b} invalid for height {height}")));
        }
        Ok(())
    }
}

/// Min and max of the raw signal used for normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn from_values(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Normalization { min, max })
    }

    #[inline]
    pub fn to01(&self, raw: f64) -> f64 {
        (raw - self.min) / (self.max - self.min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateSignal {
    pub timestamps: Vec<f64>,
    /// Record index of each navigator.
    pub records: Vec<usize>,
    pub raw: Vec<f64>,
    pub norm01: Vec<f64>,
    pub norm11: Vec<f64>,
    pub landmark_columns: [usize; N_LANDMARKS],
    pub normalization: Normalization,
}

impl SurrogateSignal {
    /// Normalizes with `norm`, or with the signal's own range when `None`.
    pub fn from_raw(
        timestamps: Vec<f64>,
        records: Vec<usize>,
        raw: Vec<f64>,
        landmark_columns: [usize; N_LANDMARKS],
        norm: Option<Normalization>,
    ) -> Result<Self> {
        if timestamps.len() != raw.len() || records.len() != raw.len() {
            return Err(Error::Shape("signal columns differ in length".into()));
        }
        let normalization = match norm {
            Some(n) => n,
            None => Normalization::from_values(&raw)?,
        };
        let norm01: Vec<f64> = raw.iter().map(|&r| normalization.to01(r)).collect();
        let norm11 = norm01.iter().map(|&v| 2.0 * v - 1.0).collect();
        Ok(SurrogateSignal {
            timestamps,
            records,
            raw,
            norm01,
            norm11,
            landmark_columns,
            normalization,
        })
    }

    /// Same samples renormalized with a fixed range.
    pub fn renormalized(&self, norm: Normalization) -> SurrogateSignal {
        SurrogateSignal::from_raw(
            self.timestamps.clone(),
            self.records.clone(),
            self.raw.clone(),
            self.landmark_columns,
            Some(norm),
        )
        .expect("lengths already consistent")
    }

    /// Range of the samples whose record index is below `end`.
    pub fn normalization_before(&self, end: usize) -> Result<Normalization> {
        let raw: Vec<f64> = self.records.iter().zip(&self.raw).filter(|(r, _)| **r < end).map(|(_, v)| *v).collect();
        Normalization::from_values(&raw)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Linear interpolation of `norm11` at time `t`.
    pub fn state_at(&self, t: f64) -> Result<f64> {
        interpolate(&self.timestamps, &self.norm11, t)
    }

    /// Linear interpolation of `norm01` at time `t`.
    pub fn state01_at(&self, t: f64) -> Result<f64> {
        interpolate(&self.timestamps, &self.norm01, t)
    }

    pub const CSV_HEADER: &'static str = "timestamp,raw,norm01,norm11";

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# columns {}\n# range {:?} {:?}\n{}\n",
            self.landmark_columns.map(|c| c.to_string()).join(" "),
            self.normalization.min,
            self.normalization.max,
            Self::CSV_HEADER
        );
        for i in 0..self.len() {
            writeln!(
                out,
                "{:?},{:?},{:?},{:?}",
                self.timestamps[i], self.raw[i], self.norm01[i], self.norm11[i]
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a signal CSV. Record indices are recovered from the
    /// acquisition timing `index = round(t / dt)`.
    pub fn read_csv(path: &Path, dt: f64) -> Result<SurrogateSignal> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::format("signal", path, m);
        let mut columns = None;
        let mut range = None;
        let (mut ts, mut raw) = (Vec::new(), Vec::new());
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# columns ") {
                let c: Vec<usize> = rest.split_whitespace().filter_map(|w| w.parse().ok()).collect();
                columns = c.try_into().ok();
            } else if let Some(rest) = line.strip_prefix("# range ") {
                let r: Vec<f64> = rest.split_whitespace().filter_map(|w| w.parse().ok()).collect();
                if r.len() == 2 {
                    range = Some(Normalization { min: r[0], max: r[1] });
                }
            } else if line == Self::CSV_HEADER || line.trim().is_empty() {
                continue;
            } else {
                let f: Vec<f64> = line.split(',').filter_map(|w| w.parse().ok()).collect();
                if f.len() != 4 {
                    return Err(bad(format!("bad row `{line}`")));
                }
                ts.push(f[0]);
                raw.push(f[1]);
            }
        }
        let columns = columns.ok_or_else(|| bad("missing landmark columns".into()))?;
        let range = range.ok_or_else(|| bad("missing normalization range".into()))?;
        let records = ts.iter().map(|t| (t / dt).round() as usize).collect();
        SurrogateSignal::from_raw(ts, records, raw, columns, Some(range))
    }
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> Result<f64> {
    let (lo, hi) = match (ts.first(), ts.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::EmptyBatch),
    };
    if !(t >= lo && t <= hi) {
        return Err(Error::Extrapolation { t, lo, hi });
    }
    let k = ts.partition_point(|&s| s < t);
    if ts[k] == t {
        return Ok(vs[k]);
    }
    let w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
    Ok(vs[k - 1] + w * (vs[k] - vs[k - 1]))
}

/// Network input state of a record: the matching navigator sample, or the
/// interpolation between the neighbouring ones for coronal slices.
pub fn state_for_record(signal: &SurrogateSignal, record: &SliceRecord) -> Result<f64> {
    signal.state_at(record.timestamp)
}

/// Sub-pixel diaphragm row in one column of a navigator image.
pub fn edge_row(img: &Image2, column: usize, roi: (usize, usize), threshold: f64) -> Option<f64> {
    let grad = |r: usize| 0.5 * (img.get(column, r + 1) as f64 - img.get(column, r - 1) as f64);
    let (mut best, mut best_g) = (roi.0, f64::NEG_INFINITY);
    for r in roi.0..roi.1 {
        let g = grad(r);
        if g > best_g {
            best = r;
            best_g = g;
        }
    }
    if !(best_g > threshold) {
        return None;
    }
    let (gm, gp) = (grad(best - 1), grad(best + 1));
    let denom = gm - 2.0 * best_g + gp;
    let offset = if denom < 0.0 { (0.5 * (gm - gp) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(best as f64 + offset)
}

/// Raw surrogate value of one navigator, or the failing column.
pub fn track_image(img: &Image2, cfg: &TrackerConfig) -> std::result::Result<f64, usize> {
    let mut sum = 0.0;
    for &c in &cfg.columns {
        sum += edge_row(img, c, cfg.roi, cfg.threshold).ok_or(c)?;
    }
    Ok(-sum / N_LANDMARKS as f64)
}

/// Raw signal of a sequence of navigator images.
pub fn track_images(images: &[&Image2], cfg: &TrackerConfig) -> Result<Vec<f64>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            cfg.validate(img.width, img.height)?;
            track_image(img, cfg).map_err(|column| Error::TrackingFailure { record: i, column })
        })
        .collect()
}

/// Tracks every navigator in `records` (other kinds are skipped) and
/// normalizes with `norm`, or over the tracked range when `None`.
pub fn track_diaphragm(
    records: &[SliceRecord],
    cfg: &TrackerConfig,
    norm: Option<Normalization>,
) -> Result<SurrogateSignal> {
    let navs: Vec<&SliceRecord> = records.iter().filter(|r| r.kind == SliceKind::Navigator).collect();
    if navs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut raw = Vec::with_capacity(navs.len());
    for r in &navs {
        cfg.validate(r.pixels.width, r.pixels.height)?;
        let v = track_image(&r.pixels, cfg).map_err(|column| Error::TrackingFailure {
            record: r.index,
            column,
        })?;
        raw.push(v);
    }
    SurrogateSignal::from_raw(
        navs.iter().map(|r| r.timestamp).collect(),
        navs.iter().map(|r| r.index).collect(),
        raw,
        cfg.columns,
        norm,
    )
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
