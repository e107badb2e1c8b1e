//! Interleaved cine acquisition: coronal slices sweeping through the lungs,
//! each followed by a sagittal navigator at a fixed position.
//!
//! Record `i` is acquired at `t_i = i * dt` from the phantom at amplitude
//! `a(t_i)`. Even records are coronal, odd records are navigators.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::phantom::{render_plane, Breathing, BreathSpec, GroundTruthMotion, PhantomSpec, Plane};
use crate::volume::{Geometry, Image2};

/// Lowest accepted ratio of validation to training amplitude range.
pub const MIN_VALIDATION_COVERAGE: f64 = 0.6;

/// Fraction of the y extent covered by the coronal stack.
const STACK_SPAN: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SliceKind {
    Coronal,
    Navigator,
}

impl SliceKind {
    pub fn tag(self) -> &'static str {
        match self {
            SliceKind::Coronal => "coronal",
            SliceKind::Navigator => "navigator",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "coronal" => Some(SliceKind::Coronal),
            "navigator" => Some(SliceKind::Navigator),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceRecord {
    pub index: usize,
    pub kind: SliceKind,
    /// y index for coronal slices, x index for navigators.
    pub plane_position: usize,
    pub timestamp: f64,
    /// Ground-truth amplitude. `None` once the record has been stripped for
    /// training or loaded without the sidecar.
    pub amplitude_gt: Option<f64>,
    pub pixels: Image2,
}

impl SliceRecord {
    pub fn plane(&self) -> Plane {
        match self.kind {
            SliceKind::Coronal => Plane::Coronal(self.plane_position),
            SliceKind::Navigator => Plane::Sagittal(self.plane_position),
        }
    }

    /// Normalized 3D coordinate of pixel `(col, row)`.
    #[inline]
    pub fn pixel_coord(&self, geometry: &Geometry, col: usize, row: usize) -> [f64; 3] {
        plane_coord(geometry, self.plane(), col, row)
    }
}

/// Normalized 3D coordinate of pixel `(col, row)` on `plane`.
#[inline]
pub fn plane_coord(geometry: &Geometry, plane: Plane, col: usize, row: usize) -> [f64; 3] {
    let z = geometry.to_normalized(2, row as f64);
    match plane {
        Plane::Coronal(j) => [
            geometry.to_normalized(0, col as f64),
            geometry.to_normalized(1, j as f64),
            z,
        ],
        Plane::Sagittal(i) => [
            geometry.to_normalized(0, i as f64),
            geometry.to_normalized(1, col as f64),
            z,
        ],
    }
}

/// All pixel-center coordinates of a plane, row-major, with one row per pixel.
pub fn plane_coords(geometry: &Geometry, plane: Plane) -> Matrix<f64> {
    let [nx, ny, nz] = geometry.dims;
    let width = match plane {
        Plane::Coronal(_) => nx,
        Plane::Sagittal(_) => ny,
    };
    let mut data = Vec::with_capacity(width * nz * 3);
    for row in 0..nz {
        for col in 0..width {
            data.extend(plane_coord(geometry, plane, col, row));
        }
    }
    Matrix::from_vec(width * nz, 3, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceDataset {
    pub records: Vec<SliceRecord>,
    pub geometry: Geometry,
    /// Records before this index belong to the training split.
    pub split_index: usize,
}

/// Evenly spaced coronal y indices covering the central part of the grid.
pub fn coronal_positions(ny: usize, n: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![ny / 2; n];
    }
    let mut step = ((STACK_SPAN * (ny - 1) as f64) / (n - 1) as f64).round().max(1.0) as usize;
    if step * (n - 1) > ny - 1 {
        step = (ny - 1) / (n - 1);
    }
    let start = (ny - 1 - step * (n - 1)) / 2;
    (0..n).map(|p| start + p * step).collect()
}

/// x index of the navigator plane: through the right lung center.
pub fn navigator_position(spec: &PhantomSpec) -> usize {
    let g = &spec.geometry;
    let i = g.mm_to_index(0, spec.right_lung().shape.center[0]).round();
    i.clamp(0.0, (g.dims[0] - 1) as f64) as usize
}

/// Simulates `n_sweeps` passes over `n_coronal_positions` coronal slices,
/// each slice followed by a navigator.
pub fn acquire(
    spec: &PhantomSpec,
    motion: &GroundTruthMotion,
    breath: &BreathSpec,
    n_coronal_positions: usize,
    n_sweeps: usize,
) -> Result<SliceDataset> {
    let ny = spec.geometry.dims[1];
    if n_coronal_positions == 0 || n_coronal_positions > ny {
        return Err(Error::Config(format!(
            "{n_coronal_positions} coronal positions for a grid {ny} voxels deep"
        )));
    }
    if n_sweeps == 0 {
        return Err(Error::Config("at least one sweep is required".into()));
    }
    let breathing = Breathing::new(*breath)?;
    let positions = coronal_positions(ny, n_coronal_positions);
    let nav = navigator_position(spec);
    let n = 2 * n_coronal_positions * n_sweeps;
    let records = (0..n)
        .map(|index| {
            let timestamp = index as f64 * breath.dt;
            let a = breathing.amplitude(timestamp);
            let (kind, plane_position) = if index % 2 == 0 {
                (SliceKind::Coronal, positions[(index / 2) % n_coronal_positions])
            } else {
                (SliceKind::Navigator, nav)
            };
            let mut rec = SliceRecord {
                index,
                kind,
                plane_position,
                timestamp,
                amplitude_gt: Some(a),
                pixels: Image2::zeros(0, 0),
            };
            rec.pixels = render_plane(spec, motion, a, rec.plane());
            rec
        })
        .collect();
    Ok(SliceDataset {
        records,
        geometry: spec.geometry,
        split_index: n,
    })
}

impl SliceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn navigators(&self) -> impl Iterator<Item = &SliceRecord> {
        self.records.iter().filter(|r| r.kind == SliceKind::Navigator)
    }

    pub fn coronals(&self) -> impl Iterator<Item = &SliceRecord> {
        self.records.iter().filter(|r| r.kind == SliceKind::Coronal)
    }

    /// Distinct coronal positions in acquisition order.
    pub fn coronal_positions(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for r in self.coronals() {
            if !out.contains(&r.plane_position) {
                out.push(r.plane_position);
            }
        }
        out
    }

    fn part(&self, records: &[SliceRecord]) -> SliceDataset {
        SliceDataset {
            records: records.to_vec(),
            geometry: self.geometry,
            split_index: records.len(),
        }
    }

    /// Records before the split boundary.
    pub fn training_split(&self) -> SliceDataset {
        self.part(&self.records[..self.split_index.min(self.len())])
    }

    /// Records from the split boundary on.
    pub fn validation_split(&self) -> SliceDataset {
        self.part(&self.records[self.split_index.min(self.len())..])
    }

    /// Copy with every ground-truth amplitude removed.
    pub fn without_ground_truth(&self) -> SliceDataset {
        let mut d = self.clone();
        for r in &mut d.records {
            r.amplitude_gt = None;
        }
        d
    }

    /// Writes `manifest.txt`, one slice file per record under `slices/`, and
    /// the ground-truth amplitudes to `ground_truth_path` when given.
    pub fn write(&self, dir: &Path, ground_truth_path: Option<&Path>) -> Result<()> {
        let slices = dir.join("slices");
        fs::create_dir_all(&slices).map_err(|e| Error::io(&slices, e))?;
        let g = &self.geometry;
        let mut manifest = format!(
            "# dims {} {} {}\n# spacing {} {} {}\n# split {}\n# index kind plane_position timestamp file\n",
            g.dims[0], g.dims[1], g.dims[2], g.spacing[0], g.spacing[1], g.spacing[2], self.split_index
        );
        let mut truth = String::from("# index timestamp amplitude\n");
        for r in &self.records {
            let file = format!("slices/{:05}.slc", r.index);
            r.pixels.write(
                &dir.join(&file),
                &[
                    ("kind", r.kind.tag().to_string()),
                    ("position", r.plane_position.to_string()),
                    ("timestamp", format!("{:?}", r.timestamp)),
                ],
            )?;
            writeln!(
                manifest,
                "{} {} {} {:?} {}",
                r.index,
                r.kind.tag(),
                r.plane_position,
                r.timestamp,
                file
            )
            .expect("string write");
            if let Some(a) = r.amplitude_gt {
                writeln!(truth, "{} {:?} {:?}", r.index, r.timestamp, a).expect("string write");
            }
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        if let Some(p) = ground_truth_path {
            fs::write(p, truth).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    /// Reads a dataset written by [`SliceDataset::write`]. Amplitudes are
    /// only restored when a ground-truth file is given.
    pub fn read(dir: &Path, ground_truth_path: Option<&Path>) -> Result<SliceDataset> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |m: String| Error::format("manifest", &path, m);
        let mut dims = None;
        let mut spacing = None;
        let mut split = None;
        let mut records = Vec::new();
        for line in text.lines() {
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.is_empty() {
                continue;
            }
            if words[0] == "#" {
                match words.get(1).copied() {
                    Some("dims") => dims = parse_n::<usize, 3>(&words[2..]),
                    Some("spacing") => spacing = parse_n::<f64, 3>(&words[2..]),
                    Some("split") => split = words.get(2).and_then(|w| w.parse::<usize>().ok()),
                    _ => {}
                }
                continue;
            }
            if words.len() != 5 {
                return Err(bad(format!("expected 5 fields, got `{line}`")));
            }
            let index: usize = words[0].parse().map_err(|_| bad(format!("index `{}`", words[0])))?;
            let kind = SliceKind::from_tag(words[1]).ok_or_else(|| bad(format!("kind `{}`", words[1])))?;
            let plane_position = words[2].parse().map_err(|_| bad(format!("position `{}`", words[2])))?;
            let timestamp = words[3].parse().map_err(|_| bad(format!("timestamp `{}`", words[3])))?;
            let (pixels, _) = Image2::read(&dir.join(words[4]))?;
            records.push(SliceRecord {
                index,
                kind,
                plane_position,
                timestamp,
                amplitude_gt: None,
                pixels,
            });
        }
        let dims = dims.ok_or_else(|| bad("missing dims".into()))?;
        let spacing = spacing.ok_or_else(|| bad("missing spacing".into()))?;
        let geometry = Geometry::new(dims, spacing)?;
        if let Some(p) = ground_truth_path {
            let truth = read_ground_truth(p)?;
            for r in &mut records {
                r.amplitude_gt = truth.get(r.index).copied().flatten();
            }
        }
        let split_index = split.unwrap_or(records.len()).min(records.len());
        Ok(SliceDataset {
            records,
            geometry,
            split_index,
        })
    }
}

fn parse_n<T: std::str::FromStr + Copy + Default, const N: usize>(words: &[&str]) -> Option<[T; N]> {
    if words.len() != N {
        return None;
    }
    let mut out = [T::default(); N];
    for (o, w) in out.iter_mut().zip(words) {
        *o = w.parse().ok()?;
    }
    Some(out)
}

/// Amplitude per record index from a ground-truth sidecar.
pub fn read_ground_truth(path: &Path) -> Result<Vec<Option<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<Option<f64>> = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let w: Vec<&str> = line.split_whitespace().collect();
        let parsed = (w.len() == 3)
            .then(|| Some((w[0].parse::<usize>().ok()?, w[2].parse::<f64>().ok()?)))
            .flatten();
        let (i, a) = parsed.ok_or_else(|| Error::format("ground truth", path, format!("bad line `{line}`")))?;
        if out.len() <= i {
            out.resize(i + 1, None);
        }
        out[i] = Some(a);
    }
    Ok(out)
}

/// Temporal prefix/suffix split at `floor(n * num / den)`.
pub fn split(dataset: &SliceDataset, num: usize, den: usize) -> Result<(SliceDataset, SliceDataset)> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if num == 0 || num >= den {
        return Err(Error::Config(format!("split fraction {num}/{den} outside (0, 1)")));
    }
    let cut = dataset.len() * num / den;
    Ok((dataset.part(&dataset.records[..cut]), dataset.part(&dataset.records[cut..])))
}

/// Sets the split boundary of `dataset` to `floor(n * num / den)`.
pub fn mark_split(dataset: &mut SliceDataset, num: usize, den: usize) -> Result<()> {
    let (train, _) = split(dataset, num, den)?;
    dataset.split_index = train.len();
    Ok(())
}

/// Ratio of the validation amplitude range to the training amplitude range.
pub fn validation_coverage(train: &SliceDataset, val: &SliceDataset) -> Option<f64> {
    let range = |d: &SliceDataset| {
        let a: Vec<f64> = d.records.iter().filter_map(|r| r.amplitude_gt).collect();
        let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (!a.is_empty()).then_some(hi - lo)
    };
    let (t, v) = (range(train)?, range(val)?);
    (t > 0.0).then_some(v / t)
}

/// Rejects splits whose validation part spans too little of the breathing range.
pub fn check_validation_coverage(train: &SliceDataset, val: &SliceDataset) -> Result<f64> {
    match validation_coverage(train, val) {
        Some(c) if c >= MIN_VALIDATION_COVERAGE => Ok(c),
        other => Err(Error::Config(format!(
            "validation split covers {:.2} of the training amplitude range, need {MIN_VALIDATION_COVERAGE}",
            other.unwrap_or(0.0)
        ))),
    }
}

/// RNG for the draws tied to one record.
pub fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Draws `n` pixels uniformly with replacement, or every pixel once in
/// row-major order when `dense` is set. Returns normalized coordinates and
/// the pixel intensities.
pub fn sample_points(
    record: &SliceRecord,
    geometry: &Geometry,
    n: usize,
    seed: u64,
    dense: bool,
) -> Result<(Matrix<f64>, Vec<f64>)> {
    let img = &record.pixels;
    let n_pix = img.width * img.height;
    if n_pix == 0 {
        return Err(Error::EmptyBatch);
    }
    let picks: Vec<usize> = if dense {
        (0..n_pix).collect()
    } else {
        let mut rng = record_rng(seed, record.index);
        (0..n).map(|_| rng.gen_range(0..n_pix)).collect()
    };
    let mut coords = Vec::with_capacity(picks.len() * 3);
    let mut values = Vec::with_capacity(picks.len());
    for p in picks {
        let (col, row) = (p % img.width, p / img.width);
        coords.extend(record.pixel_coord(geometry, col, row));
        values.push(img.data[p] as f64);
    }
    Ok((Matrix::from_vec(values.len(), 3, coords), values))
}
