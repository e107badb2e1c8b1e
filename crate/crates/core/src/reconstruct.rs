//! Volume reconstruction at an arbitrary respiratory state, and the
//! amplitude-sorting baseline.
//!
//! The network path evaluates every voxel center `x` of the target grid in
//! chunks: `phi = f_TMN(x, s)`, then `I = f_SAN(x + phi)`. The baseline
//! splits the surrogate range into equal bins and stacks, per coronal
//! position, the slice whose state is closest to the bin center.

use std::fmt::Write as _;
use std::time::Instant;

use crate::acquisition::{SliceDataset, SliceKind, SliceRecord};
use crate::error::{Error, Result};
use crate::networks::{tmn_input, warp, SanModel, TmnModel};
use crate::nn::{Matrix, Real};
use crate::phantom::Plane;
use crate::surrogate::{state_for_record, SurrogateSignal};
use crate::volume::{Geometry, Image2, VolumeGrid};

pub const DEFAULT_CHUNK: usize = 16_384;

/// A requested respiratory state in either normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum State {
    /// `[0, 1]`, as used for evaluation and binning.
    Norm01(f64),
    /// `[-1, 1]`, the network input convention.
    Norm11(f64),
}

impl State {
    pub fn norm11(self) -> f64 {
        match self {
            State::Norm01(v) => 2.0 * v - 1.0,
            State::Norm11(v) => v,
        }
    }
}

/// Units of the motion network output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DvfUnits {
    /// Normalized coordinate units, the training convention.
    Normalized,
    /// Voxels; rescaled by `2 / (n - 1)` per axis before warping.
    Voxel,
}

impl DvfUnits {
    pub fn tag(self) -> &'static str {
        match self {
            DvfUnits::Normalized => "normalized",
            DvfUnits::Voxel => "voxel",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "normalized" => Some(DvfUnits::Normalized),
            "voxel" => Some(DvfUnits::Voxel),
            _ => None,
        }
    }
}

/// What to do with a state outside `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangePolicy {
    Reject,
    /// Clamp into range and report a warning.
    Clamp,
    /// Evaluate the networks outside their training range.
    Extrapolate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconRequest {
    pub state: State,
    pub geometry: Geometry,
    pub chunk: usize,
    pub units: DvfUnits,
    pub policy: RangePolicy,
}

impl ReconRequest {
    pub fn new(state: State, geometry: Geometry) -> Self {
        ReconRequest {
            state,
            geometry,
            chunk: DEFAULT_CHUNK,
            units: DvfUnits::Normalized,
            policy: RangePolicy::Clamp,
        }
    }
}

/// A reconstructed volume and any warning raised on the way.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub volume: VolumeGrid,
    pub warning: Option<String>,
}

/// Resolves the network input state of a request.
pub fn resolve_state(state: State, policy: RangePolicy) -> Result<(f64, Option<String>)> {
    let s = state.norm11();
    if !s.is_finite() {
        return Err(Error::StateOutOfRange(s));
    }
    if (-1.0..=1.0).contains(&s) {
        return Ok((s, None));
    }
    match policy {
        RangePolicy::Reject => Err(Error::StateOutOfRange(s)),
        RangePolicy::Clamp => {
            let c = s.clamp(-1.0, 1.0);
            Ok((c, Some(format!("state {s} clamped to {c}"))))
        }
        RangePolicy::Extrapolate => Ok((s, Some(format!("state {s} outside the training range")))),
    }
}

/// Normalized coordinates of voxel centers `start..end` in x-fastest order.
fn grid_chunk<T: Real>(g: &Geometry, start: usize, end: usize) -> Matrix<T> {
    let [nx, ny, _] = g.dims;
    let mut data = Vec::with_capacity((end - start) * 3);
    for idx in start..end {
        let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
        data.push(T::lit(g.to_normalized(0, i as f64)));
        data.push(T::lit(g.to_normalized(1, j as f64)));
        data.push(T::lit(g.to_normalized(2, k as f64)));
    }
    Matrix::from_vec(end - start, 3, data)
}

/// Intensities at arbitrary points for one state, with optional voxel-unit
/// rescaling of the displacement.
pub fn query<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    x: &Matrix<T>,
    s: f64,
    units: DvfUnits,
    geometry: &Geometry,
) -> Result<Vec<T>> {
    let states = vec![T::lit(s); x.rows()];
    let mut phi = tmn.mlp.predict(&tmn_input(x, &states)?)?;
    if units == DvfUnits::Voxel {
        let scale: [T; 3] = [0, 1, 2].map(|a| T::lit(2.0 / (geometry.dims[a] - 1) as f64));
        for i in 0..phi.rows() {
            for (v, s) in phi.row_mut(i).iter_mut().zip(scale) {
                *v = *v * s;
            }
        }
    }
    san.intensity(&warp(x, &phi)?)
}

/// Renders the composed model on the request grid. `trained` is the
/// geometry recorded with the model.
pub fn reconstruct<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    trained: &Geometry,
    req: &ReconRequest,
) -> Result<Reconstruction> {
    if req.geometry != *trained {
        return Err(Error::Geometry(format!(
            "requested grid {:?} / {:?} differs from the training grid {:?} / {:?}",
            req.geometry.dims, req.geometry.spacing, trained.dims, trained.spacing
        )));
    }
    if req.chunk == 0 {
        return Err(Error::Config("chunk size must be positive".into()));
    }
    let (s, warning) = resolve_state(req.state, req.policy)?;
    let g = &req.geometry;
    let n = g.n_voxels();
    let mut volume = VolumeGrid::zeros(*g);
    let mut start = 0;
    while start < n {
        let end = (start + req.chunk).min(n);
        let v = query(tmn, san, &grid_chunk(g, start, end), s, req.units, g)?;
        for (o, p) in volume.data[start..end].iter_mut().zip(v) {
            *o = p.f64() as f32;
        }
        start = end;
    }
    volume.amplitude = Some(s);
    Ok(Reconstruction { volume, warning })
}

/// Reconstructs each state in turn, timing every volume in seconds.
pub fn reconstruct_series<T: Real>(
    tmn: &TmnModel<T>,
    san: &SanModel<T>,
    trained: &Geometry,
    base: &ReconRequest,
    states: &[State],
) -> Result<Vec<(Reconstruction, f64)>> {
    states
        .iter()
        .map(|&state| {
            let t0 = Instant::now();
            let r = reconstruct(tmn, san, trained, &ReconRequest { state, ..*base })?;
            Ok((r, t0.elapsed().as_secs_f64()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SortingConfig {
    pub n_bins: usize,
}

impl Default for SortingConfig {
    fn default() -> Self {
        SortingConfig { n_bins: 10 }
    }
}

impl SortingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::Config(format!("at least 2 bins required, got {}", self.n_bins)));
        }
        Ok(())
    }

    pub fn center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) / self.n_bins as f64
    }

    /// Bin holding a `[0, 1]` state; out-of-range states go to the end bins.
    pub fn bin_of(&self, s01: f64) -> usize {
        ((s01 * self.n_bins as f64).floor().max(0.0) as usize).min(self.n_bins - 1)
    }
}

/// A coronal position with no slice inside the requested bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Gap {
    pub position: usize,
    /// Record borrowed instead, and its state.
    pub record: usize,
    pub state01: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub bin: usize,
    pub center: f64,
    pub gaps: Vec<Gap>,
    /// y indices with no acquired position, filled from the nearest one.
    pub filled_rows: usize,
}

impl GapReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "bin {} center {:.4}: {} gap(s), {} unacquired y rows filled from the nearest position\n",
            self.bin,
            self.center,
            self.gaps.len(),
            self.filled_rows
        );
        for g in &self.gaps {
            writeln!(out, "  position {} borrowed record {} at state {:.4}", g.position, g.record, g.state01)
                .expect("string write");
        }
        out
    }
}

/// Binned volume: per coronal position, the slice nearest the bin center
/// among those inside the bin, otherwise the nearest overall (a gap).
/// Records the signal cannot reach are ignored.
pub fn reconstruct_baseline(
    dataset: &SliceDataset,
    signal: &SurrogateSignal,
    cfg: &SortingConfig,
    bin: usize,
) -> Result<(VolumeGrid, GapReport)> {
    cfg.validate()?;
    if bin >= cfg.n_bins {
        return Err(Error::Config(format!("bin {bin} of {}", cfg.n_bins)));
    }
    let candidates: Vec<(&SliceRecord, f64)> = dataset
        .records
        .iter()
        .filter(|r| r.kind == SliceKind::Coronal)
        .filter_map(|r| state_for_record(signal, r).ok().map(|s| (r, 0.5 * (s + 1.0))))
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let center = cfg.center(bin);
    let mut positions: Vec<usize> = candidates.iter().map(|c| c.0.plane_position).collect();
    positions.sort_unstable();
    positions.dedup();

    let mut gaps = Vec::new();
    let mut chosen: Vec<(usize, &Image2)> = Vec::with_capacity(positions.len());
    for &p in &positions {
        let at_p: Vec<(&SliceRecord, f64)> = candidates.iter().filter(|c| c.0.plane_position == p).copied().collect();
        let in_bin: Vec<(&SliceRecord, f64)> = at_p.iter().filter(|c| cfg.bin_of(c.1) == bin).copied().collect();
        let in_bin = nearest_to(&in_bin, center);
        let pick = match in_bin {
            Some(c) => c,
            None => {
                let c = nearest_to(&at_p, center).expect("position has a slice");
                gaps.push(Gap {
                    position: p,
                    record: c.0.index,
                    state01: c.1,
                });
                c
            }
        };
        chosen.push((p, &pick.0.pixels));
    }

    let g = dataset.geometry;
    let [nx, ny, nz] = g.dims;
    let mut volume = VolumeGrid::zeros(g);
    let mut filled_rows = 0;
    for j in 0..ny {
        let (p, img) = chosen
            .iter()
            .min_by_key(|(p, _)| (p.abs_diff(j), *p))
            .expect("at least one position");
        if *p != j {
            filled_rows += 1;
        }
        if img.width != nx || img.height != nz {
            return Err(Error::Geometry(format!(
                "coronal slice {}x{} does not fit grid {:?}",
                img.width, img.height, g.dims
            )));
        }
        for k in 0..nz {
            for i in 0..nx {
                volume.set(i, j, k, img.get(i, k));
            }
        }
    }
    volume.amplitude = Some(center);
    Ok((
        volume,
        GapReport {
            bin,
            center,
            gaps,
            filled_rows,
        },
    ))
}

fn nearest_to<'a>(c: &[(&'a SliceRecord, f64)], center: f64) -> Option<(&'a SliceRecord, f64)> {
    c.iter()
        .min_by(|a, b| (a.1 - center).abs().total_cmp(&(b.1 - center).abs()).then(a.0.index.cmp(&b.0.index)))
        .copied()
}

/// One plane of a volume.
pub fn extract_plane(volume: &VolumeGrid, plane: Plane) -> Image2 {
    match plane {
        Plane::Coronal(j) => volume.coronal(j),
        Plane::Sagittal(i) => volume.sagittal(i),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::acquire;
    use crate::networks::NetShape;
    use crate::phantom::{render_volume, BreathSpec, GroundTruthMotion, PhantomSpec};
    use crate::surrogate::Normalization;

    fn shape(width: usize, depth: usize) -> NetShape {
        NetShape {
            width,
            depth,
            omega0: 30.0,
            omega_hidden: 1.0,
        }
    }

    fn small_geometry() -> Geometry {
        Geometry::new([12, 10, 8], [4.0, 4.0, 6.0]).unwrap()
    }

    #[test]
    fn zero_motion_renders_the_template() {
        let g = small_geometry();
        let mut tmn = TmnModel::new(shape(8, 2), 0).unwrap();
        for l in tmn.mlp.layers_mut() {
            l.weight.as_mut_slice().iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let san = SanModel::new(shape(16, 4), 1).unwrap();
        let r = reconstruct(&tmn, &san, &g, &ReconRequest::new(State::Norm01(0.3), g)).unwrap();
        let x = grid_chunk::<f64>(&g, 0, g.n_voxels());
        let want: Vec<f32> = san.intensity(&x).unwrap().iter().map(|&v| v as f32).collect();
        assert_eq!(r.volume.data, want);
    }

    #[test]
    fn chunking_and_repeats_are_bit_identical() {
        let g = small_geometry();
        let tmn = TmnModel::new(shape(8, 3), 2).unwrap();
        let san = SanModel::new(shape(16, 4), 3).unwrap();
        let base = ReconRequest::new(State::Norm11(0.25), g);
        let a = reconstruct(&tmn, &san, &g, &ReconRequest { chunk: 7, ..base }).unwrap();
        let b = reconstruct(&tmn, &san, &g, &ReconRequest { chunk: 100_000, ..base }).unwrap();
        assert_eq!(a, b);
        let s = reconstruct_series(&tmn, &san, &g, &base, &[base.state, base.state]).unwrap();
        assert_eq!(s[0].0, s[1].0);
    }

    #[test]
    fn geometry_and_state_checks() {
        let g = small_geometry();
        let tmn = TmnModel::new(shape(4, 2), 2).unwrap();
        let san = SanModel::new(shape(4, 2), 3).unwrap();
        let other = Geometry::new([12, 10, 9], [4.0, 4.0, 6.0]).unwrap();
        let req = ReconRequest::new(State::Norm11(0.0), other);
        assert!(matches!(reconstruct(&tmn, &san, &g, &req), Err(Error::Geometry(_))));
        let req = ReconRequest {
            policy: RangePolicy::Reject,
            ..ReconRequest::new(State::Norm11(1.5), g)
        };
        assert!(matches!(reconstruct(&tmn, &san, &g, &req), Err(Error::StateOutOfRange(_))));
        let r = reconstruct(&tmn, &san, &g, &ReconRequest::new(State::Norm11(1.5), g)).unwrap();
        assert!(r.warning.is_some());
        assert_eq!(r.volume.amplitude, Some(1.0));
    }

    #[test]
    fn voxel_units_rescale_the_displacement() {
        let g = small_geometry();
        let tmn = TmnModel::new(shape(8, 2), 4).unwrap();
        let san = SanModel::new(shape(16, 4), 5).unwrap();
        let x = grid_chunk::<f64>(&g, 0, 50);
        let a = query(&tmn, &san, &x, 0.1, DvfUnits::Normalized, &g).unwrap();
        let b = query(&tmn, &san, &x, 0.1, DvfUnits::Voxel, &g).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_motion_baseline_restacks_the_static_phantom() {
        let g = small_geometry();
        let spec = PhantomSpec::new(g, 0);
        let motion = GroundTruthMotion::zero(&spec);
        let still = BreathSpec::still(100.0, 0.5);
        let d = acquire(&spec, &motion, &still, 10, 2).unwrap();
        let ts: Vec<f64> = d.navigators().map(|r| r.timestamp).collect();
        let idx: Vec<usize> = d.navigators().map(|r| r.index).collect();
        let raw: Vec<f64> = (0..ts.len()).map(|i| i as f64).collect();
        let signal =
            SurrogateSignal::from_raw(ts, idx, raw, [0; 5], Some(Normalization { min: 0.0, max: 100.0 })).unwrap();
        let truth = render_volume(&spec, &motion, 0.0);
        for bin in [0, 4, 9] {
            let (v, rep) = reconstruct_baseline(&d, &signal, &SortingConfig::default(), bin).unwrap();
            assert_eq!(v.data, truth.data);
            assert_eq!(rep.filled_rows, 0);
        }
    }

    #[test]
    fn exact_bin_centers_leave_no_gaps() {
        let g = small_geometry();
        let spec = PhantomSpec::new(g, 0);
        let motion = GroundTruthMotion::for_phantom(&spec);
        let d = acquire(&spec, &motion, &BreathSpec::default(), 2, 10).unwrap();
        // one signal sample per record, coronal slice m sitting on center m % 5
        let cfg = SortingConfig { n_bins: 5 };
        let ts: Vec<f64> = d.records.iter().map(|r| r.timestamp).collect();
        let idx: Vec<usize> = d.records.iter().map(|r| r.index).collect();
        let raw: Vec<f64> = idx.iter().map(|i| cfg.center((i / 2) % 5)).collect();
        let signal =
            SurrogateSignal::from_raw(ts, idx, raw, [0; 5], Some(Normalization { min: 0.0, max: 1.0 })).unwrap();
        for bin in 0..5 {
            let (_, rep) = reconstruct_baseline(&d, &signal, &cfg, bin).unwrap();
            assert!(rep.gaps.is_empty(), "{}", rep.to_text());
        }
        assert!(reconstruct_baseline(&d, &signal, &cfg, 5).is_err());
        assert!(reconstruct_baseline(&d, &signal, &SortingConfig { n_bins: 1 }, 0).is_err());
    }
}
