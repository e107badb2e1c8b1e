//! Voxel geometry, scalar volumes and 2D slice images, with their raw binary
//! file formats.
//!
//! Both formats are a magic line, `key value...` header lines closed by
//! `end`, then little-endian f32 samples with x varying fastest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8] = b"CPT4D-VOL\n";
pub const SLICE_MAGIC: &[u8] = b"CPT4D-SLC\n";

/// Grid dimensions and voxel spacing (mm). Axis 0 is left-right, axis 1
/// anterior-posterior, axis 2 superior-inferior with the index increasing
/// toward the feet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(format!("every dimension needs at least 2 voxels, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Geometry { dims, spacing })
    }

    pub fn n_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Voxel center `i` to normalized coordinate: 0 -> -1, n-1 -> +1.
    #[inline]
    pub fn to_normalized(&self, axis: usize, i: f64) -> f64 {
        2.0 * i / (self.dims[axis] - 1) as f64 - 1.0
    }

    /// Inverse of [`Geometry::to_normalized`], as a fractional index.
    #[inline]
    pub fn to_index(&self, axis: usize, u: f64) -> f64 {
        (u + 1.0) * 0.5 * (self.dims[axis] - 1) as f64
    }

    /// Distance in mm from the grid center to the voxel centers at +-1.
    #[inline]
    pub fn half_extent_mm(&self, axis: usize) -> f64 {
        0.5 * (self.dims[axis] - 1) as f64 * self.spacing[axis]
    }

    /// Physical position (mm, grid-centered) of voxel center `i`.
    #[inline]
    pub fn index_to_mm(&self, axis: usize, i: f64) -> f64 {
        (i - 0.5 * (self.dims[axis] - 1) as f64) * self.spacing[axis]
    }

    #[inline]
    pub fn mm_to_index(&self, axis: usize, mm: f64) -> f64 {
        mm / self.spacing[axis] + 0.5 * (self.dims[axis] - 1) as f64
    }

    #[inline]
    pub fn normalized_to_mm(&self, axis: usize, u: f64) -> f64 {
        u * self.half_extent_mm(axis)
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }
}

/// Scalar intensity volume, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    pub geometry: Geometry,
    pub data: Vec<f32>,
    /// Breathing amplitude or requested state the volume was produced for.
    pub amplitude: Option<f64>,
    pub seed: Option<u64>,
}

impl VolumeGrid {
    pub fn zeros(geometry: Geometry) -> Self {
        VolumeGrid {
            geometry,
            data: vec![0.0; geometry.n_voxels()],
            amplitude: None,
            seed: None,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.linear_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.geometry.linear_index(i, j, k);
        self.data[idx] = v;
    }

    /// Coronal plane at `y = j`: width nx, height nz.
    pub fn coronal(&self, j: usize) -> Image2 {
        let [nx, _, nz] = self.geometry.dims;
        let mut img = Image2::zeros(nx, nz);
        for k in 0..nz {
            for i in 0..nx {
                img.set(i, k, self.get(i, j, k));
            }
        }
        img
    }

    /// Sagittal plane at `x = i`: width ny, height nz.
    pub fn sagittal(&self, i: usize) -> Image2 {
        let [_, ny, nz] = self.geometry.dims;
        let mut img = Image2::zeros(ny, nz);
        for k in 0..nz {
            for j in 0..ny {
                img.set(j, k, self.get(i, j, k));
            }
        }
        img
    }

    /// Maximum intensity projection along the anterior-posterior axis.
    pub fn mip_ap(&self) -> Image2 {
        let [nx, ny, nz] = self.geometry.dims;
        let mut img = Image2::zeros(nx, nz);
        for k in 0..nz {
            for i in 0..nx {
                let m = (0..ny).map(|j| self.get(i, j, k)).fold(f32::NEG_INFINITY, f32::max);
                img.set(i, k, m);
            }
        }
        img
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let [nx, ny, nz] = self.geometry.dims;
        let [sx, sy, sz] = self.geometry.spacing;
        let mut header = format!("dims {nx} {ny} {nz}\nspacing {sx} {sy} {sz}\n");
        if let Some(a) = self.amplitude {
            writeln!(header, "amplitude {a}").expect("string write");
        }
        if let Some(s) = self.seed {
            writeln!(header, "seed {s}").expect("string write");
        }
        header.push_str("end\n");
        write_raw(path, VOLUME_MAGIC, &header, &self.data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, data) = read_raw(path, VOLUME_MAGIC, "volume")?;
        let bad = |m: &str| Error::format("volume", path, m);
        let dims = header.usize3("dims").ok_or_else(|| bad("dims"))?;
        let spacing = header.f64_3("spacing").ok_or_else(|| bad("spacing"))?;
        let geometry = Geometry::new(dims, spacing).map_err(|_| bad("geometry"))?;
        if data.len() != geometry.n_voxels() {
            return Err(bad("voxel count does not match dims"));
        }
        Ok(VolumeGrid {
            geometry,
            data,
            amplitude: header.get("amplitude").and_then(|v| v.parse().ok()),
            seed: header.get("seed").and_then(|v| v.parse().ok()),
        })
    }
}

/// 2D image, row-major with `width` columns. Rows run superior to inferior.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image2 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image2 {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Binary 8-bit portable graymap; intensity x255, rounded half up.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| to_gray(v)));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    /// Writes the slice format with free-form header entries.
    pub fn write(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut header = format!("dims {} {}\n", self.width, self.height);
        for (k, v) in extra {
            writeln!(header, "{k} {v}").expect("string write");
        }
        header.push_str("end\n");
        write_raw(path, SLICE_MAGIC, &header, &self.data)
    }

    /// Reads a slice file, returning the image and its header entries.
    pub fn read(path: &Path) -> Result<(Self, Header)> {
        let (header, data) = read_raw(path, SLICE_MAGIC, "slice")?;
        let bad = |m: &str| Error::format("slice", path, m);
        let dims = header.get("dims").ok_or_else(|| bad("dims"))?;
        let d: Vec<usize> = dims.split_whitespace().filter_map(|w| w.parse().ok()).collect();
        if d.len() != 2 || d[0] * d[1] != data.len() {
            return Err(bad("pixel count does not match dims"));
        }
        Ok((
            Image2 {
                width: d[0],
                height: d[1],
                data,
            },
            header,
        ))
    }
}

fn to_gray(v: f32) -> u8 {
    let x = (v.clamp(0.0, 1.0) as f64) * 255.0;
    (x + 0.5).floor().min(255.0) as u8
}

/// Parsed `key value...` header lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn usize3(&self, key: &str) -> Option<[usize; 3]> {
        let v: Vec<usize> = self.get(key)?.split_whitespace().filter_map(|w| w.parse().ok()).collect();
        v.try_into().ok()
    }

    fn f64_3(&self, key: &str) -> Option<[f64; 3]> {
        let v: Vec<f64> = self.get(key)?.split_whitespace().filter_map(|w| w.parse().ok()).collect();
        v.try_into().ok()
    }
}

fn write_raw(path: &Path, magic: &[u8], header: &str, data: &[f32]) -> Result<()> {
    let mut out = Vec::with_capacity(magic.len() + header.len() + 4 * data.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_raw(path: &Path, magic: &[u8], kind: &'static str) -> Result<(Header, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(kind, path, m);
    if !bytes.starts_with(magic) {
        return Err(bad("bad magic"));
    }
    let mut pos = magic.len();
    let mut header = Header::default();
    loop {
        let rel = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header not terminated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + rel]).map_err(|_| bad("header is not utf-8"))?;
        pos += rel + 1;
        if line == "end" {
            break;
        }
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        header.entries.push((k.to_string(), v.to_string()));
    }
    let payload = &bytes[pos..];
    if payload.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 samples"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((header, data))
}
