//! Analytic breathing thorax phantom.
//!
//! Positions are in mm relative to the grid center, with z increasing toward
//! the feet. The anatomy is a body ellipsoid holding two lungs whose bases
//! are paraboloid diaphragm domes, a liver under the right dome, and
//! branching vessels inside each lung. Volumes at breathing amplitude `a` are
//! sampled by pull-back, `I(x, a) = A(x + phi_gt(x, a))`, so `a = 0` is the
//! reference (end-exhale) anatomy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::volume::{Geometry, Image2, VolumeGrid};

/// Half extents (mm) of the default 96 x 96 x 64 grid at 2 x 2 x 3.5 mm, the
/// frame the default layout is written in.
const LAYOUT_HALF_EXTENT: [f64; 3] = [95.0, 95.0, 110.25];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi: [f64; 3],
}

impl Ellipsoid {
    /// Normalized radius: below 1 inside, 1 on the surface.
    #[inline]
    pub fn radius(&self, p: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let u = (p[k] - self.center[k]) / self.semi[k];
            s += u * u;
        }
        s.sqrt()
    }

    /// First-order signed distance (mm), exact on the surface.
    fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let q = self.radius(p);
        if q == 0.0 {
            return -self.semi.iter().cloned().fold(f64::INFINITY, f64::min);
        }
        let mut g2 = 0.0;
        for k in 0..3 {
            let d = (p[k] - self.center[k]) / (self.semi[k] * self.semi[k] * q);
            g2 += d * d;
        }
        (q - 1.0) / g2.sqrt()
    }
}

/// Tube of constant radius around a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl Capsule {
    pub fn axis_distance(&self, p: [f64; 3]) -> f64 {
        let ab = sub(self.b, self.a);
        let ap = sub(p, self.a);
        let t = (dot(ap, ab) / dot(ab, ab)).clamp(0.0, 1.0);
        let c = [self.a[0] + t * ab[0], self.a[1] + t * ab[1], self.a[2] + t * ab[2]];
        norm(sub(p, c))
    }

    fn signed_distance(&self, p: [f64; 3]) -> f64 {
        self.axis_distance(p) - self.radius
    }
}

/// Paraboloid diaphragm surface `z = apex_z + curvature * r^2`, opening
/// toward the feet; `r` is the transverse distance from the apex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dome {
    pub apex: [f64; 3],
    pub curvature: f64,
}

impl Dome {
    #[inline]
    pub fn z_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.apex[0];
        let dy = y - self.apex[1];
        self.apex[2] + self.curvature * (dx * dx + dy * dy)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lung {
    pub shape: Ellipsoid,
    pub dome: Dome,
    pub vessels: Vec<Capsule>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intensities {
    pub background: f64,
    pub body: f64,
    pub lung: f64,
    pub liver: f64,
    pub vessel: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities {
            background: 0.02,
            body: 0.5,
            lung: 0.15,
            liver: 0.55,
            vessel: 0.85,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub geometry: Geometry,
    pub body: Ellipsoid,
    /// Right lung first.
    pub lungs: [Lung; 2],
    /// Clipped to the region under the right dome.
    pub liver: Ellipsoid,
    /// Logistic scale (mm) of the lung-to-abdomen transition at the domes.
    pub dome_width: f64,
    pub intensities: Intensities,
    pub antialias: bool,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn default_geometry() -> Geometry {
        Geometry::new([96, 96, 64], [2.0, 2.0, 3.5]).expect("valid default geometry")
    }

    /// Default layout scaled to the grid, with vessels drawn from `seed`.
    pub fn new(geometry: Geometry, seed: u64) -> Self {
        let s = [0, 1, 2].map(|k| geometry.half_extent_mm(k) / LAYOUT_HALF_EXTENT[k]);
        let at = |p: [f64; 3]| [p[0] * s[0], p[1] * s[1], p[2] * s[2]];
        let body = Ellipsoid {
            center: [0.0; 3],
            semi: at([85.0, 70.0, 108.0]),
        };
        let lung = |side: f64| {
            let shape = Ellipsoid {
                center: at([side * 40.0, 0.0, -25.0]),
                semi: at([30.0, 45.0, 70.0]),
            };
            let dome = Dome {
                apex: at([side * 40.0, 0.0, 20.0]),
                curvature: 1.0 / (60.0 * s[0].min(s[1]).powi(2) / s[2]),
            };
            Lung {
                shape,
                dome,
                vessels: Vec::new(),
            }
        };
        let mut lungs = [lung(-1.0), lung(1.0)];
        let liver = Ellipsoid {
            center: at([-35.0, 0.0, 60.0]),
            semi: at([55.0, 60.0, 70.0]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voxel = geometry.spacing[0].min(geometry.spacing[1]);
        for l in lungs.iter_mut() {
            l.vessels = vessel_tree(&mut rng, l, voxel);
        }
        PhantomSpec {
            geometry,
            body,
            lungs,
            liver,
            dome_width: 2.0,
            intensities: Intensities::default(),
            antialias: true,
            seed,
        }
    }

    /// Width of the antialiasing band, one voxel.
    fn band(&self) -> f64 {
        let [a, b, c] = self.geometry.spacing;
        (a * b * c).cbrt()
    }

    pub fn right_lung(&self) -> &Lung {
        &self.lungs[0]
    }
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec::new(PhantomSpec::default_geometry(), 0)
    }
}

/// Three trunks from the hilum, each forking into two branches that run
/// toward the base. Positions are fractions of the lung semi-axes, so the
/// tree keeps clear of the lung center and the dome on any grid.
fn vessel_tree<R: Rng>(rng: &mut R, lung: &Lung, voxel: f64) -> Vec<Capsule> {
    let c = lung.shape.center;
    let s = lung.shape.semi;
    let lateral = if c[0] < 0.0 { -1.0 } else { 1.0 };
    let at = |x: f64, y: f64, z: f64| [c[0] + lateral * x * s[0], c[1] + y * s[1], c[2] + z * s[2]];
    let hilum = at(-0.6, rng.gen_range(-0.05..0.05), -0.2);
    let mut out = Vec::new();
    for j in 0..3 {
        let (y_mid, z_mid) = match j {
            0 => (-0.55, -0.15),
            1 => (0.0, -0.45),
            _ => (0.55, -0.15),
        };
        let mid = at(
            rng.gen_range(0.1..0.3),
            y_mid + rng.gen_range(-0.05..0.05),
            z_mid + rng.gen_range(-0.05..0.05),
        );
        out.push(Capsule {
            a: hilum,
            b: mid,
            radius: voxel * rng.gen_range(1.5..2.0),
        });
        for spread in [-1.0, 1.0] {
            let y_end = if j == 1 { spread * 0.35 } else { y_mid.signum() * 0.45 + spread * 0.1 };
            out.push(Capsule {
                a: mid,
                b: at(rng.gen_range(0.35..0.6), y_end + rng.gen_range(-0.05..0.05), rng.gen_range(0.1..0.28)),
                radius: voxel * rng.gen_range(1.0..1.5),
            });
        }
    }
    out
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Static anatomy intensity at `p` (mm).
pub fn anatomy_at(spec: &PhantomSpec, p: [f64; 3], antialias: bool) -> f64 {
    let band = spec.band();
    let member = |sd: f64| {
        if antialias {
            (0.5 - sd / band).clamp(0.0, 1.0)
        } else if sd < 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let iv = &spec.intensities;
    let body = member(spec.body.signed_distance(p));
    if body == 0.0 {
        return iv.background;
    }
    let mut v = lerp(iv.background, iv.body, body);

    let right = spec.right_lung();
    let below_right = logistic((p[2] - right.dome.z_at(p[0], p[1])) / spec.dome_width);
    let liver = member(spec.liver.signed_distance(p)) * below_right * body;
    v = lerp(v, iv.liver, liver);

    for lung in &spec.lungs {
        let shell = member(lung.shape.signed_distance(p));
        if shell == 0.0 {
            continue;
        }
        let above = logistic((lung.dome.z_at(p[0], p[1]) - p[2]) / spec.dome_width);
        let m = shell * above;
        v = lerp(v, iv.lung, m);
        let mut vessel: f64 = 0.0;
        for c in &lung.vessels {
            vessel = vessel.max(member(c.signed_distance(p)));
            if vessel == 1.0 {
                break;
            }
        }
        v = lerp(v, iv.vessel, vessel * m);
    }
    v
}

/// Ground-truth breathing deformation `phi = a * D * g(x) * (0, c_ap, 1)`.
///
/// `g` is 1 at and below the diaphragm apex level, decays as
/// `exp(-d_s / L)` with height `d` above it (`d_s` is `d` with a quadratic
/// start over `smoothing` mm), tapers to 0 at the lung apex, and fades out
/// between `mask_start` and 1 in normalized body radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthMotion {
    /// Peak superior-inferior displacement (mm).
    pub d_z: f64,
    /// Decay length above the diaphragm (mm).
    pub decay_length: f64,
    /// Anterior-posterior coupling fraction.
    pub c_ap: f64,
    pub smoothing: f64,
    /// z of the diaphragm apex level (mm).
    pub z_diaphragm: f64,
    /// Height of the lung apex above `z_diaphragm` (mm).
    pub apex_height: f64,
    pub body: Ellipsoid,
    pub mask_start: f64,
}

impl GroundTruthMotion {
    pub fn new(spec: &PhantomSpec, d_z: f64, decay_length: f64, c_ap: f64) -> Self {
        let right = spec.right_lung();
        let z_dia = right.dome.apex[2];
        let lung_top = right.shape.center[2] - right.shape.semi[2];
        GroundTruthMotion {
            d_z,
            decay_length,
            c_ap,
            smoothing: 20.0,
            z_diaphragm: z_dia,
            apex_height: z_dia - lung_top,
            body: spec.body,
            mask_start: 0.6,
        }
    }

    pub fn for_phantom(spec: &PhantomSpec) -> Self {
        GroundTruthMotion::new(spec, 18.0, 80.0, 0.15)
    }

    pub fn zero(spec: &PhantomSpec) -> Self {
        GroundTruthMotion::new(spec, 0.0, 80.0, 0.0)
    }

    /// `g` and its gradient.
    pub fn profile(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let d = self.z_diaphragm - p[2];
        let delta = self.smoothing;
        let (ds, ds_d) = if d <= 0.0 {
            (0.0, 0.0)
        } else if d <= delta {
            (d * d / (2.0 * delta), d / delta)
        } else {
            (d - 0.5 * delta, 1.0)
        };
        let e = (-ds / self.decay_length).exp();
        let e_d = -e * ds_d / self.decay_length;

        let t = d / self.apex_height;
        let (taper, taper_d) = if t <= 0.0 {
            (1.0, 0.0)
        } else if t >= 1.0 {
            (0.0, 0.0)
        } else {
            (1.0 - smootherstep(t), -smootherstep_d(t) / self.apex_height)
        };

        let q = self.body.radius(p);
        let w = 1.0 - self.mask_start;
        let u = (q - self.mask_start) / w;
        let (mask, mask_q) = if u <= 0.0 {
            (1.0, 0.0)
        } else if u >= 1.0 {
            (0.0, 0.0)
        } else {
            (1.0 - smootherstep(u), -smootherstep_d(u) / w)
        };
        let mut grad_mask = [0.0; 3];
        if mask_q != 0.0 {
            for k in 0..3 {
                let sk = self.body.semi[k];
                grad_mask[k] = mask_q * (p[k] - self.body.center[k]) / (sk * sk * q);
            }
        }

        let ed = e * taper;
        let g = ed * mask;
        // d depends on z only, with dd/dz = -1
        let ed_z = -(e_d * taper + e * taper_d);
        let grad = [
            ed * grad_mask[0],
            ed * grad_mask[1],
            ed_z * mask + ed * grad_mask[2],
        ];
        (g, grad)
    }

    fn direction(&self) -> [f64; 3] {
        [0.0, self.c_ap, 1.0]
    }

    /// Displacement (mm) at `p` for amplitude `a`.
    pub fn displacement(&self, p: [f64; 3], a: f64) -> [f64; 3] {
        let (g, _) = self.profile(p);
        let s = a * self.d_z * g;
        self.direction().map(|v| s * v)
    }

    /// `d phi_i / d x_j`, row-major.
    pub fn jacobian(&self, p: [f64; 3], a: f64) -> [f64; 9] {
        let (_, grad) = self.profile(p);
        let v = self.direction();
        let mut j = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                j[r * 3 + c] = a * self.d_z * v[r] * grad[c];
            }
        }
        j
    }

    /// `det(I + d phi / dx)`. The Jacobian is rank one, so this is
    /// `1 + a D (c_ap g_y + g_z)`.
    pub fn jacobian_det(&self, p: [f64; 3], a: f64) -> f64 {
        let (_, grad) = self.profile(p);
        1.0 + a * self.d_z * (self.c_ap * grad[1] + grad[2])
    }
}

/// Ground-truth displacement in mm.
pub fn gt_displacement(motion: &GroundTruthMotion, p: [f64; 3], a: f64) -> [f64; 3] {
    motion.displacement(p, a)
}

#[inline]
fn smootherstep(t: f64) -> f64 {
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

#[inline]
fn smootherstep_d(t: f64) -> f64 {
    30.0 * t * t * (t - 1.0) * (t - 1.0)
}

/// Irregular breathing: raised-cosine cycles with jittered period and depth,
/// plus a slow baseline drift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BreathSpec {
    pub period: f64,
    pub period_jitter: f64,
    pub depth: f64,
    pub depth_jitter: f64,
    pub drift_amplitude: f64,
    pub drift_period: f64,
    pub duration: f64,
    /// Sample interval, one slice acquisition (s).
    pub dt: f64,
    pub seed: u64,
}

impl Default for BreathSpec {
    fn default() -> Self {
        BreathSpec {
            period: 4.0,
            period_jitter: 0.15,
            depth: 0.92,
            depth_jitter: 0.2,
            drift_amplitude: 0.08,
            drift_period: 90.0,
            duration: 640.0 * 0.32,
            dt: 0.32,
            seed: 0,
        }
    }
}

impl BreathSpec {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.period > 0.0
            && (0.0..1.0).contains(&self.period_jitter)
            && (0.0..1.0).contains(&self.depth_jitter)
            && (0.0..=1.0).contains(&self.depth)
            && self.drift_amplitude >= 0.0
            && self.drift_period > 0.0
            && self.duration > 0.0
            && self.dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid breathing parameters {self:?}")))
        }
    }

    /// No breathing at all.
    pub fn still(duration: f64, dt: f64) -> Self {
        BreathSpec {
            depth: 0.0,
            depth_jitter: 0.0,
            period_jitter: 0.0,
            drift_amplitude: 0.0,
            duration,
            dt,
            ..BreathSpec::default()
        }
    }
}

/// Per-cycle realization of a [`BreathSpec`], evaluable at any time.
#[derive(Clone, Debug, PartialEq)]
pub struct Breathing {
    spec: BreathSpec,
    /// `(start, period, depth)` per cycle.
    cycles: Vec<(f64, f64, f64)>,
}

impl Breathing {
    pub fn new(spec: BreathSpec) -> crate::Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut cycles = Vec::new();
        let mut t = 0.0;
        while t <= spec.duration {
            let period = spec.period * (1.0 + spec.period_jitter * rng.gen_range(-1.0..1.0));
            let depth = spec.depth * (1.0 - spec.depth_jitter * rng.gen_range(0.0..1.0));
            cycles.push((t, period, depth));
            t += period;
        }
        Ok(Breathing { spec, cycles })
    }

    pub fn spec(&self) -> &BreathSpec {
        &self.spec
    }

    /// Amplitude in `[0, 1]` at time `t` (s). Times past the generated
    /// cycles repeat the last one.
    pub fn amplitude(&self, t: f64) -> f64 {
        let k = self.cycles.partition_point(|c| c.0 <= t).saturating_sub(1);
        let (start, period, depth) = self.cycles[k];
        let tau = t - start;
        let breath = depth * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * tau / period).cos());
        let drift = self.spec.drift_amplitude
            * 0.5
            * (1.0 - (2.0 * std::f64::consts::PI * t / self.spec.drift_period).cos());
        (breath + drift).clamp(0.0, 1.0)
    }

    /// Samples at `t_i = i * dt` for `t_i < duration`.
    pub fn samples(&self) -> AmplitudeSeries {
        let n = (self.spec.duration / self.spec.dt).ceil() as usize;
        let timestamps: Vec<f64> = (0..n).map(|i| i as f64 * self.spec.dt).collect();
        let values = timestamps.iter().map(|&t| self.amplitude(t)).collect();
        AmplitudeSeries { timestamps, values }
    }
}

/// Ground-truth amplitude samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeSeries {
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn breathing_signal(breath: &BreathSpec) -> crate::Result<AmplitudeSeries> {
    Ok(Breathing::new(*breath)?.samples())
}

/// A plane of the voxel grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// Fixed y index; image width nx, height nz.
    Coronal(usize),
    /// Fixed x index; image width ny, height nz.
    Sagittal(usize),
}

/// Intensity at voxel center `(i, j, k)` for amplitude `a`.
#[inline]
pub fn voxel_value(spec: &PhantomSpec, motion: &GroundTruthMotion, a: f64, i: usize, j: usize, k: usize) -> f32 {
    let g = &spec.geometry;
    let p = [
        g.index_to_mm(0, i as f64),
        g.index_to_mm(1, j as f64),
        g.index_to_mm(2, k as f64),
    ];
    let phi = motion.displacement(p, a);
    anatomy_at(spec, [p[0] + phi[0], p[1] + phi[1], p[2] + phi[2]], spec.antialias) as f32
}

pub fn render_volume(spec: &PhantomSpec, motion: &GroundTruthMotion, a: f64) -> VolumeGrid {
    let [nx, ny, nz] = spec.geometry.dims;
    let mut vol = VolumeGrid::zeros(spec.geometry);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                vol.set(i, j, k, voxel_value(spec, motion, a, i, j, k));
            }
        }
    }
    vol.amplitude = Some(a);
    vol.seed = Some(spec.seed);
    vol
}

/// One plane of [`render_volume`], bitwise equal to extracting it.
pub fn render_plane(spec: &PhantomSpec, motion: &GroundTruthMotion, a: f64, plane: Plane) -> Image2 {
    let [nx, ny, nz] = spec.geometry.dims;
    match plane {
        Plane::Coronal(j) => {
            let mut img = Image2::zeros(nx, nz);
            for k in 0..nz {
                for i in 0..nx {
                    img.set(i, k, voxel_value(spec, motion, a, i, j, k));
                }
            }
            img
        }
        Plane::Sagittal(i) => {
            let mut img = Image2::zeros(ny, nz);
            for k in 0..nz {
                for j in 0..ny {
                    img.set(j, k, voxel_value(spec, motion, a, i, j, k));
                }
            }
            img
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PhantomSpec {
        PhantomSpec::default()
    }

    #[test]
    fn background_far_outside() {
        let s = spec();
        assert_eq!(anatomy_at(&s, [500.0, 0.0, 0.0], true), 0.02);
        assert_eq!(anatomy_at(&s, [0.0, 0.0, -150.0], false), 0.02);
    }

    #[test]
    fn lung_center_and_vessel_centerline() {
        let s = spec();
        for lung in &s.lungs {
            let v = anatomy_at(&s, lung.shape.center, true);
            assert!((v - 0.15).abs() < 1e-6, "{v}");
            for c in &lung.vessels {
                let mid = [0.5 * (c.a[0] + c.b[0]), 0.5 * (c.a[1] + c.b[1]), 0.5 * (c.a[2] + c.b[2])];
                let v = anatomy_at(&s, mid, true);
                assert!((v - 0.85).abs() < 1e-6, "{v}");
            }
            assert!(lung.vessels.len() >= 6);
        }
    }

    #[test]
    fn vessels_stay_inside_lungs_and_clear_of_centers() {
        for seed in 0..20 {
            let s = PhantomSpec::new(PhantomSpec::default_geometry(), seed);
            for lung in &s.lungs {
                for c in &lung.vessels {
                    assert!(c.axis_distance(lung.shape.center) > c.radius + s.band());
                    for p in [c.a, c.b] {
                        assert!(lung.shape.signed_distance(p) < -c.radius);
                        assert!(p[2] < lung.dome.z_at(p[0], p[1]) - 15.0);
                    }
                }
            }
        }
    }

    #[test]
    fn intensities_in_unit_interval() {
        let s = spec();
        for i in 0..40 {
            for k in 0..40 {
                let p = [-100.0 + 5.0 * i as f64, 3.0, -110.0 + 5.5 * k as f64];
                let v = anatomy_at(&s, p, true);
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn displacement_reference_and_apex() {
        let s = spec();
        let m = GroundTruthMotion::for_phantom(&s);
        let apex = s.right_lung().dome.apex;
        assert_eq!(m.displacement(apex, 0.0), [0.0; 3]);
        assert_eq!(m.displacement(apex, 1.0)[2], 18.0);
        let top = [apex[0], apex[1], s.right_lung().shape.center[2] - s.right_lung().shape.semi[2]];
        assert_eq!(m.displacement(top, 1.0), [0.0; 3]);
        assert_eq!(m.displacement([0.0, 0.0, 300.0], 1.0), [0.0; 3]);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let s = spec();
        let m = GroundTruthMotion::for_phantom(&s);
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = [rng.gen_range(-95.0..95.0), rng.gen_range(-95.0..95.0), rng.gen_range(-110.0..110.0)];
            let a = rng.gen_range(0.0..1.0);
            let j = m.jacobian(p, a);
            let mut fd = [0.0; 9];
            for c in 0..3 {
                let mut pp = p;
                let mut pm = p;
                pp[c] += h;
                pm[c] -= h;
                let (dp, dm) = (m.displacement(pp, a), m.displacement(pm, a));
                for r in 0..3 {
                    fd[r * 3 + c] = (dp[r] - dm[r]) / (2.0 * h);
                }
            }
            let mut a_id = fd;
            for r in 0..3 {
                a_id[r * 4] += 1.0;
            }
            let det_fd = crate::losses::det3(&a_id);
            assert!((m.jacobian_det(p, a) - det_fd).abs() < 1e-8);
            for (x, y) in j.iter().zip(&fd) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn no_folding_on_the_grid() {
        let s = spec();
        let m = GroundTruthMotion::for_phantom(&s);
        let g = s.geometry;
        let mut worst = f64::INFINITY;
        for k in 0..64 {
            for j in (0..96).step_by(3) {
                for i in (0..96).step_by(3) {
                    let p = [g.index_to_mm(0, i as f64), g.index_to_mm(1, j as f64), g.index_to_mm(2, k as f64)];
                    worst = worst.min(m.jacobian_det(p, 1.0));
                }
            }
        }
        assert!(worst > 0.0, "{worst}");
    }

    #[test]
    fn breathing_periodic_without_jitter() {
        let b = BreathSpec {
            period_jitter: 0.0,
            depth_jitter: 0.0,
            drift_amplitude: 0.0,
            dt: 0.25,
            duration: 40.0,
            ..BreathSpec::default()
        };
        let s = breathing_signal(&b).unwrap();
        let max = s.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = s.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 0.92).abs() < 1e-12);
        assert_eq!(min, 0.0);
        for i in 0..s.values.len() - 16 {
            assert!((s.values[i] - s.values[i + 16]).abs() < 1e-12);
        }
    }

    #[test]
    fn breathing_range_and_determinism() {
        for seed in 0..5 {
            let b = BreathSpec {
                seed,
                drift_amplitude: 0.3,
                ..BreathSpec::default()
            };
            let s = breathing_signal(&b).unwrap();
            assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(s, breathing_signal(&b).unwrap());
            assert_eq!(s.values.len(), 640);
        }
    }

    #[test]
    fn plane_render_matches_volume() {
        let g = Geometry::new([24, 20, 16], [8.0, 9.5, 14.0]).unwrap();
        let s = PhantomSpec::new(g, 3);
        let m = GroundTruthMotion::for_phantom(&s);
        let v = render_volume(&s, &m, 0.7);
        assert_eq!(render_plane(&s, &m, 0.7, Plane::Coronal(9)), v.coronal(9));
        assert_eq!(render_plane(&s, &m, 0.7, Plane::Sagittal(6)), v.sagittal(6));
        assert_eq!(v, render_volume(&s, &m, 0.7));
    }
}
