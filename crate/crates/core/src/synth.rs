//! Synthetic stereo scenes with exact ground truth.
//!
//! Scenes are a piecewise-pitched road plus boxes standing on it, seen by a
//! rectified rig. Both views are ray cast; every surface carries a sum of
//! sinusoid gratings defined on 3D surface coordinates, so the two images are
//! photo-consistent by construction. Each grating is attenuated by the
//! response of a Gaussian pixel prefilter at its local image frequency to
//! keep foreshortened texture from aliasing.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::imaging::{
    save_label_pgm, save_pfm, save_pgm, DisparityMap, IntensityImage, LabelMap, LABEL_FREE_SPACE, LABEL_UNLABELED,
};

/// A change of road pitch at depth `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kink {
    pub z: f64,
    pub delta_deg: f64,
}

/// Longitudinal road profile: initial pitch (positive rises ahead) plus kinks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadProfile {
    pub pitch_deg: f64,
    #[serde(default)]
    pub kinks: Vec<Kink>,
}

/// Axis-aligned box whose base sits on the road height below its center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub id: u16,
    pub x: f64,
    pub z: f64,
    pub width: f64,
    pub height: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub rig: CameraRig,
    pub camera_height: f64,
    #[serde(default)]
    pub road: RoadProfile,
    #[serde(default)]
    pub obstacles: Vec<BoxObstacle>,
    pub texture_seed: u64,
    /// Grating frequency range on surfaces, cycles per meter.
    pub texture_band: [f64; 2],
    /// Standard deviation of the unfiltered texture, intensity units.
    pub texture_contrast: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    #[serde(default = "default_true")]
    pub quantize: bool,
    /// Road farther than this depth is left unlabeled; `None` labels all of it.
    #[serde(default)]
    pub free_space_range: Option<f64>,
    /// Road pixels within this many pixels of an obstacle, or whose right
    /// view falls within this many pixels of the left image border, are left
    /// unlabeled, as in a coarse free-space annotation.
    #[serde(default)]
    pub free_space_margin: usize,
}

fn default_true() -> bool {
    true
}

const ROAD_BASE: f64 = 1800.0;
const BOX_BASE: f64 = 2400.0;
const SKY_LEVEL: f64 = 3200.0;
const GRATINGS: usize = 24;
/// Standard deviation of the pixel prefilter, in pixels.
const PREFILTER_SIGMA: f64 = 2.0;

impl SceneSpec {
    /// Road-only scene with the standard texture and noise.
    pub fn road(name: &str, rig: CameraRig) -> Self {
        Self {
            name: name.into(),
            rig,
            camera_height: 1.2,
            road: RoadProfile::default(),
            obstacles: vec![],
            texture_seed: 1,
            texture_band: [2.0, 60.0],
            texture_contrast: 300.0,
            noise_sigma: 2.0,
            noise_seed: 1,
            quantize: true,
            free_space_range: None,
            free_space_margin: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        if !(self.camera_height > 0.0) {
            return Err(Error::InvalidConfig("camera height must be positive".into()));
        }
        let [lo, hi] = self.texture_band;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig("texture band must satisfy 0 < lo <= hi".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.texture_contrast >= 0.0) {
            return Err(Error::InvalidConfig("noise and contrast must be non-negative".into()));
        }
        let mut ids: Vec<u16> = self.obstacles.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) || ids.iter().any(|&id| id < 2) {
            return Err(Error::InvalidConfig("obstacle ids must be unique and >= 2".into()));
        }
        for o in &self.obstacles {
            if !(o.width > 0.0 && o.height > 0.0 && o.depth > 0.0 && o.z - o.depth / 2.0 > 0.0) {
                return Err(Error::InvalidConfig(format!("obstacle {} has invalid geometry", o.id)));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn road_segments(&self) -> Vec<RoadSegment> {
        let mut kinks = self.road.kinks.clone();
        kinks.sort_by(|a, b| a.z.total_cmp(&b.z));
        let mut angle = self.road.pitch_deg;
        let mut seg = RoadSegment {
            z_start: f64::NEG_INFINITY,
            z_ref: 0.0,
            y_ref: self.camera_height,
            slope: angle.to_radians().tan(),
        };
        let mut segs = Vec::with_capacity(kinks.len() + 1);
        for k in &kinks {
            let y = seg.y(k.z);
            segs.push(seg);
            angle += k.delta_deg;
            seg = RoadSegment { z_start: k.z, z_ref: k.z, y_ref: y, slope: angle.to_radians().tan() };
        }
        segs.push(seg);
        segs
    }

    /// Road surface height (`Y`, downward) at depth `z`.
    pub fn road_y(&self, z: f64) -> f64 {
        let segs = self.road_segments();
        segs.iter().rev().find(|s| z >= s.z_start).unwrap_or(&segs[0]).y(z)
    }
}

/// Road piece `Y = y_ref - slope * (Z - z_ref)` for `Z >= z_start`.
#[derive(Clone, Copy, Debug)]
struct RoadSegment {
    z_start: f64,
    z_ref: f64,
    y_ref: f64,
    slope: f64,
}

impl RoadSegment {
    fn y(&self, z: f64) -> f64 {
        self.y_ref - self.slope * (z - self.z_ref)
    }

    /// Plane `n . P + D = 0` with the normal toward the camera.
    fn plane(&self) -> (Vector3<f64>, f64) {
        let norm = (1.0 + self.slope * self.slope).sqrt();
        (Vector3::new(0.0, -1.0, -self.slope) / norm, (self.y_ref + self.slope * self.z_ref) / norm)
    }
}

#[derive(Clone, Debug)]
struct Grating {
    fu: f64,
    fv: f64,
    phase: f64,
    amplitude: f64,
}

#[derive(Clone, Debug)]
struct Texture {
    base: f64,
    gratings: Vec<Grating>,
}

impl Texture {
    /// Gratings are stratified: one per slice of the log-frequency band.
    /// Every other grating varies along the first surface axis only, so the
    /// texture stays broadband where the second axis is strongly
    /// foreshortened (the far road); the rest take seeded orientation slices.
    fn new(seed: u64, base: f64, band: [f64; 2], contrast: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitude = contrast * (2.0 / GRATINGS as f64).sqrt();
        let (lo, hi) = (band[0].ln(), band[1].ln());
        let oblique = GRATINGS / 2;
        let mut orientation: Vec<usize> = (0..oblique).collect();
        orientation.shuffle(&mut rng);
        let slice = |k: usize, n: usize, u: f64| (k as f64 + u) / n as f64;
        let gratings = (0..GRATINGS)
            .map(|k| {
                let f = (lo + (hi - lo) * slice(k, GRATINGS, rng.random())).exp();
                let theta = if k % 2 == 0 { 0.0 } else { PI * slice(orientation[k / 2], oblique, rng.random()) };
                Grating { fu: f * theta.cos(), fv: f * theta.sin(), phase: rng.random_range(0.0..2.0 * PI), amplitude }
            })
            .collect();
        Self { base, gratings }
    }

    /// Prefiltered value at surface coordinates `(u, v)`; `du`, `dv` are the
    /// surface-coordinate derivatives along image x and y.
    fn sample(&self, u: f64, v: f64, du: [f64; 2], dv: [f64; 2]) -> f64 {
        let k = 2.0 * PI * PI * PREFILTER_SIGMA * PREFILTER_SIGMA;
        let mut value = self.base;
        for g in &self.gratings {
            let fx = g.fu * du[0] + g.fv * dv[0];
            let fy = g.fu * du[1] + g.fv * dv[1];
            let damping = (-k * (fx * fx + fy * fy)).exp();
            if damping > 1e-6 {
                value += g.amplitude * damping * (2.0 * PI * (g.fu * u + g.fv * v) + g.phase).cos();
            }
        }
        value
    }
}

#[derive(Clone, Copy, Debug)]
enum Surface {
    Road,
    /// Box index and the axis of the face that was hit.
    Box(usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    t: f64,
    surface: Surface,
    normal: Vector3<f64>,
}

struct Scene<'a> {
    spec: &'a SceneSpec,
    road: Vec<RoadSegment>,
    boxes: Vec<([f64; 3], [f64; 3])>,
    road_texture: Texture,
    box_textures: Vec<Texture>,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let road = spec.road_segments();
        let boxes = spec
            .obstacles
            .iter()
            .map(|o| {
                let bottom = spec.road_y(o.z);
                (
                    [o.x - o.width / 2.0, bottom - o.height, o.z - o.depth / 2.0],
                    [o.x + o.width / 2.0, bottom, o.z + o.depth / 2.0],
                )
            })
            .collect();
        let band = spec.texture_band;
        let contrast = spec.texture_contrast;
        let road_texture = Texture::new(spec.texture_seed, ROAD_BASE, band, contrast);
        let box_textures = spec
            .obstacles
            .iter()
            .map(|o| {
                let seed = spec.texture_seed ^ (o.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                Texture::new(seed, BOX_BASE, band, contrast)
            })
            .collect();
        Self { spec, road, boxes, road_texture, box_textures }
    }

    fn cast(&self, origin: &Vector3<f64>, q: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut offer = |h: Hit| {
            if best.is_none_or(|b| h.t < b.t) {
                best = Some(h);
            }
        };
        for (i, seg) in self.road.iter().enumerate() {
            let denom = q.y + seg.slope;
            if denom <= 0.0 {
                continue;
            }
            let t = (seg.y_ref + seg.slope * seg.z_ref - origin.y) / denom;
            let z_end = self.road.get(i + 1).map_or(f64::INFINITY, |s| s.z_start);
            if t > 1e-9 && t >= seg.z_start && t < z_end {
                offer(Hit { t, surface: Surface::Road, normal: seg.plane().0 });
            }
        }
        for (i, (lo, hi)) in self.boxes.iter().enumerate() {
            let (mut t_near, mut t_far, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
            let mut missed = false;
            for a in 0..3 {
                if q[a] == 0.0 {
                    if origin[a] < lo[a] || origin[a] > hi[a] {
                        missed = true;
                    }
                    continue;
                }
                let (t1, t2) = ((lo[a] - origin[a]) / q[a], (hi[a] - origin[a]) / q[a]);
                let (t1, t2) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                if t1 > t_near {
                    t_near = t1;
                    axis = a;
                }
                t_far = t_far.min(t2);
            }
            if missed || t_near > t_far || t_near <= 1e-9 {
                continue;
            }
            let s = -q[axis].signum();
            let mut normal = Vector3::zeros();
            normal[axis] = s;
            offer(Hit { t: t_near, surface: Surface::Box(i, axis), normal });
        }
        best
    }

    /// Shaded intensity of a hit seen from `origin` along `q`.
    /// Radiance at the surface point hit along `origin + t * q`. The
    /// anti-aliasing footprint is always taken from the left camera so both
    /// views see the same texture at a given surface point.
    fn shade(&self, hit: &Hit, origin: &Vector3<f64>, q: &Vector3<f64>) -> f64 {
        let rig = &self.spec.rig;
        let p = origin + hit.t * q;
        let (t, q) = (p.z, p / p.z);
        let nq = hit.normal.dot(&q);
        let dq = [Vector3::new(1.0 / rig.fx, 0.0, 0.0), Vector3::new(0.0, 1.0 / rig.fy, 0.0)];
        let dp = dq.map(|d| t * d - q * (t * hit.normal.dot(&d) / nq));
        let (texture, eu, ev) = match hit.surface {
            Surface::Road => (&self.road_texture, Vector3::x(), Vector3::z()),
            Surface::Box(i, axis) => {
                let (eu, ev) = match axis {
                    0 => (Vector3::z(), Vector3::y()),
                    1 => (Vector3::x(), Vector3::z()),
                    _ => (Vector3::x(), Vector3::y()),
                };
                (&self.box_textures[i], eu, ev)
            }
        };
        texture.sample(p.dot(&eu), p.dot(&ev), [dp[0].dot(&eu), dp[1].dot(&eu)], [dp[0].dot(&ev), dp[1].dot(&ev)])
    }

    /// Whether the surface point `p` is the first hit from `origin`.
    fn seen_from(&self, origin: &Vector3<f64>, p: &Vector3<f64>) -> bool {
        let q = (p - origin) / (p.z - origin.z);
        self.cast(origin, &q).is_some_and(|h| (h.t - (p.z - origin.z)).abs() <= 1e-6 * p.z)
    }

    fn ray(&self, x: usize, y: usize) -> Vector3<f64> {
        let rig = &self.spec.rig;
        Vector3::new((x as f64 - rig.x0) / rig.fx, (y as f64 - rig.y0) / rig.fy, 1.0)
    }
}

/// Rendered views and their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthBundle {
    pub left: IntensityImage,
    pub right: IntensityImage,
    pub gt_disparity: DisparityMap,
    pub labels: LabelMap,
    pub free_space: Vec<bool>,
}

pub fn render(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let scene = Scene::new(spec);
    let rig = &spec.rig;
    let (w, h) = (rig.width, rig.height);
    let left_origin = Vector3::zeros();
    let right_origin = Vector3::new(rig.baseline, 0.0, 0.0);
    let rows: Vec<_> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let q = scene.ray(x, y);
                let left = scene.cast(&left_origin, &q);
                let right = scene.cast(&right_origin, &q);
                let il = left.map_or(SKY_LEVEL, |hit| scene.shade(&hit, &left_origin, &q));
                let ir = right.map_or(SKY_LEVEL, |hit| scene.shade(&hit, &right_origin, &q));
                let (disp, label) = match left {
                    None => (DisparityMap::INVALID, LABEL_UNLABELED),
                    Some(hit) => {
                        let label = match hit.surface {
                            Surface::Box(i, _) => spec.obstacles[i].id,
                            Surface::Road => {
                                let in_range = spec.free_space_range.is_none_or(|r| hit.t <= r);
                                // the right view must see the point, inside its frame
                                let xr = x as f64 - rig.focal_baseline() / hit.t;
                                let in_frame = xr >= spec.free_space_margin as f64;
                                if in_range && in_frame && scene.seen_from(&right_origin, &(hit.t * q)) {
                                    LABEL_FREE_SPACE
                                } else {
                                    LABEL_UNLABELED
                                }
                            }
                        };
                        ((rig.focal_baseline() / hit.t) as f32, label)
                    }
                };
                row.push((il, ir, disp, label));
            }
            row
        })
        .collect();
    let mut left = Vec::with_capacity(w * h);
    let mut right = Vec::with_capacity(w * h);
    let mut disp = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for (il, ir, d, l) in rows.into_iter().flatten() {
        left.push(il);
        right.push(ir);
        disp.push(d);
        labels.push(l);
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
        for v in left.iter_mut().chain(right.iter_mut()) {
            *v += normal.sample(&mut rng);
        }
    }
    let finish = |v: f64| {
        let v = if spec.quantize { v.round() } else { v };
        v.clamp(0.0, 4095.0) as f32
    };
    let left = IntensityImage::new(w, h, 4095, left.into_iter().map(finish).collect())?;
    let right = IntensityImage::new(w, h, 4095, right.into_iter().map(finish).collect())?;
    let labels = erode_free_space(LabelMap::new(w, h, labels)?, spec.free_space_margin);
    let free_space = labels.free_space_mask();
    Ok(GroundTruthBundle { left, right, gt_disparity: DisparityMap::new(w, h, disp)?, labels, free_space })
}

/// Unlabels free space within `margin` pixels (Chebyshev) of an obstacle.
fn erode_free_space(mut labels: LabelMap, margin: usize) -> LabelMap {
    if margin == 0 {
        return labels;
    }
    let (w, h) = (labels.width, labels.height);
    let near: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| LabelMap::is_obstacle(labels.get(x, y)))
        .collect();
    for (x, y) in near {
        for yy in y.saturating_sub(margin)..=(y + margin).min(h - 1) {
            for xx in x.saturating_sub(margin)..=(x + margin).min(w - 1) {
                if labels.get(xx, yy) == LABEL_FREE_SPACE {
                    labels.set(xx, yy, LABEL_UNLABELED);
                }
            }
        }
    }
    labels
}

/// Names of the built-in scene suites.
pub const SUITES: [&str; 3] = ["flat_easy", "far_small", "double_kink"];

fn with_box(mut spec: SceneSpec, id: u16, x: f64, z: f64, width: f64, height: f64) -> SceneSpec {
    spec.obstacles.push(BoxObstacle { id, x, z, width, height, depth: 0.3 });
    spec
}

/// Regression scenes on the 2048x1024 rig with 21 cm baseline.
pub fn scene_suite(name: &str) -> Result<Vec<SceneSpec>> {
    let rig = CameraRig::automotive();
    let base = |n: &str, seed: u64| {
        let mut s = SceneSpec::road(n, rig);
        s.texture_seed = seed;
        s.noise_seed = seed + 100;
        s.free_space_range = Some(FREE_SPACE_RANGE);
        s.free_space_margin = FREE_SPACE_MARGIN;
        s
    };
    let scenes = match name {
        "flat_easy" => vec![
            with_box(base("flat_easy_0", 1), 2, 0.0, 10.0, 0.6, 0.3),
            with_box(base("flat_easy_1", 2), 2, -1.0, 15.0, 0.8, 0.5),
            with_box(with_box(base("flat_easy_2", 3), 2, 1.0, 12.0, 0.5, 0.3), 3, -1.5, 20.0, 0.6, 0.4),
        ],
        "far_small" => vec![
            with_box(base("far_small_0", 11), 2, 0.0, 20.0, 0.4, 0.05),
            with_box(base("far_small_1", 12), 2, 0.3, 20.0, 0.4, 0.10),
            with_box(with_box(base("far_small_2", 13), 2, -0.8, 20.0, 0.4, 0.05), 3, 0.8, 20.0, 0.4, 0.10),
            {
                let mut s = with_box(base("far_small_3", 14), 2, -0.3, 20.0, 0.4, 0.05);
                s.road.pitch_deg = 0.5;
                s
            },
        ],
        "double_kink" => {
            let kinked = |n: &str, seed: u64| {
                let mut s = base(n, seed);
                s.road.kinks = vec![Kink { z: 15.0, delta_deg: 4.0 }, Kink { z: 25.0, delta_deg: -4.0 }];
                s
            };
            vec![
                with_box(kinked("double_kink_0", 21), 2, 0.0, 12.0, 0.6, 0.3),
                with_box(kinked("double_kink_1", 22), 2, 0.5, 20.0, 0.5, 0.2),
                with_box(kinked("double_kink_2", 23), 2, -0.5, 30.0, 0.6, 0.3),
            ]
        }
        _ => return Err(Error::InvalidConfig(format!("unknown suite {name:?}"))),
    };
    Ok(scenes)
}

/// Depth up to which suite scenes annotate the road as free space.
pub const FREE_SPACE_RANGE: f64 = 50.0;
/// Unlabeled band around obstacles in suite scenes, full-resolution pixels.
pub const FREE_SPACE_MARGIN: usize = 8;

/// Writes a bundle as PGM/PFM/label-PGM files plus the scene and rig JSON.
pub fn write_bundle(dir: impl AsRef<Path>, spec: &SceneSpec, bundle: &GroundTruthBundle) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    save_pgm(dir.join("left.pgm"), &bundle.left)?;
    save_pgm(dir.join("right.pgm"), &bundle.right)?;
    save_pfm(dir.join("gt_disparity.pfm"), &bundle.gt_disparity)?;
    save_label_pgm(dir.join("labels.pgm"), &bundle.labels)?;
    spec.rig.save(dir.join("calib.json"))?;
    std::fs::write(dir.join("scene.json"), serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<GroundTruthBundle> {
    let dir = dir.as_ref();
    let labels = crate::imaging::load_label_pgm(dir.join("labels.pgm"))?;
    Ok(GroundTruthBundle {
        left: crate::imaging::load_pgm(dir.join("left.pgm"))?,
        right: crate::imaging::load_pgm(dir.join("right.pgm"))?,
        gt_disparity: crate::imaging::load_pfm(dir.join("gt_disparity.pfm"))?,
        free_space: labels.free_space_mask(),
        labels,
    })
}
