//! Pixel and instance level evaluation, parameter sweeps and reports.
//!
//! Pixel rates count predicted obstacle centers on the ground-truth label map
//! and compensate the sampling lattice by `sub² · dwn²`:
//!
//! ```text
//! TPR = TP · sub² · dwn² / GT_obstacles
//! FPR = FP · sub² · dwn² / GT_freespace
//! ```
//!
//! Instance coverage is `iTP / (iTP + iFN)` per labeled instance, averaged
//! with equal weight per instance.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cstix::{
    midlevel_rep, points_from_decisions, points_from_pc, upscale_points, CStix, ClusterParams, ObstaclePoint,
    PointSource,
};
use crate::disparity::{disparity_to_cloud, BlockMatchConfig};
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::hypothesis::{
    detect_frame, prepare_block_matched, DetectorConfig, DetectorInputs, Method, PatchDecision, Verdict,
};
use crate::imaging::{LabelMap, PatchGrid};
use crate::pc::{pc_detect, PcParams};
use crate::synth::GroundTruthBundle;

/// Raw tallies behind one pixel-level ROC point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    /// Stride of the prediction lattice at detector resolution.
    pub sub: usize,
    /// Detector downsampling factor.
    pub dwn: usize,
    pub gt_obstacles: u64,
    pub gt_freespace: u64,
}

impl PixelCounts {
    fn area(&self) -> f64 {
        let s = (self.sub * self.dwn) as f64;
        s * s
    }

    pub fn tpr(&self) -> Result<f64> {
        if self.gt_obstacles == 0 {
            return Err(Error::EmptyGroundTruth("obstacle"));
        }
        Ok(self.tp as f64 * self.area() / self.gt_obstacles as f64)
    }

    pub fn fpr(&self) -> Result<f64> {
        if self.gt_freespace == 0 {
            return Err(Error::EmptyGroundTruth("free-space"));
        }
        Ok(self.fp as f64 * self.area() / self.gt_freespace as f64)
    }

    /// `(TPR, FPR)`.
    pub fn rates(&self) -> Result<(f64, f64)> {
        Ok((self.tpr()?, self.fpr()?))
    }

    /// Sums the tallies of another frame evaluated on the same lattice.
    pub fn accumulate(&mut self, other: &PixelCounts) -> Result<()> {
        if (self.sub, self.dwn) != (other.sub, other.dwn) {
            return Err(Error::InvalidConfig(format!(
                "cannot add counts for sub/dwn {}/{} and {}/{}",
                self.sub, self.dwn, other.sub, other.dwn
            )));
        }
        self.tp += other.tp;
        self.fp += other.fp;
        self.gt_obstacles += other.gt_obstacles;
        self.gt_freespace += other.gt_freespace;
        Ok(())
    }
}

/// Tallies predicted obstacle centers, given at detector resolution, against
/// full-resolution labels. Centers on unlabeled pixels are ignored.
pub fn pixel_counts(
    centers: impl IntoIterator<Item = (usize, usize)>,
    labels: &LabelMap,
    sub: usize,
    dwn: usize,
) -> Result<PixelCounts> {
    if sub == 0 || dwn == 0 {
        return Err(Error::InvalidConfig("sub and dwn must be positive".into()));
    }
    let mut counts = PixelCounts {
        sub,
        dwn,
        gt_obstacles: labels.obstacle_pixels() as u64,
        gt_freespace: labels.free_space_pixels() as u64,
        ..Default::default()
    };
    for (x, y) in centers {
        let (fx, fy) = (x * dwn, y * dwn);
        if fx >= labels.width || fy >= labels.height {
            return Err(Error::DimensionMismatch(format!(
                "prediction ({x}, {y}) outside {}x{} labels at downsampling {dwn}",
                labels.width, labels.height
            )));
        }
        match labels.get(fx, fy) {
            id if LabelMap::is_obstacle(id) => counts.tp += 1,
            crate::imaging::LABEL_FREE_SPACE => counts.fp += 1,
            _ => {}
        }
    }
    Ok(counts)
}

/// `(TPR, FPR)` of one frame's predictions.
pub fn pixel_rates(
    centers: impl IntoIterator<Item = (usize, usize)>,
    labels: &LabelMap,
    sub: usize,
    dwn: usize,
) -> Result<(f64, f64)> {
    pixel_counts(centers, labels, sub, dwn)?.rates()
}

/// Centers of the patches decided as obstacle.
pub fn obstacle_centers(decisions: &[PatchDecision]) -> Vec<(usize, usize)> {
    decisions.iter().filter(|d| d.verdict == Verdict::Obstacle).map(|d| (d.patch.xc, d.patch.yc)).collect()
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Upper convex hull, left to right, without collinear vertices.
fn upper_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.retain(|p| p.0.is_finite() && p.1.is_finite());
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// ROC hull from `(FPR, TPR)` points, anchored at (0,0) and (1,1).
///
/// Coordinates are clamped to the unit square. The result is concave and
/// non-decreasing in both coordinates, and the hull of a hull is itself.
pub fn roc_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    upper_hull(pts)
}

/// Hull of `(FP/frame, iInt)` points from the origin up to the best coverage.
pub fn instance_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.push((0.0, 0.0));
    let mut hull = upper_hull(pts);
    // drop the trailing part where more false positives buy no coverage
    if let Some(best) = hull.iter().map(|p| p.1).reduce(f64::max) {
        let end = hull.iter().position(|p| p.1 == best).unwrap_or(hull.len() - 1);
        hull.truncate(end + 1);
    }
    hull
}

/// Linear interpolation of a left-to-right polyline; `None` outside it.
pub fn hull_value(hull: &[(f64, f64)], x: f64) -> Option<f64> {
    let (first, last) = (hull.first()?, hull.last()?);
    if x < first.0 || x > last.0 {
        return None;
    }
    let mut best: Option<f64> = None;
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x >= a.0 && x <= b.0 {
            let y = if b.0 > a.0 { a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0) } else { a.1.max(b.1) };
            best = Some(best.map_or(y, |v: f64| v.max(y)));
        }
    }
    best.or(Some(first.1))
}

/// Coverage of one labeled instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceCount {
    pub id: u16,
    pub itp: u64,
    pub ifn: u64,
}

impl InstanceCount {
    pub fn iint(&self) -> f64 {
        let n = self.itp + self.ifn;
        if n == 0 {
            0.0
        } else {
            self.itp as f64 / n as f64
        }
    }
}

/// Instance-level tallies over one or more frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub instances: Vec<InstanceCount>,
    pub fp_stixels: usize,
    pub frames: usize,
}

impl InstanceStats {
    /// Macro average of the per-instance coverage; 0 without instances.
    pub fn mean_iint(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        self.instances.iter().map(InstanceCount::iint).sum::<f64>() / self.instances.len() as f64
    }

    pub fn fp_per_frame(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.fp_stixels as f64 / self.frames as f64
        }
    }

    pub fn accumulate(&mut self, other: &InstanceStats) {
        self.instances.extend_from_slice(&other.instances);
        self.fp_stixels += other.fp_stixels;
        self.frames += other.frames;
    }
}

/// Per-instance coverage and false-positive stixels of one frame.
///
/// A stixel is a false positive when more than `overlap_thresh` of its box
/// (clipped to the image) lies on free space. Boxes outside the image are
/// clipped.
pub fn instance_stats(
    stixels: &[CStix],
    labels: &LabelMap,
    free_space: &[bool],
    overlap_thresh: f64,
) -> Result<InstanceStats> {
    let (w, h) = (labels.width, labels.height);
    if free_space.len() != w * h {
        return Err(Error::DimensionMismatch(format!("free-space mask of {} for {w}x{h} labels", free_space.len())));
    }
    let mut covered = vec![false; w * h];
    let mut fp_stixels = 0;
    for s in stixels {
        let (x0, x1) = (s.u.min(w), (s.u + s.width).min(w));
        let (y0, y1) = (s.v_top.min(h), (s.v_bottom + 1).min(h));
        let mut area = 0usize;
        let mut free = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                covered[y * w + x] = true;
                area += 1;
                free += usize::from(free_space[y * w + x]);
            }
        }
        if area > 0 && free as f64 > overlap_thresh * area as f64 {
            fp_stixels += 1;
        }
    }
    let ids = labels.instance_ids();
    let mut instances: Vec<InstanceCount> = ids.iter().map(|&id| InstanceCount { id, itp: 0, ifn: 0 }).collect();
    for (i, &id) in labels.data.iter().enumerate() {
        if !LabelMap::is_obstacle(id) {
            continue;
        }
        let k = ids.binary_search(&id).expect("instance id collected above");
        if covered[i] {
            instances[k].itp += 1;
        } else {
            instances[k].ifn += 1;
        }
    }
    Ok(InstanceStats { instances, fp_stixels, frames: 1 })
}

/// `(mean iInt, FP/frame)` for one frame.
pub fn instance_metrics(
    stixels: &[CStix],
    labels: &LabelMap,
    free_space: &[bool],
    overlap_thresh: f64,
) -> Result<(f64, f64)> {
    let stats = instance_stats(stixels, labels, free_space, overlap_thresh)?;
    Ok((stats.mean_iint(), stats.fp_per_frame()))
}

/// Pointwise values of the point-compatibility sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcGrid {
    pub phi: Vec<f64>,
    pub h_min: Vec<f64>,
    pub h_max: Vec<f64>,
}

impl Default for PcGrid {
    fn default() -> Self {
        let d = PcParams::default();
        Self { phi: vec![d.phi], h_min: vec![d.h_min], h_max: vec![d.h_max] }
    }
}

/// Parameter grid of a sweep, read from JSON.
///
/// Empty lists fall back to the value in `base`. Every combination of the
/// lists is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamGrid {
    pub method: PointSource,
    pub base: DetectorConfig,
    /// `[width, height]` pairs.
    pub patch: Vec<[usize; 2]>,
    pub tau: Vec<f64>,
    pub lambda_min: Vec<f64>,
    pub pc: PcGrid,
    pub block_match: BlockMatchConfig,
    /// Cluster-stixel settings for the instance-level metrics.
    pub cluster: ClusterParams,
    /// Compute instance-level metrics as well.
    pub instance: bool,
    pub overlap_thresh: f64,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            method: PointSource::Fpht,
            base: DetectorConfig::default(),
            patch: Vec::new(),
            tau: Vec::new(),
            lambda_min: Vec::new(),
            pc: PcGrid::default(),
            block_match: BlockMatchConfig::default(),
            cluster: ClusterParams::default(),
            instance: false,
            overlap_thresh: 0.5,
        }
    }
}

impl ParamGrid {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let grid: Self = serde_json::from_str(s)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    fn patches(&self) -> Vec<[usize; 2]> {
        or_base(&self.patch, [self.base.patch_w, self.base.patch_h])
    }

    /// Detector configurations in sweep order, grouped by patch size.
    fn detector_configs(&self) -> Vec<Vec<DetectorConfig>> {
        self.patches()
            .into_iter()
            .map(|[w, h]| {
                let mut out = Vec::new();
                for &lambda_min in &or_base(&self.lambda_min, self.base.lambda_min) {
                    for &tau in &or_base(&self.tau, self.base.tau) {
                        out.push(DetectorConfig { patch_w: w, patch_h: h, tau, lambda_min, ..self.base.clone() });
                    }
                }
                out
            })
            .collect()
    }

    fn pc_configs(&self) -> Vec<PcParams> {
        let d = PcParams::default();
        let mut out = Vec::new();
        for &phi in &or_base(&self.pc.phi, d.phi) {
            for &h_min in &or_base(&self.pc.h_min, d.h_min) {
                for &h_max in &or_base(&self.pc.h_max, d.h_max) {
                    out.push(PcParams { phi, h_min, h_max });
                }
            }
        }
        out
    }

    pub fn config_count(&self) -> usize {
        match self.method {
            PointSource::Pc => self.pc_configs().len(),
            _ => self.detector_configs().iter().map(Vec::len).sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_thresh >= 0.0 && self.overlap_thresh <= 1.0) {
            return Err(Error::InvalidConfig("overlap_thresh outside [0, 1]".into()));
        }
        self.cluster.validate()?;
        match self.method {
            PointSource::Pc => {
                self.base.validate()?;
                self.pc_configs().iter().try_for_each(PcParams::validate)
            }
            _ => self.detector_configs().iter().flatten().try_for_each(DetectorConfig::validate),
        }
    }
}

fn or_base<T: Clone>(list: &[T], base: T) -> Vec<T> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

/// Instance-level summary of one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancePoint {
    pub iint: f64,
    pub fp_per_frame: f64,
}

/// One evaluated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RocPoint {
    pub method: PointSource,
    /// Parameter names and values that generated the point.
    pub params: Vec<(String, f64)>,
    pub counts: PixelCounts,
    pub tpr: f64,
    pub fpr: f64,
    pub instance: Option<InstancePoint>,
}

impl RocPoint {
    fn params_field(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }

    /// Short hash identifying method and parameters.
    pub fn config_hash(&self) -> String {
        let digest = sha256_hex(format!("{}|{}", self.method, self.params_field()).as_bytes());
        digest[..16].to_string()
    }
}

fn detector_params(cfg: &DetectorConfig) -> Vec<(String, f64)> {
    [
        ("patch_w", cfg.patch_w as f64),
        ("patch_h", cfg.patch_h as f64),
        ("stride", cfg.stride as f64),
        ("downsample", cfg.downsample as f64),
        ("phi_f", cfg.phi_f),
        ("phi_o", cfg.phi_o),
        ("tau", cfg.tau),
        ("lambda_min", cfg.lambda_min),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn pc_params(p: &PcParams, base: &DetectorConfig) -> Vec<(String, f64)> {
    [
        ("stride", base.stride as f64),
        ("downsample", base.downsample as f64),
        ("phi", p.phi),
        ("h_min", p.h_min),
        ("h_max", p.h_max),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub points: Vec<RocPoint>,
    /// Hull over `(FPR, TPR)`.
    pub hull: Vec<(f64, f64)>,
    /// Hull over `(FP/frame, iInt)`; empty without instance metrics.
    pub instance_hull: Vec<(f64, f64)>,
}

impl SweepResult {
    pub fn from_points(points: Vec<RocPoint>) -> Self {
        if points.is_empty() {
            return Self::default();
        }
        let hull = roc_hull(&points.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>());
        let inst: Vec<(f64, f64)> =
            points.iter().filter_map(|p| p.instance).map(|i| (i.fp_per_frame, i.iint)).collect();
        let instance_hull = if inst.is_empty() { Vec::new() } else { instance_hull(&inst) };
        Self { points, hull, instance_hull }
    }
}

/// A rendered frame and the full-resolution rig it was rendered with.
#[derive(Clone, Debug)]
pub struct EvalFrame {
    pub bundle: GroundTruthBundle,
    pub rig: CameraRig,
}

struct FrameTally {
    counts: PixelCounts,
    instance: Option<InstanceStats>,
}

fn sum_tallies(tallies: Vec<FrameTally>) -> Result<(PixelCounts, Option<InstanceStats>)> {
    let mut it = tallies.into_iter();
    let first = it.next().ok_or_else(|| Error::InvalidConfig("empty dataset".into()))?;
    let (mut counts, mut inst) = (first.counts, first.instance);
    for t in it {
        counts.accumulate(&t.counts)?;
        if let (Some(a), Some(b)) = (inst.as_mut(), t.instance.as_ref()) {
            a.accumulate(b);
        }
    }
    Ok((counts, inst))
}

fn roc_point(method: PointSource, params: Vec<(String, f64)>, tallies: Vec<FrameTally>) -> Result<RocPoint> {
    let (counts, inst) = sum_tallies(tallies)?;
    // the lattice compensation can overshoot 1 on small objects; the counts
    // keep the raw values
    let (tpr, fpr) = counts.rates()?;
    let (tpr, fpr) = (tpr.min(1.0), fpr.min(1.0));
    Ok(RocPoint {
        method,
        params,
        counts,
        tpr,
        fpr,
        instance: inst.map(|s| InstancePoint { iint: s.mean_iint(), fp_per_frame: s.fp_per_frame() }),
    })
}

/// Evaluates every grid configuration on every frame.
///
/// Block matching runs once per frame at detector resolution and patch fits
/// once per frame and patch size; threshold settings only re-apply the
/// decision rule to the stored fits. Counts are summed over frames before
/// the rates are computed.
pub fn run_sweep(frames: &[EvalFrame], grid: &ParamGrid) -> Result<SweepResult> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one frame".into()));
    }
    grid.validate()?;
    let base = &grid.base;
    let inputs: Vec<DetectorInputs> = frames
        .par_iter()
        .map(|f| prepare_block_matched(&f.bundle.left, &f.bundle.right, &f.rig, base, &grid.block_match))
        .collect::<Result<_>>()?;
    let instance_of = |frame: &EvalFrame, inp: &DetectorInputs, points: &[ObstaclePoint]| -> Result<InstanceStats> {
        let dmap = inp.dmap.upsample(base.downsample);
        let stixels = midlevel_rep(points, &dmap, &grid.cluster, &frame.rig);
        instance_stats(&stixels, &frame.bundle.labels, &frame.bundle.free_space, grid.overlap_thresh)
    };
    let mut points = Vec::new();
    match grid.method {
        PointSource::Pc => {
            let clouds: Vec<_> =
                inputs.iter().map(|inp| disparity_to_cloud(&inp.dmap, &inp.rig, base.stride)).collect();
            for params in grid.pc_configs() {
                let tallies = frames
                    .par_iter()
                    .zip(&inputs)
                    .zip(&clouds)
                    .map(|((frame, inp), cloud)| {
                        let result = pc_detect(cloud, &inp.rig, &params);
                        let centers = cloud.iter().zip(&result.obstacle).filter(|(_, &o)| o).map(|(p, _)| (p.x, p.y));
                        let counts = pixel_counts(centers, &frame.bundle.labels, base.stride, base.downsample)?;
                        let instance = if grid.instance {
                            let pts = upscale_points(&points_from_pc(cloud, &result), base.downsample);
                            Some(instance_of(frame, inp, &pts)?)
                        } else {
                            None
                        };
                        Ok(FrameTally { counts, instance })
                    })
                    .collect::<Result<Vec<_>>>()?;
                points.push(roc_point(PointSource::Pc, pc_params(&params, base), tallies)?);
            }
        }
        source => {
            let method = if source == PointSource::Pht { Method::Pht } else { Method::Fpht };
            for configs in grid.detector_configs() {
                let cfg0 = &configs[0];
                let decisions: Vec<Vec<PatchDecision>> = inputs
                    .iter()
                    .map(|inp| {
                        let g = PatchGrid::new(
                            inp.left.width,
                            inp.left.height,
                            cfg0.patch_w,
                            cfg0.patch_h,
                            cfg0.stride,
                            cfg0.downsample,
                        )?;
                        detect_frame(&inp.left, &inp.right, &inp.dmap, &g, &inp.rig, cfg0, method)
                    })
                    .collect::<Result<_>>()?;
                for cfg in &configs {
                    let tallies = frames
                        .par_iter()
                        .zip(&inputs)
                        .zip(&decisions)
                        .map(|((frame, inp), decs)| {
                            let rule = cfg.decision_rule(method, inp.left.maxval);
                            let positives: Vec<PatchDecision> = decs
                                .iter()
                                .filter(|d| d.redecide(&rule) == Verdict::Obstacle)
                                .map(|d| PatchDecision { verdict: Verdict::Obstacle, ..d.clone() })
                                .collect();
                            let counts = pixel_counts(
                                obstacle_centers(&positives),
                                &frame.bundle.labels,
                                cfg.stride,
                                cfg.downsample,
                            )?;
                            let instance = if grid.instance {
                                let pts = points_from_decisions(&positives, &frame.rig, cfg.downsample, source);
                                Some(instance_of(frame, inp, &pts)?)
                            } else {
                                None
                            };
                            Ok(FrameTally { counts, instance })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    points.push(roc_point(source, detector_params(cfg), tallies)?);
                }
            }
        }
    }
    Ok(SweepResult::from_points(points))
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

const REPORT_HEADER: [&str; 14] = [
    "config_hash",
    "method",
    "params",
    "tp",
    "fp",
    "sub",
    "dwn",
    "gt_obstacles",
    "gt_freespace",
    "tpr",
    "fpr",
    "iint",
    "fp_per_frame",
    "on_hull",
];

/// One row per evaluated configuration.
pub fn write_report_csv(out: impl Write, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for p in &result.points {
        let on_hull = result.hull.contains(&(p.fpr.clamp(0.0, 1.0), p.tpr.clamp(0.0, 1.0)));
        let c = &p.counts;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            p.config_hash(),
            p.method.to_string(),
            p.params_field(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.sub.to_string(),
            c.dwn.to_string(),
            c.gt_obstacles.to_string(),
            c.gt_freespace.to_string(),
            p.tpr.to_string(),
            p.fpr.to_string(),
            opt(p.instance.map(|i| i.iint)),
            opt(p.instance.map(|i| i.fp_per_frame)),
            u8::from(on_hull).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(input: impl Read) -> Result<Vec<RocPoint>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(REPORT_HEADER) {
        return Err(Error::Parse("unexpected report header".into()));
    }
    fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}")))
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let params = if rec[2].is_empty() {
            Vec::new()
        } else {
            rec[2]
                .split(';')
                .map(|kv| {
                    let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("bad parameter {kv:?}")))?;
                    Ok((k.to_string(), num(v)?))
                })
                .collect::<Result<_>>()?
        };
        let instance = match (&rec[11], &rec[12]) {
            ("", "") => None,
            (i, f) => Some(InstancePoint { iint: num(i)?, fp_per_frame: num(f)? }),
        };
        let p = RocPoint {
            method: rec[1].parse()?,
            params,
            counts: PixelCounts {
                tp: num(&rec[3])?,
                fp: num(&rec[4])?,
                sub: num(&rec[5])?,
                dwn: num(&rec[6])?,
                gt_obstacles: num(&rec[7])?,
                gt_freespace: num(&rec[8])?,
            },
            tpr: num(&rec[9])?,
            fpr: num(&rec[10])?,
            instance,
        };
        if p.config_hash() != rec[0] {
            return Err(Error::Parse(format!("config hash mismatch for {}", &rec[0])));
        }
        out.push(p);
    }
    Ok(out)
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 600.0;
const MARGIN: f64 = 70.0;

/// 800×600 scatter of `points` with `hull` drawn as a polyline.
pub fn svg_plot(points: &[(f64, f64)], hull: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let x_max = points.iter().chain(hull).map(|p| p.0).fold(1.0_f64, f64::max);
    let y_max = points.iter().chain(hull).map(|p| p.1).fold(1.0_f64, f64::max);
    let (pw, ph) = (SVG_W - 2.0 * MARGIN, SVG_H - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + x / x_max * pw;
    let sy = |y: f64| SVG_H - MARGIN - y / y_max * ph;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<g stroke=\"black\"><line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\"/><line x1=\"{m}\" y1=\"{b}\" x2=\"{m}\" y2=\"{m}\"/></g>\n",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN
    ));
    s.push_str("<g font-family=\"sans-serif\" font-size=\"12\">\n");
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (xv, yv) = (t * x_max, t * y_max);
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            sx(xv),
            SVG_H - MARGIN + 18.0,
            fmt_tick(xv)
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            MARGIN - 8.0,
            sy(yv) + 4.0,
            fmt_tick(yv)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        SVG_W / 2.0,
        SVG_H - 20.0,
        xml_escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">{}</text>\n",
        SVG_H / 2.0,
        SVG_H / 2.0,
        xml_escape(y_label)
    ));
    s.push_str("</g>\n");
    if !hull.is_empty() {
        let pts: Vec<String> = hull.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    s.push_str("<g fill=\"firebrick\">\n");
    for &(x, y) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        s.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\"/>\n", sx(x), sy(y)));
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `report.csv`, `roc.svg` and, with instance metrics, `instance.svg`
/// into `dir`.
pub fn emit_report(result: &SweepResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_report_csv(std::fs::File::create(dir.join("report.csv"))?, result)?;
    let roc: Vec<(f64, f64)> = result.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    std::fs::write(dir.join("roc.svg"), svg_plot(&roc, &result.hull, "FPR", "TPR"))?;
    let inst: Vec<(f64, f64)> =
        result.points.iter().filter_map(|p| p.instance).map(|i| (i.fp_per_frame, i.iint)).collect();
    if !inst.is_empty() {
        std::fs::write(dir.join("instance.svg"), svg_plot(&inst, &result.instance_hull, "FP per frame", "iInt"))?;
    }
    Ok(())
}
