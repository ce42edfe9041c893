//! Cluster-stixels: distance-adaptive DBSCAN over obstacle points followed by
//! fixed-width horizontal and variance-driven vertical splitting.
//!
//! Clustering runs in the ground plane `(X, Z)`. Each point owns a rectangle
//! aligned with its viewing ray whose depth extent grows with the expected
//! depth noise. Two points are neighbors when either lies in the other's
//! rectangle, which keeps density-connectivity symmetric and the result
//! independent of input order up to border-point ties.

use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::disparity::CloudPoint;
use crate::error::{Error, Result};
use crate::geometry::{triangulate, CameraRig};
use crate::hypothesis::{PatchDecision, Verdict};
use crate::imaging::DisparityMap;
use crate::pc::PcResult;
use crate::unionfind::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSource {
    Pht,
    Fpht,
    Pc,
}

impl std::fmt::Display for PointSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PointSource::Pht => "pht",
            PointSource::Fpht => "fpht",
            PointSource::Pc => "pc",
        })
    }
}

impl std::str::FromStr for PointSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pht" => Ok(PointSource::Pht),
            "fpht" => Ok(PointSource::Fpht),
            "pc" => Ok(PointSource::Pc),
            _ => Err(Error::Parse(format!("unknown point source {s:?}"))),
        }
    }
}

/// An obstacle pixel with its triangulated position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObstaclePoint {
    pub x: usize,
    pub y: usize,
    pub point: Vector3<f64>,
    pub disparity: f64,
    pub source: PointSource,
    /// Cluster assigned by the source itself (point compatibility).
    pub cluster: Option<usize>,
}

/// One point per obstacle patch, at the patch center.
///
/// Centers are mapped to full resolution by `downsample` and triangulated
/// with the obstacle fit's center disparity against the full-resolution `rig`.
pub fn points_from_decisions(
    decisions: &[PatchDecision],
    rig: &CameraRig,
    downsample: usize,
    source: PointSource,
) -> Vec<ObstaclePoint> {
    let s = downsample.max(1);
    decisions
        .iter()
        .filter(|d| d.verdict == Verdict::Obstacle)
        .filter_map(|d| {
            let disparity = d.fit_o.as_ref()?.center_disparity * s as f64;
            let (x, y) = (d.patch.xc * s, d.patch.yc * s);
            let point = triangulate(x as f64, y as f64, disparity, rig).ok()?;
            Some(ObstaclePoint { x, y, point, disparity, source, cluster: None })
        })
        .collect()
}

/// Flagged point-compatibility points, keeping their clusters.
pub fn points_from_pc(cloud: &[CloudPoint], result: &PcResult) -> Vec<ObstaclePoint> {
    cloud
        .iter()
        .zip(&result.obstacle)
        .zip(&result.cluster)
        .filter(|((_, &o), _)| o)
        .map(|((p, _), &cluster)| ObstaclePoint {
            x: p.x,
            y: p.y,
            point: p.point,
            disparity: p.disparity,
            source: PointSource::Pc,
            cluster,
        })
        .collect()
}

/// Maps detector-resolution points to a grid `factor` times finer.
pub fn upscale_points(points: &[ObstaclePoint], factor: usize) -> Vec<ObstaclePoint> {
    let f = factor.max(1);
    points.iter().map(|p| ObstaclePoint { x: p.x * f, y: p.y * f, disparity: p.disparity * f as f64, ..*p }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Lateral half-width of a neighborhood, meters.
    pub w0: f64,
    /// Depth half-extent before noise growth, meters.
    pub l0: f64,
    /// Depth-noise multiplier.
    pub kappa: f64,
    /// Disparity noise, pixels.
    pub sigma_d: f64,
    pub minpts0: f64,
    /// Gain of the distance-dependent point threshold, meters.
    pub k: f64,
    /// Stixel width, pixels.
    pub stixel_width: usize,
    /// Disparity variance above which a stixel is split, px².
    pub var_thresh: f64,
    /// Stixels are never split into children shorter than this, pixels.
    pub min_height: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            w0: 0.3,
            l0: 0.3,
            kappa: 3.0,
            sigma_d: 0.5,
            minpts0: 4.0,
            k: 0.02,
            stixel_width: 8,
            var_thresh: 4.0,
            min_height: 4,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.w0, self.l0, self.kappa, self.sigma_d, self.minpts0, self.k, self.var_thresh];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("cluster parameters must be positive".into()));
        }
        if self.stixel_width == 0 || self.min_height == 0 {
            return Err(Error::InvalidConfig("stixel width and minimum height must be positive".into()));
        }
        Ok(())
    }
}

/// Static R-tree over 2D points, packed by sort-tile-recursive bulk loading.
#[derive(Clone, Debug)]
pub struct RTree {
    coords: Vec<[f64; 2]>,
    /// Point indices in leaf order.
    entries: Vec<usize>,
    /// Levels from the leaves up; each node covers a contiguous child range
    /// of the level below (or of `entries` for leaves).
    levels: Vec<Vec<Node>>,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    min: [f64; 2],
    max: [f64; 2],
    start: usize,
    end: usize,
}

const NODE_CAPACITY: usize = 16;

/// Sort-tile-recursive order of items by their centers.
fn str_order(centers: &[[f64; 2]]) -> Vec<usize> {
    let n = centers.len();
    let mut order: Vec<usize> = (0..n).collect();
    let by = |axis: usize| {
        move |a: &usize, b: &usize| {
            centers[*a][axis]
                .total_cmp(&centers[*b][axis])
                .then(centers[*a][1 - axis].total_cmp(&centers[*b][1 - axis]))
                .then(a.cmp(b))
        }
    };
    order.sort_by(by(0));
    let leaves = n.div_ceil(NODE_CAPACITY);
    let slabs = (leaves as f64).sqrt().ceil().max(1.0) as usize;
    let slab_len = (slabs * NODE_CAPACITY).max(1);
    for slab in order.chunks_mut(slab_len) {
        slab.sort_by(by(1));
    }
    order
}

impl RTree {
    pub fn bulk_load(coords: Vec<[f64; 2]>) -> Self {
        let entries = str_order(&coords);
        let mut levels = Vec::new();
        let mut current: Vec<Node> = entries
            .chunks(NODE_CAPACITY)
            .enumerate()
            .map(|(i, chunk)| {
                let mut node = Node {
                    min: [f64::INFINITY; 2],
                    max: [f64::NEG_INFINITY; 2],
                    start: i * NODE_CAPACITY,
                    end: i * NODE_CAPACITY + chunk.len(),
                };
                for &e in chunk {
                    for (a, &c) in coords[e].iter().enumerate() {
                        node.min[a] = node.min[a].min(c);
                        node.max[a] = node.max[a].max(c);
                    }
                }
                node
            })
            .collect();
        while current.len() > 1 {
            let centers: Vec<[f64; 2]> =
                current.iter().map(|n| [0.5 * (n.min[0] + n.max[0]), 0.5 * (n.min[1] + n.max[1])]).collect();
            let order = str_order(&centers);
            let packed: Vec<Node> = order.iter().map(|&i| current[i]).collect();
            let parents = packed
                .chunks(NODE_CAPACITY)
                .enumerate()
                .map(|(i, chunk)| {
                    let mut node = Node {
                        min: [f64::INFINITY; 2],
                        max: [f64::NEG_INFINITY; 2],
                        start: i * NODE_CAPACITY,
                        end: i * NODE_CAPACITY + chunk.len(),
                    };
                    for c in chunk {
                        for a in 0..2 {
                            node.min[a] = node.min[a].min(c.min[a]);
                            node.max[a] = node.max[a].max(c.max[a]);
                        }
                    }
                    node
                })
                .collect();
            levels.push(packed);
            current = parents;
        }
        levels.push(current);
        Self { coords, entries, levels }
    }

    /// Index over the ground-plane coordinates `(X, Z)` of `points`.
    pub fn from_points(points: &[ObstaclePoint]) -> Self {
        Self::bulk_load(points.iter().map(|p| [p.point.x, p.point.z]).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Indices of the points inside the closed box `[min, max]`, ascending.
    pub fn query(&self, min: [f64; 2], max: [f64; 2]) -> Vec<usize> {
        let mut out = Vec::new();
        let overlaps = |n: &Node| (0..2).all(|a| n.min[a] <= max[a] && n.max[a] >= min[a]);
        let top = self.levels.len() - 1;
        let mut stack: Vec<(usize, usize)> = (0..self.levels[top].len()).map(|i| (top, i)).collect();
        while let Some((level, i)) = stack.pop() {
            let node = &self.levels[level][i];
            if !overlaps(node) {
                continue;
            }
            if level == 0 {
                for &e in &self.entries[node.start..node.end] {
                    if in_box(&self.coords[e], min, max) {
                        out.push(e);
                    }
                }
            } else {
                stack.extend((node.start..node.end).map(|c| (level - 1, c)));
            }
        }
        out.sort_unstable();
        out
    }
}

fn in_box(c: &[f64; 2], min: [f64; 2], max: [f64; 2]) -> bool {
    (0..2).all(|a| c[a] >= min[a] && c[a] <= max[a])
}

/// Reference range query by scanning every point.
pub fn linear_scan(coords: &[[f64; 2]], min: [f64; 2], max: [f64; 2]) -> Vec<usize> {
    (0..coords.len()).filter(|&i| in_box(&coords[i], min, max)).collect()
}

/// Rectangle in the ground plane aligned with a point's viewing ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighborhood {
    /// Center `(X, Z)`.
    pub center: [f64; 2],
    /// Rotation of the depth axis away from `+Z` toward `+X`, radians.
    pub angle: f64,
    pub half_lateral: f64,
    pub half_depth: f64,
    pub min_pts: usize,
}

impl Neighborhood {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dz) = (x - self.center[0], z - self.center[1]);
        let depth = dx * s + dz * c;
        let lateral = dx * c - dz * s;
        lateral.abs() <= self.half_lateral && depth.abs() <= self.half_depth
    }

    /// Axis-aligned box enclosing the rectangle, padded for rounding.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.angle.sin_cos();
        let ex = self.half_lateral * c.abs() + self.half_depth * s.abs();
        let ez = self.half_lateral * s.abs() + self.half_depth * c.abs();
        let eps = 1e-9 * (1.0 + ex + ez + self.center[0].abs() + self.center[1].abs());
        ([self.center[0] - ex - eps, self.center[1] - ez - eps], [self.center[0] + ex + eps, self.center[1] + ez + eps])
    }
}

/// Depth standard deviation at depth `z` for disparity noise `sigma_d`.
pub fn depth_sigma(z: f64, sigma_d: f64, rig: &CameraRig) -> f64 {
    z * z * sigma_d / rig.focal_baseline()
}

pub fn adaptive_neighborhood(p: &ObstaclePoint, params: &ClusterParams, rig: &CameraRig) -> Neighborhood {
    let (x, z) = (p.point.x, p.point.z);
    let min_pts = (params.minpts0 + params.k * rig.fx / z).ceil().max(1.0) as usize;
    Neighborhood {
        center: [x, z],
        angle: x.atan2(z),
        half_lateral: params.w0,
        half_depth: params.l0 + params.kappa * depth_sigma(z, params.sigma_d, rig),
        min_pts,
    }
}

/// Assigns each point to a cluster (numbered by their lowest core point) or
/// to noise (`None`).
fn dbscan_from_adjacency(adjacent: &[Vec<usize>], neighborhoods: &[Neighborhood]) -> Vec<Option<usize>> {
    let n = adjacent.len();
    // a point counts itself, as in standard DBSCAN
    let core: Vec<bool> = (0..n).map(|i| adjacent[i].len() + 1 >= neighborhoods[i].min_pts).collect();
    let mut labels = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let id = next;
        next += 1;
        labels[seed] = Some(id);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &adjacent[p] {
                if labels[q].is_some() {
                    continue;
                }
                labels[q] = Some(id);
                if core[q] {
                    queue.push_back(q);
                }
            }
        }
    }
    labels
}

/// Symmetric neighbor lists: `q` neighbors `p` when either lies in the
/// other's rectangle. Lists are sorted and exclude the point itself.
fn adjacency(points: &[ObstaclePoint], neighborhoods: &[Neighborhood]) -> Vec<Vec<usize>> {
    let tree = RTree::from_points(points);
    let mut adjacent = vec![Vec::new(); points.len()];
    for (i, nb) in neighborhoods.iter().enumerate() {
        let (min, max) = nb.bounds();
        for j in tree.query(min, max) {
            if j != i && nb.contains(points[j].point.x, points[j].point.z) {
                adjacent[i].push(j);
                adjacent[j].push(i);
            }
        }
    }
    for list in &mut adjacent {
        list.sort_unstable();
        list.dedup();
    }
    adjacent
}

/// Distance-adaptive DBSCAN.
///
/// Cores have at least `min_pts` neighbors counting themselves; border
/// points join the lowest-numbered cluster among their core neighbors.
pub fn adaptive_dbscan(points: &[ObstaclePoint], params: &ClusterParams, rig: &CameraRig) -> Vec<Option<usize>> {
    let neighborhoods: Vec<_> = points.iter().map(|p| adaptive_neighborhood(p, params, rig)).collect();
    let adjacent = adjacency(points, &neighborhoods);
    dbscan_from_adjacency(&adjacent, &neighborhoods)
}

/// All-pairs reference for [`adaptive_dbscan`]: connected components of
/// core points, then border points attached to their lowest adjacent cluster.
pub fn dbscan_brute_force(points: &[ObstaclePoint], params: &ClusterParams, rig: &CameraRig) -> Vec<Option<usize>> {
    let n = points.len();
    let nb: Vec<_> = points.iter().map(|p| adaptive_neighborhood(p, params, rig)).collect();
    let linked = |i: usize, j: usize| {
        nb[i].contains(points[j].point.x, points[j].point.z) || nb[j].contains(points[i].point.x, points[i].point.z)
    };
    let degree: Vec<usize> = (0..n).map(|i| (0..n).filter(|&j| j != i && linked(i, j)).count()).collect();
    let core: Vec<bool> = (0..n).map(|i| degree[i] + 1 >= nb[i].min_pts).collect();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if core[i] && core[j] && linked(i, j) {
                uf.union(i, j);
            }
        }
    }
    let mut labels = uf.canonical_labels(&core);
    for i in 0..n {
        if core[i] {
            continue;
        }
        labels[i] = (0..n).filter(|&j| core[j] && linked(i, j)).filter_map(|j| labels[j]).min();
    }
    labels
}

/// A vertical obstacle box in image coordinates. Rows are inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CStix {
    pub cluster: usize,
    pub u: usize,
    pub width: usize,
    pub v_top: usize,
    pub v_bottom: usize,
    pub disparity: f64,
    pub z: f64,
}

impl CStix {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.u && x < self.u + self.width && y >= self.v_top && y <= self.v_bottom
    }

    pub fn height(&self) -> usize {
        self.v_bottom - self.v_top + 1
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Stixel over the member points falling in columns `[u, u + width)` and
/// rows `[top, bottom]`, or `None` if there are none.
fn stixel_over(
    cluster: usize,
    members: &[&ObstaclePoint],
    u: usize,
    width: usize,
    rows: (usize, usize),
) -> Option<CStix> {
    let inside: Vec<&&ObstaclePoint> =
        members.iter().filter(|p| p.x >= u && p.x < u + width && p.y >= rows.0 && p.y <= rows.1).collect();
    if inside.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = inside.iter().map(|p| p.disparity).collect();
    let mut z: Vec<f64> = inside.iter().map(|p| p.point.z).collect();
    Some(CStix {
        cluster,
        u,
        width,
        v_top: inside.iter().map(|p| p.y).min()?,
        v_bottom: inside.iter().map(|p| p.y).max()?,
        disparity: median(&mut d),
        z: median(&mut z),
    })
}

/// Partitions a cluster's columns into bins of `width` starting at its
/// leftmost column; the last bin is clipped to the cluster's extent.
pub fn split_horizontally(cluster: usize, members: &[&ObstaclePoint], width: usize) -> Vec<CStix> {
    let width = width.max(1);
    let (Some(lo), Some(hi)) = (members.iter().map(|p| p.x).min(), members.iter().map(|p| p.x).max()) else {
        return vec![];
    };
    (lo..=hi)
        .step_by(width)
        .filter_map(|u| {
            let w = width.min(hi + 1 - u);
            stixel_over(cluster, members, u, w, (0, usize::MAX))
        })
        .collect()
}

/// Population variance of the valid disparities inside a box; 0 when empty.
fn box_variance(dmap: &DisparityMap, u: usize, width: usize, top: usize, bottom: usize) -> f64 {
    let (mut n, mut s, mut ss) = (0usize, 0.0, 0.0);
    for y in top..=bottom.min(dmap.height.saturating_sub(1)) {
        for x in u..(u + width).min(dmap.width) {
            if let Some(d) = dmap.get(x, y) {
                n += 1;
                s += d;
                ss += d * d;
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    let mean = s / n as f64;
    (ss / n as f64 - mean * mean).max(0.0)
}

/// Recursively bisects stixels at their middle row while the disparity
/// variance inside exceeds `var_thresh` and both halves stay at least
/// `min_height` tall. Halves without member points are dropped; the others
/// are re-fit to their members.
pub fn split_vertically(
    stixels: &[CStix],
    members: &[&ObstaclePoint],
    dmap: &DisparityMap,
    var_thresh: f64,
    min_height: usize,
) -> Vec<CStix> {
    let mut out = Vec::new();
    let mut stack: Vec<CStix> = stixels.iter().rev().copied().collect();
    while let Some(s) = stack.pop() {
        let h = s.height();
        let splittable =
            h >= 2 * min_height.max(1) && box_variance(dmap, s.u, s.width, s.v_top, s.v_bottom) > var_thresh;
        if !splittable {
            out.push(s);
            continue;
        }
        let mid = s.v_top + h / 2;
        let top = stixel_over(s.cluster, members, s.u, s.width, (s.v_top, mid - 1));
        let bottom = stixel_over(s.cluster, members, s.u, s.width, (mid, s.v_bottom));
        // children are processed top first
        stack.extend(bottom);
        stack.extend(top);
    }
    out
}

/// Cluster-stixels of an obstacle point list.
///
/// Point-compatibility input that carries its own clusters skips DBSCAN.
/// Noise points produce no stixels. `dmap` must share the points' pixel grid.
pub fn midlevel_rep(
    points: &[ObstaclePoint],
    dmap: &DisparityMap,
    params: &ClusterParams,
    rig: &CameraRig,
) -> Vec<CStix> {
    let pre_clustered = !points.is_empty() && points.iter().all(|p| p.source == PointSource::Pc && p.cluster.is_some());
    let labels =
        if pre_clustered { points.iter().map(|p| p.cluster).collect() } else { adaptive_dbscan(points, params, rig) };
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<&ObstaclePoint>> = vec![Vec::new(); count];
    for (p, l) in points.iter().zip(&labels) {
        if let Some(l) = l {
            members[*l].push(p);
        }
    }
    let mut out = Vec::new();
    for (cluster, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        let horizontal = split_horizontally(cluster, m, params.stixel_width);
        out.extend(split_vertically(&horizontal, m, dmap, params.var_thresh, params.min_height));
    }
    out
}

pub fn write_stixels_csv(out: impl Write, stixels: &[CStix]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "u", "width", "v_top", "v_bottom", "disparity", "z"])?;
    for s in stixels {
        w.serialize((s.cluster, s.u, s.width, s.v_top, s.v_bottom, s.disparity, s.z))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stixels_csv(input: impl Read) -> Result<Vec<CStix>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (cluster, u, width, v_top, v_bottom, disparity, z): (usize, usize, usize, usize, usize, f64, f64) = row?;
        if width == 0 || v_top > v_bottom {
            return Err(Error::Parse(format!("degenerate stixel at column {u}")));
        }
        out.push(CStix { cluster, u, width, v_top, v_bottom, disparity, z });
    }
    Ok(out)
}

pub fn write_points_csv(out: impl Write, points: &[ObstaclePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "X", "Y", "Z", "disparity", "source", "cluster"])?;
    for p in points {
        let cluster = p.cluster.map(|c| c.to_string()).unwrap_or_default();
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            p.point.x.to_string(),
            p.point.y.to_string(),
            p.point.z.to_string(),
            p.disparity.to_string(),
            p.source.to_string(),
            cluster,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(input: impl Read) -> Result<Vec<ObstaclePoint>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        if row.len() != 8 {
            return Err(Error::Parse(format!("expected 8 point columns, got {}", row.len())));
        }
        let num = |i: usize| row[i].parse::<f64>().map_err(|e| Error::Parse(format!("column {i}: {e}")));
        let idx = |i: usize| row[i].parse::<usize>().map_err(|e| Error::Parse(format!("column {i}: {e}")));
        let point = Vector3::new(num(2)?, num(3)?, num(4)?);
        if !(point.z > 0.0) {
            return Err(Error::Parse(format!("point with non-positive depth {}", point.z)));
        }
        let cluster = if row[7].is_empty() { None } else { Some(idx(7)?) };
        out.push(ObstaclePoint { x: idx(0)?, y: idx(1)?, point, disparity: num(5)?, source: row[6].parse()?, cluster });
    }
    Ok(out)
}
