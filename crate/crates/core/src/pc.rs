//! Point compatibility: pairwise truncated-cone obstacle labeling.
//!
//! A point `p2` is compatible with a lower point `p1` when it rises between
//! `h_min` and `h_max` above it (up is `-Y`) and lies inside the cone of
//! half-opening `90 deg - phi` around the vertical through `p1`. Both points
//! of a compatible pair are flagged and merged into one cluster.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::disparity::CloudPoint;
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::unionfind::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcParams {
    /// Minimum elevation angle of a compatible segment, degrees.
    pub phi: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for PcParams {
    fn default() -> Self {
        Self { phi: 45.0, h_min: 0.1, h_max: 0.5 }
    }
}

impl PcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi < 90.0) {
            return Err(Error::InvalidConfig(format!("phi = {} outside (0, 90)", self.phi)));
        }
        if !(self.h_min > 0.0 && self.h_min < self.h_max && self.h_max.is_finite()) {
            return Err(Error::InvalidConfig("need 0 < h_min < h_max".into()));
        }
        Ok(())
    }

    /// Largest horizontal distance of a compatible pair.
    fn max_radius(&self) -> f64 {
        self.h_max / self.phi.to_radians().tan()
    }
}

/// Whether `p2` lies in the truncated cone based at `p1`.
pub fn compatible(p1: &Vector3<f64>, p2: &Vector3<f64>, params: &PcParams) -> bool {
    let dh = p1.y - p2.y;
    if !(dh >= params.h_min && dh <= params.h_max) {
        return false;
    }
    let horizontal = (p2.x - p1.x).hypot(p2.z - p1.z);
    horizontal * params.phi.to_radians().tan() <= dh
}

/// Obstacle flags and clusters over a point cloud.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PcResult {
    pub obstacle: Vec<bool>,
    /// Cluster per point, numbered in order of each cluster's lowest index.
    pub cluster: Vec<Option<usize>>,
}

impl PcResult {
    pub fn cluster_count(&self) -> usize {
        self.cluster.iter().flatten().max().map_or(0, |m| m + 1)
    }

    fn from_union(obstacle: Vec<bool>, mut uf: UnionFind) -> Self {
        let labels = uf.canonical_labels(&obstacle);
        Self { obstacle, cluster: labels }
    }
}

/// All-pairs reference implementation.
pub fn pc_brute_force(cloud: &[CloudPoint], params: &PcParams) -> PcResult {
    let n = cloud.len();
    let mut obstacle = vec![false; n];
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&cloud[i].point, &cloud[j].point);
            if compatible(a, b, params) || compatible(b, a, params) {
                obstacle[i] = true;
                obstacle[j] = true;
                uf.union(i, j);
            }
        }
    }
    PcResult::from_union(obstacle, uf)
}

/// Per-column index of points sorted by row, keyed by the reprojection of
/// each point's own 3D coordinates.
struct ColumnIndex {
    columns: Vec<Vec<(f64, usize)>>,
}

impl ColumnIndex {
    fn new(cloud: &[CloudPoint], rig: &CameraRig) -> Self {
        let mut columns = vec![Vec::new(); rig.width];
        for (i, p) in cloud.iter().enumerate() {
            let (u, v, _) = rig.project(&p.point);
            columns[Self::column(u, rig.width)].push((v, i));
        }
        for c in &mut columns {
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        Self { columns }
    }

    fn column(u: f64, width: usize) -> usize {
        (u.floor().max(0.0) as usize).min(width - 1)
    }

    fn query(&self, u_lo: f64, u_hi: f64, v_lo: f64, v_hi: f64, mut f: impl FnMut(usize)) {
        let w = self.columns.len();
        for col in &self.columns[Self::column(u_lo, w)..=Self::column(u_hi, w)] {
            let start = col.partition_point(|e| e.0 < v_lo);
            for &(v, i) in &col[start..] {
                if v > v_hi {
                    break;
                }
                f(i);
            }
        }
    }
}

/// Image-space bounding box of the 3D region that can hold partners above `p`,
/// or `None` when the region reaches behind the camera.
fn search_window(p: &Vector3<f64>, rig: &CameraRig, params: &PcParams) -> Option<[f64; 4]> {
    let r = params.max_radius();
    if p.z - r <= 0.0 {
        return None;
    }
    let (mut u_lo, mut u_hi, mut v_lo, mut v_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for dx in [-r, r] {
        for dz in [-r, r] {
            for dy in [-params.h_max, -params.h_min] {
                let (u, v, _) = rig.project(&Vector3::new(p.x + dx, p.y + dy, p.z + dz));
                u_lo = u_lo.min(u);
                u_hi = u_hi.max(u);
                v_lo = v_lo.min(v);
                v_hi = v_hi.max(v);
            }
        }
    }
    // slack for rounding in the reprojection
    let eps = 1e-6 * (1.0 + u_hi.abs().max(v_hi.abs()));
    Some([u_lo - eps, u_hi + eps, v_lo - eps, v_hi + eps])
}

/// Image-space search: each point, visited from the bottom-left to the
/// top-right of the image, tests the points inside the projection of its cone.
pub fn pc_detect(cloud: &[CloudPoint], rig: &CameraRig, params: &PcParams) -> PcResult {
    let n = cloud.len();
    let mut obstacle = vec![false; n];
    let mut uf = UnionFind::new(n);
    if n == 0 {
        return PcResult::from_union(obstacle, uf);
    }
    let index = ColumnIndex::new(cloud, rig);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (cloud[i].x, std::cmp::Reverse(cloud[i].y), i));
    let test = |i: usize, j: usize, obstacle: &mut Vec<bool>, uf: &mut UnionFind| {
        if j != i && compatible(&cloud[i].point, &cloud[j].point, params) {
            obstacle[i] = true;
            obstacle[j] = true;
            uf.union(i, j);
        }
    };
    for &i in &order {
        match search_window(&cloud[i].point, rig, params) {
            Some([u_lo, u_hi, v_lo, v_hi]) => {
                index.query(u_lo, u_hi, v_lo, v_hi, |j| test(i, j, &mut obstacle, &mut uf));
            }
            None => {
                for j in 0..n {
                    test(i, j, &mut obstacle, &mut uf);
                }
            }
        }
    }
    PcResult::from_union(obstacle, uf)
}

pub fn write_pc_csv(mut out: impl Write, cloud: &[CloudPoint], result: &PcResult) -> Result<()> {
    writeln!(out, "x,y,X,Y,Z,disparity,obstacle,cluster")?;
    for (i, p) in cloud.iter().enumerate() {
        let cluster = result.cluster[i].map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.x,
            p.y,
            p.point.x,
            p.point.y,
            p.point.z,
            p.disparity,
            u8::from(result.obstacle[i]),
            cluster
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::triangulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> PcParams {
        PcParams { phi: 45.0, h_min: 0.1, h_max: 0.5 }
    }

    #[test]
    fn cone_examples() {
        let p1 = Vector3::new(0.0, 1.2, 10.0);
        assert!(compatible(&p1, &Vector3::new(0.0, 0.9, 10.0), &params()));
        assert!(!compatible(&p1, &Vector3::new(0.4, 0.9, 10.0), &params()));
        assert!(!compatible(&p1, &Vector3::new(0.0, 1.15, 10.0), &params()));
        // downward never compatible from the upper point
        assert!(!compatible(&Vector3::new(0.0, 0.9, 10.0), &p1, &params()));
    }

    fn cloud_from(points: &[Vector3<f64>], rig: &CameraRig) -> Vec<CloudPoint> {
        points
            .iter()
            .filter_map(|p| {
                let (u, v, d) = rig.project(p);
                let (x, y) = (u.round(), v.round());
                if x < 0.0 || y < 0.0 || x >= rig.width as f64 || y >= rig.height as f64 {
                    return None;
                }
                let point = triangulate(x, y, d, rig).ok()?;
                Some(CloudPoint { x: x as usize, y: y as usize, disparity: d, point })
            })
            .collect()
    }

    #[test]
    fn flat_plane_has_no_obstacles() {
        let rig = CameraRig::new(500.0, 500.0, 320.0, 240.0, 0.2, 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..800)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    1.2 + rng.random_range(-0.01..0.01),
                    rng.random_range(4.0..20.0),
                )
            })
            .collect();
        let cloud = cloud_from(&pts, &rig);
        let r = pc_detect(&cloud, &rig, &params());
        assert!(r.obstacle.iter().all(|&o| !o));
        assert_eq!(r, pc_brute_force(&cloud, &params()));
    }

    #[test]
    fn two_separated_posts_form_two_clusters() {
        let rig = CameraRig::new(500.0, 500.0, 320.0, 240.0, 0.2, 640, 480).unwrap();
        let mut pts = Vec::new();
        for (x0, z0) in [(-1.0, 10.0), (1.5, 15.0)] {
            for k in 0..10 {
                pts.push(Vector3::new(x0, 1.2 - 0.04 * k as f64, z0));
            }
        }
        let cloud: Vec<CloudPoint> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| CloudPoint { x: i, y: 0, disparity: rig.disparity_at_depth(p.z), point: *p })
            .collect();
        let r = pc_detect(&cloud, &rig, &params());
        assert_eq!(r, pc_brute_force(&cloud, &params()));
        assert_eq!(r.cluster_count(), 2);
        assert!(r.obstacle.iter().all(|&o| o));
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let rig = CameraRig::new(400.0, 400.0, 200.0, 150.0, 0.25, 400, 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let pts: Vec<_> = (0..600)
                .map(|_| {
                    Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..1.5), rng.random_range(0.3..12.0))
                })
                .collect();
            let cloud = cloud_from(&pts, &rig);
            assert_eq!(pc_detect(&cloud, &rig, &params()), pc_brute_force(&cloud, &params()));
        }
    }

    #[test]
    fn empty_and_single() {
        let rig = CameraRig::automotive();
        let r = pc_detect(&[], &rig, &params());
        assert!(r.obstacle.is_empty());
        let one = cloud_from(&[Vector3::new(0.0, 1.0, 10.0)], &rig);
        assert_eq!(pc_detect(&one, &rig, &params()).obstacle, vec![false]);
    }
}
