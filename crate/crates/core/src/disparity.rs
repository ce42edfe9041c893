//! Dense block-matching disparity and point-cloud extraction.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{triangulate, CameraRig};
use crate::imaging::{DisparityMap, IntensityImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMatchConfig {
    /// Odd SAD window side length in pixels.
    pub window: usize,
    /// Largest disparity searched, inclusive.
    pub d_max: usize,
    /// Allowed left-right disagreement in pixels.
    pub lr_tol: f64,
    /// Relative margin by which the best cost must beat every non-adjacent
    /// disparity.
    #[serde(default)]
    pub uniqueness: f64,
}

impl Default for BlockMatchConfig {
    fn default() -> Self {
        Self { window: 9, d_max: 128, lr_tol: 1.0, uniqueness: 0.1 }
    }
}

/// Rows per independently initialized work unit. Fixed so that results do not
/// depend on how rayon schedules the chunks.
const ROW_CHUNK: usize = 16;

/// Winner-take-all SAD matching with parabolic refinement and a left-right check.
pub fn block_match(left: &IntensityImage, right: &IntensityImage, cfg: &BlockMatchConfig) -> Result<DisparityMap> {
    if !left.same_size(right) {
        return Err(Error::DimensionMismatch(format!(
            "left {}x{} vs right {}x{}",
            left.width, left.height, right.width, right.height
        )));
    }
    if cfg.window == 0 || cfg.window.is_multiple_of(2) {
        return Err(Error::InvalidConfig("SAD window must be odd".into()));
    }
    let (w, h) = (left.width, left.height);
    let mut out = DisparityMap::invalid(w, h);
    let r = cfg.window / 2;
    if h < cfg.window || w < cfg.window {
        return Ok(out);
    }
    out.data.par_chunks_mut(ROW_CHUNK * w).enumerate().for_each(|(chunk, rows)| {
        let y_start = chunk * ROW_CHUNK;
        let y_end = (y_start + ROW_CHUNK).min(h);
        match_rows(left, right, cfg, y_start, y_end, r, rows);
    });
    Ok(out)
}

fn match_rows(
    left: &IntensityImage,
    right: &IntensityImage,
    cfg: &BlockMatchConfig,
    y_start: usize,
    y_end: usize,
    r: usize,
    out: &mut [f32],
) {
    let w = left.width;
    let h = left.height;
    let nd = cfg.d_max.min(w.saturating_sub(1)) + 1;
    // column sums of |Il(x) - Ir(x - d)| over the vertical window, per disparity
    let mut colsum = vec![0f64; nd * w];
    let mut cost = vec![f64::INFINITY; nd * w];
    let mut scratch = vec![f64::INFINITY; nd];
    let mut best_right: Vec<Option<usize>> = vec![None; w];
    let add_row = |colsum: &mut [f64], y: usize, sign: f64| {
        let (lr, rr) = (left.row(y), right.row(y));
        for d in 0..nd {
            let cs = &mut colsum[d * w..(d + 1) * w];
            for x in d..w {
                cs[x] += sign * (lr[x] as f64 - rr[x - d] as f64).abs();
            }
        }
    };
    let first = y_start.max(r);
    let mut initialized = false;
    for y in first..y_end {
        if y + r >= h {
            break;
        }
        if !initialized {
            for yy in y - r..=y + r {
                add_row(&mut colsum, yy, 1.0);
            }
            initialized = true;
        } else {
            add_row(&mut colsum, y + r, 1.0);
            add_row(&mut colsum, y - r - 1, -1.0);
        }
        // horizontal window sums; valid where the whole window sees both images
        for d in 0..nd {
            let cs = &colsum[d * w..(d + 1) * w];
            let c = &mut cost[d * w..(d + 1) * w];
            c.iter_mut().for_each(|v| *v = f64::INFINITY);
            if d + 2 * r >= w {
                continue;
            }
            let mut s: f64 = cs[d..=d + 2 * r].iter().sum();
            c[d + r] = s;
            for x in d + r + 1..w - r {
                s += cs[x + r] - cs[x - r - 1];
                c[x] = s;
            }
        }
        let row_out = &mut out[(y - y_start) * w..(y - y_start + 1) * w];
        for (xr, slot) in best_right.iter_mut().enumerate() {
            for (d, s) in scratch.iter_mut().enumerate() {
                *s = if xr + d < w { cost[d * w + xr + d] } else { f64::INFINITY };
            }
            *slot = wta(&scratch, 0.0);
        }
        for x in r..w - r {
            let costs = |d: usize| cost[d * w + x];
            for (d, s) in scratch.iter_mut().enumerate() {
                *s = costs(d);
            }
            let Some(best) = wta(&scratch, cfg.uniqueness) else { continue };
            // a minimum on the edge of the searchable range may be truncated
            if best == 0 || best + 1 >= nd || !costs(best + 1).is_finite() {
                continue;
            }
            match best_right[x - best] {
                Some(dr) if (dr as f64 - best as f64).abs() <= cfg.lr_tol => {}
                _ => continue,
            }
            let mut d = best as f64;
            let (cm, c0, cp) = (costs(best - 1), costs(best), costs(best + 1));
            let denom = cm - 2.0 * c0 + cp;
            if denom > 0.0 {
                d += (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5);
            }
            if d > 0.0 {
                row_out[x] = d as f32;
            }
        }
    }
}

/// Index of the unique minimum; `None` when no finite cost exists or when a
/// non-adjacent disparity comes within `margin` (relative) of the minimum.
fn wta(costs: &[f64], margin: f64) -> Option<usize> {
    let (best, &min) = costs.iter().enumerate().filter(|(_, c)| c.is_finite()).min_by(|a, b| a.1.total_cmp(b.1))?;
    let ambiguous = costs.iter().enumerate().any(|(d, &c)| d.abs_diff(best) > 1 && c <= min * (1.0 + margin));
    (!ambiguous).then_some(best)
}

/// A triangulated disparity sample with its pixel of origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub x: usize,
    pub y: usize,
    pub disparity: f64,
    pub point: Vector3<f64>,
}

/// One point per valid disparity on the `stride` lattice.
pub fn disparity_to_cloud(dmap: &DisparityMap, rig: &CameraRig, stride: usize) -> Vec<CloudPoint> {
    let stride = stride.max(1);
    let mut cloud = Vec::new();
    for y in (0..dmap.height).step_by(stride) {
        for x in (0..dmap.width).step_by(stride) {
            if let Some(d) = dmap.get(x, y) {
                if let Ok(point) = triangulate(x as f64, y as f64, d, rig) {
                    cloud.push(CloudPoint { x, y, disparity: d, point });
                }
            }
        }
    }
    cloud
}
