//! Disparity-line hypothesis fits with the left image as reference.

use nalgebra::{Matrix2, Vector2};

use super::lm::{self, NormalEquations, ProjectedProblem};
use super::{DetectorConfig, FitParams, HypothesisFit};
use crate::error::{Error, Result};
use crate::geometry::{project_onto_wedge, DisparityLine, FeasibleWedge, PatchSpec};
use crate::imaging::{CubicRow, IntensityImage};

/// Maps a left-image pixel to its right-image position under `line`.
#[inline]
pub fn fpht_warp(x: f64, y: f64, line: &DisparityLine, patch: &PatchSpec) -> (f64, f64) {
    (x - line.disparity(patch.ybar(y)), y)
}

/// Residuals of the pixels that stay inside the right image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchResiduals {
    pub values: Vec<f64>,
    /// Sum of squared residuals.
    pub sum: f64,
    /// Patch pixels whose warped position left the image.
    pub excluded: usize,
}

struct Sample {
    r: f64,
    /// `[dr/da, dr/db]`
    j: [f64; 2],
}

fn check_inputs(left: &IntensityImage, right: &IntensityImage, patch: &PatchSpec) -> Result<()> {
    if !left.same_size(right) {
        return Err(Error::DimensionMismatch("left and right images differ in size".into()));
    }
    if !patch.fits_in(left.width, left.height) {
        return Err(Error::InvalidConfig(format!("patch at ({}, {}) exceeds the image", patch.xc, patch.yc)));
    }
    Ok(())
}

fn overlap_ok(excluded: usize, total: usize) -> Result<()> {
    if excluded * 5 > total {
        Err(Error::InsufficientOverlap { excluded, total })
    } else {
        Ok(())
    }
}

/// Visits every in-bounds pixel; returns the excluded count.
#[inline]
fn for_each_sample(
    left: &IntensityImage,
    right: &IntensityImage,
    patch: &PatchSpec,
    line: &DisparityLine,
    mut f: impl FnMut(Sample),
) -> usize {
    let mut excluded = 0;
    for y in patch.rows() {
        let ybar = patch.ybar(y as f64);
        let shift = line.disparity(ybar);
        let row_r = CubicRow::new(right, y);
        let row_l = left.row(y);
        for x in patch.cols() {
            match row_r.sample(x as f64 - shift) {
                Some((v, dx)) => f(Sample { r: v - row_l[x] as f64, j: [-ybar * dx, -dx] }),
                None => excluded += 1,
            }
        }
    }
    excluded
}

fn collect(
    left: &IntensityImage,
    right: &IntensityImage,
    patch: &PatchSpec,
    line: &DisparityLine,
    mean_removal: bool,
) -> Result<Vec<Sample>> {
    check_inputs(left, right, patch)?;
    let mut samples = Vec::with_capacity(patch.pixel_count());
    let excluded = for_each_sample(left, right, patch, line, |s| samples.push(s));
    overlap_ok(excluded, patch.pixel_count())?;
    if mean_removal && !samples.is_empty() {
        let n = samples.len() as f64;
        let r_mean = samples.iter().map(|s| s.r).sum::<f64>() / n;
        let ja_mean = samples.iter().map(|s| s.j[0]).sum::<f64>() / n;
        let jb_mean = samples.iter().map(|s| s.j[1]).sum::<f64>() / n;
        for s in &mut samples {
            s.r -= r_mean;
            s.j[0] -= ja_mean;
            s.j[1] -= jb_mean;
        }
    }
    Ok(samples)
}

/// Residuals `Ir(W(x)) - Il(x)` over the patch.
///
/// With `mean_removal` both patches are shifted to zero mean over the
/// in-bounds pixels first, which subtracts the residual mean.
pub fn fpht_residuals(
    left: &IntensityImage,
    right: &IntensityImage,
    patch: &PatchSpec,
    line: &DisparityLine,
    mean_removal: bool,
) -> Result<PatchResiduals> {
    let samples = collect(left, right, patch, line, mean_removal)?;
    let values: Vec<f64> = samples.iter().map(|s| s.r).collect();
    let sum = values.iter().map(|r| r * r).sum();
    Ok(PatchResiduals { values, sum, excluded: patch.pixel_count() - samples.len() })
}

/// Rows `[dr/da, dr/db]` matching [`fpht_residuals`].
pub fn fpht_jacobian(
    left: &IntensityImage,
    right: &IntensityImage,
    patch: &PatchSpec,
    line: &DisparityLine,
    mean_removal: bool,
) -> Result<Vec<[f64; 2]>> {
    Ok(collect(left, right, patch, line, mean_removal)?.iter().map(|s| s.j).collect())
}

/// Normal equations via running sums, without materializing residuals.
pub(crate) fn normal_equations(
    left: &IntensityImage,
    right: &IntensityImage,
    patch: &PatchSpec,
    line: &DisparityLine,
    mean_removal: bool,
) -> Result<NormalEquations<2>> {
    check_inputs(left, right, patch)?;
    let (mut n, mut sr, mut srr) = (0usize, 0.0, 0.0);
    let (mut sj, mut sjj, mut sjr) = (Vector2::zeros(), Matrix2::zeros(), Vector2::zeros());
    let excluded = for_each_sample(left, right, patch, line, |s| {
        let j = Vector2::new(s.j[0], s.j[1]);
        n += 1;
        sr += s.r;
        srr += s.r * s.r;
        sj += j;
        sjj += j * j.transpose();
        sjr += j * s.r;
    });
    overlap_ok(excluded, patch.pixel_count())?;
    if mean_removal && n > 0 {
        let nf = n as f64;
        let (r_mean, j_mean) = (sr / nf, sj / nf);
        srr -= nf * r_mean * r_mean;
        sjj -= nf * j_mean * j_mean.transpose();
        sjr -= nf * j_mean * r_mean;
    }
    Ok(NormalEquations { cost: srr.max(0.0), jtj: sjj, jtr: sjr })
}

struct FphtProblem<'a> {
    left: &'a IntensityImage,
    right: &'a IntensityImage,
    patch: PatchSpec,
    wedge: FeasibleWedge,
    mean_removal: bool,
}

impl ProjectedProblem<2> for FphtProblem<'_> {
    fn project(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (a, b) = project_onto_wedge(p[0], p[1], &self.wedge);
        Vector2::new(a, b)
    }

    fn evaluate(&self, p: &Vector2<f64>) -> Option<NormalEquations<2>> {
        let line = DisparityLine::new(p[0], p[1]);
        normal_equations(self.left, self.right, &self.patch, &line, self.mean_removal).ok()
    }

    /// Largest disparity change over the patch, reached at `ybar = +-1`.
    fn step_size(&self, from: &Vector2<f64>, to: &Vector2<f64>) -> f64 {
        (to[0] - from[0]).abs() + (to[1] - from[1]).abs()
    }
}

/// Projected Levenberg-Marquardt fit of a disparity line inside `wedge`.
pub fn fpht_fit(
    left: &IntensityImage,
    right: &IntensityImage,
    patch: &PatchSpec,
    init: &DisparityLine,
    wedge: &FeasibleWedge,
    cfg: &DetectorConfig,
) -> HypothesisFit {
    let problem = FphtProblem { left, right, patch: *patch, wedge: *wedge, mean_removal: cfg.mean_removal };
    let out = lm::minimize(&problem, Vector2::new(init.a, init.b), &cfg.lm);
    let line = DisparityLine::new(out.params[0], out.params[1]);
    let (residual_sum, min_eigenvalue) = match &out.normal {
        Some(n) => (n.cost, lm::min_eigenvalue(&n.jtj)),
        None => (f64::INFINITY, 0.0),
    };
    HypothesisFit {
        params: FitParams::Line(line),
        center_disparity: line.b,
        residual_sum,
        iterations: out.iterations,
        min_eigenvalue,
        converged: out.converged,
        accepted_costs: out.accepted_costs,
    }
}
