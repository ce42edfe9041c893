//! Plane hypothesis fits through the plane-induced homography.
//!
//! Parameters are `(pitch, yaw, rho)`: the normal is the reference normal
//! pitched within the Y-Z plane and then yawed toward `+X`, and `rho = 1 / D`.
//! The reference signal is the mean of the left patch and the warped right
//! patch, so each pixel contributes the two residuals `-e / 2` and `e / 2`
//! with `e = Ir(W(x)) - Il(x)`.

use nalgebra::{Matrix3, Vector3};

use super::lm::{self, NormalEquations, ProjectedProblem};
use super::{DetectorConfig, FitParams, HypothesisFit};
use crate::error::{Error, Result};
use crate::geometry::{homography_from_plane, CameraRig, PatchSpec, Plane3D};
use crate::imaging::IntensityImage;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e3;

/// Orientation frame around a reference normal.
#[derive(Clone, Copy, Debug)]
struct Frame {
    n0: Vector3<f64>,
    e1: Vector3<f64>,
    ex: Vector3<f64>,
}

impl Frame {
    fn new(reference: &Plane3D) -> Self {
        let n0 = reference.normal;
        Self { n0, e1: Vector3::new(0.0, -n0.z, n0.y), ex: Vector3::x() }
    }

    fn normal(&self, pitch: f64, yaw: f64) -> Vector3<f64> {
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        cy * (cp * self.n0 + sp * self.e1) + sy * self.ex
    }

    /// Partial derivatives of the normal with respect to pitch and yaw.
    fn normal_derivatives(&self, pitch: f64, yaw: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        let d_pitch = cy * (-sp * self.n0 + cp * self.e1);
        let d_yaw = -sy * (cp * self.n0 + sp * self.e1) + cy * self.ex;
        (d_pitch, d_yaw)
    }

    /// Parameters of `plane` in this frame, with the normal flipped if needed
    /// so that `D > 0`.
    fn params_of(&self, plane: &Plane3D) -> Vector3<f64> {
        let (n, d) =
            if plane.distance < 0.0 { (-plane.normal, -plane.distance) } else { (plane.normal, plane.distance) };
        let yaw = n.dot(&self.ex).clamp(-1.0, 1.0).asin();
        let pitch = n.dot(&self.e1).atan2(n.dot(&self.n0));
        Vector3::new(pitch, yaw, 1.0 / d)
    }
}

/// Plane described by `(pitch, yaw, rho)` relative to `reference`.
pub fn plane_from_params(reference: &Plane3D, params: &Vector3<f64>) -> Plane3D {
    let n = Frame::new(reference).normal(params[0], params[1]);
    Plane3D { normal: n / n.norm(), distance: 1.0 / params[2] }
}

/// `(pitch, yaw, rho)` of `plane` relative to `reference`.
pub fn params_from_plane(reference: &Plane3D, plane: &Plane3D) -> Vector3<f64> {
    Frame::new(reference).params_of(plane)
}

struct PhtProblem<'a> {
    left: &'a IntensityImage,
    right: &'a IntensityImage,
    rig: CameraRig,
    patch: PatchSpec,
    frame: Frame,
    bound: f64,
    mean_removal: bool,
}

/// Per-pixel warp data shared by the cost evaluation and the texture gate.
struct WarpSample {
    x: usize,
    y: usize,
    e: f64,
    gx: f64,
    de: Vector3<f64>,
}

impl PhtProblem<'_> {
    fn homography(&self, p: &Vector3<f64>) -> Matrix3<f64> {
        let n = self.frame.normal(p[0], p[1]);
        homography_from_plane(&Plane3D { normal: n, distance: 1.0 / p[2] }, &self.rig)
    }

    /// Visits in-bounds pixels; returns the excluded count.
    fn for_each_sample(&self, p: &Vector3<f64>, mut f: impl FnMut(WarpSample)) -> usize {
        let h = self.homography(p);
        let kt = self.rig.intrinsics() * self.rig.right_translation();
        let kinv = self.rig.intrinsics_inverse();
        let (dn_pitch, dn_yaw) = self.frame.normal_derivatives(p[0], p[1]);
        let n = self.frame.normal(p[0], p[1]);
        // d(rho n)/d theta
        let dm = [p[2] * dn_pitch, p[2] * dn_yaw, n];
        let mut excluded = 0;
        for y in self.patch.rows() {
            for x in self.patch.cols() {
                let px = Vector3::new(x as f64, y as f64, 1.0);
                let xh = h * px;
                let (xw, yw) = (xh.x / xh.z, xh.y / xh.z);
                let Some((v, gx, gy)) = self.right.sample_bicubic(xw, yw) else {
                    excluded += 1;
                    continue;
                };
                let q = kinv * px;
                let mut de = Vector3::zeros();
                for (k, dmk) in dm.iter().enumerate() {
                    // H = K (I - t m^T) K^-1, so d xh = -K t (dm . q)
                    let dxh = -kt * dmk.dot(&q);
                    let dxw = (dxh.x - xw * dxh.z) / xh.z;
                    let dyw = (dxh.y - yw * dxh.z) / xh.z;
                    de[k] = gx * dxw + gy * dyw;
                }
                f(WarpSample { x, y, e: v - self.left.get(x, y) as f64, gx, de });
            }
        }
        excluded
    }

    fn normal_equations(&self, p: &Vector3<f64>) -> Result<NormalEquations<3>> {
        let (mut n, mut se, mut see) = (0usize, 0.0, 0.0);
        let (mut sj, mut sjj, mut sje) = (Vector3::zeros(), Matrix3::zeros(), Vector3::zeros());
        let excluded = self.for_each_sample(p, |s| {
            n += 1;
            se += s.e;
            see += s.e * s.e;
            sj += s.de;
            sjj += s.de * s.de.transpose();
            sje += s.de * s.e;
        });
        let total = self.patch.pixel_count();
        if excluded * 5 > total {
            return Err(Error::InsufficientOverlap { excluded, total });
        }
        if self.mean_removal && n > 0 {
            let nf = n as f64;
            let (e_mean, j_mean) = (se / nf, sj / nf);
            see -= nf * e_mean * e_mean;
            sjj -= nf * j_mean * j_mean.transpose();
            sje -= nf * j_mean * e_mean;
        }
        // residual pair (-e/2, e/2) per pixel with Jacobian rows (-de/2, de/2)
        Ok(NormalEquations { cost: 0.5 * see.max(0.0), jtj: 0.5 * sjj, jtr: 0.5 * sje })
    }

    /// Smallest eigenvalue of the normal matrix in a local affine disparity
    /// parametrization `d = g + b * ybar + c * xbar`, at the same scale as the
    /// disparity-line fit so one texture threshold serves both methods.
    fn texture_eigenvalue(&self, p: &Vector3<f64>) -> f64 {
        let half_w = self.patch.w as f64 / 2.0;
        let (mut n, mut sj, mut sjj) = (0usize, Vector3::zeros(), Matrix3::zeros());
        self.for_each_sample(p, |s| {
            let xbar = (s.x as f64 - self.patch.xc as f64) / half_w;
            let j = -s.gx * Vector3::new(1.0, self.patch.ybar(s.y as f64), xbar);
            n += 1;
            sj += j;
            sjj += j * j.transpose();
        });
        if self.mean_removal && n > 0 {
            let j_mean = sj / n as f64;
            sjj -= n as f64 * j_mean * j_mean.transpose();
        }
        lm::min_eigenvalue(&sjj)
    }

    fn center_disparity(&self, p: &Vector3<f64>) -> f64 {
        let (xc, yc) = (self.patch.xc as f64, self.patch.yc as f64);
        let xh = self.homography(p) * Vector3::new(xc, yc, 1.0);
        xc - xh.x / xh.z
    }
}

impl ProjectedProblem<3> for PhtProblem<'_> {
    fn project(&self, p: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            p[0].clamp(-self.bound, self.bound),
            p[1].clamp(-self.bound, self.bound),
            p[2].clamp(RHO_MIN, RHO_MAX),
        )
    }

    fn evaluate(&self, p: &Vector3<f64>) -> Option<NormalEquations<3>> {
        self.normal_equations(p).ok()
    }

    /// Largest warp displacement change over the patch corners.
    fn step_size(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> f64 {
        let (h0, h1) = (self.homography(from), self.homography(to));
        let (rows, cols) = (self.patch.rows(), self.patch.cols());
        let mut worst: f64 = 0.0;
        for y in [*rows.start(), *rows.end()] {
            for x in [*cols.start(), *cols.end()] {
                let px = Vector3::new(x as f64, y as f64, 1.0);
                let (a, b) = (h0 * px, h1 * px);
                let d = (a.x / a.z - b.x / b.z).abs() + (a.y / a.z - b.y / b.z).abs();
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// Projected Levenberg-Marquardt plane fit with pitch and yaw bounded by
/// `bound` radians around `reference`.
#[allow(clippy::too_many_arguments)]
pub fn pht_fit(
    left: &IntensityImage,
    right: &IntensityImage,
    rig: &CameraRig,
    patch: &PatchSpec,
    init: &Plane3D,
    reference: &Plane3D,
    bound: f64,
    cfg: &DetectorConfig,
) -> HypothesisFit {
    let frame = Frame::new(reference);
    let problem = PhtProblem { left, right, rig: *rig, patch: *patch, frame, bound, mean_removal: cfg.mean_removal };
    let usable = left.same_size(right) && patch.fits_in(left.width, left.height);
    let out = if usable {
        lm::minimize(&problem, frame.params_of(init), &cfg.lm)
    } else {
        lm::LmOutcome {
            params: problem.project(frame.params_of(init)),
            normal: None,
            iterations: 0,
            converged: false,
            accepted_costs: vec![],
        }
    };
    let plane = plane_from_params(reference, &out.params);
    let (residual_sum, min_eigenvalue) = match &out.normal {
        Some(n) => (n.cost, problem.texture_eigenvalue(&out.params)),
        None => (f64::INFINITY, 0.0),
    };
    HypothesisFit {
        params: FitParams::Plane(plane),
        center_disparity: problem.center_disparity(&out.params),
        residual_sum,
        iterations: out.iterations,
        min_eigenvalue,
        converged: out.converged,
        accepted_costs: out.accepted_costs,
    }
}
