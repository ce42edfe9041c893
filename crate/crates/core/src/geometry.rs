//! Rectified stereo geometry.
//!
//! Conventions: camera frame X right, Y down, Z forward; image rows grow
//! downward. The left camera sits at the origin, the right camera at
//! `(B, 0, 0)`, so a point at depth `Z` has disparity `fx * B / Z`.
//!
//! Planes are stored as a unit normal `n` and offset `D` with `n . P + D = 0`.
//! With the normal oriented toward the camera, `D > 0` is the distance of the
//! plane from the optical center: the road below a camera mounted at height
//! `H` is `n = (0, -1, 0), D = H` and a wall at depth `Z` is
//! `n = (0, 0, -1), D = Z`.
//!
//! A plane with `nX = 0` maps to a straight line in disparity space over a
//! patch column: `d(ybar) = a * ybar + b`, where `ybar = (yc - y) / (h / 2)`
//! is the row coordinate normalized to `[-1, 1]` over the patch.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intrinsics and baseline of a rectified stereo pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub fx: f64,
    pub fy: f64,
    pub x0: f64,
    pub y0: f64,
    #[serde(rename = "baseline_m")]
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraRig {
    pub fn new(fx: f64, fy: f64, x0: f64, y0: f64, baseline: f64, width: usize, height: usize) -> Result<Self> {
        let rig = Self { fx, fy, x0, y0, baseline, width, height };
        rig.validate()?;
        Ok(rig)
    }

    /// The 2048x1024 rig with 21 cm baseline and 2300 px focal length.
    pub fn automotive() -> Self {
        Self { fx: 2300.0, fy: 2300.0, x0: 1023.5, y0: 511.5, baseline: 0.21, width: 2048, height: 1024 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.x0, self.y0, self.baseline].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidRig("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 || self.baseline <= 0.0 {
            return Err(Error::InvalidRig("focal lengths and baseline must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidRig("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let rig: Self = serde_json::from_str(s)?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// `fx * B`, the disparity-depth product.
    #[inline]
    pub fn focal_baseline(&self) -> f64 {
        self.fx * self.baseline
    }

    #[inline]
    pub fn disparity_at_depth(&self, z: f64) -> f64 {
        self.focal_baseline() / z
    }

    /// Left-image pixel and disparity of a 3D point.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (self.x0 + self.fx * p.x / p.z, self.y0 + self.fy * p.y / p.z, self.disparity_at_depth(p.z))
    }

    /// Rig describing the 2x2 box-downsampled images.
    ///
    /// Low-resolution pixel `i` covers high-resolution pixels `2i` and
    /// `2i + 1`, so its center sits at `2i + 0.5`.
    pub fn downsampled2(&self) -> Self {
        Self {
            fx: self.fx / 2.0,
            fy: self.fy / 2.0,
            x0: (self.x0 - 0.5) / 2.0,
            y0: (self.y0 - 0.5) / 2.0,
            baseline: self.baseline,
            width: self.width / 2,
            height: self.height / 2,
        }
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.x0, 0.0, self.fy, self.y0, 0.0, 0.0, 1.0)
    }

    pub fn intrinsics_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(1.0 / self.fx, 0.0, -self.x0 / self.fx, 0.0, 1.0 / self.fy, -self.y0 / self.fy, 0.0, 0.0, 1.0)
    }

    /// Translation taking left-camera coordinates to right-camera coordinates.
    pub fn right_translation(&self) -> Vector3<f64> {
        Vector3::new(-self.baseline, 0.0, 0.0)
    }
}

/// A 3D plane `n . P + D = 0` with unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane3D {
    pub normal: Vector3<f64>,
    pub distance: f64,
}

impl Plane3D {
    /// Builds a plane, normalizing `normal`.
    pub fn new(normal: Vector3<f64>, distance: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm.is_finite() && norm > 0.0) || !distance.is_finite() {
            return Err(Error::InvalidConfig("plane normal must be finite and non-zero".into()));
        }
        if distance == 0.0 {
            return Err(Error::InvalidConfig("plane passes through the optical center".into()));
        }
        Ok(Self { normal: normal / norm, distance })
    }

    /// Road surface below a camera mounted at `height` meters.
    pub fn ground(height: f64) -> Self {
        Self { normal: Vector3::new(0.0, -1.0, 0.0), distance: height }
    }

    /// Plane facing the camera at depth `z`.
    pub fn fronto_parallel(z: f64) -> Self {
        Self { normal: Vector3::new(0.0, 0.0, -1.0), distance: z }
    }

    /// Rotates the normal by `angle` radians within the Y-Z plane.
    ///
    /// Positive angles tilt a ground normal toward `-Z` (uphill) and a
    /// fronto-parallel normal toward `+Y` (leaning back).
    pub fn pitched(&self, angle: f64) -> Self {
        Self { normal: rotate_in_yz(&self.normal, angle), distance: self.distance }
    }

    pub fn is_lateral_free(&self) -> bool {
        self.normal.x.abs() <= LATERAL_TOL
    }

    /// Depth at which the viewing ray through normalized coordinates `q`
    /// meets the plane, if it does in front of the camera.
    pub fn depth_along(&self, q: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(q);
        if denom == 0.0 {
            return None;
        }
        let t = -self.distance / denom;
        (t > 0.0).then_some(t * q.z)
    }
}

const LATERAL_TOL: f64 = 1e-12;

pub(crate) fn rotate_in_yz(n: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    Vector3::new(n.x, c * n.y - s * n.z, s * n.y + c * n.z)
}

/// Disparity slope `a` (px per unit `ybar`) and offset `b` (px at the patch center).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisparityLine {
    pub a: f64,
    pub b: f64,
}

impl DisparityLine {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    #[inline]
    pub fn disparity(&self, ybar: f64) -> f64 {
        self.a * ybar + self.b
    }
}

/// Patch geometry: integer center and odd width/height.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub xc: usize,
    pub yc: usize,
    pub w: usize,
    pub h: usize,
}

impl PatchSpec {
    pub fn new(xc: usize, yc: usize, w: usize, h: usize) -> Result<Self> {
        if w < 3 || h < 3 || w.is_multiple_of(2) || h.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("patch size {w}x{h} must be odd and at least 3")));
        }
        Ok(Self { xc, yc, w, h })
    }

    #[inline]
    pub fn half_w(&self) -> usize {
        self.w / 2
    }

    #[inline]
    pub fn half_h(&self) -> usize {
        self.h / 2
    }

    /// Normalizer of the row coordinate, `h / 2` as a real number.
    #[inline]
    pub fn ybar_scale(&self) -> f64 {
        self.h as f64 / 2.0
    }

    #[inline]
    pub fn ybar(&self, y: f64) -> f64 {
        (self.yc as f64 - y) / self.ybar_scale()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.xc >= self.half_w()
            && self.yc >= self.half_h()
            && self.xc + self.half_w() < width
            && self.yc + self.half_h() < height
    }

    pub fn rows(&self) -> std::ops::RangeInclusive<usize> {
        self.yc - self.half_h()..=self.yc + self.half_h()
    }

    pub fn cols(&self) -> std::ops::RangeInclusive<usize> {
        self.xc - self.half_w()..=self.xc + self.half_w()
    }

    pub fn pixel_count(&self) -> usize {
        self.w * self.h
    }
}

/// Feasible region of disparity lines for one hypothesis.
///
/// The region is `{(a, b) : b >= b_min, c_lo * b <= a <= c_hi * b}`. Either
/// constant may be infinite when the bound reaches planes seen edge-on at
/// the patch center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibleWedge {
    pub c_lo: f64,
    pub c_hi: f64,
    pub b_min: f64,
}

/// Smallest admissible disparity offset of a hypothesis fit.
pub const DEFAULT_MIN_OFFSET: f64 = 1e-3;

impl FeasibleWedge {
    pub fn new(c_lo: f64, c_hi: f64) -> Self {
        Self { c_lo, c_hi, b_min: DEFAULT_MIN_OFFSET }
    }

    pub fn contains(&self, a: f64, b: f64) -> bool {
        b >= self.b_min && a >= self.c_lo * b && a <= self.c_hi * b
    }
}

fn check_lateral(plane: &Plane3D) -> Result<()> {
    if plane.is_lateral_free() {
        Ok(())
    } else {
        Err(Error::NonFphtPlane(plane.normal.x))
    }
}

/// Disparity line of a plane over a patch column.
pub fn plane_to_disparity_line(plane: &Plane3D, rig: &CameraRig, patch: &PatchSpec) -> Result<DisparityLine> {
    check_lateral(plane)?;
    let n = &plane.normal;
    let ratio = rig.baseline / plane.distance;
    // per-row slope dd/dy and the offset at the patch center row
    let slope_per_row = -n.y * (rig.fx / rig.fy) * ratio;
    let b = -ratio * (n.y * (patch.yc as f64 - rig.y0) * rig.fx / rig.fy + n.z * rig.fx);
    if !(b > 0.0) {
        return Err(Error::BehindCamera(b));
    }
    // y = yc - ybar * h/2, so d = b - slope_per_row * (h/2) * ybar
    Ok(DisparityLine { a: -patch.ybar_scale() * slope_per_row, b })
}

/// Plane whose disparity line over `patch` is `line`.
pub fn disparity_line_to_plane(line: &DisparityLine, rig: &CameraRig, patch: &PatchSpec) -> Result<Plane3D> {
    let degenerate = || Error::DegenerateLine { a: line.a, b: line.b };
    if !(line.b > 0.0) || !line.a.is_finite() || !line.b.is_finite() {
        return Err(degenerate());
    }
    let slope_per_row = -line.a / patch.ybar_scale();
    // u = nY * B / D, v = nZ * B / D
    let u = -slope_per_row * rig.fy / rig.fx;
    let v = -(line.b + u * (patch.yc as f64 - rig.y0) * rig.fx / rig.fy) / rig.fx;
    let scale = u.hypot(v);
    if !(scale.is_finite() && scale > 1e-300) {
        return Err(degenerate());
    }
    let distance = rig.baseline / scale;
    if !distance.is_finite() {
        return Err(degenerate());
    }
    Ok(Plane3D { normal: Vector3::new(0.0, u / scale, v / scale), distance })
}

/// Feasible wedge for normals within `phi_max` radians of `reference`.
///
/// Only orientations that are visible at the patch center (positive
/// disparity offset) contribute; when the bound sweeps past an orientation
/// seen edge-on, the wedge opens to an infinite constant on that side.
pub fn wedge_for_hypothesis(
    reference: &Plane3D,
    phi_max: f64,
    rig: &CameraRig,
    patch: &PatchSpec,
) -> Result<FeasibleWedge> {
    check_lateral(reference)?;
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&phi_max) {
        return Err(Error::InvalidConfig(format!("bound angle {phi_max} rad outside [0, pi/2)")));
    }
    let n0 = reference.normal;
    let e1 = Vector3::new(0.0, -n0.z, n0.y);
    // b is proportional to -(n . k): visible orientations have n . k < 0
    let k = Vector3::new(0.0, patch.yc as f64 - rig.y0, rig.fy);
    let half_h = patch.ybar_scale();
    let g = |n: &Vector3<f64>| n.dot(&k);
    let c = |n: &Vector3<f64>| -half_h * n.y / g(n);

    let n_lo = rotate_in_yz(&n0, -phi_max);
    let n_hi = rotate_in_yz(&n0, phi_max);
    let (g_lo, g_hi) = (g(&n_lo), g(&n_hi));
    let tol = 1e-12 * k.norm();
    if g_lo.abs() < tol || g_hi.abs() < tol {
        return Err(Error::SingularReference);
    }
    match (g_lo < 0.0, g_hi < 0.0) {
        (true, true) => {
            let (c1, c2) = (c(&n_lo), c(&n_hi));
            Ok(FeasibleWedge::new(c1.min(c2), c1.max(c2)))
        }
        (false, false) => Err(Error::EmptyWedge),
        (lo_visible, _) => {
            // g(phi) = A cos(phi) + B sin(phi) vanishes once inside the bound
            let edge = (-n0.dot(&k)).atan2(e1.dot(&k));
            let edge = if edge > std::f64::consts::FRAC_PI_2 {
                edge - std::f64::consts::PI
            } else if edge <= -std::f64::consts::FRAC_PI_2 {
                edge + std::f64::consts::PI
            } else {
                edge
            };
            let n_edge = rotate_in_yz(&n0, edge);
            let c_end = if lo_visible { c(&n_lo) } else { c(&n_hi) };
            if n_edge.y > 0.0 {
                Ok(FeasibleWedge::new(c_end, f64::INFINITY))
            } else {
                Ok(FeasibleWedge::new(f64::NEG_INFINITY, c_end))
            }
        }
    }
}

/// Euclidean projection of `(a, b)` onto the wedge.
pub fn project_onto_wedge(a: f64, b: f64, wedge: &FeasibleWedge) -> (f64, f64) {
    if wedge.contains(a, b) {
        return (a, b);
    }
    let b_min = wedge.b_min;
    let mut best = (a.clamp(wedge.c_lo * b_min, wedge.c_hi * b_min), b_min);
    let mut best_d2 = (best.0 - a).powi(2) + (best.1 - b).powi(2);
    for c in [wedge.c_lo, wedge.c_hi] {
        if !c.is_finite() {
            continue;
        }
        let s = ((a * c + b) / (c * c + 1.0)).max(b_min);
        let cand = (c * s, s);
        let d2 = (cand.0 - a).powi(2) + (cand.1 - b).powi(2);
        if d2 < best_d2 {
            best = cand;
            best_d2 = d2;
        }
    }
    best
}

/// Plane-induced homography from left to right image pixels.
pub fn homography_from_plane(plane: &Plane3D, rig: &CameraRig) -> Matrix3<f64> {
    let t = rig.right_translation();
    let m = Matrix3::identity() - t * plane.normal.transpose() / plane.distance;
    rig.intrinsics() * m * rig.intrinsics_inverse()
}

/// Applies a homography to pixel `(x, y)`.
#[inline]
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

/// Back-projects a left-image pixel with disparity `d` to camera coordinates.
pub fn triangulate(x: f64, y: f64, d: f64, rig: &CameraRig) -> Result<Vector3<f64>> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDisparity(d));
    }
    let z = rig.focal_baseline() / d;
    Ok(Vector3::new((x - rig.x0) * z / rig.fx, (y - rig.y0) * z / rig.fy, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> CameraRig {
        CameraRig::automotive()
    }

    /// Fits `d = a * ybar + b` to disparities of plane points projected
    /// through both cameras independently of the closed form.
    fn projected_line_fit(plane: &Plane3D, rig: &CameraRig, patch: &PatchSpec) -> (f64, f64) {
        let (mut sy, mut sd, mut syy, mut syd, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in patch.rows() {
            let q = Vector3::new((patch.xc as f64 - rig.x0) / rig.fx, (y as f64 - rig.y0) / rig.fy, 1.0);
            let t = -plane.distance / plane.normal.dot(&q);
            let p = q * t;
            let xl = rig.x0 + rig.fx * p.x / p.z;
            let xr = rig.x0 + rig.fx * (p.x - rig.baseline) / p.z;
            let d = xl - xr;
            let yb = patch.ybar(y as f64);
            sy += yb;
            sd += d;
            syy += yb * yb;
            syd += yb * d;
            n += 1.0;
        }
        let a = (n * syd - sy * sd) / (n * syy - sy * sy);
        let b = (sd - a * sy) / n;
        (a, b)
    }

    #[test]
    fn fronto_parallel_offset_matches_triangulation() {
        let r = rig();
        let patch = PatchSpec::new(1000, 600, 15, 15).unwrap();
        let plane = Plane3D::new(Vector3::new(0.0, 0.0, -1.0), 10.0).unwrap();
        let line = plane_to_disparity_line(&plane, &r, &patch).unwrap();
        let (a, b) = projected_line_fit(&plane, &r, &patch);
        assert_eq!(line.a, 0.0);
        assert!((line.b - 48.3).abs() < 1e-9);
        assert!((b - line.b).abs() < 1e-9 && a.abs() < 1e-9);
    }

    #[test]
    fn ground_slope_rescaled_by_half_height() {
        let r = rig();
        for h in [5usize, 11, 15] {
            let patch = PatchSpec::new(1000, 700, 15, h).unwrap();
            let line = plane_to_disparity_line(&Plane3D::ground(1.2), &r, &patch).unwrap();
            let per_row = r.fx * r.baseline / (r.fy * 1.2);
            assert!((per_row - 0.175).abs() < 1e-12);
            assert!((line.a + h as f64 / 2.0 * per_row).abs() < 1e-12);
            let (a, b) = projected_line_fit(&Plane3D::ground(1.2), &r, &patch);
            assert!((a - line.a).abs() < 1e-9 && (b - line.b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_vertical_normal_gives_zero_slope() {
        let r = rig();
        let patch = PatchSpec::new(900, 300, 9, 9).unwrap();
        let plane = Plane3D::new(Vector3::new(0.0, 0.0, -1.0), 37.0).unwrap();
        assert_eq!(plane_to_disparity_line(&plane, &r, &patch).unwrap().a, 0.0);
    }

    #[test]
    fn lateral_normal_rejected() {
        let plane = Plane3D::new(Vector3::new(0.1, 0.0, -1.0), 10.0).unwrap();
        let patch = PatchSpec::new(900, 300, 9, 9).unwrap();
        assert!(matches!(plane_to_disparity_line(&plane, &rig(), &patch), Err(Error::NonFphtPlane(_))));
    }

    #[test]
    fn ground_above_horizon_is_behind_camera() {
        let patch = PatchSpec::new(900, 300, 9, 9).unwrap();
        assert!(matches!(plane_to_disparity_line(&Plane3D::ground(1.2), &rig(), &patch), Err(Error::BehindCamera(_))));
    }

    #[test]
    fn inverse_of_fronto_parallel_example() {
        let patch = PatchSpec::new(1000, 600, 15, 15).unwrap();
        let plane = disparity_line_to_plane(&DisparityLine::new(0.0, 48.3), &rig(), &patch).unwrap();
        assert!((plane.normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((plane.distance - 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_or_negative_offset_is_degenerate() {
        let patch = PatchSpec::new(1000, 600, 15, 15).unwrap();
        for b in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                disparity_line_to_plane(&DisparityLine::new(0.5, b), &rig(), &patch),
                Err(Error::DegenerateLine { .. })
            ));
        }
    }

    #[test]
    fn free_space_wedge_contains_pitched_grounds() {
        let r = rig();
        let phi = 25f64.to_radians();
        for yc in [560usize, 700, 900] {
            let patch = PatchSpec::new(1000, yc, 15, 15).unwrap();
            let wedge = wedge_for_hypothesis(&Plane3D::ground(1.2), phi, &r, &patch).unwrap();
            assert!(wedge.c_lo < wedge.c_hi);
            for k in -25..=25 {
                let plane = Plane3D::ground(1.2).pitched((k as f64).to_radians());
                if let Ok(line) = plane_to_disparity_line(&plane, &r, &patch) {
                    let (a, b) = (line.a, line.b);
                    let slack = 1e-9 * b;
                    assert!(b >= wedge.b_min);
                    assert!(
                        a >= wedge.c_lo * b - slack && a <= wedge.c_hi * b + slack,
                        "pitch {k} at yc {yc}: ({a}, {b}) outside {wedge:?}"
                    );
                }
            }
            // a wall is not free space
            let wall = plane_to_disparity_line(&Plane3D::fronto_parallel(10.0), &r, &patch).unwrap();
            assert!(!wedge.contains(wall.a, wall.b));
        }
    }

    #[test]
    fn obstacle_wedge_symmetric_at_principal_row() {
        let r = CameraRig { y0: 600.0, ..rig() };
        let patch = PatchSpec::new(1000, 600, 15, 15).unwrap();
        let wedge = wedge_for_hypothesis(&Plane3D::fronto_parallel(10.0), 45f64.to_radians(), &r, &patch).unwrap();
        let expected = patch.ybar_scale() / r.fy;
        assert!((wedge.c_hi - expected).abs() < 1e-12);
        assert!((wedge.c_lo + expected).abs() < 1e-12);
    }

    #[test]
    fn zero_bound_collapses_wedge() {
        let patch = PatchSpec::new(1000, 700, 15, 15).unwrap();
        let wedge = wedge_for_hypothesis(&Plane3D::ground(1.2), 0.0, &rig(), &patch).unwrap();
        assert!((wedge.c_hi - wedge.c_lo).abs() < 1e-15);
        let tiny = wedge_for_hypothesis(&Plane3D::ground(1.2), 1e-9, &rig(), &patch).unwrap();
        assert!(tiny.c_lo < tiny.c_hi && tiny.c_hi - tiny.c_lo < 1e-9);
    }

    #[test]
    fn projection_examples() {
        let wedge = FeasibleWedge::new(-1.0, 0.0);
        assert_eq!(project_onto_wedge(-0.5, 2.0, &wedge), (-0.5, 2.0));
        let (a, b) = project_onto_wedge(1.0, 1.0, &wedge);
        assert!(a.abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        let open = FeasibleWedge::new(f64::NEG_INFINITY, -0.2);
        let (a, b) = project_onto_wedge(3.0, -4.0, &open);
        assert!(open.contains(a, b));
        assert_eq!(b, open.b_min);
    }

    #[test]
    fn homography_limits() {
        let r = rig();
        let far = Plane3D::new(Vector3::new(0.0, 0.3, -1.0), 1e12).unwrap();
        let h = homography_from_plane(&far, &r);
        assert!((h - Matrix3::identity()).abs().max() < 1e-8);

        let h = homography_from_plane(&Plane3D::fronto_parallel(10.0), &r);
        for (x, y) in [(100.0, 50.0), (1500.0, 900.0)] {
            let (xr, yr) = apply_homography(&h, x, y);
            assert!((x - xr - 48.3).abs() < 1e-9 && (yr - y).abs() < 1e-9);
        }

        let h = homography_from_plane(&Plane3D::ground(1.2), &r);
        for (x, y) in [(3.0, 600.0), (2000.0, 1000.0), (1000.0, 520.0)] {
            let (_, yr) = apply_homography(&h, x, y);
            assert!((yr - y).abs() < 1e-9);
        }
    }

    #[test]
    fn triangulate_examples() {
        let r = rig();
        let p = triangulate(r.x0, r.y0, 48.3, &r).unwrap();
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && (p.z - 10.0).abs() < 1e-12);
        for z in [0.5, 7.0, 123.4] {
            let p = triangulate(10.0, 20.0, r.disparity_at_depth(z), &r).unwrap();
            assert!((p.z - z).abs() < 1e-9 * z);
        }
        assert!(matches!(triangulate(1.0, 1.0, 0.0, &r), Err(Error::NonPositiveDisparity(_))));
        assert!(triangulate(1.0, 1.0, -2.0, &r).is_err());
    }

    #[test]
    fn rig_json_schema() {
        let json = r#"{"fx":2300,"fy":2300,"x0":1023.5,"y0":511.5,"baseline_m":0.21,"width":2048,"height":1024}"#;
        let r = CameraRig::from_json_str(json).unwrap();
        assert_eq!(r, CameraRig::automotive());
        assert!(CameraRig::from_json_str(r#"{"fx":-1,"fy":1,"x0":0,"y0":0,"baseline_m":0.2,"width":4,"height":4}"#)
            .is_err());
    }
}
