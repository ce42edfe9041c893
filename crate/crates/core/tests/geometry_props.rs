use nalgebra::Vector3;
use proptest::prelude::*;
use roadhazard::geometry::apply_homography;
use roadhazard::hypothesis::fpht_warp;
use roadhazard::{
    disparity_line_to_plane, homography_from_plane, plane_to_disparity_line, project_onto_wedge, triangulate,
    CameraRig, DisparityLine, FeasibleWedge, PatchSpec, Plane3D,
};

fn rig() -> CameraRig {
    CameraRig::automotive()
}

prop_compose! {
    /// A visible plane with zero lateral tilt and a patch that sees it.
    fn plane_and_patch()(
        tilt in -1.5f64..1.5,
        distance in 0.5f64..60.0,
        xc in 20usize..2020,
        yc in 20usize..1000,
        h in prop::sample::select(vec![3usize, 5, 9, 15]),
    ) -> (Plane3D, PatchSpec) {
        let plane = Plane3D::new(Vector3::new(0.0, -tilt.sin(), -tilt.cos()), distance).unwrap();
        (plane, PatchSpec::new(xc, yc, 15, h).unwrap())
    }
}

proptest! {
    #[test]
    fn plane_line_round_trip((plane, patch) in plane_and_patch()) {
        let rig = rig();
        if let Ok(line) = plane_to_disparity_line(&plane, &rig, &patch) {
            let back = disparity_line_to_plane(&line, &rig, &patch).unwrap();
            prop_assert!((back.normal - plane.normal).norm() < 1e-9);
            prop_assert!((back.distance - plane.distance).abs() <= 1e-9 * plane.distance);
            let again = plane_to_disparity_line(&back, &rig, &patch).unwrap();
            prop_assert!((again.a - line.a).abs() <= 1e-9 * line.a.abs().max(1.0));
            prop_assert!((again.b - line.b).abs() <= 1e-9 * line.b);
        }
    }

    #[test]
    fn line_warp_equals_homography((plane, patch) in plane_and_patch()) {
        let rig = rig();
        if let Ok(line) = plane_to_disparity_line(&plane, &rig, &patch) {
            let hom = homography_from_plane(&plane, &rig);
            for y in patch.rows() {
                for x in patch.cols() {
                    let (xa, ya) = fpht_warp(x as f64, y as f64, &line, &patch);
                    let (xb, yb) = apply_homography(&hom, x as f64, y as f64);
                    prop_assert!((xa - xb).abs() < 1e-6 && (ya - yb).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn line_disparity_matches_triangulated_plane((plane, patch) in plane_and_patch()) {
        let rig = rig();
        if let Ok(line) = plane_to_disparity_line(&plane, &rig, &patch) {
            for y in patch.rows() {
                let d = line.disparity(patch.ybar(y as f64));
                if d > 1e-6 {
                    let p = triangulate(patch.xc as f64, y as f64, d, &rig).unwrap();
                    let off = plane.normal.dot(&p) + plane.distance;
                    prop_assert!(off.abs() < 1e-7 * p.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn wedge_projection_is_feasible_and_idempotent(
        c_lo in -5.0f64..0.0,
        width in 0.0f64..5.0,
        a in -50.0f64..50.0,
        b in -50.0f64..50.0,
    ) {
        let w = FeasibleWedge::new(c_lo, c_lo + width);
        let (pa, pb) = project_onto_wedge(a, b, &w);
        prop_assert!(w.contains(pa, pb) || (pb - w.b_min).abs() < 1e-12);
        let (qa, qb) = project_onto_wedge(pa, pb, &w);
        prop_assert!((qa - pa).abs() < 1e-9 && (qb - pb).abs() < 1e-9);
        if w.contains(a, b) {
            prop_assert_eq!((pa, pb), (a, b));
        }
    }

    #[test]
    fn fronto_parallel_lines_are_flat(z in 1.0f64..80.0, yc in 2usize..1020) {
        let rig = rig();
        let patch = PatchSpec::new(100, yc, 15, 5).unwrap();
        let line = plane_to_disparity_line(&Plane3D::fronto_parallel(z), &rig, &patch).unwrap();
        prop_assert!(line.a.abs() < 1e-12);
        prop_assert!((line.b - rig.disparity_at_depth(z)).abs() < 1e-9);
        let _ = DisparityLine::new(line.a, line.b);
    }
}
