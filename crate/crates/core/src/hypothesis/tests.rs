use super::*;
use crate::geometry::{apply_homography, homography_from_plane, plane_to_disparity_line};
use crate::imaging::LABEL_FREE_SPACE;
use crate::synth::{render, BoxObstacle, SceneSpec};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 96;
const H: usize = 48;

/// Sum of a few oblique sinusoids; smooth and textured in both directions.
#[derive(Clone)]
struct Smooth {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Smooth {
    fn random(rng: &mut impl Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                (
                    rng.random_range(150.0..400.0),
                    rng.random_range(0.15..0.6) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    rng.random_range(-0.3..0.3),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        2000.0 + self.waves.iter().map(|&(amp, kx, ky, ph)| amp * (kx * x + ky * y + ph).sin()).sum::<f64>()
    }
}

/// Pair in which `line` maps every left pixel of `patch` exactly onto the
/// texture in the right image.
fn pair(tex: &Smooth, patch: &PatchSpec, line: &DisparityLine) -> (IntensityImage, IntensityImage) {
    let left = IntensityImage::from_fn(W, H, 4095, |x, y| tex.at(x as f64, y as f64) as f32);
    let right = IntensityImage::from_fn(W, H, 4095, |x, y| {
        let d = line.disparity(patch.ybar(y as f64));
        tex.at(x as f64 + d, y as f64) as f32
    });
    (left, right)
}

fn project(l: DisparityLine, w: &FeasibleWedge) -> DisparityLine {
    let (a, b) = project_onto_wedge(l.a, l.b, w);
    DisparityLine::new(a, b)
}

fn rig() -> CameraRig {
    CameraRig::new(400.0, 400.0, 47.5, 23.5, 0.2, W, H).unwrap()
}

fn patch() -> PatchSpec {
    PatchSpec::new(60, 24, 15, 9).unwrap()
}

#[test]
fn warp_matches_homography() {
    let rig = rig();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let p = PatchSpec::new(rng.random_range(10..86), rng.random_range(5..43), 15, 9).unwrap();
        let tilt: f64 = rng.random_range(-1.4..1.4);
        let plane = Plane3D::new(Vector3::new(0.0, -tilt.sin(), -tilt.cos()), rng.random_range(2.0..40.0)).unwrap();
        let Ok(line) = plane_to_disparity_line(&plane, &rig, &p) else { continue };
        let hom = homography_from_plane(&plane, &rig);
        for y in p.rows() {
            for x in p.cols() {
                let (xa, ya) = fpht_warp(x as f64, y as f64, &line, &p);
                let (xb, yb) = apply_homography(&hom, x as f64, y as f64);
                assert!((xa - xb).abs() < 1e-6 && (ya - yb).abs() < 1e-6, "{xa},{ya} vs {xb},{yb}");
            }
        }
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = patch();
    for _ in 0..100 {
        let tex = Smooth::random(&mut rng);
        let truth = DisparityLine::new(rng.random_range(-2.0..2.0), rng.random_range(4.0..20.0));
        let (left, right) = pair(&tex, &p, &truth);
        let at = DisparityLine::new(truth.a + rng.random_range(-0.5..0.5), truth.b + rng.random_range(-0.5..0.5));
        let jac = fpht_jacobian(&left, &right, &p, &at, false).unwrap();
        let h = 1e-5;
        let res = |a: f64, b: f64| fpht_residuals(&left, &right, &p, &DisparityLine::new(a, b), false).unwrap().values;
        let (ap, am) = (res(at.a + h, at.b), res(at.a - h, at.b));
        let (bp, bm) = (res(at.a, at.b + h), res(at.a, at.b - h));
        let (mut err, mut norm) = (0.0, 0.0);
        for i in 0..jac.len() {
            let fd = [(ap[i] - am[i]) / (2.0 * h), (bp[i] - bm[i]) / (2.0 * h)];
            for k in 0..2 {
                err += (jac[i][k] - fd[k]).powi(2);
                norm += jac[i][k].powi(2);
            }
        }
        assert!((err / norm).sqrt() < 1e-4, "relative error {}", (err / norm).sqrt());
    }
}

fn assert_monotone(fit: &HypothesisFit) {
    assert!(fit.accepted_costs.windows(2).all(|w| w[1] <= w[0]), "{:?}", fit.accepted_costs);
}

#[test]
fn noiseless_fits_recover_the_line() {
    let cfg = DetectorConfig::default();
    let rig = rig();
    let p = patch();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let wedge_f = wedge_for_hypothesis(&free_space_reference(), cfg.phi_f.to_radians(), &rig, &p).unwrap();
    let wedge_o = wedge_for_hypothesis(&obstacle_reference(), cfg.phi_o.to_radians(), &rig, &p).unwrap();
    for i in 0..40 {
        let tex = Smooth::random(&mut rng);
        let (truth, wedge) = if i % 2 == 0 {
            let ground = Plane3D::ground(rng.random_range(0.8..1.6));
            (plane_to_disparity_line(&ground, &rig, &p).unwrap(), wedge_f)
        } else {
            (DisparityLine::new(0.0, rng.random_range(3.0..15.0)), wedge_o)
        };
        let (left, right) = pair(&tex, &p, &truth);
        let init = DisparityLine::new(truth.a * 0.8, truth.b + rng.random_range(-0.8..0.8));
        let fit = fpht_fit(&left, &right, &p, &project(init, &wedge), &wedge, &cfg);
        assert!(fit.converged);
        assert!((fit.center_disparity - truth.b).abs() < 0.05, "{} vs {}", fit.center_disparity, truth.b);
        assert_monotone(&fit);
    }
}

#[test]
fn truth_is_a_fixed_point() {
    let cfg = DetectorConfig::default();
    let p = patch();
    let tex = Smooth::random(&mut ChaCha8Rng::seed_from_u64(9));
    let truth = DisparityLine::new(0.0, 8.0);
    let (left, right) = pair(&tex, &p, &truth);
    let wedge = FeasibleWedge::new(-1.0, 1.0);
    let fit = fpht_fit(&left, &right, &p, &truth, &wedge, &cfg);
    assert!(fit.converged && fit.iterations <= 2);
    let FitParams::Line(l) = fit.params else { panic!() };
    assert!((l.a - truth.a).abs() < 1e-6 && (l.b - truth.b).abs() < 1e-6);
    assert!(fit.residual_sum < 1e-6);
}

#[test]
fn pht_fit_recovers_fronto_parallel_plane() {
    let cfg = DetectorConfig::default();
    let rig = rig();
    let p = patch();
    let tex = Smooth::random(&mut ChaCha8Rng::seed_from_u64(2));
    let plane = Plane3D::fronto_parallel(10.0);
    let truth = plane_to_disparity_line(&plane, &rig, &p).unwrap();
    let (left, right) = pair(&tex, &p, &truth);
    let init = Plane3D::fronto_parallel(11.0);
    let fit = pht_fit(&left, &right, &rig, &p, &init, &obstacle_reference(), 45f64.to_radians(), &cfg);
    assert!(fit.converged);
    assert!((fit.center_disparity - truth.b).abs() < 0.05);
    assert_monotone(&fit);
}

#[test]
fn flat_patch_fails_the_texture_gate() {
    let cfg = DetectorConfig::default();
    let left = IntensityImage::filled(W, H, 4095, 1000.0);
    let right = left.clone();
    let fit = fpht_fit(&left, &right, &patch(), &DisparityLine::new(0.0, 5.0), &FeasibleWedge::new(-1.0, 1.0), &cfg);
    let rule = cfg.decision_rule(Method::Fpht, 4095);
    assert!(!fit.passes_gate(rule.lambda_min));
}

fn line_fit(residual: f64, eig: f64) -> HypothesisFit {
    HypothesisFit {
        params: FitParams::Line(DisparityLine::new(0.0, 5.0)),
        center_disparity: 5.0,
        residual_sum: residual,
        iterations: 3,
        min_eigenvalue: eig,
        converged: true,
        accepted_costs: vec![residual],
    }
}

#[test]
fn glrt_thresholds() {
    let p = patch();
    let rule = DecisionRule { tau: 10.0, lambda_min: 1.0 };
    let d = |f: f64, o: f64| glrt_decide(&p, line_fit(f, 5.0), line_fit(o, 5.0), &rule);
    assert_eq!(d(100.0, 80.0).verdict, Verdict::Obstacle);
    assert_eq!(d(100.0, 90.0).verdict, Verdict::FreeSpace);
    assert_eq!(d(100.0, 95.0).verdict, Verdict::FreeSpace);
    assert_eq!(d(100.0, 80.0).statistic, 20.0);
    let gated = glrt_decide(&p, line_fit(100.0, 0.5), line_fit(10.0, 5.0), &rule);
    assert_eq!(gated.verdict, Verdict::NoDecision);
    // redeciding with the same rule is the identity
    let dec = d(100.0, 80.0);
    assert_eq!(dec.redecide(&rule), dec.verdict);
    assert_eq!(dec.redecide(&DecisionRule { tau: 30.0, lambda_min: 1.0 }), Verdict::FreeSpace);
}

/// A 800x400 window of the 2300 px rig with the horizon near the top.
fn small_scene_rig() -> CameraRig {
    CameraRig::new(2300.0, 2300.0, 399.5, 99.5, 0.21, 800, 400).unwrap()
}

fn scene(name: &str) -> SceneSpec {
    let mut spec = SceneSpec::road(name, small_scene_rig());
    spec.free_space_range = Some(crate::synth::FREE_SPACE_RANGE);
    spec.free_space_margin = crate::synth::FREE_SPACE_MARGIN;
    spec
}

fn small_cfg() -> DetectorConfig {
    DetectorConfig { stride: 3, ..Default::default() }
}

#[test]
fn flat_road_has_no_obstacles_and_box_is_found() {
    let rig = small_scene_rig();
    let cfg = small_cfg();
    let mut spec = scene("box");
    spec.obstacles.push(BoxObstacle { id: 2, x: 0.0, z: 12.0, width: 0.4, height: 0.1, depth: 0.3 });
    let b = render(&spec).unwrap();
    let dec = detect(&b.left, &b.right, &b.gt_disparity, &rig, &cfg, Method::Fpht).unwrap();
    let (mut on_box, mut on_road) = (0, 0);
    for d in dec.iter().filter(|d| d.verdict == Verdict::Obstacle) {
        let pure_road = d.patch.rows().all(|y| {
            d.patch.cols().all(|x| (0..4).all(|k| b.labels.get(2 * x + k % 2, 2 * y + k / 2) == LABEL_FREE_SPACE))
        });
        if pure_road {
            on_road += 1;
        }
        if b.labels.get(2 * d.patch.xc, 2 * d.patch.yc) == 2 {
            on_box += 1;
        }
    }
    assert_eq!(on_road, 0);
    assert!(on_box >= 3, "{on_box}");
}

#[test]
fn detection_independent_of_thread_count() {
    let rig = small_scene_rig();
    let cfg = small_cfg();
    let mut spec = scene("threads");
    spec.obstacles.push(BoxObstacle { id: 2, x: 0.3, z: 7.0, width: 0.6, height: 0.3, depth: 0.3 });
    let b = render(&spec).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let dec = pool.install(|| detect(&b.left, &b.right, &b.gt_disparity, &rig, &cfg, Method::Fpht).unwrap());
        let mut buf = Vec::new();
        write_decisions_csv(&mut buf, &dec, &rig.downsampled2(), cfg.downsample).unwrap();
        buf
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn decisions_csv_round_trip() {
    let rig = small_scene_rig();
    let cfg = small_cfg();
    let b = render(&scene("csv")).unwrap();
    let dec = detect(&b.left, &b.right, &b.gt_disparity, &rig, &cfg, Method::Fpht).unwrap();
    let mut buf = Vec::new();
    write_decisions_csv(&mut buf, &dec, &rig.downsampled2(), 2).unwrap();
    let back = read_decisions_csv(&buf[..]).unwrap();
    assert_eq!(back.len(), dec.len());
    for (r, d) in back.iter().zip(&dec) {
        assert_eq!((r.xc, r.yc, r.verdict), (d.patch.xc, d.patch.yc, d.verdict));
        assert!(r.statistic == d.statistic || (r.statistic.is_nan() && d.statistic.is_nan()));
        assert_eq!(r.obstacle_disparity, d.fit_o.as_ref().map(|f| f.center_disparity));
    }
}

#[test]
fn pht_and_fpht_agree_on_small_scene() {
    let rig = small_scene_rig();
    let cfg = DetectorConfig { stride: 6, ..small_cfg() };
    let mut spec = scene("agree");
    spec.obstacles.push(BoxObstacle { id: 2, x: 0.0, z: 12.0, width: 0.6, height: 0.3, depth: 0.3 });
    let b = render(&spec).unwrap();
    let f = detect(&b.left, &b.right, &b.gt_disparity, &rig, &cfg, Method::Fpht).unwrap();
    let p = detect(&b.left, &b.right, &b.gt_disparity, &rig, &cfg, Method::Pht).unwrap();
    let (mut both, mut agree) = (0, 0);
    for (a, b) in f.iter().zip(&p) {
        if a.verdict != Verdict::NoDecision && b.verdict != Verdict::NoDecision {
            both += 1;
            agree += usize::from(a.verdict == b.verdict);
        }
    }
    assert!(both > 100, "{both}");
    assert!(agree as f64 >= 0.95 * both as f64, "{agree}/{both}");
}
