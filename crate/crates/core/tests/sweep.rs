use roadhazard::eval::{read_report_csv, run_sweep, write_report_csv, EvalFrame};
use roadhazard::synth::{render, BoxObstacle, FREE_SPACE_MARGIN, FREE_SPACE_RANGE};
use roadhazard::{CameraRig, ParamGrid, PointSource, SceneSpec};

/// An 800x400 window of the 2300 px rig, small enough for quick sweeps.
fn frames() -> Vec<EvalFrame> {
    let rig = CameraRig::new(2300.0, 2300.0, 399.5, 99.5, 0.21, 800, 400).unwrap();
    [(1, 0.0, 12.0, 0.3), (2, -0.4, 16.0, 0.2)]
        .into_iter()
        .map(|(seed, x, z, height)| {
            let mut spec = SceneSpec::road(&format!("small_{seed}"), rig);
            spec.texture_seed = seed;
            spec.noise_seed = seed + 100;
            spec.free_space_range = Some(FREE_SPACE_RANGE);
            spec.free_space_margin = FREE_SPACE_MARGIN;
            spec.obstacles.push(BoxObstacle { id: 2, x, z, width: 0.4, height, depth: 0.3 });
            EvalFrame { bundle: render(&spec).unwrap(), rig }
        })
        .collect()
}

fn tau_grid() -> ParamGrid {
    let mut grid = ParamGrid { tau: vec![2.0, 5.0, 10.0, 25.0, 50.0, 100.0, 400.0], ..Default::default() };
    grid.base.stride = 3;
    grid
}

#[test]
fn tau_sweep_is_monotone_and_deterministic() {
    let frames = frames();
    let grid = tau_grid();
    let result = run_sweep(&frames, &grid).unwrap();
    assert_eq!(result.points.len(), grid.tau.len());
    for w in result.points.windows(2) {
        assert!(w[1].counts.tp <= w[0].counts.tp && w[1].counts.fp <= w[0].counts.fp);
        assert!(w[1].tpr <= w[0].tpr && w[1].fpr <= w[0].fpr);
    }
    assert!(result.points[0].counts.tp > result.points.last().unwrap().counts.tp);
    for w in result.hull.windows(2) {
        assert!(w[1].0 > w[0].0 && w[1].1 >= w[0].1);
    }
    assert_eq!(run_sweep(&frames, &grid).unwrap(), result);
}

#[test]
fn instance_and_pc_sweeps_round_trip_through_the_report() {
    let frames = frames();
    let grid = ParamGrid { method: PointSource::Pc, instance: true, ..tau_grid() };
    let result = run_sweep(&frames, &grid).unwrap();
    assert_eq!(result.points.len(), 1);
    let inst = result.points[0].instance.unwrap();
    assert!(inst.iint > 0.0 && inst.iint <= 1.0);
    assert!(!result.instance_hull.is_empty());

    let mut csv = Vec::new();
    write_report_csv(&mut csv, &result).unwrap();
    let back = read_report_csv(csv.as_slice()).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].counts, result.points[0].counts);
    assert_eq!(back[0].config_hash(), result.points[0].config_hash());
}

#[test]
fn grid_json_defaults() {
    let grid = ParamGrid::from_json_str(r#"{"tau": [10, 20], "lambda_min": [1, 5, 9]}"#).unwrap();
    assert_eq!(grid.config_count(), 6);
    assert!(ParamGrid::from_json_str(r#"{"overlap_thresh": 2}"#).is_err());
    assert!(ParamGrid::from_json_str(r#"{"lambda_min": [-1]}"#).is_err());
}
