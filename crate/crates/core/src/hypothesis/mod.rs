//! Per-patch obstacle / free-space decisions by generalized likelihood ratio.
//!
//! Each patch is fitted twice, once under a free-space hypothesis (normal
//! within `phi_f` of the ground normal) and once under an obstacle
//! hypothesis (normal within `phi_o` of the fronto-parallel normal). The
//! statistic `F_f - F_o` is compared against a threshold `tau`; patches whose
//! fits lack texture or failed to converge yield no decision.

mod fpht;
pub mod lm;
mod pht;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fpht::{fpht_fit, fpht_jacobian, fpht_residuals, fpht_warp, PatchResiduals};
pub use lm::LmConfig;
pub use pht::{params_from_plane, pht_fit, plane_from_params};

use crate::disparity::{block_match, BlockMatchConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    disparity_line_to_plane, project_onto_wedge, wedge_for_hypothesis, CameraRig, DisparityLine, FeasibleWedge,
    PatchSpec, Plane3D,
};
use crate::imaging::{DisparityMap, IntensityImage, PatchGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pht,
    Fpht,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pht => "pht",
            Method::Fpht => "fpht",
        }
    }

    /// Factor applied to `tau` for this method's cost.
    ///
    /// The disparity-line fit uses the left image as a noise-free reference,
    /// so each residual carries twice the noise variance of the averaged
    /// reference used by the homography fit. Halving the homography
    /// threshold keeps both methods at the same likelihood ratio.
    pub fn tau_scale(self) -> f64 {
        match self {
            Method::Pht => 0.5,
            Method::Fpht => 1.0,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pht" => Ok(Method::Pht),
            "fpht" => Ok(Method::Fpht),
            _ => Err(Error::Parse(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub patch_w: usize,
    pub patch_h: usize,
    pub stride: usize,
    /// 1 for full resolution, 2 for box-downsampled input.
    pub downsample: usize,
    /// Free-space bound, degrees.
    pub phi_f: f64,
    /// Obstacle bound, degrees.
    pub phi_o: f64,
    /// Threshold on `F_f - F_o`, squared intensity units of a 12-bit image.
    pub tau: f64,
    /// Texture gate per patch pixel for a 12-bit dynamic range.
    pub lambda_min: f64,
    /// Subtract per-patch means before comparing intensities.
    pub mean_removal: bool,
    pub lm: LmConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            patch_w: 15,
            patch_h: 3,
            stride: 2,
            downsample: 2,
            phi_f: 25.0,
            phi_o: 45.0,
            tau: 25.0,
            lambda_min: 5.0,
            mean_removal: false,
            lm: LmConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        PatchSpec::new(0, 0, self.patch_w, self.patch_h)?;
        if self.stride == 0 || !(self.downsample == 1 || self.downsample == 2) {
            return Err(Error::InvalidConfig("stride must be positive and downsample 1 or 2".into()));
        }
        for (name, v) in [("phi_f", self.phi_f), ("phi_o", self.phi_o)] {
            if !(v > 0.0 && v < 90.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside (0, 90) degrees")));
            }
        }
        if !self.tau.is_finite() || !(self.lambda_min >= 0.0) {
            return Err(Error::InvalidConfig("tau must be finite and lambda_min >= 0".into()));
        }
        Ok(())
    }

    /// Absolute thresholds for one method and image dynamic range.
    pub fn decision_rule(&self, method: Method, maxval: u16) -> DecisionRule {
        let range = maxval as f64 / 4095.0;
        DecisionRule {
            tau: self.tau * method.tau_scale() * range * range,
            lambda_min: self.lambda_min * (self.patch_w * self.patch_h) as f64 * range * range,
        }
    }
}

/// Thresholds in the units of the fitted costs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionRule {
    pub tau: f64,
    pub lambda_min: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitParams {
    Line(DisparityLine),
    Plane(Plane3D),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisFit {
    pub params: FitParams,
    /// Fitted disparity at the patch center.
    pub center_disparity: f64,
    pub residual_sum: f64,
    pub iterations: usize,
    pub min_eigenvalue: f64,
    pub converged: bool,
    /// Cost at the projected initialization and after each accepted step.
    pub accepted_costs: Vec<f64>,
}

impl HypothesisFit {
    pub fn passes_gate(&self, lambda_min: f64) -> bool {
        self.converged && self.residual_sum.is_finite() && self.min_eigenvalue >= lambda_min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Obstacle,
    FreeSpace,
    NoDecision,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Obstacle => "obstacle",
            Verdict::FreeSpace => "free_space",
            Verdict::NoDecision => "no_decision",
        }
    }
}

impl std::str::FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obstacle" => Ok(Verdict::Obstacle),
            "free_space" => Ok(Verdict::FreeSpace),
            "no_decision" => Ok(Verdict::NoDecision),
            _ => Err(Error::Parse(format!("unknown verdict {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDecision {
    pub patch: PatchSpec,
    pub verdict: Verdict,
    /// `None` when the patch had no usable initialization.
    pub fit_f: Option<HypothesisFit>,
    pub fit_o: Option<HypothesisFit>,
    /// `F_f - F_o`, NaN without fits.
    pub statistic: f64,
}

impl PatchDecision {
    fn undecided(patch: PatchSpec) -> Self {
        Self { patch, verdict: Verdict::NoDecision, fit_f: None, fit_o: None, statistic: f64::NAN }
    }

    /// Re-applies a decision rule to the stored fits.
    pub fn redecide(&self, rule: &DecisionRule) -> Verdict {
        match (&self.fit_f, &self.fit_o) {
            (Some(f), Some(o)) => glrt_verdict(f, o, rule),
            _ => Verdict::NoDecision,
        }
    }
}

fn glrt_verdict(fit_f: &HypothesisFit, fit_o: &HypothesisFit, rule: &DecisionRule) -> Verdict {
    if !(fit_f.passes_gate(rule.lambda_min) && fit_o.passes_gate(rule.lambda_min)) {
        return Verdict::NoDecision;
    }
    if fit_f.residual_sum - fit_o.residual_sum > rule.tau {
        Verdict::Obstacle
    } else {
        Verdict::FreeSpace
    }
}

/// Likelihood-ratio decision between the two fitted hypotheses.
pub fn glrt_decide(
    patch: &PatchSpec,
    fit_f: HypothesisFit,
    fit_o: HypothesisFit,
    rule: &DecisionRule,
) -> PatchDecision {
    let verdict = glrt_verdict(&fit_f, &fit_o, rule);
    PatchDecision {
        patch: *patch,
        verdict,
        statistic: fit_f.residual_sum - fit_o.residual_sum,
        fit_f: Some(fit_f),
        fit_o: Some(fit_o),
    }
}

/// Reference plane of the free-space hypothesis.
pub fn free_space_reference() -> Plane3D {
    Plane3D::ground(1.0)
}

/// Reference plane of the obstacle hypothesis.
pub fn obstacle_reference() -> Plane3D {
    Plane3D::fronto_parallel(1.0)
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

/// Initial free-space and obstacle lines from the valid disparities of a patch.
///
/// Free space: least-squares line through the per-row medians. Obstacle:
/// the patch median with zero slope.
pub fn initial_lines(dmap: &DisparityMap, patch: &PatchSpec) -> Option<(DisparityLine, DisparityLine)> {
    let mut all = Vec::new();
    let mut row_medians = Vec::new();
    let mut row = Vec::with_capacity(patch.w);
    for y in patch.rows() {
        row.clear();
        row.extend(patch.cols().filter_map(|x| dmap.get(x, y)));
        if !row.is_empty() {
            all.extend_from_slice(&row);
            row_medians.push((patch.ybar(y as f64), median(&mut row)));
        }
    }
    if all.is_empty() {
        return None;
    }
    let obstacle = DisparityLine::new(0.0, median(&mut all));
    let free = if row_medians.len() >= 2 {
        let n = row_medians.len() as f64;
        let my = row_medians.iter().map(|p| p.0).sum::<f64>() / n;
        let md = row_medians.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = row_medians.iter().map(|p| (p.0 - my) * (p.1 - md)).sum();
        let sxx: f64 = row_medians.iter().map(|p| (p.0 - my).powi(2)).sum();
        let a = sxy / sxx;
        DisparityLine::new(a, md - a * my)
    } else {
        DisparityLine::new(0.0, row_medians[0].1)
    };
    Some((free, obstacle))
}

fn hypothesis_wedges(
    rig: &CameraRig,
    patch: &PatchSpec,
    cfg: &DetectorConfig,
) -> Result<(FeasibleWedge, FeasibleWedge)> {
    Ok((
        wedge_for_hypothesis(&free_space_reference(), cfg.phi_f.to_radians(), rig, patch)?,
        wedge_for_hypothesis(&obstacle_reference(), cfg.phi_o.to_radians(), rig, patch)?,
    ))
}

/// Fits both hypotheses on one patch and decides.
#[allow(clippy::too_many_arguments)]
pub fn decide_patch(
    left: &IntensityImage,
    right: &IntensityImage,
    dmap: &DisparityMap,
    rig: &CameraRig,
    patch: &PatchSpec,
    cfg: &DetectorConfig,
    method: Method,
    rule: &DecisionRule,
) -> PatchDecision {
    let Some((init_f, init_o)) = initial_lines(dmap, patch) else {
        return PatchDecision::undecided(*patch);
    };
    let Ok((wedge_f, wedge_o)) = hypothesis_wedges(rig, patch, cfg) else {
        return PatchDecision::undecided(*patch);
    };
    let project = |l: DisparityLine, w: &FeasibleWedge| {
        let (a, b) = project_onto_wedge(l.a, l.b, w);
        DisparityLine::new(a, b)
    };
    let init_f = project(init_f, &wedge_f);
    let init_o = project(init_o, &wedge_o);
    let restart_f = |d: f64| project(ground_line(rig, patch, d), &wedge_f);
    let restart_o = |d: f64| project(DisparityLine::new(0.0, d), &wedge_o);
    let (fit_f, fit_o) = match method {
        Method::Fpht => exchange_fits(
            |l| Some(fpht_fit(left, right, patch, &l, &wedge_f, cfg)),
            |l| Some(fpht_fit(left, right, patch, &l, &wedge_o, cfg)),
            (init_f, &restart_f),
            (init_o, &restart_o),
        ),
        Method::Pht => {
            let (ref_f, ref_o) = (free_space_reference(), obstacle_reference());
            let (bound_f, bound_o) = (cfg.phi_f.to_radians(), cfg.phi_o.to_radians());
            let fit = |l: DisparityLine, reference: &Plane3D, bound: f64| {
                let init = disparity_line_to_plane(&l, rig, patch).ok()?;
                Some(pht_fit(left, right, rig, patch, &init, reference, bound, cfg))
            };
            exchange_fits(
                |l| fit(l, &ref_f, bound_f),
                |l| fit(l, &ref_o, bound_o),
                (init_f, &restart_f),
                (init_o, &restart_o),
            )
        }
    };
    match (fit_f, fit_o) {
        (Some(f), Some(o)) => glrt_decide(patch, f, o, rule),
        _ => PatchDecision::undecided(*patch),
    }
}

/// Flat ground through disparity `d` at the patch center; fronto-parallel
/// when the center lies on or above the horizon.
fn ground_line(rig: &CameraRig, patch: &PatchSpec, d: f64) -> DisparityLine {
    let below = patch.yc as f64 - rig.y0;
    let slope = if below > 0.0 { d / below } else { 0.0 };
    DisparityLine::new(-slope * patch.h as f64 / 2.0, d)
}

type Restart<'a> = (DisparityLine, &'a dyn Fn(f64) -> DisparityLine);

/// Fits both hypotheses from their own initializations. The one with the
/// higher residual is then
/// re-initialized by its own rule at the other's center disparity and refit
/// (the refit is kept only if better), so a poor initial disparity cannot trap one hypothesis in a local
/// minimum that the other escaped.
fn exchange_fits(
    fit_f: impl Fn(DisparityLine) -> Option<HypothesisFit>,
    fit_o: impl Fn(DisparityLine) -> Option<HypothesisFit>,
    (init_f, restart_f): Restart,
    (init_o, restart_o): Restart,
) -> (Option<HypothesisFit>, Option<HypothesisFit>) {
    let (Some(f), Some(o)) = (fit_f(init_f), fit_o(init_o)) else {
        return (None, None);
    };
    let refit =
        |fit: &dyn Fn(DisparityLine) -> Option<HypothesisFit>, l: DisparityLine, cur: HypothesisFit| match fit(l) {
            Some(g) if better(&g, &cur) => g,
            _ => cur,
        };
    // the lower residual marks the better basin even before convergence
    if o.residual_sum < f.residual_sum {
        let f = refit(&fit_f, restart_f(o.center_disparity), f);
        (Some(f), Some(o))
    } else if f.residual_sum < o.residual_sum {
        let o = refit(&fit_o, restart_o(f.center_disparity), o);
        (Some(f), Some(o))
    } else {
        (Some(f), Some(o))
    }
}

/// Converged fits beat unconverged ones, then lower residuals win.
fn better(a: &HypothesisFit, b: &HypothesisFit) -> bool {
    (a.converged && !b.converged) || (a.converged == b.converged && a.residual_sum < b.residual_sum)
}

/// Decisions for every grid patch, in grid order.
///
/// Images, disparity map and `rig` must all describe the detector
/// resolution.
pub fn detect_frame(
    left: &IntensityImage,
    right: &IntensityImage,
    dmap: &DisparityMap,
    grid: &PatchGrid,
    rig: &CameraRig,
    cfg: &DetectorConfig,
    method: Method,
) -> Result<Vec<PatchDecision>> {
    cfg.validate()?;
    if !left.same_size(right) || dmap.width != left.width || dmap.height != left.height {
        return Err(Error::DimensionMismatch(format!(
            "images {}x{}, disparity {}x{}",
            left.width, left.height, dmap.width, dmap.height
        )));
    }
    if rig.width != left.width || rig.height != left.height {
        return Err(Error::DimensionMismatch(format!(
            "rig {}x{} vs images {}x{}",
            rig.width, rig.height, left.width, left.height
        )));
    }
    if grid.patch_w != cfg.patch_w || grid.patch_h != cfg.patch_h {
        return Err(Error::InvalidConfig("grid patch size differs from the configuration".into()));
    }
    let rule = cfg.decision_rule(method, left.maxval);
    Ok((0..grid.len())
        .into_par_iter()
        .map(|i| decide_patch(left, right, dmap, rig, &grid.patch(i), cfg, method, &rule))
        .collect())
}

/// Inputs at detector resolution.
#[derive(Clone, Debug)]
pub struct DetectorInputs {
    pub left: IntensityImage,
    pub right: IntensityImage,
    pub dmap: DisparityMap,
    pub rig: CameraRig,
    pub grid: PatchGrid,
}

/// Downsamples full-resolution inputs as configured and builds the grid.
pub fn prepare_inputs(
    left: &IntensityImage,
    right: &IntensityImage,
    dmap: &DisparityMap,
    rig: &CameraRig,
    cfg: &DetectorConfig,
) -> Result<DetectorInputs> {
    cfg.validate()?;
    let (left, right, dmap, rig) = if cfg.downsample == 2 {
        (left.downsample2()?, right.downsample2()?, dmap.downsample2()?, rig.downsampled2())
    } else {
        (left.clone(), right.clone(), dmap.clone(), *rig)
    };
    let grid = PatchGrid::new(left.width, left.height, cfg.patch_w, cfg.patch_h, cfg.stride, cfg.downsample)?;
    Ok(DetectorInputs { left, right, dmap, rig, grid })
}

/// Downsamples the images as configured and initializes from block matching
/// at detector resolution.
pub fn prepare_block_matched(
    left: &IntensityImage,
    right: &IntensityImage,
    rig: &CameraRig,
    cfg: &DetectorConfig,
    bm: &BlockMatchConfig,
) -> Result<DetectorInputs> {
    let mut inp = prepare_inputs(left, right, &DisparityMap::invalid(left.width, left.height), rig, cfg)?;
    inp.dmap = block_match(&inp.left, &inp.right, bm)?;
    Ok(inp)
}

/// [`prepare_inputs`] followed by [`detect_frame`].
pub fn detect(
    left: &IntensityImage,
    right: &IntensityImage,
    dmap: &DisparityMap,
    rig: &CameraRig,
    cfg: &DetectorConfig,
    method: Method,
) -> Result<Vec<PatchDecision>> {
    let inp = prepare_inputs(left, right, dmap, rig, cfg)?;
    detect_frame(&inp.left, &inp.right, &inp.dmap, &inp.grid, &inp.rig, cfg, method)
}

const DECISION_HEADER: &str = "index,xc,yc,w,h,dwn,verdict,statistic,\
f_a,f_b,f_nx,f_ny,f_nz,f_dist,f_disp,f_residual,f_min_eig,f_iters,f_converged,\
o_a,o_b,o_nx,o_ny,o_nz,o_dist,o_disp,o_residual,o_min_eig,o_iters,o_converged";

fn fit_fields(fit: Option<&HypothesisFit>, rig: &CameraRig, patch: &PatchSpec) -> String {
    let Some(fit) = fit else {
        return ",,,,,,,,,,".into();
    };
    let (line, plane) = match fit.params {
        FitParams::Line(l) => (Some(l), disparity_line_to_plane(&l, rig, patch).ok()),
        FitParams::Plane(p) => (crate::geometry::plane_to_disparity_line(&p, rig, patch).ok(), Some(p)),
    };
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        opt(line.map(|l| l.a)),
        opt(line.map(|l| l.b)),
        opt(plane.map(|p| p.normal.x)),
        opt(plane.map(|p| p.normal.y)),
        opt(plane.map(|p| p.normal.z)),
        opt(plane.map(|p| p.distance)),
        fit.center_disparity,
        fit.residual_sum,
        fit.min_eigenvalue,
        fit.iterations,
        u8::from(fit.converged),
    )
}

/// Writes one CSV row per decision. Floats use shortest round-trip form.
pub fn write_decisions_csv(
    mut out: impl Write,
    decisions: &[PatchDecision],
    rig: &CameraRig,
    downsample: usize,
) -> Result<()> {
    writeln!(out, "{DECISION_HEADER}")?;
    for (i, d) in decisions.iter().enumerate() {
        let p = &d.patch;
        writeln!(
            out,
            "{i},{},{},{},{},{downsample},{},{},{},{}",
            p.xc,
            p.yc,
            p.w,
            p.h,
            d.verdict.name(),
            d.statistic,
            fit_fields(d.fit_f.as_ref(), rig, p),
            fit_fields(d.fit_o.as_ref(), rig, p),
        )?;
    }
    Ok(())
}

/// The fields of a decisions CSV row needed downstream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionRecord {
    pub xc: usize,
    pub yc: usize,
    pub downsample: usize,
    pub verdict: Verdict,
    pub statistic: f64,
    /// Obstacle-fit disparity at the patch center, detector resolution.
    pub obstacle_disparity: Option<f64>,
}

pub fn read_decisions_csv(input: impl std::io::Read) -> Result<Vec<DecisionRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("decisions CSV lacks column {name:?}")))
    };
    let (cx, cy, cd, cv, cs, co) =
        (col("xc")?, col("yc")?, col("dwn")?, col("verdict")?, col("statistic")?, col("o_disp")?);
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}"))) };
    let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Parse(format!("bad integer {s:?}"))) };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let obstacle_disparity = match &rec[co] {
            "" => None,
            s => Some(num(s)?),
        };
        out.push(DecisionRecord {
            xc: int(&rec[cx])?,
            yc: int(&rec[cy])?,
            downsample: int(&rec[cd])?,
            verdict: rec[cv].parse()?,
            statistic: num(&rec[cs])?,
            obstacle_disparity,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
