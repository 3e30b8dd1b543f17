//! Pose-error metrics: ADD, ADI, the 10%-of-diameter test, and VSD with
//! recall aggregation.

use std::fmt::Write as _;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Pose;
use crate::grid::PointGrid;
use crate::raster::{DepthMap, SceneMaps};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no model points")]
    Empty,
    #[error("map dimensions differ")]
    DimensionMismatch,
    #[error("invalid metric parameters: {0}")]
    InvalidParams(String),
}

/// Mean distance between corresponding model points under the two poses.
pub fn add_error(points: &[Point3<f64>], gt: &Pose, est: &Pose) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum: f64 = points.iter().map(|p| (gt.transform(p) - est.transform(p)).norm()).sum();
    Ok(sum / points.len() as f64)
}

/// Mean distance from each ground-truth-posed point to the closest
/// estimate-posed point.
pub fn adi_error(points: &[Point3<f64>], gt: &Pose, est: &Pose) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::Empty);
    }
    let moved: Vec<Point3<f64>> = points.iter().map(|p| est.transform(p)).collect();
    let grid = PointGrid::new(&moved);
    let sum: f64 = points
        .iter()
        .map(|p| grid.nearest(&gt.transform(p)).expect("non-empty").1.sqrt())
        .sum();
    Ok(sum / points.len() as f64)
}

/// `error < 0.1 * diameter` (strict), with the error chosen by symmetry.
pub fn add_correct(add: f64, adi: f64, diameter: f64, symmetric: bool) -> bool {
    let error = if symmetric { adi } else { add };
    error < 0.1 * diameter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VsdParams {
    /// Misalignment tolerance, millimetres.
    pub tau_mm: f64,
    pub threshold: f64,
    pub min_visibility: f64,
    /// Centimetres per model unit; set from the pipeline configuration.
    #[serde(skip)]
    pub unit_scale_to_cm: f64,
}

impl Default for VsdParams {
    fn default() -> Self {
        Self {
            tau_mm: 20.0,
            threshold: 0.3,
            min_visibility: 0.1,
            unit_scale_to_cm: 0.1,
        }
    }
}

impl VsdParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |m: &str| Err(MetricsError::InvalidParams(m.to_string()));
        if !(self.tau_mm > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return bad("minimum visibility must lie in [0, 1]");
        }
        if !(self.unit_scale_to_cm > 0.0) {
            return bad("unit_scale_to_cm must be positive");
        }
        Ok(())
    }

    /// Tolerance in model units.
    pub fn tau_model(&self) -> f64 {
        self.tau_mm * 0.1 / self.unit_scale_to_cm
    }
}

/// VSD between an object rendered alone under the ground-truth and the
/// estimated pose, with visibility judged against the scene depth. Returns
/// `(error, visibility)`, where visibility is the visible fraction of the
/// ground-truth render.
pub fn vsd_error(
    gt: &SceneMaps,
    est: &SceneMaps,
    scene_depth: &DepthMap,
    params: &VsdParams,
) -> Result<(f64, f64), MetricsError> {
    if gt.width != est.width
        || gt.height != est.height
        || gt.width != scene_depth.width
        || gt.height != scene_depth.height
    {
        return Err(MetricsError::DimensionMismatch);
    }
    let tau = params.tau_model();
    let (mut union, mut cost, mut gt_rendered, mut gt_visible) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..gt.depth.len() {
        let scene = scene_depth.data[i] as f64;
        let (dg, de) = (gt.depth[i], est.depth[i]);
        let vis_gt = dg.is_finite() && dg <= scene + tau;
        let vis_est = de.is_finite() && de <= scene + tau;
        gt_rendered += dg.is_finite() as u64;
        gt_visible += vis_gt as u64;
        if vis_gt || vis_est {
            union += 1;
            if !(vis_gt && vis_est && (de - dg).abs() < tau) {
                cost += 1;
            }
        }
    }
    let error = if union == 0 { 1.0 } else { cost as f64 / union as f64 };
    let visibility = if gt_rendered == 0 { 0.0 } else { gt_visible as f64 / gt_rendered as f64 };
    Ok((error, visibility))
}

/// Evaluation of one ground-truth object. Metric values are `None` when the
/// object was not detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scene: String,
    pub object: u32,
    pub model_id: String,
    pub add: Option<f64>,
    pub adi: Option<f64>,
    pub vsd: Option<f64>,
    pub add_correct: bool,
    pub vsd_correct: bool,
    pub visibility: f64,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub records: Vec<MetricRecord>,
    /// Records at or above the visibility floor.
    pub evaluated: usize,
    pub add_recall: f64,
    pub vsd_recall: f64,
}

/// Recall over records whose visibility reaches `min_visibility`; missed
/// detections count as incorrect.
pub fn aggregate(records: Vec<MetricRecord>, min_visibility: f64) -> MetricReport {
    let eligible: Vec<&MetricRecord> = records.iter().filter(|r| r.visibility >= min_visibility).collect();
    let n = eligible.len();
    let recall = |f: fn(&MetricRecord) -> bool| {
        if n == 0 {
            0.0
        } else {
            eligible.iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    let add_recall = recall(|r| r.add_correct);
    let vsd_recall = recall(|r| r.vsd_correct);
    MetricReport {
        format_version: REPORT_FORMAT_VERSION,
        records,
        evaluated: n,
        add_recall,
        vsd_recall,
    }
}

impl MetricReport {
    /// Fixed columns: scene, object, model, add, adi, vsd, add_correct,
    /// vsd_correct, visibility. Missing values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut out = String::from("scene,object,model,add,adi,vsd,add_correct,vsd_correct,visibility\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.scene,
                r.object,
                r.model_id,
                opt(r.add),
                opt(r.adi),
                opt(r.vsd),
                r.add_correct,
                r.vsd_correct,
                r.visibility
            );
        }
        out
    }
}
