//! Levenberg-Marquardt refinement of summed squared reprojection error.
//!
//! The pose is perturbed on the left, `R <- exp([w]x) R`, `t <- t + dt`, so
//! the Jacobian of a camera-frame point `Y = R X + t` is `[-[R X]x | I]`.

use nalgebra::{Matrix2x3, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};

use super::Correspondence;
use crate::camera::{CameraIntrinsics, Pose};

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;

pub type Jacobian = SMatrix<f64, 2, 6>;

/// Projection residual `pi(R X + t) - u` and its Jacobian with respect to the
/// six-parameter perturbation. `None` if the point is not in front.
pub fn reprojection_jacobian(
    pose: &Pose,
    c: &Correspondence,
    cam: &CameraIntrinsics,
) -> Option<(Vector2<f64>, Jacobian)> {
    let rx = pose.rotation * c.point.coords;
    let y = rx + pose.translation;
    if !(y.z > 0.0) {
        return None;
    }
    let iz = 1.0 / y.z;
    let residual = Vector2::new(
        cam.fx * y.x * iz + cam.cx - c.pixel.x,
        cam.fy * y.y * iz + cam.cy - c.pixel.y,
    );
    let jproj = Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * y.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * y.y * iz * iz,
    );
    let mut jpose = SMatrix::<f64, 3, 6>::zeros();
    jpose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rx)));
    jpose.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    Some((residual, jproj * jpose))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Sum of squared pixel residuals; infinite if any point is not in front.
pub fn reprojection_cost(pose: &Pose, correspondences: &[Correspondence], cam: &CameraIntrinsics) -> f64 {
    let mut cost = 0.0;
    for c in correspondences {
        let y = pose.transform(&c.point);
        if !(y.z > 0.0) {
            return f64::INFINITY;
        }
        let p = cam.project_unchecked(&y);
        cost += (p - c.pixel).norm_squared();
    }
    cost
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineReport {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

pub fn refine_pose(initial: &Pose, correspondences: &[Correspondence], cam: &CameraIntrinsics) -> Pose {
    refine_pose_report(initial, correspondences, cam).pose
}

/// LM with multiplicative damping; only cost-decreasing steps are taken, so
/// `final_cost <= initial_cost`.
pub fn refine_pose_report(initial: &Pose, correspondences: &[Correspondence], cam: &CameraIntrinsics) -> RefineReport {
    let initial_cost = reprojection_cost(initial, correspondences, cam);
    let mut report = RefineReport {
        pose: *initial,
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
    };
    if !initial_cost.is_finite() || correspondences.is_empty() {
        return report;
    }
    let mut pose = *initial;
    let mut cost = initial_cost;
    let mut lambda = -1.0;
    for it in 0..MAX_ITERATIONS {
        report.iterations = it + 1;
        let mut jtj = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in correspondences {
            let (r, j) = reprojection_jacobian(&pose, c, cam).expect("finite cost implies points in front");
            jtj += j.transpose() * j;
            g += j.transpose() * r;
        }
        if g.amax() < GRADIENT_TOL {
            break;
        }
        if lambda < 0.0 {
            lambda = 1e-3 * jtj.diagonal().max();
        }
        let mut improved = false;
        while lambda < 1e32 {
            let mut a = jtj;
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            if step.norm() < STEP_TOL {
                report.pose = pose;
                report.final_cost = cost;
                return report;
            }
            let candidate = pose.retract(&step);
            let new_cost = reprojection_cost(&candidate, correspondences, cam);
            if new_cost < cost {
                pose = candidate;
                cost = new_cost;
                lambda = (lambda * 0.1).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    report.pose = pose;
    report.final_cost = cost;
    report
}
