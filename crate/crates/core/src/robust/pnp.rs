//! Control-point PnP (EPnP) with a Levenberg-Marquardt polish.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3, SVD};

use super::refine::{reprojection_cost, refine_pose};
use super::{Correspondence, PoseError};
use crate::camera::{CameraIntrinsics, Pose};

/// Relative eigenvalue below which a principal direction counts as absent.
const FLAT_EPS: f64 = 1e-10;

/// Pose from at least four 2D-3D correspondences.
pub fn solve_pnp(correspondences: &[Correspondence], cam: &CameraIntrinsics) -> Result<Pose, PoseError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(PoseError::TooFewPoints(n));
    }
    if correspondences
        .iter()
        .any(|c| !c.point.coords.iter().chain(c.pixel.coords.iter()).all(|v| v.is_finite()))
    {
        return Err(PoseError::SolverFailure("non-finite input".into()));
    }
    let world: Vec<Vector3<f64>> = correspondences.iter().map(|c| c.point.coords).collect();
    let image: Vec<[f64; 2]> = correspondences
        .iter()
        .map(|c| [(c.pixel.x - cam.cx) / cam.fx, (c.pixel.y - cam.cy) / cam.fy])
        .collect();

    let controls = control_points(&world)?;
    let m = controls.len();
    let alphas = barycentric(&world, &controls)?;

    // M x = 0 with x the stacked camera-frame control points
    let mut mtm = DMatrix::<f64>::zeros(3 * m, 3 * m);
    let mut row = DVector::<f64>::zeros(3 * m);
    for (a, uv) in alphas.iter().zip(&image) {
        for axis in 0..2 {
            row.fill(0.0);
            for j in 0..m {
                row[3 * j + axis] = a[j];
                row[3 * j + 2] = -a[j] * uv[axis];
            }
            mtm += &row * row.transpose();
        }
    }
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let null: Vec<DVector<f64>> = order.iter().take(3).map(|&i| eig.eigenvectors.column(i).into_owned()).collect();

    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
    let world_d2: Vec<f64> = pairs.iter().map(|&(a, b)| (controls[a] - controls[b]).norm_squared()).collect();

    let mut best: Option<(f64, Pose)> = None;
    let max_dim = if m == 4 { 3 } else { 2 };
    for dims in 1..=max_dim {
        let Some(mut betas) = initial_betas(&null[..dims], &pairs, &world_d2) else {
            continue;
        };
        gauss_newton_betas(&null[..dims], &pairs, &world_d2, &mut betas);
        let Some(pose) = pose_from_betas(&null[..dims], &betas, &alphas, &world) else {
            continue;
        };
        let cost = reprojection_cost(&pose, correspondences, cam);
        if cost.is_finite() && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, pose));
        }
    }
    let (_, pose) = best.ok_or_else(|| PoseError::SolverFailure("no valid control-point solution".into()))?;
    let pose = refine_pose(&pose, correspondences, cam);
    let finite = pose.rotation.iter().chain(pose.translation.iter()).all(|v| v.is_finite());
    if !finite || world.iter().any(|p| !(pose.rotation * p + pose.translation).z.is_sign_positive()) {
        return Err(PoseError::SolverFailure("solution places points behind the camera".into()));
    }
    Ok(pose)
}

/// Centroid plus principal axes scaled by their standard deviation; three
/// points when the cloud is planar.
fn control_points(world: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>, PoseError> {
    let n = world.len() as f64;
    let centroid = world.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in world {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    if !(lambda[0] > 0.0) || lambda[1] <= FLAT_EPS * lambda[0] {
        return Err(PoseError::Degenerate);
    }
    let keep = if lambda[2] <= FLAT_EPS * lambda[0] { 2 } else { 3 };
    let mut out = vec![centroid];
    for k in 0..keep {
        out.push(centroid + eig.eigenvectors.column(order[k]).into_owned() * lambda[k].sqrt());
    }
    Ok(out)
}

fn barycentric(world: &[Vector3<f64>], controls: &[Vector3<f64>]) -> Result<Vec<Vec<f64>>, PoseError> {
    let m = controls.len();
    let basis = DMatrix::from_fn(3, m - 1, |r, c| controls[c + 1][r] - controls[0][r]);
    let pinv = basis
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| PoseError::SolverFailure(e.to_string()))?;
    Ok(world
        .iter()
        .map(|p| {
            let rel = DVector::from_column_slice((p - controls[0]).as_slice());
            let a = &pinv * rel;
            let mut out = Vec::with_capacity(m);
            out.push(1.0 - a.sum());
            out.extend(a.iter());
            out
        })
        .collect())
}

/// Difference of control points `a` and `b` inside null vector `v`.
fn diff(v: &DVector<f64>, a: usize, b: usize) -> Vector3<f64> {
    Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
}

/// Linearised solve for the products `beta_i beta_j`, then square roots.
fn initial_betas(null: &[DVector<f64>], pairs: &[(usize, usize)], world_d2: &[f64]) -> Option<Vec<f64>> {
    let dims = null.len();
    if dims == 1 {
        let (mut num, mut den) = (0.0, 0.0);
        for (&(a, b), d2) in pairs.iter().zip(world_d2) {
            let dv = diff(&null[0], a, b).norm();
            num += dv * d2.sqrt();
            den += dv * dv;
        }
        return (den > 0.0).then(|| vec![num / den]);
    }
    let products: Vec<(usize, usize)> = (0..dims).flat_map(|i| (i..dims).map(move |j| (i, j))).collect();
    if pairs.len() < products.len() {
        return None;
    }
    let mut l = DMatrix::zeros(pairs.len(), products.len());
    for (r, &(a, b)) in pairs.iter().enumerate() {
        let d: Vec<Vector3<f64>> = null.iter().map(|v| diff(v, a, b)).collect();
        for (c, &(i, j)) in products.iter().enumerate() {
            l[(r, c)] = if i == j { d[i].dot(&d[i]) } else { 2.0 * d[i].dot(&d[j]) };
        }
    }
    let rho = DVector::from_column_slice(world_d2);
    let sol = SVD::new(l, true, true).solve(&rho, 1e-12).ok()?;
    let mut betas = vec![0.0; dims];
    let b00 = sol[0];
    betas[0] = b00.abs().sqrt();
    for (c, &(i, j)) in products.iter().enumerate() {
        if i == 0 && j > 0 {
            let bjj = products.iter().position(|&p| p == (j, j)).map(|k| sol[k]).unwrap_or(0.0);
            let sign = if (sol[c] >= 0.0) == (b00 >= 0.0) { 1.0 } else { -1.0 };
            betas[j] = sign * bjj.abs().sqrt();
        }
    }
    if b00 < 0.0 {
        betas.iter_mut().for_each(|b| *b = -*b);
    }
    betas.iter().all(|b| b.is_finite()).then_some(betas)
}

/// Refines betas so camera-frame control-point distances match the world.
fn gauss_newton_betas(null: &[DVector<f64>], pairs: &[(usize, usize)], world_d2: &[f64], betas: &mut [f64]) {
    let dims = null.len();
    let diffs: Vec<Vec<Vector3<f64>>> = pairs.iter().map(|&(a, b)| null.iter().map(|v| diff(v, a, b)).collect()).collect();
    for _ in 0..10 {
        let mut j = DMatrix::zeros(pairs.len(), dims);
        let mut r = DVector::zeros(pairs.len());
        for (p, d) in diffs.iter().enumerate() {
            let combined: Vector3<f64> = d.iter().zip(betas.iter()).map(|(v, b)| v * *b).sum();
            r[p] = combined.norm_squared() - world_d2[p];
            for k in 0..dims {
                j[(p, k)] = 2.0 * combined.dot(&d[k]);
            }
        }
        let Ok(step) = SVD::new(j, true, true).solve(&r, 1e-14) else {
            return;
        };
        if !step.iter().all(|s| s.is_finite()) {
            return;
        }
        for k in 0..dims {
            betas[k] -= step[k];
        }
        if step.norm() < 1e-15 {
            return;
        }
    }
}

fn pose_from_betas(
    null: &[DVector<f64>],
    betas: &[f64],
    alphas: &[Vec<f64>],
    world: &[Vector3<f64>],
) -> Option<Pose> {
    let m = alphas[0].len();
    let mut x = DVector::zeros(3 * m);
    for (v, b) in null.iter().zip(betas) {
        x += v * *b;
    }
    let mut camera: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|a| (0..m).map(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]) * a[j]).sum())
        .collect();
    if camera.iter().map(|p| p.z).sum::<f64>() < 0.0 {
        camera.iter_mut().for_each(|p| *p = -*p);
    }
    kabsch(world, &camera)
}

/// Rigid transform minimising `sum |R w + t - c|^2`.
pub(crate) fn kabsch(world: &[Vector3<f64>], camera: &[Vector3<f64>]) -> Option<Pose> {
    let n = world.len() as f64;
    let wc = world.iter().sum::<Vector3<f64>>() / n;
    let cc = camera.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(camera) {
        h += (w - wc) * (c - cc).transpose();
    }
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cc - rotation * wc;
    rotation
        .iter()
        .chain(translation.iter())
        .all(|x| x.is_finite())
        .then_some(Pose { rotation, translation })
}
